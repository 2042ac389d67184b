"""The lightweight five-block CNN and its forward/backward passes."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from honeyscan import tensorcore as tc
from honeyscan.prng import SplitMix64


@dataclass(frozen=True)
class ModelDef:
    filters: tuple[int, ...] = (18, 18, 32, 64, 128)
    bn_blocks: tuple[int, ...] = (2, 3, 4)  # zero-based: after conv 3, 4 and 5
    input_shape: tuple[int, int, int] = (3, 300, 300)
    bn_epsilon: float = tc.BN_EPSILON
    bn_momentum: float = tc.BN_MOMENTUM

    def spatial_trace(self) -> list[int]:
        """Spatial size after each pooling stage (square inputs)."""
        size = self.input_shape[1]
        trace = []
        for _ in self.filters:
            size //= 2
            trace.append(size)
        return trace

    def flatten_width(self) -> int:
        h, w = self.input_shape[1], self.input_shape[2]
        for _ in self.filters:
            h, w = h // 2, w // 2
        return self.filters[-1] * h * w

    def layer_names(self) -> list[str]:
        names = []
        for i, _ in enumerate(self.filters):
            names += [f"conv{i + 1}", "relu"]
            if i in self.bn_blocks:
                names.append(f"bn{i + 1}")
            names.append("pool")
        return names + ["flatten", "dense", "sigmoid"]

    def describe(self) -> str:
        return "->".join(self.layer_names())


DEFAULT_MODEL = ModelDef()
# same layer pattern on a 36x36 input, used for end-to-end gradient checks
TINY_MODEL = ModelDef(input_shape=(3, 36, 36))


@dataclass
class Network:
    model_def: ModelDef
    params: dict[str, np.ndarray]  # learnable tensors, fixed order
    buffers: dict[str, np.ndarray] = field(default_factory=dict)  # batchnorm running stats

    def param_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def copy(self) -> "Network":
        return Network(
            self.model_def,
            {k: v.copy() for k, v in self.params.items()},
            {k: v.copy() for k, v in self.buffers.items()},
        )

    def astype(self, dtype) -> "Network":
        return Network(
            self.model_def,
            {k: v.astype(dtype) for k, v in self.params.items()},
            {k: v.astype(dtype) for k, v in self.buffers.items()},
        )

    def bn_state(self, i: int, mode: str) -> tc.BatchNormState:
        return tc.BatchNormState(
            gamma=self.params[f"bn{i}.gamma"],
            beta=self.params[f"bn{i}.beta"],
            running_mean=self.buffers[f"bn{i}.running_mean"],
            running_var=self.buffers[f"bn{i}.running_var"],
            epsilon=self.model_def.bn_epsilon,
            momentum=self.model_def.bn_momentum,
            mode=mode,
        )


def closed_form_param_count(model_def: ModelDef) -> int:
    total = 0
    c_in = model_def.input_shape[0]
    for i, c_out in enumerate(model_def.filters):
        total += c_out * c_in * 9 + c_out
        if i in model_def.bn_blocks:
            total += 2 * c_out
        c_in = c_out
    return total + model_def.flatten_width() + 1


def _he_uniform(rng: SplitMix64, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    u = rng.uniform_block(int(np.prod(shape)))
    return ((2.0 * u - 1.0) * bound).astype(np.float32).reshape(shape)


def build_model(model_def: ModelDef = DEFAULT_MODEL, seed: int = 0) -> Network:
    """He-uniform weights from the splitmix64 stream, zero biases, identity batchnorm."""
    rng = SplitMix64(seed)
    params: dict[str, np.ndarray] = {}
    buffers: dict[str, np.ndarray] = {}
    c_in = model_def.input_shape[0]
    for i, c_out in enumerate(model_def.filters, start=1):
        params[f"conv{i}.kernels"] = _he_uniform(rng, (c_out, c_in, 3, 3), c_in * 9)
        params[f"conv{i}.bias"] = np.zeros(c_out, np.float32)
        if i - 1 in model_def.bn_blocks:
            params[f"bn{i}.gamma"] = np.ones(c_out, np.float32)
            params[f"bn{i}.beta"] = np.zeros(c_out, np.float32)
            buffers[f"bn{i}.running_mean"] = np.zeros(c_out, np.float32)
            buffers[f"bn{i}.running_var"] = np.ones(c_out, np.float32)
        c_in = c_out
    width = model_def.flatten_width()
    params["dense.weights"] = _he_uniform(rng, (width, 1), width)
    params["dense.bias"] = np.zeros(1, np.float32)
    return Network(model_def, params, buffers)


@dataclass
class ForwardCache:
    mode: str
    conv_inputs: list = field(default_factory=list)
    relu_inputs: list = field(default_factory=list)
    bn_caches: dict = field(default_factory=dict)
    pool_indices: list = field(default_factory=list)
    spatial_trace: list = field(default_factory=list)
    flat_shape: tuple = ()
    features: np.ndarray | None = None
    probs: np.ndarray | None = None
    new_buffers: dict = field(default_factory=dict)


def forward(net: Network, batch: np.ndarray, mode: str = "inference") -> tuple[np.ndarray, ForwardCache]:
    """Probabilities of the adulterated class, shape (N, 1).

    In training mode the cache's ``new_buffers`` holds the updated batchnorm
    running statistics; ``net`` itself is never modified.
    """
    expected = net.model_def.input_shape
    if batch.ndim != 4 or tuple(batch.shape[1:]) != expected:
        raise tc.ShapeError(f"expected input shape (N, {', '.join(map(str, expected))}), got {tuple(batch.shape)}")
    cache = ForwardCache(mode=mode)
    x = batch
    for i in range(1, len(net.model_def.filters) + 1):
        cache.conv_inputs.append(x)
        x = tc.conv2d_forward(x, tc.ConvParams(net.params[f"conv{i}.kernels"], net.params[f"conv{i}.bias"]))
        if i - 1 in net.model_def.bn_blocks:
            cache.relu_inputs.append(x)
            x = tc.relu(x)
            x, state, bn_cache = tc.batchnorm2d(x, net.bn_state(i, mode))
            cache.bn_caches[i] = bn_cache
            cache.new_buffers[f"bn{i}.running_mean"] = state.running_mean
            cache.new_buffers[f"bn{i}.running_var"] = state.running_var
            x, idx = tc.maxpool2d(x)
        else:
            # relu is monotone, so pool->relu equals relu->pool in value and
            # gradient while touching a quarter of the elements
            x, idx = tc.maxpool2d(x)
            cache.relu_inputs.append(x)
            x = tc.relu(x)
        cache.pool_indices.append(idx)
        cache.spatial_trace.append(x.shape[2])
    cache.flat_shape = x.shape
    features = tc.flatten(x)
    cache.features = features
    logits = tc.dense_forward(features, net.params["dense.weights"], net.params["dense.bias"])
    probs = tc.sigmoid(logits)
    cache.probs = probs
    return probs, cache


def backward(net: Network, cache: ForwardCache, grad_probs: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss w.r.t. every learnable tensor."""
    grads: dict[str, np.ndarray] = {}
    g = tc.sigmoid_backward(cache.probs, grad_probs)
    g, grads["dense.weights"], grads["dense.bias"] = tc.dense_backward(cache.features, net.params["dense.weights"], g)
    g = tc.flatten_backward(cache.flat_shape, g)
    for i in range(len(net.model_def.filters), 0, -1):
        if i in cache.bn_caches:
            g = tc.maxpool2d_backward(cache.pool_indices[i - 1], g)
            g, grads[f"bn{i}.gamma"], grads[f"bn{i}.beta"] = tc.batchnorm2d_backward(cache.bn_caches[i], g)
            g = tc.relu_backward(cache.relu_inputs[i - 1], g)
        else:
            g = tc.relu_backward(cache.relu_inputs[i - 1], g)
            g = tc.maxpool2d_backward(cache.pool_indices[i - 1], g)
        params = tc.ConvParams(net.params[f"conv{i}.kernels"], net.params[f"conv{i}.bias"])
        g, grads[f"conv{i}.kernels"], grads[f"conv{i}.bias"] = tc.conv2d_backward(
            cache.conv_inputs[i - 1], params, g, need_input_grad=i > 1
        )
    return {name: grads[name] for name in net.params}
