"""Dense NCHW layer kernels with hand-written backward passes.

Tensors are plain numpy arrays; the dtype of the input decides the working
precision (float32 for training, float64 for gradient checks).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

Tensor = np.ndarray

BN_EPSILON = 1e-5
BN_MOMENTUM = 0.1


class ShapeError(ValueError):
    pass


def _check_4d(x: Tensor, what: str) -> None:
    if x.ndim != 4:
        raise ShapeError(f"{what} must be 4-D (N, C, H, W), got shape {x.shape}")


# --------------------------------------------------------------------------
# convolution


@dataclass
class ConvParams:
    kernels: Tensor  # (C_out, C_in, 3, 3)
    bias: Tensor  # (C_out,)

    def __post_init__(self) -> None:
        if self.kernels.ndim != 4 or self.kernels.shape[2:] != (3, 3):
            raise ShapeError(f"kernels must have shape (C_out, C_in, 3, 3), got {self.kernels.shape}")
        if self.bias.shape != (self.kernels.shape[0],):
            raise ShapeError(f"bias shape {self.bias.shape} does not match kernels {self.kernels.shape}")


def _im2col(x: Tensor, out: Tensor | None = None) -> Tensor:
    """(C, H, W) -> (C*9, H*W) for a 3x3 window with zero padding 1."""
    c, h, w = x.shape
    if out is None:
        out = np.empty((c * 9, h * w), dtype=x.dtype)
    cols = out.reshape(c, 3, 3, h, w)
    for dy in range(3):
        ys, yd = slice(max(0, dy - 1), h + min(0, dy - 1)), slice(max(0, 1 - dy), h + min(0, 1 - dy))
        for dx in range(3):
            xs, xd = slice(max(0, dx - 1), w + min(0, dx - 1)), slice(max(0, 1 - dx), w + min(0, 1 - dx))
            plane = cols[:, dy, dx]
            # zero only the border strip the shifted copy leaves uncovered
            if dy != 1:
                plane[:, 0 if dy == 0 else h - 1, :] = 0
            if dx != 1:
                plane[:, :, 0 if dx == 0 else w - 1] = 0
            plane[:, yd, xd] = x[:, ys, xs]
    return out


def _col2im(cols: Tensor, shape: tuple[int, ...]) -> Tensor:
    c, h, w = shape
    cols = cols.reshape(c, 3, 3, h, w)
    out = np.zeros((c, h, w), dtype=cols.dtype)
    for dy in range(3):
        ys, yd = slice(max(0, dy - 1), h + min(0, dy - 1)), slice(max(0, 1 - dy), h + min(0, 1 - dy))
        for dx in range(3):
            xs, xd = slice(max(0, dx - 1), w + min(0, dx - 1)), slice(max(0, 1 - dx), w + min(0, 1 - dx))
            out[:, ys, xs] += cols[:, dy, dx, yd, xd]
    return out


def _check_conv(x: Tensor, params: ConvParams) -> None:
    _check_4d(x, "conv input")
    if x.shape[1] != params.kernels.shape[1]:
        raise ShapeError(
            f"input shape {x.shape} has {x.shape[1]} channels but kernels shape "
            f"{params.kernels.shape} expects {params.kernels.shape[1]}"
        )


def conv2d_forward(x: Tensor, params: ConvParams) -> Tensor:
    """3x3 convolution, stride 1, zero padding 1 (output keeps H and W)."""
    _check_conv(x, params)
    n, c_in, h, w = x.shape
    c_out = params.kernels.shape[0]
    weights = params.kernels.reshape(c_out, -1).astype(x.dtype, copy=False)
    bias = params.bias.astype(x.dtype, copy=False)[:, None]
    out = np.empty((n, c_out, h * w), dtype=x.dtype)
    # one image at a time keeps the column buffer cache-sized
    buf = np.empty((c_in * 9, h * w), dtype=x.dtype)
    for i in range(n):
        np.matmul(weights, _im2col(x[i], buf), out=out[i])
        out[i] += bias
    return out.reshape(n, c_out, h, w)


def conv2d_backward(
    x: Tensor, params: ConvParams, grad_out: Tensor, need_input_grad: bool = True
) -> tuple[Tensor | None, Tensor, Tensor]:
    """Gradients of :func:`conv2d_forward` w.r.t. input, kernels and bias.

    ``need_input_grad=False`` skips the input gradient (first layer) and
    returns ``None`` in its place.
    """
    _check_conv(x, params)
    n, c_in, h, w = x.shape
    c_out = params.kernels.shape[0]
    if grad_out.shape != (n, c_out, h, w):
        raise ShapeError(f"grad_out shape {grad_out.shape} does not match conv output {(n, c_out, h, w)}")
    g = grad_out.reshape(n, c_out, h * w)
    weights_t = params.kernels.reshape(c_out, -1).astype(x.dtype, copy=False).T
    grad_kernels = np.zeros((c_out, c_in * 9), dtype=x.dtype)
    grad_input = np.empty(x.shape, dtype=x.dtype) if need_input_grad else None
    buf = np.empty((c_in * 9, h * w), dtype=x.dtype)
    for i in range(n):
        grad_kernels += g[i] @ _im2col(x[i], buf).T
        if need_input_grad:
            grad_input[i] = _col2im(weights_t @ g[i], x.shape[1:])
    return grad_input, grad_kernels.reshape(params.kernels.shape), g.sum(axis=(0, 2))


# --------------------------------------------------------------------------
# max pooling


@dataclass
class PoolIndices:
    """Winning position (0..3, row-major in the 2x2 window) per output element."""

    window_argmax: Tensor  # (N, C, H//2, W//2) uint8
    input_shape: tuple[int, ...]


_CORNERS = ((0, 0), (0, 1), (1, 0), (1, 1))


def maxpool2d(x: Tensor) -> tuple[Tensor, PoolIndices]:
    """2x2 max pooling with stride 2; odd trailing rows/columns are dropped.

    Ties go to the smallest flat index: pairs are reduced within a row first
    (left wins ties), then across rows (top wins ties).
    """
    _check_4d(x, "maxpool input")
    n, c, h, w = x.shape
    if h < 2 or w < 2:
        raise ShapeError(f"maxpool needs H, W >= 2, got shape {x.shape}")
    ho, wo = h // 2, w // 2
    x = x[:, :, : 2 * ho, : 2 * wo]
    left, right = x[..., 0::2], x[..., 1::2]
    right_wins = right > left
    row_max = np.maximum(left, right)
    top, bottom = row_max[:, :, 0::2], row_max[:, :, 1::2]
    bottom_wins = bottom > top
    out = np.maximum(top, bottom)
    arg = np.where(bottom_wins, right_wins[:, :, 1::2] + np.uint8(2), right_wins[:, :, 0::2]).astype(np.uint8)
    return out, PoolIndices(arg, (n, c, h, w))


def maxpool2d_backward(indices: PoolIndices, grad_out: Tensor) -> Tensor:
    n, c, h, w = indices.input_shape
    ho, wo = h // 2, w // 2
    if grad_out.shape != (n, c, ho, wo) or indices.window_argmax.shape != (n, c, ho, wo):
        raise ShapeError(
            f"grad_out shape {grad_out.shape} does not match pooled shape {(n, c, ho, wo)}"
        )
    grad = np.zeros((n, c, h, w), dtype=grad_out.dtype)
    for k, (dy, dx) in enumerate(_CORNERS):
        grad[:, :, dy: 2 * ho: 2, dx: 2 * wo: 2] = grad_out * (indices.window_argmax == k)
    return grad


# --------------------------------------------------------------------------
# batch normalization


@dataclass(frozen=True)
class BatchNormState:
    gamma: Tensor
    beta: Tensor
    running_mean: Tensor
    running_var: Tensor
    epsilon: float = BN_EPSILON
    momentum: float = BN_MOMENTUM
    mode: str = "training"

    def __post_init__(self) -> None:
        c = self.gamma.shape
        for name in ("beta", "running_mean", "running_var"):
            if getattr(self, name).shape != c:
                raise ShapeError(f"{name} shape {getattr(self, name).shape} != gamma shape {c}")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if not 0 < self.momentum < 1:
            raise ValueError("momentum must be in (0, 1)")
        if self.mode not in ("training", "inference"):
            raise ValueError(f"unknown batchnorm mode {self.mode!r}")

    @classmethod
    def fresh(cls, channels: int, dtype=np.float32, **kwargs) -> "BatchNormState":
        return cls(
            gamma=np.ones(channels, dtype),
            beta=np.zeros(channels, dtype),
            running_mean=np.zeros(channels, dtype),
            running_var=np.ones(channels, dtype),
            **kwargs,
        )


@dataclass
class BatchNormCache:
    x_hat: Tensor
    inv_std: Tensor
    gamma: Tensor
    mode: str


def batchnorm2d(x: Tensor, state: BatchNormState) -> tuple[Tensor, BatchNormState, BatchNormCache]:
    """Per-channel normalization.

    Returns the output, the state with updated running statistics (unchanged
    in inference mode) and the cache needed by :func:`batchnorm2d_backward`.
    """
    _check_4d(x, "batchnorm input")
    n, c, h, w = x.shape
    if state.gamma.shape != (c,):
        raise ShapeError(f"batchnorm state has {state.gamma.shape[0]} channels, input shape {x.shape}")
    dt = x.dtype
    if state.mode == "training":
        if n * h * w < 2:
            raise ValueError("training-mode batchnorm needs at least 2 values per channel")
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        m = state.momentum
        new_state = replace(
            state,
            running_mean=((1 - m) * state.running_mean + m * mean).astype(state.running_mean.dtype),
            running_var=((1 - m) * state.running_var + m * var).astype(state.running_var.dtype),
        )
    else:
        mean = state.running_mean.astype(dt)
        var = state.running_var.astype(dt)
        new_state = state
    inv_std = (1.0 / np.sqrt(var + state.epsilon)).astype(dt)
    x_hat = (x - mean.astype(dt)[None, :, None, None]) * inv_std[None, :, None, None]
    gamma = state.gamma.astype(dt)
    out = x_hat * gamma[None, :, None, None] + state.beta.astype(dt)[None, :, None, None]
    return out, new_state, BatchNormCache(x_hat, inv_std, gamma, state.mode)


def batchnorm2d_backward(cache: BatchNormCache, grad_out: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    """Returns (grad_input, grad_gamma, grad_beta)."""
    if grad_out.shape != cache.x_hat.shape:
        raise ShapeError(f"grad_out shape {grad_out.shape} != batchnorm output {cache.x_hat.shape}")
    grad_beta = grad_out.sum(axis=(0, 2, 3))
    grad_gamma = (grad_out * cache.x_hat).sum(axis=(0, 2, 3))
    scale = (cache.gamma * cache.inv_std)[None, :, None, None]
    if cache.mode == "inference":
        return grad_out * scale, grad_gamma, grad_beta
    n, _, h, w = grad_out.shape
    count = n * h * w
    mean_g = (grad_beta / count)[None, :, None, None]
    mean_gx = (grad_gamma / count)[None, :, None, None]
    grad_input = scale * (grad_out - mean_g - cache.x_hat * mean_gx)
    return grad_input, grad_gamma, grad_beta


# --------------------------------------------------------------------------
# dense, activations, flatten


def dense_forward(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    if x.ndim != 2 or weights.ndim != 2 or x.shape[1] != weights.shape[0]:
        raise ShapeError(f"dense input shape {x.shape} incompatible with weights shape {weights.shape}")
    if bias.shape != (weights.shape[1],):
        raise ShapeError(f"bias shape {bias.shape} does not match weights shape {weights.shape}")
    return x @ weights.astype(x.dtype, copy=False) + bias.astype(x.dtype, copy=False)


def dense_backward(x: Tensor, weights: Tensor, grad_out: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    """Returns (grad_input, grad_weights, grad_bias)."""
    if grad_out.shape != (x.shape[0], weights.shape[1]):
        raise ShapeError(f"grad_out shape {grad_out.shape} does not match dense output")
    return grad_out @ weights.astype(x.dtype, copy=False).T, x.T @ grad_out, grad_out.sum(axis=0)


def relu(x: Tensor) -> Tensor:
    return np.maximum(x, 0)


def relu_backward(x: Tensor, grad_out: Tensor) -> Tensor:
    return grad_out * (x > 0)


def sigmoid(x: Tensor) -> Tensor:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid_backward(y: Tensor, grad_out: Tensor) -> Tensor:
    """Backward given the forward *output* ``y``."""
    return grad_out * y * (1 - y)


def flatten(x: Tensor) -> Tensor:
    return x.reshape(x.shape[0], -1)


def flatten_backward(input_shape: tuple[int, ...], grad_out: Tensor) -> Tensor:
    return grad_out.reshape(input_shape)
