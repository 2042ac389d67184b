"""Central finite differences for gradient checks (float64 only)."""

import numpy as np

STEP = 1e-5


def numerical_grad(f, x: np.ndarray, step: float = STEP) -> np.ndarray:
    """d f / d x for scalar ``f()`` that reads ``x`` in place."""
    assert x.dtype == np.float64
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + step
        plus = f()
        flat[i] = old - step
        minus = f()
        flat[i] = old
        gflat[i] = (plus - minus) / (2 * step)
    return grad


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Norm-wise relative error; 0 when both are exactly zero."""
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if scale == 0:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / scale)


# gradients whose norm falls below this are numerically zero on both sides
# (e.g. a conv bias feeding a batchnorm through an all-positive relu)
ZERO_FLOOR = 1e-7


def network_gradcheck(seed: int, samples: int = 12, batch: int = 3) -> dict[str, float]:
    """End-to-end FD check of the tiny model under BCE, training-mode batchnorm.

    Checks ``samples`` random coordinates of every learnable tensor in float64.
    """
    from honeyscan.optim import bce_loss
    from honeyscan.prng import splitmix64
    from honeyscan.trainkit.model import TINY_MODEL, backward, build_model, forward

    rng = np.random.default_rng(seed)
    net = build_model(TINY_MODEL, splitmix64(seed)).astype(np.float64)
    for name, p in net.params.items():
        if name.endswith((".bias", ".beta")):
            p += rng.normal(0, 0.05, p.shape)
        elif name.endswith(".gamma"):
            p += rng.uniform(-0.3, 0.3, p.shape)
    x = rng.uniform(0, 255, (batch, *TINY_MODEL.input_shape))
    y = np.arange(batch).reshape(-1, 1) % 2

    def loss() -> float:
        return bce_loss(forward(net, x, "training")[0], y)[0]

    probs, cache = forward(net, x, "training")
    _, g = bce_loss(probs, y)
    grads = backward(net, cache, g)
    errors = {}
    for name, p in net.params.items():
        flat = p.reshape(-1)
        picks = rng.choice(flat.size, size=min(samples, flat.size), replace=False)
        numeric = np.empty(len(picks))
        for j, k in enumerate(picks):
            old = flat[k]
            flat[k] = old + STEP
            plus = loss()
            flat[k] = old - STEP
            minus = loss()
            flat[k] = old
            numeric[j] = (plus - minus) / (2 * STEP)
        analytic = grads[name].reshape(-1)[picks]
        scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), ZERO_FLOOR)
        errors[name] = float(np.linalg.norm(analytic - numeric) / scale)
    return errors
