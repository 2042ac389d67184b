"""Adam, binary cross-entropy and confusion-matrix metrics."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np

CLAMP = 1e-7


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass(frozen=True)
class AdamState:
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    m: tuple = field(default=())
    v: tuple = field(default=())

    @classmethod
    def for_params(cls, params, **kwargs) -> "AdamState":
        return cls(
            m=tuple(np.zeros_like(p) for p in params),
            v=tuple(np.zeros_like(p) for p in params),
            **kwargs,
        )


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState) -> tuple[list[np.ndarray], AdamState]:
    """One bias-corrected Adam update. Inputs are left untouched."""
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise ValueError(
            f"misaligned lists: {len(params)} params, {len(grads)} grads, {len(state.m)} moment slots"
        )
    for i, (p, g, m) in enumerate(zip(params, grads, state.m)):
        if p.shape != g.shape or p.shape != m.shape:
            raise ValueError(f"tensor {i}: param shape {p.shape}, grad shape {g.shape}, moment shape {m.shape}")
        if not np.all(np.isfinite(g)):
            bad = int(np.size(g) - np.count_nonzero(np.isfinite(g)))
            raise NonFiniteGradientError(f"tensor {i}: gradient has {bad} non-finite element(s)")
    t = state.step_count + 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1**t
    correction2 = 1.0 - b2**t
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * (g * g)
        m_hat = m / correction1
        v_hat = v / correction2
        new_params.append((p - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)).astype(p.dtype))
        new_m.append(m.astype(p.dtype))
        new_v.append(v.astype(p.dtype))
    return new_params, replace(state, step_count=t, m=tuple(new_m), v=tuple(new_v))


def _check_labels(labels: np.ndarray) -> None:
    bad = ~np.isin(labels, (0, 1))
    if bad.any():
        raise ValueError(f"labels must be 0 or 1; got {labels[bad][:5].tolist()}")


def bce_loss(predictions: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy and its gradient w.r.t. ``predictions``.

    Predictions are clamped to [1e-7, 1 - 1e-7]; the gradient is evaluated at
    the clamped value.
    """
    labels = np.asarray(labels).reshape(predictions.shape)
    _check_labels(labels)
    p = np.clip(predictions.astype(np.float64), CLAMP, 1 - CLAMP)
    y = labels.astype(np.float64)
    n = p.size
    loss = float(-np.mean(y * np.log(p) + (1 - y) * np.log1p(-p)))
    grad = (p - y) / (p * (1 - p)) / n
    return loss, grad.astype(predictions.dtype)


@dataclass(frozen=True)
class MetricsReport:
    tp: int
    tn: int
    fp: int
    fn: int
    loss: float = float("nan")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    # exact rationals; the float properties round only at the end
    def accuracy_exact(self) -> Fraction:
        return Fraction(self.tp + self.tn, self.total)

    def precision_exact(self) -> Fraction | None:
        return Fraction(self.tp, self.tp + self.fp) if self.tp + self.fp else None

    def recall_exact(self) -> Fraction | None:
        return Fraction(self.tp, self.tp + self.fn) if self.tp + self.fn else None

    @property
    def accuracy(self) -> float:
        return float(self.accuracy_exact()) if self.total else float("nan")

    @property
    def precision(self) -> float:
        # no positive predictions: report 0 rather than undefined
        value = self.precision_exact()
        return float(value) if value is not None else 0.0

    @property
    def recall(self) -> float:
        value = self.recall_exact()
        return float(value) if value is not None else 0.0

    def as_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "loss": self.loss,
            "tp": self.tp,
            "tn": self.tn,
            "fp": self.fp,
            "fn": self.fn,
        }


def compute_metrics(predictions, labels, threshold: float = 0.5, loss: float | None = None) -> MetricsReport:
    """Confusion counts with "adulterated" (label 1) as the positive class.

    ``loss`` defaults to the BCE of the predictions.
    """
    p = np.asarray(predictions, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if p.size == 0:
        raise ValueError("cannot compute metrics on an empty set")
    if p.size != y.size:
        raise ValueError(f"{p.size} predictions but {y.size} labels")
    _check_labels(y)
    predicted = p >= threshold
    actual = y == 1
    return MetricsReport(
        tp=int(np.sum(predicted & actual)),
        tn=int(np.sum(~predicted & ~actual)),
        fp=int(np.sum(predicted & ~actual)),
        fn=int(np.sum(~predicted & actual)),
        loss=bce_loss(p, y)[0] if loss is None else float(loss),
    )


def report_from_counts(tp: int, tn: int, fp: int, fn: int, loss: float = float("nan")) -> MetricsReport:
    for name, value in (("tp", tp), ("tn", tn), ("fp", fp), ("fn", fn)):
        if value < 0:
            raise ValueError(f"{name} must be non-negative")
    return MetricsReport(tp, tn, fp, fn, loss)
