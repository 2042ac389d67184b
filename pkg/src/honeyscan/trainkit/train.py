"""Training loop and evaluation for the thermal CNN."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from honeyscan.dataset import Manifest
from honeyscan.imaging import read_image
from honeyscan.optim import AdamState, MetricsReport, adam_step, bce_loss, compute_metrics
from honeyscan.prng import SplitMix64, splitmix64
from honeyscan.trainkit.model import DEFAULT_MODEL, ModelDef, Network, backward, build_model, forward

log = logging.getLogger(__name__)

EVAL_BATCH = 32
# pixels are centered to [-1, 1]; raw 0..255 input made the dense layer memorize
INPUT_CENTER = 127.5


class TrainingDiverged(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 32
    epochs: int = 50
    steps_per_epoch: int = 15
    optimizer: str = "adam"
    seed: int = 0
    threshold: float = 0.5
    record_time: bool = True

    def header(self) -> str:
        return (
            f"lr={self.learning_rate:g} batch={self.batch_size} epochs={self.epochs} "
            f"steps={self.steps_per_epoch} optimizer={self.optimizer} seed={self.seed}"
        )

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float
    val_precision: float
    val_recall: float
    seconds: float


@dataclass
class TrainHistory:
    rows: list[EpochRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)


def load_images(manifest: Manifest, shape: tuple[int, int, int]) -> np.ndarray:
    """All images of a manifest as one (N, H, W, C) uint8 array."""
    c, h, w = shape
    out = np.empty((len(manifest), h, w, c), dtype=np.uint8)
    for i, rec in enumerate(manifest.records):
        img = read_image(manifest.resolve(rec))
        if (img.channels, img.height, img.width) != shape:
            raise ValueError(
                f"{rec.path}: image is {img.channels}x{img.height}x{img.width}, model expects {c}x{h}x{w}"
            )
        out[i] = img.pixels
    return out


def to_batch(images: np.ndarray, dtype=np.float32) -> np.ndarray:
    """uint8 (N, H, W, C) -> (N, C, H, W) mapped to [-1, 1]."""
    x = np.ascontiguousarray(images.transpose(0, 3, 1, 2)).astype(dtype)
    return (x - dtype(INPUT_CENTER)) / dtype(INPUT_CENTER)


def predict(net: Network, images: np.ndarray, batch_size: int = EVAL_BATCH) -> np.ndarray:
    """Inference-mode probabilities for uint8 images, shape (N,)."""
    probs = []
    for start in range(0, len(images), batch_size):
        p, _ = forward(net, to_batch(images[start:start + batch_size]), "inference")
        probs.append(p[:, 0])
    return np.concatenate(probs) if probs else np.zeros(0, np.float32)


def evaluate_arrays(net: Network, images: np.ndarray, labels: np.ndarray, threshold: float = 0.5,
                    batch_size: int = EVAL_BATCH) -> MetricsReport:
    if len(images) == 0:
        raise ValueError("cannot evaluate on an empty set")
    return compute_metrics(predict(net, images, batch_size), labels, threshold)


def evaluate(net: Network, manifest: Manifest, threshold: float = 0.5, batch_size: int = EVAL_BATCH) -> MetricsReport:
    """Inference-mode metrics over every record of ``manifest``."""
    if len(manifest) == 0:
        raise ValueError("cannot evaluate an empty manifest")
    images = load_images(manifest, net.model_def.input_shape)
    return evaluate_arrays(net, images, manifest.labels(), threshold, batch_size)


class BatchSampler:
    """Seeded shuffles of ``range(n)``, reshuffled whenever one is exhausted."""

    def __init__(self, n: int, seed: int) -> None:
        self.n = n
        self.rng = SplitMix64(seed)
        self.order: list[int] = []
        self.pos = 0

    def next_batch(self, size: int) -> list[int]:
        batch = []
        while len(batch) < size:
            if self.pos == len(self.order):
                self.order = self.rng.shuffle(list(range(self.n)))
                self.pos = 0
            take = min(size - len(batch), len(self.order) - self.pos)
            batch.extend(self.order[self.pos:self.pos + take])
            self.pos += take
        return batch


def train_arrays(
    config: TrainConfig,
    train_images: np.ndarray,
    train_labels: np.ndarray,
    val_images: np.ndarray,
    val_labels: np.ndarray,
    model_def: ModelDef = DEFAULT_MODEL,
    on_epoch=None,
) -> tuple[Network, TrainHistory]:
    if len(train_images) == 0 or len(val_images) == 0:
        raise ValueError("both the train and the validation fold must be non-empty")
    if config.optimizer != "adam":
        raise ValueError(f"unsupported optimizer {config.optimizer!r}")
    net = build_model(model_def, splitmix64(config.seed))
    names = list(net.params)
    state = AdamState.for_params(net.params.values(), learning_rate=config.learning_rate)
    sampler = BatchSampler(len(train_images), splitmix64(config.seed ^ 0x5A5A5A5A))
    history = TrainHistory()
    step = 0
    for epoch in range(1, config.epochs + 1):
        started = time.perf_counter()
        for _ in range(config.steps_per_epoch):
            step += 1
            idx = sampler.next_batch(config.batch_size)
            probs, cache = forward(net, to_batch(train_images[idx]), "training")
            loss, grad = bce_loss(probs, train_labels[idx].reshape(-1, 1))
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss {loss} at epoch {epoch}, step {step}")
            grads = backward(net, cache, grad)
            new_params, state = adam_step([net.params[k] for k in names], [grads[k] for k in names], state)
            net.params = dict(zip(names, new_params))
            net.buffers = {**net.buffers, **cache.new_buffers}
        train_report = evaluate_arrays(net, train_images, train_labels, config.threshold)
        val_report = evaluate_arrays(net, val_images, val_labels, config.threshold)
        seconds = time.perf_counter() - started if config.record_time else 0.0
        row = EpochRecord(
            epoch, train_report.loss, train_report.accuracy, val_report.loss, val_report.accuracy,
            val_report.precision, val_report.recall, seconds,
        )
        history.rows.append(row)
        log.info(
            "epoch %d: train_loss=%.4f train_acc=%.4f val_loss=%.4f val_acc=%.4f",
            epoch, row.train_loss, row.train_acc, row.val_loss, row.val_acc,
        )
        if on_epoch is not None:
            on_epoch(row)
    return net, history


def train(config: TrainConfig, train_manifest: Manifest, val_manifest: Manifest,
          model_def: ModelDef = DEFAULT_MODEL, on_epoch=None) -> tuple[Network, TrainHistory]:
    """Train from scratch on the given folds; returns the final network and its history."""
    if len(train_manifest) == 0 or len(val_manifest) == 0:
        raise ValueError("both the train and the validation fold must be non-empty")
    train_images = load_images(train_manifest, model_def.input_shape)
    val_images = load_images(val_manifest, model_def.input_shape)
    return train_arrays(
        config, train_images, train_manifest.labels(), val_images, val_manifest.labels(), model_def, on_epoch
    )
