"""Manifests, frame sampling, grouped splits and the synthetic thermal generator."""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from honeyscan import __version__
from honeyscan.imaging import Image, write_image
from honeyscan.prng import SplitMix64, splitmix64

LEVELS = (0, 10, 25, 50)
SPLITS = ("train", "val", "unassigned")
COLUMNS = ("path", "adulteration_pct", "sample_id", "split", "augmented")


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class SampleRecord:
    path: str
    adulteration_pct: int
    sample_id: str
    split: str = "unassigned"
    augmented: bool = False

    def __post_init__(self) -> None:
        if self.adulteration_pct not in LEVELS:
            raise ManifestError(f"adulteration_pct {self.adulteration_pct} is not one of {LEVELS}")
        if self.split not in SPLITS:
            raise ManifestError(f"split {self.split!r} is not one of {SPLITS}")

    @property
    def label(self) -> int:
        """1 for adulterated (positive class), 0 for pure honey."""
        return 0 if self.adulteration_pct == 0 else 1


@dataclass
class Manifest:
    records: list[SampleRecord] = field(default_factory=list)
    provenance: str = ""
    root: Path = field(default_factory=Path)  # directory that record paths are relative to

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for i, rec in enumerate(self.records):
            if rec.path in seen:
                raise ManifestError(f"record {i + 1}: duplicate path {rec.path!r}")
            seen.add(rec.path)

    def __len__(self) -> int:
        return len(self.records)

    def resolve(self, record: SampleRecord) -> Path:
        return self.root / record.path

    def class_counts(self) -> tuple[int, int]:
        """(negatives, positives)."""
        pos = sum(r.label for r in self.records)
        return len(self.records) - pos, pos

    def level_counts(self) -> dict[int, int]:
        counts = {level: 0 for level in LEVELS}
        for r in self.records:
            counts[r.adulteration_pct] += 1
        return counts

    def fold(self, split: str) -> "Manifest":
        return Manifest([r for r in self.records if r.split == split], self.provenance, self.root)

    def labels(self) -> np.ndarray:
        return np.array([r.label for r in self.records], dtype=np.int64)

    def rebased(self, root: Path) -> "Manifest":
        """Same files, paths rewritten relative to ``root``."""
        records = [
            replace(r, path=Path(os.path.relpath(self.resolve(r), root)).as_posix()) for r in self.records
        ]
        return Manifest(records, self.provenance, Path(root))


# --------------------------------------------------------------------------
# CSV


def _parse_bool(text: str, row: int) -> bool:
    if text in ("true", "True", "1"):
        return True
    if text in ("false", "False", "0"):
        return False
    raise ManifestError(f"row {row}: augmented must be true/false, got {text!r}")


def parse_manifest(text: str, root: Path | str = ".") -> Manifest:
    lines = text.splitlines()
    provenance = []
    while lines and lines[0].startswith("#"):
        provenance.append(lines.pop(0)[1:].strip())
    if not lines:
        raise ManifestError("manifest has no header row")
    reader = csv.reader(io.StringIO("\n".join(lines)))
    header = next(reader)
    missing = [c for c in COLUMNS if c not in header]
    if missing:
        raise ManifestError(f"row 1: missing column(s) {', '.join(missing)}")
    col = {name: header.index(name) for name in COLUMNS}
    records = []
    seen: dict[str, int] = {}
    for row_no, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ManifestError(f"row {row_no}: expected {len(header)} fields, got {len(row)}")
        path = row[col["path"]]
        if path in seen:
            raise ManifestError(f"row {row_no}: duplicate path {path!r} (first seen on row {seen[path]})")
        seen[path] = row_no
        try:
            pct = int(row[col["adulteration_pct"]])
        except ValueError:
            raise ManifestError(f"row {row_no}: adulteration_pct {row[col['adulteration_pct']]!r} is not an integer") from None
        if pct not in LEVELS:
            raise ManifestError(f"row {row_no}: adulteration_pct {pct} is not a study level {LEVELS}")
        split = row[col["split"]]
        if split not in SPLITS:
            raise ManifestError(f"row {row_no}: unknown split {split!r}")
        records.append(SampleRecord(path, pct, row[col["sample_id"]], split, _parse_bool(row[col["augmented"]], row_no)))
    return Manifest(records, "\n".join(provenance), Path(root))


def format_manifest(manifest: Manifest) -> str:
    out = []
    for line in manifest.provenance.splitlines():
        out.append(f"# {line}")
    out.append(",".join(COLUMNS))
    for r in manifest.records:
        if "," in r.path or "\n" in r.path:
            raise ManifestError(f"path {r.path!r} contains a comma or newline")
        out.append(f"{r.path},{r.adulteration_pct},{r.sample_id},{r.split},{'true' if r.augmented else 'false'}")
    return "\n".join(out) + "\n"


def load_manifest(path: str | Path) -> Manifest:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc.strerror}") from exc
    return parse_manifest(text, path.parent)


def save_manifest(manifest: Manifest, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_manifest(manifest))


# --------------------------------------------------------------------------
# frame sampling and splitting


def select_frames(frame_count: int, interval_s: float, fps: float) -> list[int]:
    """Indices of the frames kept when sampling one frame every ``interval_s`` seconds."""
    if frame_count < 1 or interval_s <= 0 or fps <= 0:
        raise ValueError("frame_count, interval_s and fps must all be positive")
    indices: list[int] = []
    k = 0
    while True:
        index = math.floor(k * interval_s * fps + 0.5)
        if index >= frame_count:
            return indices
        if not indices or indices[-1] != index:
            indices.append(index)
        k += 1


def _val_quota(class_sizes: dict[int, int], val_fraction: float) -> dict[int, int]:
    """Largest-remainder allocation of round(val_fraction * total) samples."""
    total = sum(class_sizes.values())
    target = math.floor(val_fraction * total + 0.5)
    exact = {c: val_fraction * n for c, n in class_sizes.items()}
    quota = {c: math.floor(v) for c, v in exact.items()}
    # larger remainder first, then larger class, then the positive class
    order = sorted(class_sizes, key=lambda c: (-(exact[c] - quota[c]), -class_sizes[c], -c))
    for c in order[: max(0, target - sum(quota.values()))]:
        quota[c] += 1
    # every class keeps at least one sample in each fold
    return {c: min(max(q, 1), class_sizes[c] - 1) for c, q in quota.items()}


def split_manifest(manifest: Manifest, val_fraction: float = 0.25, seed: int = 0) -> Manifest:
    """Assign every record to train/val so that each sample_id lands in one fold."""
    if not 0 < val_fraction < 1:
        raise ValueError("val_fraction must be in (0, 1)")
    sample_label: dict[str, int] = {}
    for r in manifest.records:
        if sample_label.setdefault(r.sample_id, r.label) != r.label:
            raise ManifestError(f"sample {r.sample_id!r} has frames in both classes")
    by_class = {c: sorted(s for s, lab in sample_label.items() if lab == c) for c in (0, 1)}
    for c, samples in by_class.items():
        if len(samples) < 2:
            raise ManifestError(f"class {c} has {len(samples)} sample(s); at least 2 are needed to split")
    quota = _val_quota({c: len(s) for c, s in by_class.items()}, val_fraction)
    rng = SplitMix64(seed)
    val_ids: set[str] = set()
    for c in (0, 1):
        val_ids.update(rng.shuffle(by_class[c])[: quota[c]])
    records = [replace(r, split="val" if r.sample_id in val_ids else "train") for r in manifest.records]
    return Manifest(records, manifest.provenance, manifest.root)


# --------------------------------------------------------------------------
# synthetic thermal frames

SYNTH_SIZE = 300
CUVETTE_RADIUS = 40
CUVETTE_BASE = 40
BACKGROUND = 16
NOISE = 8
JITTER = 10
CLASS_PROFILES = {
    # (sigma range, peak range)
    0: ((70.0, 85.0), (150.0, 180.0)),
    1: ((95.0, 110.0), (110.0, 140.0)),
}


@dataclass(frozen=True)
class SynthParams:
    sigma: float
    peak: float
    center_x: float
    center_y: float


def draw_synth_params(label: int, seed: int) -> tuple[SynthParams, SplitMix64]:
    rng = SplitMix64(seed)
    (s_lo, s_hi), (p_lo, p_hi) = CLASS_PROFILES[label]
    sigma = s_lo + (s_hi - s_lo) * rng.uniform()
    peak = p_lo + (p_hi - p_lo) * rng.uniform()
    cx = SYNTH_SIZE / 2 + rng.randint(-JITTER, JITTER)
    cy = SYNTH_SIZE / 2 + rng.randint(-JITTER, JITTER)
    return SynthParams(sigma, peak, cx, cy), rng


def render_synthetic(label: int, seed: int) -> Image:
    """A warm cuvette disk on a dark field with a class-dependent radial heat profile."""
    params, rng = draw_synth_params(label, seed)
    yy, xx = np.mgrid[0:SYNTH_SIZE, 0:SYNTH_SIZE].astype(np.float64)
    r = np.hypot(xx - params.center_x, yy - params.center_y)
    profile = np.clip(np.floor(CUVETTE_BASE + params.peak * np.exp(-((r / params.sigma) ** 2)) + 0.5), 0, 255)
    base = np.where(r <= CUVETTE_RADIUS, profile, BACKGROUND).astype(np.int64)
    noise = rng.integers_block(SYNTH_SIZE * SYNTH_SIZE * 3, -NOISE, NOISE).reshape(SYNTH_SIZE, SYNTH_SIZE, 3)
    return Image(np.clip(base[:, :, None] + noise, 0, 255).astype(np.uint8))


def _synthetic_plan(count_per_class: int) -> list[tuple[str, int, int]]:
    plan = []
    for i in range(count_per_class):
        plan.append((f"syn{i:04d}", 0, 0))
    positive_levels = LEVELS[1:]
    for i in range(count_per_class):
        plan.append((f"syn{count_per_class + i:04d}", 1, positive_levels[i % len(positive_levels)]))
    return plan


def generate_synthetic(count_per_class: int, seed: int, out_dir: str | Path, workers: int = 1) -> Manifest:
    """Write 2 * count_per_class PPM frames plus ``manifest.csv`` into ``out_dir``."""
    if count_per_class < 1:
        raise ValueError("count_per_class must be at least 1")
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        probe = out_dir / ".write-test"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise OSError(f"output directory {out_dir} is not writable: {exc.strerror}") from exc
    plan = _synthetic_plan(count_per_class)

    def emit(item: tuple[int, tuple[str, int, int]]) -> SampleRecord:
        index, (sample_id, label, pct) = item
        name = f"{sample_id}_p{pct:02d}.ppm"
        write_image(out_dir / name, render_synthetic(label, splitmix64(seed ^ index)))
        return SampleRecord(name, pct, sample_id)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        records = list(pool.map(emit, enumerate(plan)))
    manifest = Manifest(records, f"source=synthetic per_class={count_per_class} seed={seed} tool=honeyscan/{__version__}", out_dir)
    save_manifest(manifest, out_dir / "manifest.csv")
    return manifest
