"""Temperature-fluctuation augmentation: bounded integer shifts of pixel intensities."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path, PurePosixPath

import numpy as np

from honeyscan.dataset import Manifest, SampleRecord
from honeyscan.imaging import Image, ImageFormatError, read_image, write_image
from honeyscan.prng import SplitMix64, splitmix64

MODES = ("per-pixel", "per-image")


@dataclass(frozen=True)
class FluctuationSpec:
    amplitude: int = 5
    mode: str = "per-pixel"
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.amplitude <= 255:
            raise ValueError(f"amplitude must be in [0, 255], got {self.amplitude}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")


def draw_variations(spec: FluctuationSpec, count: int) -> np.ndarray:
    """The integer shifts for ``count`` samples, in pixel-major, channel-minor order."""
    rng = SplitMix64(spec.seed)
    a = spec.amplitude
    if spec.mode == "per-image":
        return np.full(count, rng.randint(0, 2 * a) - a, dtype=np.int64)
    return rng.integers_block(count, -a, a)


def temperature_fluctuate(img: Image, spec: FluctuationSpec) -> Image:
    """clip(pixel + variation, 0, 255) with variations drawn from the fluctuation seed."""
    if spec.amplitude == 0:
        return Image(img.pixels.copy())
    variation = draw_variations(spec, img.pixels.size).reshape(img.pixels.shape)
    return Image(np.clip(img.pixels.astype(np.int64) + variation, 0, 255).astype(np.uint8))


def channel_abs_diff(original: Image, augmented: Image) -> list[Image]:
    """One grayscale |original - augmented| image per color channel."""
    if original.pixels.shape != augmented.pixels.shape:
        raise ValueError(f"{original!r} and {augmented!r} differ in shape")
    if original.channels != 3:
        raise ValueError("channel differences need 3-channel images")
    diff = np.abs(original.pixels.astype(np.int16) - augmented.pixels.astype(np.int16)).astype(np.uint8)
    return [Image(np.ascontiguousarray(diff[:, :, c])) for c in range(3)]


@dataclass
class AugmentReport:
    written: int = 0
    errors: list[str] = field(default_factory=list)


def augmented_name(path: str) -> str:
    stem = PurePosixPath(path).stem
    return f"{stem}_aug.ppm"


def augment_dataset(
    manifest: Manifest,
    spec: FluctuationSpec,
    out_dir: str | Path | None = None,
    folds: tuple[str, ...] = ("train", "unassigned"),
) -> tuple[Manifest, AugmentReport]:
    """Append one augmented copy of every eligible record.

    Records in ``folds`` that are not themselves augmented are eligible.
    Record ``i`` (its position in the input manifest) is perturbed with seed
    ``splitmix64(spec.seed ^ i)``, so results do not depend on processing
    order. Images go to ``out_dir`` (default: the manifest root) and the
    returned manifest is rooted there.
    """
    out_dir = Path(out_dir) if out_dir is not None else manifest.root
    out_dir.mkdir(parents=True, exist_ok=True)
    base = manifest.rebased(out_dir)
    report = AugmentReport()
    new_records: list[SampleRecord] = []
    taken = {r.path for r in base.records}
    for index, (src, rec) in enumerate(zip(manifest.records, base.records)):
        if rec.augmented or rec.split not in folds:
            continue
        try:
            img = read_image(manifest.resolve(src))
        except (OSError, ImageFormatError) as exc:
            report.errors.append(f"record {index + 1} ({src.path}): {exc}")
            continue
        name = augmented_name(src.path)
        if name in taken:
            report.errors.append(f"record {index + 1} ({src.path}): output name {name} already used")
            continue
        record_spec = replace(spec, seed=splitmix64(spec.seed ^ index))
        write_image(out_dir / name, temperature_fluctuate(img, record_spec))
        taken.add(name)
        new_records.append(replace(rec, path=name, augmented=True))
        report.written += 1
    return Manifest(base.records + new_records, base.provenance, out_dir), report
