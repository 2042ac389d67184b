import numpy as np
import pytest

from honeyscan.augment import (
    FluctuationSpec,
    augment_dataset,
    augmented_name,
    channel_abs_diff,
    draw_variations,
    temperature_fluctuate,
)
from honeyscan.dataset import Manifest, SampleRecord, load_manifest, save_manifest
from honeyscan.imaging import Image, read_image, write_image


def test_variations_are_uniform():
    v = draw_variations(FluctuationSpec(5, seed=11), 1_000_000)
    freq = np.bincount(v + 5, minlength=11) / v.size
    assert v.min() == -5 and v.max() == 5
    assert np.all(np.abs(freq - 1 / 11) <= 0.005)


def test_fluctuation_stays_in_bounds_and_clips():
    px = np.random.default_rng(0).integers(0, 256, (40, 40, 3), dtype=np.uint8)
    px[0, 0] = 0
    px[0, 1] = 255
    out = temperature_fluctuate(Image(px), FluctuationSpec(5, seed=2)).pixels.astype(int)
    diff = out - px
    interior = (px >= 5) & (px <= 250)
    assert np.all(np.abs(diff) <= 5)
    assert np.all((out >= 0) & (out <= 255))
    assert np.abs(diff[interior]).max() == 5


def test_variation_order_is_pixel_major():
    spec = FluctuationSpec(3, seed=4)
    img = Image(np.full((2, 3, 3), 100, np.uint8))
    out = temperature_fluctuate(img, spec).pixels.astype(int) - 100
    assert out.ravel().tolist() == draw_variations(spec, 18).tolist()


def test_per_image_mode_and_zero_amplitude():
    img = Image(np.full((4, 4, 3), 100, np.uint8))
    out = temperature_fluctuate(img, FluctuationSpec(5, "per-image", seed=1)).pixels
    assert len(np.unique(out)) == 1
    same = temperature_fluctuate(img, FluctuationSpec(0))
    assert same == img and same.pixels is not img.pixels


def test_spec_validation():
    with pytest.raises(ValueError):
        FluctuationSpec(-1)
    with pytest.raises(ValueError):
        FluctuationSpec(5, "per-channel")


def test_channel_abs_diff():
    a = Image(np.array([[[10, 20, 30]]], np.uint8))
    b = Image(np.array([[[15, 20, 0]]], np.uint8))
    diffs = channel_abs_diff(a, b)
    assert [int(d.pixels[0, 0, 0]) for d in diffs] == [5, 0, 30]
    assert all(d.channels == 1 for d in diffs)
    with pytest.raises(ValueError):
        channel_abs_diff(a, Image(np.zeros((1, 2, 3), np.uint8)))


def _table_dataset(root):
    """150 pure, 75 at 10%, 75 at 25%, 60 at 50%; tiny 4x4 frames."""
    recs = []
    rng = np.random.default_rng(0)
    for pct, count in ((0, 150), (10, 75), (25, 75), (50, 60)):
        for i in range(count):
            name = f"p{pct:02d}_{i:03d}.ppm"
            write_image(root / name, Image(rng.integers(0, 256, (4, 4, 3), dtype=np.uint8)))
            recs.append(SampleRecord(name, pct, f"{pct}-{i}"))
    return Manifest(recs, "source=table", root)


def test_augmentation_doubles_table_counts(tmp_path):
    m = _table_dataset(tmp_path)
    assert m.level_counts() == {0: 150, 10: 75, 25: 75, 50: 60}
    assert m.class_counts() == (150, 210)
    out, report = augment_dataset(m, FluctuationSpec(5, seed=0))
    assert report.written == 360 and not report.errors
    assert out.class_counts() == (300, 420) and len(out) == 720
    assert sum(r.augmented for r in out.records) == 360
    rec = out.records[360]
    assert rec.path == "p00_000_aug.ppm" and rec.sample_id == m.records[0].sample_id


def test_augment_skips_val_and_collects_errors(tmp_path):
    write_image(tmp_path / "a.ppm", Image(np.zeros((2, 2, 3), np.uint8)))
    (tmp_path / "bad.ppm").write_bytes(b"P6\n2 2\n255\n\x00")
    recs = [
        SampleRecord("a.ppm", 0, "a", "train"),
        SampleRecord("bad.ppm", 10, "b", "train"),
        SampleRecord("missing.ppm", 10, "c", "unassigned"),
        SampleRecord("v.ppm", 0, "v", "val"),
    ]
    out, report = augment_dataset(Manifest(recs, "", tmp_path), FluctuationSpec(seed=1))
    assert report.written == 1 and len(out) == 5
    assert len(report.errors) == 2
    assert "record 2 (bad.ppm)" in report.errors[0] and "missing.ppm" in report.errors[1]


def test_augment_into_other_directory_and_determinism(tmp_path):
    src = tmp_path / "src"
    src.mkdir()
    m = _table_dataset(src)
    m = Manifest(m.records[:10], m.provenance, src)
    a, _ = augment_dataset(m, FluctuationSpec(seed=9), tmp_path / "a")
    b, _ = augment_dataset(m, FluctuationSpec(seed=9), tmp_path / "b")
    save_manifest(a, tmp_path / "a" / "m.csv")
    save_manifest(b, tmp_path / "b" / "m.csv")
    reloaded = load_manifest(tmp_path / "a" / "m.csv")
    assert read_image(reloaded.resolve(reloaded.records[0])) == read_image(src / m.records[0].path)
    for ra, rb in zip(a.records[10:], b.records[10:]):
        assert (tmp_path / "a" / ra.path).read_bytes() == (tmp_path / "b" / rb.path).read_bytes()
    # each record gets its own stream
    assert (tmp_path / "a" / a.records[10].path).read_bytes() != (tmp_path / "a" / a.records[11].path).read_bytes()


def test_augmented_name():
    assert augmented_name("dir/x.ppm") == "x_aug.ppm"
