import struct
import zlib

import numpy as np
import pytest

from gradcheck import network_gradcheck
from honeyscan.prng import splitmix64
from honeyscan.tensorcore import ShapeError
from honeyscan.trainkit.checkpoint import (
    BadMagicError,
    ChecksumError,
    TruncatedCheckpointError,
    UnsupportedVersionError,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    save_checkpoint,
)
from honeyscan.trainkit.history import export_history, format_history_csv, read_history_csv, render_history_svg
from honeyscan.trainkit.model import (
    DEFAULT_MODEL,
    TINY_MODEL,
    ModelDef,
    build_model,
    closed_form_param_count,
    forward,
)
from honeyscan.trainkit.train import (
    BatchSampler,
    EpochRecord,
    TrainConfig,
    TrainHistory,
    predict,
    train_arrays,
)

# ---------------------------------------------------------------- model


def test_default_model_geometry():
    assert DEFAULT_MODEL.spatial_trace() == [150, 75, 37, 18, 9]
    assert DEFAULT_MODEL.flatten_width() == 10368
    net = build_model(DEFAULT_MODEL, 0)
    assert net.param_count() == closed_form_param_count(DEFAULT_MODEL) == 111_823
    assert net.params["dense.weights"].shape == (10368, 1)
    assert DEFAULT_MODEL.describe().startswith("conv1->relu->pool->conv2->relu->pool->conv3->relu->bn3->pool")


def test_closed_form_by_hand():
    # 3->4 conv, 4->2 conv with bn, 8x8 input -> 2x2x2 flatten
    md = ModelDef(filters=(4, 2), bn_blocks=(1,), input_shape=(3, 8, 8))
    assert closed_form_param_count(md) == (4 * 3 * 9 + 4) + (2 * 4 * 9 + 2) + 4 + (8 + 1)
    assert build_model(md).param_count() == closed_form_param_count(md)


def test_forward_shapes_and_trace(rng):
    net = build_model(TINY_MODEL, 1)
    x = rng.uniform(0, 255, (2, 3, 36, 36)).astype(np.float32)
    probs, cache = forward(net, x, "inference")
    assert probs.shape == (2, 1) and probs.dtype == np.float32
    assert np.all(np.isfinite(probs) & (probs >= 0) & (probs <= 1))
    assert cache.spatial_trace == [18, 9, 4, 2, 1]
    assert not cache.new_buffers or all(
        np.array_equal(v, net.buffers[k]) for k, v in cache.new_buffers.items()
    )


def test_forward_rejects_wrong_shape():
    net = build_model(TINY_MODEL, 1)
    with pytest.raises(ShapeError, match=r"expected input shape \(N, 3, 36, 36\), got \(1, 3, 32, 32\)"):
        forward(net, np.zeros((1, 3, 32, 32), np.float32))


def test_training_forward_updates_only_cache(rng):
    net = build_model(TINY_MODEL, 1)
    before = {k: v.copy() for k, v in net.buffers.items()}
    _, cache = forward(net, rng.uniform(0, 255, (2, 3, 36, 36)).astype(np.float32), "training")
    assert all(np.array_equal(before[k], net.buffers[k]) for k in before)
    assert any(not np.array_equal(before[k], cache.new_buffers[k]) for k in before)


def test_build_model_is_seeded():
    a, b, c = build_model(TINY_MODEL, 5), build_model(TINY_MODEL, 5), build_model(TINY_MODEL, 6)
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    assert not np.array_equal(a.params["conv1.kernels"], c.params["conv1.kernels"])
    bound = np.sqrt(6 / 27)
    assert np.abs(a.params["conv1.kernels"]).max() <= bound


@pytest.mark.parametrize("seed", range(3))
def test_end_to_end_gradients(seed):
    errors = network_gradcheck(seed)
    assert max(errors.values()) <= 1e-3, errors


def test_inference_is_batch_size_invariant(rng):
    net = build_model(TINY_MODEL, 2)
    images = rng.integers(0, 256, (7, 36, 36, 3), dtype=np.uint8)
    full = predict(net, images, batch_size=7)
    one = predict(net, images, batch_size=1)
    three = predict(net, images, batch_size=3)
    assert np.array_equal(full, one) and np.array_equal(full, three)


# ---------------------------------------------------------------- checkpoint


def _net():
    net = build_model(TINY_MODEL, 3)
    net.buffers["bn3.running_var"] = net.buffers["bn3.running_var"] * 1.5
    return net


def test_checkpoint_roundtrip(tmp_path, rng):
    net = _net()
    save_checkpoint(tmp_path / "m.thml", net, {"seed": 4})
    back, config = load_checkpoint(tmp_path / "m.thml")
    assert config == {"seed": 4}
    assert back.model_def == net.model_def
    assert list(back.params) == list(net.params) and list(back.buffers) == list(net.buffers)
    for k in net.params:
        assert back.params[k].dtype == net.params[k].dtype
        assert np.array_equal(back.params[k], net.params[k])
    images = rng.integers(0, 256, (4, 36, 36, 3), dtype=np.uint8)
    assert np.array_equal(predict(net, images), predict(back, images))
    assert encode_checkpoint(back, config) == encode_checkpoint(net, config)


def test_checkpoint_header():
    data = encode_checkpoint(_net())
    magic, version, total = struct.unpack_from("<4sHQ", data)
    assert (magic, version, total) == (b"THML", 1, len(data))
    assert struct.unpack_from("<I", data, len(data) - 4)[0] == zlib.crc32(data[:-4])


def test_checkpoint_corruption_detected():
    data = bytearray(encode_checkpoint(_net()))
    for offset in (20, len(data) // 2, len(data) - 5):
        bad = bytearray(data)
        bad[offset] ^= 0x01
        with pytest.raises(ChecksumError):
            decode_checkpoint(bytes(bad))


def test_checkpoint_error_kinds():
    data = encode_checkpoint(_net())
    with pytest.raises(BadMagicError):
        decode_checkpoint(b"XXXX" + data[4:])
    with pytest.raises(TruncatedCheckpointError):
        decode_checkpoint(data[:-10])
    with pytest.raises(TruncatedCheckpointError):
        decode_checkpoint(data[:8])
    with pytest.raises(ChecksumError):
        decode_checkpoint(data + b"\x00")
    bumped = bytearray(data)
    bumped[4:6] = struct.pack("<H", 2)
    bumped[-4:] = struct.pack("<I", zlib.crc32(bytes(bumped[:-4])))
    with pytest.raises(UnsupportedVersionError):
        decode_checkpoint(bytes(bumped))


# ---------------------------------------------------------------- history


def _history(n=3):
    return TrainHistory([
        EpochRecord(e, 0.7 / e, 0.5 + 0.1 * e, 0.8 / e, 0.45 + 0.1 * e, 0.9, 0.8, 0.0) for e in range(1, n + 1)
    ])


def test_history_csv_roundtrip(tmp_path):
    h = _history()
    text = format_history_csv(h)
    assert text.splitlines()[0] == "epoch,train_loss,train_acc,val_loss,val_acc,val_precision,val_recall,seconds"
    assert text.splitlines()[1] == "1,0.700000,0.600000,0.800000,0.550000,0.900000,0.800000,0.000000"
    export_history(h, tmp_path / "h.csv", tmp_path / "h.svg")
    back = read_history_csv(tmp_path / "h.csv")
    assert len(back) == 3 and back.rows[2].epoch == 3
    assert back.rows[1].val_acc == pytest.approx(0.65)


def test_history_svg_structure():
    import xml.etree.ElementTree as ET

    svg = render_history_svg(_history(4))
    root = ET.fromstring(svg)
    ns = "{http://www.w3.org/2000/svg}"
    polylines = root.findall(f".//{ns}polyline")
    assert len(polylines) == 4
    assert sorted(p.get("class") for p in polylines) == ["train", "train", "val", "val"]
    assert all(len(p.get("points").split()) == 4 for p in polylines)
    assert "Accuracy" in svg and "Loss" in svg


def test_history_single_epoch_and_empty(tmp_path):
    render_history_svg(_history(1))
    with pytest.raises(ValueError):
        export_history(TrainHistory(), tmp_path / "h.csv", None)


# ---------------------------------------------------------------- training


def test_batch_sampler_covers_each_pass():
    s = BatchSampler(10, 7)
    first = s.next_batch(4) + s.next_batch(4) + s.next_batch(2)
    assert sorted(first) == list(range(10))
    wrap = s.next_batch(15)
    assert len(wrap) == 15 and sorted(wrap[:10]) == list(range(10))


def _tiny_data(n, seed):
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 2
    images = rng.integers(0, 40, (n, 36, 36, 3))
    images[:, 10:26, 10:26] += np.where(labels == 1, 180, 60)[:, None, None, None]
    return images.astype(np.uint8), labels


def test_tiny_training_learns_and_is_deterministic():
    xt, yt = _tiny_data(24, 0)
    xv, yv = _tiny_data(12, 1)
    config = TrainConfig(epochs=3, steps_per_epoch=4, batch_size=8, seed=2, record_time=False)
    seen = []
    net, history = train_arrays(config, xt, yt, xv, yv, TINY_MODEL, on_epoch=seen.append)
    assert len(history) == 3 and seen == history.rows
    assert history.rows[-1].val_acc == 1.0
    assert all(r.seconds == 0.0 for r in history.rows)
    again, history2 = train_arrays(config, xt, yt, xv, yv, TINY_MODEL)
    assert format_history_csv(history) == format_history_csv(history2)
    assert encode_checkpoint(net) == encode_checkpoint(again)


def test_training_rejects_bad_config():
    xt, yt = _tiny_data(4, 0)
    with pytest.raises(ValueError):
        train_arrays(TrainConfig(optimizer="sgd"), xt, yt, xt, yt, TINY_MODEL)
    with pytest.raises(ValueError):
        train_arrays(TrainConfig(), xt[:0], yt[:0], xt, yt, TINY_MODEL)


def test_config_header():
    assert TrainConfig(seed=9).header() == "lr=0.001 batch=32 epochs=50 steps=15 optimizer=adam seed=9"


def test_zero_image_gives_interior_probability():
    net = build_model(DEFAULT_MODEL, 0)
    probs, _ = forward(net, np.zeros((1, 3, 300, 300), np.float32))
    assert np.isfinite(probs[0, 0]) and 0 < probs[0, 0] < 1


def test_modes_differ_only_through_batch_statistics(rng):
    net = build_model(TINY_MODEL, 8).astype(np.float64)
    x = rng.uniform(0, 255, (4, 3, 36, 36))
    train_probs, cache = forward(net, x, "training")
    # running stats equal to this batch's statistics: recover them from the momentum update
    m = TINY_MODEL.bn_momentum
    pinned = net.copy()
    for key, new in cache.new_buffers.items():
        pinned.buffers[key] = (new - (1 - m) * net.buffers[key]) / m
    infer_probs, _ = forward(pinned, x, "inference")
    np.testing.assert_allclose(infer_probs, train_probs, rtol=1e-9, atol=1e-12)


def test_zero_epochs_returns_initialization():
    xt, yt = _tiny_data(4, 0)
    config = TrainConfig(epochs=0, seed=3)
    net, history = train_arrays(config, xt, yt, xt, yt, TINY_MODEL)
    init = build_model(TINY_MODEL, splitmix64(3))
    assert len(history) == 0
    assert all(np.array_equal(net.params[k], init.params[k]) for k in init.params)


def test_to_batch_maps_pixels_to_unit_interval():
    from honeyscan.trainkit.train import to_batch

    imgs = np.array([[[[0, 127, 255]]]], dtype=np.uint8)  # (1, 1, 1, 3)
    out = to_batch(imgs)
    assert out.shape == (1, 3, 1, 1) and out.dtype == np.float32
    np.testing.assert_allclose(out.ravel(), [-1.0, -0.5 / 127.5, 1.0])
