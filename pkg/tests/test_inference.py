import dataclasses

import numpy as np
import pytest

from adkd import weights as wfile
from adkd.backbone import FeaturePyramid
from adkd.config import TrainConfig
from adkd.core import DimensionError, Tensor
from adkd.inference import (
    AnomalyMap,
    Detector,
    anomaly_map,
    image_score,
    level_loss_map,
    load_anomaly_map,
    resize_map,
    save_anomaly_map,
)
from adkd.trainer import Model

from conftest import random_pyramid


def loop_level_map(t, s):
    c, h, w = t.shape
    out = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            u, v = t[:, y, x], s[:, y, x]
            dot = sum(float(a) * float(b) for a, b in zip(u, v))
            nu = sum(float(a) ** 2 for a in u)
            nv = sum(float(b) ** 2 for b in v)
            out[y, x] = 1.0 - dot / (max(np.sqrt(nu), 1e-8) * max(np.sqrt(nv), 1e-8))
    return out


def loop_upsample(m, height, width):
    """Per-pixel bilinear sampling, half-pixel centres, clamped at the edges."""
    h, w = m.shape
    out = np.zeros((height, width))
    for y in range(height):
        sy = min(max((y + 0.5) * h / height - 0.5, 0.0), h - 1.0)
        y0 = int(np.floor(sy))
        y1, fy = min(y0 + 1, h - 1), sy - y0
        for x in range(width):
            sx = min(max((x + 0.5) * w / width - 0.5, 0.0), w - 1.0)
            x0 = int(np.floor(sx))
            x1, fx = min(x0 + 1, w - 1), sx - x0
            out[y, x] = ((1 - fy) * ((1 - fx) * m[y0, x0] + fx * m[y0, x1])
                         + fy * ((1 - fx) * m[y1, x0] + fx * m[y1, x1]))
    return out


def test_level_map_matches_loops(rng):
    for _ in range(20):
        c, h, w = rng.integers(1, 6, 3)
        t, s = rng.normal(size=(c, h, w)), rng.normal(size=(c, h, w))
        np.testing.assert_allclose(level_loss_map(Tensor(t), Tensor(s)).data, loop_level_map(t, s),
                                   atol=1e-12, rtol=0)


def test_level_map_worked_cases():
    t = np.zeros((2, 2, 2))
    t[0] = 1.0
    s = t.copy()
    np.testing.assert_array_equal(level_loss_map(Tensor(t), Tensor(s)).data, np.zeros((2, 2)))
    s[:, 1, 0] = (0.0, 1.0)
    m = level_loss_map(Tensor(t), Tensor(s)).data
    assert m[1, 0] == 1.0 and m.sum() == 1.0
    with pytest.raises(DimensionError):
        level_loss_map(Tensor(t), Tensor(np.zeros((2, 2, 3))))


def test_anomaly_map_is_upsample_then_sum(rng):
    for _ in range(10):
        shapes = [(3, 8, 8), (5, 4, 4), (6, 2, 2)]
        t, s = random_pyramid(rng, shapes), random_pyramid(rng, shapes)
        want = sum(loop_upsample(loop_level_map(a.data, b.data), 32, 32)
                   for a, b in zip(t.tensors(), s.tensors()))
        got = anomaly_map(t, s, 32, 32).data
        np.testing.assert_allclose(got, want, atol=1e-12, rtol=0)
        assert got.min() >= 0.0 and got.max() <= 6.0


def test_single_level_and_identical_pyramids(rng):
    t = random_pyramid(rng, [(4, 4, 4)])
    s = random_pyramid(rng, [(4, 4, 4)])
    want = loop_upsample(loop_level_map(t[2].data, s[2].data), 16, 16)
    np.testing.assert_allclose(anomaly_map(t, s, 16, 16).data, want, atol=1e-12)
    assert np.abs(anomaly_map(t, t, 16, 16).data).max() < 1e-15
    with pytest.raises(DimensionError):
        anomaly_map(FeaturePyramid([]), FeaturePyramid([]), 4, 4)


def test_image_score_is_max(rng):
    m = rng.random((7, 9))
    assert image_score(AnomalyMap(m)) == max(m.ravel())
    assert image_score(np.zeros((3, 3))) == 0.0
    assert image_score(np.array([[0.7]])) == 0.7
    with pytest.raises(DimensionError):
        image_score(np.zeros((0, 0)))


def test_map_file_round_trip(tmp_path, rng):
    m = rng.random((5, 6)).astype(np.float32)
    raw, pgm = save_anomaly_map(m, tmp_path / "m")
    np.testing.assert_array_equal(load_anomaly_map(raw), m)
    assert pgm.read_bytes().startswith(b"P5\n6 5\n255\n")
    raw.write_bytes(raw.read_bytes()[:-1])
    with pytest.raises(wfile.WeightsFormatError):
        load_anomaly_map(raw)


def test_resize_map(rng):
    m = rng.random((8, 8))
    assert resize_map(m, 8, 8) is m
    assert resize_map(m, 16, 4).shape == (16, 4)


# --- checkpoint-level behaviour ------------------------------------------------------------

CFG = TrainConfig(input_size=32, stem_channels=4, stage_channels=(4, 8, 8), blocks_per_stage=1, reduction=4,
                  attention="combined", checkpoint_path="")


def _checkpoint(path, dcam_seed=None):
    model = Model.build(CFG)
    if dcam_seed is not None:
        gen = np.random.default_rng(dcam_seed)
        for t in model.dcam.named_parameters().values():
            t.data = gen.normal(size=t.shape).astype(t.dtype)
    model.snapshot(CFG, 1, 1.0, 0).save(path)
    return path


def test_dcam_tensors_do_not_affect_maps(tmp_path, rng):
    a = Detector.from_checkpoint(_checkpoint(tmp_path / "a.adkd", dcam_seed=1))
    b = Detector.from_checkpoint(_checkpoint(tmp_path / "b.adkd", dcam_seed=2))
    images = [rng.random((3, 32, 32)).astype(np.float32) for _ in range(3)]
    for img in images:
        np.testing.assert_array_equal(a(img).map.scores, b(img).map.scores)
    # and with the attention tensors removed from the file altogether
    tensors, echo = wfile.load(tmp_path / "a.adkd")
    wfile.save(tmp_path / "c.adkd", {k: v for k, v in tensors.items() if not k.startswith("dcam.")}, echo)
    c = Detector.from_checkpoint(tmp_path / "c.adkd")
    for img in images:
        np.testing.assert_array_equal(a(img).map.scores, c(img).map.scores)


def test_untrained_student_scores_positive(tmp_path, rng):
    det = Detector.from_checkpoint(_checkpoint(tmp_path / "a.adkd"))
    r = det(rng.random((3, 48, 40)).astype(np.float32))
    assert r.map.shape == (32, 32)
    assert r.score > 0.0 and r.seconds > 0.0


def test_batch_maps_match_single_images(tmp_path, rng):
    det = Detector.from_checkpoint(_checkpoint(tmp_path / "a.adkd"))
    images = [rng.random((3, 32, 32)).astype(np.float32) for _ in range(2)]
    batch = np.stack([det.prepare(img).data for img in images])
    maps = det.map_batch(batch)
    for img, m in zip(images, maps):
        np.testing.assert_allclose(m, det(img).map.scores, rtol=1e-5, atol=1e-6)


def test_checkpoint_without_echo_rejected(tmp_path):
    wfile.save(tmp_path / "w.adkd", {"x": np.zeros(2, np.float32)})
    with pytest.raises(wfile.WeightsFormatError):
        Detector.from_checkpoint(tmp_path / "w.adkd")


def test_student_tensors_change_maps(tmp_path, rng):
    path = _checkpoint(tmp_path / "a.adkd")
    tensors, echo = wfile.load(path)
    moved = dict(tensors)
    key = "student.stage4.0.conv2.weight"
    moved[key] = moved[key] + 0.5
    wfile.save(tmp_path / "b.adkd", moved, echo)
    img = rng.random((3, 32, 32)).astype(np.float32)
    a = Detector.from_checkpoint(path)(img).map.scores
    b = Detector.from_checkpoint(tmp_path / "b.adkd")(img).map.scores
    assert not np.array_equal(a, b)


def test_renamed_tensor_is_named(tmp_path):
    path = _checkpoint(tmp_path / "a.adkd")
    tensors, echo = wfile.load(path)
    tensors["student.stage3.0.conv1.weigth"] = tensors.pop("student.stage3.0.conv1.weight")
    wfile.save(tmp_path / "b.adkd", tensors, echo)
    with pytest.raises(wfile.NamedTensorError, match="stage3.0.conv1.weigth"):
        Detector.from_checkpoint(tmp_path / "b.adkd")


def test_checksum_is_stable(tmp_path):
    a = Model.build(CFG).snapshot(CFG, 1, 1.0, 0).save(tmp_path / "a.adkd")
    b = Model.build(dataclasses.replace(CFG)).snapshot(CFG, 1, 1.0, 0).save(tmp_path / "b.adkd")
    assert a == b and len(a) == 64
