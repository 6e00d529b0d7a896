from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adkd.errors import UndefinedMetricError
from adkd.metrics import (
    ClassResult,
    EvalReport,
    auroc,
    connected_components,
    integrate_to,
    latency_report,
    pro,
    weighted_mean,
)


def pair_count_auroc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def flood_fill(mask):
    """8-connected labelling by breadth-first search, regions numbered in scan order."""
    h, w = mask.shape
    labels = np.zeros((h, w), dtype=np.int64)
    current = 0
    for y in range(h):
        for x in range(w):
            if mask[y, x] and labels[y, x] == 0:
                current += 1
                labels[y, x] = current
                queue = deque([(y, x)])
                while queue:
                    cy, cx = queue.popleft()
                    for dy in (-1, 0, 1):
                        for dx in (-1, 0, 1):
                            ny, nx = cy + dy, cx + dx
                            if 0 <= ny < h and 0 <= nx < w and mask[ny, nx] and labels[ny, nx] == 0:
                                labels[ny, nx] = current
                                queue.append((ny, nx))
    return labels, current


def exhaustive_pro(maps, masks, limit):
    """Threshold at every distinct score, average overlap over regions, integrate to ``limit``."""
    regions = []
    for i, gt in enumerate(masks):
        labels, n = flood_fill(gt)
        regions += [(i, labels == r) for r in range(1, n + 1)]
    n_normal = sum(int((~gt).sum()) for gt in masks)
    points = [(0.0, 0.0)]
    for t in sorted({float(v) for m in maps for v in m.ravel()}, reverse=True):
        fp = sum(int(((m >= t) & ~gt).sum()) for m, gt in zip(maps, masks))
        overlap = np.mean([((maps[i] >= t) & r).sum() / r.sum() for i, r in regions])
        points.append((fp / n_normal, overlap))
    xs = np.array([p[0] for p in points])
    ys = np.array([p[1] for p in points])
    # cut the polyline at the limit, then trapezoids
    inside = xs <= limit
    cx, cy = list(xs[inside]), list(ys[inside])
    if cx[-1] < limit and (~inside).any():
        j = int(np.argmax(~inside))
        cy.append(float(np.interp(limit, [xs[j - 1], xs[j]], [ys[j - 1], ys[j]])))
        cx.append(limit)
    return float(np.trapezoid(cy, cx) / limit)


def test_auroc_matches_pair_counting():
    rng = np.random.default_rng(99)
    for _ in range(500):
        n = int(rng.integers(2, 33))
        labels = rng.integers(0, 2, n)
        labels[0], labels[1] = 0, 1
        scores = rng.integers(0, 6, n) / 5.0  # coarse grid forces ties
        assert auroc(scores, labels) == pytest.approx(pair_count_auroc(scores, labels), abs=1e-12)


def test_auroc_edge_values():
    assert auroc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert auroc([0.9, 0.8, 0.2, 0.1], [0, 0, 1, 1]) == 0.0
    assert auroc([0.5, 0.5, 0.5], [0, 1, 0]) == 0.5
    with pytest.raises(UndefinedMetricError):
        auroc([0.1, 0.2], [1, 1])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(-20, 20), st.booleans()), min_size=2, max_size=32))
def test_auroc_is_rank_based(pairs):
    scores = np.array([p[0] for p in pairs]) / 4.0
    labels = np.array([p[1] for p in pairs])
    if labels.all() or not labels.any():
        return
    a = auroc(scores, labels)
    assert 0.0 <= a <= 1.0
    assert auroc(np.exp(scores), labels) == pytest.approx(a, abs=1e-12)
    assert auroc(-scores, labels) == pytest.approx(1.0 - a, abs=1e-12)


def test_connected_components_match_flood_fill():
    rng = np.random.default_rng(3)
    for _ in range(300):
        shape = tuple(rng.integers(1, 13, 2))
        mask = rng.random(shape) < rng.uniform(0.1, 0.7)
        want, n = flood_fill(mask)
        got = connected_components(mask)
        assert len(got) == n
        np.testing.assert_array_equal(got.labels, want)


def test_diagonal_pixels_are_one_region():
    mask = np.eye(5, dtype=bool)
    assert len(connected_components(mask)) == 1
    assert len(connected_components(np.zeros((4, 4), bool))) == 0


def _pro_instance(rng):
    count = int(rng.integers(1, 4))
    maps, masks = [], []
    for _ in range(count):
        h, w = rng.integers(2, 9, 2)
        maps.append(np.round(rng.random((h, w)), 2))  # rounding leaves ties
        masks.append(rng.random((h, w)) < 0.3)
    if not any(m.any() for m in masks):
        masks[0].flat[0] = True
    if all(m.all() for m in masks):
        masks[0].flat[-1] = False
    return maps, masks


def test_pro_matches_exhaustive_thresholds():
    rng = np.random.default_rng(17)
    for _ in range(200):
        maps, masks = _pro_instance(rng)
        limit = float(rng.choice([0.05, 0.1, 0.3, 1.0]))
        assert pro(maps, masks, limit) == pytest.approx(exhaustive_pro(maps, masks, limit), abs=1e-9)


def test_pro_perfect_and_constant_maps():
    gt = np.zeros((6, 6), bool)
    gt[1:3, 1:3] = True
    assert pro([gt.astype(float)], [gt], 0.3) == pytest.approx(1.0)
    # a constant map jumps straight to (1, 1); the area up to 0.3 under that chord is 0.15
    assert pro([np.zeros((6, 6))], [gt], 0.3) == pytest.approx(0.15)


def test_pro_undefined_without_regions():
    with pytest.raises(UndefinedMetricError):
        pro([np.zeros((3, 3))], [np.zeros((3, 3), bool)])
    with pytest.raises(ValueError):
        pro([np.zeros((3, 3))], [np.eye(3, dtype=bool)], 0.0)


def test_integrate_to_interpolates_at_limit():
    x = np.array([0.0, 0.5, 1.0])
    y = np.array([0.0, 1.0, 1.0])
    assert integrate_to(x, y, 0.25) == pytest.approx(0.0625)
    assert integrate_to(x, y, 1.0) == pytest.approx(0.75)


# --- latency and reports ---------------------------------------------------------------

# per-class test image counts of the public benchmark
BENCHMARK_TEST_COUNTS = {
    "bottle": 83, "cable": 150, "capsule": 132, "carpet": 117, "grid": 78, "hazelnut": 110, "leather": 124,
    "metal_nut": 115, "pill": 167, "screw": 160, "tile": 117, "toothbrush": 42, "transistor": 100, "wood": 79,
    "zipper": 151,
}


def test_benchmark_counts():
    assert sum(BENCHMARK_TEST_COUNTS.values()) == 1725


def test_latency_weighted_by_image_count():
    rep = latency_report({"a": [1.0, 1.0, 1.0], "b": [4.0]})
    assert rep.class_means == {"a": 1.0, "b": 4.0}
    assert rep.overall == pytest.approx(7.0 / 4.0)
    with pytest.raises(ValueError):
        latency_report({"a": []})


def test_uniform_latency_is_fixed_point():
    means = {k: 0.3169 for k in BENCHMARK_TEST_COUNTS}
    assert weighted_mean(means, BENCHMARK_TEST_COUNTS) == pytest.approx(0.3169, abs=1e-12)


def test_report_table_layout():
    rows = [ClassResult(n, 0.9, 0.95, 0.8, 0.3, c) for n, c in BENCHMARK_TEST_COUNTS.items()]
    table = EvalReport(rows).table().splitlines()
    body = [line for line in table if line.startswith("| ")]
    assert len(body) == 1 + 15 + 1
    assert body[0].split("|")[1].strip() == "CATEGORY"
    assert body[-1].split("|")[1].strip() == "MEAN"
    assert body[1].split("|")[1].strip() == "BOTTLE"
    assert "0.9500" in body[-1]
    tsv = EvalReport(rows).tsv().splitlines()
    assert len(tsv) == 3 * 16
    lat = EvalReport(rows).latency_tsv().splitlines()
    assert lat[-1] == "MEAN\t1725\t0.3"
