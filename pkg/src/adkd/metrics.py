"""Evaluation metrics: AUROC, per-region overlap (PRO) and latency summaries."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import ndimage
from scipy.stats import rankdata

from .errors import DimensionError, UndefinedMetricError

EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


def auroc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Mann-Whitney AUROC with mid-ranks for tied scores."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(bool)
    if s.shape != y.shape:
        raise DimensionError(f"{s.size} scores but {y.size} labels")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUROC needs both positive and negative samples")
    ranks = rankdata(s, method="average")
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass
class RegionSet:
    """8-connected components, numbered in row-major order of their first pixel."""

    labels: np.ndarray  # 0 background, 1..n regions
    regions: list[np.ndarray] = field(default_factory=list)  # flat pixel indices per region

    def __len__(self) -> int:
        return len(self.regions)


def connected_components(mask: np.ndarray) -> RegionSet:
    mask = np.asarray(mask).astype(bool)
    raw, n = ndimage.label(mask, structure=EIGHT_CONNECTED)
    if n == 0:
        return RegionSet(np.zeros(mask.shape, dtype=np.int64), [])
    flat = raw.ravel()
    order = np.argsort(flat, kind="stable")
    bounds = np.searchsorted(flat[order], np.arange(1, n + 2))
    groups = [order[bounds[i]:bounds[i + 1]] for i in range(n)]
    groups.sort(key=lambda g: int(g[0]))
    labels = np.zeros(flat.shape, dtype=np.int64)
    for i, g in enumerate(groups, 1):
        labels[g] = i
    return RegionSet(labels.reshape(mask.shape), groups)


def pro_curve(maps: Sequence[np.ndarray], masks: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Exact (FPR, mean region overlap) curve over every distinct pooled score.

    A pixel is predicted anomalous when its score is >= the threshold. The
    curve starts at (0, 0), the operating point above the largest score.
    """
    if len(maps) != len(masks):
        raise DimensionError(f"{len(maps)} maps but {len(masks)} masks")
    scores, weights, normal = [], [], []
    sizes = []
    for m, gt in zip(maps, masks):
        m = np.asarray(m, dtype=np.float64)
        gt = np.asarray(gt).astype(bool)
        if m.shape != gt.shape:
            raise DimensionError(f"map shape {m.shape} != mask shape {gt.shape}")
        regions = connected_components(gt)
        region_size = np.zeros(len(regions) + 1)
        for i, r in enumerate(regions.regions, 1):
            region_size[i] = r.size
        sizes.extend(region_size[1:])
        lab = regions.labels.ravel()
        w = np.zeros(lab.shape)
        w[lab > 0] = 1.0 / region_size[lab[lab > 0]]
        scores.append(m.ravel())
        weights.append(w)
        normal.append(lab == 0)
    n_regions = len(sizes)
    if n_regions == 0:
        raise UndefinedMetricError("PRO needs at least one anomalous region")
    s = np.concatenate(scores)
    w = np.concatenate(weights) / n_regions
    neg = np.concatenate(normal)
    n_neg = int(neg.sum())
    if n_neg == 0:
        raise UndefinedMetricError("PRO needs normal pixels to define the false-positive rate")

    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    fpr = np.cumsum(neg[order]) / n_neg
    pro = np.cumsum(w[order])
    # keep the last entry of each run of tied scores
    keep = np.append(s_sorted[1:] != s_sorted[:-1], True)
    fpr = np.concatenate([[0.0], fpr[keep]])
    pro = np.concatenate([[0.0], np.minimum(pro[keep], 1.0)])
    return fpr, pro


def integrate_to(x: np.ndarray, y: np.ndarray, limit: float) -> float:
    """Trapezoidal area under the polyline (x, y) for x in [0, limit]; x must be non-decreasing."""
    area = 0.0
    for i in range(1, len(x)):
        x0, x1 = x[i - 1], x[i]
        if x0 >= limit:
            break
        y0, y1 = y[i - 1], y[i]
        if x1 > limit:
            y1 = y0 + (y1 - y0) * (limit - x0) / (x1 - x0)
            x1 = limit
        area += (x1 - x0) * (y0 + y1) / 2.0
    return float(area)


def pro(maps: Sequence[np.ndarray], masks: Sequence[np.ndarray], fpr_limit: float = 0.3) -> float:
    """Normalised area under the PRO curve up to ``fpr_limit``."""
    if not 0.0 < fpr_limit <= 1.0:
        raise ValueError(f"fpr_limit must lie in (0, 1], got {fpr_limit}")
    fpr, overlap = pro_curve(maps, masks)
    return integrate_to(fpr, overlap, fpr_limit) / fpr_limit


@dataclass
class LatencyReport:
    class_means: dict[str, float]
    class_counts: dict[str, int]
    overall: float


def latency_report(times_by_class: Mapping[str, Sequence[float]]) -> LatencyReport:
    """Per-class mean seconds/image and their image-count-weighted average."""
    means, counts = {}, {}
    for name, times in times_by_class.items():
        if len(times) == 0:
            raise ValueError(f"class {name!r} has no timed images")
        means[name] = float(np.mean(times))
        counts[name] = len(times)
    return LatencyReport(means, counts, weighted_mean(means, counts))


def weighted_mean(values: Mapping[str, float], counts: Mapping[str, int]) -> float:
    total = sum(counts[k] for k in values)
    return float(sum(values[k] * counts[k] for k in values) / total)


@dataclass
class ClassResult:
    name: str
    auroc_image: float
    auroc_pixel: float
    pro: float
    latency: float
    n_images: int


@dataclass
class EvalReport:
    rows: list[ClassResult]

    @property
    def auroc_image(self) -> float:
        return float(np.mean([r.auroc_image for r in self.rows]))

    @property
    def auroc_pixel(self) -> float:
        return float(np.mean([r.auroc_pixel for r in self.rows]))

    @property
    def pro(self) -> float:
        return float(np.mean([r.pro for r in self.rows]))

    @property
    def latency(self) -> float:
        return weighted_mean({r.name: r.latency for r in self.rows}, {r.name: r.n_images for r in self.rows})

    def table(self) -> str:
        header = ("CATEGORY", "AUC-ROC (image)", "AUC-ROC (pixel)", "PRO", "Latency (s)")
        body = [(r.name.upper(), f"{r.auroc_image:.4f}", f"{r.auroc_pixel:.4f}", f"{r.pro:.4f}", f"{r.latency:.4f}")
                for r in self.rows]
        mean = ("MEAN", f"{self.auroc_image:.4f}", f"{self.auroc_pixel:.4f}", f"{self.pro:.4f}", f"{self.latency:.4f}")
        widths = [max(len(row[i]) for row in [header, *body, mean]) for i in range(len(header))]
        sep = "+" + "+".join("-" * (w + 2) for w in widths) + "+"

        def fmt(row):
            cells = [row[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(row[1:], widths[1:])]
            return "| " + " | ".join(cells) + " |"

        return "\n".join([sep, fmt(header), sep, *map(fmt, body), sep, fmt(mean), sep]) + "\n"

    def tsv(self) -> str:
        """Quality metrics only; wall-clock timings live in :meth:`latency_tsv` so this file is reproducible."""
        lines = []
        for name, ai, ap, pr in [(r.name, r.auroc_image, r.auroc_pixel, r.pro) for r in self.rows] + [
                ("MEAN", self.auroc_image, self.auroc_pixel, self.pro)]:
            lines += [f"{name}\tauroc_image\t{ai!r}", f"{name}\tauroc_pixel\t{ap!r}", f"{name}\tpro\t{pr!r}"]
        return "\n".join(lines) + "\n"

    def latency_tsv(self) -> str:
        lines = [f"{r.name}\t{r.n_images}\t{r.latency!r}" for r in self.rows]
        lines.append(f"MEAN\t{sum(r.n_images for r in self.rows)}\t{self.latency!r}")
        return "\n".join(lines) + "\n"
