"""Feature-matching objectives between teacher and student pyramids.

Every loss takes two :class:`FeaturePyramid` objects with matching shapes.
Levels may be single maps (``C x H x W``) or batches (``N x C x H x W``); for
batches the per-image value is averaged over the batch. Teacher tensors should
be plain (non-tracked) tensors, the student side carries the graph.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .backbone import FeaturePyramid
from .core import DimensionError, Tensor, ops
from .errors import ConfigError

EPS = 1e-8

METRICS = ("mse", "cd", "kld")
DIMENSIONS = ("channel", "spatial")


def _levels(teacher: FeaturePyramid, student: FeaturePyramid):
    if len(teacher) != len(student):
        raise DimensionError(f"pyramids have {len(teacher)} and {len(student)} levels")
    for (kt, t), (ks, s) in zip(teacher, student):
        if t.shape != s.shape or kt != ks:
            raise DimensionError(f"level {kt}: teacher {t.shape} vs student {s.shape}")
        yield t, s


def _batch(t: Tensor) -> int:
    return int(np.prod(t.shape[:-3])) if t.ndim > 3 else 1


def cosine_similarity(a: Tensor, b: Tensor, axes) -> Tensor:
    """Cosine along ``axes`` with each norm floored at ``EPS``.

    The squared norms are floored and multiplied before the single square root, so ``sqrt(n * n) == n`` keeps
    the cosine of a vector with itself at exactly 1 whenever its norm is at least ``EPS``.
    """
    dot = ops.sum(ops.mul(a, b), axes)
    na = ops.clamp_min(ops.sum(ops.mul(a, a), axes), EPS * EPS)
    nb = ops.clamp_min(ops.sum(ops.mul(b, b), axes), EPS * EPS)
    return ops.div(dot, ops.sqrt(ops.mul(na, nb)))


def _channel_axis(t: Tensor) -> int:
    return t.ndim - 3


def _spatial_axes(t: Tensor) -> tuple[int, int]:
    return (t.ndim - 2, t.ndim - 1)


def _sum_levels(values: list[Tensor]) -> Tensor:
    total = values[0]
    for v in values[1:]:
        total = ops.add(total, v)
    return total


def cd_channel(teacher: FeaturePyramid, student: FeaturePyramid) -> Tensor:
    """Per-pixel cosine distance of channel vectors, averaged over pixels, summed over levels."""
    return _sum_levels([
        ops.mean(ops.sub(1.0, cosine_similarity(t, s, _channel_axis(t))))
        for t, s in _levels(teacher, student)
    ])


def cd_spatial(teacher: FeaturePyramid, student: FeaturePyramid) -> Tensor:
    """Per-channel cosine distance of flattened H x W maps, averaged over channels, summed over levels."""
    return _sum_levels([
        ops.mean(ops.sub(1.0, cosine_similarity(t, s, _spatial_axes(t))))
        for t, s in _levels(teacher, student)
    ])


def _kl(t: Tensor, s: Tensor, axes) -> Tensor:
    log_pt = ops.log_softmax(t, axes)
    log_ps = ops.log_softmax(s, axes)
    pt = Tensor(np.exp(log_pt.data)) if not t.requires_grad else ops.exp(log_pt)
    terms = ops.mul(pt, ops.sub(log_pt, log_ps))
    return ops.div(ops.sum(terms), float(_batch(t)))


def kld_channel(teacher: FeaturePyramid, student: FeaturePyramid) -> Tensor:
    """KL(softmax_c(T) || softmax_c(S)) summed over pixels and levels."""
    return _sum_levels([_kl(t, s, _channel_axis(t)) for t, s in _levels(teacher, student)])


def kld_spatial(teacher: FeaturePyramid, student: FeaturePyramid) -> Tensor:
    """KL(softmax_hw(T) || softmax_hw(S)) summed over channels and levels."""
    return _sum_levels([_kl(t, s, _spatial_axes(t)) for t, s in _levels(teacher, student)])


def _unit(t: Tensor, axis: int) -> Tensor:
    norm = ops.sqrt(ops.sum(ops.mul(t, t), axis, keepdims=True))
    return ops.div(t, ops.clamp_min(norm, EPS))


def mse_stfpm(teacher: FeaturePyramid, student: FeaturePyramid) -> Tensor:
    """Half squared distance of channel-normalised vectors, averaged over pixels, summed over levels."""
    values = []
    for t, s in _levels(teacher, student):
        ax = _channel_axis(t)
        diff = ops.sub(_unit(t, ax), _unit(s, ax))
        per_pixel = ops.sum(ops.mul(diff, diff), ax)
        values.append(ops.mul(0.5, ops.mean(per_pixel)))
    return _sum_levels(values)


LOSSES: dict[tuple[str, str], Callable[[FeaturePyramid, FeaturePyramid], Tensor]] = {
    ("cd", "channel"): cd_channel,
    ("cd", "spatial"): cd_spatial,
    ("kld", "channel"): kld_channel,
    ("kld", "spatial"): kld_spatial,
    ("mse", "channel"): mse_stfpm,
}


@dataclass(frozen=True)
class LossTerm:
    metric: str
    dimension: str
    weight: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "metric", self.metric.lower())
        object.__setattr__(self, "dimension", self.dimension.lower())
        if self.metric not in METRICS:
            raise ConfigError(f"unknown loss metric {self.metric!r}; expected one of {METRICS}")
        if self.dimension not in DIMENSIONS:
            raise ConfigError(f"unknown loss dimension {self.dimension!r}; expected one of {DIMENSIONS}")
        if (self.metric, self.dimension) not in LOSSES:
            raise ConfigError(f"loss {self.metric}:{self.dimension} is not defined (MSE is channel-only)")
        if not np.isfinite(self.weight) or self.weight < 0:
            raise ConfigError(f"loss weight must be finite and >= 0, got {self.weight}")

    @classmethod
    def parse(cls, text: str) -> "LossTerm":
        parts = [p.strip() for p in text.split(":")]
        if len(parts) not in (2, 3):
            raise ConfigError(f"loss term {text!r} is not <metric>:<dimension>[:<weight>]")
        try:
            weight = float(parts[2]) if len(parts) == 3 else 1.0
        except ValueError:
            raise ConfigError(f"loss weight in {text!r} is not a number") from None
        return cls(parts[0], parts[1], weight)

    def format(self) -> str:
        return f"{self.metric.upper()}:{self.dimension}:{self.weight:g}"


@dataclass(frozen=True)
class LossSpec:
    terms: tuple[LossTerm, ...]

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        if not self.terms:
            raise ConfigError("loss spec needs at least one term")

    @classmethod
    def parse(cls, lines: Sequence[str]) -> "LossSpec":
        return cls(tuple(LossTerm.parse(line) for line in lines))

    def format(self) -> list[str]:
        return [t.format() for t in self.terms]


HEADLINE = LossSpec((LossTerm("cd", "channel", 1.0), LossTerm("kld", "spatial", 0.5)))
MSE_BASELINE = LossSpec((LossTerm("mse", "channel", 1.0),))


def total_loss(teacher: FeaturePyramid, student_refined: FeaturePyramid, spec: LossSpec) -> Tensor:
    if not spec.terms:
        raise ConfigError("loss spec needs at least one term")
    parts = [ops.mul(float(term.weight), LOSSES[(term.metric, term.dimension)](teacher, student_refined))
             for term in spec.terms]
    return _sum_levels(parts)
