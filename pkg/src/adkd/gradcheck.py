"""Finite-difference verification of every differentiable operator.

Each case draws random double-precision inputs, reduces the operator output to
a scalar through a fixed random projection, and compares the reverse-mode
gradient with central differences. The error of one instance is the
norm-relative error ``|a - n| / max(|a|, |n|)`` over the checked coordinates;
inputs larger than ``max_coords`` entries are checked on a random subset.

Inputs are drawn away from the kinks of ``relu``/``max`` so that a step of
``1e-5`` never crosses a non-differentiable point.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .backbone import FeaturePyramid
from .core import Graph, Tensor, backward, no_grad, ops
from .dcam import AttentionMode, ChannelAttentionParams, SpatialAttentionParams, channel_attention, refine, \
    spatial_attention
from .losses import LossSpec, LossTerm, cd_channel, cd_spatial, kld_channel, kld_spatial, mse_stfpm, total_loss

Builder = Callable[[np.random.Generator], tuple[dict[str, np.ndarray], Callable[[dict[str, Tensor]], Tensor]]]

STEP = 1e-5
TOLERANCE = 1e-6


@dataclass(frozen=True)
class GradCase:
    name: str
    build: Builder


@dataclass
class CaseResult:
    name: str
    instances: int
    worst: float
    tolerance: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.worst < self.tolerance


def _spaced(rng: np.random.Generator, shape) -> np.ndarray:
    """Distinct values at least 0.05 apart, so max/argmax are stable under the FD step."""
    n = int(np.prod(shape))
    return (rng.permutation(n) * 0.05 - n * 0.025 + rng.uniform(-0.01, 0.01, n)).reshape(shape)


def _pyramid(rng: np.random.Generator, n: int, widths=(4, 6, 8), sizes=(6, 4, 2)) -> list[np.ndarray]:
    return [rng.normal(size=(n, c, s, s)) for c, s in zip(widths, sizes)]


# --- case builders -------------------------------------------------------


def _conv(rng):
    n, c, o = rng.integers(1, 3), rng.integers(1, 4), rng.integers(1, 4)
    k = int(rng.choice([1, 3, 5]))
    stride = int(rng.integers(1, 3))
    padding = int(rng.integers(0, k // 2 + 1))
    h, w = rng.integers(k, k + 5), rng.integers(k, k + 5)
    inputs = {"x": rng.normal(size=(n, c, h, w)), "w": rng.normal(size=(o, c, k, k)) * 0.5}
    if rng.random() < 0.5:
        inputs["b"] = rng.normal(size=o)
    return inputs, lambda t: ops.conv2d(t["x"], t["w"], t.get("b"), stride=stride, padding=padding)


def _maxpool(rng):
    window, stride, padding = [(3, 2, 1), (2, 2, 0), (3, 1, 1)][rng.integers(0, 3)]
    x = _spaced(rng, (int(rng.integers(1, 3)), int(rng.integers(1, 4)), int(rng.integers(4, 8)), int(rng.integers(4, 8))))
    return {"x": x}, lambda t: ops.maxpool_spatial(t["x"], window, stride, padding)


def _avgpool(rng):
    window, stride, padding = [(3, 2, 1), (2, 2, 0), (3, 1, 1)][rng.integers(0, 3)]
    x = rng.normal(size=(int(rng.integers(1, 3)), int(rng.integers(1, 4)), int(rng.integers(4, 8)), int(rng.integers(4, 8))))
    return {"x": x}, lambda t: ops.avgpool_spatial(t["x"], window, stride, padding)


def _global_pool(rng):
    x = _spaced(rng, (2, int(rng.integers(1, 5)), int(rng.integers(2, 6)), int(rng.integers(2, 6))))
    return {"x": x}, lambda t: ops.add(ops.global_maxpool(t["x"]), ops.mul(ops.global_avgpool(t["x"]), 0.7))


def _channel_pool(rng):
    x = _spaced(rng, (2, int(rng.integers(2, 6)), int(rng.integers(2, 5)), int(rng.integers(2, 5))))
    return {"x": x}, lambda t: ops.concat([ops.channel_maxpool(t["x"]), ops.channel_avgpool(t["x"])], axis=1)


def _softmax(rng):
    x = rng.normal(size=(2, int(rng.integers(2, 6)), int(rng.integers(2, 5)), int(rng.integers(2, 5)))) * 2
    axes = (1,) if rng.random() < 0.5 else (2, 3)
    return {"x": x}, lambda t: ops.softmax(t["x"], axes)


def _log_softmax(rng):
    x = rng.normal(size=(2, int(rng.integers(2, 6)), int(rng.integers(2, 5)), int(rng.integers(2, 5)))) * 2
    axes = (1,) if rng.random() < 0.5 else (2, 3)
    return {"x": x}, lambda t: ops.log_softmax(t["x"], axes)


def _sigmoid(rng):
    return {"x": rng.uniform(-6, 6, size=(3, 4, 5))}, lambda t: ops.sigmoid(t["x"])


def _bilinear(rng):
    h, w = int(rng.integers(1, 7)), int(rng.integers(1, 7))
    th, tw = h + int(rng.integers(0, 9)), w + int(rng.integers(0, 9))
    x = rng.normal(size=(int(rng.integers(1, 3)), 2, h, w))
    return {"x": x}, lambda t: ops.bilinear_upsample(t["x"], th, tw)


def _channel_attention(rng):
    c = int(rng.choice([4, 8]))
    hidden = c // int(rng.choice([2, 4]))
    inputs = {
        "f": rng.normal(size=(2, c, int(rng.integers(2, 6)), int(rng.integers(2, 6)))),
        "w0": rng.normal(size=(hidden, c)),
        "w1": rng.normal(size=(c, hidden)),
    }
    return inputs, lambda t: channel_attention(t["f"], ChannelAttentionParams(t["w0"], t["w1"]))


def _spatial_attention(rng):
    inputs = {
        "f": rng.normal(size=(2, int(rng.integers(1, 6)), int(rng.integers(3, 9)), int(rng.integers(3, 9)))),
        "weight": rng.normal(size=(1, 2, 7, 7)) * 0.2,
        "bias": rng.normal(size=1),
    }
    return inputs, lambda t: spatial_attention(t["f"], SpatialAttentionParams(t["weight"], t["bias"]))


def _loss_case(loss):
    def build(rng):
        n = int(rng.integers(1, 3))
        teacher = FeaturePyramid([(k, Tensor(a)) for k, a in zip((2, 3, 4), _pyramid(rng, n))])
        inputs = {f"s{k}": a for k, a in zip((2, 3, 4), _pyramid(rng, n))}

        def fn(t):
            return loss(teacher, FeaturePyramid([(k, t[f"s{k}"]) for k in (2, 3, 4)]))

        return inputs, fn

    return build


_ALL_TERMS = LossSpec((
    LossTerm("cd", "channel", 1.0), LossTerm("cd", "spatial", 0.3), LossTerm("kld", "channel", 0.2),
    LossTerm("kld", "spatial", 0.5), LossTerm("mse", "channel", 0.7),
))


def _refine_loss(rng):
    widths = (4, 8, 8)
    n = int(rng.integers(1, 3))
    mode = [AttentionMode.CHANNEL, AttentionMode.SPATIAL, AttentionMode.COMBINED][rng.integers(0, 3)]
    teacher = FeaturePyramid([(k, Tensor(a)) for k, a in zip((2, 3, 4), _pyramid(rng, n, widths))])
    inputs = {f"s{k}": a for k, a in zip((2, 3, 4), _pyramid(rng, n, widths))}
    for k, c in zip((2, 3, 4), widths):
        if mode.uses_channel:
            inputs[f"w0.{k}"] = rng.normal(size=(c // 2, c))
            inputs[f"w1.{k}"] = rng.normal(size=(c, c // 2))
        if mode.uses_spatial:
            inputs[f"sw.{k}"] = rng.normal(size=(1, 2, 7, 7)) * 0.2
            inputs[f"sb.{k}"] = rng.normal(size=1)

    def fn(t):
        levels = []
        for k in (2, 3, 4):
            ch = ChannelAttentionParams(t[f"w0.{k}"], t[f"w1.{k}"]) if mode.uses_channel else None
            sp = SpatialAttentionParams(t[f"sw.{k}"], t[f"sb.{k}"]) if mode.uses_spatial else None
            levels.append((k, refine(t[f"s{k}"], mode, ch, sp)))
        return total_loss(teacher, FeaturePyramid(levels), _ALL_TERMS)

    return inputs, fn


def _batchnorm(rng):
    c = int(rng.integers(1, 4))
    inputs = {
        "x": rng.normal(size=(int(rng.integers(2, 4)), c, int(rng.integers(2, 5)), int(rng.integers(2, 5)))),
        "gamma": rng.normal(size=c),
        "beta": rng.normal(size=c),
    }

    def fn(t):
        return ops.batchnorm2d(t["x"], t["gamma"], t["beta"], np.zeros(c), np.ones(c), training=True)

    return inputs, fn


CASES: tuple[GradCase, ...] = (
    GradCase("conv2d", _conv),
    GradCase("maxpool", _maxpool),
    GradCase("avgpool", _avgpool),
    GradCase("global_pool", _global_pool),
    GradCase("channel_pool", _channel_pool),
    GradCase("softmax", _softmax),
    GradCase("log_softmax", _log_softmax),
    GradCase("sigmoid", _sigmoid),
    GradCase("bilinear_upsample", _bilinear),
    GradCase("channel_attention", _channel_attention),
    GradCase("spatial_attention", _spatial_attention),
    GradCase("cd_channel", _loss_case(cd_channel)),
    GradCase("cd_spatial", _loss_case(cd_spatial)),
    GradCase("kld_channel", _loss_case(kld_channel)),
    GradCase("kld_spatial", _loss_case(kld_spatial)),
    GradCase("mse_stfpm", _loss_case(mse_stfpm)),
    GradCase("refine_loss", _refine_loss),
    GradCase("batchnorm_train", _batchnorm),
)


# --- checking ------------------------------------------------------------


def check_instance(inputs: dict[str, np.ndarray], fn: Callable[[dict[str, Tensor]], Tensor],
                   rng: np.random.Generator, step: float = STEP, max_coords: int = 96) -> float:
    """Norm-relative error between analytic and central-difference gradients."""
    inputs = {k: np.asarray(v, dtype=np.float64) for k, v in inputs.items()}
    with no_grad():
        probe = fn({k: Tensor(v) for k, v in inputs.items()})
    proj = None if probe.data.size == 1 else rng.normal(size=probe.shape)

    def objective(out: Tensor) -> Tensor:
        return out if proj is None else ops.sum(ops.mul(out, proj))

    leaves = {k: Tensor(v.copy(), requires_grad=True, name=k) for k, v in inputs.items()}
    with Graph() as graph:
        loss = objective(fn(leaves))
    analytic = backward(graph, loss, leaves)

    def value(arrays) -> float:
        with no_grad():
            return float(objective(fn({k: Tensor(v) for k, v in arrays.items()})).item())

    a_parts, n_parts = [], []
    for name, base in inputs.items():
        coords = np.arange(base.size)
        if base.size > max_coords:
            coords = rng.choice(base.size, size=max_coords, replace=False)
        for idx in coords:
            plus, minus = dict(inputs), dict(inputs)
            plus[name] = base.copy()
            minus[name] = base.copy()
            plus[name].flat[idx] += step
            minus[name].flat[idx] -= step
            n_parts.append((value(plus) - value(minus)) / (2 * step))
            a_parts.append(analytic[name].flat[idx])
    a, n = np.array(a_parts), np.array(n_parts)
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(a - n) / scale)


def run_case(case: GradCase, instances: int = 20, seed: int = 0, step: float = STEP,
             tolerance: float = TOLERANCE) -> CaseResult:
    rng = np.random.default_rng([seed, sum(map(ord, case.name))])
    start = time.perf_counter()
    worst = 0.0
    for _ in range(instances):
        inputs, fn = case.build(rng)
        worst = max(worst, check_instance(inputs, fn, rng, step))
    return CaseResult(case.name, instances, worst, tolerance, time.perf_counter() - start)


def run_suite(instances: int = 20, seed: int = 0, step: float = STEP, tolerance: float = TOLERANCE,
              names: list[str] | None = None) -> list[CaseResult]:
    cases = [c for c in CASES if names is None or c.name in names]
    return [run_case(c, instances, seed, step, tolerance) for c in cases]


def format_results(results: list[CaseResult]) -> str:
    lines = [f"{'case':<20} {'n':>3} {'worst rel err':>14}  status"]
    for r in results:
        lines.append(f"{r.name:<20} {r.instances:>3} {r.worst:>14.3e}  {'ok' if r.passed else 'FAIL'}")
    return "\n".join(lines)


__all__ = ["CASES", "CaseResult", "GradCase", "STEP", "TOLERANCE", "check_instance", "format_results", "run_case",
           "run_suite"]
