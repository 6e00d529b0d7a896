"""Three-stage residual feature pyramid used for both teacher and student.

The layout follows ResNet-18 up to ``conv4_x``: a 7x7/2 stem conv and a
3x3/2 max-pool (overall stride 4), then three residual stages where the last
two halve the resolution. Widths and depth are configurable so the same code
serves the 64/128/256 paper profile and small desk-scale profiles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from . import weights as wfile
from .core import DimensionError, Precision, Tensor, ops
from .data.rng import Rng
from .errors import ConfigError

LEVELS = (2, 3, 4)


@dataclass(frozen=True)
class BackboneConfig:
    stem_channels: int = 64
    stage_channels: tuple[int, int, int] = (64, 128, 256)
    blocks_per_stage: int = 2
    use_batchnorm: bool = False
    input_size: tuple[int, int] = (256, 256)

    def __post_init__(self):
        object.__setattr__(self, "stage_channels", tuple(int(c) for c in self.stage_channels))
        object.__setattr__(self, "input_size", tuple(int(s) for s in self.input_size))
        if len(self.stage_channels) != 3:
            raise ConfigError(f"stage_channels needs 3 widths, got {self.stage_channels}")
        if self.stem_channels <= 0 or any(c <= 0 for c in self.stage_channels):
            raise ConfigError(f"channel widths must be positive: stem={self.stem_channels}, "
                              f"stages={self.stage_channels}")
        if self.blocks_per_stage < 1:
            raise ConfigError("blocks_per_stage must be >= 1")
        if len(self.input_size) != 2 or any(s <= 0 or s % 16 for s in self.input_size):
            raise ConfigError(f"input_size {self.input_size} must be positive multiples of 16")


@dataclass
class FeaturePyramid:
    """Ordered feature maps, one per level ``k`` in (2, 3, 4)."""

    levels: list[tuple[int, Tensor]]

    def __iter__(self) -> Iterator[tuple[int, Tensor]]:
        return iter(self.levels)

    def __len__(self) -> int:
        return len(self.levels)

    def __getitem__(self, k: int) -> Tensor:
        for level, t in self.levels:
            if level == k:
                return t
        raise KeyError(k)

    def tensors(self) -> list[Tensor]:
        return [t for _, t in self.levels]

    def shapes(self) -> list[tuple[int, ...]]:
        return [t.shape for _, t in self.levels]


@dataclass
class PyramidNet:
    cfg: BackboneConfig
    params: dict[str, Tensor]
    buffers: dict[str, np.ndarray] = field(default_factory=dict)
    frozen: bool = False

    @property
    def dtype(self) -> np.dtype:
        return next(iter(self.params.values())).dtype

    def trainable_parameters(self) -> dict[str, Tensor]:
        return {} if self.frozen else dict(self.params)

    def parameter_count(self, trainable_only: bool = False) -> int:
        source = self.trainable_parameters() if trainable_only else self.params
        return int(sum(p.data.size for p in source.values()))

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {name: p.data for name, p in self.params.items()}
        out.update(self.buffers)
        return out

    def expected_shapes(self) -> dict[str, tuple[int, ...]]:
        return {name: arr.shape for name, arr in self.state_dict().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        wfile.check_names(self.expected_shapes(), state)
        for name, p in self.params.items():
            p.data = np.array(state[name], dtype=p.dtype)
        for name in self.buffers:
            self.buffers[name] = np.array(state[name], dtype=self.dtype)

    # -- forward ----------------------------------------------------------

    def _norm(self, x: Tensor, prefix: str, training: bool) -> Tensor:
        if not self.cfg.use_batchnorm:
            return x
        return ops.batchnorm2d(
            x, self.params[f"{prefix}.weight"], self.params[f"{prefix}.bias"],
            self.buffers[f"{prefix}.running_mean"], self.buffers[f"{prefix}.running_var"],
            training=training and not self.frozen,
        )

    def _conv(self, x: Tensor, prefix: str, stride: int, padding: int) -> Tensor:
        return ops.conv2d(x, self.params[f"{prefix}.weight"], self.params.get(f"{prefix}.bias"),
                          stride=stride, padding=padding)

    def _block(self, x: Tensor, prefix: str, stride: int, training: bool) -> Tensor:
        out = ops.relu(self._norm(self._conv(x, f"{prefix}.conv1", stride, 1), f"{prefix}.bn1", training))
        out = self._norm(self._conv(out, f"{prefix}.conv2", 1, 1), f"{prefix}.bn2", training)
        if f"{prefix}.down.weight" in self.params:
            shortcut = self._norm(self._conv(x, f"{prefix}.down", stride, 0), f"{prefix}.down_bn", training)
        else:
            shortcut = x
        return ops.relu(ops.add(out, shortcut))

    def forward(self, image: Tensor, training: bool = False) -> FeaturePyramid:
        h, w = image.shape[-2:]
        if h % 16 or w % 16:
            raise DimensionError(f"input size {h}x{w} must be divisible by 16")
        if image.shape[-3] != 3:
            raise DimensionError(f"expected 3 input channels, got {image.shape[-3]}")
        x = ops.relu(self._norm(self._conv(image, "stem.conv", 2, 3), "stem.bn", training))
        x = ops.maxpool_spatial(x, 3, 2, padding=1)
        levels = []
        for k in LEVELS:
            stage_stride = 1 if k == 2 else 2
            for b in range(self.cfg.blocks_per_stage):
                x = self._block(x, f"stage{k}.{b}", stage_stride if b == 0 else 1, training)
            levels.append((k, x))
        return FeaturePyramid(levels)


def _layer_specs(cfg: BackboneConfig) -> list[tuple[str, tuple[int, ...]]]:
    """(name, shape) of every parameter in definition order."""
    specs: list[tuple[str, tuple[int, ...]]] = []
    bn = cfg.use_batchnorm

    def conv(prefix, cin, cout, k, norm_prefix):
        specs.append((f"{prefix}.weight", (cout, cin, k, k)))
        if bn:
            specs.append((f"{norm_prefix}.weight", (cout,)))
            specs.append((f"{norm_prefix}.bias", (cout,)))
        else:
            specs.append((f"{prefix}.bias", (cout,)))

    conv("stem.conv", 3, cfg.stem_channels, 7, "stem.bn")
    cin = cfg.stem_channels
    for k, cout in zip(LEVELS, cfg.stage_channels):
        stride = 1 if k == 2 else 2
        for b in range(cfg.blocks_per_stage):
            p = f"stage{k}.{b}"
            conv(f"{p}.conv1", cin, cout, 3, f"{p}.bn1")
            conv(f"{p}.conv2", cout, cout, 3, f"{p}.bn2")
            if b == 0 and (stride != 1 or cin != cout):
                conv(f"{p}.down", cin, cout, 1, f"{p}.down_bn")
            cin = cout
    return specs


def build_backbone(cfg: BackboneConfig, init_seed: int, frozen: bool = False,
                   precision: Precision | str = Precision.SINGLE) -> PyramidNet:
    """Seeded Kaiming-uniform initialisation of a :class:`PyramidNet`."""
    dtype = Precision.of(precision).dtype
    rng = Rng(init_seed)
    params: dict[str, Tensor] = {}
    buffers: dict[str, np.ndarray] = {}
    fan_in = 1
    for name, shape in _layer_specs(cfg):
        is_bn = ".bn" in name or "_bn." in name
        if is_bn:
            values = np.ones(shape) if name.endswith(".weight") else np.zeros(shape)
        elif len(shape) == 4:
            fan_in = shape[1] * shape[2] * shape[3]
            values = rng.uniform(shape, -math.sqrt(6.0 / fan_in), math.sqrt(6.0 / fan_in))
        else:
            bound = 1.0 / math.sqrt(fan_in)
            values = rng.uniform(shape, -bound, bound)
        params[name] = Tensor(values.astype(dtype), requires_grad=not frozen, name=name)
        if is_bn and name.endswith(".bias"):
            base = name[: -len(".bias")]
            buffers[f"{base}.running_mean"] = np.zeros(shape, dtype=dtype)
            buffers[f"{base}.running_var"] = np.ones(shape, dtype=dtype)
    return PyramidNet(cfg, params, buffers, frozen)


def forward_pyramid(net: PyramidNet, image: Tensor, training: bool = False) -> FeaturePyramid:
    return net.forward(image, training=training)


def export_weights(net: PyramidNet, path: str | Path) -> str:
    """Write the net's tensors; returns the file's SHA-256."""
    return wfile.save(path, net.state_dict())


def import_weights(net: PyramidNet, path: str | Path) -> PyramidNet:
    tensors, _ = wfile.load(path)
    net.load_state_dict(tensors)
    return net
