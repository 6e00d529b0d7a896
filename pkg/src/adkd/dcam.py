"""Distributed convolutional attention on the student feature pyramid.

Each pyramid level gets its own channel gate (shared two-layer MLP over the
avg- and max-pooled descriptors) and spatial gate (7x7 conv over the
channel-avg and channel-max maps, concatenated in that order). The gates are
only used while training; inference never touches these parameters.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .backbone import LEVELS, FeaturePyramid
from .core import Precision, Tensor, ops
from .data.rng import Rng
from .errors import ConfigError

SPATIAL_KERNEL = 7


class AttentionMode(enum.Enum):
    NONE = "none"
    CHANNEL = "channel"
    SPATIAL = "spatial"
    COMBINED = "combined"

    @property
    def uses_channel(self) -> bool:
        return self in (AttentionMode.CHANNEL, AttentionMode.COMBINED)

    @property
    def uses_spatial(self) -> bool:
        return self in (AttentionMode.SPATIAL, AttentionMode.COMBINED)


@dataclass
class ChannelAttentionParams:
    w0: Tensor  # (C/r) x C
    w1: Tensor  # C x (C/r)

    @property
    def channels(self) -> int:
        return self.w0.shape[1]


@dataclass
class SpatialAttentionParams:
    weight: Tensor  # 1 x 2 x 7 x 7
    bias: Tensor  # 1


@dataclass
class DcamParams:
    mode: AttentionMode
    reduction: int
    channel: dict[int, ChannelAttentionParams] = field(default_factory=dict)
    spatial: dict[int, SpatialAttentionParams] = field(default_factory=dict)

    def named_parameters(self) -> dict[str, Tensor]:
        out = {}
        for k, p in sorted(self.channel.items()):
            out[f"dcam.k{k}.channel.w0"] = p.w0
            out[f"dcam.k{k}.channel.w1"] = p.w1
        for k, p in sorted(self.spatial.items()):
            out[f"dcam.k{k}.spatial.weight"] = p.weight
            out[f"dcam.k{k}.spatial.bias"] = p.bias
        return out

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self.named_parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        from .weights import check_names

        named = self.named_parameters()
        check_names({n: t.shape for n, t in named.items()}, state)
        for n, t in named.items():
            t.data = np.array(state[n], dtype=t.dtype)


def build_dcam(widths: tuple[int, ...], mode: AttentionMode | str, reduction: int = 8, seed: int = 0,
               precision: Precision | str = Precision.SINGLE) -> DcamParams:
    """Seeded DCAM parameters for pyramid levels with channel ``widths``."""
    mode = AttentionMode(mode)
    dtype = Precision.of(precision).dtype
    if reduction < 1:
        raise ConfigError("reduction ratio must be >= 1")
    rng = Rng(seed)
    params = DcamParams(mode, reduction)

    def uniform(shape, fan_in, name):
        bound = math.sqrt(6.0 / fan_in)
        return Tensor(rng.uniform(shape, -bound, bound).astype(dtype), requires_grad=True, name=name)

    for k, c in zip(LEVELS, widths):
        if mode.uses_channel:
            if c % reduction:
                raise ConfigError(f"reduction ratio {reduction} does not divide {c} channels at level {k}")
            hidden = c // reduction
            params.channel[k] = ChannelAttentionParams(
                uniform((hidden, c), c, f"dcam.k{k}.channel.w0"),
                uniform((c, hidden), hidden, f"dcam.k{k}.channel.w1"),
            )
        if mode.uses_spatial:
            fan = 2 * SPATIAL_KERNEL * SPATIAL_KERNEL
            params.spatial[k] = SpatialAttentionParams(
                uniform((1, 2, SPATIAL_KERNEL, SPATIAL_KERNEL), fan, f"dcam.k{k}.spatial.weight"),
                Tensor(np.zeros(1, dtype=dtype), requires_grad=True, name=f"dcam.k{k}.spatial.bias"),
            )
    return params


def channel_attention(feat: Tensor, p: ChannelAttentionParams) -> Tensor:
    """Per-channel gate in (0, 1), shape ``C x 1 x 1`` (or ``N x C x 1 x 1``)."""
    c = feat.shape[-3]
    if p.channels != c:
        raise ConfigError(f"channel attention built for {p.channels} channels, feature has {c}")
    lead = feat.shape[:-3]
    rows = int(np.prod(lead)) if lead else 1

    def mlp(pooled: Tensor) -> Tensor:
        flat = ops.reshape(pooled, (rows, c))
        return ops.linear(ops.relu(ops.linear(flat, p.w0)), p.w1)

    gate = ops.sigmoid(ops.add(mlp(ops.global_avgpool(feat)), mlp(ops.global_maxpool(feat))))
    return ops.reshape(gate, lead + (c, 1, 1))


def spatial_attention(feat: Tensor, p: SpatialAttentionParams) -> Tensor:
    """Per-pixel gate in (0, 1), shape ``1 x H x W`` (or ``N x 1 x H x W``)."""
    pooled = ops.concat([ops.channel_avgpool(feat), ops.channel_maxpool(feat)], axis=feat.ndim - 3)
    return ops.sigmoid(ops.conv2d(pooled, p.weight, p.bias, stride=1, padding=SPATIAL_KERNEL // 2))


def refine(feat: Tensor, mode: AttentionMode | str, channel: ChannelAttentionParams | None = None,
           spatial: SpatialAttentionParams | None = None) -> Tensor:
    mode = AttentionMode(mode)
    if mode is AttentionMode.NONE:
        return feat
    if mode.uses_channel and channel is None:
        raise ConfigError(f"attention mode {mode.value!r} needs channel parameters")
    if mode.uses_spatial and spatial is None:
        raise ConfigError(f"attention mode {mode.value!r} needs spatial parameters")
    out = feat
    if mode.uses_channel:
        out = ops.mul(channel_attention(out, channel), out)
    if mode.uses_spatial:
        out = ops.mul(spatial_attention(out, spatial), out)
    return out


def refine_pyramid(pyramid: FeaturePyramid, params: DcamParams) -> FeaturePyramid:
    return FeaturePyramid([
        (k, refine(t, params.mode, params.channel.get(k), params.spatial.get(k)))
        for k, t in pyramid
    ])
