"""Line-oriented ``key = value`` run configuration and the named profiles."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .backbone import BackboneConfig
from .dcam import AttentionMode
from .errors import ConfigError
from .kvfile import parse_lines
from .losses import HEADLINE, LossSpec

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

# keys that may differ between a checkpoint and the run resuming it
RESUMABLE_KEYS = {"epochs", "checkpoint_path", "data_root"}


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(p) for p in text.replace(" ", "").split(",") if p)


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(p) for p in text.replace(" ", "").split(",") if p)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 400
    batch_size: int = 32
    lr: float = 0.1
    seed: int = 0
    val_fraction: float = 0.2
    input_size: int = 256
    attention: AttentionMode = AttentionMode.CHANNEL
    loss: LossSpec = HEADLINE
    stem_channels: int = 64
    stage_channels: tuple[int, int, int] = (64, 128, 256)
    blocks_per_stage: int = 2
    use_batchnorm: bool = False
    reduction: int = 8
    norm_mean: tuple[float, float, float] = IMAGENET_MEAN
    norm_std: tuple[float, float, float] = IMAGENET_STD
    teacher_weights: str = ""
    data_root: str = ""
    checkpoint_path: str = "checkpoint.adkd"

    def __post_init__(self):
        object.__setattr__(self, "attention", AttentionMode(self.attention))
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError(f"val_fraction must lie in (0, 1), got {self.val_fraction}")
        if self.lr < 0:
            raise ConfigError("lr must be >= 0")
        if len(self.norm_mean) != 3 or len(self.norm_std) != 3:
            raise ConfigError("norm_mean and norm_std need three values")
        if any(s == 0 for s in self.norm_std):
            raise ConfigError("norm_std must be non-zero")
        _ = self.backbone  # validates widths and input size

    @property
    def backbone(self) -> BackboneConfig:
        return BackboneConfig(self.stem_channels, self.stage_channels, self.blocks_per_stage,
                              self.use_batchnorm, (self.input_size, self.input_size))

    @classmethod
    def profile(cls, name: str) -> "TrainConfig":
        if name == "paper":
            return cls(use_batchnorm=True)
        if name == "desk":
            return cls(**DESK_OVERRIDES)
        raise ConfigError(f"unknown profile {name!r}; expected 'desk' or 'paper'")

    def with_pairs(self, pairs: list[tuple[str, str]]) -> "TrainConfig":
        updates: dict = {}
        losses: list[str] = []
        for key, value in pairs:
            if key == "loss":
                losses.append(value)
                continue
            if key in updates:
                raise ConfigError(f"duplicate key {key!r}")
            updates[key] = _convert(key, value)
        if losses:
            updates["loss"] = LossSpec.parse(losses)
        return dataclasses.replace(self, **updates)

    @classmethod
    def from_text(cls, text: str, base: "TrainConfig | None" = None, source: str = "<config>") -> "TrainConfig":
        return (base or cls()).with_pairs(parse_lines(text, source))

    @classmethod
    def from_file(cls, path: str | Path, base: "TrainConfig | None" = None) -> "TrainConfig":
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        return cls.from_text(path.read_text(encoding="utf-8"), base, str(path))

    def to_pairs(self) -> list[tuple[str, str]]:
        out = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if f.name == "loss":
                out.extend(("loss", line) for line in value.format())
            else:
                out.append((f.name, _render(value)))
        return out

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.to_pairs())

    def diff(self, other: "TrainConfig", ignore=RESUMABLE_KEYS) -> list[str]:
        mine, theirs = _grouped(self), _grouped(other)
        return [f"{k}: {mine.get(k)!r} != {theirs.get(k)!r}"
                for k in sorted(set(mine) | set(theirs))
                if k not in ignore and mine.get(k) != theirs.get(k)]


def _grouped(cfg: TrainConfig) -> dict[str, str]:
    out: dict[str, str] = {}
    for k, v in cfg.to_pairs():
        out[k] = f"{out[k]}; {v}" if k in out else v
    return out


def _render(value) -> str:
    if isinstance(value, AttentionMode):
        return value.value
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(_render(v) for v in value)
    return str(value)


_CONVERTERS = {
    "epochs": int,
    "batch_size": int,
    "lr": float,
    "seed": int,
    "val_fraction": float,
    "input_size": int,
    "attention": AttentionMode,
    "stem_channels": int,
    "stage_channels": _ints,
    "blocks_per_stage": int,
    "use_batchnorm": _bool,
    "reduction": int,
    "norm_mean": _floats,
    "norm_std": _floats,
    "teacher_weights": str,
    "data_root": str,
    "checkpoint_path": str,
}


def _convert(key: str, value: str):
    conv = _CONVERTERS.get(key)
    if conv is None:
        raise ConfigError(f"unknown config key {key!r}")
    try:
        return conv(value)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {value!r} ({exc})") from None


# Inputs are scaled to [-0.25, 0.25] rather than ImageNet statistics: with a random teacher the spatial KL term grows
# with the feature scale and would otherwise swamp the cosine term and force a tiny learning rate.
DESK_OVERRIDES = dict(
    epochs=150,
    batch_size=4,
    lr=0.05,
    input_size=64,
    stem_channels=16,
    stage_channels=(16, 32, 64),
    blocks_per_stage=1,
    use_batchnorm=False,
    reduction=8,
    norm_mean=(0.5, 0.5, 0.5),
    norm_std=(2.0, 2.0, 2.0),
)
