"""Training loop, dataset splitting and checkpoints."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import weights as wfile
from .backbone import PyramidNet, build_backbone, import_weights
from .config import TrainConfig
from .core import ContractError, Graph, Tensor, backward, no_grad, sgd_step
from .data.layout import Dataset
from .data.preprocess import preprocess_batch
from .data.rng import Rng, derive_seed
from .dcam import DcamParams, build_dcam, refine_pyramid
from .errors import ConfigError, TrainingDiverged
from .losses import total_loss

log = logging.getLogger(__name__)

ECHO_SEPARATOR = "--- state ---"
SPLIT_POLICY = "per-class"


def split_dataset(samples: Sequence, val_fraction: float, seed: int) -> tuple[list, list]:
    """Seeded shuffle, then the first ``ceil(n * (1 - val_fraction))`` items train.

    Samples exposing a ``label`` must all be normal (label 0).
    """
    samples = list(samples)
    if len(samples) < 2:
        raise ContractError(f"need at least 2 samples to split, got {len(samples)}")
    if not 0.0 < val_fraction < 1.0:
        raise ConfigError(f"val_fraction must lie in (0, 1), got {val_fraction}")
    anomalous = [i for i, s in enumerate(samples) if getattr(s, "label", 0) != 0]
    if anomalous:
        raise ContractError(f"training split received anomalous samples at positions {anomalous[:5]}")
    n = len(samples)
    # the small offset keeps float noise (e.g. 10 * 0.8 = 8.000000000000002) from bumping the ceiling
    n_train = min(n - 1, max(1, math.ceil(n * (1.0 - val_fraction) - 1e-9)))
    order = Rng(seed).permutation(n)
    return [samples[i] for i in order[:n_train]], [samples[i] for i in order[n_train:]]


@dataclass
class TrainingData:
    train: np.ndarray  # N x 3 x H x W, preprocessed
    val: np.ndarray

    @classmethod
    def from_dataset(cls, dataset: Dataset, cfg: TrainConfig) -> "TrainingData":
        train_imgs, val_imgs = [], []
        for ci, split in enumerate(dataset.classes):
            tr, va = split_dataset(split.train, cfg.val_fraction, derive_seed(cfg.seed, "split", split.name))
            train_imgs += [s.load().image for s in tr]
            val_imgs += [s.load().image for s in va]
        prep = lambda imgs: preprocess_batch(imgs, cfg.input_size, cfg.norm_mean, cfg.norm_std)  # noqa: E731
        return cls(prep(train_imgs), prep(val_imgs))


@dataclass
class Checkpoint:
    config: TrainConfig
    teacher: dict[str, np.ndarray]
    student: dict[str, np.ndarray]
    dcam: dict[str, np.ndarray]
    epoch: int
    best_val_loss: float
    rng_state: int

    def tensors(self) -> dict[str, np.ndarray]:
        out = {f"teacher.{k}": v for k, v in self.teacher.items()}
        out.update({f"student.{k}": v for k, v in self.student.items()})
        out.update(self.dcam)
        return out

    def echo(self) -> str:
        state = (f"epoch = {self.epoch}\n"
                 f"best_val_loss = {self.best_val_loss!r}\n"
                 f"rng_state = {self.rng_state}\n"
                 f"split = {SPLIT_POLICY}\n")
        return self.config.to_text() + ECHO_SEPARATOR + "\n" + state

    def save(self, path: str | Path) -> str:
        return wfile.save(path, self.tensors(), self.echo())

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        tensors, echo = wfile.load(path)
        if echo is None or ECHO_SEPARATOR not in echo:
            raise wfile.WeightsFormatError(f"{path}: weights file carries no checkpoint state")
        cfg_text, state_text = echo.split(ECHO_SEPARATOR, 1)
        cfg = TrainConfig.from_text(cfg_text, source=f"{path} (config echo)")
        state = dict(line.split(" = ", 1) for line in state_text.strip().splitlines())
        return cls(
            config=cfg,
            teacher={k[8:]: v for k, v in tensors.items() if k.startswith("teacher.")},
            student={k[8:]: v for k, v in tensors.items() if k.startswith("student.")},
            dcam={k: v for k, v in tensors.items() if k.startswith("dcam.")},
            epoch=int(state["epoch"]),
            best_val_loss=float(state["best_val_loss"]),
            rng_state=int(state["rng_state"]),
        )


@dataclass
class TrainResult:
    checkpoint: Checkpoint | None
    initial_val_loss: float
    step_losses: list[float] = field(default_factory=list)
    epoch_losses: list[float] = field(default_factory=list)
    val_losses: list[float] = field(default_factory=list)
    checkpoint_epochs: list[int] = field(default_factory=list)
    best_val_history: list[float] = field(default_factory=list)


@dataclass
class Model:
    """Teacher, student and DCAM parameters of one experiment."""

    teacher: PyramidNet
    student: PyramidNet
    dcam: DcamParams

    @classmethod
    def build(cls, cfg: TrainConfig) -> "Model":
        bcfg = cfg.backbone
        teacher = build_backbone(bcfg, derive_seed(cfg.seed, "teacher"), frozen=True)
        if cfg.teacher_weights:
            import_weights(teacher, cfg.teacher_weights)
        student = build_backbone(bcfg, derive_seed(cfg.seed, "student"), frozen=False)
        dcam = build_dcam(bcfg.stage_channels, cfg.attention, cfg.reduction, derive_seed(cfg.seed, "dcam"))
        return cls(teacher, student, dcam)

    def trainable(self) -> dict[str, Tensor]:
        params = {f"student.{k}": v for k, v in self.student.trainable_parameters().items()}
        params.update(self.dcam.named_parameters())
        return params

    def snapshot(self, cfg: TrainConfig, epoch: int, best_val: float, rng_state: int) -> Checkpoint:
        copy = lambda d: {k: np.array(v, copy=True) for k, v in d.items()}  # noqa: E731
        return Checkpoint(cfg, copy(self.teacher.state_dict()), copy(self.student.state_dict()),
                          copy(self.dcam.state_dict()), epoch, best_val, rng_state)

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "Model":
        model = cls.build_empty(ckpt.config)
        model.teacher.load_state_dict(ckpt.teacher)
        model.student.load_state_dict(ckpt.student)
        model.dcam.load_state_dict(ckpt.dcam)
        return model

    @classmethod
    def build_empty(cls, cfg: TrainConfig) -> "Model":
        bcfg = cfg.backbone
        return cls(build_backbone(bcfg, 0, frozen=True), build_backbone(bcfg, 0, frozen=False),
                   build_dcam(bcfg.stage_channels, cfg.attention, cfg.reduction, 0))


def _loss(model: Model, batch: np.ndarray, cfg: TrainConfig, training: bool):
    x = Tensor(batch)
    with no_grad():
        teacher = model.teacher.forward(x)
    student = model.student.forward(x, training=training)
    return total_loss(teacher, refine_pyramid(student, model.dcam), cfg.loss)


def validation_loss(model: Model, data: np.ndarray, cfg: TrainConfig) -> float:
    """Mean per-image total loss with attention active, no gradient recording."""
    if len(data) == 0:
        return float("nan")
    total = 0.0
    with no_grad():
        for start in range(0, len(data), cfg.batch_size):
            batch = data[start:start + cfg.batch_size]
            total += float(_loss(model, batch, cfg, training=False).item()) * len(batch)
    return total / len(data)


def _run(model: Model, cfg: TrainConfig, data: TrainingData, rng: Rng, start_epoch: int,
         best: Checkpoint | None, result: TrainResult, on_epoch: Callable | None) -> TrainResult:
    params = model.trainable()
    best_val = best.best_val_loss if best is not None else math.inf
    step = len(result.step_losses)
    n = len(data.train)
    for epoch in range(start_epoch + 1, cfg.epochs + 1):
        order = rng.permutation(n)
        epoch_total = 0.0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            batch = data.train[order[start:start + cfg.batch_size]]
            with Graph() as graph:
                loss = _loss(model, batch, cfg, training=True)
            value = float(loss.item())
            if not math.isfinite(value):
                raise TrainingDiverged(f"non-finite loss {value} at step {step} (epoch {epoch}, batch {b})")
            grads = backward(graph, loss, params)
            sgd_step(params, grads, cfg.lr)
            result.step_losses.append(value)
            epoch_total += value * len(batch)
            step += 1
        result.epoch_losses.append(epoch_total / n)
        val = validation_loss(model, data.val, cfg)
        result.val_losses.append(val)
        log.info("epoch %d: train %.6f val %.6f", epoch, result.epoch_losses[-1], val)
        if val < best_val:
            best_val = val
            best = model.snapshot(cfg, epoch, val, rng.state)
            result.checkpoint_epochs.append(epoch)
            result.best_val_history.append(val)
            if cfg.checkpoint_path:
                best.save(cfg.checkpoint_path)
        if on_epoch is not None:
            on_epoch(epoch, result)
    result.checkpoint = best
    return result


def _as_data(data, cfg: TrainConfig) -> TrainingData:
    if isinstance(data, TrainingData):
        return data
    if isinstance(data, Dataset):
        return TrainingData.from_dataset(data, cfg)
    raise TypeError(f"expected TrainingData or Dataset, got {type(data).__name__}")


def train(cfg: TrainConfig, data, on_epoch: Callable | None = None) -> TrainResult:
    """Train the student (and DCAM) against the frozen teacher.

    Returns the best-validation checkpoint along with the loss history; the
    checkpoint is also written to ``cfg.checkpoint_path`` whenever the
    validation loss strictly improves.
    """
    data = _as_data(data, cfg)
    model = Model.build(cfg)
    result = TrainResult(None, validation_loss(model, data.val, cfg))
    rng = Rng(derive_seed(cfg.seed, "order"))
    return _run(model, cfg, data, rng, 0, None, result, on_epoch)


def resume(checkpoint: Checkpoint, data, cfg: TrainConfig | None = None,
           on_epoch: Callable | None = None) -> TrainResult:
    """Continue a run from ``checkpoint`` up to ``cfg.epochs``."""
    cfg = cfg or checkpoint.config
    mismatch = checkpoint.config.diff(cfg)
    if mismatch:
        raise ConfigError("checkpoint config does not match the current config:\n  " + "\n  ".join(mismatch))
    data = _as_data(data, cfg)
    model = Model.from_checkpoint(checkpoint)
    result = TrainResult(checkpoint, checkpoint.best_val_loss, best_val_history=[checkpoint.best_val_loss],
                         checkpoint_epochs=[checkpoint.epoch])
    return _run(model, cfg, data, Rng(checkpoint.rng_state), checkpoint.epoch, checkpoint, result, on_epoch)
