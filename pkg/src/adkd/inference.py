"""Anomaly maps from teacher/student disagreement.

Inference reads only the ``teacher.*`` and ``student.*`` tensors of a
checkpoint; attention parameters are never loaded, so they cannot influence
the maps.
"""

from __future__ import annotations

import struct
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import weights as wfile
from .backbone import FeaturePyramid, PyramidNet, build_backbone
from .config import TrainConfig
from .core import DimensionError, Tensor, no_grad, ops
from .data.pnm import save_pgm
from .data.preprocess import preprocess
from .losses import cosine_similarity

MAP_MAGIC = b"ADAM"


@dataclass
class AnomalyMap:
    scores: np.ndarray  # H x W, summed cosine distances

    @property
    def shape(self) -> tuple[int, int]:
        return self.scores.shape


def level_loss_map(teacher: Tensor, student: Tensor) -> Tensor:
    """``1 - cos`` between the channel vectors at every pixel: ``h x w`` (or ``N x h x w``)."""
    if teacher.shape != student.shape:
        raise DimensionError(f"teacher level {teacher.shape} vs student level {student.shape}")
    return ops.sub(1.0, cosine_similarity(teacher, student, teacher.ndim - 3))


def anomaly_map(teacher: FeaturePyramid, student: FeaturePyramid, height: int, width: int) -> Tensor:
    """Sum over levels of the bilinearly upsampled level loss maps."""
    total = None
    for (_, t), (_, s) in zip(teacher, student):
        up = ops.bilinear_upsample(level_loss_map(t, s), height, width)
        total = up if total is None else ops.add(total, up)
    if total is None:
        raise DimensionError("empty feature pyramid")
    return total


def image_score(m: AnomalyMap | np.ndarray) -> float:
    scores = m.scores if isinstance(m, AnomalyMap) else np.asarray(m)
    if scores.size == 0:
        raise DimensionError("empty anomaly map")
    return float(scores.max())


@dataclass
class InferenceResult:
    map: AnomalyMap
    score: float
    seconds: float


class Detector:
    """Frozen teacher/student pair ready to score images."""

    def __init__(self, teacher: PyramidNet, student: PyramidNet, config: TrainConfig):
        self.teacher = teacher
        self.student = student
        self.config = config

    @classmethod
    def from_checkpoint(cls, path: str | Path) -> "Detector":
        from .trainer import ECHO_SEPARATOR

        tensors, echo = wfile.load(path)
        if echo is None:
            raise wfile.WeightsFormatError(f"{path}: not a checkpoint (no config echo)")
        cfg = TrainConfig.from_text(echo.split(ECHO_SEPARATOR, 1)[0], source=f"{path} (config echo)")
        nets = []
        for prefix in ("teacher.", "student."):
            net = build_backbone(cfg.backbone, 0, frozen=True)
            net.load_state_dict({k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)})
            nets.append(net)
        return cls(nets[0], nets[1], cfg)

    @property
    def input_size(self) -> int:
        return self.config.input_size

    def prepare(self, image: np.ndarray) -> Tensor:
        return preprocess(image, self.input_size, self.config.norm_mean, self.config.norm_std,
                          self.teacher.dtype)

    def map_batch(self, batch: np.ndarray) -> np.ndarray:
        """Maps for an already preprocessed ``N x 3 x H x W`` batch."""
        x = Tensor(batch)
        with no_grad():
            m = anomaly_map(self.teacher.forward(x), self.student.forward(x), *batch.shape[-2:])
        return m.data

    def __call__(self, image: np.ndarray) -> InferenceResult:
        start = time.perf_counter()
        x = self.prepare(image)
        with no_grad():
            m = anomaly_map(self.teacher.forward(x), self.student.forward(x), self.input_size, self.input_size)
        amap = AnomalyMap(m.data)
        score = image_score(amap)
        return InferenceResult(amap, score, time.perf_counter() - start)


def infer(checkpoint: str | Path | Detector, image: np.ndarray) -> tuple[AnomalyMap, float, float]:
    det = checkpoint if isinstance(checkpoint, Detector) else Detector.from_checkpoint(checkpoint)
    r = det(image)
    return r.map, r.score, r.seconds


def resize_map(m: np.ndarray, height: int, width: int) -> np.ndarray:
    """Optional bilinear resize of a map to another resolution (e.g. the original image)."""
    if m.shape == (height, width):
        return m
    with no_grad():
        return ops.bilinear_resize(Tensor(m), height, width).data


def save_anomaly_map(m: AnomalyMap | np.ndarray, path: str | Path) -> tuple[Path, Path]:
    """Write ``<path>.adam`` (raw f32 grid) and ``<path>.pgm`` (min-max preview)."""
    scores = np.asarray(m.scores if isinstance(m, AnomalyMap) else m)
    h, w = scores.shape
    base = Path(path)
    raw = base.with_suffix(".adam")
    raw.write_bytes(MAP_MAGIC + struct.pack("<III", h, w, 0) + np.ascontiguousarray(scores, dtype="<f4").tobytes())
    lo, hi = float(scores.min()), float(scores.max())
    preview = (scores - lo) / (hi - lo) if hi > lo else np.zeros_like(scores)
    pgm = base.with_suffix(".pgm")
    save_pgm(preview, pgm)
    return raw, pgm


def load_anomaly_map(path: str | Path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if blob[:4] != MAP_MAGIC or len(blob) < 16:
        raise wfile.WeightsFormatError(f"{path}: not an ADAM anomaly map")
    h, w, _ = struct.unpack("<III", blob[4:16])
    if len(blob) != 16 + 4 * h * w:
        raise wfile.WeightsFormatError(f"{path}: payload size mismatch (expected {4 * h * w} bytes)")
    return np.frombuffer(blob, dtype="<f4", offset=16).reshape(h, w).astype(np.float32)


__all__ = [
    "AnomalyMap", "Detector", "InferenceResult", "anomaly_map", "image_score", "infer", "level_loss_map",
    "load_anomaly_map", "resize_map", "save_anomaly_map",
]
