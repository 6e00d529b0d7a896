"""Attention-refined knowledge distillation for multi-class anomaly detection.

A frozen teacher network and a trainable student share one pyramid backbone.
During training the student features pass through channel/spatial attention
gates before being matched against the teacher with cosine, KL or MSE
objectives. At test time the per-pixel cosine distance between the raw
student and teacher features, summed over pyramid levels, is the anomaly map.
"""

from .backbone import BackboneConfig, FeaturePyramid, PyramidNet, build_backbone
from .config import TrainConfig
from .dcam import AttentionMode, build_dcam, channel_attention, refine, spatial_attention
from .errors import ConfigError, TrainingDiverged, UndefinedMetricError
from .inference import AnomalyMap, Detector, anomaly_map, infer
from .losses import HEADLINE, MSE_BASELINE, LossSpec, LossTerm, total_loss
from .metrics import auroc, connected_components, pro

__version__ = "0.1.0"

__all__ = [
    "AnomalyMap",
    "AttentionMode",
    "BackboneConfig",
    "ConfigError",
    "Detector",
    "FeaturePyramid",
    "HEADLINE",
    "LossSpec",
    "LossTerm",
    "MSE_BASELINE",
    "PyramidNet",
    "TrainConfig",
    "TrainingDiverged",
    "UndefinedMetricError",
    "anomaly_map",
    "auroc",
    "build_backbone",
    "build_dcam",
    "channel_attention",
    "connected_components",
    "infer",
    "pro",
    "refine",
    "spatial_attention",
    "total_loss",
]
