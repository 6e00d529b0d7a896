"""Per-class evaluation of a trained detector on an MVTec-layout dataset."""

from __future__ import annotations

import logging

import numpy as np

from .data.layout import Dataset
from .inference import Detector, resize_map
from .metrics import ClassResult, EvalReport, auroc, latency_report, pro

log = logging.getLogger(__name__)


def evaluate(detector: Detector, dataset: Dataset, fpr_limit: float = 0.3) -> EvalReport:
    """Image AUROC (max-score), pixel AUROC, PRO and latency for every class."""
    rows = []
    times = {}
    for split in dataset.classes:
        if not split.test:
            log.warning("class %s has no test images; skipped", split.name)
            continue
        maps, masks, scores, labels, elapsed = [], [], [], [], []
        for ref in split.test:
            sample = ref.load()
            r = detector(sample.image)
            m = resize_map(r.map.scores, *sample.mask.shape)
            maps.append(m)
            masks.append(sample.mask)
            scores.append(r.score)
            labels.append(sample.label)
            elapsed.append(r.seconds)
        times[split.name] = elapsed
        pixel_scores = np.concatenate([m.ravel() for m in maps])
        pixel_labels = np.concatenate([g.ravel() for g in masks])
        rows.append(ClassResult(
            name=split.name,
            auroc_image=auroc(scores, labels),
            auroc_pixel=auroc(pixel_scores, pixel_labels),
            pro=pro(maps, masks, fpr_limit),
            latency=0.0,
            n_images=len(split.test),
        ))
    lat = latency_report(times)
    for row in rows:
        row.latency = lat.class_means[row.name]
    return EvalReport(rows)
