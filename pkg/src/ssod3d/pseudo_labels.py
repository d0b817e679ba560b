"""Confidence filtering of teacher detections into pseudo-labels."""
from __future__ import annotations

import numpy as np

from .config import ClassConfig
from .detections import Detection, Detections

__all__ = ["Detection", "Detections", "filter_pseudo_labels", "pseudo_label_mask"]


def pseudo_label_mask(dets: Detections, cfg: ClassConfig) -> np.ndarray:
    """Boolean keep-mask: ``score >= pl_threshold[class]`` (inclusive)."""
    dets = Detections.coerce(dets)
    bad = np.flatnonzero((dets.labels < 0) | (dets.labels >= cfg.num_classes))
    if bad.size:
        i = int(bad[0])
        raise ValueError(f"detection {i} has unknown class_id {int(dets.labels[i])}")
    thr = np.asarray(cfg.pl_threshold)[dets.labels]
    return dets.scores >= thr


def filter_pseudo_labels(dets, cfg: ClassConfig):
    """Keep detections whose score reaches their class's pseudo-label threshold.

    Order is preserved. A ``Detections`` input gives a ``Detections``
    output; a list of :class:`Detection` gives a list.
    """
    if isinstance(dets, Detections):
        return dets[pseudo_label_mask(dets, cfg)]
    dets = list(dets)
    mask = pseudo_label_mask(Detections.from_list(dets), cfg)
    return [d for d, keep in zip(dets, mask) if keep]
