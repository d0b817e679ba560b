"""Detection records: a single-object dataclass and a struct-of-arrays batch."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Box3D, as_boxes

__all__ = ["Detection", "Detections"]


@dataclass(frozen=True)
class Detection:
    box: Box3D
    class_id: int
    score: float = 1.0

    def __post_init__(self):
        if not isinstance(self.box, Box3D):
            object.__setattr__(self, "box", Box3D.from_array(self.box))
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must lie in [0, 1], got {self.score}")
        object.__setattr__(self, "class_id", int(self.class_id))
        object.__setattr__(self, "score", float(self.score))


class Detections:
    """Batch of detections stored as ``boxes (N, 7)``, ``labels (N,)``, ``scores (N,)``.

    Integer indexing yields a :class:`Detection`; slices, masks and index
    arrays yield another ``Detections``.
    """

    __slots__ = ("boxes", "labels", "scores")

    def __init__(self, boxes=None, labels=None, scores=None):
        self.boxes = as_boxes(np.zeros((0, 7)) if boxes is None else boxes)
        n = len(self.boxes)
        self.labels = np.zeros(n, dtype=np.int64) if labels is None else np.asarray(labels, dtype=np.int64).reshape(n)
        self.scores = np.ones(n) if scores is None else np.asarray(scores, dtype=np.float64).reshape(n)

    @classmethod
    def from_list(cls, dets) -> "Detections":
        dets = list(dets)
        if not dets:
            return cls()
        return cls(
            np.stack([d.box.to_array() for d in dets]),
            [d.class_id for d in dets],
            [d.score for d in dets],
        )

    @classmethod
    def coerce(cls, dets) -> "Detections":
        if isinstance(dets, cls):
            return dets
        return cls.from_list(dets)

    @classmethod
    def concat(cls, parts) -> "Detections":
        parts = [cls.coerce(p) for p in parts]
        if not parts:
            return cls()
        return cls(
            np.concatenate([p.boxes for p in parts]),
            np.concatenate([p.labels for p in parts]),
            np.concatenate([p.scores for p in parts]),
        )

    def to_list(self) -> list:
        return [self[i] for i in range(len(self))]

    def __len__(self):
        return len(self.boxes)

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def __getitem__(self, idx):
        if isinstance(idx, (int, np.integer)):
            return Detection(Box3D.from_array(self.boxes[idx]), int(self.labels[idx]), float(self.scores[idx]))
        return Detections(self.boxes[idx], self.labels[idx], self.scores[idx])

    def __eq__(self, other):
        if not isinstance(other, Detections):
            return NotImplemented
        return (
            np.array_equal(self.boxes, other.boxes)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.scores, other.scores)
        )

    def __repr__(self):
        return f"Detections(n={len(self)})"
