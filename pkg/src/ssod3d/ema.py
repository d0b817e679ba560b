"""Exponential moving average of student parameters into the teacher."""
from __future__ import annotations

import numpy as np

__all__ = ["ema_update", "EMATeacher"]

DEFAULT_MOMENTUM = 0.999


def ema_update(teacher, student, momentum: float = DEFAULT_MOMENTUM) -> np.ndarray:
    """Return ``momentum * teacher + (1 - momentum) * student`` elementwise."""
    t = np.asarray(teacher, dtype=np.float64)
    s = np.asarray(student, dtype=np.float64)
    if t.shape != s.shape:
        raise ValueError(f"parameter length mismatch: teacher {t.shape} vs student {s.shape}")
    if not 0.0 <= momentum <= 1.0:
        raise ValueError(f"momentum must lie in [0, 1], got {momentum}")
    if not (np.isfinite(t).all() and np.isfinite(s).all()):
        raise ValueError("parameters must be finite")
    if momentum == 1.0:
        return t.copy()
    if momentum == 0.0:
        return s.copy()
    # student + m * (teacher - student) is exact when teacher == student;
    # the clip keeps rounding inside the segment
    out = s + momentum * (t - s)
    return np.clip(out, np.minimum(t, s), np.maximum(t, s))


class EMATeacher:
    """Holds a flat teacher parameter vector and folds student snapshots into it."""

    def __init__(self, params, momentum: float = DEFAULT_MOMENTUM):
        self.params = np.array(params, dtype=np.float64)
        self.momentum = momentum
        self.steps = 0

    def update(self, student_params) -> np.ndarray:
        self.params = ema_update(self.params, student_params, self.momentum)
        self.steps += 1
        return self.params
