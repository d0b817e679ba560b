"""
Max-IoU matching of proposals to pseudo-labels and class-aware soft targets.

A proposal's IoU ``u`` with its best pseudo-label is compared against the
foreground threshold of that pseudo-label's class and a shared background
threshold::

    u >  fg[c]          -> FG, t = 1
    bg <= u <= fg[c]    -> UC, t = (u - bg) / (fg[c] - bg)
    u <  bg             -> BG, t = 0

Unmatched proposals (no overlapping pseudo-label) are BG.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import NamedTuple, Optional

import numpy as np

from .config import ClassConfig, ConfigError
from .detections import Detections
from .geometry import as_boxes, iou_matrix

__all__ = [
    "Category",
    "MatchResult",
    "Assignment",
    "Assignments",
    "match_max_iou",
    "soft_targets",
    "assign_targets",
]


class Category(IntEnum):
    BG = 0
    UC = 1
    FG = 2


class MatchResult(NamedTuple):
    u: np.ndarray
    matched: np.ndarray  # -1 where no pseudo-label overlaps


def match_max_iou(proposals, pls, mode: str = "3d") -> MatchResult:
    """Best pseudo-label IoU per proposal; argmax ties go to the lower index."""
    boxes = as_boxes(proposals)
    pls = Detections.coerce(pls)
    n = len(boxes)
    if n == 0 or len(pls) == 0:
        return MatchResult(np.zeros(n), np.full(n, -1, dtype=np.int64))
    iou = iou_matrix(boxes, pls.boxes, mode=mode)
    matched = iou.argmax(axis=1)
    u = iou[np.arange(n), matched]
    matched = np.where(u > 0.0, matched, -1).astype(np.int64)
    return MatchResult(u, matched)


def soft_targets(u, fg, bg: float):
    """Vectorised target rule. ``fg`` broadcasts against ``u``; returns ``(t, category)``."""
    u = np.asarray(u, dtype=np.float64)
    fg = np.broadcast_to(np.asarray(fg, dtype=np.float64), u.shape)
    category = np.where(u > fg, Category.FG, np.where(u >= bg, Category.UC, Category.BG)).astype(np.int8)
    with np.errstate(divide="ignore", invalid="ignore"):
        ramp = (u - bg) / (fg - bg)
    t = np.where(category == Category.FG, 1.0, np.where(category == Category.UC, ramp, 0.0))
    return t, category


@dataclass(frozen=True)
class Assignment:
    proposal_index: int
    u: float
    matched_pl_index: Optional[int]
    assigned_class: Optional[int]
    category: Category
    t: float


@dataclass
class Assignments:
    """Per-proposal assignment records as parallel arrays.

    ``target_boxes`` holds the matched pseudo-label box for FG proposals and
    NaN rows elsewhere; only FG proposals carry a regression target.
    """

    u: np.ndarray
    matched: np.ndarray
    assigned_class: np.ndarray
    category: np.ndarray
    t: np.ndarray
    target_boxes: np.ndarray

    def __len__(self):
        return len(self.u)

    def __getitem__(self, i: int) -> Assignment:
        m = int(self.matched[i])
        return Assignment(
            proposal_index=int(i),
            u=float(self.u[i]),
            matched_pl_index=None if m < 0 else m,
            assigned_class=None if m < 0 else int(self.assigned_class[i]),
            category=Category(int(self.category[i])),
            t=float(self.t[i]),
        )

    def subset(self, idx) -> "Assignments":
        idx = np.asarray(idx, dtype=np.int64)
        return Assignments(
            self.u[idx], self.matched[idx], self.assigned_class[idx],
            self.category[idx], self.t[idx], self.target_boxes[idx],
        )

    @property
    def fg_mask(self) -> np.ndarray:
        return self.category == Category.FG


def _coerce_matches(matches) -> MatchResult:
    if isinstance(matches, MatchResult):
        return matches
    if isinstance(matches, tuple) and len(matches) == 2 and isinstance(matches[0], np.ndarray):
        return MatchResult(np.asarray(matches[0], float), np.asarray(matches[1], np.int64))
    pairs = list(matches)
    u = np.array([p[0] for p in pairs], dtype=np.float64)
    m = np.array([-1 if p[1] is None else p[1] for p in pairs], dtype=np.int64)
    return MatchResult(u, m)


def assign_targets(matches, pls, cfg: ClassConfig) -> Assignments:
    """Build FG/UC/BG categories and soft targets from max-IoU matches."""
    for c, fg in enumerate(cfg.fg_threshold):
        if not cfg.bg_threshold < fg:
            raise ConfigError(
                f"background threshold {cfg.bg_threshold} must be below foreground threshold {fg}",
                f"fg_threshold[{c}]",
            )
    u, matched = _coerce_matches(matches)
    pls = Detections.coerce(pls)
    n = len(u)
    has = matched >= 0
    cls = np.full(n, -1, dtype=np.int64)
    cls[has] = pls.labels[matched[has]]
    fg = np.ones(n)
    fg[has] = np.asarray(cfg.fg_threshold)[cls[has]]
    t, category = soft_targets(u, fg, cfg.bg_threshold)
    t[~has] = 0.0
    category[~has] = Category.BG
    targets = np.full((n, 7), np.nan)
    fg_rows = category == Category.FG
    targets[fg_rows] = pls.boxes[matched[fg_rows]]
    return Assignments(u.copy(), matched.copy(), cls, category, t, targets)
