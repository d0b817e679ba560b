"""
Reliability weights from teacher scores and the unlabeled-data losses.

Each proposal category (FG / UC / BG) gets one weighting rule applied to
the teacher's refined foreground score ``s_hat``:

* ``UNIT``      w = 1
* ``FG_SCORE``  w = s_hat
* ``BG_SCORE``  w = 1 - s_hat

The classification loss of a scene is the weight-normalised sum of soft
binary cross-entropies; the unsupervised loss averages (cls + reg) over
scenes, and the total is ``sup + lambda_u * unsup``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple, Sequence

import numpy as np

from .assignment import Category
from .geometry import as_boxes, wrap_angle

__all__ = [
    "WeightRule",
    "WeightingScheme",
    "SCHEMES",
    "SCHEME_ORDER",
    "get_scheme",
    "compute_weights",
    "bce",
    "WeightedLoss",
    "weighted_mean",
    "weighted_cls_loss",
    "smooth_l1",
    "encode_residuals",
    "reg_loss",
    "LossBreakdown",
    "scene_loss",
    "unsup_rcnn_loss",
    "total_loss",
    "combine_losses",
]

PROB_EPS = 1e-7
SMOOTH_L1_BETA = 1.0 / 9.0


class WeightRule(Enum):
    UNIT = "unit"
    FG_SCORE = "fg_score"
    BG_SCORE = "bg_score"

    def apply(self, s_hat: np.ndarray) -> np.ndarray:
        if self is WeightRule.UNIT:
            return np.ones_like(s_hat)
        if self is WeightRule.FG_SCORE:
            return s_hat.copy()
        return 1.0 - s_hat


@dataclass(frozen=True)
class WeightingScheme:
    fg_rule: WeightRule = WeightRule.UNIT
    uc_rule: WeightRule = WeightRule.UNIT
    bg_rule: WeightRule = WeightRule.UNIT
    name: str = field(default="custom", compare=False)

    def rule_for(self, category: Category) -> WeightRule:
        return {Category.FG: self.fg_rule, Category.UC: self.uc_rule, Category.BG: self.bg_rule}[
            Category(category)
        ]


_U, _F, _B = WeightRule.UNIT, WeightRule.FG_SCORE, WeightRule.BG_SCORE

SCHEME_ORDER = ("UNIT", "BG", "UC_FN+BG", "UC_FP+BG", "FG+UC_FN+BG", "FG+UC_FP+BG")
SCHEMES = {
    "UNIT": WeightingScheme(_U, _U, _U, "UNIT"),
    "BG": WeightingScheme(_U, _U, _B, "BG"),
    "UC_FN+BG": WeightingScheme(_U, _B, _B, "UC_FN+BG"),
    "UC_FP+BG": WeightingScheme(_U, _F, _B, "UC_FP+BG"),
    "FG+UC_FN+BG": WeightingScheme(_F, _B, _B, "FG+UC_FN+BG"),
    "FG+UC_FP+BG": WeightingScheme(_F, _F, _B, "FG+UC_FP+BG"),
}


def get_scheme(scheme) -> WeightingScheme:
    if isinstance(scheme, WeightingScheme):
        return scheme
    try:
        return SCHEMES[scheme]
    except KeyError:
        raise ValueError(f"unknown weighting scheme {scheme!r}; choose from {list(SCHEME_ORDER)}") from None


def compute_weights(assignments, teacher_scores, scheme) -> np.ndarray:
    """Per-proposal reliability weights.

    ``assignments`` is an ``Assignments`` batch or an array of categories.
    """
    scheme = get_scheme(scheme)
    category = np.asarray(getattr(assignments, "category", assignments))
    s_hat = np.clip(np.asarray(teacher_scores, dtype=np.float64), 0.0, 1.0)
    if category.shape != s_hat.shape:
        raise ValueError(f"length mismatch: {category.shape[0]} assignments vs {s_hat.shape[0]} teacher scores")
    w = np.empty_like(s_hat)
    for cat in Category:
        sel = category == cat
        w[sel] = scheme.rule_for(cat).apply(s_hat[sel])
    return w


def bce(scores, targets, eps: float = PROB_EPS) -> np.ndarray:
    """Binary cross-entropy with soft targets; probabilities clamped to ``[eps, 1 - eps]``."""
    s = np.clip(np.asarray(scores, dtype=np.float64), eps, 1.0 - eps)
    t = np.asarray(targets, dtype=np.float64)
    return -(t * np.log(s) + (1.0 - t) * np.log1p(-s))


class WeightedLoss(NamedTuple):
    value: float
    all_suppressed: bool


def weighted_mean(terms, weights) -> WeightedLoss:
    """``sum(w * l) / sum(w)``; an all-zero weight vector yields ``(0.0, True)``."""
    terms = np.asarray(terms, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if terms.shape != weights.shape:
        raise ValueError(f"length mismatch: {terms.shape} vs {weights.shape}")
    total_w = math.fsum(weights)
    if total_w <= 0.0:
        return WeightedLoss(0.0, True)
    return WeightedLoss(math.fsum(weights * terms) / total_w, False)


def weighted_cls_loss(student_scores, targets, weights) -> WeightedLoss:
    """Reliability-weighted soft-BCE over one scene's sampled proposals."""
    return weighted_mean(bce(student_scores, targets), weights)


def smooth_l1(x, beta: float = SMOOTH_L1_BETA) -> np.ndarray:
    x = np.abs(np.asarray(x, dtype=np.float64))
    if beta <= 0:
        return x
    return np.where(x < beta, 0.5 * x * x / beta, x - 0.5 * beta)


def encode_residuals(boxes, targets) -> np.ndarray:
    """7-dim residual of ``boxes`` relative to ``targets``.

    Centre offsets are divided by the target's footprint diagonal, sizes
    become log ratios, and the yaw difference is folded into [-pi/2, pi/2)
    so that a box and its 180-degree twin regress to the same target.
    """
    b = as_boxes(boxes)
    g = as_boxes(targets)
    diag = np.sqrt(g[:, 3] ** 2 + g[:, 4] ** 2)
    out = np.empty_like(b)
    out[:, 0:3] = (b[:, 0:3] - g[:, 0:3]) / diag[:, None]
    out[:, 3:6] = np.log(b[:, 3:6] / g[:, 3:6])
    dyaw = np.mod(b[:, 6] - g[:, 6] + math.pi / 2, math.pi) - math.pi / 2
    out[:, 6] = np.where(dyaw >= math.pi / 2, dyaw - math.pi, dyaw)
    return out


def reg_loss(student_boxes, target_boxes, fg_mask, beta: float = SMOOTH_L1_BETA) -> float:
    """Mean over FG proposals of the summed smooth-L1 residual; 0 without FG."""
    mask = np.asarray(fg_mask, dtype=bool)
    if not mask.any():
        return 0.0
    r = encode_residuals(as_boxes(student_boxes)[mask], as_boxes(target_boxes)[mask])
    return float(smooth_l1(r, beta).sum(axis=1).mean())


@dataclass
class LossBreakdown:
    cls_loss: float
    reg_loss: float
    unsup_loss: float
    sup_loss: float
    total: float
    weights: np.ndarray = field(default_factory=lambda: np.zeros(0))
    cls_terms: np.ndarray = field(default_factory=lambda: np.zeros(0))
    all_suppressed: bool = False
    lambda_u: float = 1.0


def scene_loss(student_scores, targets, weights, student_boxes, target_boxes, fg_mask) -> LossBreakdown:
    """Losses of one unlabeled scene; ``unsup_loss = cls + reg``, supervised part left at 0."""
    terms = bce(student_scores, targets)
    cls = weighted_mean(terms, weights)
    reg = reg_loss(student_boxes, target_boxes, fg_mask)
    unsup = cls.value + reg
    return LossBreakdown(
        cls_loss=cls.value,
        reg_loss=reg,
        unsup_loss=unsup,
        sup_loss=0.0,
        total=unsup,
        weights=np.asarray(weights, dtype=np.float64),
        cls_terms=terms,
        all_suppressed=cls.all_suppressed,
    )


def unsup_rcnn_loss(per_scene: Sequence) -> float:
    """Mean of per-scene ``cls + reg`` (floats or ``LossBreakdown``); 0 for no scenes."""
    vals = [getattr(s, "unsup_loss", s) for s in per_scene]
    if not vals:
        return 0.0
    return math.fsum(vals) / len(vals)


def total_loss(sup: float, unsup: float, lambda_u: float = 1.0) -> float:
    if lambda_u < 0:
        raise ValueError(f"lambda_u must be >= 0, got {lambda_u}")
    return sup + lambda_u * unsup


def combine_losses(unlabeled: Sequence[LossBreakdown], labeled: Sequence[LossBreakdown] = (), lambda_u: float = 1.0) -> LossBreakdown:
    """Aggregate per-scene breakdowns into one, in the order given."""
    unlabeled = list(unlabeled)
    labeled = list(labeled)
    n = max(len(unlabeled), 1)
    unsup = unsup_rcnn_loss(unlabeled)
    sup = unsup_rcnn_loss(labeled)
    return LossBreakdown(
        cls_loss=math.fsum(s.cls_loss for s in unlabeled) / n,
        reg_loss=math.fsum(s.reg_loss for s in unlabeled) / n,
        unsup_loss=unsup,
        sup_loss=sup,
        total=total_loss(sup, unsup, lambda_u),
        weights=np.concatenate([s.weights for s in unlabeled]) if unlabeled else np.zeros(0),
        cls_terms=np.concatenate([s.cls_terms for s in unlabeled]) if unlabeled else np.zeros(0),
        all_suppressed=any(s.all_suppressed for s in unlabeled),
        lambda_u=lambda_u,
    )
