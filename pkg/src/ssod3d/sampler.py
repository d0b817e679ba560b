"""Proposal subsampling before the classification loss."""
from __future__ import annotations

import math

import numpy as np

from .assignment import Category
from .rng import make_rng

__all__ = ["topk_sample", "balanced_random_sample"]


def _u_of(assignments) -> np.ndarray:
    return np.asarray(getattr(assignments, "u", assignments), dtype=np.float64)


def topk_sample(assignments, k: int) -> np.ndarray:
    """Indices of the ``k`` largest-IoU proposals, sorted by descending IoU (ties: lower index)."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    u = _u_of(assignments)
    order = np.lexsort((np.arange(len(u)), -u))
    return order[:k]


def balanced_random_sample(
    assignments,
    k: int,
    fg_fraction: float = 0.5,
    easy_bg_fraction: float = 0.2,
    easy_bg_iou: float = 0.1,
    seed=0,
) -> np.ndarray:
    """Foreground-capped random sampling with a fixed share of easy backgrounds.

    At most ``floor(k * fg_fraction)`` FG proposals are drawn without
    replacement. The rest of the budget goes to non-FG proposals, of which
    ``easy_bg_fraction`` should have IoU below ``easy_bg_iou``; when one
    background pool runs short the other fills in. ``seed`` may be an int
    or a ``numpy.random.Generator``.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    for name, v in (("fg_fraction", fg_fraction), ("easy_bg_fraction", easy_bg_fraction)):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{name} must lie in [0, 1], got {v}")
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed)
    u = _u_of(assignments)
    category = np.asarray(assignments.category)
    fg = np.flatnonzero(category == Category.FG)
    bg = np.flatnonzero(category != Category.FG)
    easy = bg[u[bg] < easy_bg_iou]
    hard = bg[u[bg] >= easy_bg_iou]

    n_fg = min(len(fg), int(math.floor(k * fg_fraction + 1e-9)))
    n_bg = min(len(bg), k - n_fg)
    n_easy = int(round(n_bg * easy_bg_fraction))
    n_hard = n_bg - n_easy
    if n_hard > len(hard):
        n_easy += n_hard - len(hard)
        n_hard = len(hard)
    if n_easy > len(easy):
        n_hard += n_easy - len(easy)
        n_easy = len(easy)

    picked = [
        rng.choice(fg, n_fg, replace=False),
        rng.choice(hard, n_hard, replace=False),
        rng.choice(easy, n_easy, replace=False),
    ]
    return np.concatenate(picked).astype(np.int64)
