"""
Counter-based random streams.

Every random draw in the simulator comes from a Philox generator keyed by
``(seed, scene_id, stage)``, so a scene's numbers do not depend on which
other scenes ran before it or on how work was split across processes.
"""
from __future__ import annotations

import numpy as np

__all__ = ["Stage", "make_rng", "stream"]

RNG_ALGORITHM = "philox"


class Stage:
    SCENE = 0
    PSEUDO_LABELS = 1
    PROPOSALS = 2
    AUGMENT = 3
    TEACHER = 4
    STUDENT = 5
    SAMPLER = 6


def make_rng(seed: int, *key: int) -> np.random.Generator:
    """Philox generator for ``seed`` with an optional spawn key."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def stream(seed: int, scene_id: int, stage: int) -> np.random.Generator:
    return make_rng(seed, scene_id, stage)
