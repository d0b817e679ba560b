import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ssod3d.assignment import Category, assign_targets, match_max_iou, soft_targets
from ssod3d.config import ClassConfig, ConfigError
from ssod3d.detections import Detections
from ssod3d.geometry import iou_matrix

CFG = ClassConfig()  # fg 0.65/0.45/0.40, bg 0.25


def one_match(u, cls, cfg=CFG):
    pls = Detections(np.zeros((3, 7)) + [0, 0, 0, 1, 1, 1, 0], [0, 1, 2], [1, 1, 1])
    return assign_targets((np.array([u]), np.array([cls])), pls, cfg)[0]


@pytest.mark.parametrize("u,cls,cat,t", [
    (0.70, 0, Category.FG, 1.0),
    (0.45, 0, Category.UC, 0.5),
    (0.46, 1, Category.FG, 1.0),
    (0.10, 2, Category.BG, 0.0),
])
def test_worked_examples(u, cls, cat, t):
    a = one_match(u, cls)
    assert a.category == cat
    assert a.t == t


def test_pedestrian_under_class_agnostic_threshold_is_uncertain():
    assert one_match(0.46, 1, CFG.with_fg(0.75)).category == Category.UC


def test_boundaries_fall_in_uncertain_band():
    for c, fg in enumerate(CFG.fg_threshold):
        lo, hi = one_match(CFG.bg_threshold, c), one_match(fg, c)
        assert lo.category == hi.category == Category.UC
        assert abs(lo.t - 0.0) <= 1e-12 and abs(hi.t - 1.0) <= 1e-12


def test_unmatched_is_background():
    a = assign_targets([(0.0, None)], Detections(), CFG)[0]
    assert a.category == Category.BG and a.t == 0.0
    assert a.matched_pl_index is None and a.assigned_class is None


def test_regression_target_only_for_foreground():
    pls = Detections([[1, 2, 3, 4, 5, 6, 0.1]], [0], [1])
    asg = assign_targets(np.array([[0.9, 0.5, 0.1], [0, 0, 0]]).T.tolist(), pls, CFG)
    assert asg.target_boxes[0].tolist() == [1, 2, 3, 4, 5, 6, 0.1]
    assert np.isnan(asg.target_boxes[1:]).all()


def test_invalid_threshold_order_rejected():
    bad = ClassConfig.__new__(ClassConfig)
    object.__setattr__(bad, "fg_threshold", (0.65, 0.2, 0.4))
    object.__setattr__(bad, "bg_threshold", 0.25)
    with pytest.raises(ConfigError):
        assign_targets([(0.5, 0)], Detections([[0, 0, 0, 1, 1, 1, 0]], [0], [1]), bad)
    with pytest.raises(ConfigError):
        ClassConfig(fg_threshold=(0.65, 0.2, 0.4))


def test_match_empty_pls():
    m = match_max_iou(np.array([[0, 0, 0, 1, 1, 1, 0]] * 2), Detections())
    assert m.u.tolist() == [0, 0] and m.matched.tolist() == [-1, -1]


def test_match_identity_among_disjoint():
    pls = Detections([[10 * i, 0, 0, 1, 1, 1, 0] for i in range(3)], [0, 0, 0], [1, 1, 1])
    m = match_max_iou(pls.boxes[1:2], pls)
    assert m.u.tolist() == [1.0] and m.matched.tolist() == [1]


def test_match_ties_go_to_lower_index():
    box = [0, 0, 0, 1, 1, 1, 0]
    m = match_max_iou(np.array([box]), Detections([box, box], [1, 0], [1, 1]))
    assert m.matched.tolist() == [0]


def test_match_equals_bruteforce_row_max(rng):
    props = np.column_stack([rng.uniform(0, 3, (5, 3)), rng.uniform(1, 3, (5, 3)), rng.uniform(-3, 3, 5)])
    pls = np.column_stack([rng.uniform(0, 3, (3, 3)), rng.uniform(1, 3, (3, 3)), rng.uniform(-3, 3, 3)])
    m = match_max_iou(props, Detections(pls, [0, 1, 2], [1, 1, 1]))
    full = iou_matrix(props, pls)
    assert m.u.tolist() == full.max(axis=1).tolist()


def test_monotone_over_random_draws(rng):
    u = rng.uniform(0, 1, 10_000)
    cls = rng.integers(0, 3, 10_000)
    fg = np.asarray(CFG.fg_threshold)[cls]
    t, _ = soft_targets(u, fg, CFG.bg_threshold)
    for c in range(3):
        sel = cls == c
        order = np.argsort(u[sel], kind="stable")
        assert (np.diff(t[sel][order]) >= 0).all()
    assert ((t >= 0) & (t <= 1)).all()


@given(st.floats(0, 1), st.integers(0, 2))
def test_invariants(u, c):
    a = one_match(u, c)
    assert 0.0 <= a.t <= 1.0
    if a.category == Category.FG:
        assert a.t == 1.0
    if a.category == Category.BG:
        assert a.t == 0.0
    if u == 0.0:
        assert a.category == Category.BG


@given(st.lists(st.tuples(st.floats(0, 1), st.integers(0, 2)), max_size=40), st.floats(0.26, 0.99), st.floats(0.26, 0.99))
def test_lowering_fg_threshold_never_shrinks_foreground(rows, f1, f2):
    lo, hi = sorted((f1, f2))
    pls = Detections(np.zeros((3, 7)) + [0, 0, 0, 1, 1, 1, 0], [0, 1, 2], [1, 1, 1])
    m = [(r[0], r[1]) for r in rows]
    n_hi = np.count_nonzero(assign_targets(m, pls, CFG.with_fg(hi)).fg_mask)
    n_lo = np.count_nonzero(assign_targets(m, pls, CFG.with_fg(lo)).fg_mask)
    assert n_lo >= n_hi


def test_perfect_pseudo_labels_match_evaluation_labels(rng):
    # with pseudo-labels equal to ground truth and fg == eval threshold, FG <=> true object
    cfg = CFG.with_fg(CFG.eval_threshold)
    gts = np.column_stack([rng.uniform(0, 50, (6, 2)), np.ones(6), rng.uniform(1, 4, (6, 3)), rng.uniform(-3, 3, 6)])
    props = np.repeat(gts, 20, axis=0)
    props[:, :2] += rng.normal(0, 0.5, (len(props), 2))
    pls = Detections(gts, rng.integers(0, 3, 6), np.ones(6))
    m = match_max_iou(props, pls)
    asg = assign_targets(m, pls, cfg)
    v = iou_matrix(props, gts).max(axis=1)
    delta = np.asarray(cfg.eval_threshold)[np.maximum(asg.assigned_class, 0)]
    truly = (v > delta) & (asg.matched >= 0)
    assert np.array_equal(asg.fg_mask, truly)
