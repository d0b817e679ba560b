import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ssod3d.config import ClassConfig
from ssod3d.detections import Detection, Detections
from ssod3d.geometry import Box3D
from ssod3d.pseudo_labels import filter_pseudo_labels

CFG = ClassConfig()
BOX = Box3D(0, 0, 0, 3.9, 1.6, 1.56, 0)


def det(cls, score):
    return Detection(BOX, cls, score)


@pytest.mark.parametrize("cls,score,kept", [(0, 0.96, True), (0, 0.94, False), (1, 0.85, True), (2, 0.8499, False)])
def test_threshold_examples(cls, score, kept):
    assert filter_pseudo_labels([det(cls, score)], CFG) == ([det(cls, score)] if kept else [])


def test_order_preserved_and_type_follows_input():
    dets = [det(1, 0.9), det(0, 0.5), det(2, 0.99), det(0, 0.97)]
    out = filter_pseudo_labels(dets, CFG)
    assert out == [dets[0], dets[2], dets[3]]
    batch = filter_pseudo_labels(Detections.from_list(dets), CFG)
    assert isinstance(batch, Detections) and batch.to_list() == out


def test_unknown_class_names_the_detection():
    with pytest.raises(ValueError, match="detection 1 has unknown class_id 7"):
        filter_pseudo_labels([det(0, 0.99), det(7, 0.99)], CFG)


def test_empty_input():
    assert filter_pseudo_labels([], CFG) == []


detections = st.lists(st.tuples(st.integers(0, 2), st.floats(0, 1)), max_size=30)


@given(detections)
def test_subset_and_idempotent(pairs):
    dets = [det(c, s) for c, s in pairs]
    once = filter_pseudo_labels(dets, CFG)
    assert all(d in dets for d in once)
    assert filter_pseudo_labels(once, CFG) == once


@given(detections, st.integers(0, 2), st.floats(0, 1), st.floats(0, 1))
def test_raising_threshold_never_keeps_more(pairs, c, lo, hi):
    lo, hi = sorted((lo, hi))
    dets = [det(k, s) for k, s in pairs]
    thr_lo = list(CFG.pl_threshold)
    thr_hi = list(CFG.pl_threshold)
    thr_lo[c], thr_hi[c] = lo, hi
    n_lo = sum(d.class_id == c for d in filter_pseudo_labels(dets, ClassConfig(pl_threshold=thr_lo)))
    n_hi = sum(d.class_id == c for d in filter_pseudo_labels(dets, ClassConfig(pl_threshold=thr_hi)))
    assert n_hi <= n_lo
