import math
from dataclasses import replace

import numpy as np
import pytest

from oracles import expected_jitter_iou, rectangles_overlap
from ssod3d.config import ClassConfig, ExperimentConfig, NoiseModel, SceneConfig, load_config
from ssod3d.detections import Detections
from ssod3d.geometry import iou_3d, iou_matrix, iou_pairs, wrap_angle
from ssod3d.simulator import (
    Augmentation,
    Scene,
    SimulationError,
    apply_augmentation,
    corrupt_to_pseudo_labels,
    generate_proposals,
    generate_scene,
    invert_augmentation,
    prepare_scene,
    random_augmentation,
    run_episode,
    teacher_refine_and_score,
)

CFG = ClassConfig()
ZERO = NoiseModel()


def test_empty_scene():
    assert len(generate_scene(CFG, (0, 0, 0), seed=1).ground_truths) == 0


def test_scene_determinism():
    a = generate_scene(CFG, (3, 2, 1), seed=9, scene_id=4)
    b = generate_scene(CFG, (3, 2, 1), seed=9, scene_id=4)
    assert a.ground_truths == b.ground_truths
    c = generate_scene(CFG, (3, 2, 1), seed=9, scene_id=5)
    assert not np.array_equal(a.ground_truths.boxes, c.ground_truths.boxes)


def test_scene_objects_do_not_overlap():
    scene = generate_scene(CFG, (5, 3, 2), seed=3)
    boxes = scene.ground_truths.boxes
    assert len(boxes) == 10
    assert scene.ground_truths.labels.tolist() == [0] * 5 + [1] * 3 + [2] * 2
    for i in range(10):
        for j in range(i + 1, 10):
            assert not rectangles_overlap(boxes[i], boxes[j])
    assert (boxes[:, 0] >= 0).all() and (boxes[:, 0] <= 70).all()
    assert (boxes[:, 1] >= -40).all() and (boxes[:, 1] <= 40).all()
    assert np.allclose(boxes[:, 2], boxes[:, 5] / 2)


def test_scene_placement_failure():
    huge = ClassConfig(size_prior=((60, 60, 2), (0.8, 0.6, 1.73), (1.76, 0.6, 1.73)))
    with pytest.raises(SimulationError, match="could not place"):
        generate_scene(huge, (4, 0, 0), seed=0, max_tries=20)


def test_negative_counts_rejected():
    with pytest.raises(ValueError):
        generate_scene(CFG, (-1, 0, 0), seed=0)


# --- pseudo-labels --------------------------------------------------------------


def test_zero_noise_pseudo_labels_equal_ground_truth():
    scene = generate_scene(CFG, (4, 2, 1), seed=2)
    pls = corrupt_to_pseudo_labels(scene, ZERO, seed=2)
    assert np.array_equal(pls.boxes, scene.ground_truths.boxes)
    assert pls.scores.tolist() == [1.0] * 7


def test_all_missed_leaves_only_spurious():
    scene = generate_scene(CFG, (4, 2, 1), seed=2)
    pls = corrupt_to_pseudo_labels(scene, NoiseModel(miss_prob=1.0, fp_rate=3.0), seed=5)
    gts = scene.ground_truths.boxes
    assert all(not any(np.array_equal(p, g) for g in gts) for p in pls.boxes)
    pls0 = corrupt_to_pseudo_labels(scene, NoiseModel(miss_prob=1.0), seed=5)
    assert len(pls0) == 0


def test_centre_jitter_matches_resampling_oracle():
    noise = NoiseModel(center_xy=0.3)
    ious = []
    for seed in range(1000):
        scene = generate_scene(CFG, (1, 0, 0), seed=seed)
        pls = corrupt_to_pseudo_labels(scene, noise, seed=seed)
        ious.append(iou_3d(pls.boxes[0], scene.ground_truths.boxes[0]))
    # the oracle works in the box frame; isotropic jitter makes yaw irrelevant
    sizes = np.array([generate_scene(CFG, (1, 0, 0), seed=s).ground_truths.boxes[0, 3:6] for s in range(1000)])
    oracle = np.mean([expected_jitter_iou(*sz, 0.3, 200, k) for k, sz in enumerate(sizes)])
    assert abs(np.mean(ious) - oracle) < 0.01


# --- proposals --------------------------------------------------------------------


def test_zero_ladder_gives_ground_truth_copies():
    scene = generate_scene(CFG, (2, 1, 0), seed=4)
    props = generate_proposals(scene, 3, 0, [0.0], seed=4)
    assert np.array_equal(props.boxes, np.repeat(scene.ground_truths.boxes, 3, axis=0))
    assert (props.scores == 1.0).all()


def test_background_only_has_zero_u():
    scene = generate_scene(CFG, (3, 1, 1), seed=6)
    props, src = generate_proposals(scene, 0, 50, [], seed=6, return_source=True)
    assert len(props) == 50 and (src == -1).all()


def test_ladder_mean_iou_nonincreasing():
    scene = generate_scene(CFG, (1, 0, 0), seed=11)
    ladder = [0.02, 0.06, 0.15, 0.35]
    props = generate_proposals(scene, 5, 0, ladder, seed=11)
    assert len(props) == 20
    iou = iou_pairs(props.boxes, np.repeat(scene.ground_truths.boxes, 20, axis=0)).reshape(4, 5)
    means = iou.mean(axis=1)
    assert (np.diff(means) <= 0).all()


# --- teacher ---------------------------------------------------------------------------


def test_perfect_teacher():
    scene = generate_scene(CFG, (1, 0, 0), seed=8)
    gt = scene.ground_truths.boxes[0]
    prop = gt + [0.3, -0.2, 0.05, 0.1, 0.0, 0.0, 0.1]
    boxes, s = teacher_refine_and_score(prop[None], scene, NoiseModel(teacher_pull=1.0), seed=0)
    assert np.array_equal(boxes[0], gt) and s[0] == 1.0


def test_teacher_far_background_scores_zero():
    scene = generate_scene(CFG, (1, 0, 0), seed=8)
    far = np.array([[500, 500, 1, 2, 2, 2, 0]])
    boxes, s = teacher_refine_and_score(far, scene, NoiseModel(teacher_pull=1.0), seed=0)
    assert np.array_equal(boxes, far) and s[0] == 0.0


def test_teacher_half_pull_is_parameterwise_midpoint():
    gt = np.array([10.0, 0.0, 0.8, 4.0, 1.6, 1.6, 3.0])
    prop = np.array([10.6, 0.4, 0.9, 4.4, 1.8, 1.4, -3.0])  # yaws 0.28 rad apart across the +-pi seam
    scene = Scene(Detections(gt[None], [0], [1.0]))
    boxes, _ = teacher_refine_and_score(prop[None], scene, NoiseModel(teacher_pull=0.5), seed=0)
    expected = (gt + prop) / 2
    expected[6] = wrap_angle(3.0 + (2 * math.pi - 6.0) / 2)
    assert boxes[0] == pytest.approx(expected, abs=1e-12)


def test_teacher_score_monotone_without_noise():
    scene = generate_scene(CFG, (2, 1, 1), seed=12)
    props = generate_proposals(scene, 10, 20, [0.05, 0.2, 0.5], seed=12)
    boxes, s = teacher_refine_and_score(props, scene, NoiseModel(teacher_pull=0.3), seed=1)
    v_hat = iou_matrix(boxes, scene.ground_truths.boxes).max(axis=1)
    order = np.argsort(v_hat)
    assert (np.diff(s[order]) >= 0).all()


# --- augmentation ----------------------------------------------------------------------------


def test_identity_augmentation():
    b = np.array([[1.0, 2.0, 0.5, 4.0, 2.0, 1.5, 0.3]])
    assert np.array_equal(apply_augmentation(b, Augmentation()), b)


def test_quarter_turn():
    b = np.array([[1.0, 0.0, 0.0, 2.0, 1.0, 1.0, 0.2]])
    out = apply_augmentation(b, Augmentation(rotation=math.pi / 2))
    assert out[0, :2] == pytest.approx([0.0, 1.0], abs=1e-15)
    assert out[0, 6] == pytest.approx(0.2 + math.pi / 2)


def test_flip_negates_y_and_yaw():
    b = np.array([[1.0, 2.0, 0.0, 2.0, 1.0, 1.0, 0.7]])
    out = apply_augmentation(b, Augmentation(flip=True))
    assert out[0, 1] == -2.0 and out[0, 6] == -0.7


def test_invert_round_trip(rng):
    for k in range(200):
        aug = random_augmentation(np.random.default_rng(k))
        b = np.column_stack([rng.uniform(-50, 50, (30, 3)), rng.uniform(0.3, 5, (30, 3)), rng.uniform(-math.pi, math.pi, 30)])
        back = invert_augmentation(apply_augmentation(b, aug), aug)
        assert np.abs(back[:, :6] - b[:, :6]).max() <= 1e-9
        assert np.abs(wrap_angle(back[:, 6] - b[:, 6])).max() <= 1e-9


def test_augmentation_preserves_iou(rng):
    aug = Augmentation(rotation=0.7, flip=True, scale=1.0)
    a = np.array([[0, 0, 0, 4, 2, 1.5, 0.3]])
    b = np.array([[0.5, 0.4, 0.1, 4, 2, 1.5, 0.6]])
    assert iou_3d(apply_augmentation(a, aug), apply_augmentation(b, aug)) == pytest.approx(iou_3d(a, b), abs=1e-9)


def test_scale_must_be_positive():
    with pytest.raises(ValueError):
        Augmentation(scale=0.0)


# --- episodes -------------------------------------------------------------------------------


def small(cfg, n=5):
    return replace(cfg, scenes=replace(cfg.scenes, count=n))


def test_zero_noise_episode_u_equals_v():
    cfg = load_config("configs/zero_noise.json")
    for sid in range(5):
        draw = prepare_scene(cfg, 0, sid)
        assert np.array_equal(draw.u, draw.v)


def test_episode_determinism_and_unit_weights():
    cfg = ExperimentConfig(scheme="UNIT")
    a = run_episode(cfg, seed=3, scene_id=2)
    b = run_episode(cfg, seed=3, scene_id=2)
    for f in a.records._fields:
        assert np.array_equal(getattr(a.records, f), getattr(b.records, f))
    assert a.records.w.sum() == len(a.sampled)


def test_labeled_scene_uses_ground_truth_and_balanced_sampler():
    cfg = ExperimentConfig()
    draw = prepare_scene(cfg, 0, 0, labeled=True)
    assert draw.pseudo_labels == draw.scene.ground_truths
    ep = run_episode(cfg, 0, 0, labeled=True)
    assert (ep.records.w == 1.0).all()
