"""
Deterministic synthetic stand-in for a two-stage detector.

A scene is a set of non-overlapping ground-truth boxes. From it we derive
noisy teacher detections (pseudo-labels), a ladder of student proposals
around each object plus uniformly scattered background proposals, and
teacher/student refinements whose scores are noisy IoUs with the truth.
:func:`prepare_scene` draws everything random once; :func:`score_scene`
then runs the deterministic target-assignment pipeline on the draw, so
ablations reuse identical draws.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .analysis import Records, subregions
from .assignment import Assignments, Category, assign_targets, match_max_iou
from .config import ClassConfig, ExperimentConfig, NoiseModel, SamplerConfig
from .detections import Detections
from .geometry import as_boxes, iou_matrix, iou_pairs, nms_rotated, wrap_angle
from .pseudo_labels import filter_pseudo_labels
from .reliability import LossBreakdown, compute_weights, get_scheme, scene_loss
from .rng import Stage, stream
from .sampler import balanced_random_sample, topk_sample

__all__ = [
    "SimulationError",
    "Scene",
    "Augmentation",
    "SceneDraw",
    "Episode",
    "X_RANGE",
    "Y_RANGE",
    "generate_scene",
    "corrupt_to_pseudo_labels",
    "generate_proposals",
    "refine_and_score",
    "teacher_refine_and_score",
    "apply_augmentation",
    "invert_augmentation",
    "random_augmentation",
    "prepare_scene",
    "score_scene",
    "run_episode",
]

X_RANGE = (0.0, 70.0)
Y_RANGE = (-40.0, 40.0)
SIZE_JITTER = 0.05
MAX_PLACEMENT_TRIES = 1000
EVAL_NMS_THRESHOLD = 0.1
EVAL_SCORE_THRESHOLD = 0.1


class SimulationError(RuntimeError):
    pass


@dataclass
class Scene:
    ground_truths: Detections
    scene_id: int = 0


def _rng(seed, scene_id: int, stage: int) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return stream(seed, scene_id, stage)


def _random_boxes(rng, labels, cfg: ClassConfig) -> np.ndarray:
    n = len(labels)
    prior = np.asarray(cfg.size_prior)[labels].reshape(n, 3)
    sizes = prior * np.exp(rng.normal(0.0, SIZE_JITTER, (n, 3)))
    x = rng.uniform(*X_RANGE, n)
    y = rng.uniform(*Y_RANGE, n)
    yaw = rng.uniform(-math.pi, math.pi, n)
    return np.column_stack([x, y, sizes[:, 2] / 2, sizes, wrap_angle(yaw)]).reshape(n, 7)


def generate_scene(cfg: ClassConfig, counts, seed, scene_id: int = 0, max_tries: int = MAX_PLACEMENT_TRIES) -> Scene:
    """Place ``counts[c]`` boxes of each class with pairwise zero footprint overlap.

    Boxes sit on the ground plane (``cz = dz / 2``); sizes scatter 5 %
    log-normally around the class prior; yaw is uniform.
    """
    counts = [int(c) for c in counts]
    if any(c < 0 for c in counts):
        raise ValueError(f"object counts must be >= 0, got {counts}")
    rng = _rng(seed, scene_id, Stage.SCENE)
    placed = np.zeros((0, 7))
    labels = []
    for c, n in enumerate(counts):
        for _ in range(n):
            for _attempt in range(max_tries):
                box = _random_boxes(rng, [c], cfg)
                if len(placed) == 0 or not iou_matrix(box, placed, mode="bev").any():
                    break
            else:
                raise SimulationError(
                    f"could not place object {len(labels)} (class {c}) in scene {scene_id} after {max_tries} tries"
                )
            placed = np.vstack([placed, box])
            labels.append(c)
    return Scene(Detections(placed, labels, np.ones(len(labels))), scene_id)


def _jitter(rng, boxes, labels, sigma_xy, sigma_z, sigma_size, sigma_yaw) -> np.ndarray:
    """Gaussian centre/yaw noise and log-normal size noise; per-class sigmas index by ``labels``."""
    boxes = as_boxes(boxes)
    n = len(boxes)
    pick = lambda s: np.asarray(s, dtype=np.float64)[labels] if np.ndim(s) else np.full(n, float(s))
    sxy, sz, ss, syaw = pick(sigma_xy), pick(sigma_z), pick(sigma_size), pick(sigma_yaw)
    e_xy = rng.normal(0.0, 1.0, (n, 2))
    e_z = rng.normal(0.0, 1.0, n)
    e_s = rng.normal(0.0, 1.0, (n, 3))
    e_yaw = rng.normal(0.0, 1.0, n)
    out = boxes.copy()
    out[:, 0:2] = boxes[:, 0:2] + sxy[:, None] * e_xy
    out[:, 2] = boxes[:, 2] + sz * e_z
    out[:, 3:6] = boxes[:, 3:6] * np.exp(ss[:, None] * e_s)
    out[:, 6] = wrap_angle(boxes[:, 6] + syaw * e_yaw)
    return out


def corrupt_to_pseudo_labels(scene: Scene, noise: NoiseModel, seed, cfg: Optional[ClassConfig] = None) -> Detections:
    """Teacher detections before confidence filtering.

    Each ground truth survives with probability ``1 - miss_prob[c]`` and is
    jittered; ``Poisson(fp_rate)`` spurious boxes are added. Scores are
    ``clip(q + N(0, score_sigma), 0, 1)`` with ``q`` the IoU to the source
    ground truth (0 for spurious boxes). Output: kept copies in ground-truth
    order, then spurious boxes.
    """
    cfg = cfg or ClassConfig()
    noise = noise.resolved(cfg.num_classes)
    rng = _rng(seed, scene.scene_id, Stage.PSEUDO_LABELS)
    gts = scene.ground_truths
    n = len(gts)
    drop = rng.uniform(size=n) < np.asarray(noise.miss_prob)[gts.labels]
    boxes = _jitter(rng, gts.boxes, gts.labels, noise.center_xy, noise.center_z, noise.log_size, noise.yaw)
    q = iou_pairs(boxes, gts.boxes) if n else np.zeros(0)
    scores = np.clip(q + noise.score_sigma * rng.normal(size=n), 0.0, 1.0)
    keep = ~drop
    n_fp = int(rng.poisson(noise.fp_rate)) if noise.fp_rate > 0 else 0
    fp_labels = rng.integers(0, cfg.num_classes, n_fp)
    fp_boxes = _random_boxes(rng, fp_labels, cfg)
    fp_scores = np.clip(noise.score_sigma * rng.normal(size=n_fp), 0.0, 1.0)
    return Detections(
        np.vstack([boxes[keep], fp_boxes]),
        np.concatenate([gts.labels[keep], fp_labels]),
        np.concatenate([scores[keep], fp_scores]),
    )


def generate_proposals(
    scene: Scene,
    per_level: int,
    background: int,
    ladder,
    seed,
    cfg: Optional[ClassConfig] = None,
    score_sigma: float = 0.0,
    return_source: bool = False,
):
    """Student proposals: ``per_level`` jittered copies of every ground truth at each ladder scale.

    A scale ``s`` jitters the centre by ``s`` times the footprint diagonal
    (``s * dz`` vertically), log-sizes by ``s`` and yaw by ``s`` radians.
    ``background`` boxes are scattered uniformly with a random class. Scores
    follow the pseudo-label model. With ``return_source`` the ground-truth
    index of each proposal (-1 for background) is returned too.
    """
    cfg = cfg or ClassConfig()
    rng = _rng(seed, scene.scene_id, Stage.PROPOSALS)
    gts = scene.ground_truths
    ladder = [float(s) for s in ladder]
    parts, labels, source = [], [], []
    for s in ladder:
        reps = np.repeat(np.arange(len(gts)), per_level)
        base = gts.boxes[reps]
        diag = np.sqrt(base[:, 3] ** 2 + base[:, 4] ** 2)
        n = len(base)
        out = base.copy()
        out[:, 0:2] += (s * diag)[:, None] * rng.normal(size=(n, 2))
        out[:, 2] += s * base[:, 5] * rng.normal(size=n)
        out[:, 3:6] *= np.exp(s * rng.normal(size=(n, 3)))
        out[:, 6] = wrap_angle(base[:, 6] + s * rng.normal(size=n))
        parts.append(out)
        labels.append(gts.labels[reps])
        source.append(reps)
    bg_labels = rng.integers(0, cfg.num_classes, int(background))
    parts.append(_random_boxes(rng, bg_labels, cfg))
    labels.append(bg_labels)
    source.append(np.full(int(background), -1))
    boxes = np.vstack(parts) if parts else np.zeros((0, 7))
    labels = np.concatenate(labels).astype(np.int64)
    source = np.concatenate(source).astype(np.int64)
    q = np.zeros(len(boxes))
    has = source >= 0
    if has.any():
        q[has] = iou_pairs(boxes[has], gts.boxes[source[has]])
    scores = np.clip(q + score_sigma * rng.normal(size=len(boxes)), 0.0, 1.0)
    props = Detections(boxes, labels, scores)
    return (props, source) if return_source else props


def _blend(p: np.ndarray, g: np.ndarray, kappa: float) -> np.ndarray:
    """Move ``p`` a fraction ``kappa`` of the way to ``g``; yaw along the shorter arc."""
    out = (1.0 - kappa) * p + kappa * g
    out[:, 6] = wrap_angle(g[:, 6] - (1.0 - kappa) * wrap_angle(g[:, 6] - p[:, 6]))
    return out


def refine_and_score(proposals, gts: Detections, pull: float, sigma: float, rng, bias=0.0, jitter: float = 0.0, mode: str = "3d", labels=None):
    """Shared refinement model for teacher and student heads.

    Each proposal overlapping a ground truth is blended toward its
    best-IoU ground truth by ``pull`` and its centre jittered by ``jitter``;
    others are left as is. The score is ``clip(v + bias[c] + N(0, sigma))``
    with ``v`` the refined box's best IoU and ``c`` the matched class (the
    proposal's own label otherwise).
    """
    boxes = as_boxes(proposals)
    n = len(boxes)
    if labels is None:
        labels = getattr(proposals, "labels", np.zeros(n, dtype=np.int64))
    refined = boxes.copy()
    cls = np.asarray(labels, dtype=np.int64).copy()
    noise_xy = rng.normal(size=(n, 2))
    noise_s = rng.normal(size=n)
    if n and len(gts):
        iou = iou_matrix(boxes, gts.boxes, mode=mode)
        best = iou.argmax(axis=1)
        hit = iou[np.arange(n), best] > 0
        if hit.any():
            refined[hit] = _blend(boxes[hit], gts.boxes[best[hit]], pull)
            if jitter > 0:
                refined[hit, 0:2] += jitter * noise_xy[hit]
            cls[hit] = gts.labels[best[hit]]
        v_hat = iou_matrix(refined, gts.boxes, mode=mode).max(axis=1)
    else:
        v_hat = np.zeros(n)
    b = np.asarray(bias, dtype=np.float64)
    shift = b[cls] if b.ndim else np.full(n, float(b))
    scores = np.clip(v_hat + shift + sigma * noise_s, 0.0, 1.0)
    return refined, scores


def teacher_refine_and_score(proposals, scene: Scene, noise: NoiseModel, seed, mode: str = "3d", cfg: Optional[ClassConfig] = None):
    """Teacher view of student proposals: refined boxes and foreground scores."""
    n_cls = (cfg or ClassConfig()).num_classes
    noise = noise.resolved(n_cls)
    rng = _rng(seed, scene.scene_id, Stage.TEACHER)
    return refine_and_score(
        proposals, scene.ground_truths, noise.teacher_pull, noise.teacher_sigma, rng,
        bias=noise.teacher_bias, jitter=noise.teacher_jitter, mode=mode,
    )


@dataclass(frozen=True)
class Augmentation:
    """Global flip over the x-axis, then rotation about z, then uniform scaling."""

    rotation: float = 0.0
    flip: bool = False
    scale: float = 1.0

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")


def apply_augmentation(boxes, aug: Augmentation) -> np.ndarray:
    b = as_boxes(boxes).copy()
    if aug.flip:
        b[:, 1] = -b[:, 1]
        b[:, 6] = -b[:, 6]
    c, s = math.cos(aug.rotation), math.sin(aug.rotation)
    x, y = b[:, 0].copy(), b[:, 1].copy()
    b[:, 0] = c * x - s * y
    b[:, 1] = s * x + c * y
    b[:, 6] = wrap_angle(b[:, 6] + aug.rotation)
    b[:, 0:6] *= aug.scale
    return b


def invert_augmentation(boxes, aug: Augmentation) -> np.ndarray:
    b = as_boxes(boxes).copy()
    b[:, 0:6] /= aug.scale
    c, s = math.cos(aug.rotation), math.sin(aug.rotation)
    x, y = b[:, 0].copy(), b[:, 1].copy()
    b[:, 0] = c * x + s * y
    b[:, 1] = -s * x + c * y
    b[:, 6] = wrap_angle(b[:, 6] - aug.rotation)
    if aug.flip:
        b[:, 1] = -b[:, 1]
        b[:, 6] = wrap_angle(-b[:, 6])
    return b


def random_augmentation(rng, max_rotation: float = math.pi / 4, scale_range=(0.95, 1.05)) -> Augmentation:
    return Augmentation(
        rotation=float(rng.uniform(-max_rotation, max_rotation)),
        flip=bool(rng.uniform() < 0.5),
        scale=float(rng.uniform(*scale_range)),
    )


def _augment_dets(dets: Detections, aug: Augmentation) -> Detections:
    return Detections(apply_augmentation(dets.boxes, aug), dets.labels, dets.scores)


@dataclass
class SceneDraw:
    """Everything random about one scene, in the student's (augmented) frame unless noted.

    ``teacher_boxes`` live in the original frame; ``v`` / ``gt_index`` are
    the proposals' best ground-truth IoU and its index (-1 if none).
    """

    scene: Scene
    labeled: bool
    augmentation: Augmentation
    pseudo_labels: Detections
    proposals: Detections
    gts_aug: Detections
    pls_aug: Detections
    u: np.ndarray
    matched: np.ndarray
    v: np.ndarray
    gt_index: np.ndarray
    teacher_boxes: np.ndarray
    s_hat: np.ndarray
    student_boxes: np.ndarray
    s_tilde: np.ndarray


def prepare_scene(cfg: ExperimentConfig, seed: int, scene_id: int, labeled: bool = False) -> SceneDraw:
    """Draw a scene and run the threshold-independent half of the pipeline.

    generate -> corrupt -> filter -> proposals -> augment -> match (u, v)
    -> invert augmentation -> teacher refine/score, plus the student's own
    refinement. Labeled scenes use the ground truths as pseudo-labels.
    """
    classes, noise, sc = cfg.classes, cfg.noise, cfg.scenes
    scene = generate_scene(classes, sc.objects, seed, scene_id)
    gts = scene.ground_truths
    if labeled:
        pls = gts
    else:
        raw = corrupt_to_pseudo_labels(scene, noise, seed, classes)
        pls = filter_pseudo_labels(raw, classes)
    props = generate_proposals(
        scene, sc.proposals_per_level, sc.background_proposals, sc.ladder, seed, classes, noise.score_sigma
    )
    if sc.proposal_nms is not None and len(props):
        props = props[np.asarray(nms_rotated(props, sc.proposal_nms), dtype=np.int64)]

    aug = random_augmentation(stream(seed, scene_id, Stage.AUGMENT))
    props_aug = _augment_dets(props, aug)
    pls_aug = _augment_dets(pls, aug)
    gts_aug = _augment_dets(gts, aug)

    u, matched = match_max_iou(props_aug.boxes, pls_aug, mode=cfg.iou_mode)
    n = len(props)
    if n and len(gts):
        iou_gt = iou_matrix(props_aug.boxes, gts_aug.boxes, mode=cfg.iou_mode)
        gt_index = iou_gt.argmax(axis=1)
        v = iou_gt[np.arange(n), gt_index]
        gt_index = np.where(v > 0, gt_index, -1)
    else:
        v = np.zeros(n)
        gt_index = np.full(n, -1)

    back = Detections(invert_augmentation(props_aug.boxes, aug), props.labels, props.scores)
    t_boxes, s_hat = teacher_refine_and_score(back, scene, noise, seed, cfg.iou_mode, classes)
    st_boxes, s_tilde = refine_and_score(
        props_aug, gts_aug, noise.student_pull, noise.student_sigma,
        stream(seed, scene_id, Stage.STUDENT), jitter=noise.teacher_jitter, mode=cfg.iou_mode,
    )
    return SceneDraw(
        scene=scene, labeled=labeled, augmentation=aug, pseudo_labels=pls, proposals=props,
        gts_aug=gts_aug, pls_aug=pls_aug, u=u, matched=matched, v=v, gt_index=gt_index,
        teacher_boxes=t_boxes, s_hat=s_hat, student_boxes=st_boxes, s_tilde=s_tilde,
    )


@dataclass
class Episode:
    records: Records
    loss: LossBreakdown
    assignments: Assignments
    sampled: np.ndarray


def _sample(assignments: Assignments, sampler: SamplerConfig, seed: int, scene_id: int) -> np.ndarray:
    if sampler.kind == "topk":
        return topk_sample(assignments, sampler.k)
    return balanced_random_sample(
        assignments, sampler.k, sampler.fg_fraction, sampler.easy_bg_fraction, sampler.easy_bg_iou,
        seed=stream(seed, scene_id, Stage.SAMPLER),
    )


def score_scene(draw: SceneDraw, cfg: ExperimentConfig, seed: int, classes: Optional[ClassConfig] = None, scheme=None, sampler: Optional[SamplerConfig] = None) -> Episode:
    """Assignment, sampling, weighting and losses on a prepared scene.

    ``classes``, ``scheme`` and ``sampler`` override the config for
    ablations. Labeled scenes always use the balanced sampler and unit
    weights.
    """
    classes = classes or cfg.classes
    sampler = sampler or cfg.sampler
    scheme = get_scheme(scheme or cfg.scheme)
    if draw.labeled:
        sampler = replace(sampler, kind="balanced")
        scheme = get_scheme("UNIT")
    sid = draw.scene.scene_id

    asg = assign_targets((draw.u, draw.matched), draw.pls_aug, classes)
    idx = _sample(asg, sampler, seed, sid) if len(asg) else np.zeros(0, dtype=np.int64)
    sub = asg.subset(idx)
    s_hat = draw.s_hat[idx]
    w = compute_weights(sub, s_hat, scheme)
    loss = scene_loss(draw.s_tilde[idx], sub.t, w, draw.student_boxes[idx], sub.target_boxes, sub.fg_mask)

    v = draw.v[idx]
    gt_cls = np.where(draw.gt_index[idx] >= 0, draw.scene.ground_truths.labels[np.maximum(draw.gt_index[idx], 0)], -1)
    rec_cls = np.where(sub.assigned_class >= 0, sub.assigned_class, gt_cls)
    records = Records(
        scene_id=np.full(len(idx), sid, dtype=np.int64),
        proposal_id=idx.astype(np.int64),
        cls=rec_cls.astype(np.int64),
        u=sub.u,
        v=v,
        t=sub.t,
        category=sub.category.astype(np.int64),
        subregion=subregions(sub.u, v, rec_cls, classes).astype(np.int64),
        s_hat=s_hat,
        w=w,
        cls_term=loss.cls_terms,
    )
    return Episode(records, loss, sub, idx)


def run_episode(cfg: ExperimentConfig, seed: int, scene_id: int = 0, labeled: bool = False, scheme=None, sampler=None) -> Episode:
    """One forward pass of the pipeline on one simulated scene."""
    return score_scene(prepare_scene(cfg, seed, scene_id, labeled), cfg, seed, scheme=scheme, sampler=sampler)


def student_predictions(draw: SceneDraw) -> Detections:
    """Student detections in the original frame after class-wise NMS, for AP."""
    boxes = invert_augmentation(draw.student_boxes, draw.augmentation)
    dets = Detections(boxes, draw.proposals.labels, draw.s_tilde)
    dets = dets[dets.scores >= EVAL_SCORE_THRESHOLD]
    keep = nms_rotated(dets, EVAL_NMS_THRESHOLD)
    return dets[np.asarray(keep, dtype=np.int64)]
