"""
Multi-scene runs and the three ablations.

Each seed is processed independently (scene draws are keyed by seed and
scene id), so seeds can fan out to worker processes; results are always
merged in seed order. ``SSOD3D_WORKERS`` sets the process count (default 1).
"""
from __future__ import annotations

import os
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .analysis import Records, ap_at_40, assignment_pr, loss_mass_report, u_histogram
from .config import ExperimentConfig, SamplerConfig
from .reliability import SCHEME_ORDER, LossBreakdown, combine_losses, compute_weights
from .simulator import SceneDraw, prepare_scene, score_scene, student_predictions

__all__ = [
    "WORKERS_ENV",
    "THRESHOLD_ROWS",
    "SimulationResult",
    "prepare_seed",
    "run_simulation",
    "simulation_metrics",
    "ablate_weights",
    "ablate_thresholds",
    "ablate_sampler",
    "summarize",
]

WORKERS_ENV = "SSOD3D_WORKERS"

# class-agnostic baseline followed by the class-aware ladder (car, pedestrian, cyclist)
THRESHOLD_ROWS = (
    ("C-Ag 0.75", (0.75, 0.75, 0.75)),
    ("C-Aw 0.75/0.55/0.50", (0.75, 0.55, 0.50)),
    ("C-Aw 0.65/0.45/0.40", (0.65, 0.45, 0.40)),
    ("C-Aw 0.55/0.35/0.30", (0.55, 0.35, 0.30)),
)


def _workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def _map_seeds(fn: Callable, cfg: ExperimentConfig, seeds) -> list:
    seeds = list(seeds)
    n = min(_workers(), len(seeds))
    if n <= 1:
        return [fn(cfg, s) for s in seeds]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, [cfg] * len(seeds), seeds))


def prepare_seed(cfg: ExperimentConfig, seed: int) -> tuple[list[SceneDraw], list[SceneDraw]]:
    """Unlabeled and labeled scene draws for one seed, ordered by scene id."""
    n, n_lab = cfg.scenes.count, cfg.scenes.labeled
    unlabeled = [prepare_scene(cfg, seed, sid) for sid in range(n)]
    labeled = [prepare_scene(cfg, seed, n + j, labeled=True) for j in range(n_lab)]
    return unlabeled, labeled


@dataclass
class SimulationResult:
    seed: int
    records: Records
    loss: LossBreakdown
    ap: dict


def _score_all(cfg, seed, draws, labeled, **overrides):
    episodes = [score_scene(d, cfg, seed, **overrides) for d in draws]
    lab = [score_scene(d, cfg, seed).loss for d in labeled]
    records = Records.concat(e.records for e in episodes)
    loss = combine_losses([e.loss for e in episodes], lab, cfg.lambda_u)
    return records, loss


def run_simulation(cfg: ExperimentConfig, seed: int) -> SimulationResult:
    draws, labeled = prepare_seed(cfg, seed)
    records, loss = _score_all(cfg, seed, draws, labeled)
    ap = ap_at_40([student_predictions(d) for d in draws], [d.scene.ground_truths for d in draws], cfg.classes, cfg.iou_mode)
    return SimulationResult(seed, records, loss, ap)


def simulation_metrics(result: SimulationResult, cfg: ExperimentConfig) -> dict:
    loss = result.loss
    return {
        "seed": result.seed,
        "scheme": cfg.scheme,
        "records": len(result.records),
        "u_equals_v": bool(np.array_equal(result.records.u, result.records.v)),
        "assignment_pr": assignment_pr(result.records, cfg.classes),
        "ap_at_40": result.ap,
        "u_histogram": u_histogram(result.records, cfg.classes),
        "loss": {
            "cls_loss": loss.cls_loss,
            "reg_loss": loss.reg_loss,
            "unsup_loss": loss.unsup_loss,
            "sup_loss": loss.sup_loss,
            "lambda_u": loss.lambda_u,
            "total": loss.total,
            "all_suppressed": loss.all_suppressed,
        },
    }


# ---------------------------------------------------------------------------
# ablations: per-seed workers return plain dicts
# ---------------------------------------------------------------------------


def _weights_seed(cfg: ExperimentConfig, seed: int) -> dict:
    draws, _ = prepare_seed(cfg, seed)
    # sampling and targets do not depend on the scheme: score once, reweight per scheme
    episodes = [score_scene(d, cfg, seed) for d in draws]
    base = Records.concat(e.records for e in episodes)
    pr = assignment_pr(base, cfg.classes)
    ap = ap_at_40([student_predictions(d) for d in draws], [d.scene.ground_truths for d in draws], cfg.classes, cfg.iou_mode)
    out = {}
    for name in SCHEME_ORDER:
        w = compute_weights(base.category, base.s_hat, name)
        rep = loss_mass_report(base.with_weights(w), cfg.classes.names)
        out[name] = {
            "suppressed_error_fraction": rep.suppressed_error_fraction,
            "suppressed_error_fraction_raw": rep.suppressed_error_fraction_raw,
            "mean_weight_fp": rep.mean_weight_fp,
            "mean_weight_tp": rep.mean_weight_tp,
            "mean_weight_fn": rep.mean_weight_fn,
            "assignment_pr": pr,
            "ap_at_40": ap,
        }
    return out


def ablate_weights(cfg: ExperimentConfig, seeds) -> dict:
    """Per scheme, a list (one entry per seed) of suppression and weight statistics."""
    per_seed = _map_seeds(_weights_seed, cfg, seeds)
    return {name: [s[name] for s in per_seed] for name in SCHEME_ORDER}


def _thresholds_seed(cfg: ExperimentConfig, seed: int) -> dict:
    draws, _ = prepare_seed(cfg, seed)
    out = {}
    for label, fg in THRESHOLD_ROWS:
        classes = cfg.classes.with_fg(fg)
        recs = Records.concat(score_scene(d, cfg, seed, classes=classes).records for d in draws)
        out[label] = assignment_pr(recs, classes)
    return out


def ablate_thresholds(cfg: ExperimentConfig, seeds) -> dict:
    """Per threshold row, a list (one per seed) of per-class PR tables."""
    per_seed = _map_seeds(_thresholds_seed, cfg, seeds)
    return {label: [s[label] for s in per_seed] for label, _ in THRESHOLD_ROWS}


def _sampler_seed(cfg: ExperimentConfig, seed: int) -> dict:
    draws, _ = prepare_seed(cfg, seed)
    out = {}
    for kind in ("balanced", "topk"):
        sampler = replace(cfg.sampler, kind=kind)
        episodes = [score_scene(d, cfg, seed, sampler=sampler) for d in draws]
        recs = Records.concat(e.records for e in episodes)
        not_fg = recs.category != 2
        easy = not_fg & (recs.u < cfg.sampler.easy_bg_iou)
        rep = loss_mass_report(recs, cfg.classes.names)
        out[kind] = {
            "mean_u": float(recs.u.mean()) if len(recs) else None,
            "easy_bg_fraction": float(easy.sum() / not_fg.sum()) if not_fg.any() else None,
            "easy_bg_count": int(easy.sum()),
            "sampled": len(recs),
            "suppressed_error_fraction": rep.suppressed_error_fraction,
            "assignment_pr": assignment_pr(recs, cfg.classes),
        }
    return out


def ablate_sampler(cfg: ExperimentConfig, seeds) -> dict:
    per_seed = _map_seeds(_sampler_seed, cfg, seeds)
    return {kind: [s[kind] for s in per_seed] for kind in ("balanced", "topk")}


def summarize(values) -> dict:
    """Mean and sample standard deviation, ignoring undefined entries."""
    vals = [float(v) for v in values if v is not None]
    if not vals:
        return {"mean": None, "sd": None, "n": 0}
    sd = statistics.stdev(vals) if len(vals) > 1 else 0.0
    return {"mean": statistics.fmean(vals), "sd": sd, "n": len(vals)}
