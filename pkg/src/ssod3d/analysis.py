"""
Error analysis of target assignment.

Each sampled proposal is placed in a 2x3 grid: the column comes from its
pseudo-label IoU ``u`` (BG / UC / FG against the local thresholds), the row
from its ground-truth IoU ``v`` against the evaluation threshold. The six
cells are labelled::

            BG    UC    FG
    above   (a)   (b)   (c)     true objects:  a, b = missed, c = hit
    below   (f)   (e)   (d)     background:    d, e = false alarms, f = correct

"Above" is strict: ``v > eval_threshold[class]``.
"""
from __future__ import annotations

import csv
import json
import math
from fractions import Fraction
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .assignment import Category, soft_targets
from .config import ClassConfig
from .detections import Detections
from .geometry import iou_matrix

__all__ = [
    "SUBREGIONS",
    "UNDEFINED",
    "Records",
    "RECORD_COLUMNS",
    "subregion_classify",
    "to_jsonable",
    "subregions",
    "assignment_pr",
    "CellStats",
    "SubregionReport",
    "loss_mass_report",
    "u_histogram",
    "ap_at_40",
    "export_report",
    "read_report",
    "write_records_csv",
    "fmt",
]

SUBREGIONS = ("a", "b", "c", "d", "e", "f")
FN_CELLS = ("a", "b")
FP_CELLS = ("d", "e")
TP_CELLS = ("c",)
UNDEFINED = None
NO_CLASS = -1
LOW_U = 0.05

# (column, above) -> subregion index
_GRID = {
    (Category.BG, True): 0,
    (Category.UC, True): 1,
    (Category.FG, True): 2,
    (Category.FG, False): 3,
    (Category.UC, False): 4,
    (Category.BG, False): 5,
}

RECORD_COLUMNS = (
    "scene_id", "proposal_id", "class", "u", "v", "t",
    "category", "subregion", "s_hat", "w", "cls_term",
)


def fmt(x) -> str:
    """Nine significant digits, the serialisation precision of every float we write."""
    return f"{float(x):.9g}"


def _round9(x):
    if x is None:
        return None
    return float(fmt(x))


def subregions(u, v, cls, cfg: ClassConfig) -> np.ndarray:
    """Vectorised cell index (0..5 for a..f)."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    cls = np.asarray(cls, dtype=np.int64)
    known = cls >= 0
    fg = np.ones_like(u)
    delta = np.ones_like(u)
    fg[known] = np.asarray(cfg.fg_threshold)[cls[known]]
    delta[known] = np.asarray(cfg.eval_threshold)[cls[known]]
    _, column = soft_targets(u, fg, cfg.bg_threshold)
    above = v > delta
    out = np.empty(u.shape, dtype=np.int8)
    for (col, ab), idx in _GRID.items():
        out[(column == col) & (above == ab)] = idx
    return out


def subregion_classify(u: float, v: float, class_id: int, cfg: ClassConfig) -> str:
    """Cell letter of a single proposal."""
    return SUBREGIONS[int(subregions([u], [v], [class_id], cfg)[0])]


@dataclass
class Records:
    """Per-proposal rows collected from simulated scenes (parallel arrays)."""

    scene_id: np.ndarray
    proposal_id: np.ndarray
    cls: np.ndarray
    u: np.ndarray
    v: np.ndarray
    t: np.ndarray
    category: np.ndarray
    subregion: np.ndarray
    s_hat: np.ndarray
    w: np.ndarray
    cls_term: np.ndarray

    _fields = ("scene_id", "proposal_id", "cls", "u", "v", "t", "category", "subregion", "s_hat", "w", "cls_term")

    @classmethod
    def empty(cls) -> "Records":
        ints = ("scene_id", "proposal_id", "cls", "category", "subregion")
        return cls(**{f: np.zeros(0, dtype=np.int64 if f in ints else np.float64) for f in cls._fields})

    @classmethod
    def from_rows(cls, rows: list[dict]) -> "Records":
        """Build from dicts keyed like the dataclass fields (used for hand-made fixtures)."""
        if not rows:
            return cls.empty()
        out = {}
        for f in cls._fields:
            vals = [r.get(f, 0) for r in rows]
            out[f] = np.asarray(vals)
        return cls(**out)

    @classmethod
    def concat(cls, parts) -> "Records":
        parts = list(parts)
        if not parts:
            return cls.empty()
        return cls(**{f: np.concatenate([getattr(p, f) for p in parts]) for f in cls._fields})

    def __len__(self):
        return len(self.u)

    def with_weights(self, w) -> "Records":
        kw = {f: getattr(self, f) for f in self._fields}
        kw["w"] = np.asarray(w, dtype=np.float64)
        return Records(**kw)

    def select(self, mask) -> "Records":
        return Records(**{f: getattr(self, f)[mask] for f in self._fields})


def write_records_csv(records: Records, path, names) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RECORD_COLUMNS)
        for i in range(len(records)):
            c = int(records.cls[i])
            writer.writerow([
                int(records.scene_id[i]),
                int(records.proposal_id[i]),
                names[c] if c >= 0 else "none",
                fmt(records.u[i]),
                fmt(records.v[i]),
                fmt(records.t[i]),
                Category(int(records.category[i])).name,
                SUBREGIONS[int(records.subregion[i])],
                fmt(records.s_hat[i]),
                fmt(records.w[i]),
                fmt(records.cls_term[i]),
            ])


def assignment_pr(records: Records, cfg: ClassConfig, low_u: float = LOW_U) -> dict:
    """Per-class FG precision ``c/(c+d)``, recall ``c/(a+b+c)`` and near-zero-IoU misses.

    Cells are recomputed from ``u``, ``v`` and the class using ``cfg`` so
    one record set can be scored under several threshold settings.
    Ratios with an empty denominator are ``UNDEFINED``.
    """
    out = {}
    sub = subregions(records.u, records.v, records.cls, cfg)
    for c, name in enumerate(cfg.names):
        mine = records.cls == c
        if not mine.any():
            out[name] = {"fg_precision": UNDEFINED, "fg_recall": UNDEFINED, "fn_count_low_u": UNDEFINED}
            continue
        counts = np.bincount(sub[mine], minlength=6)
        a, b, cc, d = (int(x) for x in counts[:4])
        true_fg = records.v[mine] > cfg.eval_threshold[c]
        out[name] = {
            "fg_precision": cc / (cc + d) if cc + d else UNDEFINED,
            "fg_recall": cc / (a + b + cc) if a + b + cc else UNDEFINED,
            "fn_count_low_u": int(np.count_nonzero(true_fg & (records.u[mine] < low_u))),
        }
    return out


@dataclass
class CellStats:
    count: int = 0
    loss_sum: float = 0.0
    weighted_loss_sum: float = 0.0
    mean_weight: Optional[float] = UNDEFINED


@dataclass
class SubregionReport:
    """Per (class, cell) loss mass plus the headline suppression scalar.

    ``suppressed_error_fraction`` measures how much of the classification
    loss carried by error cells (a, b, d, e) the weights remove, with each
    scene's weights normalised the way the weighted loss normalises them
    (``w * N / sum(w)``), so down-weighting correct proposals counts
    against a scheme. ``suppressed_error_fraction_raw`` uses the bare
    weights instead.
    """

    cells: dict = field(default_factory=dict)
    suppressed_error_fraction: Optional[float] = UNDEFINED
    suppressed_error_fraction_raw: Optional[float] = UNDEFINED
    mean_weight_fp: Optional[float] = UNDEFINED
    mean_weight_tp: Optional[float] = UNDEFINED
    mean_weight_fn: Optional[float] = UNDEFINED

    def rows(self):
        for (name, letter), cell in self.cells.items():
            if cell.count:
                yield name, letter, cell

    def headline(self) -> dict:
        return {
            "suppressed_error_fraction": self.suppressed_error_fraction,
            "suppressed_error_fraction_raw": self.suppressed_error_fraction_raw,
            "mean_weight_fp": self.mean_weight_fp,
            "mean_weight_tp": self.mean_weight_tp,
            "mean_weight_fn": self.mean_weight_fn,
        }


def _effective_weights(records: Records) -> np.ndarray:
    w_eff = np.zeros(len(records))
    for sid in np.unique(records.scene_id):
        sel = records.scene_id == sid
        total = math.fsum(records.w[sel])
        if total > 0:
            w_eff[sel] = records.w[sel] * (np.count_nonzero(sel) / total)
    return w_eff


def _mean(x) -> Optional[float]:
    return math.fsum(x) / len(x) if len(x) else UNDEFINED


def loss_mass_report(records: Records, names=("Car", "Pedestrian", "Cyclist")) -> SubregionReport:
    report = SubregionReport()
    labels = list(enumerate(names)) + [(NO_CLASS, "none")]
    for c, name in labels:
        for k, letter in enumerate(SUBREGIONS):
            sel = (records.cls == c) & (records.subregion == k)
            w = records.w[sel]
            loss = records.cls_term[sel]
            report.cells[(name, letter)] = CellStats(
                count=int(sel.sum()),
                loss_sum=math.fsum(loss),
                weighted_loss_sum=math.fsum(w * loss),
                mean_weight=_mean(w),
            )
    err = np.isin(records.subregion, [SUBREGIONS.index(x) for x in FN_CELLS + FP_CELLS])
    unweighted = math.fsum(records.cls_term[err])
    if unweighted > 0:
        w_eff = _effective_weights(records)
        report.suppressed_error_fraction = 1.0 - math.fsum(w_eff[err] * records.cls_term[err]) / unweighted
        report.suppressed_error_fraction_raw = 1.0 - math.fsum(records.w[err] * records.cls_term[err]) / unweighted

    def cell_mean(letters):
        sel = np.isin(records.subregion, [SUBREGIONS.index(x) for x in letters]) & (records.cls >= 0)
        return _mean(records.w[sel])

    report.mean_weight_fp = cell_mean(FP_CELLS)
    report.mean_weight_tp = cell_mean(TP_CELLS)
    report.mean_weight_fn = cell_mean(FN_CELLS)
    return report


def u_histogram(records: Records, cfg: ClassConfig, bins: int = 20) -> dict:
    """Counts of true-object proposals binned by pseudo-label IoU, per class."""
    out = {}
    edges = np.linspace(0.0, 1.0, bins + 1)
    for c, name in enumerate(cfg.names):
        sel = (records.cls == c) & (records.v > cfg.eval_threshold[c])
        counts, _ = np.histogram(records.u[sel], bins=edges)
        out[name] = [int(x) for x in counts]
    out["edges"] = [float(e) for e in edges]
    return out


# ---------------------------------------------------------------------------
# average precision
# ---------------------------------------------------------------------------


def _frames(x):
    if isinstance(x, Detections) or (isinstance(x, list) and x and not isinstance(x[0], (Detections, list))):
        return [Detections.coerce(x)]
    return [Detections.coerce(f) for f in x]


def ap_at_40(predictions, ground_truths, cfg: ClassConfig, mode: str = "3d", recall_positions: int = 40) -> dict:
    """Per-class AP from interpolated precision sampled at recall ``1/40 .. 40/40``.

    ``predictions`` and ``ground_truths`` are either single frames or
    equal-length sequences of frames. Within a frame predictions are matched
    greedily by descending score (ties by index) to the best-overlapping
    unmatched ground truth of the same class with IoU >= the class's
    evaluation threshold. Classes without ground truth get ``UNDEFINED``.
    """
    preds = _frames(predictions)
    gts = _frames(ground_truths)
    if len(preds) != len(gts):
        raise ValueError(f"{len(preds)} prediction frames vs {len(gts)} ground-truth frames")
    out = {}
    for c, name in enumerate(cfg.names):
        scores, hits = [], []
        n_gt = 0
        for p, g in zip(preds, gts):
            p = p[p.labels == c]
            g = g[g.labels == c]
            n_gt += len(g)
            if len(p) == 0:
                continue
            order = np.lexsort((np.arange(len(p)), -p.scores))
            tp = np.zeros(len(p), dtype=bool)
            if len(g):
                iou = iou_matrix(p.boxes, g.boxes, mode=mode)
                taken = np.zeros(len(g), dtype=bool)
                for i in order:
                    cand = np.where(taken, -1.0, iou[i])
                    j = int(np.argmax(cand))
                    if cand[j] >= cfg.eval_threshold[c]:
                        taken[j] = True
                        tp[i] = True
            scores.append(p.scores[order])
            hits.append(tp[order])
        if n_gt == 0:
            out[name] = UNDEFINED
            continue
        if not scores:
            out[name] = 0.0
            continue
        s = np.concatenate(scores)
        h = np.concatenate(hits)
        # stable sort keeps frame order, then within-frame order, among equal scores
        rank = np.argsort(-s, kind="stable")
        h = h[rank]
        ctp = np.cumsum(h)
        precision = ctp / np.arange(1, len(h) + 1)
        # interpolated precision: index of the best precision at this rank or beyond
        best = np.empty(len(h), dtype=np.int64)
        j = len(h) - 1
        for i in range(len(h) - 1, -1, -1):
            if precision[i] > precision[j]:
                j = i
            best[i] = j
        # summed as exact fractions so hand-enumerated curves compare exactly
        total = Fraction(0)
        for r in range(1, recall_positions + 1):
            # recall >= r / positions, compared in integers
            reach = np.flatnonzero(ctp * recall_positions >= r * n_gt)
            if reach.size:
                k = int(best[reach[0]])
                total += Fraction(int(ctp[k]), k + 1)
        out[name] = float(total / recall_positions)
    return out


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------

CELL_COLUMNS = ("class", "subregion", "count", "loss_sum", "weighted_loss_sum", "mean_weight")


def to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _round9(obj) if math.isfinite(obj) else None
    return obj


def export_report(report: SubregionReport, path, metrics: Optional[dict] = None) -> tuple[Path, Path]:
    """Write ``subregions.csv`` and ``metrics.json`` into directory ``path``.

    The JSON holds the report's headline scalars plus any extra ``metrics``
    (PR tables, AP, histograms). Floats carry nine significant digits;
    undefined values become ``null``.
    """
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
        csv_path = path / "subregions.csv"
        with csv_path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CELL_COLUMNS)
            for name, letter, cell in report.rows():
                writer.writerow([
                    name, letter, cell.count, fmt(cell.loss_sum), fmt(cell.weighted_loss_sum),
                    "" if cell.mean_weight is None else fmt(cell.mean_weight),
                ])
        json_path = path / "metrics.json"
        doc = {"headline": report.headline()}
        if metrics:
            doc.update(metrics)
        json_path.write_text(json.dumps(to_jsonable(doc), indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write report to {path}: {exc.strerror}") from None
    return csv_path, json_path


def read_report(path) -> tuple[SubregionReport, dict]:
    """Inverse of :func:`export_report`."""
    path = Path(path)
    report = SubregionReport()
    with (path / "subregions.csv").open(newline="") as fh:
        for row in csv.DictReader(fh):
            report.cells[(row["class"], row["subregion"])] = CellStats(
                count=int(row["count"]),
                loss_sum=float(row["loss_sum"]),
                weighted_loss_sum=float(row["weighted_loss_sum"]),
                mean_weight=float(row["mean_weight"]) if row["mean_weight"] else None,
            )
    doc = json.loads((path / "metrics.json").read_text())
    for key, value in doc.pop("headline").items():
        setattr(report, key, value)
    return report, doc
