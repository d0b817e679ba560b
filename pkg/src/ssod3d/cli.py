"""Command-line entry point: ``ssod3d {simulate, ablate-weights, ablate-thresholds, ablate-sampler, iou, bench}``."""
from __future__ import annotations

import argparse
import json
import shutil
import sys
import tempfile
from pathlib import Path

from .analysis import to_jsonable, export_report, fmt, loss_mass_report, write_records_csv
from .config import ConfigError, ExperimentConfig, load_config
from .experiments import (
    THRESHOLD_ROWS,
    ablate_sampler,
    ablate_thresholds,
    ablate_weights,
    run_simulation,
    simulation_metrics,
    summarize,
)
from .geometry import Box3D, iou_3d, iou_bev
from .reliability import SCHEME_ORDER

EXIT_OK, EXIT_ERROR, EXIT_CONFIG = 0, 1, 2


def _seeds(cfg: ExperimentConfig, k):
    k = cfg.seeds.count if k is None else k
    if k < 1:
        raise ConfigError("must be >= 1", "--seeds")
    return list(range(cfg.seeds.base, cfg.seeds.base + k))


def _ms(values) -> str:
    s = summarize(values)
    if s["mean"] is None:
        return "undefined"
    return f"{s['mean']:.4f}±{s['sd']:.4f}"


def _write_json(path, doc) -> None:
    if path is None:
        return
    Path(path).write_text(json.dumps(to_jsonable(doc), indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    seed = cfg.seeds.base if args.seed is None else args.seed
    out = Path(args.out)
    existed = out.exists()
    # stage in a scratch directory so a failure leaves nothing behind
    stage = Path(tempfile.mkdtemp(prefix="ssod3d-"))
    try:
        result = run_simulation(cfg, seed)
        names = cfg.classes.names
        write_records_csv(result.records, stage / "records.csv", names)
        report = loss_mass_report(result.records, names)
        export_report(report, stage, simulation_metrics(result, cfg))
        out.mkdir(parents=True, exist_ok=True)
        for f in ("records.csv", "subregions.csv", "metrics.json"):
            shutil.move(str(stage / f), str(out / f))
    except BaseException:
        if not existed and out.exists():
            shutil.rmtree(out, ignore_errors=True)
        raise
    finally:
        shutil.rmtree(stage, ignore_errors=True)

    m = simulation_metrics(result, cfg)
    print(f"seed {seed}: {m['records']} records, u==v for all rows: {str(m['u_equals_v']).lower()}")
    print(f"suppressed_error_fraction ({cfg.scheme}): {report.suppressed_error_fraction}")
    for name, pr in m["assignment_pr"].items():
        print(f"  {name}: fg_precision={pr['fg_precision']} fg_recall={pr['fg_recall']} "
              f"fn_count_low_u={pr['fn_count_low_u']} AP40={m['ap_at_40'].get(name)}")
    print(f"wrote {out}/records.csv, subregions.csv, metrics.json")
    return EXIT_OK


# ---------------------------------------------------------------------------
# ablations
# ---------------------------------------------------------------------------


def cmd_ablate_weights(args) -> int:
    cfg = load_config(args.config)
    seeds = _seeds(cfg, args.seeds)
    res = ablate_weights(cfg, seeds)
    names = cfg.classes.names
    print(f"{'scheme':<13} {'suppressed_error_fraction':>26} {'w_FP':>8} {'w_TP':>8} " + " ".join(f"AP40[{n}]".rjust(14) for n in names))
    rows = []
    for scheme in SCHEME_ORDER:
        per = res[scheme]
        row = {
            "scheme": scheme,
            "suppressed_error_fraction": summarize([p["suppressed_error_fraction"] for p in per]),
            "suppressed_error_fraction_raw": summarize([p["suppressed_error_fraction_raw"] for p in per]),
            "mean_weight_fp": summarize([p["mean_weight_fp"] for p in per]),
            "mean_weight_tp": summarize([p["mean_weight_tp"] for p in per]),
            "fg_precision": {n: summarize([p["assignment_pr"][n]["fg_precision"] for p in per]) for n in names},
            "fg_recall": {n: summarize([p["assignment_pr"][n]["fg_recall"] for p in per]) for n in names},
            "ap_at_40": {n: summarize([p["ap_at_40"][n] for p in per]) for n in names},
        }
        rows.append(row)
        ap = " ".join(_ms([p["ap_at_40"][n] for p in per]).rjust(14) for n in names)
        print(f"{scheme:<13} {_ms([p['suppressed_error_fraction'] for p in per]):>26} "
              f"{_ms([p['mean_weight_fp'] for p in per])[:6]:>8} {_ms([p['mean_weight_tp'] for p in per])[:6]:>8} {ap}")
    _write_json(args.json, {"seeds": seeds, "rows": rows, "per_seed": res})
    return EXIT_OK


def cmd_ablate_thresholds(args) -> int:
    cfg = load_config(args.config)
    seeds = _seeds(cfg, args.seeds)
    res = ablate_thresholds(cfg, seeds)
    names = cfg.classes.names
    rows = []
    print(f"{'row':<22} {'class':<11} {'fg_recall':>16} {'fg_precision':>16} {'fn_count_low_u':>15}")
    for label, fg in THRESHOLD_ROWS:
        per = res[label]
        row = {"row": label, "fg_threshold": list(fg), "classes": {}}
        for n in names:
            stats = {
                "fg_recall": summarize([p[n]["fg_recall"] for p in per]),
                "fg_precision": summarize([p[n]["fg_precision"] for p in per]),
                "fn_count_low_u": sum(p[n]["fn_count_low_u"] for p in per),
            }
            row["classes"][n] = stats
            print(f"{label:<22} {n:<11} {_ms([p[n]['fg_recall'] for p in per]):>16} "
                  f"{_ms([p[n]['fg_precision'] for p in per]):>16} {stats['fn_count_low_u']:>15}")
        rows.append(row)
    _write_json(args.json, {"seeds": seeds, "rows": rows, "per_seed": res})
    return EXIT_OK


def cmd_ablate_sampler(args) -> int:
    cfg = load_config(args.config)
    seeds = _seeds(cfg, args.seeds)
    res = ablate_sampler(cfg, seeds)
    rows = []
    print(f"{'sampler':<9} {'mean_u':>16} {'easy_bg_fraction':>18} {'suppressed_error_fraction':>26}")
    for kind in ("balanced", "topk"):
        per = res[kind]
        rows.append({
            "sampler": kind,
            "mean_u": summarize([p["mean_u"] for p in per]),
            "easy_bg_fraction": summarize([p["easy_bg_fraction"] for p in per]),
            "suppressed_error_fraction": summarize([p["suppressed_error_fraction"] for p in per]),
        })
        print(f"{kind:<9} {_ms([p['mean_u'] for p in per]):>16} {_ms([p['easy_bg_fraction'] for p in per]):>18} "
              f"{_ms([p['suppressed_error_fraction'] for p in per]):>26}")
    _write_json(args.json, {"seeds": seeds, "rows": rows, "per_seed": res})
    return EXIT_OK


# ---------------------------------------------------------------------------
# geometry utilities
# ---------------------------------------------------------------------------


def cmd_iou(args) -> int:
    if len(args.box) != 2:
        raise ConfigError("expected exactly two --box arguments", "--box")
    a, b = (Box3D(*vals) for vals in args.box)
    print(fmt(iou_bev(a, b)), fmt(iou_3d(a, b)))
    return EXIT_OK


def cmd_bench(args) -> int:
    from .bench import iou_throughput

    r = iou_throughput(args.pairs, args.repeats)
    print(f"{r['pairs_per_second']:.0f} rotated iou_3d evaluations/s ({r['pairs']} pairs in {r['seconds']:.3f} s, single thread)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ssod3d", description=__doc__.split(":")[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run the pipeline over the configured scenes for one seed")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int, default=None, help="defaults to seeds.base from the config")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_simulate)

    for name, func, text in (
        ("ablate-weights", cmd_ablate_weights, "compare the six reliability weighting schemes"),
        ("ablate-thresholds", cmd_ablate_thresholds, "class-agnostic vs class-aware foreground thresholds"),
        ("ablate-sampler", cmd_ablate_sampler, "balanced random vs top-k proposal sampling"),
    ):
        a = sub.add_parser(name, help=text)
        a.add_argument("--config", required=True)
        a.add_argument("--seeds", type=int, default=None, help="number of seeds (default: seeds.count)")
        a.add_argument("--json", default=None, help="also write the full table to this JSON file")
        a.set_defaults(func=func)

    i = sub.add_parser("iou", help="BEV and 3D IoU of two boxes (x y z dx dy dz yaw)")
    i.add_argument("--box", type=float, nargs=7, action="append", required=True, metavar="V")
    i.set_defaults(func=cmd_iou)

    b = sub.add_parser("bench", help="rotated iou_3d throughput")
    b.add_argument("--pairs", type=int, default=200_000)
    b.add_argument("--repeats", type=int, default=3)
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"ssod3d: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError) as exc:
        print(f"ssod3d: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
