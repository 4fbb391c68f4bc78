"""Command-line entry point: ``gradsample {simulate,solve-weights,split,report}``.

Exit codes: 0 on success, 1 for runtime or solver failures, 2 for bad input
(arguments, config files, annotation files).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import InputError, SolverError
from .ledger import load_matrix
from .report import read_metrics, write_reports
from .sampler import write_sampling_report
from .solver import DIAG_FLOOR, balance_residuals, solve_direct, solve_iterative
from .thresholds import MODES as THRESHOLD_MODES

log = logging.getLogger("gradsample")

OUTPUT_ROOT_ENV = "GRADSAMPLE_OUTPUT_ROOT"
EXIT_RUNTIME = 1
EXIT_INPUT = 2


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


def _fail(msg: str, code: int) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return code


# --- simulate ---------------------------------------------------------------

SUMMARY_FIELDS = [
    "generation", "step", "loss", "overall_acc", "balanced_acc", "majority_acc", "minority_acc",
    "majority_precision", "majority_recall", "minority_precision", "minority_recall", "epsilon", "epoch_size",
]


def effective_config(args):
    from .sim.config import RunConfig, apply_overrides, load_config, parse_toggles, preset, with_toggles

    cfg = load_config(args.config) if args.config else RunConfig()
    if args.preset:
        cfg = preset(args.preset, cfg)
    if args.toggles is not None:
        cfg = with_toggles(cfg, parse_toggles(args.toggles))
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.threshold_mode is not None:
        overrides.append(f"thresholds.mode={args.threshold_mode}")
        overrides.append(f"modules.gbt={'false' if args.threshold_mode == 'fixed' else 'true'}")
    if args.theta_base is not None:
        overrides.append(f"thresholds.theta_base={args.theta_base}")
    return apply_overrides(cfg, overrides)


def summary_row(rec: dict) -> dict:
    ev, ps = rec["eval"], rec["pseudo"]
    return {
        "generation": rec["generation"], "step": rec["step"], "loss": rec["loss"],
        "overall_acc": ev["overall"], "balanced_acc": ev["balanced"],
        "majority_acc": ev["majority"], "minority_acc": ev["minority"],
        "majority_precision": ps["majority_precision"], "majority_recall": ps["majority_recall"],
        "minority_precision": ps["minority_precision"], "minority_recall": ps["minority_recall"],
        "epsilon": rec["epsilon"], "epoch_size": rec["epoch_size"],
    }


def _wide(path: Path, key: str, records) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        width = len(records[0][key]) if records else 0
        writer.writerow(["generation", "step"] + [f"class_{i}" for i in range(width)])
        for rec in records:
            writer.writerow([rec["generation"], rec["step"]] + [repr(float(v)) for v in rec[key]])


def _finite(obj):
    """NaN and infinities become JSON null."""
    if isinstance(obj, float):
        return obj if np.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


def write_run(out: Path, cfg, timeline) -> None:
    with open(out / "metrics.jsonl", "w") as fh:
        for rec in timeline.records:
            fh.write(json.dumps(_finite(rec), sort_keys=True, allow_nan=False) + "\n")
    with open(out / "summary.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS, lineterminator="\n")
        writer.writeheader()
        for rec in timeline.records:
            writer.writerow({k: ("" if v is None else v) for k, v in _finite(summary_row(rec)).items()})
    _wide(out / "weights.csv", "weights", timeline.records)
    _wide(out / "thresholds.csv", "thresholds", timeline.records)
    if timeline.sampling:
        sampling_dir = out / "sampling"
        sampling_dir.mkdir(exist_ok=True)
        for table in timeline.sampling:
            write_sampling_report(sampling_dir / f"generation_{table.t:03d}.csv", table)


def cmd_simulate(args) -> int:
    from .sim.harness import HarnessError, run_generations

    try:
        cfg = effective_config(args)
    except InputError as exc:
        return _fail(str(exc), EXIT_INPUT)
    name = args.preset or ("custom" if args.toggles is None else args.toggles.replace(",", "+") or "none")
    out = Path(args.out) if args.out else output_root() / f"{name}-seed{cfg.seed}"
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    try:
        timeline = run_generations(cfg)
    except HarnessError as exc:
        return _fail(str(exc), EXIT_RUNTIME)
    write_run(out, cfg, timeline)
    final = timeline.records[-1]
    print(f"{out}: generation {final['generation']}, balanced acc {final['eval']['balanced']:.4f}, "
          f"minority acc {final['eval']['minority']:.4f}")
    return 0


# --- solve-weights -------------------------------------------------------------


def cmd_solve_weights(args) -> int:
    try:
        Gt = load_matrix(args.matrix)
    except (InputError, OSError) as exc:
        return _fail(str(exc), EXIT_INPUT)
    size = Gt.shape[0]
    columns = {"class": list(range(size))}

    def residuals(w):
        res = balance_residuals(Gt, w).tolist()
        return res + [abs(float(np.sum(w)) - size)]

    if args.mode in ("direct", "both"):
        try:
            w = solve_direct(Gt)
        except SolverError as exc:
            return _fail(f"direct solve failed: {exc}", EXIT_RUNTIME)
        columns["w_direct"] = w.tolist()
        columns["residual_direct"] = residuals(w)
    if args.mode in ("iterative", "both"):
        held = np.flatnonzero(np.abs(np.diag(Gt)[:-1]) <= args.diag_floor)
        if held.size:
            print(f"warning: classes {held.tolist()} have no gradient signal; their weights are held",
                  file=sys.stderr)
        w, steps = solve_iterative(Gt, lr_align=args.lr_align, max_steps=args.max_steps,
                                   tol=args.tol, diag_floor=args.diag_floor)
        if steps >= args.max_steps:
            print(f"warning: iterative solve did not converge in {steps} steps", file=sys.stderr)
        columns["w_iterative"] = w.tolist()
        columns["residual_iterative"] = residuals(w)
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(list(columns))
    for row in zip(*columns.values()):
        writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return 0


# --- split --------------------------------------------------------------------


def _class_tokens(spec: str) -> list[str]:
    path = Path(spec)
    text = path.read_text() if path.is_file() else spec
    return [tok.strip() for tok in text.replace("\n", ",").split(",") if tok.strip()]


def resolve_classes(spec: str | None, categories) -> list:
    """Category ids from a comma list or file of ids and/or names."""
    if not spec:
        return []
    by_name = {cat["name"]: cat["id"] for cat in categories}
    ids = {cat["id"] for cat in categories}
    out = []
    for tok in _class_tokens(spec):
        if tok in by_name:
            out.append(by_name[tok])
            continue
        try:
            value = int(tok)
        except ValueError:
            raise InputError(f"unknown class {tok!r}") from None
        if value not in ids:
            raise InputError(f"unknown class id {value}")
        out.append(value)
    return sorted(set(out))


def cmd_split(args) -> int:
    from .splits import SplitConfig, apply_remap, build_splits, load_annotations, random_class_partition, write_splits

    try:
        index = load_annotations(args.annotations)
        remap = None
        if args.remap:
            remap = json.loads(Path(args.remap).read_text())
            index = apply_remap(index, remap)
        extra = {"annotations": str(args.annotations)}
        if args.lvis_mode:
            majority, minority = [], []
        elif args.random_minority is not None:
            majority, minority = random_class_partition(index.category_ids, args.random_minority, args.class_seed)
            extra["class_seed"] = args.class_seed
        else:
            majority = resolve_classes(args.majority, index.categories)
            minority = resolve_classes(args.minority, index.categories)
            if not majority:
                raise InputError("--majority is required unless --lvis-mode or --random-minority is given")
            if not args.minority:
                minority = sorted(set(index.category_ids) - set(majority))
        cfg = SplitConfig(majority, minority, fraction=args.fraction, min_instances=args.min_instances,
                          seed=args.seed, lvis_mode=args.lvis_mode, remap=remap)
        labeled, unlabeled, _, _ = build_splits(index, cfg)
    except (InputError, OSError, json.JSONDecodeError) as exc:
        return _fail(str(exc), EXIT_INPUT)
    out = Path(args.out) if args.out else output_root() / "split"
    write_splits(index, labeled, cfg, out, extra)
    print(f"{out}: {len(labeled)} labeled images, {len(unlabeled)} unlabeled images")
    return 0


# --- report -------------------------------------------------------------------


def cmd_report(args) -> int:
    path = Path(args.metrics)
    if path.is_dir():
        path = path / "metrics.jsonl"
    try:
        records = read_metrics(path)
    except InputError as exc:
        return _fail(str(exc), EXIT_INPUT)
    out = Path(args.out) if args.out else path.parent / "report"
    paths = write_reports(records, out)
    for p in paths.values():
        print(p)
    return 0


# --- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    from .sim.config import PRESETS

    parser = argparse.ArgumentParser(prog="gradsample", description="Class-imbalanced self-training toolkit: simulate, solve class weights, build splits, report.")
    parser.add_argument("--version", action="version",
                        version=json.dumps({"name": "gradsample", "version": __version__}))
    parser.add_argument("--config-schema", action="store_true", help="print the run-config schema as JSON and exit")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command")

    sim = sub.add_parser("simulate", help="run the synthetic self-training harness")
    sim.add_argument("--config", help="JSON run config")
    sim.add_argument("--preset", choices=sorted(PRESETS))
    sim.add_argument("--toggles", help="comma list from crs,gbt,gbr,focal, or 'none'")
    sim.add_argument("--threshold-mode", choices=THRESHOLD_MODES)
    sim.add_argument("--theta-base", type=float)
    sim.add_argument("--seed", type=int)
    sim.add_argument("--out", help=f"run directory (default ${OUTPUT_ROOT_ENV}/<preset>-seed<seed>)")
    sim.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                     help="dotted config override, repeatable")
    sim.set_defaults(func=cmd_simulate)

    sw = sub.add_parser("solve-weights", help="solve a gradient-matrix dump for class weights")
    sw.add_argument("matrix", help="text dump, one row per line")
    sw.add_argument("--mode", choices=("direct", "iterative", "both"), default="both")
    sw.add_argument("--lr-align", type=float, default=0.01)
    sw.add_argument("--max-steps", type=int, default=10_000)
    sw.add_argument("--tol", type=float, default=1e-10)
    sw.add_argument("--diag-floor", type=float, default=DIAG_FLOOR)
    sw.set_defaults(func=cmd_solve_weights)

    sp = sub.add_parser("split", help="build labeled/unlabeled splits from COCO annotations")
    sp.add_argument("--annotations", required=True)
    sp.add_argument("--majority", help="comma list or file of class ids/names")
    sp.add_argument("--minority", help="comma list or file of class ids/names (default: all non-majority)")
    sp.add_argument("--random-minority", type=int, metavar="N", help="pick N minority classes at random")
    sp.add_argument("--class-seed", type=int, default=0)
    sp.add_argument("--fraction", type=float, default=0.10)
    sp.add_argument("--min-instances", type=int, default=None)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--remap", help="JSON object mapping category names to new names or null")
    sp.add_argument("--lvis-mode", action="store_true")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_split)

    rp = sub.add_parser("report", help="CSV tables from a metrics JSONL")
    rp.add_argument("metrics", help="metrics.jsonl or a run directory")
    rp.add_argument("--out")
    rp.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    if args.config_schema:
        from .sim.config import schema

        print(json.dumps(schema(), indent=2, sort_keys=True))
        return 0
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_INPUT
    if args.command == "split" and args.min_instances is None:
        args.min_instances = 1 if args.lvis_mode else 10
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
