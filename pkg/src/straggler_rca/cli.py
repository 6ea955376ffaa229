"""Batch front end: ``analyze``, ``gen-trace``, ``evaluate`` and ``sweep``.

Exit codes: 0 success, 1 bad input or configuration, 2 internal invariant
violation. Every JSON report carries a ``format_version`` and the effective
analysis configuration.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import sys
from collections import Counter
from pathlib import Path
from typing import Optional, Sequence

from .ingest import TraceBundle, load_bundle, load_schedule, save_bundle, save_schedule
from .model import AnalysisConfig, EdgeRule, GroundTruthSchedule, PeerAggregator
from .rootcause import AnalysisInvariantError, prepare
from .evaluate import DEFAULT_GRIDS, Grid, Method, auc, evaluate, roc_sweep
from .synth import ResponseModel, TraceSpec, gen_trace, inject, label_tasks

ANALYSIS_FORMAT = "straggler-rca.analysis/1"
EVALUATION_FORMAT = "straggler-rca.evaluation/1"
SWEEP_FORMAT = "straggler-rca.sweep/1"

EVENTS_FILE = "events.jsonl"
METRICS_FILE = "metrics.csv"
TRUTH_FILE = "truth.csv"


class InputError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    # usage errors are input errors; 2 is reserved for invariant violations
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _warn(msg: str) -> None:
    print(f"warning: {msg}", file=sys.stderr)


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file whose keys are analysis config field names")
    g = p.add_argument_group("analysis config (overrides --config)")
    for f in dataclasses.fields(AnalysisConfig):
        if f.type in (bool, "bool"):
            g.add_argument(_flag(f.name), dest=f.name, action=argparse.BooleanOptionalAction, default=None)
        elif f.name == "peer_aggregator":
            g.add_argument(_flag(f.name), dest=f.name, choices=[a.value for a in PeerAggregator], default=None)
        elif f.name == "edge_rule":
            g.add_argument(_flag(f.name), dest=f.name, choices=[r.value for r in EdgeRule], default=None)
        elif f.name == "edge_width":
            g.add_argument(_flag(f.name), dest=f.name, type=int, default=None, metavar="MS")
        else:
            g.add_argument(_flag(f.name), dest=f.name, type=float, default=None)


def resolve_config(args: argparse.Namespace) -> AnalysisConfig:
    """Flag over config file over built-in default."""
    values = {}
    names = {f.name for f in dataclasses.fields(AnalysisConfig)}
    if getattr(args, "config", None):
        data = _read_json(args.config)
        if not isinstance(data, dict):
            raise InputError(f"{args.config}: config must be a JSON object")
        unknown = sorted(set(data) - names)
        if unknown:
            raise InputError(f"{args.config}: unknown config keys {unknown}")
        values.update(data)
    for name in names:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    try:
        return AnalysisConfig(**values)
    except (TypeError, ValueError) as exc:
        raise InputError(f"invalid config: {exc}") from None


def _read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: not valid JSON ({exc})") from None


def _write_json(path, data) -> None:
    text = json.dumps(data, indent=2, sort_keys=False, allow_nan=False) + "\n"
    if path is None or str(path) == "-":
        sys.stdout.write(text)
        return
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _load(events, metrics) -> TraceBundle:
    if metrics is not None and not Path(metrics).exists():
        _warn(f"metrics file {metrics} not found; resource features will be missing")
        metrics = None
    elif metrics is None:
        _warn("no metrics file given; resource features will be missing")
    bundle = load_bundle(events, metrics)
    if metrics is not None:
        for node in bundle.nodes_without_metrics:
            _warn(f"node {node} has no metric samples; its resource features will be missing")
    return bundle


def analysis_report(bundle: TraceBundle, cfg: AnalysisConfig, warnings: Sequence[str] = ()) -> dict:
    stages = []
    counts: Counter = Counter()
    n_stragglers = 0
    for stage in prepare(bundle):
        reports = stage.reports(cfg)
        n_stragglers += len(reports)
        for r in reports:
            counts.update(r.cause_features)
        stages.append({
            "stage_id": stage.stage_id,
            "task_count": len(stage.tasks),
            "median_duration": stage.median,
            "stragglers": [r.to_dict() for r in reports],
        })
    return {
        "format_version": ANALYSIS_FORMAT,
        "config": cfg.to_dict(),
        "warnings": list(warnings),
        "stages": stages,
        "summary": {
            "stragglers": n_stragglers,
            "causes": {name: counts[name] for name in sorted(counts)},
        },
    }


def cmd_analyze(args) -> int:
    cfg = resolve_config(args)
    have_metrics = args.metrics is not None and Path(args.metrics).exists()
    bundle = _load(args.events, args.metrics)
    if have_metrics:
        warnings = [f"node {n} has no metric samples" for n in bundle.nodes_without_metrics]
    else:
        warnings = ["no metrics file; resource features are missing"]
    _write_json(args.out, analysis_report(bundle, cfg, warnings))
    return 0


def _spec_from_file(path, seed: Optional[int]) -> tuple[TraceSpec, ResponseModel]:
    data = _read_json(path)
    if not isinstance(data, dict):
        raise InputError(f"{path}: trace spec must be a JSON object")
    data = dict(data)
    if seed is not None:
        data["seed"] = seed
    try:
        response = ResponseModel(**data.pop("response", {}))
        return TraceSpec.from_dict(data), response
    except (KeyError, TypeError) as exc:
        raise InputError(f"{path}: bad trace spec ({exc!r})") from None


def _build(spec: TraceSpec, response: ResponseModel, schedule: GroundTruthSchedule) -> TraceBundle:
    bundle = gen_trace(spec)
    return inject(bundle, schedule, response) if len(schedule) else bundle


def cmd_gen_trace(args) -> int:
    spec, response = _spec_from_file(args.spec, args.seed)
    schedule = load_schedule(args.schedule) if args.schedule else GroundTruthSchedule(())
    bundle = _build(spec, response, schedule)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_bundle(bundle, out / EVENTS_FILE, out / METRICS_FILE)
    save_schedule(schedule, out / TRUTH_FILE)
    return 0


def _methods(flag: str) -> list[Method]:
    return [Method.RULES, Method.PCC] if flag == "both" else [Method(flag)]


def _grids(path) -> dict:
    if not path:
        return dict(DEFAULT_GRIDS)
    data = _read_json(path)
    grids = dict(DEFAULT_GRIDS)
    try:
        for key, raw in data.items():
            grids[Method(key)] = Grid(raw["first"], raw["second"])
    except (AttributeError, KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{path}: bad grid spec ({exc!r})") from None
    return grids


def cmd_evaluate(args) -> int:
    cfg = resolve_config(args)
    bundle = _load(args.events, args.metrics)
    schedule = load_schedule(args.truth)
    truth = label_tasks(bundle, schedule)
    methods = _methods(args.method)
    result = evaluate(bundle, truth, methods, cfg, _grids(args.grid))
    report = {"format_version": EVALUATION_FORMAT, "config": cfg.to_dict(), "methods": result}
    if len(methods) == 2:
        a, b = result["rules"]["auc"], result["pcc"]["auc"]
        report["auc_difference"] = None if a is None or b is None else a - b
    _write_json(args.out, report)
    return 0


def _sweep_sources(args) -> list[tuple[str, TraceBundle, GroundTruthSchedule]]:
    sources = []
    for d in args.bundle or ():
        d = Path(d)
        bundle = load_bundle(d / EVENTS_FILE, d / METRICS_FILE)
        sources.append((str(d), bundle, load_schedule(d / TRUTH_FILE)))
    if args.spec:
        schedule = load_schedule(args.schedule) if args.schedule else GroundTruthSchedule(())
        for seed in args.seed or [None]:
            spec, response = _spec_from_file(args.spec, seed)
            sources.append((f"seed={spec.seed}", _build(spec, response, schedule), schedule))
    elif args.seed or args.schedule:
        raise InputError("--seed and --schedule require --spec")
    if not sources:
        raise InputError("sweep needs at least one --bundle or a --spec")
    return sources


def cmd_sweep(args) -> int:
    cfg = resolve_config(args)
    grids = _grids(args.grid)
    methods = _methods(args.method)
    rows = []
    per_source = {m.value: [] for m in methods}
    for name, bundle, schedule in _sweep_sources(args):
        truth = label_tasks(bundle, schedule)
        stages = prepare(bundle)
        for m in methods:
            try:
                points = roc_sweep(bundle, truth, m, grids[m], cfg, stages=stages)
            except ValueError as exc:
                _warn(f"{name}: {m.value} skipped ({exc})")
                per_source[m.value].append({"source": name, "auc": None})
                continue
            for p in points:
                rows.append([name, m.value, p.thresholds[0], p.thresholds[1], p.fpr, p.tpr])
            per_source[m.value].append({"source": name, "auc": auc(points)})

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "roc.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["source", "method", "threshold_1", "threshold_2", "fpr", "tpr"])
        for row in rows:
            w.writerow([repr(x) if isinstance(x, float) else x for x in row])

    summary = {}
    for m, entries in per_source.items():
        values = [e["auc"] for e in entries if e["auc"] is not None]
        summary[m] = {
            "per_source": entries,
            "mean_auc": math.fsum(values) / len(values) if values else None,
            "grid": grids[Method(m)].to_dict(),
        }
    report = {"format_version": SWEEP_FORMAT, "config": cfg.to_dict(), "methods": summary}
    if len(methods) == 2:
        a, b = summary["rules"]["mean_auc"], summary["pcc"]["mean_auc"]
        report["mean_auc_difference"] = None if a is None or b is None else a - b
    _write_json(out / "auc.json", report)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="straggler-rca", description="Root-cause analysis of straggler tasks.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="explain every straggler in a trace")
    p.add_argument("--events", required=True, help="task event log (JSON lines)")
    p.add_argument("--metrics", help="node metrics CSV")
    p.add_argument("--out", default="-", help="report path, '-' for stdout")
    _add_config_args(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("gen-trace", help="generate a synthetic trace with optional injected anomalies")
    p.add_argument("--spec", required=True, help="trace spec JSON")
    p.add_argument("--schedule", help="anomaly schedule CSV")
    p.add_argument("--seed", type=int, help="seed to use instead of the one in the trace spec file")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_gen_trace)

    p = sub.add_parser("evaluate", help="score the analysis against an anomaly schedule")
    p.add_argument("--events", required=True)
    p.add_argument("--metrics")
    p.add_argument("--truth", required=True, help="anomaly schedule CSV")
    p.add_argument("--method", choices=["rules", "pcc", "both"], default="both")
    p.add_argument("--grid", help="JSON threshold grids keyed by method")
    p.add_argument("--out", default="-")
    _add_config_args(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="ROC sweep over several bundles or seeds")
    p.add_argument("--bundle", action="append", help="directory holding events.jsonl, metrics.csv, truth.csv")
    p.add_argument("--spec", help="trace spec JSON to generate bundles from")
    p.add_argument("--schedule", help="anomaly schedule CSV applied to generated bundles")
    p.add_argument("--seed", type=int, action="append", help="repeatable")
    p.add_argument("--method", choices=["rules", "pcc", "both"], default="both")
    p.add_argument("--grid", help="JSON threshold grids keyed by method")
    p.add_argument("--out-dir", required=True)
    _add_config_args(p)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except AnalysisInvariantError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        # ParseError, ModelError and InputError are ValueErrors
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
