"""Command-line interface: ``idxtune tune | generate | train | forecast``.

Exit codes: 0 success, 2 invalid input or request, 3 budget-infeasible
request, 1 any other failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Any, Sequence

from .engine import DegradedEngine, EngineConfig, VirtualEngine
from .errors import (
    BudgetExhausted,
    IdxTuneError,
    InputError,
    ParseError,
    PlanExecutionError,
    PlanValidationError,
    SchemaError,
)
from .io import arrivals, load_schema, load_workload_source, parse_workload, read_json

EXIT_OK, EXIT_FAILURE, EXIT_INVALID, EXIT_BUDGET = 0, 1, 2, 3

_TUNE_FLAGS = ("workload", "schema", "models", "report", "max_indexes", "storage_mb",
               "what_if_budget", "enumerator", "compress", "filter", "cost_models", "qpr", "seed")
#: config keys that name inputs rather than request settings
_INPUT_KEYS = ("workload", "schema", "models", "report", "engine")


def _load_config(path: str | None) -> dict[str, Any]:
    """A flat config, or a report whose embedded config and inputs are replayed."""
    if path is None:
        return {}
    doc = read_json(path)
    if not isinstance(doc, dict):
        raise InputError("config must be a JSON object", path)
    if "report_version" in doc:
        inputs = {k: v for k, v in (doc.get("inputs") or {}).items() if k != "report"}
        return {**doc.get("config", {}), **inputs}
    return doc


def _resolved(args: argparse.Namespace, names: Sequence[str]) -> dict[str, Any]:
    cfg = _load_config(getattr(args, "config", None))
    for name in names:
        value = getattr(args, name, None)
        if value is not None:
            cfg[name] = value
    return cfg


def make_engine(schema, engine_cfg: dict | None = None):
    engine_cfg = dict(engine_cfg or {})
    degraded = not engine_cfg.pop("plan_descriptors", True)
    try:
        config = EngineConfig(**engine_cfg)
    except TypeError as exc:
        raise PlanValidationError(f"invalid engine config: {exc}") from None
    return (DegradedEngine if degraded else VirtualEngine)(schema, config)


def cmd_tune(args: argparse.Namespace) -> int:
    from .bundle import load_bundle
    from .planner import TuningRequest, build_plan, run_plan
    from .report import dumps, validate_report

    cfg = _resolved(args, _TUNE_FLAGS)
    for key in ("workload", "schema"):
        if key not in cfg:
            raise InputError(f"--{key} is required")
    request_keys = {k: v for k, v in cfg.items() if k not in _INPUT_KEYS}
    request = TuningRequest.from_mapping(request_keys)
    schema = load_schema(cfg["schema"])
    source = load_workload_source(cfg["workload"])
    engine = make_engine(schema, cfg.get("engine"))
    W = parse_workload(source, schema)
    plan = build_plan(request, engine.capabilities(), len(W),
                      has_arrivals=any(r.arrival_ts is not None for r in source.rows))
    if args.explain_plan:
        sys.stdout.write(json.dumps(plan.to_dict(), indent=2, sort_keys=True) + "\n")
        return EXIT_OK
    bundle = load_bundle(cfg.get("models"))
    outcome = run_plan(plan, engine, source, request, bundle)
    report = outcome.report
    report["inputs"] = {k: cfg.get(k) for k in ("workload", "schema", "models", "engine")}
    validate_report(report)
    text = dumps(report)
    if cfg.get("report"):
        Path(cfg["report"]).write_text(text)
    else:
        sys.stdout.write(text)
    rec = report["recommendation"]
    print(f"recommended {len(rec['indexes'])} indexes, estimated improvement "
          f"{rec['improvement']:.1%}, {report['calls']['whatif_calls']} what-if calls",
          file=sys.stderr)
    return EXIT_OK


def _spec_from(cfg: dict):
    from .synth import GeneratorSpec

    known = GeneratorSpec.__dataclass_fields__
    unknown = sorted(set(cfg) - set(known))
    if unknown:
        raise PlanValidationError(f"unknown generator keys: {unknown}")
    try:
        return GeneratorSpec().replace(**cfg)
    except (TypeError, ValueError) as exc:
        raise PlanValidationError(f"invalid generator spec: {exc}") from None


def cmd_generate(args: argparse.Namespace) -> int:
    from .ml.serialize import write_json
    from .synth import generate

    cfg = _resolved(args, ["seed", "queries", "templates", "arrival"])
    cfg.pop("out", None)
    out = Path(args.out)
    db = generate(_spec_from(cfg))
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "schema.json", db.schema.to_dict())
    write_json(out / "workload.json", db.workload_document())
    print(f"wrote {out / 'schema.json'} and {out / 'workload.json'} "
          f"({len(db.workload)} queries)", file=sys.stderr)
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    from .bundle import save_bundle
    from .candidates import generate_candidates
    from .ml.costmodel import train_workload_cost_models
    from .ml.filter import train_filter
    from .ml.qpr import build_execution_log, train_qpr
    from .synth import generate

    cfg = _resolved(args, ["seed", "databases", "queries", "templates"])
    seed = int(cfg.get("seed", 0))
    n = int(cfg.get("databases", 3))
    if n < 3:
        raise PlanValidationError("training needs at least 3 generated databases")
    shape = {"queries": int(cfg.get("queries", 200)), "templates": int(cfg.get("templates", 40))}
    filter_dbs = [generate(_spec_from({"seed": seed + 101 + i, **shape})) for i in range(n)]
    qpr_dbs = [generate(_spec_from({"seed": seed + 201 + i, **shape})) for i in range(n)]
    fm = train_filter(filter_dbs, seed=seed)
    qm = train_qpr(build_execution_log(qpr_dbs, sigma=float(cfg.get("sigma", 0.25)), seed=seed),
                   seed=seed)
    cost_models = None
    if args.workload and args.schema:
        schema = load_schema(args.schema)
        W = parse_workload(load_workload_source(args.workload), schema)
        engine = VirtualEngine(schema)
        cost_models = train_workload_cost_models(W, generate_candidates(W), engine, seed=seed)
    written = save_bundle(args.out, fm, qm, cost_models)
    print(f"filter: fn_rate={fm.metrics['fn_rate']:.3f} spurious pruned="
          f"{fm.metrics['spurious_pruned_fraction']:.3f}; qpr: recall={qm.metrics['recall']:.3f} "
          f"false alarms={qm.metrics['false_alarm_rate']:.3f}", file=sys.stderr)
    for p in written:
        print(f"wrote {p}", file=sys.stderr)
    return EXIT_OK


def cmd_forecast(args: argparse.Namespace) -> int:
    from .workload import bucket_arrivals, forecast_arrivals

    cfg = _resolved(args, ["workload", "schema", "horizon", "bucket_seconds", "out"])
    for key in ("workload", "schema"):
        if key not in cfg:
            raise InputError(f"--{key} is required")
    schema = load_schema(cfg["schema"])
    source = load_workload_source(cfg["workload"])
    W = parse_workload(source, schema)
    stamps = arrivals(source, W)
    if not stamps:
        raise InputError("workload has no arrival_ts fields", cfg["workload"])
    horizon = int(cfg.get("horizon", 24))
    series = bucket_arrivals(stamps, float(cfg.get("bucket_seconds", 3600.0)))
    doc = {"horizon": horizon, "bucket_seconds": float(cfg.get("bucket_seconds", 3600.0)),
           "per_template": {}, "skipped": []}
    for tid, s in series.items():
        try:
            doc["per_template"][tid] = forecast_arrivals(s, horizon)
        except IdxTuneError:
            doc["skipped"].append(tid)
    text = json.dumps(doc, sort_keys=True, indent=2) + "\n"
    if cfg.get("out"):
        Path(cfg["out"]).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _switch(value: str) -> str:
    if value not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected on or off")
    return value


def build_parser() -> argparse.ArgumentParser:
    from .enumeration import STRATEGIES

    p = argparse.ArgumentParser(prog="idxtune", description="Index tuning toolkit.")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("tune", help="recommend indexes for a workload")
    t.add_argument("--workload", help="workload .sql or .json")
    t.add_argument("--schema", help="schema .json with table statistics")
    t.add_argument("--max-indexes", type=int, dest="max_indexes")
    t.add_argument("--storage-mb", type=float, dest="storage_mb")
    t.add_argument("--what-if-budget", type=int, dest="what_if_budget")
    t.add_argument("--enumerator", choices=sorted(STRATEGIES))
    t.add_argument("--compress", help="off | auto | isum:<k>")
    t.add_argument("--filter", type=_switch)
    t.add_argument("--cost-models", type=_switch, dest="cost_models")
    t.add_argument("--qpr", type=_switch)
    t.add_argument("--seed", type=int)
    t.add_argument("--report", help="write the JSON report here (default: stdout)")
    t.add_argument("--explain-plan", action="store_true", help="print the tuning plan and exit")
    t.add_argument("--models", help="directory with filter.json / qpr.json / cost_models.json")
    t.add_argument("--config", help="JSON config (or a previous report to replay)")
    t.set_defaults(func=cmd_tune)

    g = sub.add_parser("generate", help="write a synthetic schema and workload")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--seed", type=int)
    g.add_argument("--queries", type=int)
    g.add_argument("--templates", type=int)
    g.add_argument("--arrival", help="none | periodic:<n> | bursty")
    g.add_argument("--config", help="JSON generator spec")
    g.set_defaults(func=cmd_generate)

    tr = sub.add_parser("train", help="train filter and QPR models (and optional cost models)")
    tr.add_argument("--out", required=True, help="output directory")
    tr.add_argument("--seed", type=int)
    tr.add_argument("--databases", type=int, help="generated databases per model (>= 3)")
    tr.add_argument("--queries", type=int)
    tr.add_argument("--templates", type=int)
    tr.add_argument("--workload", help="also train cost models for this workload")
    tr.add_argument("--schema")
    tr.add_argument("--config")
    tr.set_defaults(func=cmd_train)

    f = sub.add_parser("forecast", help="forecast per-template arrivals")
    f.add_argument("--workload")
    f.add_argument("--schema")
    f.add_argument("--horizon", type=int)
    f.add_argument("--bucket-seconds", type=float, dest="bucket_seconds")
    f.add_argument("--out")
    f.add_argument("--config")
    f.set_defaults(func=cmd_forecast)
    return p


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, PlanExecutionError):
        return _exit_code(exc.cause)
    if isinstance(exc, BudgetExhausted):
        return EXIT_BUDGET
    if isinstance(exc, (InputError, PlanValidationError, ParseError, SchemaError, ValueError)):
        return EXIT_INVALID
    return EXIT_FAILURE


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (IdxTuneError, ValueError) as exc:
        code = _exit_code(exc)
        print(f"idxtune: error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
