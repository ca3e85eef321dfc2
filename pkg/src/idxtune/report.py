"""Tuning reports: assembly, schema validation and canonical JSON output."""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path
from typing import Any

from .ir import estimate_index_size

REPORT_VERSION = 1
#: sections that legitimately differ between otherwise identical runs
TIMING_FIELDS = ("timings",)


def _recommendation(ctx, result) -> dict:
    schema = ctx.adapter.schema
    indexes = [{"id": ix.id, "ddl": ix.ddl(), **ix.to_dict(),
                "size_bytes": estimate_index_size(ix, schema[ix.table])}
               for ix in result.configuration]
    return {"strategy": result.strategy, "indexes": indexes,
            "cost_before": result.cost_before, "cost_after": result.cost_after,
            "improvement": result.improvement, "budget_exhausted": result.budget_exhausted,
            "trace": [list(t) for t in result.trace]}


def _per_query(ctx, W, result) -> list[dict]:
    peek = getattr(ctx.adapter, "peek", None)
    out = []
    for q in W:
        before, after = result.per_query[q.id]
        used = None
        if peek is not None:
            hit = peek(q, result.configuration)
            if hit is not None and hit.plan is not None:
                used = list(hit.plan.index_ids())
        out.append({"id": q.id, "template_id": q.template_id, "weight": q.weight,
                    "before": before, "after": after, "indexes_used": used})
    return out


def _models(ctx, inp) -> dict:
    out: dict[str, Any] = {}
    if ctx.models.filter is not None and "filter_candidates" in ctx.plan.kinds():
        out["filter"] = {"tau_pred": ctx.models.filter.tau_pred, **ctx.models.filter.metrics}
    if ctx.models.qpr is not None and "evaluate" in ctx.plan.kinds():
        out["qpr"] = {"delta": ctx.models.qpr.delta, **ctx.models.qpr.metrics}
    if inp.get("models") is not None:
        out["cost_models"] = {tid: {"quality": m.quality if m.quality != float("inf") else None,
                                    "training_calls": m.training_call_count,
                                    "degenerate": m.degenerate}
                              for tid, m in sorted(inp["models"].items())}
    return out


def build_report(ctx, inp: dict) -> dict:
    """Assemble the report from a run's artifacts (called by the report node)."""
    W = inp["workload"]
    result = inp.get("result")
    snap = ctx.adapter.accounting.snapshot()
    calls = {k: snap[k] - ctx.start.get(k, 0) for k in snap}
    if result is not None and "served" in result.extra:
        calls["model_served"] = result.extra["served"]["model"]
    else:
        calls["model_served"] = 0
    calls["search_whatif_calls"] = result.whatif_calls if result is not None else 0
    request = ctx.request.to_dict()
    threads = request.pop("n_jobs")
    stats = inp.get("stats") or {"queries": len(W), "templates": len({q.template_id for q in W}),
                                 "tables": {}, "baseline_cost": None}
    comp = inp.get("compression")
    fc = inp.get("forecast")
    ver = inp.get("verification")
    cands = inp.get("candidates")
    return {
        "report_version": REPORT_VERSION,
        "seed": ctx.request.seed,
        "config": request,
        "engine": {"capabilities": ctx.adapter.capabilities().to_dict()},
        "workload": stats,
        "recommendation": _recommendation(ctx, result) if result is not None else None,
        "per_query": _per_query(ctx, W, result) if result is not None else [],
        "calls": calls,
        "candidates": {"count": len(cands)} if cands is not None else None,
        "compression": ({"selected": comp.selected_ids, "assignment": comp.assignment}
                        if comp is not None else None),
        "forecast": fc,
        "models": _models(ctx, inp),
        "verification": ver.to_dict() if ver is not None else None,
        "plan": ctx.plan.to_dict(),
        "notes": list(ctx.notes),
        "timings": {"stages": dict(ctx.timings), "threads": threads},
    }


def headline_from_per_query(report: dict) -> float:
    """The improvement fraction recomputed from per-query entries."""
    before = sum(r["weight"] * r["before"] for r in report["per_query"])
    after = sum(r["weight"] * r["after"] for r in report["per_query"])
    if before <= 0:
        return 0.0
    return min(1.0, max(0.0, (before - after) / before))


def strip_timings(report: dict) -> dict:
    return {k: v for k, v in report.items() if k not in TIMING_FIELDS}


def report_schema() -> dict:
    text = resources.files("idxtune").joinpath("report.schema.json").read_text()
    return json.loads(text)


def validate_report(report: dict) -> None:
    """Raise jsonschema.ValidationError if ``report`` breaks the committed schema."""
    import jsonschema

    jsonschema.validate(report, report_schema())


def dumps(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2) + "\n"


def write_report(path: str | Path, report: dict) -> None:
    Path(path).write_text(dumps(report))
