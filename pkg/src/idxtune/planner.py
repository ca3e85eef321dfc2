"""The index tuning planner: a typed operator DAG built from capabilities and a request.

``build_plan`` decides which operators a tuning session needs and records a
reason for every inclusion or omission; ``run_plan`` executes the DAG in
topological order, passing typed in-memory artifacts along its edges.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Callable, Mapping

from .candidates import CandidateSet, generate_syntactic_indexes, union_candidates
from .engine import EngineAdapter, EngineCapabilities
from .enumeration import (
    STRATEGIES,
    QprGuardedCoster,
    SearchBudget,
    SearchResult,
    WhatIfCoster,
    run_strategy,
    verify_no_regression,
)
from .errors import BudgetExhausted, IdxTuneError, InsufficientData, PlanExecutionError, PlanValidationError
from .io import WorkloadSource, arrivals, parse_workload
from .ir import Configuration, TuningConstraints, Workload
from .ml.costmodel import ModelCoster, TemplateCostModel, train_workload_cost_models
from .ml.filter import FilterModel, filter_candidates
from .ml.qpr import QprModel
from .workload import bucket_arrivals, compress_workload, forecast_arrivals

_SWITCH = ("on", "off", "require")


@dataclass(frozen=True)
class TuningRequest:
    """A fully resolved tuning request; every field has a default."""

    max_indexes: int = 20
    storage_mb: float | None = None
    what_if_budget: int | None = None
    wall_clock_seconds: float | None = None
    enumerator: str = "greedy"
    #: "off", "auto" (compress when |W| exceeds the threshold) or "isum:<k>"
    compress: str = "auto"
    compress_threshold: int = 100
    #: "on" runs the stage when the engine allows it, "require" fails otherwise
    filter: str = "on"
    cost_models: str = "on"
    qpr: str = "on"
    forecast: str = "off"
    forecast_horizon: int = 24
    forecast_bucket_seconds: float = 3600.0
    verify_policy: str = "net"
    verify_mode: str = "final"
    cost_model_min_bindings: int = 4
    min_improvement_epsilon: float = 0.001
    seed: int = 0
    n_jobs: int = 1
    enumerator_options: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        problems = []
        if self.enumerator not in STRATEGIES:
            problems.append(f"enumerator must be one of {sorted(STRATEGIES)}")
        for name in ("filter", "cost_models", "qpr"):
            if getattr(self, name) not in _SWITCH:
                problems.append(f"{name} must be one of {list(_SWITCH)}")
        if self.forecast not in ("on", "off"):
            problems.append("forecast must be on or off")
        if self.compress not in ("off", "auto") and not (
                self.compress.startswith("isum:") and self.compress[5:].isdigit()
                and int(self.compress[5:]) >= 1):
            problems.append("compress must be off, auto or isum:<k> with k >= 1")
        if self.max_indexes < 0:
            problems.append("max_indexes must be >= 0")
        if self.storage_mb is not None and self.storage_mb < 0:
            problems.append("storage_mb must be >= 0")
        if self.what_if_budget is not None and self.what_if_budget < 1:
            problems.append("what_if_budget must be >= 1")
        if self.verify_policy not in ("net", "strict"):
            problems.append("verify_policy must be net or strict")
        if self.verify_mode not in ("final", "per_round"):
            problems.append("verify_mode must be final or per_round")
        if self.n_jobs < 1:
            problems.append("n_jobs must be >= 1")
        if self.compress_threshold < 1 or self.forecast_horizon < 1:
            problems.append("compress_threshold and forecast_horizon must be >= 1")
        if problems:
            raise PlanValidationError("invalid request: " + "; ".join(problems))

    @classmethod
    def from_mapping(cls, d: Mapping[str, Any]) -> "TuningRequest":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise PlanValidationError(f"unknown request keys: {unknown}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise PlanValidationError(f"invalid request: {exc}") from None

    def to_dict(self) -> dict:
        out = asdict(self)
        out["enumerator_options"] = dict(self.enumerator_options)
        return out

    @property
    def constraints(self) -> TuningConstraints:
        storage = None if self.storage_mb is None else int(self.storage_mb * 1024 * 1024)
        return TuningConstraints(self.max_indexes, storage, self.what_if_budget,
                                 self.min_improvement_epsilon)

    def compress_target(self, n_queries: int) -> int | None:
        """Compressed size, or None when the workload is tuned whole."""
        if self.compress == "off":
            return None
        if self.compress == "auto":
            if n_queries <= self.compress_threshold:
                return None
            return max(20, n_queries // 10)
        k = int(self.compress[5:])
        return k if n_queries > k else None


# ---------------------------------------------------------------------------
# operators and plans

#: kind -> (required inputs, optional inputs, outputs); values are artifact types
KINDS: dict[str, tuple[dict[str, str], dict[str, str], dict[str, str]]] = {
    "parse_workload": ({}, {}, {"workload": "workload"}),
    "collect_stats": ({"workload": "workload"}, {},
                      {"workload": "workload", "baselines": "baselines", "stats": "stats"}),
    "compress": ({"workload": "workload"}, {}, {"workload": "workload", "compression": "compression"}),
    "forecast": ({"workload": "workload"}, {}, {"forecast": "forecast"}),
    "generate_candidates": ({"workload": "workload"}, {}, {"pairs": "pairs"}),
    "filter_candidates": ({"workload": "workload", "pairs": "pairs", "baselines": "baselines"}, {},
                          {"pairs": "pairs"}),
    "combine": ({"pairs": "pairs"}, {}, {"candidates": "candidates"}),
    "train_cost_models": ({"workload": "workload", "candidates": "candidates"}, {},
                          {"models": "models"}),
    "enumerate": ({"workload": "workload", "candidates": "candidates", "target": "workload"},
                  {"models": "models"}, {"result": "result"}),
    "evaluate": ({"result": "result", "workload": "workload"}, {},
                 {"result": "result", "verification": "verification"}),
    "report": ({"workload": "workload"},
               {"stats": "stats", "compression": "compression", "forecast": "forecast",
                "candidates": "candidates", "models": "models", "result": "result",
                "verification": "verification"},
               {"report": "report"}),
}

_PARAMS: dict[str, dict[str, Callable[[Any], bool]]] = {
    "compress": {"k": lambda v: isinstance(v, int) and v >= 1},
    "forecast": {"horizon": lambda v: isinstance(v, int) and v >= 1,
                 "bucket_seconds": lambda v: isinstance(v, (int, float)) and v > 0},
    "generate_candidates": {"max_key_width": lambda v: isinstance(v, int) and v >= 1},
    "train_cost_models": {"min_bindings": lambda v: isinstance(v, int) and v >= 2,
                          "seed": lambda v: isinstance(v, int)},
    "enumerate": {"strategy": lambda v: v in STRATEGIES, "seed": lambda v: isinstance(v, int),
                  "verify_each_round": lambda v: isinstance(v, bool)},
    "evaluate": {"policy": lambda v: v in ("net", "strict"), "exec_seed": lambda v: isinstance(v, int)},
}


@dataclass
class TuningOperator:
    id: str
    kind: str
    params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise PlanValidationError(f"{self.id}: unknown operator kind {self.kind!r}")
        checks = _PARAMS.get(self.kind, {})
        for key, value in self.params.items():
            if key not in checks:
                raise PlanValidationError(f"{self.id}: unknown parameter {key!r} for {self.kind}")
            if not checks[key](value):
                raise PlanValidationError(f"{self.id}: invalid value {value!r} for {key}")

    @property
    def inputs(self) -> dict[str, str]:
        return KINDS[self.kind][0]

    @property
    def optional_inputs(self) -> dict[str, str]:
        return KINDS[self.kind][1]

    @property
    def outputs(self) -> dict[str, str]:
        return KINDS[self.kind][2]


@dataclass(frozen=True)
class Edge:
    src: str
    src_port: str
    dst: str
    dst_port: str


@dataclass
class TuningPlan:
    nodes: list[TuningOperator]
    edges: list[Edge]
    #: one entry per inclusion decision: {"operator", "included", "reason"}
    decisions: list[dict] = field(default_factory=list)

    def node(self, node_id: str) -> TuningOperator:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def kinds(self) -> list[str]:
        return [n.kind for n in self.nodes]

    def validate(self) -> list[str]:
        """Check ports and acyclicity; returns a topological order."""
        by_id: dict[str, TuningOperator] = {}
        for n in self.nodes:
            if n.id in by_id:
                raise PlanValidationError(f"duplicate node id {n.id!r}")
            by_id[n.id] = n
        bound: dict[tuple[str, str], Edge] = {}
        for e in self.edges:
            if e.src not in by_id or e.dst not in by_id:
                raise PlanValidationError(f"edge {e} names an unknown node")
            src, dst = by_id[e.src], by_id[e.dst]
            if e.src_port not in src.outputs:
                raise PlanValidationError(f"{src.id} has no output port {e.src_port!r}")
            ports = {**dst.inputs, **dst.optional_inputs}
            if e.dst_port not in ports:
                raise PlanValidationError(f"{dst.id} has no input port {e.dst_port!r}")
            if src.outputs[e.src_port] != ports[e.dst_port]:
                raise PlanValidationError(
                    f"type mismatch on {e.src}.{e.src_port} -> {e.dst}.{e.dst_port}: "
                    f"{src.outputs[e.src_port]} vs {ports[e.dst_port]}")
            if (e.dst, e.dst_port) in bound:
                raise PlanValidationError(f"{e.dst}.{e.dst_port} is bound more than once")
            bound[(e.dst, e.dst_port)] = e
        for n in self.nodes:
            for port in n.inputs:
                if (n.id, port) not in bound:
                    raise PlanValidationError(f"{n.id}.{port} is unbound")
        # Kahn's algorithm, stable in node-list order
        indeg = {n.id: 0 for n in self.nodes}
        succ: dict[str, list[str]] = {n.id: [] for n in self.nodes}
        for e in self.edges:
            indeg[e.dst] += 1
            succ[e.src].append(e.dst)
        position = {n.id: i for i, n in enumerate(self.nodes)}
        ready = sorted((i for i, d in indeg.items() if d == 0), key=position.get)
        order = []
        while ready:
            nid = ready.pop(0)
            order.append(nid)
            for nxt in succ[nid]:
                indeg[nxt] -= 1
                if indeg[nxt] == 0:
                    ready.append(nxt)
                    ready.sort(key=position.get)
        if len(order) != len(self.nodes):
            stuck = sorted(n for n, d in indeg.items() if d > 0)
            raise PlanValidationError(f"plan has a cycle through {stuck}")
        return order

    def to_dict(self) -> dict:
        return {
            "nodes": [{"id": n.id, "kind": n.kind, "params": n.params} for n in self.nodes],
            "edges": [[e.src, e.src_port, e.dst, e.dst_port] for e in self.edges],
            "decisions": self.decisions,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "TuningPlan":
        try:
            nodes = [TuningOperator(n["id"], n["kind"], dict(n.get("params", {})))
                     for n in d["nodes"]]
            edges = [Edge(*e) for e in d["edges"]]
        except (KeyError, TypeError) as exc:
            raise PlanValidationError(f"malformed plan document: {exc}") from None
        return cls(nodes, edges, list(d.get("decisions", [])))


def build_plan(request: TuningRequest, caps: EngineCapabilities, n_queries: int,
               has_arrivals: bool = False) -> TuningPlan:
    """The default pipeline, gated by capabilities and the request."""
    if not caps.supports_whatif:
        raise PlanValidationError("the engine has no what-if support; nothing can be tuned")
    if request.qpr == "require" and not (caps.supports_execution and caps.supports_plan_descriptor):
        raise PlanValidationError("QPR verification required but the engine lacks "
                                  "execution telemetry or plan descriptors")
    if request.filter == "require" and not caps.supports_plan_descriptor:
        raise PlanValidationError("candidate filtering required but the engine lacks plan descriptors")
    if request.enumerator == "mcts" and request.what_if_budget is None \
            and request.wall_clock_seconds is None:
        raise PlanValidationError("mcts needs a what-if budget or a time limit")
    if request.enumerator == "exhaustive" and request.what_if_budget is not None:
        raise PlanValidationError("exhaustive search does not take a what-if budget")
    if request.verify_mode == "per_round" and request.qpr == "off":
        raise PlanValidationError("per-round verification needs qpr on")
    if request.forecast == "on" and not has_arrivals:
        raise PlanValidationError("forecast requested but the workload has no arrival_ts")
    if request.what_if_budget is not None and request.what_if_budget < n_queries:
        # cannot even cost one baseline plan per query
        raise BudgetExhausted(f"what-if budget {request.what_if_budget} cannot cover the "
                              f"{n_queries} baseline plans")

    nodes: list[TuningOperator] = []
    edges: list[Edge] = []
    decisions: list[dict] = []

    def add(kind: str, params: dict | None = None, **inputs: tuple[str, str]) -> str:
        nid = kind
        nodes.append(TuningOperator(nid, kind, params or {}))
        for port, (src, src_port) in inputs.items():
            edges.append(Edge(src, src_port, nid, port))
        return nid

    def decide(kind: str, included: bool, reason: str) -> bool:
        decisions.append({"operator": kind, "included": included, "reason": reason})
        return included

    decide("parse_workload", True, "always: the workload must be parsed against the schema")
    parse = add("parse_workload")
    decide("collect_stats", True, "always: baseline plans and table statistics feed every stage")
    stats = add("collect_stats", workload=(parse, "workload"))
    tuning = (stats, "workload")

    k = request.compress_target(n_queries)
    if request.compress == "off":
        decide("compress", False, "compression disabled by request")
    elif k is None:
        limit = request.compress_threshold if request.compress == "auto" else request.compress[5:]
        decide("compress", False, f"|W|={n_queries} does not exceed {limit}")
    else:
        decide("compress", True, f"|W|={n_queries} compressed to {k} representative queries")
        tuning = (add("compress", {"k": k}, workload=(stats, "workload")), "workload")

    fc = None
    if decide("forecast", request.forecast == "on",
              "forecast requested" if request.forecast == "on" else "forecast not requested"):
        fc = add("forecast", {"horizon": request.forecast_horizon,
                              "bucket_seconds": request.forecast_bucket_seconds},
                 workload=(parse, "workload"))

    decide("generate_candidates", True, "always: syntactic candidates per query")
    pairs = (add("generate_candidates", workload=tuning), "pairs")
    if request.filter == "off":
        decide("filter_candidates", False, "filter disabled by request")
    elif not caps.supports_plan_descriptor:
        decide("filter_candidates", False, "engine lacks plan descriptors (filter features need them)")
    else:
        decide("filter_candidates", True, "filter enabled and plan descriptors available")
        pairs = (add("filter_candidates", workload=tuning, pairs=pairs,
                     baselines=(stats, "baselines")), "pairs")
    decide("combine", True, "always: union of per-query candidates")
    cands = add("combine", pairs=pairs)

    models = None
    if decide("train_cost_models", request.cost_models != "off",
              "cost models enabled" if request.cost_models != "off"
              else "cost models disabled by request"):
        models = add("train_cost_models", {"min_bindings": request.cost_model_min_bindings,
                                           "seed": request.seed},
                     workload=tuning, candidates=(cands, "candidates"))

    qpr_on = request.qpr != "off" and caps.supports_execution and caps.supports_plan_descriptor
    enum_inputs = {"workload": tuning, "candidates": (cands, "candidates"),
                   "target": (stats, "workload")}
    if models is not None:
        enum_inputs["models"] = (models, "models")
    decide("enumerate", True, f"always: {request.enumerator} search")
    enum = add("enumerate", {"strategy": request.enumerator, "seed": request.seed,
                             "verify_each_round": qpr_on and request.verify_mode == "per_round"},
               **enum_inputs)
    result = (enum, "result")

    verification = None
    if request.qpr == "off":
        decide("evaluate", False, "QPR verification disabled by request")
    elif not caps.supports_execution:
        decide("evaluate", False, "engine lacks execution telemetry (QPR needs it)")
    elif not caps.supports_plan_descriptor:
        decide("evaluate", False, "engine lacks plan descriptors (QPR features need them)")
    else:
        decide("evaluate", True, "QPR verification enabled and the engine supports it")
        ev = add("evaluate", {"policy": request.verify_policy, "exec_seed": request.seed},
                 result=result, workload=(stats, "workload"))
        result, verification = (ev, "result"), (ev, "verification")

    decide("report", True, "always")
    report_inputs = {"workload": (stats, "workload"), "stats": (stats, "stats"),
                     "candidates": (cands, "candidates"), "result": result}
    if tuning[0] != stats:
        report_inputs["compression"] = (tuning[0], "compression")
    if fc is not None:
        report_inputs["forecast"] = (fc, "forecast")
    if models is not None:
        report_inputs["models"] = (models, "models")
    if verification is not None:
        report_inputs["verification"] = verification
    add("report", **report_inputs)
    plan = TuningPlan(nodes, edges, decisions)
    plan.validate()
    return plan


def minimal_plan() -> TuningPlan:
    """parse -> report: workload statistics only, no recommendation."""
    return TuningPlan([TuningOperator("parse_workload", "parse_workload"),
                       TuningOperator("report", "report")],
                      [Edge("parse_workload", "workload", "report", "workload")],
                      [{"operator": "parse_workload", "included": True, "reason": "minimal plan"},
                       {"operator": "report", "included": True, "reason": "minimal plan"}])


# ---------------------------------------------------------------------------
# execution


@dataclass
class ModelBundle:
    filter: FilterModel | None = None
    qpr: QprModel | None = None
    #: pre-trained per-template cost models, used in place of training
    cost_models: dict[str, TemplateCostModel] = field(default_factory=dict)


@dataclass
class RunContext:
    adapter: EngineAdapter
    request: TuningRequest
    source: WorkloadSource | Workload
    models: ModelBundle
    plan: TuningPlan
    calls0: int = 0
    #: accounting snapshot at the start of the run
    start: dict = field(default_factory=dict)
    timings: dict[str, float] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    def calls(self) -> int:
        return self.adapter.accounting.whatif_calls - self.calls0

    def remaining(self) -> int | None:
        b = self.request.what_if_budget
        return None if b is None else b - self.calls()


@dataclass
class StageResult:
    """Typed artifacts a finished run keeps for the report and for diagnosis."""

    artifacts: dict[str, dict[str, Any]]
    report: dict
    order: list[str]


def _op_parse(ctx: RunContext, node: TuningOperator, inp: dict) -> dict:
    src = ctx.source
    if isinstance(src, Workload):
        return {"workload": src}
    return {"workload": parse_workload(src, ctx.adapter.schema)}


def _op_stats(ctx, node, inp):
    W: Workload = inp["workload"]
    baselines = {q.id: ctx.adapter.optimize(q, Configuration()) for q in W}
    tables = sorted({t for q in W for t in q.tables})
    stats = {
        "queries": len(W),
        "templates": len({q.template_id for q in W}),
        "tables": {t: {"rows": ctx.adapter.get_stats(t).rows,
                       "columns": len(ctx.adapter.get_stats(t).columns)} for t in tables},
        "baseline_cost": sum(q.weight * baselines[q.id].estimated_cost for q in W),
    }
    W = Workload(W.queries, {qid: r.estimated_cost for qid, r in baselines.items()})
    return {"workload": W, "baselines": baselines, "stats": stats}


def _op_compress(ctx, node, inp):
    W: Workload = inp["workload"]
    res = compress_workload(W, ctx.adapter.schema, node.params["k"])
    return {"workload": res.workload(W.baseline_cost), "compression": res}


def _op_forecast(ctx, node, inp):
    W: Workload = inp["workload"]
    if not isinstance(ctx.source, WorkloadSource):
        raise InsufficientData("forecasting needs a timestamped workload source")
    series = bucket_arrivals(arrivals(ctx.source, W), node.params.get("bucket_seconds", 3600.0))
    out, skipped = {}, []
    for tid, s in series.items():
        try:
            out[tid] = forecast_arrivals(s, node.params.get("horizon", 24))
        except InsufficientData:
            skipped.append(tid)
    return {"forecast": {"per_template": out, "skipped": skipped}}


def _op_generate(ctx, node, inp):
    width = node.params.get("max_key_width", 3)
    return {"pairs": [p for q in inp["workload"] for p in generate_syntactic_indexes(q, width)]}


def _op_filter(ctx, node, inp):
    W: Workload = inp["workload"]
    model = ctx.models.filter
    if model is None:
        raise InsufficientData("no filter model loaded")
    kept = filter_candidates(model, inp["pairs"], {q.id: q for q in W}, inp["baselines"],
                             ctx.adapter.schema)
    return {"pairs": kept}


def _op_combine(ctx, node, inp):
    return {"candidates": union_candidates(inp["pairs"])}


def _op_train(ctx, node, inp):
    W: Workload = inp["workload"]
    remaining = ctx.remaining()
    templates = {q.template_id for q in W}
    models: dict[str, TemplateCostModel] = {tid: m for tid, m in ctx.models.cost_models.items()
                                            if tid in templates}
    if remaining is not None and remaining <= 2 * len(W):
        ctx.notes.append("cost models skipped: what-if budget too small to pay for training")
        return {"models": models}
    # training may spend at most half of what is left of a budget
    cap = None if remaining is None else remaining // 2
    try:
        with ctx.adapter.budget(cap):
            train_workload_cost_models(W, inp["candidates"], ctx.adapter,
                                       node.params.get("min_bindings", 4),
                                       seed=node.params.get("seed", 0), into=models)
    except BudgetExhausted:
        ctx.notes.append("cost-model training stopped at its share of the what-if budget")
    return {"models": models}


def _op_enumerate(ctx, node, inp):
    W: Workload = inp["workload"]
    target: Workload = inp["target"]
    cands: CandidateSet = inp["candidates"]
    req = ctx.request
    models = inp.get("models")
    baselines = dict(target.baseline_cost or {})
    if models:
        coster = ModelCoster(ctx.adapter, models, baselines=baselines)
    else:
        coster = WhatIfCoster(ctx.adapter)
    if node.params.get("verify_each_round") and ctx.models.qpr is not None:
        # per-round verification costs through the optimizer, bypassing cost models
        coster = QprGuardedCoster(ctx.adapter, ctx.models.qpr, exec_seed=req.seed)
    remaining = ctx.remaining()
    # keep one exact re-costing of the final configuration within the budget
    search_calls = None if remaining is None else max(0, remaining - len(target))
    budget = SearchBudget(search_calls, req.wall_clock_seconds)
    options = dict(req.enumerator_options)
    strategy = node.params.get("strategy", req.enumerator)
    if strategy == "mcts":
        options.setdefault("seed", node.params.get("seed", 0))
    elif strategy != "exhaustive":
        options.setdefault("n_jobs", req.n_jobs)
    if len(cands) == 0:
        config = Configuration()
        found = None
    else:
        found = run_strategy(strategy, W, cands, req.constraints, coster, budget, **options)
        config = found.configuration
    return {"result": _exact_result(ctx, strategy, target, config, found, coster)}


def _exact_result(ctx: RunContext, strategy: str, W: Workload, config: Configuration,
                  found: SearchResult | None, coster) -> SearchResult:
    """Re-cost ``config`` on the full workload with real what-if calls."""
    base = W.baseline_cost
    per_query = {}
    for q in W:
        per_query[q.id] = (base[q.id], ctx.adapter.optimize(q, config).estimated_cost)
    before = sum(q.weight * per_query[q.id][0] for q in W)
    after = sum(q.weight * per_query[q.id][1] for q in W)
    extra: dict[str, Any] = {}
    trace: list = []
    calls, exhausted = 0, False
    if found is not None:
        extra = dict(found.extra)
        extra["search_cost_after"] = found.cost_after
        extra["tuned_queries"] = len(found.per_query)
        trace, calls, exhausted = found.trace, found.whatif_calls, found.budget_exhausted
    if hasattr(coster, "served"):
        extra["served"] = dict(coster.served)
    return SearchResult(strategy, config, before, after, per_query, calls, list(trace),
                        exhausted, extra)


def _op_evaluate(ctx, node, inp):
    result: SearchResult = inp["result"]
    if ctx.models.qpr is None:
        raise InsufficientData("no QPR model loaded")
    try:
        adjusted, rep = verify_no_regression(result, ctx.models.qpr, ctx.adapter, inp["workload"],
                                             exec_seed=node.params.get("exec_seed", 0),
                                             policy=node.params.get("policy", "net"))
    except BudgetExhausted:
        ctx.notes.append("QPR verification stopped by the what-if budget; result unverified")
        return {"result": result, "verification": None}
    return {"result": adjusted, "verification": rep}


def _op_report(ctx, node, inp):
    from .report import build_report
    return {"report": build_report(ctx, inp)}


_OPS: dict[str, Callable[[RunContext, TuningOperator, dict], dict]] = {
    "parse_workload": _op_parse, "collect_stats": _op_stats, "compress": _op_compress,
    "forecast": _op_forecast, "generate_candidates": _op_generate,
    "filter_candidates": _op_filter, "combine": _op_combine, "train_cost_models": _op_train,
    "enumerate": _op_enumerate, "evaluate": _op_evaluate, "report": _op_report,
}


def run_plan(plan: TuningPlan, adapter: EngineAdapter, source: WorkloadSource | Workload,
             request: TuningRequest | None = None, models: ModelBundle | None = None) -> StageResult:
    """Execute ``plan`` in topological order; the report node's output is the result.

    Nodes run one at a time in a fixed order, so the outcome depends only on
    (plan, inputs, seed). A failing node raises PlanExecutionError carrying
    the artifacts of every node that finished before it.
    """
    order = plan.validate()
    request = request or TuningRequest()
    ctx = RunContext(adapter, request, source, models or ModelBundle(), plan,
                     adapter.accounting.whatif_calls, adapter.accounting.snapshot())
    incoming: dict[str, list[Edge]] = {}
    for e in plan.edges:
        incoming.setdefault(e.dst, []).append(e)
    artifacts: dict[str, dict[str, Any]] = {}
    with adapter.budget(request.what_if_budget):
        for nid in order:
            node = plan.node(nid)
            inp = {e.dst_port: artifacts[e.src][e.src_port] for e in incoming.get(nid, [])}
            t0 = time.perf_counter()
            try:
                out = _OPS[node.kind](ctx, node, inp)
            except IdxTuneError as exc:
                raise PlanExecutionError(nid, exc, artifacts) from exc
            except (ValueError, KeyError, TypeError, ArithmeticError) as exc:
                raise PlanExecutionError(nid, exc, artifacts) from exc
            ctx.timings[nid] = time.perf_counter() - t0
            artifacts[nid] = out
    reports = [artifacts[n.id]["report"] for n in plan.nodes if n.kind == "report"]
    return StageResult(artifacts, reports[-1] if reports else {}, order)
