import pytest
from hypothesis import given, settings, strategies as st

from idxtune.bundle import load_bundle
from idxtune.engine import DegradedEngine, EngineCapabilities, EngineConfig, VirtualEngine
from idxtune.errors import BudgetExhausted, PlanExecutionError, PlanValidationError
from idxtune.io import source_from_document
from idxtune.planner import (
    Edge, TuningOperator, TuningPlan, TuningRequest, build_plan, minimal_plan, run_plan,
)
from idxtune.report import headline_from_per_query, strip_timings, validate_report
from idxtune.synth import GeneratorSpec, generate

ALL = EngineCapabilities()
NO_PLANS = EngineCapabilities(True, True, False, True)
PIPELINE = ["parse_workload", "collect_stats", "compress", "forecast", "generate_candidates",
            "filter_candidates", "combine", "train_cost_models", "enumerate", "evaluate", "report"]


@pytest.fixture(scope="module")
def db():
    return generate(GeneratorSpec(seed=31, queries=40, templates=8))


def test_full_plan_has_ten_nodes():
    plan = build_plan(TuningRequest(), ALL, n_queries=200)
    assert plan.kinds() == ["parse_workload", "collect_stats", "compress", "generate_candidates",
                            "filter_candidates", "combine", "train_cost_models", "enumerate",
                            "evaluate", "report"]
    assert len(plan.validate()) == 10
    assert TuningPlan.from_dict(plan.to_dict()).to_dict() == plan.to_dict()


def test_capability_gates_with_reasons():
    plan = build_plan(TuningRequest(), NO_PLANS, n_queries=200)
    assert "filter_candidates" not in plan.kinds() and "evaluate" not in plan.kinds()
    reasons = {d["operator"]: d for d in plan.decisions}
    assert not reasons["filter_candidates"]["included"]
    assert "plan descriptors" in reasons["filter_candidates"]["reason"]
    assert "plan descriptors" in reasons["evaluate"]["reason"]
    no_exec = build_plan(TuningRequest(), EngineCapabilities(True, False, True, True), 200)
    assert "evaluate" not in no_exec.kinds() and "filter_candidates" in no_exec.kinds()


def test_compression_gate():
    assert "compress" not in build_plan(TuningRequest(), ALL, n_queries=100).kinds()
    assert "compress" in build_plan(TuningRequest(), ALL, n_queries=101).kinds()
    assert "compress" in build_plan(TuningRequest(compress="isum:5"), ALL, n_queries=10).kinds()
    assert "compress" not in build_plan(TuningRequest(compress="off"), ALL, n_queries=500).kinds()


@pytest.mark.parametrize("request_kwargs, caps", [
    ({"qpr": "require"}, NO_PLANS),
    ({"filter": "require"}, NO_PLANS),
    ({"enumerator": "mcts"}, ALL),
    ({"enumerator": "exhaustive", "what_if_budget": 500}, ALL),
    ({"verify_mode": "per_round", "qpr": "off"}, ALL),
    ({"forecast": "on"}, ALL),
])
def test_contradictions(request_kwargs, caps):
    with pytest.raises(PlanValidationError):
        build_plan(TuningRequest(**request_kwargs), caps, n_queries=10)


def test_invalid_requests():
    with pytest.raises(PlanValidationError):
        TuningRequest(enumerator="annealing")
    with pytest.raises(PlanValidationError):
        TuningRequest(compress="isum:zero")
    with pytest.raises(PlanValidationError):
        TuningRequest.from_mapping({"max_indexs": 3})
    with pytest.raises(BudgetExhausted):
        build_plan(TuningRequest(what_if_budget=5), ALL, n_queries=10)


def test_cycle_rejected_before_execution(db):
    nodes = [TuningOperator("s1", "collect_stats"), TuningOperator("s2", "collect_stats"),
             TuningOperator("r", "report")]
    plan = TuningPlan(nodes, [Edge("s1", "workload", "s2", "workload"),
                              Edge("s2", "workload", "s1", "workload"),
                              Edge("s2", "workload", "r", "workload")])
    with pytest.raises(PlanValidationError, match="cycle"):
        plan.validate()
    with pytest.raises(PlanValidationError):
        run_plan(plan, VirtualEngine(db.schema), db.workload)


def test_port_checks():
    parse, rep = TuningOperator("p", "parse_workload"), TuningOperator("r", "report")
    with pytest.raises(PlanValidationError, match="unbound"):
        TuningPlan([parse, rep], []).validate()
    with pytest.raises(PlanValidationError, match="no output port"):
        TuningPlan([parse, rep], [Edge("p", "nope", "r", "workload")]).validate()
    with pytest.raises(PlanValidationError, match="type mismatch"):
        stats = TuningOperator("s", "collect_stats")
        TuningPlan([parse, stats, rep], [Edge("p", "workload", "s", "workload"),
                                         Edge("s", "baselines", "r", "workload")]).validate()
    with pytest.raises(PlanValidationError, match="duplicate"):
        TuningPlan([parse, TuningOperator("p", "report")], []).validate()
    with pytest.raises(PlanValidationError):
        TuningOperator("x", "teleport")
    with pytest.raises(PlanValidationError):
        TuningOperator("e", "enumerate", {"strategy": "annealing"})


def test_minimal_plan_reports_stats_only(db):
    eng = VirtualEngine(db.schema)
    out = run_plan(minimal_plan(), eng, source_from_document(db.workload_document()))
    assert out.report["recommendation"] is None and out.report["per_query"] == []
    assert out.report["workload"]["queries"] == 40
    assert eng.accounting.whatif_calls == 0


def test_full_run_is_deterministic(db):
    req = TuningRequest(compress="isum:20", seed=3)
    reports = []
    for _ in range(2):
        eng = VirtualEngine(db.schema)
        src = source_from_document(db.workload_document())
        plan = build_plan(req, eng.capabilities(), len(db.workload))
        reports.append(run_plan(plan, eng, src, req, load_bundle()).report)
    assert strip_timings(reports[0]) == strip_timings(reports[1])
    validate_report(reports[0])
    rec = reports[0]["recommendation"]
    assert rec["improvement"] == pytest.approx(headline_from_per_query(reports[0]))
    assert len(reports[0]["per_query"]) == 40


def test_budget_is_respected_end_to_end(db):
    req = TuningRequest(what_if_budget=300, enumerator="mcts")
    eng = VirtualEngine(db.schema)
    plan = build_plan(req, eng.capabilities(), len(db.workload))
    out = run_plan(plan, eng, db.workload, req, load_bundle())
    assert eng.accounting.whatif_calls <= 300
    assert out.report["calls"]["whatif_calls"] <= 300


def test_degraded_engine_run(db):
    eng = DegradedEngine(db.schema)
    req = TuningRequest()
    plan = build_plan(req, eng.capabilities(), len(db.workload))
    out = run_plan(plan, eng, db.workload, req, load_bundle())
    assert out.report["verification"] is None
    assert out.report["recommendation"]["improvement"] > 0


def test_execution_error_carries_artifacts(db):
    req = TuningRequest(cost_models="off")
    eng = VirtualEngine(db.schema)
    plan = build_plan(req, eng.capabilities(), len(db.workload))
    with pytest.raises(PlanExecutionError) as err:
        run_plan(plan, eng, db.workload, req, models=None)  # no filter model loaded
    assert err.value.node_id == "filter_candidates"
    assert "collect_stats" in err.value.artifacts


requests = st.builds(
    TuningRequest,
    enumerator=st.sampled_from(["greedy", "autoadmin", "two-phase", "mcts"]),
    compress=st.sampled_from(["off", "auto", "isum:10"]),
    filter=st.sampled_from(["on", "off"]), cost_models=st.sampled_from(["on", "off"]),
    qpr=st.sampled_from(["on", "off"]), what_if_budget=st.sampled_from([None, 1000, 5000]),
    wall_clock_seconds=st.just(60.0))


@settings(max_examples=150, deadline=None)
@given(requests, st.sampled_from([ALL, NO_PLANS, EngineCapabilities(True, False, False, False)]),
       st.integers(1, 400))
def test_generated_plans_are_valid_dags(req, caps, n):
    if req.what_if_budget is not None and req.what_if_budget < n:
        return
    plan = build_plan(req, caps, n)
    order = plan.validate()
    kinds = [plan.node(i).kind for i in order]
    assert kinds == [k for k in PIPELINE if k in kinds]
    assert {d["operator"] for d in plan.decisions} >= set(kinds)
    assert ("filter_candidates" in kinds) <= caps.supports_plan_descriptor
    assert ("evaluate" in kinds) <= (caps.supports_execution and caps.supports_plan_descriptor)


def test_per_round_verification_run(db):
    req = TuningRequest(verify_mode="per_round", cost_models="off")
    eng = VirtualEngine(db.schema, EngineConfig(noise_sigma=0.25))
    plan = build_plan(req, eng.capabilities(), len(db.workload))
    assert plan.node("enumerate").params["verify_each_round"]
    out = run_plan(plan, eng, db.workload, req, load_bundle())
    validate_report(out.report)
    assert out.report["verification"] is not None
    assert out.report["calls"]["model_served"] == 0
