import pytest
from hypothesis import given, settings, strategies as st

from idxtune.engine import VirtualEngine
from idxtune.enumeration import (
    SearchBudget, WhatIfCoster, autoadmin_search, count_subsets, exhaustive_search,
    greedy_search, mcts_search, run_strategy, twophase_search, workload_cost,
)
from idxtune.errors import BudgetExhausted, GuardError
from idxtune.ir import Configuration, IndexDef, Schema, TuningConstraints, Workload
from idxtune.sql import parse_query

from conftest import make_table
from helpers import eight_candidate_fixture, small_instance


@pytest.fixture(scope="module")
def hub():
    """An index helping both queries beats each specialist alone, but not the pair."""
    schema = Schema([make_table("t", 1_000_000, ["a", "b", "c", "x"],
                                distinct={"x": 10, "b": 1000, "c": 1000})])
    W = Workload([parse_query("SELECT a FROM t WHERE x = 1 AND b = 2", schema, "q1"),
                  parse_query("SELECT a FROM t WHERE x = 1 AND c = 2", schema, "q2")])
    cands = [IndexDef("t", ("x",), ("a", "b", "c")), IndexDef("t", ("b",), ("a", "x")),
             IndexDef("t", ("c",), ("a", "x"))]
    return schema, W, cands


def coster(schema):
    return WhatIfCoster(VirtualEngine(schema))


def test_workload_cost(schema):
    W = [parse_query("SELECT a FROM t WHERE b = 5", schema, "q1", weight=2.0)]
    c = coster(schema)
    assert workload_cost(W, Configuration(), c) == pytest.approx(2_000_000)
    assert workload_cost(W, Configuration([IndexDef("t", ("b",))]), c) <= 2_000_000
    assert workload_cost([], Configuration(), c) == 0


def test_greedy_single_candidate(schema):
    W = Workload([parse_query("SELECT a FROM t WHERE b = 5", schema, "q1")])
    r = greedy_search(W, [IndexDef("t", ("b",))], TuningConstraints(), coster(schema))
    assert r.configuration.ids == ("t(b)",) and r.extra["rounds"] == 1


def test_greedy_zero_improvement(schema):
    W = Workload([parse_query("SELECT a FROM t WHERE b = 5", schema, "q1")])
    r = greedy_search(W, [IndexDef("t", ("d",)), IndexDef("t", ("x",))], TuningConstraints(),
                      coster(schema))
    assert len(r.configuration) == 0 and r.improvement == 0


def test_greedy_gap_instance(hub):
    schema, W, cands = hub
    K = TuningConstraints(max_indexes=2)
    g = greedy_search(W, cands, K, coster(schema))
    x = exhaustive_search(W, cands, K, coster(schema))
    assert g.configuration.ids == ("t(b)+(a,x)", "t(x)+(a,b,c)")
    assert x.configuration.ids == ("t(b)+(a,x)", "t(c)+(a,x)")
    assert x.cost_after == pytest.approx(2 * (19.931568569324174 + 1000))
    assert x.improvement > g.improvement
    a = autoadmin_search(W, cands, K, coster(schema))
    assert g.improvement <= a.improvement + 1e-12 <= x.improvement + 1e-12


def test_exhaustive_counts_and_edges():
    schema, W, cands = eight_candidate_fixture()
    assert len(cands) == 8
    r = exhaustive_search(W, cands, TuningConstraints(max_indexes=3), coster(schema))
    assert r.extra["subsets"] == count_subsets(8, 3) == 93
    empty = exhaustive_search(W, cands, TuningConstraints(max_indexes=0), coster(schema))
    assert len(empty.configuration) == 0
    with pytest.raises(GuardError):
        exhaustive_search(W, cands, TuningConstraints(max_indexes=3), coster(schema), guard=50)


def test_exhaustive_dominant_singleton(schema):
    W = Workload([parse_query("SELECT a FROM t WHERE b = 5", schema, "q1")])
    cands = [IndexDef("t", ("b",), ("a",)), IndexDef("t", ("d",)), IndexDef("t", ("x",))]
    r = exhaustive_search(W, cands, TuningConstraints(max_indexes=2), coster(schema))
    assert r.configuration.ids == ("t(b)+(a)",)


def test_autoadmin_single_query_cases():
    schema, W, cands = eight_candidate_fixture()
    one = Workload([W.queries[0]])
    own = [ix for ix in cands if ix.table == "orders" and ix.key_columns == ("customer",)]
    K = TuningConstraints(max_indexes=2)
    a = autoadmin_search(one, cands.subset(ix.id for ix in own), K, coster(schema))
    g = greedy_search(one, [a.configuration.get(i) for i in a.configuration.ids] or own, K,
                      coster(schema))
    assert a.configuration == g.configuration
    full = autoadmin_search(one, cands.subset(ix.id for ix in own), K, coster(schema), m=len(own))
    x = exhaustive_search(one, own, K, coster(schema))
    assert full.cost_after == pytest.approx(x.cost_after)


def test_twophase_cases():
    schema, W, cands = eight_candidate_fixture()
    K = TuningConstraints(max_indexes=3)
    one = Workload([W.queries[2]])
    own = cands.subset(i for i in cands.ids if i.startswith("items"))
    t = twophase_search(one, own, K, coster(schema), p=3)
    g = greedy_search(one, own, K, coster(schema))
    assert t.configuration == g.configuration
    # every query has its own winner on a separate table
    K4 = TuningConstraints(max_indexes=4)
    t = twophase_search(W, cands, K4, coster(schema), p=1)
    assert sorted(ix.table for ix in t.configuration) == ["items", "orders", "orders", "users"]
    assert set(t.configuration.ids) == set(t.extra["winners"])


def test_twophase_exhausted_in_phase_one():
    schema, W, cands = eight_candidate_fixture()
    eng = VirtualEngine(schema)
    # 4 baseline calls, then the first query's two candidates, then one more
    r = twophase_search(W, cands, TuningConstraints(max_indexes=4), WhatIfCoster(eng),
                        SearchBudget(max_whatif_calls=7))
    assert r.budget_exhausted and r.extra["phase"] == 1
    assert eng.accounting.whatif_calls <= 7
    assert r.configuration.ids == ("orders(customer)+(total)",)
    assert r.improvement > 0


def test_mcts_budget_and_determinism():
    db, cands, _, _ = small_instance(5, max_candidates=40)
    K = TuningConstraints(max_indexes=5)
    tiny = VirtualEngine(db.schema)
    budget = SearchBudget(max_whatif_calls=len(db.workload) + 3)
    r = mcts_search(db.workload, cands, K, WhatIfCoster(tiny), budget)
    assert tiny.accounting.whatif_calls <= budget.max_whatif_calls
    assert r.whatif_calls <= budget.max_whatif_calls
    runs = [mcts_search(db.workload, cands, K, WhatIfCoster(VirtualEngine(db.schema)),
                        SearchBudget(max_whatif_calls=200), seed=3) for _ in range(2)]
    assert runs[0].to_dict() == runs[1].to_dict()
    imps = [imp for _, imp in runs[0].trace]
    assert imps == sorted(imps)
    with pytest.raises(ValueError):
        mcts_search(db.workload, cands, K, WhatIfCoster(VirtualEngine(db.schema)), SearchBudget())


def test_budget_too_small_for_baseline():
    schema, W, cands = eight_candidate_fixture()
    with pytest.raises(BudgetExhausted):
        greedy_search(W, cands, TuningConstraints(), coster(schema), SearchBudget(max_whatif_calls=2))


def test_run_strategy_dispatch():
    schema, W, cands = eight_candidate_fixture()
    r = run_strategy("exhaustive", W, cands, TuningConstraints(max_indexes=2), coster(schema))
    assert r.strategy == "exhaustive"
    with pytest.raises(ValueError):
        run_strategy("annealing", W, cands, TuningConstraints(), coster(schema))


def test_storage_constraint():
    schema, W, cands = eight_candidate_fixture()
    cap = 40_000_000
    r = greedy_search(W, cands, TuningConstraints(storage_budget_bytes=cap), coster(schema))
    from idxtune.ir import configuration_size
    assert configuration_size(r.configuration, schema) <= cap


@settings(max_examples=12, deadline=None)
@given(st.integers(0, 500))
def test_exhaustive_dominates(seed):
    db, cands, K, eng = small_instance(seed)
    c = WhatIfCoster(eng)
    best = exhaustive_search(db.workload, cands, K, c).improvement
    for name in ("greedy", "autoadmin", "two-phase"):
        r = run_strategy(name, db.workload, cands, K, c)
        assert r.improvement <= best + 1e-12
        assert len(r.configuration) <= K.max_indexes
