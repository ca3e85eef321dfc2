import pytest

from idxtune.bundle import load_bundle
from idxtune.engine import DegradedEngine, EngineConfig, VirtualEngine
from idxtune.enumeration import (
    QprGuardedCoster, WhatIfCoster, greedy_search, verify_no_regression, workload_cost,
)
from idxtune.errors import CapabilityError
from idxtune.ir import Configuration, IndexDef, Schema, TuningConstraints, Workload
from idxtune.ml.learners import FittedModel, RegressionLearner
from idxtune.ml.qpr import FEATURES, QprModel
from idxtune.sql import parse_query

from conftest import make_table
from helpers import eight_candidate_fixture


def constant_qpr(log_ratio: float) -> QprModel:
    coef = [log_ratio] + [0.0] * len(FEATURES)
    return QprModel(FittedModel(RegressionLearner("linear_least_squares"), len(FEATURES), coef))


@pytest.fixture
def tuned():
    schema, W, cands = eight_candidate_fixture()
    eng = VirtualEngine(schema)
    r = greedy_search(W, cands, TuningConstraints(max_indexes=4), WhatIfCoster(eng))
    assert len(r.configuration) == 4
    return eng, W, r


def test_no_predicted_regressions_keeps_result(tuned):
    eng, W, r = tuned
    adjusted, report = verify_no_regression(r, constant_qpr(-1.0), eng, W)
    assert adjusted.configuration == r.configuration
    assert adjusted.cost_after == pytest.approx(r.cost_after)
    assert report.vetoed == [] and report.passes == 1


def test_everything_vetoed(tuned):
    eng, W, r = tuned
    adjusted, report = verify_no_regression(r, constant_qpr(2.0), eng, W, policy="strict")
    assert len(adjusted.configuration) == 0 and adjusted.improvement == 0
    assert len(report.vetoed) == 4 and report.passes == 5


def test_net_policy_waives_unprofitable_veto(tuned):
    eng, W, r = tuned
    # predictions scale the measured baseline: a 65% slowdown makes every drop pay
    adjusted, report = verify_no_regression(r, constant_qpr(0.5), eng, W, policy="net")
    assert len(adjusted.configuration) == 0
    # an 11% slowdown does not clear a 50% margin, so it is kept and waived
    small, rep2 = verify_no_regression(r, constant_qpr(0.01 + 0.0953), eng, W, policy="net",
                                       min_gain=0.5)
    assert small.configuration == r.configuration and rep2.waived


def test_planted_lookup_regression():
    # a 30% range through a non-covering index: the estimate beats a scan by
    # 10%, but key lookups run slower than estimated
    schema = Schema([make_table("t", 1_000_000, ["a", "b", "c"], distinct={"b": 1000})])
    W = Workload([parse_query("SELECT a FROM t WHERE c BETWEEN 1 AND 9", schema, "q1",
                              selectivities=[0.3]),
                  parse_query("SELECT a FROM t WHERE b = 4", schema, "q2")])
    eng = VirtualEngine(schema, EngineConfig(noise_sigma=0.25))
    cands = [IndexDef("t", ("c",)), IndexDef("t", ("b",), ("a",))]
    r = greedy_search(W, cands, TuningConstraints(max_indexes=2), WhatIfCoster(eng))
    assert "t(c)" in r.configuration
    q1 = W.queries[0]
    # plant: the first execution seed whose measured runtime regresses > 10% on q1
    seed = next(s for s in range(100)
                if eng.execute(q1, r.configuration, s) > 1.1 * eng.execute(q1, Configuration(), s))
    adjusted, report = verify_no_regression(r, load_bundle().qpr, eng, W, exec_seed=seed)
    assert [v["index"] for v in report.vetoed] == ["t(c)"]
    assert adjusted.configuration.ids == ("t(b)+(a)",)
    measured = lambda c: sum(eng.execute(q, c, seed) for q in W)
    assert measured(adjusted.configuration) <= measured(r.configuration)


def test_requires_plan_descriptors():
    schema, W, cands = eight_candidate_fixture()
    eng = DegradedEngine(schema)
    r = greedy_search(W, cands, TuningConstraints(max_indexes=2), WhatIfCoster(eng))
    with pytest.raises(CapabilityError):
        verify_no_regression(r, constant_qpr(-1.0), eng, W)
    with pytest.raises(CapabilityError):
        QprGuardedCoster(eng, constant_qpr(-1.0))


def test_guarded_coster(tuned):
    eng, W, r = tuned
    guarded = QprGuardedCoster(eng, constant_qpr(2.0))
    base = workload_cost(W, Configuration(), WhatIfCoster(eng))
    assert workload_cost(W, r.configuration, guarded) == pytest.approx(base)
    assert workload_cost(W, r.configuration, QprGuardedCoster(eng, constant_qpr(-2.0))) \
        == pytest.approx(r.cost_after)
