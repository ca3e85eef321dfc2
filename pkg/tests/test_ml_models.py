import math
import random
import statistics

import pytest

from idxtune.bundle import load_bundle
from idxtune.candidates import generate_candidates, generate_syntactic_indexes
from idxtune.engine import VirtualEngine
from idxtune.enumeration import WhatIfCoster, greedy_search
from idxtune.errors import InsufficientData, ModelFormatError
from idxtune.ir import Configuration, IndexDef, TuningConstraints
from idxtune.ml.costmodel import (
    ModelCoster, TemplateCostModel, train_template_cost_model, train_workload_cost_models,
    training_configs,
)
from idxtune.ml.filter import (
    FEATURES, FilterModel, featurize_filter_pair, filter_candidate_set, filter_candidates,
    relative_improvement, train_filter,
)
from idxtune.ml.learners import q_error
from idxtune.ml.qpr import QprModel, build_execution_log, qpr_predict, train_qpr
from idxtune.sql import parse_query
from idxtune.synth import GeneratorSpec, generate

F = {name: i for i, name in enumerate(FEATURES)}


@pytest.fixture(scope="module")
def bundle():
    return load_bundle()


@pytest.fixture(scope="module")
def unseen():
    return generate(GeneratorSpec(seed=9001, queries=80, templates=20))


# -- filter features ------------------------------------------------------------

def _features(schema, sql, index, config=Configuration()):
    q = parse_query(sql, schema)
    base = VirtualEngine(schema).optimize(q, config)
    return featurize_filter_pair(q, index, base, schema)


def test_unselective_lead_key(schema):
    f = _features(schema, "SELECT a FROM t WHERE b = 5 ORDER BY c", IndexDef("t", ("c",)))
    assert f[F["lead_selectivity"]] == 1.0


def test_covering_sole_table(schema):
    f = _features(schema, "SELECT a FROM t WHERE b = 5", IndexDef("t", ("b",), ("a",)))
    assert f[F["covering"]] == 1.0 and f[F["touches"]] == 1.0


def test_order_flag(schema):
    f = _features(schema, "SELECT a FROM t WHERE b = 5 ORDER BY c", IndexDef("t", ("b", "c")))
    assert f[F["provides_order"]] == 1.0
    g = _features(schema, "SELECT a FROM t WHERE b = 5 ORDER BY c", IndexDef("t", ("b", "d")))
    assert g[F["provides_order"]] == 0.0


# -- filter model ---------------------------------------------------------------

def test_pretrained_filter_meets_thresholds(bundle):
    m = bundle.filter.metrics
    assert m["fn_rate"] <= 0.10
    assert m["spurious_pruned_fraction"] >= 0.70
    assert FilterModel.from_dict(bundle.filter.to_dict()).tau_pred == bundle.filter.tau_pred


def _oracle_pairs(db):
    eng = VirtualEngine(db.schema)
    out = []
    for q in db.workload:
        base = eng.optimize(q, Configuration())
        for p in generate_syntactic_indexes(q):
            ri = relative_improvement(base.estimated_cost,
                                      eng.optimize(q, Configuration([p.index])).estimated_cost)
            out.append((p, ri))
    return out


def test_ten_candidate_fixture(bundle, unseen):
    labelled = _oracle_pairs(unseen)
    rng = random.Random(0)
    spurious = rng.sample([p for p, ri in labelled if ri < 0.05], 6)
    useful = rng.sample([p for p, ri in labelled if ri >= 0.05], 4)
    queries = {q.id: q for q in unseen.workload}
    eng = VirtualEngine(unseen.schema)
    baselines = {q.id: eng.optimize(q, Configuration()) for q in unseen.workload}
    calls = eng.accounting.whatif_calls
    kept = filter_candidates(bundle.filter, spurious + useful, queries, baselines, unseen.schema)
    assert eng.accounting.whatif_calls == calls
    assert sum(p not in kept for p in spurious) >= 4
    assert sum(p not in kept for p in useful) <= 1


def test_duplicate_of_existing_index_is_pruned(bundle, unseen):
    eng = VirtualEngine(unseen.schema)
    pruned = total = 0
    for q in list(unseen.workload)[:30]:
        for p in generate_syntactic_indexes(q)[:3]:
            existing = Configuration([p.index])
            base = eng.optimize(q, existing)
            x = featurize_filter_pair(q, p.index, base, unseen.schema)
            total += 1
            pruned += bundle.filter.predict([x])[0] < bundle.filter.tau_pred
    assert pruned / total >= 0.9


def test_filter_pass_through(bundle, unseen):
    queries = {q.id: q for q in unseen.workload}
    eng = VirtualEngine(unseen.schema)
    baselines = {q.id: eng.optimize(q, Configuration()) for q in unseen.workload}
    pairs = generate_syntactic_indexes(unseen.workload.queries[0])
    assert filter_candidates(bundle.filter, [], queries, baselines, unseen.schema) == []
    assert filter_candidates(None, pairs, queries, baselines, unseen.schema) == pairs
    cands = generate_candidates(unseen.workload)
    kept = filter_candidate_set(bundle.filter, cands, queries, baselines, unseen.schema)
    assert set(kept.ids) <= set(cands.ids) and len(kept) < len(cands)


def test_filter_training_small():
    dbs = [generate(GeneratorSpec(seed=s, queries=60, templates=15)) for s in (11, 12, 13)]
    fm = train_filter(dbs)
    assert fm.metrics["fn_rate"] <= 0.10
    with pytest.raises(InsufficientData):
        train_filter(dbs[:2])
    doc = fm.to_dict()
    doc["feature_names"] = doc["feature_names"][:-1]
    with pytest.raises(ModelFormatError):
        FilterModel.from_dict(doc)


# -- cost models ----------------------------------------------------------------

@pytest.fixture(scope="module")
def templated():
    return generate(GeneratorSpec(seed=77, queries=120, templates=6))


def _groups(db):
    out = {}
    for q in db.workload:
        out.setdefault(q.template_id, []).append(q)
    return out


def test_cost_model_quality_and_cap(templated):
    cands = generate_candidates(templated.workload)
    qerrs = []
    for tid, bindings in sorted(_groups(templated).items()):
        eng = VirtualEngine(templated.schema)
        own = sorted({ix.id: ix for q in bindings for ix in cands.for_query(q.id)}.values())
        configs = training_configs(own, seed=1)
        m = train_template_cost_model(bindings, configs, eng)
        assert m.training_call_count <= 50
        assert m.training_call_count == eng.accounting.whatif_calls
        oracle = VirtualEngine(templated.schema)
        # held out: pairs never costed during training
        for q in bindings:
            for c in configs:
                if m.lookup(q, c) is None:
                    qerrs.append(q_error(m.predict(q, c, templated.schema),
                                         oracle.optimize(q, c).estimated_cost))
        # memoized pairs are exact
        for (qid, sig), cost in list(m.memo.items())[:5]:
            q = next(b for b in bindings if b.id == qid)
            c = next(c for c in configs if c.restrict(q.tables).signature == sig)
            assert m.predict(q, c, templated.schema) == cost
    assert statistics.median(qerrs) <= 1.5


def test_degenerate_single_binding(templated):
    q = templated.workload.queries[0]
    m = train_template_cost_model([q], [Configuration()], VirtualEngine(templated.schema))
    assert m.degenerate and m.training_call_count == 0
    with pytest.raises(InsufficientData):
        train_template_cost_model([], [], VirtualEngine(templated.schema))


def test_model_coster_sources(templated):
    eng = VirtualEngine(templated.schema)
    coster = ModelCoster(eng)
    q = templated.workload.queries[0]
    assert coster.cost_or_predict(q, Configuration())[1] == "whatif"
    assert coster.cost_or_predict(q, Configuration())[1] == "cache"

    models = train_workload_cost_models(templated.workload, generate_candidates(templated.workload),
                                        VirtualEngine(templated.schema))
    good = {t: m for t, m in models.items() if m.quality <= 1.5}
    assert good
    eng2 = VirtualEngine(templated.schema)
    coster = ModelCoster(eng2, good)
    for q in templated.workload:
        if q.template_id in good:
            assert coster.cost_or_predict(q, Configuration([IndexDef(q.tables[0], ("c0",))]))[1] \
                == "model"
    assert eng2.accounting.whatif_calls == 0
    again = TemplateCostModel.from_dict(next(iter(good.values())).to_dict())
    assert again.quality <= 1.5


def test_models_save_calls_on_mixed_workload(templated):
    W = templated.workload
    cands = generate_candidates(W)
    K = TuningConstraints(max_indexes=10)
    off = VirtualEngine(templated.schema)
    greedy_search(W, cands, K, WhatIfCoster(off))
    on = VirtualEngine(templated.schema)
    models = train_workload_cost_models(W, cands, on)
    greedy_search(W, cands, K, ModelCoster(on, models))
    assert on.accounting.whatif_calls < off.accounting.whatif_calls


# -- QPR ------------------------------------------------------------------------

def test_pretrained_qpr_metrics(bundle):
    assert bundle.qpr.metrics["recall"] >= 0.8
    assert QprModel.from_dict(bundle.qpr.to_dict()).delta == pytest.approx(0.10)


def test_identical_plans_not_regressions(bundle, unseen):
    eng = VirtualEngine(unseen.schema)
    for q in list(unseen.workload)[:20]:
        r = eng.optimize(q, Configuration())
        p = qpr_predict(bundle.qpr, r, r, math.log2(1e6), eng.execute(q, Configuration(), 0))
        assert not p.regression


def test_noiseless_qpr_is_accurate():
    dbs = [generate(GeneratorSpec(seed=s, queries=60, templates=15)) for s in (21, 22, 23)]
    m = train_qpr(build_execution_log(dbs, sigma=0.0))
    assert m.metrics["accuracy"] >= 0.95
    with pytest.raises(InsufficientData):
        build_execution_log(dbs[:2])
    with pytest.raises(InsufficientData):
        train_qpr([])
