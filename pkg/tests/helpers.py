"""Shared fixtures for unit and acceptance tests."""

import random
from pathlib import Path

from idxtune.candidates import generate_candidates
from idxtune.engine import VirtualEngine
from idxtune.io import load_schema, load_workload_source, parse_workload
from idxtune.ir import TuningConstraints
from idxtune.synth import GeneratorSpec, generate

DATA = Path(__file__).parent / "data"


def eight_candidate_fixture():
    schema = load_schema(DATA / "eight" / "schema.json")
    W = parse_workload(load_workload_source(DATA / "eight" / "workload.sql"), schema)
    return schema, W, generate_candidates(W)


def small_instance(seed: int, max_candidates: int = 10):
    """A generated oracle-sized instance: <= 10 candidates and K in 1..3."""
    db = generate(GeneratorSpec(seed=seed, queries=8, templates=4, tables=(2, 3)))
    cands = generate_candidates(db.workload)
    rng = random.Random(seed)
    keep = sorted(rng.sample(cands.ids, min(max_candidates, len(cands))))
    constraints = TuningConstraints(max_indexes=1 + seed % 3)
    return db, cands.subset(keep), constraints, VirtualEngine(db.schema)
