"""Compress a large synthetic workload and forecast its per-template arrivals."""

from idxtune.engine import VirtualEngine
from idxtune.ir import Configuration
from idxtune.synth import GeneratorSpec, generate
from idxtune.workload import bucket_arrivals, compress_workload, forecast_arrivals

db = generate(GeneratorSpec(seed=3, queries=600, templates=12, arrival="periodic:6"))
engine = VirtualEngine(db.schema)
empty = Configuration()
baseline = {q.id: engine.optimize(q, empty).estimated_cost for q in db.workload}
comp = compress_workload(db.workload, db.schema, 20, baseline=baseline)
print(f"kept {len(comp.selected_ids)} of {len(db.workload)} queries")

tid = {q.id: q.template_id for q in db.workload}
stamps = [(tid[r["id"]], r["arrival_ts"]) for r in db.rows]
for t, series in sorted(bucket_arrivals(stamps, 3600.0).items())[:4]:
    print(t, [round(x, 1) for x in forecast_arrivals(series, 6)])
