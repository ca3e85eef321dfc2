"""Generate a synthetic database, train models on it, then tune it with them."""

import json
import sys
import tempfile
from pathlib import Path

from idxtune.cli import main


def run(*argv):
    code = main([str(a) for a in argv])
    if code:
        sys.exit(code)


with tempfile.TemporaryDirectory() as tmp:
    tmp = Path(tmp)
    run("generate", "--out", tmp / "db", "--seed", 17, "--queries", 150)
    wl, sc = tmp / "db" / "workload.json", tmp / "db" / "schema.json"
    # smaller training databases keep the demo under a minute
    run("train", "--out", tmp / "models", "--seed", 0, "--queries", 120, "--templates", 25,
        "--workload", wl, "--schema", sc)
    run("tune", "--workload", wl, "--schema", sc, "--models", tmp / "models",
        "--max-indexes", 5, "--what-if-budget", 400, "--report", tmp / "report.json")
    rep = json.loads((tmp / "report.json").read_text())

rec = rep["recommendation"]
print(f"{len(rec['indexes'])} indexes, improvement {rec['improvement']:.1%}")
print("calls:", json.dumps(rep["calls"], sort_keys=True))
print("plan:", " -> ".join(n["kind"] for n in rep["plan"]["nodes"]))
