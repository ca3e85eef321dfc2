"""Tune the bundled eight-query fixture and print the recommendation."""

import json
import sys
import tempfile
from pathlib import Path

from idxtune.cli import main

DATA = Path(__file__).resolve().parent.parent / "tests" / "data" / "eight"

with tempfile.TemporaryDirectory() as tmp:
    out = Path(tmp) / "report.json"
    code = main(["tune", "--workload", str(DATA / "workload.sql"), "--schema", str(DATA / "schema.json"),
                 "--max-indexes", "3", "--report", str(out)])
    if code:
        sys.exit(code)
    rep = json.loads(out.read_text())

rec = rep["recommendation"]
for ix in rec["indexes"]:
    print(ix["ddl"])
print(f"improvement {rec['improvement']:.1%} using {rep['calls']['whatif_calls']} what-if calls")
