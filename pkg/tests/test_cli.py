import json

import pytest

from idxtune.bundle import load_bundle
from idxtune.cli import EXIT_BUDGET, EXIT_INVALID, EXIT_OK, main
from idxtune.report import strip_timings, validate_report

from helpers import DATA

EIGHT = ["--workload", str(DATA / "eight" / "workload.sql"),
         "--schema", str(DATA / "eight" / "schema.json")]


def tune(tmp_path, name, *extra):
    out = tmp_path / name
    assert main(["tune", *EIGHT, "--report", str(out), *extra]) == EXIT_OK
    return json.loads(out.read_text())


def comparable(report):
    doc = strip_timings(report)
    doc.pop("inputs")
    return doc


def test_exhaustive_golden(tmp_path):
    report = tune(tmp_path, "r.json", "--enumerator", "exhaustive", "--max-indexes", "3",
                  "--seed", "42")
    validate_report(report)
    golden = json.loads((DATA / "eight" / "golden_exhaustive.json").read_text())
    assert comparable(report) == golden
    assert [ix["id"] for ix in report["recommendation"]["indexes"]] == [
        "items(sku)+(price)", "orders(customer)+(total)", "orders(status)+(id)"]


def test_same_seed_same_report(tmp_path):
    a = tune(tmp_path, "a.json", "--seed", "42")
    b = tune(tmp_path, "b.json", "--seed", "42")
    assert comparable(a) == comparable(b)


def test_replay_from_report(tmp_path):
    first = tune(tmp_path, "a.json", "--enumerator", "two-phase", "--max-indexes", "2")
    again = tmp_path / "b.json"
    assert main(["tune", "--config", str(tmp_path / "a.json"), "--report", str(again)]) == EXIT_OK
    assert comparable(json.loads(again.read_text())) == comparable(first)


def test_thread_count_does_not_change_report(tmp_path):
    gen = tmp_path / "db"
    assert main(["generate", "--out", str(gen), "--seed", "5", "--queries", "60"]) == EXIT_OK
    reports = []
    for jobs in (1, 4):
        cfg = tmp_path / f"cfg{jobs}.json"
        cfg.write_text(json.dumps({"workload": str(gen / "workload.json"),
                                   "schema": str(gen / "schema.json"), "n_jobs": jobs}))
        out = tmp_path / f"r{jobs}.json"
        assert main(["tune", "--config", str(cfg), "--report", str(out)]) == EXIT_OK
        reports.append(json.loads(out.read_text()))
    assert reports[0]["timings"]["threads"] == 1 and reports[1]["timings"]["threads"] == 4
    assert comparable(reports[0]) == comparable(reports[1])


def test_explain_plan(capsys):
    assert main(["tune", *EIGHT, "--explain-plan"]) == EXIT_OK
    plan = json.loads(capsys.readouterr().out)
    assert [n["kind"] for n in plan["nodes"]][0] == "parse_workload"


def test_exit_codes(tmp_path, capsys):
    assert main(["tune", *EIGHT, "--what-if-budget", "2"]) == EXIT_BUDGET
    assert main(["tune", *EIGHT, "--enumerator", "mcts"]) == EXIT_INVALID
    bad = tmp_path / "bad.sql"
    bad.write_text("SELECT total FROM orders WHERE customer = 1 OR status = 2;")
    assert main(["tune", "--workload", str(bad), "--schema", EIGHT[3]]) == EXIT_INVALID
    assert main(["tune", "--workload", str(tmp_path / "none.sql"), "--schema", EIGHT[3]]) == EXIT_INVALID
    assert main(["generate", "--out", str(tmp_path), "--queries", "0"]) == EXIT_INVALID
    assert main(["train", "--out", str(tmp_path), "--databases", "2"]) == EXIT_INVALID
    err = capsys.readouterr().err
    assert "idxtune: error:" in err and "bad.sql:1:" in err


def test_generate_is_reproducible(tmp_path):
    for d in ("a", "b"):
        assert main(["generate", "--out", str(tmp_path / d), "--seed", "9", "--queries", "50",
                     "--arrival", "periodic:4"]) == EXIT_OK
    for f in ("schema.json", "workload.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    doc = json.loads((tmp_path / "a" / "workload.json").read_text())
    assert len(doc["queries"]) == 50 and all("arrival_ts" in q for q in doc["queries"])


def test_forecast_constant_stream(tmp_path):
    schema = json.loads((DATA / "eight" / "schema.json").read_text())
    (tmp_path / "s.json").write_text(json.dumps(schema))
    rows = [{"id": f"q{h}_{i}", "sql": "SELECT name FROM users WHERE region = 3",
             "arrival_ts": h * 3600.0 + i} for h in range(24) for i in range(5)]
    (tmp_path / "w.json").write_text(json.dumps(rows))
    out = tmp_path / "f.json"
    assert main(["forecast", "--workload", str(tmp_path / "w.json"), "--schema",
                 str(tmp_path / "s.json"), "--horizon", "6", "--out", str(out)]) == EXIT_OK
    doc = json.loads(out.read_text())
    (series,) = doc["per_template"].values()
    assert series == pytest.approx([5.0] * 6, abs=1e-6)


def test_forecast_needs_arrivals():
    assert main(["forecast", *EIGHT]) == EXIT_INVALID


def test_train_meets_thresholds(tmp_path):
    out = tmp_path / "models"
    assert main(["train", "--out", str(out), "--seed", "0"]) == EXIT_OK
    bundle = load_bundle(out)
    assert bundle.filter.metrics["fn_rate"] <= 0.15
    assert bundle.filter.metrics["spurious_pruned_fraction"] >= 0.7
    assert bundle.qpr.metrics["recall"] >= 0.8
    report = tune(tmp_path, "r.json", "--models", str(out))
    assert report["models"]["filter"]["fn_rate"] == bundle.filter.metrics["fn_rate"]
