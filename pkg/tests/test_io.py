import json

import pytest

from idxtune.errors import InputError
from idxtune.io import load_schema, load_workload_source, parse_workload, read_json

from helpers import DATA


def test_sql_file_positions(tmp_path):
    schema = load_schema(DATA / "eight" / "schema.json")
    src = tmp_path / "w.sql"
    src.write_text("-- header\nSELECT total FROM orders WHERE customer = 1;\n\n"
                   "  SELECT price\n  FROM items WHERE nope = 3;\n")
    with pytest.raises(InputError) as err:
        parse_workload(load_workload_source(src), schema)
    assert (err.value.line, err.value.column) == (5, 20)
    assert str(err.value).startswith(f"{src}:5:20: q2:")


def test_eight_fixture_loads():
    schema = load_schema(DATA / "eight" / "schema.json")
    W = parse_workload(load_workload_source(DATA / "eight" / "workload.sql"), schema)
    assert [q.id for q in W] == ["q1", "q2", "q3", "q4"]


def test_json_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"tables": [\n  {"name": "t",, }]}')
    with pytest.raises(InputError) as err:
        read_json(bad)
    assert err.value.line == 2
    with pytest.raises(InputError, match="cannot read"):
        read_json(tmp_path / "missing.json")


@pytest.mark.parametrize("doc, match", [
    ({"tables": 3}, "tables"),
    ({"tables": [{"name": "t", "columns": []}]}, "rows"),
    ({"tables": [{"name": "t", "rows": 10, "columns": [{"name": "a"}]}]}, "columns\\[0\\]"),
])
def test_schema_validation(tmp_path, doc, match):
    p = tmp_path / "s.json"
    p.write_text(json.dumps(doc))
    with pytest.raises(InputError, match=match):
        load_schema(p)


def test_workload_documents(tmp_path):
    schema = load_schema(DATA / "eight" / "schema.json")
    p = tmp_path / "w.json"
    p.write_text(json.dumps({"queries": [
        {"id": "a", "sql": "SELECT name FROM users WHERE region = 1", "weight": 2.5},
        {"id": "a", "sql": "SELECT name FROM users WHERE region = 2"}]}))
    with pytest.raises(InputError, match="duplicate"):
        parse_workload(load_workload_source(p), schema)
    p.write_text(json.dumps([{"id": "a", "sql": "SELECT x", "weight": "heavy"}]))
    with pytest.raises(InputError, match="numbers"):
        load_workload_source(p)
    p.write_text(json.dumps([{"id": "a", "sql": "SELECT name FROM users WHERE region = 1",
                              "weight": 2.5, "arrival_ts": 10}]))
    W = parse_workload(load_workload_source(p), schema)
    assert W.by_id("a").weight == 2.5
