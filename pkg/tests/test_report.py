import copy
import json

import jsonschema
import pytest

from idxtune.report import dumps, headline_from_per_query, strip_timings, validate_report

from helpers import DATA


@pytest.fixture(scope="module")
def golden():
    doc = json.loads((DATA / "eight" / "golden_exhaustive.json").read_text())
    doc["inputs"] = {"workload": "w.sql", "schema": "s.json", "models": None, "engine": None}
    doc["timings"] = {"stages": {"enumerate": 0.01}, "threads": 1}
    return doc


def test_golden_validates(golden):
    validate_report(golden)
    assert golden["recommendation"]["improvement"] == pytest.approx(headline_from_per_query(golden))
    before = sum(r["weight"] * r["before"] for r in golden["per_query"])
    assert before == pytest.approx(golden["recommendation"]["cost_before"])


@pytest.mark.parametrize("path, value", [
    (("report_version",), "1"),
    (("recommendation", "improvement"), 1.5),
    (("per_query",), [{"id": "q1"}]),
    (("calls",), {}),
])
def test_schema_rejects(golden, path, value):
    doc = copy.deepcopy(golden)
    node = doc
    for key in path[:-1]:
        node = node[key]
    node[path[-1]] = value
    with pytest.raises(jsonschema.ValidationError):
        validate_report(doc)


def test_strip_and_dump(golden):
    assert "timings" not in strip_timings(golden)
    text = dumps(golden)
    assert text.endswith("\n") and json.loads(text) == golden
    assert dumps(json.loads(text)) == text


def test_headline_degenerate():
    assert headline_from_per_query({"per_query": []}) == 0.0
