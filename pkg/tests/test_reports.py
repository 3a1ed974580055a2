"""Deterministic report serialization."""

import json
import math

import numpy as np
import pytest

from fracopt.reports import ReportError, convergence_to_csv, format_float, report_to_json


def test_format_float_roundtrips():
    rng = np.random.default_rng(0)
    for x in rng.standard_normal(50):
        assert float(format_float(float(x))) == float(x)
    assert format_float(0.25) == "0.25"
    assert format_float(float("nan")) == '"nan"'
    assert format_float(float("inf")) == '"inf"'
    assert format_float(float("-inf")) == '"-inf"'


def test_report_json_is_valid_and_ordered():
    doc = {
        "b_first": 1,
        "a_second": [1.5, {"x": 2}],
        "nested": {"flag": True, "skip": None, "text": "hi"},
        "arr": np.array([0.5, 0.25]),
    }
    text = report_to_json(doc)
    assert text.endswith("\n")
    parsed = json.loads(text)
    assert list(parsed) == ["b_first", "a_second", "nested", "arr"]
    assert "skip" not in parsed["nested"]
    assert parsed["arr"] == [0.5, 0.25]
    assert parsed["nested"]["flag"] is True


def test_report_json_deterministic():
    doc = {"v": [1 / 3, 2 / 7], "n": float("nan")}
    assert report_to_json(doc) == report_to_json(doc)
    parsed = json.loads(report_to_json(doc))
    assert parsed["n"] == "nan"  # non-finite values travel as strings


def test_report_json_rejects_nonstring_keys():
    with pytest.raises(ReportError):
        report_to_json({1: "x"})


def test_convergence_csv():
    rows = [{"n": 8, "error": 0.5}, {"n": 16, "error": 0.25, "order": 1.0}]
    text = convergence_to_csv(rows, ["n", "error", "order"])
    lines = text.strip().splitlines()
    assert lines[0] == "# columns: n, error, order"
    assert lines[1] == "8,0.5,"
    assert lines[2] == "16,0.25,1"
    assert convergence_to_csv(rows, ["n", "error", "order"]) == text
