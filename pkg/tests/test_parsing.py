"""Untrusted response text parsing: fences, prose, drift, bad shapes."""

from __future__ import annotations

import json
import random

import pytest

from probtab.errors import NoJsonFound, NonNumericWeight, NotACategory, SchemaMismatch
from probtab.parsing import (
    extract_first_json,
    parse_cell_response,
    parse_distribution_response,
    parse_table_response,
)
from probtab.schema import DatasetSchema, FeatureSpec
from tests.conftest import CHILDREN_DIST, ETHNICITY_LABELS

ETH_SPEC = FeatureSpec(name="Ethnicity Group", categories=ETHNICITY_LABELS)
AB_SPEC = FeatureSpec(name="F", categories=("A", "B"))
SINGLE_SPEC = FeatureSpec(name="F", categories=("A",))

SCHEMA = DatasetSchema(
    features=(
        FeatureSpec(name="State", categories=("California/CA",)),
        FeatureSpec(name="Ethnicity Group", categories=ETHNICITY_LABELS),
    )
)


# -- distribution responses ---------------------------------------------------


def test_parse_well_formed_distribution():
    text = json.dumps(CHILDREN_DIST)
    raw = parse_distribution_response(text, ETH_SPEC)
    assert raw.entries == pytest.approx(CHILDREN_DIST)
    assert len(raw.entries) == 6


def test_parse_single_category_distribution():
    raw = parse_distribution_response('{"A": 1}', SINGLE_SPEC)
    assert raw.entries == {"A": 1.0}


def test_parse_with_prose_preamble():
    raw = parse_distribution_response('Sure! {"A": 0.5, "B": 0.5}', AB_SPEC)
    assert raw.entries == {"A": 0.5, "B": 0.5}


def test_parse_with_code_fence():
    text = '```json\n{"A": 0.25, "B": 0.75}\n```'
    raw = parse_distribution_response(text, AB_SPEC)
    assert raw.entries == {"A": 0.25, "B": 0.75}


def test_parse_case_drifted_keys_mapped():
    raw = parse_distribution_response('{" latino ": 0.6, "WHITE": 0.4}', ETH_SPEC)
    assert raw.entries == {"Latino": 0.6, "White": 0.4}


def test_parse_same_label_keys_summed():
    raw = parse_distribution_response('{"A": 0.25, " a ": 0.25, "B": 0.5}', AB_SPEC)
    assert raw.entries == {"A": 0.5, "B": 0.5}


def test_unmapped_key_kept_verbatim():
    raw = parse_distribution_response('{"Hispanic": 0.9, "White": 0.1}', ETH_SPEC)
    assert "Hispanic" in raw.entries


def test_non_numeric_weight():
    with pytest.raises(NonNumericWeight):
        parse_distribution_response('{"A": "lots"}', AB_SPEC)
    with pytest.raises(NonNumericWeight):
        parse_distribution_response('{"A": {"p": 0.5}}', AB_SPEC)
    with pytest.raises(NonNumericWeight):
        parse_distribution_response('{"A": true}', AB_SPEC)


def test_no_json_at_all():
    with pytest.raises(NoJsonFound):
        parse_distribution_response("I cannot answer that.", AB_SPEC)


def test_json_array_not_an_object():
    with pytest.raises(NoJsonFound):
        parse_distribution_response("[0.5, 0.5]", AB_SPEC)


def test_serialize_parse_round_trip():
    rng = random.Random(4)
    for _ in range(50):
        entries = {c: round(rng.uniform(0, 1), 6) for c in ETHNICITY_LABELS}
        raw = parse_distribution_response(json.dumps(entries), ETH_SPEC)
        assert raw.entries == entries


# -- cell responses --------------------------------------------------------------


def test_cell_exact():
    assert parse_cell_response("White", ETH_SPEC) == "White"


def test_cell_case_and_whitespace():
    assert parse_cell_response("  latino\n", ETH_SPEC) == "Latino"


def test_cell_quoted_and_fenced():
    assert parse_cell_response('"White"', ETH_SPEC) == "White"
    assert parse_cell_response("```\nBlack\n```", ETH_SPEC) == "Black"


def test_cell_prose_rejected():
    with pytest.raises(NotACategory):
        parse_cell_response("I think White", ETH_SPEC)


# -- table responses ---------------------------------------------------------------


def _rows(n: int) -> list[dict]:
    return [
        {"State": "California/CA", "Ethnicity Group": "Latino"}
        for _ in range(n)
    ]


def test_table_array_of_rows():
    table = parse_table_response(json.dumps(_rows(3)), SCHEMA)
    assert table.n_rows == 3
    assert table.row(0) == ("California/CA", "Latino")
    assert not table.flags


def test_table_off_list_label_flagged():
    rows = _rows(2)
    rows[1]["Ethnicity Group"] = "Hispanic"
    table = parse_table_response(json.dumps(rows), SCHEMA)
    assert table.n_rows == 2
    assert table.flags == {(1, "Ethnicity Group"): "invalid_label"}
    assert table.column("Ethnicity Group")[1] == "Hispanic"  # preserved verbatim


def test_table_truncated_json():
    text = json.dumps(_rows(3))[:-20]
    with pytest.raises(NoJsonFound):
        parse_table_response(text, SCHEMA)


def test_table_columns_object():
    payload = {
        "State": ["California/CA", "California/CA"],
        "Ethnicity Group": ["White", "Black"],
    }
    table = parse_table_response(json.dumps(payload), SCHEMA)
    assert table.n_rows == 2
    assert table.row(1) == ("California/CA", "Black")


def test_table_single_key_wrapper():
    table = parse_table_response(json.dumps({"table": _rows(2)}), SCHEMA)
    assert table.n_rows == 2


def test_table_missing_column():
    rows = [{"State": "California/CA"}]
    with pytest.raises(SchemaMismatch) as err:
        parse_table_response(json.dumps(rows), SCHEMA)
    assert err.value.column == "Ethnicity Group"


def test_table_ragged_columns():
    payload = {"State": ["California/CA"], "Ethnicity Group": ["White", "Black"]}
    with pytest.raises(SchemaMismatch):
        parse_table_response(json.dumps(payload), SCHEMA)


def test_table_case_insensitive_keys_and_labels():
    rows = [{"state": "California/CA", "ethnicity group": "white"}]
    table = parse_table_response(json.dumps(rows), SCHEMA)
    assert table.row(0) == ("California/CA", "White")
    assert not table.flags


def test_table_fenced_with_prose():
    text = "Here is your table:\n```json\n" + json.dumps(_rows(2)) + "\n```\nEnjoy!"
    assert parse_table_response(text, SCHEMA).n_rows == 2


# -- extractor edge cases --------------------------------------------------------


def test_extract_first_of_two_objects():
    assert extract_first_json('{"a": 1} {"b": 2}') == {"a": 1}


def test_extract_nested_braces_in_strings():
    assert extract_first_json('{"a": "b { c }"}') == {"a": "b { c }"}
