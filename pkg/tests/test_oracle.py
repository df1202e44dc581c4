"""Oracle layer: fixtures, HTTP client, retry policy, call accounting."""

from __future__ import annotations

import json

import httpx
import pytest

from probtab.errors import (
    FixtureMissingEntry,
    OracleTransportError,
    OracleUnavailable,
    UnparsableResponse,
)
from probtab.oracle import (
    FixtureOracle,
    HttpOracle,
    OracleConfig,
    OracleSession,
)
from probtab.prompts import (
    build_cell_prompt,
    build_distribution_prompt,
    build_table_prompt,
)
from probtab.schema import FeatureSpec
from tests.conftest import StubOracle


def _no_sleep(_):
    pass


def _session(oracle, max_retries=2, sleeps=None):
    config = OracleConfig(max_retries=max_retries)
    sleep = sleeps.append if sleeps is not None else _no_sleep
    return OracleSession(oracle, config=config, sleep=sleep)


# -- fixture oracle ---------------------------------------------------------


def test_fixture_answers_known_context(california_oracle, california_schema, ethnicity_spec):
    prompt = build_distribution_prompt(
        ethnicity_spec, "State is California/CA. Age Group is 65 and older.", california_schema
    )
    raw = _session(california_oracle).query_distribution(prompt, ethnicity_spec)
    assert raw.entries["White"] == pytest.approx(0.53)


def test_fixture_children_row(california_oracle, california_schema, ethnicity_spec):
    prompt = build_distribution_prompt(
        ethnicity_spec,
        "State is California/CA. Age Group is Children (0-17).",
        california_schema,
    )
    raw = _session(california_oracle).query_distribution(prompt, ethnicity_spec)
    assert raw.entries["Latino"] == pytest.approx(0.519)


def test_fixture_unknown_context(california_oracle, california_schema, ethnicity_spec):
    prompt = build_distribution_prompt(ethnicity_spec, "Age Group is nowhere.", california_schema)
    with pytest.raises(FixtureMissingEntry):
        _session(california_oracle).query_distribution(prompt, ethnicity_spec)


def test_fixture_fail_times_consumes_retries(california_schema, ethnicity_spec):
    data = {
        "distributions": [
            {
                "feature": "Ethnicity Group",
                "context": "",
                "distribution": {"Latino": 0.6, "White": 0.4},
                "fail_times": 1,
            }
        ]
    }
    oracle = FixtureOracle(data)
    session = _session(oracle)
    prompt = build_distribution_prompt(ethnicity_spec, "", california_schema)
    raw = session.query_distribution(prompt, ethnicity_spec)
    assert raw.entries["Latino"] == pytest.approx(0.6)
    assert session.log.retries == 1
    assert [r.outcome for r in session.log.records] == ["parse_error", "ok"]


def test_fixture_cell_modal_and_missing(california_oracle, california_schema, age_spec):
    prompt = build_cell_prompt(age_spec, "State is California/CA.", california_schema)
    label = _session(california_oracle).query_cell(prompt, age_spec)
    assert label == "Prime-working age (25-54)"  # highest-weight age group

    bare = FixtureOracle({"distributions": []})
    with pytest.raises(FixtureMissingEntry):
        _session(bare).query_cell(prompt, age_spec)


def test_fixture_cell_override():
    spec = FeatureSpec(name="F", categories=("A", "B"))
    oracle = FixtureOracle(
        {"cells": {"overrides": [{"feature": "F", "context": "", "label": "B"}]}}
    )
    from probtab.schema import DatasetSchema

    schema = DatasetSchema(features=(spec,))
    prompt = build_cell_prompt(spec, "", schema)
    assert _session(oracle).query_cell(prompt, spec) == "B"


def test_fixture_scripted_tables_in_order(california_schema):
    rows = [{"State": "California/CA", "Age Group": "Children (0-17)", "Ethnicity Group": "Latino"}]
    oracle = FixtureOracle(
        {"tables": {"policy": "scripted", "scripted": [json.dumps(rows), json.dumps(rows * 2)]}}
    )
    session = _session(oracle)
    first = session.query_table(build_table_prompt(california_schema, 3), california_schema)
    second = session.query_table(build_table_prompt(california_schema, 2), california_schema)
    assert (first.n_rows, second.n_rows) == (1, 2)
    with pytest.raises(FixtureMissingEntry):
        session.query_table(build_table_prompt(california_schema, 1), california_schema)


def test_fixture_sampled_tables_deterministic(california_path, california_schema):
    a = FixtureOracle.from_file(california_path)
    b = FixtureOracle.from_file(california_path)
    prompt = build_table_prompt(california_schema, 50)
    assert a.complete(prompt) == b.complete(prompt)


def test_fixture_counts_calls(california_oracle, california_schema, age_spec):
    prompt = build_distribution_prompt(age_spec, "State is California/CA.", california_schema)
    _session(california_oracle).query_distribution(prompt, age_spec)
    assert california_oracle.calls == 1


# -- retry policy ----------------------------------------------------------------


def test_parse_retries_exhaust_to_unparsable(california_schema, age_spec):
    oracle = StubOracle(["no json here", "still nothing", "nope"])
    session = _session(oracle, max_retries=2)
    prompt = build_distribution_prompt(age_spec, "", california_schema)
    with pytest.raises(UnparsableResponse):
        session.query_distribution(prompt, age_spec)
    assert len(oracle.calls) == 3
    assert session.log.retries == 2
    assert session.log.distribution_queries == 1  # one logical query


def test_corrective_follow_up_carries_reason(california_schema, age_spec):
    good = json.dumps({label: 0.2 for label in age_spec.categories})
    oracle = StubOracle(["garbage", good])
    session = _session(oracle)
    session.query_distribution(build_distribution_prompt(age_spec, "", california_schema), age_spec)
    _, follow_ups = oracle.calls[1]
    assert follow_ups[0][0] == "garbage"
    assert "could not be used" in follow_ups[0][1]


def test_validation_failure_retried(california_schema, age_spec):
    bad_mass = json.dumps({label: 0.0 for label in age_spec.categories})
    good = json.dumps({label: 0.2 for label in age_spec.categories})
    oracle = StubOracle([bad_mass, good])
    session = _session(oracle)
    raw = session.query_distribution(
        build_distribution_prompt(age_spec, "", california_schema), age_spec
    )
    assert sum(raw.entries.values()) == pytest.approx(1.0)
    assert session.log.retries == 1


def test_transport_failure_backs_off_then_succeeds(california_schema, age_spec):
    good = json.dumps({label: 0.2 for label in age_spec.categories})
    oracle = StubOracle([OracleTransportError("boom"), OracleTransportError("boom"), good])
    sleeps: list[float] = []
    session = _session(oracle, max_retries=2, sleeps=sleeps)
    session.query_distribution(build_distribution_prompt(age_spec, "", california_schema), age_spec)
    assert sleeps == [1.0, 2.0]  # base 1s, factor 2


def test_transport_failure_exhausts_to_unavailable(california_schema, age_spec):
    oracle = StubOracle([OracleTransportError("boom")] * 3)
    session = _session(oracle, max_retries=2)
    with pytest.raises(OracleUnavailable):
        session.query_distribution(
            build_distribution_prompt(age_spec, "", california_schema), age_spec
        )
    assert [r.outcome for r in session.log.records] == ["transport_error"] * 3


def test_every_attempt_logged_once(california_schema, age_spec):
    good = json.dumps({label: 0.2 for label in age_spec.categories})
    oracle = StubOracle(["bad", OracleTransportError("x"), good])
    session = _session(oracle)
    session.query_distribution(build_distribution_prompt(age_spec, "", california_schema), age_spec)
    assert len(session.log.records) == len(oracle.calls) == 3


def test_log_counters_equal_record_sums(california_schema, age_spec, ethnicity_spec):
    good_age = json.dumps({label: 0.2 for label in age_spec.categories})
    oracle = StubOracle(["bad", good_age, "Children (0-17)"])
    session = _session(oracle)
    session.query_distribution(build_distribution_prompt(age_spec, "", california_schema), age_spec)
    session.query_cell(build_cell_prompt(age_spec, "", california_schema), age_spec)
    session.log.record_cache_hit("Ethnicity Group", "deadbeef")
    log = session.log
    records = log.records
    assert log.distribution_queries == sum(
        1 for r in records if r.kind == "distribution" and r.attempt == 1 and r.outcome != "cache_hit"
    )
    assert log.cell_queries == sum(1 for r in records if r.kind == "cell_by_cell" and r.attempt == 1)
    assert log.retries == sum(1 for r in records if r.attempt > 1)
    assert log.cache_hits == sum(1 for r in records if r.outcome == "cache_hit")
    assert log.summary() == {
        "distribution_queries": 1,
        "cell_queries": 1,
        "table_queries": 0,
        "retries": 1,
        "cache_hits": 1,
    }


# -- HTTP oracle -------------------------------------------------------------------


def _http_oracle(handler, monkeypatch, **config_kwargs) -> HttpOracle:
    monkeypatch.setenv("TEST_API_KEY", "sk-test")
    config = OracleConfig(
        endpoint_url="https://llm.example/v1/chat/completions",
        api_key_source="TEST_API_KEY",
        **config_kwargs,
    )
    return HttpOracle(config, transport=httpx.MockTransport(handler))


def _completion(content: str) -> httpx.Response:
    return httpx.Response(200, json={"choices": [{"message": {"content": content}}]})


def test_http_request_shape(monkeypatch, california_schema, age_spec):
    seen = {}

    def handler(request: httpx.Request) -> httpx.Response:
        seen["auth"] = request.headers.get("authorization")
        seen["body"] = json.loads(request.content)
        return _completion('{"ok": 1}')

    oracle = _http_oracle(handler, monkeypatch, model_name="test-model")
    prompt = build_distribution_prompt(age_spec, "ctx", california_schema)
    text = oracle.complete(prompt)
    assert text == '{"ok": 1}'
    assert seen["auth"] == "Bearer sk-test"
    assert seen["body"]["model"] == "test-model"
    assert seen["body"]["temperature"] == 0.0  # distribution prompts pin temperature
    assert seen["body"]["messages"] == [{"role": "user", "content": prompt.text}]


def test_http_temperature_per_kind(monkeypatch, california_schema, age_spec):
    temps = []

    def handler(request: httpx.Request) -> httpx.Response:
        temps.append(json.loads(request.content)["temperature"])
        return _completion("Children (0-17)")

    oracle = _http_oracle(handler, monkeypatch, temperature=0.7)
    oracle.complete(build_cell_prompt(age_spec, "", california_schema))
    oracle.complete(build_table_prompt(california_schema, 5))
    assert temps == [1.0, 0.7]  # cell fixed at 1.0; table follows config


def test_http_follow_ups_extend_conversation(monkeypatch, california_schema, age_spec):
    bodies = []

    def handler(request: httpx.Request) -> httpx.Response:
        bodies.append(json.loads(request.content))
        return _completion("x")

    oracle = _http_oracle(handler, monkeypatch)
    prompt = build_distribution_prompt(age_spec, "", california_schema)
    oracle.complete(prompt, follow_ups=[("bad reply", "fix it")])
    roles = [m["role"] for m in bodies[0]["messages"]]
    assert roles == ["user", "assistant", "user"]
    assert bodies[0]["messages"][1]["content"] == "bad reply"
    assert bodies[0]["messages"][2]["content"] == "fix it"


def test_http_retryable_status(monkeypatch, california_schema, age_spec):
    def handler(request: httpx.Request) -> httpx.Response:
        return httpx.Response(503, text="overloaded")

    oracle = _http_oracle(handler, monkeypatch)
    with pytest.raises(OracleTransportError):
        oracle.complete(build_distribution_prompt(age_spec, "", california_schema))


def test_http_non_retryable_status(monkeypatch, california_schema, age_spec):
    def handler(request: httpx.Request) -> httpx.Response:
        return httpx.Response(401, text="bad key")

    oracle = _http_oracle(handler, monkeypatch)
    with pytest.raises(OracleUnavailable):
        oracle.complete(build_distribution_prompt(age_spec, "", california_schema))


def test_http_malformed_payload(monkeypatch, california_schema, age_spec):
    def handler(request: httpx.Request) -> httpx.Response:
        return httpx.Response(200, json={"unexpected": True})

    oracle = _http_oracle(handler, monkeypatch)
    with pytest.raises(OracleTransportError):
        oracle.complete(build_distribution_prompt(age_spec, "", california_schema))


def test_http_missing_api_key(monkeypatch, california_schema, age_spec):
    monkeypatch.delenv("MISSING_KEY_VAR", raising=False)
    config = OracleConfig(api_key_source="MISSING_KEY_VAR")
    oracle = HttpOracle(config, transport=httpx.MockTransport(lambda r: _completion("x")))
    with pytest.raises(OracleUnavailable, match="MISSING_KEY_VAR"):
        oracle.complete(build_distribution_prompt(age_spec, "", california_schema))


def test_config_validation():
    with pytest.raises(ValueError):
        OracleConfig(max_retries=-1)
    with pytest.raises(ValueError):
        OracleConfig(timeout=0)
    with pytest.raises(ValueError):
        OracleConfig(max_in_flight=0)
