"""Oracle layer: who answers prompts, and how answers are obtained.

Two oracles implement the same one-method interface. ``HttpOracle`` talks
to any OpenAI-compatible chat-completions endpoint. ``FixtureOracle``
answers deterministically from a config file, which is how the whole
pipeline is tested without a network.

``OracleSession`` wraps an oracle with the retry policy and the call log:
parse/validation failures get a corrective follow-up message, transport
failures get exponential backoff, and every transport attempt appends
exactly one log record.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

import httpx

from probtab.distributions import (
    CategoricalDistribution,
    RawDistribution,
    RngState,
    sample,
    validate_and_normalize,
)
from probtab.errors import (
    DistributionError,
    FixtureMissingEntry,
    OracleTransportError,
    OracleUnavailable,
    ResponseParseError,
    SchemaError,
    UnparsableResponse,
)
from probtab.parsing import (
    parse_cell_response,
    parse_distribution_response,
    parse_table_response,
)
from probtab.prompts import Prompt, PromptKind, corrective_message
from probtab.schema import (
    DatasetSchema,
    FeatureSpec,
    context_key,
    extend_rendered,
    load_config_file,
    parse_schema_dict,
)
from probtab.table import Table

logger = logging.getLogger(__name__)

_RETRYABLE_STATUS = {408, 429, 500, 502, 503, 504}


@dataclass
class OracleConfig:
    """Connection and retry settings; the API key only ever comes from an
    environment variable named by ``api_key_source``."""

    endpoint_url: str = "https://api.openai.com/v1/chat/completions"
    model_name: str = "gpt-4o"
    api_key_source: str = "OPENAI_API_KEY"
    max_retries: int = 2
    timeout: float = 30.0
    temperature: float = 1.0
    max_in_flight: int = 4
    backoff_base: float = 1.0
    backoff_factor: float = 2.0

    def __post_init__(self):
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.timeout <= 0:
            raise ValueError("timeout must be > 0")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")


# Distribution prompts want the modal estimate; cell prompts want the model
# to actually sample. Table prompts follow the configured default.
_KIND_TEMPERATURE = {
    PromptKind.DISTRIBUTION: 0.0,
    PromptKind.CELL_BY_CELL: 1.0,
}


@dataclass
class CallRecord:
    """One transport attempt (or cache hit) as seen by the call log."""

    kind: str
    feature: str | None
    context_key: str | None
    attempt: int
    outcome: str  # "ok" | "parse_error" | "transport_error" | "cache_hit"
    latency_s: float = 0.0
    error: str | None = None


class OracleCallLog:
    """Append-only record of every oracle interaction in a run.

    Aggregate counters are derived from the records, so they cannot drift
    out of sync. Appends are lock-protected for concurrent callers.
    """

    def __init__(self):
        self.records: list[CallRecord] = []
        self._lock = threading.Lock()

    def append(self, record: CallRecord) -> None:
        with self._lock:
            self.records.append(record)

    def record_cache_hit(self, feature: str, key_digest: str) -> None:
        self.append(
            CallRecord(
                kind=PromptKind.DISTRIBUTION.value,
                feature=feature,
                context_key=key_digest,
                attempt=0,
                outcome="cache_hit",
            )
        )

    def _count(self, predicate: Callable[[CallRecord], bool]) -> int:
        return sum(1 for r in self.records if predicate(r))

    @property
    def distribution_queries(self) -> int:
        return self._count(
            lambda r: r.kind == PromptKind.DISTRIBUTION.value
            and r.outcome != "cache_hit"
            and r.attempt == 1
        )

    @property
    def cell_queries(self) -> int:
        return self._count(lambda r: r.kind == PromptKind.CELL_BY_CELL.value and r.attempt == 1)

    @property
    def table_queries(self) -> int:
        return self._count(lambda r: r.kind == PromptKind.TABLE_WIDE.value and r.attempt == 1)

    @property
    def retries(self) -> int:
        return self._count(lambda r: r.attempt > 1)

    @property
    def cache_hits(self) -> int:
        return self._count(lambda r: r.outcome == "cache_hit")

    def summary(self) -> dict[str, int]:
        return {
            "distribution_queries": self.distribution_queries,
            "cell_queries": self.cell_queries,
            "table_queries": self.table_queries,
            "retries": self.retries,
            "cache_hits": self.cache_hits,
        }


class Oracle(Protocol):
    """Anything that can answer a prompt with raw response text."""

    def complete(self, prompt: Prompt, follow_ups: Sequence[tuple[str, str]] = ()) -> str:
        """Answer *prompt*. ``follow_ups`` holds prior (bad reply,
        corrective message) pairs from failed parse attempts."""
        ...


# -- HTTP oracle ---------------------------------------------------------


class HttpOracle:
    """OpenAI-compatible chat-completions client.

    One POST per complete() call; no internal retries (the session owns
    the retry policy). A semaphore caps concurrent in-flight requests.
    """

    def __init__(self, config: OracleConfig, transport: httpx.BaseTransport | None = None):
        self.config = config
        self._client = httpx.Client(timeout=config.timeout, transport=transport)
        self._slots = threading.BoundedSemaphore(config.max_in_flight)

    def close(self) -> None:
        self._client.close()

    def _api_key(self) -> str:
        key = os.environ.get(self.config.api_key_source, "")
        if not key:
            raise OracleUnavailable(
                f"environment variable {self.config.api_key_source!r} is not set"
            )
        return key

    def complete(self, prompt: Prompt, follow_ups: Sequence[tuple[str, str]] = ()) -> str:
        messages = [{"role": "user", "content": prompt.text}]
        for reply, corrective in follow_ups:
            messages.append({"role": "assistant", "content": reply})
            messages.append({"role": "user", "content": corrective})
        body = {
            "model": self.config.model_name,
            "messages": messages,
            "temperature": _KIND_TEMPERATURE.get(prompt.kind, self.config.temperature),
        }
        headers = {
            "Authorization": f"Bearer {self._api_key()}",
            "content-type": "application/json",
        }
        try:
            with self._slots:
                response = self._client.post(self.config.endpoint_url, headers=headers, json=body)
        except httpx.HTTPError as exc:
            raise OracleTransportError(f"transport failure: {exc}") from exc
        if response.status_code in _RETRYABLE_STATUS:
            raise OracleTransportError(f"HTTP {response.status_code}")
        if response.status_code != 200:
            raise OracleUnavailable(f"HTTP {response.status_code}: {response.text[:200]}")
        try:
            payload = response.json()
            content = payload["choices"][0]["message"]["content"]
        except (ValueError, LookupError, TypeError) as exc:
            raise OracleTransportError(f"malformed completion payload: {exc}") from exc
        if not isinstance(content, str):
            raise OracleTransportError("completion content is not text")
        return content


# -- fixture oracle --------------------------------------------------------


@dataclass
class _FixtureEntry:
    distribution: dict[str, float]
    fail_times: int = 0
    failures_left: int = field(default=0)

    def __post_init__(self):
        self.failures_left = self.fail_times


class FixtureOracle:
    """Deterministic oracle backed by a config file; performs no transport.

    Distribution prompts are answered by exact (feature, context) lookup,
    re-serialized as a plain JSON object so responses travel the same
    parse path as live ones. Entries may script ``fail_times`` initial
    unparsable replies to exercise the retry loop.

    Cell prompts are answered from explicit overrides, or, when the
    ``cells.policy`` is "modal", with the highest-weight label of the
    matching distribution entry.

    Table prompts are answered from ``tables.scripted`` texts in order,
    or, with ``tables.policy`` "sample", by ancestrally sampling rows from
    the fixture's own distributions with an internal seeded stream.
    """

    def __init__(self, data: dict, name: str = "<fixture>"):
        self.name = name
        self.calls = 0
        self._lock = threading.Lock()
        self._dists: dict[tuple[str, str], _FixtureEntry] = {}
        self._normalized: dict[tuple[str, str], CategoricalDistribution] = {}
        for entry in data.get("distributions", []) or []:
            feature = str(entry["feature"])
            context = str(entry.get("context", entry.get("context_string", "")))
            dist = entry.get("distribution")
            if not isinstance(dist, dict):
                raise SchemaError(f"fixture entry for {feature!r} has no 'distribution' map")
            self._dists[(feature, context)] = _FixtureEntry(
                distribution={str(k): float(v) for k, v in dist.items()},
                fail_times=int(entry.get("fail_times", 0)),
            )
        cells = data.get("cells", {}) or {}
        self._cell_policy = str(cells.get("policy", "none"))
        self._cell_overrides: dict[tuple[str, str], _FixtureEntry] = {}
        for entry in cells.get("overrides", []) or []:
            key = (str(entry["feature"]), str(entry.get("context", entry.get("context_string", ""))))
            self._cell_overrides[key] = _FixtureEntry(
                distribution={str(entry["label"]): 1.0},
                fail_times=int(entry.get("fail_times", 0)),
            )
        tables = data.get("tables", {}) or {}
        self._table_policy = str(tables.get("policy", "none"))
        self._table_scripts: list[str] = [str(t) for t in tables.get("scripted", []) or []]
        self._table_script_idx = 0
        self._rows_per_call = tables.get("rows_per_call")
        self._table_rng = RngState(int(tables.get("seed", 0)))
        self._schema: DatasetSchema | None = None
        if "features" in data:
            self._schema = parse_schema_dict(data)
        if self._table_policy == "sample" and self._schema is None:
            raise SchemaError("tables.policy 'sample' needs schema sections in the fixture")

    @classmethod
    def from_file(cls, path: str | Path) -> "FixtureOracle":
        return cls(load_config_file(path), name=str(path))

    @property
    def schema(self) -> DatasetSchema | None:
        return self._schema

    def complete(self, prompt: Prompt, follow_ups: Sequence[tuple[str, str]] = ()) -> str:
        with self._lock:
            self.calls += 1
            if prompt.kind is PromptKind.DISTRIBUTION:
                return self._answer_distribution(prompt)
            if prompt.kind is PromptKind.CELL_BY_CELL:
                return self._answer_cell(prompt)
            return self._answer_table(prompt)

    # -- per-kind answers ---------------------------------------------

    def _answer_distribution(self, prompt: Prompt) -> str:
        key = (prompt.target_feature or "", prompt.context_text or "")
        entry = self._dists.get(key)
        if entry is None:
            raise FixtureMissingEntry(key[0], key[1], kind="distribution")
        if entry.failures_left > 0:
            entry.failures_left -= 1
            return f"(scripted failure, {entry.failures_left} left)"
        return json.dumps(entry.distribution)

    def _answer_cell(self, prompt: Prompt) -> str:
        key = (prompt.target_feature or "", prompt.context_text or "")
        override = self._cell_overrides.get(key)
        if override is not None:
            if override.failures_left > 0:
                override.failures_left -= 1
                return "(scripted failure)"
            return next(iter(override.distribution))
        if self._cell_policy == "modal":
            entry = self._dists.get(key)
            if entry is not None:
                return max(entry.distribution, key=entry.distribution.__getitem__)
        raise FixtureMissingEntry(key[0], key[1], kind="cell")

    def _answer_table(self, prompt: Prompt) -> str:
        if self._table_policy == "scripted":
            if self._table_script_idx >= len(self._table_scripts):
                raise FixtureMissingEntry("<table>", "", kind="table")
            text = self._table_scripts[self._table_script_idx]
            self._table_script_idx += 1
            return text
        if self._table_policy == "sample":
            n = prompt.sample_size or 0
            if self._rows_per_call:
                n = min(n, int(self._rows_per_call))
            return json.dumps(self._sample_rows(n))
        raise FixtureMissingEntry("<table>", "", kind="table")

    def _sample_rows(self, n: int) -> list[dict[str, str]]:
        assert self._schema is not None
        rows = []
        for _ in range(n):
            context = ""
            row: dict[str, str] = {}
            for feature in self._schema.features:
                if feature.is_single_category:
                    label = feature.categories[0]
                else:
                    label = sample(self._normalized_for(feature, context), self._table_rng)
                row[feature.name] = label
                context = extend_rendered(context, feature.name, label)
            rows.append(row)
        return rows

    def _normalized_for(self, feature: FeatureSpec, context: str) -> CategoricalDistribution:
        key = (feature.name, context)
        cached = self._normalized.get(key)
        if cached is not None:
            return cached
        entry = self._dists.get(key)
        if entry is None:
            raise FixtureMissingEntry(feature.name, context, kind="distribution")
        dist = validate_and_normalize(RawDistribution(dict(entry.distribution)), feature)
        self._normalized[key] = dist
        return dist


def load_fixture(path: str | Path) -> FixtureOracle:
    return FixtureOracle.from_file(path)


# -- querying with retries -------------------------------------------------


class OracleSession:
    """Retry policy + logging around a raw oracle.

    Each query makes up to ``1 + max_retries`` attempts. A parse or
    validation failure is fed back as a corrective follow-up message; a
    transport failure backs off exponentially before the next attempt.
    Every transport attempt appends exactly one call-log record.
    """

    def __init__(
        self,
        oracle: Oracle,
        config: OracleConfig | None = None,
        log: OracleCallLog | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.oracle = oracle
        self.config = config or OracleConfig()
        self.log = log or OracleCallLog()
        self._sleep = sleep

    def query_distribution(self, prompt: Prompt, spec: FeatureSpec) -> RawDistribution:
        """Fetch raw weights for *prompt*; retried until they also validate."""

        def parse(text: str) -> RawDistribution:
            raw = parse_distribution_response(text, spec)
            validate_and_normalize(raw, spec)  # reject here so bad mass is retried
            return raw

        return self._query(prompt, parse)

    def query_cell(self, prompt: Prompt, spec: FeatureSpec) -> str:
        return self._query(prompt, lambda text: parse_cell_response(text, spec))

    def query_table(self, prompt: Prompt, schema: DatasetSchema) -> Table:
        return self._query(prompt, lambda text: parse_table_response(text, schema))

    def _query(self, prompt: Prompt, parse_fn):
        attempts = self.config.max_retries + 1
        follow_ups: list[tuple[str, str]] = []
        digest = None
        if prompt.target_feature is not None:
            digest = context_key(prompt.target_feature, prompt.context_text or "").digest
        last_error: Exception | None = None
        transport_failed = False
        for attempt in range(1, attempts + 1):
            started = time.perf_counter()
            try:
                text = self.oracle.complete(prompt, follow_ups)
            except OracleTransportError as exc:
                self._record(prompt, digest, attempt, "transport_error", started, exc)
                last_error, transport_failed = exc, True
                if attempt < attempts:
                    self._sleep(self.config.backoff_base * self.config.backoff_factor ** (attempt - 1))
                continue
            try:
                result = parse_fn(text)
            except (ResponseParseError, DistributionError) as exc:
                self._record(prompt, digest, attempt, "parse_error", started, exc)
                last_error, transport_failed = exc, False
                follow_ups.append((text, corrective_message(prompt.kind, str(exc))))
                continue
            self._record(prompt, digest, attempt, "ok", started, None)
            return result
        if transport_failed:
            raise OracleUnavailable(
                f"oracle unreachable after {attempts} attempts: {last_error}",
                feature=prompt.target_feature,
                context=prompt.context_text,
            ) from last_error
        raise UnparsableResponse(
            f"no usable response after {attempts} attempts: {last_error}",
            feature=prompt.target_feature,
            context=prompt.context_text,
        ) from last_error

    def _record(self, prompt, digest, attempt, outcome, started, exc) -> None:
        self.log.append(
            CallRecord(
                kind=prompt.kind.value,
                feature=prompt.target_feature,
                context_key=digest,
                attempt=attempt,
                outcome=outcome,
                latency_s=time.perf_counter() - started,
                error=None if exc is None else str(exc),
            )
        )
