"""Generation strategies: probability-driven, table-wide, cell-by-cell.

The probability-driven path queries the oracle once per *distinct*
context per feature, caches every distribution under its context key, and
samples all rows locally. That is what keeps the oracle call count
constant in the number of rows. The two baselines are kept for
comparison: one prompt for the whole table, or one prompt per cell.

Draw order is fixed so reruns are byte-identical: features are processed
in schema order, rows in row order, and a numeric-range realization draw
follows its row's category draw immediately, all on one PRNG stream.
"""

from __future__ import annotations

import json
import logging
from bisect import bisect_right
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from probtab.distributions import (
    CategoricalDistribution,
    RngState,
    realize_numeric_range,
    validate_and_normalize,
)
from probtab.errors import GenerationError, UnparsableResponse
from probtab.oracle import Oracle, OracleCallLog, OracleConfig, OracleSession
from probtab.prompts import build_cell_prompt, build_distribution_prompt, build_table_prompt
from probtab.schema import (
    ContextKey,
    DatasetSchema,
    FeatureKind,
    FeatureSpec,
    context_key,
    extend_rendered,
)
from probtab.table import Table, write_rows_csv

logger = logging.getLogger(__name__)


class Strategy(str, Enum):
    PROBABILITY_DRIVEN = "probability_driven"
    TABLE_WIDE = "table_wide"
    CELL_BY_CELL = "cell_by_cell"


class DistributionCache:
    """Context-key -> distribution map; each key may be inserted once."""

    def __init__(self):
        self._entries: dict[str, CategoricalDistribution] = {}

    def get(self, key: ContextKey) -> CategoricalDistribution | None:
        return self._entries.get(key.digest)

    def insert(self, key: ContextKey, dist: CategoricalDistribution) -> None:
        if key.digest in self._entries:
            raise GenerationError(f"cache already holds key {key.digest}")
        self._entries[key.digest] = dist

    def __len__(self) -> int:
        return len(self._entries)


@dataclass
class GenerationOptions:
    """Knobs that are not part of the oracle connection settings."""

    max_table_batches: int = 25
    abort_on_row_failure: bool = False  # cell-by-cell: skip failed rows by default


@dataclass
class GenerationRun:
    """One completed (or partially failed) generation with its accounting."""

    strategy: Strategy
    seed: int
    n_requested: int
    table: Table
    call_log: OracleCallLog
    cache_size: int = 0
    failed_rows: int = 0
    shortfall: int = 0
    error: str | None = None

    @property
    def succeeded(self) -> bool:
        return self.error is None

    def report_dict(self) -> dict:
        """Deterministic run metadata; everything the report file carries."""
        return {
            "strategy": self.strategy.value,
            "seed": self.seed,
            "n_requested": self.n_requested,
            "n_rows": self.table.n_rows,
            "call_counts": self.call_log.summary(),
            "invalid_label_cells": self.table.invalid_cell_count,
            "failed_rows": self.failed_rows,
            "shortfall": self.shortfall,
            "error": self.error,
        }


def _fetch_distribution(
    session: OracleSession,
    cache: DistributionCache,
    feature: FeatureSpec,
    ctx_string: str,
    schema: DatasetSchema,
) -> CategoricalDistribution:
    """One distribution fetch request: cache first, oracle on a miss."""
    key = context_key(feature.name, ctx_string)
    cached = cache.get(key)
    if cached is not None:
        session.log.record_cache_hit(feature.name, key.digest)
        return cached
    prompt = build_distribution_prompt(feature, ctx_string, schema)
    raw = session.query_distribution(prompt, feature)
    dist = validate_and_normalize(raw, feature)
    cache.insert(key, dist)
    return dist


def generate_probability_driven(
    schema: DatasetSchema,
    oracle: Oracle,
    n: int,
    seed: int,
    config: OracleConfig | None = None,
    options: GenerationOptions | None = None,
) -> GenerationRun:
    """Ancestral sampling from oracle-estimated conditional distributions.

    Per feature in schema order: a single-category feature is assigned to
    every row with no oracle call; otherwise the distinct contexts across
    the in-progress rows are collected (first-appearance order), one
    distribution is fetched per distinct context, every row samples its
    value from its own context's distribution, numeric ranges are realized,
    and each row's context is extended with the new value.

    Any oracle or validation failure aborts the whole run: rows sharing
    the failed context would otherwise be silently wrong.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = RngState(seed)
    session = OracleSession(oracle, config=config)
    cache = DistributionCache()

    ctx_strings: list[str] = [""]  # context id -> rendered string
    row_ctx = [0] * n
    columns: list[list[str]] = []
    provenance: dict[str, list[int]] = {}
    realized: dict[str, list[int]] = {}

    for feature in schema.features:
        numeric = feature.kind is FeatureKind.NUMERIC_RANGE
        values: list[int] = [0] * n if numeric else []
        if feature.is_single_category:
            label = feature.categories[0]
            column = [label] * n
            provenance[feature.name] = list(row_ctx)
            if numeric:
                for i in range(n):
                    values[i] = realize_numeric_range(label, feature, rng)
            extended: dict[int, int] = {}
            for i in range(n):
                cid = row_ctx[i]
                nid = extended.get(cid)
                if nid is None:
                    ctx_strings.append(extend_rendered(ctx_strings[cid], feature.name, label))
                    nid = len(ctx_strings) - 1
                    extended[cid] = nid
                row_ctx[i] = nid
        else:
            distinct: list[int] = []
            seen: set[int] = set()
            for cid in row_ctx:
                if cid not in seen:
                    seen.add(cid)
                    distinct.append(cid)
            cumulative: dict[int, tuple[float, ...]] = {}
            for cid in distinct:
                dist = _fetch_distribution(session, cache, feature, ctx_strings[cid], schema)
                cumulative[cid] = dist.cumulative
            categories = feature.categories
            top = len(categories) - 1
            column = [""] * n
            prov = [0] * n
            ext: dict[tuple[int, int], int] = {}
            draw = rng.random
            for i in range(n):
                cid = row_ctx[i]
                idx = bisect_right(cumulative[cid], draw())
                if idx > top:
                    idx = top
                label = categories[idx]
                column[i] = label
                prov[i] = cid
                if numeric:
                    values[i] = realize_numeric_range(label, feature, rng)
                ekey = (cid, idx)
                nid = ext.get(ekey)
                if nid is None:
                    ctx_strings.append(extend_rendered(ctx_strings[cid], feature.name, label))
                    nid = len(ctx_strings) - 1
                    ext[ekey] = nid
                row_ctx[i] = nid
            provenance[feature.name] = prov
        columns.append(column)
        if numeric:
            realized[feature.name] = values

    table = Table(
        schema=schema,
        columns=columns,
        realized=realized,
        provenance=provenance,
        context_registry=ctx_strings,
    )
    return GenerationRun(
        strategy=Strategy.PROBABILITY_DRIVEN,
        seed=seed,
        n_requested=n,
        table=table,
        call_log=session.log,
        cache_size=len(cache),
    )


def generate_table_wide(
    schema: DatasetSchema,
    oracle: Oracle,
    n: int,
    seed: int = 0,
    config: OracleConfig | None = None,
    options: GenerationOptions | None = None,
) -> GenerationRun:
    """One prompt for the whole table, re-prompting for any shortfall.

    Each batch asks for the remaining row count. If the oracle keeps
    under-delivering, the run stops at the batch cap and the partial table
    is returned with the shortfall recorded (never silently dropped).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    opts = options or GenerationOptions()
    rng = RngState(seed)
    session = OracleSession(oracle, config=config)

    merged_rows: list[list[str]] = []
    merged_flags: dict[tuple[int, str], str] = {}
    remaining = n
    batches = 0
    while remaining > 0 and batches < opts.max_table_batches:
        prompt = build_table_prompt(schema, remaining)
        part = session.query_table(prompt, schema)
        batches += 1
        take = min(part.n_rows, remaining)
        offset = len(merged_rows)
        for i in range(take):
            merged_rows.append(list(part.row(i)))
        for (r, feature_name), reason in part.flags.items():
            if r < take:
                merged_flags[(r + offset, feature_name)] = reason
        remaining -= take
        if part.n_rows == 0:
            break

    table = Table.from_rows(schema, merged_rows, merged_flags)
    _realize_table(table, rng)
    error = None
    if remaining > 0:
        error = f"received {n - remaining} of {n} requested rows"
        logger.warning("table-wide shortfall: %s", error)
    return GenerationRun(
        strategy=Strategy.TABLE_WIDE,
        seed=seed,
        n_requested=n,
        table=table,
        call_log=session.log,
        shortfall=remaining,
        error=error,
    )


def generate_cell_by_cell(
    schema: DatasetSchema,
    oracle: Oracle,
    n: int,
    seed: int,
    config: OracleConfig | None = None,
    options: GenerationOptions | None = None,
) -> GenerationRun:
    """One prompt per cell, conditioned on the row's earlier cells.

    Single-category features are filled locally. A row whose cell cannot
    be parsed after retries is skipped and tallied by default (or aborts
    the run with abort_on_row_failure); oracle-availability errors always
    abort, since no later row could succeed either.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    opts = options or GenerationOptions()
    rng = RngState(seed)
    session = OracleSession(oracle, config=config)

    ctx_ids: dict[str, int] = {"": 0}
    ctx_strings: list[str] = [""]
    rows: list[list[str]] = []
    prov_rows: list[list[int]] = []
    realized_rows: list[dict[str, int]] = []
    failed_rows = 0

    for _ in range(n):
        context = ""
        row: list[str] = []
        prov: list[int] = []
        row_values: dict[str, int] = {}
        try:
            for feature in schema.features:
                cid = ctx_ids.setdefault(context, len(ctx_strings))
                if cid == len(ctx_strings):
                    ctx_strings.append(context)
                if feature.is_single_category:
                    label = feature.categories[0]
                else:
                    prompt = build_cell_prompt(feature, context, schema)
                    label = session.query_cell(prompt, feature)
                if feature.kind is FeatureKind.NUMERIC_RANGE:
                    row_values[feature.name] = realize_numeric_range(label, feature, rng)
                row.append(label)
                prov.append(cid)
                context = extend_rendered(context, feature.name, label)
        except UnparsableResponse as exc:
            failed_rows += 1
            logger.warning("cell-by-cell row failed: %s", exc)
            if opts.abort_on_row_failure:
                raise GenerationError(f"row aborted: {exc}") from exc
            continue
        rows.append(row)
        prov_rows.append(prov)
        realized_rows.append(row_values)

    table = Table.from_rows(schema, rows)
    table.provenance = {
        f.name: [prov[j] for prov in prov_rows] for j, f in enumerate(schema.features)
    }
    table.context_registry = ctx_strings
    for feature in schema.features:
        if feature.kind is FeatureKind.NUMERIC_RANGE:
            table.realized[feature.name] = [rv[feature.name] for rv in realized_rows]
    return GenerationRun(
        strategy=Strategy.CELL_BY_CELL,
        seed=seed,
        n_requested=n,
        table=table,
        call_log=session.log,
        failed_rows=failed_rows,
    )


def _realize_table(table: Table, rng: RngState) -> None:
    """Realize numeric-range labels row-major; flagged cells draw nothing."""
    for feature in table.schema.features:
        if feature.kind is not FeatureKind.NUMERIC_RANGE:
            continue
        column = table.column(feature.name)
        values = []
        for i, label in enumerate(column):
            if table.is_flagged(i, feature.name):
                values.append(0)
            else:
                values.append(realize_numeric_range(label, feature, rng))
        table.realized[feature.name] = values


# -- run persistence -------------------------------------------------------


def write_table(run: GenerationRun, path: str | Path) -> dict[str, Path]:
    """Write a run's CSV plus its sidecars; returns the written paths.

    Layout next to the CSV: ``<stem>.report`` (JSON run metadata),
    ``<stem>.flags.csv`` (only when cells were flagged), and
    ``<stem>.values.csv`` (only for numeric_range features).
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    written: dict[str, Path] = {"csv": path}
    write_rows_csv(run.table, path)

    report_path = path.with_suffix(".report")
    report_path.write_text(
        json.dumps(run.report_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    written["report"] = report_path

    if run.table.flags:
        flags_path = path.with_suffix(".flags.csv")
        lines = ["row,feature,label,reason"]
        for (row, feature_name) in sorted(run.table.flags):
            label = run.table.column(feature_name)[row]
            reason = run.table.flags[(row, feature_name)]
            lines.append(f"{row},{_csv_quote(feature_name)},{_csv_quote(label)},{reason}")
        flags_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        written["flags"] = flags_path

    if run.table.realized:
        values_path = path.with_suffix(".values.csv")
        names = [f.name for f in run.table.schema.features if f.name in run.table.realized]
        lines = [",".join(_csv_quote(name) for name in names)]
        for i in range(run.table.n_rows):
            lines.append(",".join(str(run.table.realized[name][i]) for name in names))
        values_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        written["values"] = values_path
    return written


def _csv_quote(value: str) -> str:
    if any(c in value for c in ',"\n'):
        return '"' + value.replace('"', '""') + '"'
    return value


def read_report(path: str | Path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


_GENERATORS = {
    Strategy.PROBABILITY_DRIVEN: generate_probability_driven,
    Strategy.TABLE_WIDE: generate_table_wide,
    Strategy.CELL_BY_CELL: generate_cell_by_cell,
}


def generate(
    strategy: Strategy,
    schema: DatasetSchema,
    oracle: Oracle,
    n: int,
    seed: int,
    config: OracleConfig | None = None,
    options: GenerationOptions | None = None,
) -> GenerationRun:
    """Dispatch to the named strategy with a uniform signature."""
    return _GENERATORS[strategy](schema, oracle, n, seed, config=config, options=options)
