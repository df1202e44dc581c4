"""Statistical fidelity evaluation: frequency tables, metrics, reports.

Everything here is a pure function over immutable inputs, and every
report renders byte-identically for identical inputs. Percentages are
shown to one decimal place; internal values keep full precision.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass

from scipy.stats import chi2 as _chi2

from probtab.distributions import CategoricalDistribution, RawDistribution, validate_and_normalize
from probtab.errors import (
    AllPooled,
    CategoryMismatch,
    EvaluationError,
    SchemaError,
    ShapeMismatch,
    UnknownFeature,
)
from probtab.schema import Context, DatasetSchema, render_context
from probtab.table import Table

DASH = "−"

# Canonical column order for multi-strategy reports.
_STRATEGY_ORDER = ("probability_driven", "table_wide", "cell_by_cell")


@dataclass(frozen=True)
class FrequencyTable:
    """Per-context percentage breakdown of one target feature.

    ``cells`` maps (context label, target label) -> percent of the
    context's valid rows; a context with no valid rows simply has no
    cells. For a marginal table (no conditioning feature) the single
    context label is "".
    """

    target: str
    given: str | None
    target_categories: tuple[str, ...]
    context_labels: tuple[str, ...]
    cells: dict[tuple[str, str], float]
    support: dict[str, int]
    invalid_cells: int = 0
    total_rows: int = 0

    def shape(self) -> tuple:
        return (self.target, self.given, self.target_categories, self.context_labels)


def conditional_frequencies(table: Table, target: str, given: str | None = None) -> FrequencyTable:
    """Count label frequencies of *target* within each value of *given*.

    Cells flagged invalid are excluded from the denominators and tallied
    in ``invalid_cells``; a row whose conditioning cell is flagged is
    excluded entirely. Contexts that never occur keep support 0 and get
    no cells (rendered as dashes downstream).

    Raises:
        UnknownFeature: If either feature name is not in the schema.
    """
    schema = table.schema
    try:
        target_spec = schema.feature(target)
    except SchemaError as exc:
        raise UnknownFeature(target) from exc
    target_col = table.column(target)
    if given is not None:
        try:
            given_spec = schema.feature(given)
        except SchemaError as exc:
            raise UnknownFeature(given) from exc
        given_col = table.column(given)
        context_labels = tuple(given_spec.categories)
    else:
        given_col = None
        context_labels = ("",)

    counts: dict[tuple[str, str], int] = {}
    support: dict[str, int] = dict.fromkeys(context_labels, 0)
    invalid = 0
    for i in range(table.n_rows):
        if table.is_flagged(i, target):
            invalid += 1
            continue
        if given_col is not None:
            if table.is_flagged(i, given):
                invalid += 1
                continue
            ctx = given_col[i]
        else:
            ctx = ""
        key = (ctx, target_col[i])
        counts[key] = counts.get(key, 0) + 1
        support[ctx] += 1

    cells = {
        (ctx, label): 100.0 * count / support[ctx]
        for (ctx, label), count in counts.items()
    }
    return FrequencyTable(
        target=target,
        given=given,
        target_categories=tuple(target_spec.categories),
        context_labels=context_labels,
        cells=cells,
        support=support,
        invalid_cells=invalid,
        total_rows=table.n_rows,
    )


def total_variation(p: CategoricalDistribution, q: CategoricalDistribution) -> float:
    """Total variation distance: half the L1 gap between the two vectors.

    Raises:
        CategoryMismatch: If the category sets differ.
    """
    if set(p.categories) != set(q.categories):
        raise CategoryMismatch("distributions are over different category sets")
    q_of = dict(zip(q.categories, q.probs))
    return 0.5 * sum(abs(pi - q_of[c]) for c, pi in zip(p.categories, p.probs))


@dataclass(frozen=True)
class ChiSquareResult:
    statistic: float
    dof: int
    pooled: tuple[str, ...]
    pvalue: float

    def passes(self, alpha: float) -> bool:
        return self.pvalue >= alpha


def chi_square_gof(
    observed: dict[str, int], expected: CategoricalDistribution, n: int
) -> ChiSquareResult:
    """Pearson goodness-of-fit of observed counts against *expected*.

    Categories with expected count below 5 are pooled into one bin (and
    that bin merged into the smallest remaining one if it is still below
    5); ``pooled`` names the categories that lost their own bin.

    Raises:
        AllPooled: If pooling leaves fewer than two bins.
        ValueError: If the observed counts do not sum to n.
    """
    if sum(observed.values()) != n:
        raise ValueError("observed counts do not sum to n")
    big: list[tuple[float, float]] = []  # (O, E) bins that stand alone
    pooled_labels: list[str] = []
    pooled_o = 0.0
    pooled_e = 0.0
    for label, prob in zip(expected.categories, expected.probs):
        o = float(observed.get(label, 0))
        e = n * prob
        if e < 5.0:
            pooled_labels.append(label)
            pooled_o += o
            pooled_e += e
        else:
            big.append((o, e))
    bins = list(big)
    if pooled_labels:
        if pooled_e >= 5.0 or not big:
            bins.append((pooled_o, pooled_e))
        else:
            smallest = min(range(len(bins)), key=lambda i: bins[i][1])
            o, e = bins[smallest]
            bins[smallest] = (o + pooled_o, e + pooled_e)
    if len(bins) < 2:
        raise AllPooled("fewer than two testable categories after pooling")
    if any(e <= 0 for _, e in bins):
        raise AllPooled("a pooled bin has zero expectation")
    statistic = sum((o - e) ** 2 / e for o, e in bins)
    dof = len(bins) - 1
    pvalue = float(_chi2.sf(statistic, dof))
    return ChiSquareResult(
        statistic=statistic, dof=dof, pooled=tuple(pooled_labels), pvalue=pvalue
    )


@dataclass(frozen=True)
class CellStat:
    mean: float
    std: float
    count: int


@dataclass(frozen=True)
class RunAggregate:
    """Per-cell mean and sample std across runs of one strategy."""

    shape: tuple
    cells: dict[tuple[str, str], CellStat]
    support_mean: dict[str, float]
    run_count: int
    invalid_mean: float = 0.0
    rows_mean: float = 0.0


def aggregate_runs(tables: list[FrequencyTable]) -> RunAggregate:
    """Aggregate identically-shaped frequency tables cell by cell.

    A cell missing from some runs is averaged over the runs where it is
    present; its ``count`` records that presence. Std is the sample
    (n-1) standard deviation, 0.0 for a single value.

    Raises:
        ShapeMismatch: If the tables disagree on features or categories.
    """
    if not tables:
        raise ShapeMismatch("no tables to aggregate")
    shape = tables[0].shape()
    for t in tables[1:]:
        if t.shape() != shape:
            raise ShapeMismatch(f"table shape {t.shape()!r} != {shape!r}")
    keys: list[tuple[str, str]] = []
    seen = set()
    for t in tables:
        for key in t.cells:
            if key not in seen:
                seen.add(key)
                keys.append(key)
    cells = {}
    for key in keys:
        values = [t.cells[key] for t in tables if key in t.cells]
        mean = statistics.fmean(values)
        std = statistics.stdev(values) if len(values) > 1 else 0.0
        cells[key] = CellStat(mean=mean, std=std, count=len(values))
    support_mean = {
        ctx: statistics.fmean([t.support.get(ctx, 0) for t in tables])
        for ctx in tables[0].context_labels
    }
    return RunAggregate(
        shape=shape,
        cells=cells,
        support_mean=support_mean,
        run_count=len(tables),
        invalid_mean=statistics.fmean([t.invalid_cells for t in tables]),
        rows_mean=statistics.fmean([t.total_rows for t in tables]),
    )


@dataclass
class ComparisonReport:
    """Rendered comparison plus the machine-readable panel data behind it."""

    text: str
    mean_tv: dict[str, float]
    panels: dict[str, list[tuple[str, str, float]]]
    given: str | None
    target: str

    def panel_csv(self, name: str) -> str:
        header = f"{self.given or 'context'},{self.target},percent,strategy"
        lines = [header]
        for ctx, label, percent in self.panels[name]:
            lines.append(f"{_quote(ctx)},{_quote(label)},{percent:.4f},{name}")
        return "\n".join(lines) + "\n"


def _quote(value: str) -> str:
    if any(c in value for c in ',"\n'):
        return '"' + value.replace('"', '""') + '"'
    return value


def _ordered_strategies(names) -> list[str]:
    known = [s for s in _STRATEGY_ORDER if s in names]
    extra = sorted(n for n in names if n not in _STRATEGY_ORDER)
    return known + extra


def comparison_report(
    reference: FrequencyTable,
    aggregates: dict[str, RunAggregate],
    call_summaries: dict[str, dict[str, int]] | None = None,
    failures: dict[str, str] | None = None,
) -> ComparisonReport:
    """Render the side-by-side table: reference column plus one per strategy.

    Each strategy cell shows "mean ± std" over its runs; contexts a
    strategy never produced show a dash. Also computes each strategy's
    mean total-variation distance from the reference across contexts, and
    appends per-strategy oracle call counts when provided.

    Raises:
        ShapeMismatch: If an aggregate's shape differs from the reference's.
    """
    ref_shape = reference.shape()
    for name, agg in aggregates.items():
        if agg.shape != ref_shape:
            raise ShapeMismatch(f"strategy {name!r} shape differs from reference")
    strategies = _ordered_strategies(aggregates)
    ctx_header = reference.given or "context"

    header = [ctx_header, reference.target, "reference"] + strategies
    rows: list[list[str]] = []
    for ctx in reference.context_labels:
        for label in reference.target_categories:
            key = (ctx, label)
            row = [ctx, label]
            ref_cell = reference.cells.get(key)
            row.append(DASH if ref_cell is None else f"{ref_cell:.1f}")
            for name in strategies:
                stat = aggregates[name].cells.get(key)
                if stat is None:
                    row.append(DASH)
                elif aggregates[name].run_count > 1:
                    row.append(f"{stat.mean:.1f} ± {stat.std:.1f}")
                else:
                    row.append(f"{stat.mean:.1f}")
            rows.append(row)

    mean_tv = {
        name: _mean_tv(reference, aggregates[name]) for name in strategies
    }
    panels: dict[str, list[tuple[str, str, float]]] = {
        "reference": [
            (ctx, label, reference.cells[(ctx, label)])
            for ctx in reference.context_labels
            for label in reference.target_categories
            if (ctx, label) in reference.cells
        ]
    }
    for name in strategies:
        agg = aggregates[name]
        panels[name] = [
            (ctx, label, agg.cells[(ctx, label)].mean)
            for ctx in reference.context_labels
            for label in reference.target_categories
            if (ctx, label) in agg.cells
        ]

    lines = ["comparison report", "=================", ""]
    lines.append(f"target: {reference.target}")
    lines.append(f"conditioned on: {reference.given or '(marginal)'}")
    runs_bits = ", ".join(f"{name}={aggregates[name].run_count}" for name in strategies)
    lines.append(f"runs: {runs_bits}")
    lines.append("")
    widths = [max(len(header[c]), *(len(r[c]) for r in rows)) for c in range(len(header))]
    lines.append("  ".join(h.ljust(w) for h, w in zip(header, widths)))
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)))
    lines.append("")
    lines.append("mean total variation vs reference:")
    for name in strategies:
        lines.append(f"  {name}: {mean_tv[name]:.4f}")
    if call_summaries:
        lines.append("")
        lines.append("oracle calls:")
        for name in _ordered_strategies(call_summaries):
            parts = ", ".join(f"{k}={v}" for k, v in sorted(call_summaries[name].items()))
            lines.append(f"  {name}: {parts}")
    invalid_bits = [
        f"  {name}: {aggregates[name].invalid_mean:.1f} cells/run"
        for name in strategies
        if aggregates[name].invalid_mean > 0
    ]
    if invalid_bits:
        lines.append("")
        lines.append("invalid-labeled cells (mean per run, excluded above):")
        lines.extend(invalid_bits)
    if failures:
        lines.append("")
        lines.append("failed strategies:")
        for name in sorted(failures):
            lines.append(f"  {name}: FAILED - {failures[name]}")
    text = "\n".join(lines) + "\n"
    return ComparisonReport(
        text=text,
        mean_tv=mean_tv,
        panels=panels,
        given=reference.given,
        target=reference.target,
    )


def _mean_tv(reference: FrequencyTable, agg: RunAggregate) -> float:
    """Mean TV over contexts present on both sides; empty contexts skipped."""
    cats = reference.target_categories
    tvs = []
    for ctx in reference.context_labels:
        p = [reference.cells.get((ctx, c), 0.0) for c in cats]
        q = [agg.cells[(ctx, c)].mean if (ctx, c) in agg.cells else 0.0 for c in cats]
        p_total, q_total = sum(p), sum(q)
        if p_total == 0 or q_total == 0:
            continue
        p_dist = CategoricalDistribution(cats, tuple(x / p_total for x in p))
        q_dist = CategoricalDistribution(cats, tuple(x / q_total for x in q))
        tvs.append(total_variation(p_dist, q_dist))
    return statistics.fmean(tvs) if tvs else float("nan")


def load_reference(
    data: dict, schema: DatasetSchema, target: str, given: str | None
) -> FrequencyTable:
    """Build a reference FrequencyTable from a fixture-format config dict.

    For each conditioning label the expected context string is re-rendered
    (single-category features assigned their only label, the conditioning
    feature assigned the label) and looked up in the ``distributions``
    entries. Every feature before *target* other than *given* must be
    single-category, otherwise the conditional is not well defined by the
    fixture's entries.

    Raises:
        UnknownFeature, EvaluationError
    """
    try:
        target_spec = schema.feature(target)
        target_idx = schema.feature_index(target)
    except SchemaError as exc:
        raise UnknownFeature(target) from exc
    entries: dict[tuple[str, str], dict] = {}
    for entry in data.get("distributions", []) or []:
        key = (str(entry["feature"]), str(entry.get("context", entry.get("context_string", ""))))
        entries[key] = entry["distribution"]

    given_idx = None
    if given is not None:
        try:
            given_idx = schema.feature_index(given)
        except SchemaError as exc:
            raise UnknownFeature(given) from exc
        if given_idx >= target_idx:
            raise EvaluationError(f"conditioning feature {given!r} must precede {target!r}")
        context_labels = tuple(schema.feature(given).categories)
    else:
        context_labels = ("",)

    for i, feature in enumerate(schema.features[:target_idx]):
        if i != given_idx and not feature.is_single_category:
            raise EvaluationError(
                f"reference lookup needs feature {feature.name!r} to be single-category"
            )

    cells: dict[tuple[str, str], float] = {}
    for ctx_label in context_labels:
        assignments = []
        for i, feature in enumerate(schema.features[:target_idx]):
            if i == given_idx:
                assignments.append((feature.name, ctx_label))
            else:
                assignments.append((feature.name, feature.categories[0]))
        rendered = render_context(Context(assignments=tuple(assignments)), schema)
        dist_map = entries.get((target, rendered))
        if dist_map is None:
            raise EvaluationError(
                f"reference has no distribution for {target!r} in context {rendered!r}"
            )
        dist = validate_and_normalize(
            RawDistribution({str(k): float(v) for k, v in dist_map.items()}), target_spec
        )
        for label, prob in zip(dist.categories, dist.probs):
            cells[(ctx_label, label)] = 100.0 * prob
    return FrequencyTable(
        target=target,
        given=given,
        target_categories=tuple(target_spec.categories),
        context_labels=context_labels,
        cells=cells,
        support=dict.fromkeys(context_labels, 0),
        invalid_cells=0,
        total_rows=0,
    )
