"""Command-line interface: generate, evaluate, compare.

Exit codes are a stable contract: 0 on success, 1 on runtime failure
(oracle, parsing, evaluation), 2 on usage or config errors.
"""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from importlib import resources
from pathlib import Path

from probtab.errors import ProbtabError
from probtab.evaluation import (
    FrequencyTable,
    aggregate_runs,
    comparison_report,
    conditional_frequencies,
    load_reference,
)
from probtab.oracle import FixtureOracle, HttpOracle, OracleConfig
from probtab.pipeline import (
    GenerationOptions,
    GenerationRun,
    Strategy,
    generate,
    read_report,
    write_table,
)
from probtab.schema import DatasetSchema, load_config_file, parse_schema_dict, parse_schema_file
from probtab.table import read_rows_csv

_STRATEGY_FLAGS = {
    "probability-driven": Strategy.PROBABILITY_DRIVEN,
    "table-wide": Strategy.TABLE_WIDE,
    "cell-by-cell": Strategy.CELL_BY_CELL,
}

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


def bundled_fixture_path(name: str) -> Path:
    """Resolve a bundled fixture name (no path, no extension) to its file."""
    candidate = resources.files("probtab").joinpath("data", f"{name}.yaml")
    with resources.as_file(candidate) as path:
        if not path.exists():
            raise FileNotFoundError(f"no bundled fixture named {name!r}")
        return Path(path)


def _resolve_fixture_path(spec: str) -> Path:
    path = Path(spec)
    if path.exists():
        return path
    if "/" not in spec and "\\" not in spec and not spec.endswith(".yaml"):
        return bundled_fixture_path(spec)
    raise FileNotFoundError(f"fixture file {spec!r} not found")


class _OracleFactory:
    """Builds one oracle per run.

    Fixture oracles are rebuilt per run so scripted state (fail_times,
    scripted table sequences) resets; the HTTP oracle is shared, it is
    stateless and internally rate-limited.
    """

    def __init__(self, oracle_spec: str, config: OracleConfig):
        self.kind, _, rest = oracle_spec.partition(":")
        if self.kind == "fixture":
            if not rest:
                raise ValueError("--oracle fixture: needs a name or path")
            self.fixture_path = _resolve_fixture_path(rest)
            self._shared = None
        elif self.kind == "http":
            self.fixture_path = None
            self._shared = HttpOracle(config)
        else:
            raise ValueError(f"unknown oracle kind {self.kind!r}; use fixture:<path> or http")

    def __call__(self):
        if self._shared is not None:
            return self._shared
        return FixtureOracle.from_file(self.fixture_path)

    def close(self):
        if self._shared is not None:
            self._shared.close()


def _oracle_config_from_args(args) -> OracleConfig:
    return OracleConfig(
        endpoint_url=args.endpoint,
        model_name=args.model,
        api_key_source=args.api_key_env,
        max_retries=args.max_retries,
        timeout=args.timeout,
        temperature=args.temperature,
        max_in_flight=args.max_in_flight,
    )


def _default_target_given(schema: DatasetSchema) -> tuple[str, str | None]:
    """Last multi-category feature as target, previous one as conditioner."""
    multi = [f.name for f in schema.features if not f.is_single_category]
    if not multi:
        return schema.features[-1].name, None
    target = multi[-1]
    given = multi[-2] if len(multi) > 1 else None
    return target, given


def _resolve_target_given(args, schema: DatasetSchema) -> tuple[str, str | None]:
    """Apply defaults; an explicit empty --given asks for the marginal table."""
    default_target, default_given = _default_target_given(schema)
    target = args.target or default_target
    if args.given is None:
        given = default_given
    elif args.given == "":
        given = None
    else:
        given = args.given
    return target, given


def _run_strategy(
    strategy: Strategy,
    schema: DatasetSchema,
    factory: _OracleFactory,
    n: int,
    runs: int,
    base_seed: int,
    config: OracleConfig,
    options: GenerationOptions,
    out_dir: Path,
    parallel: bool,
) -> list[GenerationRun]:
    """Execute `runs` runs (seeds base_seed + k) and persist each one."""

    def one(k: int) -> GenerationRun:
        run = generate(strategy, schema, factory(), n, base_seed + k, config=config, options=options)
        write_table(run, out_dir / strategy.value / f"run_{k}.csv")
        return run

    if parallel and runs > 1:
        with ThreadPoolExecutor(max_workers=min(runs, 8)) as pool:
            return list(pool.map(one, range(runs)))
    return [one(k) for k in range(runs)]


# -- commands ---------------------------------------------------------------


def cmd_generate(args) -> int:
    try:
        schema = parse_schema_file(args.schema)
        config = _oracle_config_from_args(args)
        factory = _OracleFactory(args.oracle, config)
    except (ProbtabError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    n = args.n if args.n is not None else schema.sample_size
    if n < 1:
        print("error: --n must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    strategy = _STRATEGY_FLAGS[args.strategy]
    options = GenerationOptions(max_table_batches=args.max_table_batches)
    out_dir = Path(args.out)
    failures = 0
    try:
        runs = _run_strategy(
            strategy, schema, factory, n, args.runs, args.seed,
            config, options, out_dir, args.parallel_runs,
        )
        for k, run in enumerate(runs):
            if not run.succeeded:
                failures += 1
                print(f"error: run {k} failed: {run.error}", file=sys.stderr)
    except ProbtabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    finally:
        factory.close()
    return EXIT_RUNTIME if failures else EXIT_OK


def cmd_evaluate(args) -> int:
    try:
        reference_data = load_config_file(args.reference)
        schema = (
            parse_schema_file(args.schema) if args.schema else parse_schema_dict(reference_data)
        )
    except (ProbtabError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    target, given = _resolve_target_given(args, schema)
    try:
        reference = load_reference(reference_data, schema, target, given)
        by_strategy: dict[str, list[FrequencyTable]] = {}
        summaries: dict[str, dict[str, int]] = {}
        for csv_path in args.runs:
            csv_path = Path(csv_path)
            try:
                table = read_rows_csv(schema, csv_path)
            except ValueError as exc:
                print(f"error: {exc}", file=sys.stderr)
                return EXIT_RUNTIME
            report_path = csv_path.with_suffix(".report")
            strategy = "runs"
            if report_path.exists():
                report = read_report(report_path)
                strategy = report.get("strategy", "runs")
                counts = report.get("call_counts", {})
                acc = summaries.setdefault(strategy, {})
                for key, value in counts.items():
                    acc[key] = acc.get(key, 0) + int(value)
            by_strategy.setdefault(strategy, []).append(
                conditional_frequencies(table, target, given)
            )
        if not by_strategy:
            print("error: no runs supplied", file=sys.stderr)
            return EXIT_USAGE
        aggregates = {name: aggregate_runs(tables) for name, tables in by_strategy.items()}
        report = comparison_report(reference, aggregates, call_summaries=summaries or None)
    except ProbtabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    _write_report_files(report, Path(args.out))
    for name, tv in report.mean_tv.items():
        print(f"{name} mean_tv={tv:.4f}")
    return EXIT_OK


def cmd_compare(args) -> int:
    try:
        schema = parse_schema_file(args.schema)
        config = _oracle_config_from_args(args)
        factory = _OracleFactory(args.oracle, config)
        reference_data = load_config_file(args.reference)
    except (ProbtabError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    n = args.n if args.n is not None else schema.sample_size
    if n < 1:
        print("error: --n must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    target, given = _resolve_target_given(args, schema)
    options = GenerationOptions(max_table_batches=args.max_table_batches)
    out_dir = Path(args.out)

    aggregates = {}
    summaries: dict[str, dict[str, int]] = {}
    failures: dict[str, str] = {}
    try:
        reference = load_reference(reference_data, schema, target, given)
        for strategy in Strategy:
            try:
                runs = _run_strategy(
                    strategy, schema, factory, n, args.runs, args.seed,
                    config, options, out_dir, args.parallel_runs,
                )
                run_errors = [r.error for r in runs if not r.succeeded]
                if run_errors:
                    failures[strategy.value] = run_errors[0]
                tables = [conditional_frequencies(r.table, target, given) for r in runs]
                aggregates[strategy.value] = aggregate_runs(tables)
                total: dict[str, int] = {}
                for r in runs:
                    for key, value in r.call_log.summary().items():
                        total[key] = total.get(key, 0) + value
                summaries[strategy.value] = total
            except ProbtabError as exc:
                failures[strategy.value] = str(exc)
                print(f"error: {strategy.value} failed: {exc}", file=sys.stderr)
        if not aggregates:
            print("error: every strategy failed", file=sys.stderr)
            return EXIT_RUNTIME
        report = comparison_report(
            reference, aggregates, call_summaries=summaries or None, failures=failures or None
        )
    except ProbtabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    finally:
        factory.close()
    _write_report_files(report, out_dir)
    for name, tv in report.mean_tv.items():
        print(f"{name} mean_tv={tv:.4f}")
    return EXIT_RUNTIME if failures else EXIT_OK


def _write_report_files(report, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "comparison.report").write_text(report.text, encoding="utf-8")
    for name in report.panels:
        (out_dir / f"panel_{name}.csv").write_text(report.panel_csv(name), encoding="utf-8")


# -- argument parsing --------------------------------------------------------


def _add_oracle_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--oracle", required=True, help="fixture:<name-or-path> or http")
    parser.add_argument("--endpoint", default=OracleConfig.endpoint_url, help="chat-completions URL")
    parser.add_argument("--model", default=OracleConfig.model_name, help="model name")
    parser.add_argument(
        "--api-key-env", default=OracleConfig.api_key_source,
        help="environment variable holding the API key",
    )
    parser.add_argument("--max-retries", type=int, default=OracleConfig.max_retries)
    parser.add_argument("--timeout", type=float, default=OracleConfig.timeout)
    parser.add_argument("--temperature", type=float, default=OracleConfig.temperature)
    parser.add_argument("--max-in-flight", type=int, default=OracleConfig.max_in_flight)


def _add_run_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--n", type=int, default=None, help="rows per run (default: schema sample_size)")
    parser.add_argument("--runs", type=int, default=1)
    parser.add_argument("--seed", type=int, default=0, help="base seed; run k uses seed+k")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--parallel-runs", action="store_true", help="run repeats concurrently")
    parser.add_argument("--max-table-batches", type=int, default=25)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="probtab",
        description="Synthesize categorical tables by prompting for probability distributions.",
    )
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("generate", help="run one strategy and write CSVs + reports")
    p_gen.add_argument("--schema", required=True)
    p_gen.add_argument("--strategy", choices=sorted(_STRATEGY_FLAGS), required=True)
    _add_oracle_args(p_gen)
    _add_run_args(p_gen)
    p_gen.set_defaults(func=cmd_generate)

    p_eval = sub.add_parser("evaluate", help="aggregate runs and compare against a reference")
    p_eval.add_argument("runs", nargs="+", help="run CSV paths")
    p_eval.add_argument("--reference", required=True, help="reference distributions file")
    p_eval.add_argument("--schema", default=None, help="schema file (default: from reference)")
    p_eval.add_argument("--target", default=None)
    p_eval.add_argument("--given", default=None)
    p_eval.add_argument("--out", required=True)
    p_eval.set_defaults(func=cmd_evaluate)

    p_cmp = sub.add_parser("compare", help="run all three strategies and compare")
    p_cmp.add_argument("--schema", required=True)
    p_cmp.add_argument("--reference", required=True)
    p_cmp.add_argument("--target", default=None)
    p_cmp.add_argument("--given", default=None)
    _add_oracle_args(p_cmp)
    _add_run_args(p_cmp)
    p_cmp.set_defaults(func=cmd_compare)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING
    if args.verbose == 1:
        level = logging.INFO
    elif args.verbose >= 2:
        level = logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    runs = getattr(args, "runs", None)
    if isinstance(runs, int) and runs < 1:
        print("error: --runs must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    seed = getattr(args, "seed", None)
    if isinstance(seed, int) and seed < 0:
        print("error: --seed must be >= 0", file=sys.stderr)
        return EXIT_USAGE
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
