"""probtab: synthetic categorical tables via probability-driven prompting.

Instead of asking a language model to emit data rows, ask it once per
distinct context for a probability distribution over the categories, then
sample as many rows as needed locally. The oracle call count stays
constant in the row count; the rows keep the conditional structure.
"""

from probtab.distributions import (
    CategoricalDistribution,
    RawDistribution,
    RngState,
    derive_seed,
    realize_numeric_range,
    sample,
    sample_counts,
    validate_and_normalize,
)
from probtab.evaluation import (
    FrequencyTable,
    RunAggregate,
    aggregate_runs,
    chi_square_gof,
    comparison_report,
    conditional_frequencies,
    load_reference,
    total_variation,
)
from probtab.oracle import (
    FixtureOracle,
    HttpOracle,
    OracleCallLog,
    OracleConfig,
    OracleSession,
    load_fixture,
)
from probtab.pipeline import (
    DistributionCache,
    GenerationOptions,
    GenerationRun,
    Strategy,
    generate,
    generate_cell_by_cell,
    generate_probability_driven,
    generate_table_wide,
    write_table,
)
from probtab.prompts import (
    Prompt,
    PromptKind,
    build_cell_prompt,
    build_distribution_prompt,
    build_table_prompt,
)
from probtab.schema import (
    Context,
    ContextKey,
    DatasetSchema,
    FeatureKind,
    FeatureSpec,
    context_key,
    parse_schema,
    parse_schema_file,
    render_context,
)
from probtab.table import Table

__version__ = "0.1.0"

__all__ = [
    "CategoricalDistribution",
    "Context",
    "ContextKey",
    "DatasetSchema",
    "DistributionCache",
    "FeatureKind",
    "FeatureSpec",
    "FixtureOracle",
    "FrequencyTable",
    "GenerationOptions",
    "GenerationRun",
    "HttpOracle",
    "OracleCallLog",
    "OracleConfig",
    "OracleSession",
    "Prompt",
    "PromptKind",
    "RawDistribution",
    "RngState",
    "RunAggregate",
    "Strategy",
    "Table",
    "aggregate_runs",
    "build_cell_prompt",
    "build_distribution_prompt",
    "build_table_prompt",
    "chi_square_gof",
    "comparison_report",
    "conditional_frequencies",
    "context_key",
    "derive_seed",
    "generate",
    "generate_cell_by_cell",
    "generate_probability_driven",
    "generate_table_wide",
    "load_fixture",
    "load_reference",
    "parse_schema",
    "parse_schema_file",
    "realize_numeric_range",
    "render_context",
    "sample",
    "sample_counts",
    "total_variation",
    "validate_and_normalize",
    "write_table",
]
