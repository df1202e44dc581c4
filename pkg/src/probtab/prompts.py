"""Prompt builders for the three generation styles.

All three builders are pure functions of their inputs and produce
byte-stable text, so rendered prompts can be golden-file tested. Prompts
carry the target feature and rendered context as metadata so fixture
oracles can answer by lookup instead of parsing prompt text.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from probtab.schema import DatasetSchema, FeatureSpec


class PromptKind(str, Enum):
    TABLE_WIDE = "table_wide"
    CELL_BY_CELL = "cell_by_cell"
    DISTRIBUTION = "distribution"


@dataclass(frozen=True)
class Prompt:
    text: str
    kind: PromptKind
    target_feature: str | None = None
    context_text: str | None = None
    sample_size: int | None = None


# Appended to every distribution prompt: the base template asks for "the
# JSON structure" without saying which one, so we pin it down explicitly.
DISTRIBUTION_FORMAT_INSTRUCTION = (
    "Return a single flat JSON object that maps every listed category to its "
    "probability. The probabilities must sum to 1."
)

_RETRY_PREFIX = "Your previous reply could not be used: "

_CORRECTIVE_SUFFIX = {
    PromptKind.DISTRIBUTION: (
        "Reply again with only a single flat JSON object mapping every listed "
        "category to a numeric probability, with no other text."
    ),
    PromptKind.CELL_BY_CELL: (
        "Reply again with exactly one of the listed categories and nothing else."
    ),
    PromptKind.TABLE_WIDE: (
        "Reply again with only the JSON table, with no other text."
    ),
}


def _quoted_list(names: list[str]) -> str:
    quoted = [f"'{n}'" for n in names]
    if len(quoted) == 1:
        return quoted[0]
    if len(quoted) == 2:
        return f"{quoted[0]} and {quoted[1]}"
    return ", ".join(quoted[:-1]) + f", and {quoted[-1]}"


def _categories_repr(feature: FeatureSpec) -> str:
    return repr(list(feature.categories))


def _combined_description(feature: FeatureSpec, schema: DatasetSchema) -> str:
    """Feature description then dataset description, joined as sentences."""
    parts = [p.strip().rstrip(".") for p in (feature.description, schema.dataset_description)]
    parts = [p for p in parts if p]
    return ". ".join(parts) + "." if parts else ""


def build_table_prompt(schema: DatasetSchema, n: int) -> Prompt:
    """Whole-table prompt: all columns, all category lists, one response.

    Single-category features are stated as constant columns; the others
    ask for sampling from their category list, with the feature
    description appended as a plain suffix when present. The sample size
    is substituted verbatim, grammar quirks and all.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    lines = [
        f"Generate a table with exactly {n} records with columns "
        f"{_quoted_list(list(schema.feature_names))}."
    ]
    for feature in schema.features:
        if feature.is_single_category:
            lines.append(
                f"'{feature.name}' contains identical values, all set to "
                f"'{feature.categories[0]}'."
            )
        else:
            suffix = f" {feature.description.strip()}" if feature.description.strip() else ""
            lines.append(
                f"'{feature.name}' should be sampled from the categories "
                f"'{_categories_repr(feature)}'{suffix}."
            )
    lines.append(
        "Only return the JSON object. Do not include any additional text, "
        "explanations, or formatting."
    )
    return Prompt(
        text="\n\n".join(lines) + "\n",
        kind=PromptKind.TABLE_WIDE,
        sample_size=n,
    )


def build_cell_prompt(feature: FeatureSpec, ctx_string: str, schema: DatasetSchema) -> Prompt:
    """One-cell prompt: pick a single category given the row's context."""
    text = (
        "Based on the provided context and data description, generate one "
        f"random sample for the column {feature.name}.\n"
        "\n"
        f"Sample from the following categories: {_categories_repr(feature)}\n"
        f"# Context: {ctx_string}\n"
        f"# Data Description: {_combined_description(feature, schema)}\n"
        "\n"
        "The output should be limited strictly to the chosen category "
        "without any additional explanations or formatting.\n"
        "\n"
        "# Response:"
    )
    return Prompt(
        text=text,
        kind=PromptKind.CELL_BY_CELL,
        target_feature=feature.name,
        context_text=ctx_string,
    )


def build_distribution_prompt(feature: FeatureSpec, ctx_string: str, schema: DatasetSchema) -> Prompt:
    """Distribution prompt: ask for category probabilities given the context."""
    text = (
        "Based on the provided context and data description, generate one "
        f"random sample for the column {feature.name}.\n"
        "Sample from the provided categories\n"
        "\n"
        f"# Categories: {_categories_repr(feature)}\n"
        f"# Context: {ctx_string}\n"
        f"# Data Description: {_combined_description(feature, schema)}\n"
        "\n"
        "The output should be limited strictly to the JSON structure without "
        "any additional explanations or formatting.\n"
        "\n"
        f"{DISTRIBUTION_FORMAT_INSTRUCTION}"
    )
    return Prompt(
        text=text,
        kind=PromptKind.DISTRIBUTION,
        target_feature=feature.name,
        context_text=ctx_string,
    )


def corrective_message(kind: PromptKind, failure_reason: str) -> str:
    """Follow-up sent after a parse/validation failure, naming the reason."""
    return f"{_RETRY_PREFIX}{failure_reason}. {_CORRECTIVE_SUFFIX[kind]}"
