"""Exception hierarchy shared across the package."""

from __future__ import annotations


class ProbtabError(Exception):
    """Base class for all package errors."""


# -- schema ------------------------------------------------------------


class SchemaError(ProbtabError):
    """Invalid schema config: syntax, duplicates, empty lists, bad ranges.

    ``position`` carries "line:column" when the underlying parser reports one.
    """

    def __init__(self, message: str, position: str | None = None):
        self.position = position
        if position:
            message = f"{message} (at {position})"
        super().__init__(message)


class UnparsableRange(SchemaError):
    """A numeric_range category label does not parse to an interval."""

    def __init__(self, label: str):
        self.label = label
        super().__init__(f"category label {label!r} is not a valid numeric range")


# -- distributions -----------------------------------------------------


class DistributionError(ProbtabError):
    """Base class for distribution validation failures."""


class UnknownCategory(DistributionError):
    """A raw weight entry names a label outside the feature's category list."""

    def __init__(self, label: str):
        self.label = label
        super().__init__(f"unknown category {label!r}")


class InvalidWeight(DistributionError):
    """A raw weight is negative or non-finite."""

    def __init__(self, label: str, value: float):
        self.label = label
        self.value = value
        super().__init__(f"invalid weight {value!r} for category {label!r}")


class DegenerateDistribution(DistributionError):
    """All raw weights are zero; nothing to normalize."""


class CategoryMismatch(ProbtabError):
    """Two distributions do not share the same category set."""


# -- oracle / parsing --------------------------------------------------


class OracleError(ProbtabError):
    """Base class for oracle-side failures."""

    def __init__(self, message: str, feature: str | None = None, context: str | None = None):
        self.feature = feature
        self.context = context
        if feature is not None:
            message = f"{message} [feature={feature!r} context={context!r}]"
        super().__init__(message)


class OracleTransportError(OracleError):
    """A single transport attempt failed (connection, timeout, bad status)."""


class OracleUnavailable(OracleError):
    """Transport kept failing after the retry budget was spent."""


class UnparsableResponse(OracleError):
    """Every attempt produced a response that could not be parsed/validated."""


class FixtureMissingEntry(OracleError):
    """The fixture has no scripted answer for this (feature, context) pair."""

    def __init__(self, feature: str, context: str, kind: str = "distribution"):
        super().__init__(f"fixture has no {kind} entry", feature=feature, context=context)


class ResponseParseError(ProbtabError):
    """Base class for response-text parse failures (retriable)."""


class NoJsonFound(ResponseParseError):
    """The response text contains no parseable JSON value."""


class NonNumericWeight(ResponseParseError):
    """A distribution response maps a category to a non-numeric value."""

    def __init__(self, key: str):
        self.key = key
        super().__init__(f"value for key {key!r} is not numeric")


class SchemaMismatch(ResponseParseError):
    """A parsed table row does not line up with the schema's columns."""

    def __init__(self, row: int, column: str):
        self.row = row
        self.column = column
        super().__init__(f"row {row} does not match schema at column {column!r}")


class NotACategory(ResponseParseError):
    """A cell response is not one of the allowed category labels."""

    def __init__(self, text: str):
        self.text = text
        super().__init__(f"response {text!r} is not an allowed category")


# -- pipeline ----------------------------------------------------------


class GenerationError(ProbtabError):
    """A generation run could not be completed."""


class RowShortfall(GenerationError):
    """Table-wide generation returned fewer rows than requested."""

    def __init__(self, received: int, requested: int):
        self.received = received
        self.requested = requested
        super().__init__(f"received {received} of {requested} requested rows")


# -- evaluation --------------------------------------------------------


class EvaluationError(ProbtabError):
    """Base class for evaluator failures."""


class UnknownFeature(EvaluationError):
    """A requested feature name is not in the schema."""

    def __init__(self, name: str):
        self.name = name
        super().__init__(f"unknown feature {name!r}")


class AllPooled(EvaluationError):
    """Chi-square pooling left fewer than two testable categories."""


class ShapeMismatch(EvaluationError):
    """Frequency tables or reports do not share the same shape."""
