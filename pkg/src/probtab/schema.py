"""Dataset schemas, feature specs, contexts, and context hashing.

A schema is an ordered list of features; generation walks the list in
order, so feature i may only condition on features 0..i-1. Contexts are
partial row assignments rendered to a canonical string; the hash of
(target feature, rendered context) is the cache key used everywhere else.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import yaml

from probtab.errors import SchemaError, UnparsableRange

_RANGE_CLOSED = re.compile(r"^(\d+)\s*-\s*(\d+)$")
_RANGE_OPEN = re.compile(r"^(\d+)\s*\+$")


class FeatureKind(str, Enum):
    CATEGORICAL = "categorical"
    NUMERIC_RANGE = "numeric_range"


@dataclass(frozen=True)
class FeatureSpec:
    """One column: its name, kind, allowed category labels, and prose description.

    For ``numeric_range`` features every label must encode an integer
    interval, either closed ("25-54") or right-open ("65+"); the open form
    needs ``cap`` to bound it.
    """

    name: str
    categories: tuple[str, ...]
    kind: FeatureKind = FeatureKind.CATEGORICAL
    description: str = ""
    cap: int | None = None

    def __post_init__(self):
        if not self.name:
            raise SchemaError("feature name must be non-empty")
        if not self.categories:
            raise SchemaError(f"feature {self.name!r} has an empty category list")
        seen = set()
        for label in self.categories:
            if label in seen:
                raise SchemaError(f"feature {self.name!r} repeats category {label!r}")
            seen.add(label)
        if self.kind is FeatureKind.NUMERIC_RANGE:
            for label in self.categories:
                parse_range_label(label, self.cap)

    @property
    def is_single_category(self) -> bool:
        return len(self.categories) == 1

    def category_index(self) -> dict[str, int]:
        return {c: i for i, c in enumerate(self.categories)}


def parse_range_label(label: str, cap: int | None) -> tuple[int, int]:
    """Parse a numeric-range label into an inclusive (lo, hi) interval.

    Closed form "lo-hi" stands alone; open form "N+" takes hi from *cap*.

    Raises:
        UnparsableRange: If the label fits neither form, or "N+" is used
            without a cap, or the cap sits below N.
    """
    m = _RANGE_CLOSED.match(label.strip())
    if m:
        lo, hi = int(m.group(1)), int(m.group(2))
        if lo > hi:
            raise UnparsableRange(label)
        return lo, hi
    m = _RANGE_OPEN.match(label.strip())
    if m:
        lo = int(m.group(1))
        if cap is None:
            raise UnparsableRange(label)
        if cap < lo:
            raise UnparsableRange(label)
        return lo, cap
    raise UnparsableRange(label)


@dataclass(frozen=True)
class DatasetSchema:
    """Ordered feature definitions plus table-level prose and default size."""

    features: tuple[FeatureSpec, ...]
    dataset_description: str = ""
    sample_size: int = 1

    def __post_init__(self):
        if not self.features:
            raise SchemaError("schema defines no features")
        if self.sample_size < 1:
            raise SchemaError("sample_size must be a positive integer")
        names = [f.name for f in self.features]
        dupes = {n for n in names if names.count(n) > 1}
        if dupes:
            raise SchemaError(f"duplicate feature name(s): {sorted(dupes)}")

    @property
    def feature_names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.features)

    def feature(self, name: str) -> FeatureSpec:
        for f in self.features:
            if f.name == name:
                return f
        raise SchemaError(f"no feature named {name!r}")

    def feature_index(self, name: str) -> int:
        for i, f in enumerate(self.features):
            if f.name == name:
                return i
        raise SchemaError(f"no feature named {name!r}")

    def to_config_dict(self) -> dict:
        """Inverse of parse_schema: a dict that round-trips through YAML."""
        features = []
        for f in self.features:
            entry: dict = {"name": f.name, "categories": list(f.categories)}
            if f.kind is not FeatureKind.CATEGORICAL:
                entry["kind"] = f.kind.value
            if f.description:
                entry["description"] = f.description
            if f.cap is not None:
                entry["cap"] = f.cap
            features.append(entry)
        return {
            "dataset": {
                "description": self.dataset_description,
                "sample_size": self.sample_size,
            },
            "features": features,
        }

    def to_config_text(self) -> str:
        return yaml.safe_dump(self.to_config_dict(), sort_keys=False, allow_unicode=True)


@dataclass(frozen=True)
class Context:
    """Already-generated feature values for one row, in schema order.

    ``seed_text`` is an opaque free-text preamble; nothing is inferred
    from its structure.
    """

    assignments: tuple[tuple[str, str], ...] = ()
    seed_text: str = ""

    def validate(self, schema: DatasetSchema) -> None:
        """Check ordering, uniqueness, and label membership against *schema*."""
        last = -1
        seen: set[str] = set()
        for name, label in self.assignments:
            if name in seen:
                raise SchemaError(f"context assigns feature {name!r} twice")
            seen.add(name)
            idx = schema.feature_index(name)
            if idx <= last:
                raise SchemaError(f"context assignment {name!r} out of schema order")
            last = idx
            if label not in schema.features[idx].categories:
                raise SchemaError(f"label {label!r} not in categories of feature {name!r}")


@dataclass(frozen=True)
class ContextKey:
    """Stable 128-bit digest of (target feature, rendered context)."""

    digest: str


def render_context(ctx: Context, schema: DatasetSchema) -> str:
    """Render *ctx* to its canonical string.

    Format: the seed text (if any), then one "<feature> is <label>."
    clause per assignment in schema order, all joined by single spaces.
    An empty context with no seed renders to "".
    """
    ctx.validate(schema)
    parts: list[str] = []
    if ctx.seed_text:
        parts.append(ctx.seed_text)
    parts.extend(render_clause(name, label) for name, label in ctx.assignments)
    return " ".join(parts)


def render_clause(feature_name: str, label: str) -> str:
    """One canonical context clause; extend_rendered builds on these."""
    return f"{feature_name} is {label}."


def extend_rendered(rendered: str, feature_name: str, label: str) -> str:
    """Append one clause to an already-rendered context string.

    Incremental equivalent of render_context, used in sampling loops so a
    row's context never has to be re-rendered from scratch.
    """
    clause = render_clause(feature_name, label)
    return f"{rendered} {clause}" if rendered else clause


def context_key(target_feature: str, rendered: str) -> ContextKey:
    """Hash (target feature, rendered context) into a stable cache key.

    blake2b/128 over the two strings with a non-printable separator;
    deterministic across runs, platforms, and Python versions.
    """
    h = hashlib.blake2b(digest_size=16)
    h.update(target_feature.encode("utf-8"))
    h.update(b"\x1f")
    h.update(rendered.encode("utf-8"))
    return ContextKey(h.hexdigest())


# -- config file loading ------------------------------------------------
#
# One YAML document serves three roles via optional top-level sections:
#   dataset/features  -> schema (this module)
#   distributions/cells/tables -> oracle fixture (probtab.oracle)
#   distributions     -> reference table (probtab.evaluation)


def load_config_text(text: str) -> dict:
    """Parse YAML config text into a dict, reporting syntax-error positions."""
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        position = None
        mark = getattr(exc, "problem_mark", None)
        if mark is not None:
            position = f"{mark.line + 1}:{mark.column + 1}"
        raise SchemaError(f"config syntax error: {exc}", position=position) from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise SchemaError("config root must be a mapping")
    return data


def load_config_file(path: str | Path) -> dict:
    return load_config_text(Path(path).read_text(encoding="utf-8"))


def parse_schema(config_text: str) -> DatasetSchema:
    """Build a DatasetSchema from config text; see parse_schema_dict."""
    return parse_schema_dict(load_config_text(config_text))


def parse_schema_file(path: str | Path) -> DatasetSchema:
    return parse_schema_dict(load_config_file(path))


def parse_schema_dict(data: dict) -> DatasetSchema:
    """Extract and validate the schema sections of a parsed config.

    Feature order in the file is the generation order. All FeatureSpec
    and DatasetSchema invariants are enforced here via the constructors.
    """
    if "features" not in data:
        raise SchemaError("config has no 'features' section")
    raw_features = data["features"]
    if not isinstance(raw_features, list):
        raise SchemaError("'features' must be a list")
    features = []
    for i, entry in enumerate(raw_features):
        if not isinstance(entry, dict):
            raise SchemaError(f"feature #{i} must be a mapping")
        try:
            name = str(entry["name"])
            categories = entry["categories"]
        except KeyError as exc:
            raise SchemaError(f"feature #{i} is missing {exc.args[0]!r}") from exc
        if not isinstance(categories, list):
            raise SchemaError(f"feature {name!r}: 'categories' must be a list")
        kind_raw = entry.get("kind", FeatureKind.CATEGORICAL.value)
        try:
            kind = FeatureKind(kind_raw)
        except ValueError as exc:
            raise SchemaError(f"feature {name!r}: unknown kind {kind_raw!r}") from exc
        cap = entry.get("cap")
        if cap is not None and not isinstance(cap, int):
            raise SchemaError(f"feature {name!r}: 'cap' must be an integer")
        features.append(
            FeatureSpec(
                name=name,
                categories=tuple(str(c) for c in categories),
                kind=kind,
                description=str(entry.get("description", "")),
                cap=cap,
            )
        )
    dataset = data.get("dataset", {})
    if not isinstance(dataset, dict):
        raise SchemaError("'dataset' must be a mapping")
    sample_size = dataset.get("sample_size", 1)
    if not isinstance(sample_size, int):
        raise SchemaError("'sample_size' must be an integer")
    return DatasetSchema(
        features=tuple(features),
        dataset_description=str(dataset.get("description", "")),
        sample_size=sample_size,
    )
