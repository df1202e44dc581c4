"""Parsers for untrusted oracle response text.

Models are told to return bare JSON or a bare category label; in practice
they add code fences, prose, and case drift. Every parser here tolerates
that: fences are stripped, the first balanced JSON value is extracted from
surrounding prose, and labels fall back to a case-insensitive trimmed
match before being rejected.
"""

from __future__ import annotations

import json
import re

from probtab.distributions import RawDistribution
from probtab.errors import NoJsonFound, NonNumericWeight, NotACategory, SchemaMismatch
from probtab.schema import DatasetSchema, FeatureSpec
from probtab.table import Table

_FENCE_RE = re.compile(r"```[a-zA-Z0-9_-]*\n?(.*?)```", re.DOTALL)


def _strip_fences(text: str) -> str:
    m = _FENCE_RE.search(text)
    return m.group(1) if m else text


def extract_first_json(text: str):
    """Return the first balanced JSON object or array found in *text*.

    Scans for '{' or '[' openers and attempts a raw decode at each, so
    leading prose, trailing prose, and fenced blocks are all tolerated.

    Raises:
        NoJsonFound: If no position yields a valid JSON value.
    """
    text = _strip_fences(text)
    decoder = json.JSONDecoder()
    for i, ch in enumerate(text):
        if ch not in "{[":
            continue
        try:
            value, _ = decoder.raw_decode(text, i)
        except json.JSONDecodeError:
            continue
        return value
    raise NoJsonFound("no JSON object found in response")


def _match_label(key: str, spec: FeatureSpec) -> str | None:
    """Exact match first, then case-insensitive trimmed match."""
    if key in spec.categories:
        return key
    folded = key.strip().casefold()
    for label in spec.categories:
        if label.strip().casefold() == folded:
            return label
    return None


def parse_distribution_response(text: str, spec: FeatureSpec) -> RawDistribution:
    """Extract the category -> weight object from a distribution response.

    Keys are mapped onto the feature's labels where possible; unmatched
    keys are kept verbatim so validation can name the offender. Two keys
    mapping to the same label have their weights summed. Values must be
    numeric.

    Raises:
        NoJsonFound: No JSON object in the text.
        NonNumericWeight: A value is not a plain number.
    """
    value = extract_first_json(text)
    if not isinstance(value, dict):
        raise NoJsonFound("response JSON is not an object")
    entries: dict[str, float] = {}
    for key, weight in value.items():
        if isinstance(weight, bool) or not isinstance(weight, (int, float)):
            raise NonNumericWeight(str(key))
        label = _match_label(str(key), spec) or str(key)
        entries[label] = entries.get(label, 0.0) + float(weight)
    return RawDistribution(entries=entries)


def parse_cell_response(text: str, spec: FeatureSpec) -> str:
    """Reduce a cell response to one category label.

    Strips fences, whitespace, and wrapping quotes, then matches exactly
    or case-insensitively against the category list.

    Raises:
        NotACategory: If what remains is not an allowed label.
    """
    cleaned = _strip_fences(text).strip().strip("'\"`").strip()
    label = _match_label(cleaned, spec)
    if label is None:
        raise NotACategory(text.strip())
    return label


def parse_table_response(text: str, schema: DatasetSchema) -> Table:
    """Parse a whole-table response into a Table, flagging off-list labels.

    Accepts a JSON array of row objects or a columns -> arrays object; a
    single-key wrapper object around a row array is unwrapped. Row keys
    match feature names exactly or case-insensitively. Labels outside a
    feature's category list are preserved but flagged "invalid_label".

    Raises:
        NoJsonFound: No JSON, or a shape that is neither rows nor columns.
        SchemaMismatch: A row is missing a feature, or columns are ragged.
    """
    value = extract_first_json(text)
    rows_raw = _coerce_row_objects(value, schema)
    rows: list[list[str]] = []
    flags: dict[tuple[int, str], str] = {}
    for i, obj in enumerate(rows_raw):
        if not isinstance(obj, dict):
            raise SchemaMismatch(i, "<row>")
        lowered = {str(k).strip().casefold(): v for k, v in obj.items()}
        row: list[str] = []
        for feature in schema.features:
            if feature.name in obj:
                cell = obj[feature.name]
            elif feature.name.strip().casefold() in lowered:
                cell = lowered[feature.name.strip().casefold()]
            else:
                raise SchemaMismatch(i, feature.name)
            label = cell if isinstance(cell, str) else json.dumps(cell)
            matched = _match_label(label.strip() if isinstance(label, str) else label, feature)
            if matched is None:
                flags[(i, feature.name)] = "invalid_label"
                row.append(label)
            else:
                row.append(matched)
        rows.append(row)
    return Table.from_rows(schema, rows, flags)


def _coerce_row_objects(value, schema: DatasetSchema) -> list:
    """Normalize the accepted top-level JSON shapes to a list of row dicts."""
    if isinstance(value, list):
        return value
    if isinstance(value, dict):
        if _looks_like_columns(value, schema):
            return _transpose_columns(value)
        # single-key wrapper like {"table": [...]} around a row array
        if len(value) == 1:
            (inner,) = value.values()
            if isinstance(inner, list):
                return inner
    raise NoJsonFound("response JSON is neither a row array nor a columns object")


def _looks_like_columns(value: dict, schema: DatasetSchema) -> bool:
    if not value or not all(isinstance(v, list) for v in value.values()):
        return False
    names = {f.name.strip().casefold() for f in schema.features}
    return all(str(k).strip().casefold() in names for k in value)


def _transpose_columns(value: dict) -> list[dict]:
    lengths = {k: len(v) for k, v in value.items()}
    n = min(lengths.values())
    for k, length in lengths.items():
        if length != n:
            raise SchemaMismatch(n, str(k))
    keys = list(value)
    return [{k: value[k][i] for k in keys} for i in range(n)]
