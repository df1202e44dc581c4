"""Shared fixtures: the bundled California dataset and hand-built helpers."""

from __future__ import annotations

import pytest

from probtab.cli import bundled_fixture_path
from probtab.oracle import FixtureOracle
from probtab.schema import DatasetSchema, FeatureSpec, parse_schema_file

CALIFORNIA_PATH = bundled_fixture_path("california_original")

# Ethnicity shares within "Children (0-17)" from the bundled reference.
CHILDREN_DIST = {
    "Latino": 0.519,
    "White": 0.238,
    "Asian/Pacific Islander": 0.134,
    "Black": 0.05,
    "Native American": 0.004,
    "Multiracial/Other": 0.055,
}

ETHNICITY_LABELS = tuple(CHILDREN_DIST)

AGE_LABELS = (
    "Children (0-17)",
    "College-going age (18-24)",
    "Prime-working age (25-54)",
    "Adults (55-64)",
    "65 and older",
)


@pytest.fixture
def california_path():
    return CALIFORNIA_PATH


@pytest.fixture
def california_schema() -> DatasetSchema:
    return parse_schema_file(CALIFORNIA_PATH)


@pytest.fixture
def california_oracle() -> FixtureOracle:
    return FixtureOracle.from_file(CALIFORNIA_PATH)


@pytest.fixture
def ethnicity_spec(california_schema) -> FeatureSpec:
    return california_schema.feature("Ethnicity Group")


@pytest.fixture
def age_spec(california_schema) -> FeatureSpec:
    return california_schema.feature("Age Group")


class StubOracle:
    """Plays back scripted replies (or raises scripted exceptions)."""

    def __init__(self, replies):
        self.replies = list(replies)
        self.calls = []

    def complete(self, prompt, follow_ups=()):
        self.calls.append((prompt, tuple(follow_ups)))
        reply = self.replies.pop(0)
        if isinstance(reply, Exception):
            raise reply
        return reply
