"""Categorical distributions: validation, normalization, and sampling.

The sampler is a single-stream inverse-CDF draw over the feature's
category order, backed by the stdlib Mersenne Twister. That generator is
documented to produce the same sequence for the same seed on every
platform and Python version, which is what makes golden-file tests and
byte-identical reruns possible.
"""

from __future__ import annotations

import logging
import math
import random
from bisect import bisect_right
from dataclasses import dataclass, field
from functools import cached_property

from probtab.errors import (
    CategoryMismatch,
    DegenerateDistribution,
    InvalidWeight,
    UnknownCategory,
)
from probtab.schema import FeatureKind, FeatureSpec, parse_range_label

logger = logging.getLogger(__name__)

_MASK64 = (1 << 64) - 1

# Raw weight totals inside this band are treated as benign float noise and
# renormalized silently; anything outside is still renormalized but logged.
_SILENT_TOTAL_LO = 0.5
_SILENT_TOTAL_HI = 1.5


@dataclass
class RawDistribution:
    """Unvalidated label -> weight map, straight from an oracle response."""

    entries: dict[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class CategoricalDistribution:
    """Validated probability vector ordered like the feature's categories."""

    categories: tuple[str, ...]
    probs: tuple[float, ...]

    def __post_init__(self):
        if len(self.categories) != len(self.probs):
            raise CategoryMismatch("categories and probs differ in length")
        for label, p in zip(self.categories, self.probs):
            if p < 0:
                raise InvalidWeight(label, p)
        if abs(sum(self.probs) - 1.0) > 1e-9:
            raise DegenerateDistribution(
                f"probabilities sum to {sum(self.probs)!r}, not 1"
            )

    @cached_property
    def cumulative(self) -> tuple[float, ...]:
        total = 0.0
        out = []
        for p in self.probs:
            total += p
            out.append(total)
        return tuple(out)

    def prob_of(self, label: str) -> float:
        return self.probs[self.categories.index(label)]


def _splitmix64(x: int) -> int:
    """One splitmix64 step; the documented mixer behind derive_seed."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(base_seed: int, stream_index: int) -> int:
    """Derive an independent stream seed: splitmix64(base XOR index)."""
    return _splitmix64((base_seed ^ stream_index) & _MASK64)


class RngState:
    """Single-owner seeded PRNG stream with draw accounting.

    Algorithm: stdlib ``random.Random`` (MT19937), seeded with a 64-bit
    unsigned integer. ``draws`` counts uniforms handed out, so tests can
    assert exactly how many draws an operation consumed. Not thread-safe;
    give each concurrent task its own stream via derive_seed.
    """

    algorithm = "mt19937"

    def __init__(self, seed: int):
        self.seed = seed & _MASK64
        self._rng = random.Random(self.seed)
        self.draws = 0

    def random(self) -> float:
        """Next uniform in [0, 1); advances the stream by one draw."""
        self.draws += 1
        return self._rng.random()

    def spawn(self, stream_index: int) -> "RngState":
        return RngState(derive_seed(self.seed, stream_index))

    def __repr__(self):
        return f"RngState(seed={self.seed}, draws={self.draws})"


def validate_and_normalize(raw: RawDistribution, spec: FeatureSpec) -> CategoricalDistribution:
    """Turn untrusted weights into a valid distribution over *spec*'s categories.

    Policy: unknown labels are an error; known labels missing from the raw
    map get weight 0; negative or non-finite weights are an error; an
    all-zero total is an error; otherwise weights are scaled to sum to 1
    and reordered to match the feature's category order.

    Raises:
        UnknownCategory, InvalidWeight, DegenerateDistribution
    """
    allowed = set(spec.categories)
    for label, value in raw.entries.items():
        if label not in allowed:
            raise UnknownCategory(label)
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise InvalidWeight(label, value)
        if not math.isfinite(value) or value < 0:
            raise InvalidWeight(label, value)
    total = float(sum(raw.entries.values()))
    if total == 0.0:
        raise DegenerateDistribution(f"all weights for feature {spec.name!r} are zero")
    if not (_SILENT_TOTAL_LO <= total <= _SILENT_TOTAL_HI):
        logger.warning(
            "raw weights for feature %r sum to %.6g; renormalizing", spec.name, total
        )
    probs = tuple(float(raw.entries.get(c, 0.0)) / total for c in spec.categories)
    return CategoricalDistribution(categories=tuple(spec.categories), probs=probs)


def sample(dist: CategoricalDistribution, rng: RngState) -> str:
    """Draw one category label by inverse CDF; consumes exactly one uniform."""
    u = rng.random()
    idx = bisect_right(dist.cumulative, u)
    if idx >= len(dist.categories):  # guard float roundoff at the top end
        idx = len(dist.categories) - 1
    return dist.categories[idx]


def sample_counts(dist: CategoricalDistribution, n: int, rng: RngState) -> dict[str, int]:
    """Count the outcomes of n successive sample() draws from one stream."""
    if n < 1:
        raise ValueError("n must be >= 1")
    counts = dict.fromkeys(dist.categories, 0)
    cumulative = dist.cumulative
    categories = dist.categories
    top = len(categories) - 1
    for _ in range(n):
        u = rng.random()
        idx = bisect_right(cumulative, u)
        counts[categories[min(idx, top)]] += 1
    return counts


def realize_numeric_range(label: str, spec: FeatureSpec, rng: RngState) -> int:
    """Realize a range label into a uniform integer; consumes one draw.

    Closed labels map to [lo, hi]; "N+" labels map to [N, spec.cap].

    Raises:
        UnparsableRange: If the label has neither form.
    """
    if spec.kind is not FeatureKind.NUMERIC_RANGE:
        raise ValueError(f"feature {spec.name!r} is not numeric_range")
    lo, hi = parse_range_label(label, spec.cap)
    u = rng.random()
    return min(lo + int(u * (hi - lo + 1)), hi)
