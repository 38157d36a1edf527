"""Base measures on [0, 1], empirical measures, histograms and weighted totals.

Two base measure families are supported: beta(a, b) densities and finite
discrete measures. Both expose sampling, the mean, and the cumulative mass
below a point, which is all the rest of the package needs.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np
from scipy import special

from .errors import ValidationError

if TYPE_CHECKING:
    from .state import MarketConfiguration


class BetaBase:
    """Beta(a, b) base measure on [0, 1]."""

    kind = "beta"

    __slots__ = ("a", "b")

    def __init__(self, a: float, b: float):
        a, b = float(a), float(b)
        if not (a > 0 and b > 0):
            raise ValidationError(f"beta base needs positive shape parameters, got ({a}, {b})")
        self.a = a
        self.b = b

    def sample(self, rng: np.random.Generator) -> float:
        return float(rng.beta(self.a, self.b))

    def mean(self) -> float:
        return self.a / (self.a + self.b)

    def mass_below(self, x: float) -> float:
        """Measure of [0, x)."""
        if x <= 0.0:
            return 0.0
        if x >= 1.0:
            return 1.0
        return float(special.betainc(self.a, self.b, x))

    def pdf(self, x: float) -> float:
        if not 0.0 < x < 1.0:
            return 0.0
        return float(
            x ** (self.a - 1.0) * (1.0 - x) ** (self.b - 1.0) / special.beta(self.a, self.b)
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BetaBase):
            return NotImplemented
        return (self.a, self.b) == (other.a, other.b)

    def __hash__(self) -> int:
        return hash(("beta", self.a, self.b))

    def __repr__(self) -> str:
        return f"BetaBase({self.a}, {self.b})"


class DiscreteBase:
    """Finite discrete base measure: distinct atoms in [0, 1] with simplex weights."""

    kind = "discrete"

    __slots__ = ("atoms", "weights", "_cum")

    def __init__(self, atoms: Sequence[float], weights: Sequence[float]):
        atoms = tuple(float(x) for x in atoms)
        weights = tuple(float(w) for w in weights)
        if len(atoms) == 0 or len(atoms) != len(weights):
            raise ValidationError("discrete base needs matching, non-empty atoms and weights")
        if len(set(atoms)) != len(atoms):
            raise ValidationError("discrete base atoms must be distinct")
        for x in atoms:
            if not 0.0 <= x <= 1.0:
                raise ValidationError(f"atom {x!r} outside [0, 1]")
        if any(w < 0 for w in weights):
            raise ValidationError("discrete base weights must be nonnegative")
        total = sum(weights)
        if abs(total - 1.0) > 1e-9:
            raise ValidationError(f"discrete base weights must sum to 1, got {total!r}")
        self.atoms = atoms
        self.weights = weights
        cum = []
        acc = 0.0
        for w in weights:
            acc += w
            cum.append(acc)
        cum[-1] = total  # guard against drift past the true total
        self._cum = cum

    def sample(self, rng: np.random.Generator) -> float:
        u = rng.random() * self._cum[-1]
        return self.atoms[min(bisect.bisect_right(self._cum, u), len(self.atoms) - 1)]

    def mean(self) -> float:
        return sum(x * w for x, w in zip(self.atoms, self.weights))

    def mass_below(self, x: float) -> float:
        return sum(w for a, w in zip(self.atoms, self.weights) if a < x)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DiscreteBase):
            return NotImplemented
        return (self.atoms, self.weights) == (other.atoms, other.weights)

    def __hash__(self) -> int:
        return hash(("discrete", self.atoms, self.weights))

    def __repr__(self) -> str:
        return f"DiscreteBase(atoms={self.atoms}, weights={self.weights})"


BaseMeasure = BetaBase | DiscreteBase


def sample_base(measure: BaseMeasure, rng: np.random.Generator) -> float:
    """Draw one firm label from a base measure."""
    return measure.sample(rng)


def base_mean(measure: BaseMeasure) -> float:
    """Mean of a base measure."""
    return measure.mean()


class EmpiricalMeasure:
    """Read-only view of a market configuration as the measure n^-1 sum_i delta_{x_i}."""

    __slots__ = ("config",)

    def __init__(self, config: "MarketConfiguration"):
        self.config = config

    @property
    def n(self) -> int:
        return self.config.n

    def mass_at(self, label: float) -> float:
        return self.config.count(label) / self.config.n

    def support(self) -> list[float]:
        return [label for label, _ in self.config.cluster_view()]

    def mean(self) -> float:
        return self.config.label_mean()


@dataclass(frozen=True)
class Histogram:
    """Counts of unit labels over equally spaced bins of [0, 1].

    Bins are half-open [e_k, e_{k+1}) except the last, which is closed so
    that a label of exactly 1.0 lands in the final bin. A label equal to an
    interior edge belongs to the bin on its right.
    """

    edges: tuple[float, ...]
    counts: tuple[int, ...]

    @property
    def bin_count(self) -> int:
        return len(self.counts)

    def total(self) -> int:
        return sum(self.counts)


def bin_index(label: float, bin_count: int) -> int:
    """Bin of a label under the equally spaced binning of [0, 1]."""
    edges = np.linspace(0.0, 1.0, bin_count + 1)
    k = int(np.searchsorted(edges, label, side="right")) - 1
    return min(max(k, 0), bin_count - 1)


def histogram(config: "MarketConfiguration", bin_count: int = 15) -> Histogram:
    """Histogram of a market's unit labels over equally spaced bins of [0, 1]."""
    if bin_count < 1:
        raise ValidationError(f"bin_count must be at least 1, got {bin_count}")
    edges = np.linspace(0.0, 1.0, bin_count + 1)
    counts = [0] * bin_count
    for label, mult in config.cluster_view():
        k = int(np.searchsorted(edges, label, side="right")) - 1
        counts[min(max(k, 0), bin_count - 1)] += mult
    return Histogram(edges=tuple(float(e) for e in edges), counts=tuple(counts))


def weighted_empirical_total(config: "MarketConfiguration", selection) -> float:
    """Sum of the selection weight over all units of a market.

    Computed per cluster (multiplicity times the weight of the cluster's
    label), which agrees with the per-unit sum because the weight of a unit
    depends only on its label and the market configuration. Callers divide
    by n for the mean or subtract one unit's weight for leave-one-out sums.
    """
    total = 0.0
    for label, mult in config.cluster_view():
        w = selection.weight(label, config)
        if w < 0:
            raise ValidationError(
                f"selection weight must be nonnegative, got {w!r} at label {label!r}"
            )
        total += mult * w
    return total
