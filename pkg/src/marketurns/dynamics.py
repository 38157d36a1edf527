"""Single-site update law of the interacting urn system.

One update vacates a share unit (chosen by a removal policy) and refills it
from a three-part conditional law: a fresh firm drawn from the market's base
measure, an entrant copied from another market through the migration kernel,
or a copy of one of the remaining units in the same market. The relative
masses of the three branches are

    new     theta * pi * integral of the selection weight against the base,
    cross   theta * (1 - pi) * sum_r' m(r, r') * mean selection weight in r',
    within  sum over the other units of their selection weight,

all selection weights being evaluated against the market under update. With
unit selection weights the normalizer collapses to theta + n - 1 and the
within branch is a uniform copy, which is the plain urn scheme.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace as _dc_replace
from typing import TYPE_CHECKING, Callable, ClassVar, Mapping, Sequence

import numpy as np
from scipy import integrate

from .errors import SamplerError, UndefinedPolicyError, ValidationError
from .measures import BetaBase, DiscreteBase, EmpiricalMeasure

if TYPE_CHECKING:
    from .measures import BaseMeasure
    from .state import MarketConfiguration, SystemState


# ---------------------------------------------------------------------------
# removal policies

class RemovalPolicy:
    """Distribution over firms used to pick the unit that vacates its share."""

    kind: ClassVar[str] = "abstract"

    def firm_weights(self, clusters: Sequence[tuple[float, int]], n: int) -> list[float]:
        raise NotImplementedError


@dataclass(frozen=True)
class NeutralRemoval(RemovalPolicy):
    """Every firm equally likely to shrink, regardless of size."""

    kind: ClassVar[str] = "neutral"

    def firm_weights(self, clusters, n):
        k = len(clusters)
        return [1.0 / k] * k


@dataclass(frozen=True)
class ProportionalRemoval(RemovalPolicy):
    """Firms shrink proportionally to their current share."""

    kind: ClassVar[str] = "proportional"

    def firm_weights(self, clusters, n):
        return [mult / n for _, mult in clusters]


@dataclass(frozen=True)
class InverseRemoval(RemovalPolicy):
    """Firms shrink with probability proportional to one minus their share.

    Undefined for a single firm, where the weight has no mass left to place.
    """

    kind: ClassVar[str] = "inverse"

    def firm_weights(self, clusters, n):
        k = len(clusters)
        if k < 2:
            raise UndefinedPolicyError("inverse removal is undefined when a market has a single firm")
        return [(1.0 - mult / n) / (k - 1) for _, mult in clusters]


@dataclass(frozen=True)
class UniformUnitRemoval(RemovalPolicy):
    """Every unit equally likely to be vacated; firm weights are the shares."""

    kind: ClassVar[str] = "uniform_unit"

    def firm_weights(self, clusters, n):
        return [mult / n for _, mult in clusters]


@dataclass(frozen=True)
class AntitrustRemoval(RemovalPolicy):
    """Cap enforcement: any firm above share `threshold` is broken up first.

    While no firm exceeds the cap the fallback policy applies. Once a firm's
    share strictly exceeds the cap it is selected with probability one; if
    several firms exceed it at once (possible only for caps below one half)
    the choice is uniform among them.
    """

    threshold: float
    fallback: RemovalPolicy = field(default_factory=NeutralRemoval)

    kind: ClassVar[str] = "antitrust"

    def __post_init__(self):
        if not 0.0 < self.threshold <= 1.0:
            raise ValidationError(f"antitrust threshold must lie in (0, 1], got {self.threshold!r}")

    def firm_weights(self, clusters, n):
        cap = n * self.threshold
        over = [j for j, (_, mult) in enumerate(clusters) if mult > cap]
        if not over:
            return self.fallback.firm_weights(clusters, n)
        w = [0.0] * len(clusters)
        for j in over:
            w[j] = 1.0 / len(over)
        return w


def removal_weights(
    policy: RemovalPolicy, clusters: Sequence[tuple[float, int]], n: int
) -> np.ndarray:
    """Firm-level removal probabilities aligned with the given cluster table.

    `clusters` is a sequence of (label, multiplicity) pairs, normally the
    output of cluster_view, and `n` the number of units in the market.
    """
    if n < 1:
        raise ValidationError("n must be positive")
    total = sum(mult for _, mult in clusters)
    if total != n:
        raise ValidationError(f"cluster multiplicities sum to {total}, expected n={n}")
    w = np.asarray(policy.firm_weights(clusters, n), dtype=float)
    if np.any(w < 0):
        raise ValidationError(f"removal weights must be nonnegative, got {w!r}")
    if abs(float(w.sum()) - 1.0) > 1e-9:
        raise ValidationError(f"removal weights must sum to one, got {float(w.sum())!r}")
    return w


# ---------------------------------------------------------------------------
# selection weights

_REJECTION_CAP = 100_000


class SelectionSpec:
    """Per-unit selection weight used to bias the conditional law.

    `weight(label, config)` evaluates the weight of a label against the
    configuration of the market under update, `base_integral` integrates the
    weight against a base measure, and `sup_weight` bounds it from above for
    rejection sampling of the reweighted base.
    """

    kind: ClassVar[str] = "abstract"

    @property
    def is_unit_weight(self) -> bool:
        """True when the weight is provably one everywhere.

        The sampler then takes exact closed-form paths (normalizer
        theta + n - 1, uniform copies) instead of evaluating weights.
        """
        return False

    def weight(self, label: float, config: "MarketConfiguration") -> float:
        raise NotImplementedError

    def base_integral(self, base: "BaseMeasure", config: "MarketConfiguration") -> float:
        if isinstance(base, DiscreteBase):
            return sum(w * self._checked(a, config) for a, w in zip(base.atoms, base.weights))
        val, _ = integrate.quad(lambda y: self._checked(y, config) * base.pdf(y), 0.0, 1.0)
        return float(val)

    def sup_weight(self, config: "MarketConfiguration") -> float:
        raise NotImplementedError

    def _checked(self, label: float, config: "MarketConfiguration") -> float:
        w = self.weight(label, config)
        if w < 0:
            raise ValidationError(
                f"selection weight must be nonnegative, got {w!r} at label {label!r}"
            )
        return w


@dataclass(frozen=True)
class UnitSelection(SelectionSpec):
    """Weight identically one: the unweighted urn."""

    kind: ClassVar[str] = "unit"

    @property
    def is_unit_weight(self):
        return True

    def weight(self, label, config):
        return 1.0

    def base_integral(self, base, config):
        return 1.0

    def sup_weight(self, config):
        return 1.0


@dataclass(frozen=True)
class IdentitySelection(SelectionSpec):
    """Weight equal to the label itself, so high labels win shares more often."""

    kind: ClassVar[str] = "identity"

    def weight(self, label, config):
        return label

    def base_integral(self, base, config):
        return base.mean()

    def sup_weight(self, config):
        return 1.0


@dataclass(frozen=True)
class SigmaSelection(SelectionSpec):
    """Weight 1 + sigma(label) / n, a size-n vanishing perturbation of neutrality.

    `bound` must dominate |sigma| on [0, 1]; it is used both for rejection
    sampling and for validating that the weight stays nonnegative.
    """

    sigma: Callable[[float], float] = field(compare=False)
    bound: float = 0.0
    coeffs: tuple[float, ...] | None = None  # polynomial coefficients, if built from one

    kind: ClassVar[str] = "sigma"

    def __post_init__(self):
        if self.bound < 0:
            raise ValidationError(f"sigma bound must be nonnegative, got {self.bound!r}")

    @classmethod
    def from_coeffs(cls, coeffs: Sequence[float]) -> "SigmaSelection":
        """Build sigma(z) = sum_k coeffs[k] * z^k with the triangle-inequality bound."""
        coeffs = tuple(float(c) for c in coeffs)

        def sigma(z: float) -> float:
            acc = 0.0
            for c in reversed(coeffs):
                acc = acc * z + c
            return acc

        return cls(sigma=sigma, bound=sum(abs(c) for c in coeffs), coeffs=coeffs)

    @property
    def is_unit_weight(self):
        # a polynomial with all-zero coefficients is exactly the unweighted urn
        return self.coeffs is not None and not any(self.coeffs)

    def weight(self, label, config):
        w = 1.0 + self.sigma(label) / config.n
        if w < 0:
            raise ValidationError(
                f"selection weight 1 + sigma/n is negative at label {label!r} (n={config.n})"
            )
        return w

    def base_integral(self, base, config):
        n = config.n
        if isinstance(base, DiscreteBase):
            return 1.0 + sum(w * self.sigma(a) for a, w in zip(base.atoms, base.weights)) / n
        if self.coeffs is not None and isinstance(base, BetaBase):
            # moments of Beta(a, b): E[X^k] = prod_{j<k} (a + j) / (a + b + j)
            acc = 0.0
            moment = 1.0
            for k, c in enumerate(self.coeffs):
                if k > 0:
                    moment *= (base.a + k - 1.0) / (base.a + base.b + k - 1.0)
                acc += c * moment
            return 1.0 + acc / n
        val, _ = integrate.quad(lambda y: self.sigma(y) * base.pdf(y), 0.0, 1.0)
        return 1.0 + float(val) / n

    def sup_weight(self, config):
        return 1.0 + self.bound / config.n


@dataclass(frozen=True)
class InverseClusterSelection(SelectionSpec):
    """Weight equal to the reciprocal of the label's multiplicity in the market.

    Each incumbent firm then carries total weight about one regardless of
    size. Labels absent from the market (fresh draws and entrants from other
    markets) get weight one, the weight a brand-new firm would carry.
    """

    kind: ClassVar[str] = "inverse_cluster"

    def weight(self, label, config):
        mult = config.count(label)
        return 1.0 / mult if mult > 0 else 1.0

    def base_integral(self, base, config):
        if isinstance(base, DiscreteBase):
            return sum(w * self.weight(a, config) for a, w in zip(base.atoms, base.weights))
        # a continuous base puts no mass on the finitely many occupied labels
        return 1.0

    def sup_weight(self, config):
        return 1.0


@dataclass(frozen=True)
class CustomSelection(SelectionSpec):
    """User-supplied weight function of (label, empirical measure of the market).

    `bound` must dominate the weight on [0, 1] for every configuration the
    run can reach; the rejection sampler checks it and fails loudly when the
    declared bound is exceeded.
    """

    fn: Callable[[float, EmpiricalMeasure], float] = field(compare=False)
    bound: float = 1.0
    name: str = "custom"

    kind: ClassVar[str] = "custom"

    def __post_init__(self):
        if self.bound <= 0:
            raise ValidationError(f"custom selection bound must be positive, got {self.bound!r}")

    def weight(self, label, config):
        return float(self.fn(label, EmpiricalMeasure(config)))

    def sup_weight(self, config):
        return self.bound


def sample_reweighted_base(
    selection: SelectionSpec,
    base: "BaseMeasure",
    config: "MarketConfiguration",
    rng: np.random.Generator,
) -> float:
    """Draw a label from the base measure reweighted by the selection weight.

    Discrete bases are reweighted exactly; the identity weight against a
    beta(a, b) base tilts it to beta(a + 1, b) in closed form; anything else
    falls back to rejection sampling under the declared envelope.
    """
    if selection.is_unit_weight:
        return base.sample(rng)
    if isinstance(base, DiscreteBase):
        w = [bw * selection._checked(a, config) for a, bw in zip(base.atoms, base.weights)]
        total = sum(w)
        if total <= 0.0:
            raise SamplerError("reweighted base has no mass on any atom")
        u = rng.random() * total
        acc = 0.0
        for a, wa in zip(base.atoms, w):
            acc += wa
            if u < acc:
                return a
        return base.atoms[-1]
    if type(selection) is IdentitySelection:
        return float(rng.beta(base.a + 1.0, base.b))
    bound = selection.sup_weight(config)
    if bound <= 0.0:
        raise SamplerError(f"selection bound {bound!r} leaves nothing to sample")
    for _ in range(_REJECTION_CAP):
        y = base.sample(rng)
        w = selection._checked(y, config)
        if w > bound * (1.0 + 1e-12):
            raise SamplerError(
                f"selection weight {w!r} at label {y!r} exceeds the declared bound {bound!r}"
            )
        if rng.random() * bound <= w:
            return y
    raise SamplerError(
        f"rejection sampler made no progress after {_REJECTION_CAP} proposals "
        f"(bound {bound!r}); the selection weight is nearly zero under the base"
    )


# ---------------------------------------------------------------------------
# migration kernel

class MigrationKernel:
    """Row-stochastic market-to-market weights with a zero diagonal."""

    __slots__ = ("_rows",)

    def __init__(self, rows: Mapping[str, Mapping[str, float]]):
        ids = sorted(rows)
        if len(ids) < 2:
            raise ValidationError("migration kernel needs at least two markets")
        clean: dict[str, tuple[tuple[str, float], ...]] = {}
        for r in ids:
            row = dict(rows[r])
            diag = row.pop(r, 0.0)
            if diag != 0.0:
                raise ValidationError(f"migration kernel diagonal must be zero, got m({r},{r})={diag!r}")
            unknown = set(row) - set(ids)
            if unknown:
                raise ValidationError(f"migration row {r!r} references unknown markets {sorted(unknown)}")
            for r2, w in row.items():
                if w < 0:
                    raise ValidationError(f"migration weight m({r},{r2}) must be nonnegative, got {w!r}")
            total = sum(row.values())
            if abs(total - 1.0) > 1e-9:
                raise ValidationError(f"migration row {r!r} must sum to one, got {total!r}")
            clean[r] = tuple((r2, float(row.get(r2, 0.0))) for r2 in ids if r2 != r)
        self._rows = clean

    @classmethod
    def uniform(cls, ids: Sequence[str]) -> "MigrationKernel":
        ids = sorted(ids)
        k = len(ids)
        if k < 2:
            raise ValidationError("uniform migration kernel needs at least two markets")
        return cls({r: {r2: 1.0 / (k - 1) for r2 in ids if r2 != r} for r in ids})

    @property
    def market_ids(self) -> tuple[str, ...]:
        return tuple(self._rows)

    def row(self, r: str) -> tuple[tuple[str, float], ...]:
        """Off-diagonal weights of row r as (market, weight) pairs, id-sorted."""
        try:
            return self._rows[r]
        except KeyError:
            raise ValidationError(f"unknown market {r!r} in migration kernel") from None

    def as_dict(self) -> dict[str, dict[str, float]]:
        return {r: {r2: w for r2, w in row} for r, row in self._rows.items()}

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, MigrationKernel):
            return NotImplemented
        return self._rows == other._rows

    def __repr__(self) -> str:
        return f"MigrationKernel({self.as_dict()!r})"


# ---------------------------------------------------------------------------
# parameters

def _as_market_scalar(value, name: str, lo: float, hi: float | None):
    """Validate a scalar-or-per-market parameter; returns float or dict."""
    if isinstance(value, Mapping):
        out = {}
        for r, v in value.items():
            v = float(v)
            if v < lo or (hi is not None and v > hi):
                raise ValidationError(f"{name}[{r!r}] out of range: {v!r}")
            out[str(r)] = v
        if not out:
            raise ValidationError(f"{name} map must not be empty")
        return out
    v = float(value)
    if v < lo or (hi is not None and v > hi):
        raise ValidationError(f"{name} out of range: {v!r}")
    return v


@dataclass
class ParameterSet:
    """All parameters of the update law.

    `theta` (entry mass) and `pi` (share of entry mass spent on genuinely new
    firms rather than cross-market entrants) may be scalars or per-market
    maps. `base` is the firm-label base measure, scalar or per-market.
    `market_weights` selects which market an update happens in (uniform when
    omitted) and `migration` is required only when cross-market entry can
    actually occur. `clock_rate` is the event intensity of the continuous
    time embedding; when omitted the engine uses n^2 times the market count.
    """

    theta: float | Mapping[str, float]
    pi: float | Mapping[str, float] = 1.0
    base: "BaseMeasure | Mapping[str, BaseMeasure]" = field(default_factory=lambda: BetaBase(1.0, 1.0))
    removal: RemovalPolicy = field(default_factory=UniformUnitRemoval)
    selection: SelectionSpec = field(default_factory=UnitSelection)
    migration: MigrationKernel | None = None
    market_weights: Mapping[str, float] | None = None
    clock_rate: float | None = None

    def __post_init__(self):
        self.theta = _as_market_scalar(self.theta, "theta", 0.0, None)
        self.pi = _as_market_scalar(self.pi, "pi", 0.0, 1.0)
        if not isinstance(self.removal, RemovalPolicy):
            raise ValidationError(f"removal must be a RemovalPolicy, got {self.removal!r}")
        if not isinstance(self.selection, SelectionSpec):
            raise ValidationError(f"selection must be a SelectionSpec, got {self.selection!r}")
        if self.migration is not None and not isinstance(self.migration, MigrationKernel):
            raise ValidationError(f"migration must be a MigrationKernel, got {self.migration!r}")
        if self.market_weights is not None:
            mw = {str(r): float(w) for r, w in self.market_weights.items()}
            if any(w < 0 for w in mw.values()):
                raise ValidationError("market weights must be nonnegative")
            total = sum(mw.values())
            if abs(total - 1.0) > 1e-9:
                raise ValidationError(f"market weights must sum to one, got {total!r}")
            self.market_weights = mw
        if self.clock_rate is not None:
            self.clock_rate = float(self.clock_rate)
            if not self.clock_rate > 0:
                raise ValidationError(f"clock_rate must be positive, got {self.clock_rate!r}")

    def theta_in(self, r: str) -> float:
        if isinstance(self.theta, Mapping):
            try:
                return self.theta[r]
            except KeyError:
                raise ValidationError(f"theta has no entry for market {r!r}") from None
        return self.theta

    def pi_in(self, r: str) -> float:
        if isinstance(self.pi, Mapping):
            try:
                return self.pi[r]
            except KeyError:
                raise ValidationError(f"pi has no entry for market {r!r}") from None
        return self.pi

    def base_in(self, r: str) -> "BaseMeasure":
        if isinstance(self.base, Mapping):
            try:
                return self.base[r]
            except KeyError:
                raise ValidationError(f"base has no entry for market {r!r}") from None
        return self.base

    def kernel_for(self, ids: Sequence[str]) -> MigrationKernel:
        return self.migration if self.migration is not None else MigrationKernel.uniform(ids)

    def validate(self, market_ids: Sequence[str]) -> None:
        """Check per-market maps and the kernel against a concrete id set."""
        ids = set(market_ids)
        for name, value in (("theta", self.theta), ("pi", self.pi), ("base", self.base)):
            if isinstance(value, Mapping):
                missing = ids - set(value)
                extra = set(value) - ids
                if missing or extra:
                    raise ValidationError(
                        f"{name} map does not match the market ids "
                        f"(missing {sorted(missing)}, unknown {sorted(extra)})"
                    )
        if self.market_weights is not None and set(self.market_weights) != ids:
            raise ValidationError("market weights must cover exactly the market ids")
        if self.migration is not None:
            if len(ids) < 2:
                raise ValidationError("migration kernel given but there is only one market")
            if set(self.migration.market_ids) != ids:
                raise ValidationError("migration kernel ids must match the market ids")


_PATCHABLE = None  # filled in below, after the dataclass exists


def apply_patch(params: ParameterSet, patch: Mapping[str, object]) -> ParameterSet:
    """Return a copy of `params` with the given fields replaced.

    Patch keys must be ParameterSet field names. A per-market patch value
    merges into an existing per-market map, so markets not named keep their
    values; against a scalar it must name every market. The patched set is
    re-validated.
    """
    global _PATCHABLE
    if _PATCHABLE is None:
        _PATCHABLE = {f.name for f in fields(ParameterSet)}
    unknown = set(patch) - _PATCHABLE
    if unknown:
        raise ValidationError(f"unknown parameter fields in patch: {sorted(unknown)}")
    resolved = dict(patch)
    for name in ("theta", "pi", "base", "market_weights"):
        if name in resolved and isinstance(resolved[name], Mapping):
            old = getattr(params, name)
            if isinstance(old, Mapping):
                resolved[name] = {**old, **resolved[name]}
    return _dc_replace(params, **resolved)


# ---------------------------------------------------------------------------
# the single-site conditional law

@dataclass(frozen=True, slots=True)
class BranchOutcome:
    """Result of one conditional draw: which branch fired and the label written.

    `source_market` is set for cross entries and `source_unit` for cross and
    within copies (the index of the unit whose label was copied).
    """

    branch: str  # "new", "cross" or "within"
    label: float
    source_market: str | None = None
    source_unit: int | None = None


def _cross_active(state: "SystemState", params: ParameterSet) -> bool:
    # A single market has nowhere to import from; the cross branch is a
    # structural zero there no matter what pi says.
    return len(state.markets) > 1


def _branch_masses(state: "SystemState", r: str, i: int, params: ParameterSet):
    """Masses of the three branches of the conditional law at (market r, unit i).

    Returns (w_new, w_cross, w_within, cross_terms, within_terms) where the
    two term lists carry the decomposition needed to sample inside a branch
    ((market, mass) pairs and (label, mass) pairs respectively); they are
    None on the unit-selection fast path where the decomposition is uniform.
    """
    cfg = state.markets[r]
    n = cfg.n
    sel = params.selection
    th = params.theta_in(r)
    pi = params.pi_in(r)

    if sel.is_unit_weight:
        w_new = th * pi
        w_cross = th - w_new if _cross_active(state, params) else 0.0
        return w_new, w_cross, float(n - 1), None, None

    base_r = params.base_in(r)
    w_new = th * pi * sel.base_integral(base_r, cfg) if th > 0.0 and pi > 0.0 else 0.0

    xi = cfg.units[i]
    w_within = 0.0
    within_terms: list[tuple[float, float]] = []
    for label, mult in cfg.cluster_view():
        w = sel._checked(label, cfg)
        m = mult - 1 if label == xi else mult
        if m > 0 and w > 0.0:
            mass = m * w
            within_terms.append((label, mass))
            w_within += mass

    w_cross = 0.0
    cross_terms: list[tuple[str, float]] | None = None
    if _cross_active(state, params) and th > 0.0 and pi < 1.0:
        cross_terms = []
        kernel = params.kernel_for(state.market_ids)
        scale = th * (1.0 - pi) / n
        for r2, mw in kernel.row(r):
            if mw <= 0.0:
                continue
            total2 = 0.0
            for label, mult in state.markets[r2].cluster_view():
                total2 += mult * sel._checked(label, cfg)
            mass = scale * mw * total2
            if mass > 0.0:
                cross_terms.append((r2, mass))
                w_cross += mass

    return w_new, w_cross, w_within, cross_terms, within_terms


def normalizer(state: "SystemState", r: str, i: int, params: ParameterSet) -> float:
    """Total mass of the conditional law at (market r, unit i).

    With unit selection weights this is exactly theta + n - 1 when the cross
    branch is structurally present, and theta * pi + n - 1 in an isolated
    market. A zero total (theta = 0 with a single unit, or selection weights
    that vanish everywhere) is degenerate and raises.
    """
    cfg = state.markets[r]
    if params.selection.is_unit_weight:
        th = params.theta_in(r)
        head = th if _cross_active(state, params) else th * params.pi_in(r)
        qbar = head + (cfg.n - 1.0)
    else:
        w_new, w_cross, w_within, _, _ = _branch_masses(state, r, i, params)
        qbar = w_new + w_cross + w_within
    if qbar <= 0.0:
        raise ValidationError(
            f"degenerate conditional at market {r!r}: every branch has zero mass "
            f"(theta={params.theta_in(r)!r}, n={cfg.n})"
        )
    return qbar


def branch_probabilities(
    state: "SystemState", r: str, i: int, params: ParameterSet
) -> tuple[float, float, float]:
    """Probabilities (new, cross, within) of the three branches at (r, i)."""
    w_new, w_cross, w_within, _, _ = _branch_masses(state, r, i, params)
    qbar = w_new + w_cross + w_within
    if qbar <= 0.0:
        raise ValidationError(
            f"degenerate conditional at market {r!r}: every branch has zero mass"
        )
    return w_new / qbar, w_cross / qbar, w_within / qbar


def select_target(
    state: "SystemState", params: ParameterSet, rng: np.random.Generator
) -> tuple[str, int]:
    """Pick the market and the unit index that vacate a share this update.

    The market is drawn from the market weights (uniform by default), the
    firm from the removal policy, and the unit uniformly inside the firm.
    The uniform-unit policy skips the firm stage and draws the unit index
    directly.
    """
    ids = state.market_ids
    if len(ids) == 1:
        r = ids[0]
    else:
        mw = params.market_weights
        u = rng.random()
        if mw is None:
            r = ids[min(int(u * len(ids)), len(ids) - 1)]
        else:
            acc = 0.0
            r = ids[-1]
            total = sum(mw[x] for x in ids)
            u *= total
            for x in ids:
                acc += mw[x]
                if u < acc:
                    r = x
                    break
    cfg = state.markets[r]
    pol = params.removal
    if type(pol) is UniformUnitRemoval:
        return r, int(rng.integers(cfg.n))
    clusters = cfg.cluster_view()
    w = pol.firm_weights(clusters, cfg.n)
    total = sum(w)
    u = rng.random() * total
    j = len(w) - 1
    acc = 0.0
    for idx, wj in enumerate(w):
        acc += wj
        if u < acc:
            j = idx
            break
    members = cfg.members(clusters[j][0])
    return r, int(members[rng.integers(len(members))])


def sample_full_conditional(
    state: "SystemState", r: str, i: int, params: ParameterSet, rng: np.random.Generator
) -> BranchOutcome:
    """Draw the replacement for unit i of market r from the conditional law.

    A single uniform picks the branch against the cumulative branch masses
    (new, then cross, then within); fresh uniforms then resolve the choice
    inside the branch. Inside the cross branch the source market is chosen
    with probability proportional to its kernel weight times its total
    selection weight, then a unit inside it proportionally to its weight;
    with unit selection this reduces to the kernel row and a uniform unit.
    """
    cfg = state.markets[r]
    n = cfg.n
    w_new, w_cross, w_within, cross_terms, within_terms = _branch_masses(state, r, i, params)
    qbar = w_new + w_cross + w_within
    if qbar <= 0.0:
        raise ValidationError(
            f"degenerate conditional at market {r!r}: every branch has zero mass "
            f"(theta={params.theta_in(r)!r}, n={n})"
        )
    u = rng.random() * qbar

    if u < w_new:
        label = sample_reweighted_base(params.selection, params.base_in(r), cfg, rng)
        return BranchOutcome("new", label)

    if u < w_new + w_cross:
        if cross_terms is None:
            # unit selection: source market from the kernel row, unit uniform
            row = params.kernel_for(state.market_ids).row(r)
            total = sum(mw for _, mw in row)
            v = rng.random() * total
            r2 = row[-1][0]
            acc = 0.0
            for x, mw in row:
                acc += mw
                if v < acc:
                    r2 = x
                    break
            j = int(rng.integers(n))
            return BranchOutcome("cross", state.markets[r2].units[j], r2, j)
        v = rng.random() * w_cross
        r2 = cross_terms[-1][0]
        acc = 0.0
        for x, mass in cross_terms:
            acc += mass
            if v < acc:
                r2 = x
                break
        cfg2 = state.markets[r2]
        sel = params.selection
        terms2 = [(label, mult * sel._checked(label, cfg)) for label, mult in cfg2.cluster_view()]
        total2 = sum(mass for _, mass in terms2)
        v2 = rng.random() * total2
        label = terms2[-1][0]
        acc = 0.0
        for lab, mass in terms2:
            acc += mass
            if v2 < acc:
                label = lab
                break
        members = cfg2.members(label)
        j = int(members[rng.integers(len(members))])
        return BranchOutcome("cross", label, r2, j)

    # within branch
    if within_terms is None:
        # unit selection: uniform copy of one of the other n - 1 units
        k = int(rng.integers(n - 1))
        if k >= i:
            k += 1
        return BranchOutcome("within", cfg.units[k], None, k)
    v = rng.random() * w_within
    label = within_terms[-1][0]
    acc = 0.0
    for lab, mass in within_terms:
        acc += mass
        if v < acc:
            label = lab
            break
    members = cfg.members(label)
    if cfg.units[i] == label:
        # skip the vacated unit itself when copying inside its own firm
        t = int(rng.integers(len(members) - 1))
        if t >= cfg.position_in_firm(i):
            t += 1
        k = int(members[t])
    else:
        k = int(members[rng.integers(len(members))])
    return BranchOutcome("within", label, None, k)
