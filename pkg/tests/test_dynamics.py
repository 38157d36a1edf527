"""Conditional-law machinery: removal policies, selection weights, kernels,
parameters and the single-site sampler.

The frequency tests draw a few hundred thousand outcomes against exactly
computed conditionals; chi-square thresholds are at the 0.001 level for the
stated degrees of freedom, so spurious failures are rare and a real bias is
caught quickly.
"""

import math

import numpy as np
import pytest

from marketurns import (
    AntitrustRemoval,
    BetaBase,
    CustomSelection,
    DiscreteBase,
    IdentitySelection,
    InverseClusterSelection,
    InverseRemoval,
    MarketConfiguration,
    MigrationKernel,
    NeutralRemoval,
    ParameterSet,
    ProportionalRemoval,
    SamplerError,
    SigmaSelection,
    SystemState,
    UndefinedPolicyError,
    UniformUnitRemoval,
    UnitSelection,
    ValidationError,
    apply_patch,
    branch_probabilities,
    normalizer,
    removal_weights,
    sample_full_conditional,
    select_target,
)
from marketurns.dynamics import sample_reweighted_base


# ---------------------------------------------------------------------------
# removal policies

def test_removal_weight_hand_values():
    clusters = [(0.2, 1), (0.8, 3)]
    assert removal_weights(NeutralRemoval(), clusters, 4).tolist() == [0.5, 0.5]
    assert removal_weights(ProportionalRemoval(), clusters, 4).tolist() == [0.25, 0.75]
    assert removal_weights(UniformUnitRemoval(), clusters, 4).tolist() == [0.25, 0.75]
    inv = removal_weights(InverseRemoval(), clusters, 4)
    assert np.allclose(inv, [0.75, 0.25])


def test_inverse_removal_needs_two_firms():
    with pytest.raises(UndefinedPolicyError):
        removal_weights(InverseRemoval(), [(0.5, 4)], 4)


def test_removal_weights_validate_clusters():
    with pytest.raises(ValidationError):
        removal_weights(NeutralRemoval(), [(0.2, 1), (0.8, 2)], 4)


def test_antitrust_targets_exceeder():
    pol = AntitrustRemoval(threshold=0.5)
    clusters = [(0.1, 1), (0.5, 8), (0.9, 1)]
    assert removal_weights(pol, clusters, 10).tolist() == [0.0, 1.0, 0.0]
    # ties split uniformly (only reachable with caps below one half)
    pol_low = AntitrustRemoval(threshold=0.3)
    clusters_tie = [(0.1, 4), (0.5, 4), (0.9, 2)]
    assert removal_weights(pol_low, clusters_tie, 10).tolist() == [0.5, 0.5, 0.0]


def test_antitrust_fallback_below_cap():
    pol = AntitrustRemoval(threshold=0.9, fallback=ProportionalRemoval())
    clusters = [(0.2, 2), (0.8, 2)]
    assert removal_weights(pol, clusters, 4).tolist() == [0.5, 0.5]
    with pytest.raises(ValidationError):
        AntitrustRemoval(threshold=0.0)
    with pytest.raises(ValidationError):
        AntitrustRemoval(threshold=1.3)


# ---------------------------------------------------------------------------
# selection weights

def test_selection_weight_values():
    cfg = MarketConfiguration([0.2, 0.2, 0.8, 0.4])
    assert UnitSelection().weight(0.7, cfg) == 1.0
    assert IdentitySelection().weight(0.7, cfg) == 0.7
    inv = InverseClusterSelection()
    assert inv.weight(0.2, cfg) == 0.5
    assert inv.weight(0.8, cfg) == 1.0
    assert inv.weight(0.123, cfg) == 1.0  # labels new to the market


def test_sigma_selection_polynomial():
    sel = SigmaSelection.from_coeffs([1.0, -2.0])
    cfg = MarketConfiguration([0.5] * 10)
    assert abs(sel.sigma(0.25) - 0.5) < 1e-15
    assert abs(sel.weight(0.25, cfg) - (1.0 + 0.5 / 10)) < 1e-15
    assert sel.bound == 3.0
    assert sel.sup_weight(cfg) == 1.0 + 3.0 / 10
    assert not sel.is_unit_weight
    assert SigmaSelection.from_coeffs([0.0, 0.0]).is_unit_weight


def test_sigma_negative_weight_raises():
    sel = SigmaSelection.from_coeffs([-6.0])
    cfg = MarketConfiguration([0.5] * 4)  # 1 - 6/4 < 0
    with pytest.raises(ValidationError):
        sel.weight(0.3, cfg)


def test_custom_selection_requires_positive_bound():
    with pytest.raises(ValidationError):
        CustomSelection(fn=lambda y, cfg: 1.0, bound=0.0)


def test_identity_reweighted_beta_base():
    # beta(a, b) tilted by the identity is beta(a + 1, b)
    base = BetaBase(2.0, 5.0)
    cfg = MarketConfiguration([0.5] * 3)
    rng = np.random.default_rng(13)
    xs = np.array([
        sample_reweighted_base(IdentitySelection(), base, cfg, rng) for _ in range(20_000)
    ])
    want_mean = 3.0 / 8.0
    want_var = (3.0 * 5.0) / (8.0**2 * 9.0)
    assert abs(xs.mean() - want_mean) < 4 * math.sqrt(want_var / len(xs)) + 1e-3
    assert abs(xs.var() - want_var) / want_var < 0.1


def test_discrete_reweighting_is_exact():
    base = DiscreteBase([0.25, 0.5, 1.0], [0.5, 0.25, 0.25])
    cfg = MarketConfiguration([0.5] * 3)
    rng = np.random.default_rng(29)
    n = 30_000
    draws = [sample_reweighted_base(IdentitySelection(), base, cfg, rng) for _ in range(n)]
    # reweighted masses: atom * weight, renormalized -> (0.125, 0.125, 0.25) / 0.5
    want = [0.25, 0.25, 0.5]
    counts = [draws.count(a) for a in base.atoms]
    chi2 = sum((c - n * w) ** 2 / (n * w) for c, w in zip(counts, want))
    assert chi2 < 13.8  # df = 2, alpha = 0.001


def test_reweighting_zero_mass_raises():
    base = DiscreteBase([0.0, 0.5], [0.5, 0.5])
    cfg = MarketConfiguration([0.5] * 3)

    dead = CustomSelection(fn=lambda y, cfg: 0.0, bound=1.0, name="dead")
    with pytest.raises(SamplerError):
        sample_reweighted_base(dead, base, cfg, np.random.default_rng(1))


def test_rejection_bound_violation_raises():
    base = BetaBase(1.0, 1.0)
    cfg = MarketConfiguration([0.5] * 3)
    lying = CustomSelection(fn=lambda y, cfg: 5.0, bound=1.0, name="lying")
    with pytest.raises(SamplerError):
        sample_reweighted_base(lying, base, cfg, np.random.default_rng(1))


# ---------------------------------------------------------------------------
# migration kernels

def test_kernel_validation():
    with pytest.raises(ValidationError):
        MigrationKernel({"a": {"a": 1.0}})  # single market
    with pytest.raises(ValidationError):
        MigrationKernel({"a": {"a": 0.5, "b": 0.5}, "b": {"a": 1.0}})  # diagonal mass
    with pytest.raises(ValidationError):
        MigrationKernel({"a": {"b": 0.7}, "b": {"a": 1.0}})  # row sum off
    with pytest.raises(ValidationError):
        MigrationKernel({"a": {"b": 1.0}, "b": {"c": 1.0}})  # unknown id


def test_kernel_uniform():
    k = MigrationKernel.uniform(("a", "b", "c"))
    assert k.as_dict() == {
        "a": {"b": 0.5, "c": 0.5},
        "b": {"a": 0.5, "c": 0.5},
        "c": {"a": 0.5, "b": 0.5},
    }


# ---------------------------------------------------------------------------
# parameter sets and patches

def test_parameter_validation():
    with pytest.raises(ValidationError):
        ParameterSet(theta=-1.0)
    with pytest.raises(ValidationError):
        ParameterSet(theta=1.0, pi=1.5)
    params = ParameterSet(theta={"a": 1.0}, pi=0.5)
    with pytest.raises(ValidationError):
        params.validate(("a", "b"))  # theta map missing market b
    with pytest.raises(ValidationError):
        params.theta_in("zzz")


def test_apply_patch_merges_market_maps():
    params = ParameterSet(theta={"a": 1.0, "b": 2.0})
    patched = apply_patch(params, {"theta": {"a": 10.0}})
    assert patched.theta == {"a": 10.0, "b": 2.0}
    assert params.theta == {"a": 1.0, "b": 2.0}
    scalar = apply_patch(params, {"theta": 5.0})
    assert scalar.theta == 5.0
    with pytest.raises(ValidationError):
        apply_patch(params, {"bogus": 1.0})


# ---------------------------------------------------------------------------
# the conditional law

def two_market_state():
    a = MarketConfiguration([0.2, 0.2, 0.8])
    b = MarketConfiguration([0.4, 0.8, 0.8])
    return SystemState({"a": a, "b": b})


def exact_conditional(state, r, i, params):
    """Label -> probability for the replacement of unit i of market r.

    Straightforward per-unit evaluation of the three-branch law, used as
    the reference for the sampler's frequencies.
    """
    cfg = state.markets[r]
    n = cfg.n
    sel = params.selection
    th, pi = params.theta_in(r), params.pi_in(r)
    base = params.base_in(r)
    masses: dict[float, float] = {}
    for atom, w in zip(base.atoms, base.weights):
        masses[atom] = masses.get(atom, 0.0) + th * pi * sel.weight(atom, cfg) * w
    if len(state.markets) > 1:
        kernel = params.kernel_for(state.market_ids)
        for r2, mw in kernel.row(r):
            for j, label in enumerate(state.markets[r2].units):
                masses[label] = masses.get(label, 0.0) + (
                    th * (1.0 - pi) * mw * sel.weight(label, cfg) / n
                )
    for k, label in enumerate(cfg.units):
        if k != i:
            masses[label] = masses.get(label, 0.0) + sel.weight(label, cfg)
    total = sum(masses.values())
    return {label: m / total for label, m in masses.items()}


@pytest.mark.parametrize(
    "selection",
    [
        UnitSelection(),
        IdentitySelection(),
        SigmaSelection.from_coeffs([1.0, -0.5]),
        InverseClusterSelection(),
        CustomSelection(fn=lambda y, cfg: 1.0, bound=1.0, name="flat"),
    ],
    ids=["unit", "identity", "sigma", "inverse_cluster", "flat_custom"],
)
def test_sampler_matches_exact_conditional(selection):
    state = two_market_state()
    params = ParameterSet(
        theta=1.5,
        pi=0.6,
        base=DiscreteBase([0.2, 0.4, 0.6], [0.5, 0.25, 0.25]),
        selection=selection,
    )
    want = exact_conditional(state, "a", 0, params)
    rng = np.random.default_rng(37)
    n_draws = 200_000
    counts: dict[float, int] = {}
    for _ in range(n_draws):
        out = sample_full_conditional(state, "a", 0, params, rng)
        counts[out.label] = counts.get(out.label, 0) + 1
    assert set(counts) <= set(want)
    chi2 = sum(
        (counts.get(label, 0) - n_draws * p) ** 2 / (n_draws * p)
        for label, p in want.items()
        if p > 0
    )
    df = sum(1 for p in want.values() if p > 0) - 1
    # alpha = 0.001 critical values for the dfs that occur here (4..6)
    crit = {3: 16.3, 4: 18.5, 5: 20.5, 6: 22.5}[df]
    assert chi2 < crit, f"chi2={chi2:.1f} for df={df}"


def test_branch_probabilities_sum_to_one():
    state = two_market_state()
    params = ParameterSet(theta=2.0, pi=0.3, base=BetaBase(1, 1))
    p_new, p_cross, p_within = branch_probabilities(state, "a", 1, params)
    assert abs(p_new + p_cross + p_within - 1.0) < 1e-12
    assert p_cross > 0


def test_single_market_has_no_cross_branch():
    state = SystemState({"solo": MarketConfiguration([0.2, 0.5, 0.5])})
    params = ParameterSet(theta=2.0, pi=0.3)
    p_new, p_cross, p_within = branch_probabilities(state, "solo", 0, params)
    assert p_cross == 0.0
    assert abs(p_new - 2.0 * 0.3 / (2.0 * 0.3 + 2.0)) < 1e-12
    assert normalizer(state, "solo", 0, params) == 2.0 * 0.3 + 2.0


def test_unit_normalizer_is_exact():
    state = two_market_state()
    for th in (0.3, 1.0, 100.0):
        params = ParameterSet(theta=th, pi=0.37)
        assert normalizer(state, "a", 0, params) == th + 2.0


def test_degenerate_conditional_raises():
    state = SystemState({"solo": MarketConfiguration([0.4])})
    params = ParameterSet(theta=0.0)
    with pytest.raises(ValidationError):
        normalizer(state, "solo", 0, params)


def test_branch_outcome_bookkeeping():
    state = two_market_state()
    params = ParameterSet(theta=1.0, pi=0.0, base=BetaBase(1, 1))
    rng = np.random.default_rng(5)
    saw = set()
    for _ in range(2000):
        out = sample_full_conditional(state, "a", 0, params, rng)
        saw.add(out.branch)
        if out.branch == "cross":
            assert out.source_market == "b"
            assert state.markets["b"].units[out.source_unit] == out.label
        elif out.branch == "within":
            assert out.source_market is None
            assert state.markets["a"].units[out.source_unit] == out.label
            assert out.source_unit != 0
    assert saw == {"cross", "within"}  # pi = 0 sends all entries cross-market


# ---------------------------------------------------------------------------
# target selection

def test_select_target_respects_market_weights():
    state = two_market_state()
    params = ParameterSet(theta=1.0, market_weights={"a": 0.8, "b": 0.2})
    rng = np.random.default_rng(17)
    hits = {"a": 0, "b": 0}
    n_draws = 50_000
    for _ in range(n_draws):
        r, i = select_target(state, params, rng)
        hits[r] += 1
        assert 0 <= i < 3
    z = (hits["a"] - 0.8 * n_draws) / math.sqrt(n_draws * 0.8 * 0.2)
    assert abs(z) < 4.0


def test_select_target_antitrust_hits_dominant_firm():
    cfg = MarketConfiguration([0.9] * 8 + [0.1, 0.2])
    state = SystemState({"m": cfg})
    params = ParameterSet(theta=1.0, removal=AntitrustRemoval(threshold=0.5))
    rng = np.random.default_rng(23)
    for _ in range(2000):
        _, i = select_target(state, params, rng)
        assert cfg.units[i] == 0.9


def test_select_target_proportional_frequencies():
    cfg = MarketConfiguration([0.1, 0.5, 0.5, 0.5])
    state = SystemState({"m": cfg})
    params = ParameterSet(theta=1.0, removal=ProportionalRemoval())
    rng = np.random.default_rng(31)
    n_draws = 40_000
    small = 0
    for _ in range(n_draws):
        _, i = select_target(state, params, rng)
        small += cfg.units[i] == 0.1
    z = (small - 0.25 * n_draws) / math.sqrt(n_draws * 0.25 * 0.75)
    assert abs(z) < 4.0
