"""Chain driver: initial conditions, retention, schedules and full runs."""

import dataclasses

import numpy as np
import pytest

from marketurns import (
    BetaBase,
    CompetitiveStart,
    CustomStart,
    DiscreteBase,
    EngineConfig,
    MarketConfiguration,
    MonopolyStart,
    ParameterSet,
    RetentionPlan,
    Schedule,
    ScheduleEntry,
    SystemState,
    ValidationError,
    continuous_run,
    gibbs_step,
    initialize,
    run,
    snapshot,
)

rng = np.random.default_rng(2024)


# ---------------------------------------------------------------------------
# initial conditions

def test_competitive_start_quota():
    cfg = initialize(CompetitiveStart(firms=3), 10, rng, BetaBase(1, 1))
    sizes = sorted(m for _, m in cfg.cluster_view())
    assert sizes == [3, 3, 4]
    assert cfg.firm_count == 3


def test_competitive_start_needs_enough_labels():
    with pytest.raises(ValidationError):
        initialize(CompetitiveStart(firms=3), 10, rng, DiscreteBase([0.5], [1.0]))
    with pytest.raises(ValidationError):
        initialize(CompetitiveStart(firms=0), 10, rng, BetaBase(1, 1))
    with pytest.raises(ValidationError):
        initialize(CompetitiveStart(firms=11), 10, rng, BetaBase(1, 1))


def test_monopoly_start():
    cfg = initialize(MonopolyStart(label=0.25), 6, rng, BetaBase(1, 1))
    assert cfg.units == [0.25] * 6
    drawn = initialize(MonopolyStart(), 6, rng, DiscreteBase([0.7], [1.0]))
    assert drawn.units == [0.7] * 6


def test_custom_start_checks_length():
    cfg = initialize(CustomStart(units=(0.1, 0.2, 0.2)), 3, rng, BetaBase(1, 1))
    assert cfg.units == [0.1, 0.2, 0.2]
    with pytest.raises(ValidationError):
        initialize(CustomStart(units=(0.1,)), 3, rng, BetaBase(1, 1))


# ---------------------------------------------------------------------------
# retention and schedules

def test_retention_keeps_everything_when_short():
    assert RetentionPlan(count=150).resolve(10) == tuple(range(1, 11))


def test_retention_always_includes_final_iteration():
    pts = RetentionPlan(count=20, spacing="log").resolve(100_000)
    assert pts[0] == 1
    assert pts[-1] == 100_000
    assert len(pts) <= 21
    assert list(pts) == sorted(set(pts))
    linear = RetentionPlan(count=20, spacing="linear").resolve(100_000)
    assert linear[-1] == 100_000


def test_retention_explicit():
    plan = RetentionPlan(explicit=(0, 5, 10))
    assert plan.resolve(10) == (0, 5, 10)
    with pytest.raises(ValidationError):
        plan.resolve(7)
    with pytest.raises(ValidationError):
        RetentionPlan(explicit=(5, 5))
    with pytest.raises(ValidationError):
        RetentionPlan(count=0)
    with pytest.raises(ValidationError):
        RetentionPlan(spacing="cubic")


def test_schedule_ordering():
    Schedule((ScheduleEntry(2, {"theta": 1.0}), ScheduleEntry(9, {"pi": 0.5})))
    with pytest.raises(ValidationError):
        Schedule((ScheduleEntry(5, {}), ScheduleEntry(5, {})))
    with pytest.raises(ValidationError):
        Schedule((ScheduleEntry(0, {}),))
    sched = Schedule((ScheduleEntry(50, {"theta": 1.0}),))
    with pytest.raises(ValidationError):
        sched.validate(10)


# ---------------------------------------------------------------------------
# config validation

def base_config(**overrides):
    kwargs = dict(
        n=20,
        params=ParameterSet(theta=1.0, base=BetaBase(1, 1)),
        initial={"m": CompetitiveStart(firms=4)},
        iterations=200,
        seed=7,
        retention=RetentionPlan(count=25),
    )
    kwargs.update(overrides)
    return EngineConfig(**kwargs)


def test_config_validation():
    with pytest.raises(ValidationError):
        base_config(n=0)
    with pytest.raises(ValidationError):
        base_config(iterations=0)
    with pytest.raises(ValidationError):
        base_config(mode="quantum")
    with pytest.raises(ValidationError):
        base_config(bin_count=0)
    with pytest.raises(ValidationError):
        base_config(initial={})
    cfg = base_config(initial={"z": CompetitiveStart(2), "a": CompetitiveStart(2)})
    assert cfg.market_ids == ("a", "z")


# ---------------------------------------------------------------------------
# runs

def test_run_is_deterministic():
    a, b = run(base_config()), run(base_config())
    assert a.final_state.markets["m"].units == b.final_state.markets["m"].units
    assert [r.iteration for r in a.records] == [r.iteration for r in b.records]
    for ra, rb in zip(a.records, b.records):
        assert ra.markets["m"].histogram.counts == rb.markets["m"].histogram.counts
    c = run(base_config(seed=8))
    assert c.final_state.markets["m"].units != a.final_state.markets["m"].units


def test_run_records_end_at_final_iteration():
    trace = run(base_config())
    assert trace.records[-1].iteration == 200
    assert all(r.clock is None for r in trace.records)
    for rec in trace.records:
        assert sum(rec.markets["m"].histogram.counts) == 20


def test_event_tallies_count_every_iteration():
    trace = run(base_config())
    last = trace.records[-1]
    assert last.events_new + last.events_cross + last.events_within == 200
    assert last.events_cross == 0  # single market has no cross branch
    tallies = [r.events_new + r.events_cross + r.events_within for r in trace.records]
    assert tallies == [r.iteration for r in trace.records]


def test_explicit_retention_records_initial_state():
    cfg = base_config(retention=RetentionPlan(explicit=(0, 1, 200)))
    trace = run(cfg)
    assert [r.iteration for r in trace.records] == [0, 1, 200]
    first = trace.records[0].markets["m"]
    assert first.firm_count == 4


def test_schedule_patch_changes_behavior():
    # theta huge after the patch: entries become far more likely
    sched = Schedule((ScheduleEntry(100, {"theta": 1000.0, "pi": 1.0}),))
    cfg = base_config(iterations=300, schedule=sched)
    trace = run(cfg)
    final = trace.final_state.markets["m"]
    assert final.firm_count > 10


def test_schedule_patch_applies_before_trigger_update():
    # theta = 0 with pi = 1 leaves only the within branch: K can never grow
    sched = Schedule((ScheduleEntry(1, {"theta": 0.0}),))
    cfg = base_config(
        params=ParameterSet(theta=50.0, pi=1.0, base=BetaBase(1, 1)),
        schedule=sched,
        iterations=400,
    )
    trace = run(cfg)
    counts = [r.markets["m"].firm_count for r in trace.records]
    assert max(counts) <= 4


def test_continuous_mode_shares_the_jump_chain():
    disc = run(base_config(mode="discrete"))
    cont = continuous_run(base_config(mode="discrete"))
    assert cont.config.mode == "continuous"
    assert disc.final_state.markets["m"].units == cont.final_state.markets["m"].units
    clocks = [r.clock for r in cont.records]
    assert all(c is not None for c in clocks)
    assert clocks == sorted(clocks)
    assert clocks[0] > 0.0


def test_custom_clock_rate_scales_time():
    fast = base_config(params=ParameterSet(theta=1.0, clock_rate=1e6), mode="continuous")
    slow = base_config(params=ParameterSet(theta=1.0, clock_rate=1.0), mode="continuous")
    t_fast = run(fast).records[-1].clock
    t_slow = run(slow).records[-1].clock
    assert t_fast * 1e5 < t_slow


def test_initial_state_can_be_given_directly():
    cfg = base_config(initial={"m": MarketConfiguration([0.5] * 20)})
    trace = run(cfg)
    assert trace.records[0].iteration >= 1
    with pytest.raises(ValidationError):
        run(base_config(initial={"m": MarketConfiguration([0.5] * 3)}))


def test_run_leaves_config_params_untouched():
    cfg = base_config(schedule=Schedule((ScheduleEntry(5, {"theta": 9.0}),)))
    run(cfg)
    assert cfg.params.theta == 1.0


def test_gibbs_step_advances_iteration():
    state = SystemState({"m": MarketConfiguration([0.2, 0.5, 0.5])})
    params = ParameterSet(theta=1.0, base=BetaBase(1, 1))
    out = gibbs_step(state, params, np.random.default_rng(3))
    assert out is state
    assert state.iteration == 1


def test_snapshot_reports_all_markets():
    state = SystemState(
        {"a": MarketConfiguration([0.2, 0.5]), "b": MarketConfiguration([0.9, 0.9])}
    )
    stats = snapshot(state, 10)
    assert set(stats) == {"a", "b"}
    assert stats["b"].firm_count == 1
    assert stats["b"].herfindahl == 1.0
    assert sum(stats["a"].histogram.counts) == 2
