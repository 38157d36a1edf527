"""Random-scan simulation engine with discrete and continuous-time modes.

One iteration is one single-site update: pick a market and a unit, vacate
it, refill it from the conditional law. The continuous mode runs the same
embedded chain and additionally advances an exponential clock; jump draws
and clock draws come from separate streams spawned off the seed, so the two
modes visit identical states for the same seed.

Reproducibility contract: the root SeedSequence of `seed` is spawned into
(init, jumps, clock) streams, in that order. Initial configurations consume
the init stream market by market in id order; every iteration consumes jump
draws in the fixed order (market, firm, unit, branch, inner choices) and, in
continuous mode, one clock draw before the jump.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace as _dc_replace
from typing import Mapping, Sequence

import numpy as np

from .dynamics import ParameterSet, apply_patch, sample_full_conditional, select_target
from .errors import ValidationError
from .measures import BaseMeasure, Histogram, histogram
from .state import MarketConfiguration, SystemState


# ---------------------------------------------------------------------------
# initial configurations

@dataclass(frozen=True)
class CompetitiveStart:
    """K0 distinct firms with equal shares (remainder spread round-robin)."""

    firms: int


@dataclass(frozen=True)
class MonopolyStart:
    """One firm owns every unit; label drawn from the base when omitted."""

    label: float | None = None


@dataclass(frozen=True)
class CustomStart:
    """Explicit unit labels."""

    units: tuple[float, ...]


InitSpec = CompetitiveStart | MonopolyStart | CustomStart

_DISTINCT_DRAW_CAP = 1000


def initialize(
    start: InitSpec, n: int, rng: np.random.Generator, base: BaseMeasure
) -> MarketConfiguration:
    """Build a market configuration from an initial-condition spec."""
    if n < 1:
        raise ValidationError("n must be positive")
    if isinstance(start, CompetitiveStart):
        k0 = start.firms
        if not 1 <= k0 <= n:
            raise ValidationError(f"competitive start needs 1 <= firms <= n, got {k0} with n={n}")
        labels: list[float] = []
        seen = set()
        attempts = 0
        while len(labels) < k0:
            y = base.sample(rng)
            attempts += 1
            if y not in seen:
                seen.add(y)
                labels.append(y)
            elif attempts > _DISTINCT_DRAW_CAP * k0:
                raise ValidationError(
                    f"could not draw {k0} distinct labels from {base!r}; base support too small"
                )
        units: list[float] = []
        quota, remainder = divmod(n, k0)
        for j, label in enumerate(labels):
            units.extend([label] * (quota + (1 if j < remainder else 0)))
        return MarketConfiguration(units)
    if isinstance(start, MonopolyStart):
        label = base.sample(rng) if start.label is None else start.label
        return MarketConfiguration([label] * n)
    if isinstance(start, CustomStart):
        if len(start.units) != n:
            raise ValidationError(
                f"custom start has {len(start.units)} units, expected n={n}"
            )
        return MarketConfiguration(list(start.units))
    raise ValidationError(f"unknown initial-condition spec {start!r}")


# ---------------------------------------------------------------------------
# schedule and retention

@dataclass(frozen=True)
class ScheduleEntry:
    """A parameter patch that takes effect just before the update at `trigger`."""

    trigger: int
    patch: Mapping[str, object]


@dataclass(frozen=True)
class Schedule:
    """Ordered parameter patches with strictly increasing triggers."""

    entries: tuple[ScheduleEntry, ...] = ()

    def __post_init__(self):
        last = 0
        for e in self.entries:
            if e.trigger <= last:
                raise ValidationError(
                    f"schedule triggers must be strictly increasing and >= 1, got {e.trigger}"
                )
            last = e.trigger

    def validate(self, iterations: int) -> None:
        for e in self.entries:
            if e.trigger > iterations:
                raise ValidationError(
                    f"schedule trigger {e.trigger} beyond the last iteration {iterations}"
                )


@dataclass(frozen=True)
class RetentionPlan:
    """Which iterations get a trace record.

    Either an explicit iteration list or a target count spread over
    [1, iterations] with log or linear spacing. The final iteration is
    always recorded.
    """

    count: int = 150
    spacing: str = "log"
    explicit: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.explicit is None:
            if self.count < 1:
                raise ValidationError(f"retention count must be positive, got {self.count}")
            if self.spacing not in ("log", "linear"):
                raise ValidationError(f"retention spacing must be 'log' or 'linear', got {self.spacing!r}")
        else:
            last = -1
            for t in self.explicit:
                if t <= last or t < 0:
                    raise ValidationError("explicit retention iterations must be increasing and >= 0")
                last = t

    def resolve(self, iterations: int) -> tuple[int, ...]:
        if self.explicit is not None:
            for t in self.explicit:
                if t > iterations:
                    raise ValidationError(
                        f"retention iteration {t} beyond the last iteration {iterations}"
                    )
            pts = set(self.explicit)
        elif iterations <= self.count:
            pts = set(range(1, iterations + 1))
        elif self.spacing == "log":
            pts = set(int(round(x)) for x in np.geomspace(1.0, float(iterations), self.count))
        else:
            pts = set(int(round(x)) for x in np.linspace(1.0, float(iterations), self.count))
        pts.add(iterations)
        return tuple(sorted(pts))


# ---------------------------------------------------------------------------
# engine configuration and traces

@dataclass
class EngineConfig:
    """Everything a run needs: sizes, parameters, starts, schedule and seed."""

    n: int
    params: ParameterSet
    initial: Mapping[str, "InitSpec | MarketConfiguration"]
    iterations: int
    seed: int = 0
    schedule: Schedule = field(default_factory=Schedule)
    retention: RetentionPlan = field(default_factory=RetentionPlan)
    mode: str = "discrete"
    bin_count: int = 15

    def __post_init__(self):
        if self.n < 1:
            raise ValidationError(f"n must be positive, got {self.n}")
        if self.iterations < 1:
            raise ValidationError(f"iterations must be positive, got {self.iterations}")
        if self.mode not in ("discrete", "continuous"):
            raise ValidationError(f"mode must be 'discrete' or 'continuous', got {self.mode!r}")
        if self.bin_count < 1:
            raise ValidationError(f"bin_count must be positive, got {self.bin_count}")
        if not self.initial:
            raise ValidationError("at least one market is required")
        self.initial = dict(sorted(self.initial.items()))

    @property
    def market_ids(self) -> tuple[str, ...]:
        return tuple(self.initial)


@dataclass(frozen=True)
class SummaryStats:
    """Per-market summary at one retained iteration."""

    histogram: Histogram
    firm_count: int
    herfindahl: float
    max_share: float


@dataclass(frozen=True)
class TraceRecord:
    """Summaries of the state right after the update at `iteration`."""

    iteration: int
    clock: float | None
    markets: Mapping[str, SummaryStats]
    events_new: int
    events_cross: int
    events_within: int


@dataclass
class Trace:
    records: list[TraceRecord]
    config: EngineConfig
    final_state: SystemState

    @property
    def market_ids(self) -> tuple[str, ...]:
        return self.final_state.market_ids


@dataclass(frozen=True, slots=True)
class StepInfo:
    """What one update did: where, which unit, and the labels involved."""

    market: str
    unit: int
    old_label: float
    new_label: float
    branch: str


def step_with_info(
    state: SystemState, params: ParameterSet, rng: np.random.Generator
) -> StepInfo:
    """Advance the state by one update and report what changed."""
    r, i = select_target(state, params, rng)
    out = sample_full_conditional(state, r, i, params, rng)
    cfg = state.markets[r]
    old = cfg.units[i]
    cfg.replace_unit(i, out.label)
    return StepInfo(r, i, old, out.label, out.branch)


def gibbs_step(
    state: SystemState, params: ParameterSet, rng: np.random.Generator
) -> SystemState:
    """One update of the random-scan chain; mutates the state and returns it.

    Exactly one unit's label is replaced (possibly by an equal label when a
    within copy lands in the same firm) and the iteration counter advances.
    """
    step_with_info(state, params, rng)
    state.iteration += 1
    return state


def snapshot(state: SystemState, bin_count: int) -> dict[str, SummaryStats]:
    out = {}
    for r, cfg in state.markets.items():
        out[r] = SummaryStats(
            histogram=histogram(cfg, bin_count),
            firm_count=cfg.firm_count,
            herfindahl=cfg.herfindahl(),
            max_share=cfg.max_share(),
        )
    return out


def _resolve_initial(config: EngineConfig, rng: np.random.Generator) -> SystemState:
    markets = {}
    for r in config.market_ids:
        start = config.initial[r]
        if isinstance(start, MarketConfiguration):
            if start.n != config.n:
                raise ValidationError(
                    f"initial configuration for market {r!r} has n={start.n}, expected {config.n}"
                )
            markets[r] = start.copy()
        else:
            markets[r] = initialize(start, config.n, rng, config.params.base_in(r))
    return SystemState(markets)


def run(config: EngineConfig) -> Trace:
    """Run the chain and return the retained trace records.

    Schedule patches apply atomically just before the update at their
    trigger iteration, so a record at iteration t reflects every patch with
    trigger <= t. In continuous mode each iteration first advances the clock
    by an exponential waiting time at the current rate, then jumps.
    """
    ids = config.market_ids
    params = config.params
    params.validate(ids)
    config.schedule.validate(config.iterations)
    retained = config.retention.resolve(config.iterations)

    root = np.random.SeedSequence(config.seed)
    init_ss, jump_ss, clock_ss = root.spawn(3)
    init_rng = np.random.default_rng(init_ss)
    jump_rng = np.random.default_rng(jump_ss)
    clock_rng = np.random.default_rng(clock_ss)

    state = _resolve_initial(config, init_rng)
    continuous = config.mode == "continuous"
    base_rate = config.n * config.n * len(ids)

    records: list[TraceRecord] = []
    retained_set = set(retained)
    if 0 in retained_set:
        records.append(
            TraceRecord(0, 0.0 if continuous else None, snapshot(state, config.bin_count), 0, 0, 0)
        )

    entries = list(config.schedule.entries)
    next_entry = 0
    tallies = {"new": 0, "cross": 0, "within": 0}
    clock = 0.0

    for it in range(1, config.iterations + 1):
        while next_entry < len(entries) and entries[next_entry].trigger == it:
            params = apply_patch(params, entries[next_entry].patch)
            params.validate(ids)
            next_entry += 1
        if continuous:
            rate = params.clock_rate if params.clock_rate is not None else base_rate
            clock += clock_rng.exponential(1.0 / rate)
            state.clock = clock
        info = step_with_info(state, params, jump_rng)
        tallies[info.branch] += 1
        state.iteration = it
        if it in retained_set:
            records.append(
                TraceRecord(
                    iteration=it,
                    clock=clock if continuous else None,
                    markets=snapshot(state, config.bin_count),
                    events_new=tallies["new"],
                    events_cross=tallies["cross"],
                    events_within=tallies["within"],
                )
            )

    return Trace(records=records, config=config, final_state=state)


def continuous_run(config: EngineConfig) -> Trace:
    """Run in continuous mode: same jump chain as `run`, plus event clocks."""
    if config.mode != "continuous":
        config = _dc_replace(config, mode="continuous")
    return run(config)
