"""Market configurations and joint system state.

A market holds n share units, each labelled by the firm that owns it. Labels
are floats in [0, 1] and firm identity is exact float equality, so two units
belong to the same firm iff their labels have the same bit pattern. Besides
the flat unit vector, every market maintains a firm -> unit-index table so
that single-unit replacement, multiplicity lookup and uniform sampling inside
a firm are all O(1).
"""

from __future__ import annotations

from typing import Iterable, Mapping, Sequence

from .errors import ValidationError


def _check_label(x: float) -> float:
    x = float(x)
    if not 0.0 <= x <= 1.0:  # also rejects nan
        raise ValidationError(f"firm label must lie in [0, 1], got {x!r}")
    return x


class MarketConfiguration:
    """Shares of one market: n unit labels plus an incrementally kept cluster table."""

    __slots__ = ("units", "_members", "_pos")

    def __init__(self, units: Sequence[float]):
        if len(units) == 0:
            raise ValidationError("a market needs at least one share unit")
        self.units = [_check_label(x) for x in units]
        # _members[label] lists the unit indexes owned by that firm;
        # _pos[i] is the position of unit i inside its firm's list.
        self._members: dict[float, list[int]] = {}
        self._pos = [0] * len(self.units)
        for i, x in enumerate(self.units):
            lst = self._members.setdefault(x, [])
            self._pos[i] = len(lst)
            lst.append(i)

    @property
    def n(self) -> int:
        return len(self.units)

    @property
    def firm_count(self) -> int:
        return len(self._members)

    @property
    def clusters(self) -> dict[float, int]:
        """Firm label -> multiplicity, in first-appearance order."""
        return {label: len(lst) for label, lst in self._members.items()}

    def count(self, label: float) -> int:
        lst = self._members.get(label)
        return 0 if lst is None else len(lst)

    def members(self, label: float) -> Sequence[int]:
        """Unit indexes owned by the firm with this label (empty if absent)."""
        return self._members.get(label, ())

    def position_in_firm(self, i: int) -> int:
        """Position of unit i inside members(units[i])."""
        return self._pos[i]

    def replace_unit(self, i: int, label: float) -> None:
        """Reassign unit i to the firm with the given label, updating the table."""
        label = _check_label(label)
        old = self.units[i]
        if old == label:
            return
        # swap-remove i from its old firm's index list
        lst = self._members[old]
        p = self._pos[i]
        last = lst[-1]
        lst[p] = last
        self._pos[last] = p
        lst.pop()
        if not lst:
            del self._members[old]
        # append to the new firm's list
        self.units[i] = label
        new = self._members.get(label)
        if new is None:
            self._members[label] = [i]
            self._pos[i] = 0
        else:
            self._pos[i] = len(new)
            new.append(i)

    def cluster_view(self) -> list[tuple[float, int]]:
        """Cluster table (label, multiplicity), ordered by label ascending."""
        return sorted((label, len(lst)) for label, lst in self._members.items())

    def herfindahl(self) -> float:
        n = len(self.units)
        return sum((len(lst) / n) ** 2 for lst in self._members.values())

    def max_share(self) -> float:
        n = len(self.units)
        return max(len(lst) for lst in self._members.values()) / n

    def label_mean(self) -> float:
        """Mean of the unit labels, i.e. the mean of the empirical measure."""
        return sum(label * len(lst) for label, lst in self._members.items()) / len(self.units)

    def copy(self) -> "MarketConfiguration":
        return MarketConfiguration(self.units)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, MarketConfiguration):
            return NotImplemented
        return self.units == other.units

    def __repr__(self) -> str:
        return f"MarketConfiguration(n={self.n}, firms={self.firm_count})"


def cluster_view(config: MarketConfiguration) -> list[tuple[float, int]]:
    """Cluster table of a market, ordered by label ascending."""
    return config.cluster_view()


class SystemState:
    """Joint state of all markets plus iteration and clock counters.

    Every market holds the same number of units; market ids are kept in
    sorted order so that iteration over markets is deterministic.
    """

    __slots__ = ("markets", "iteration", "clock")

    def __init__(
        self,
        markets: Mapping[str, MarketConfiguration],
        iteration: int = 0,
        clock: float = 0.0,
    ):
        if not markets:
            raise ValidationError("system state needs at least one market")
        self.markets: dict[str, MarketConfiguration] = dict(sorted(markets.items()))
        sizes = {cfg.n for cfg in self.markets.values()}
        if len(sizes) != 1:
            raise ValidationError(f"all markets must hold the same number of units, got sizes {sorted(sizes)}")
        self.iteration = int(iteration)
        self.clock = float(clock)

    @property
    def market_ids(self) -> tuple[str, ...]:
        return tuple(self.markets)

    @property
    def n(self) -> int:
        return next(iter(self.markets.values())).n

    @property
    def total_units(self) -> int:
        """Total number of units across markets (n times the market count)."""
        return self.n * len(self.markets)

    def copy(self) -> "SystemState":
        return SystemState(
            {r: cfg.copy() for r, cfg in self.markets.items()},
            iteration=self.iteration,
            clock=self.clock,
        )

    def __repr__(self) -> str:
        return f"SystemState(markets={list(self.markets)}, n={self.n}, iteration={self.iteration})"
