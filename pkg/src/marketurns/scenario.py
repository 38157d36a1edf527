"""Scenario files: a TOML description of a complete run.

A scenario pins the market sizes, per-market parameters and starting
configurations, the optional migration kernel, removal and selection rules,
the retention plan and the schedule of parameter patches. Parsing is strict:
unknown keys and malformed sections raise with the offending key path.

Example::

    schema_version = 1

    [run]
    units = 500
    iterations = 500000
    seed = 7

    [markets.a]
    theta = 1.0
    pi = 1.0
    base = {kind = "beta", a = 1.0, b = 1.0}
    start = {kind = "competitive", firms = 10}

    [[schedule]]
    at = 200
    theta = 100.0
"""

from __future__ import annotations

import json
from typing import Any, Mapping

import tomli

from .dynamics import (
    AntitrustRemoval,
    InverseClusterSelection,
    InverseRemoval,
    IdentitySelection,
    MigrationKernel,
    NeutralRemoval,
    ParameterSet,
    ProportionalRemoval,
    RemovalPolicy,
    SelectionSpec,
    SigmaSelection,
    UniformUnitRemoval,
    UnitSelection,
)
from .engine import (
    CompetitiveStart,
    CustomStart,
    EngineConfig,
    MonopolyStart,
    RetentionPlan,
    Schedule,
    ScheduleEntry,
)
from .errors import ValidationError
from .measures import BetaBase, DiscreteBase
from .state import MarketConfiguration

SCHEMA_VERSION = 1

_REMOVAL_NAMES = ("neutral", "proportional", "inverse", "antitrust", "uniform_unit")
_SELECTION_NAMES = ("unit", "identity", "inverse_cluster", "sigma_poly")


def _fail(path: str, message: str) -> ValidationError:
    return ValidationError(f"scenario key {path!r}: {message}")


def _expect_table(value, path: str) -> dict:
    if not isinstance(value, dict):
        raise _fail(path, f"expected a table, got {type(value).__name__}")
    return value


def _expect_keys(table: Mapping, allowed: set[str], required: set[str], path: str) -> None:
    unknown = set(table) - allowed
    if unknown:
        raise _fail(f"{path}.{sorted(unknown)[0]}", "unknown key")
    missing = required - set(table)
    if missing:
        raise _fail(path, f"missing required key {sorted(missing)[0]!r}")


def _expect_int(value, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise _fail(path, f"expected an integer, got {value!r}")
    return value


def _expect_float(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise _fail(path, f"expected a number, got {value!r}")
    return float(value)


def _expect_str(value, path: str) -> str:
    if not isinstance(value, str):
        raise _fail(path, f"expected a string, got {value!r}")
    return value


def _expect_float_list(value, path: str) -> list[float]:
    if not isinstance(value, list):
        raise _fail(path, f"expected an array, got {value!r}")
    return [_expect_float(v, f"{path}[{i}]") for i, v in enumerate(value)]


def _is_bare_key(name: str) -> bool:
    return bool(name) and all(c.isalnum() or c in "_-" for c in name)


def _parse_base(table, path: str):
    table = _expect_table(table, path)
    kind = _expect_str(table.get("kind"), f"{path}.kind") if "kind" in table else None
    if kind == "beta":
        _expect_keys(table, {"kind", "a", "b"}, {"kind", "a", "b"}, path)
        return BetaBase(_expect_float(table["a"], f"{path}.a"), _expect_float(table["b"], f"{path}.b"))
    if kind == "discrete":
        _expect_keys(table, {"kind", "atoms", "weights"}, {"kind", "atoms", "weights"}, path)
        return DiscreteBase(
            _expect_float_list(table["atoms"], f"{path}.atoms"),
            _expect_float_list(table["weights"], f"{path}.weights"),
        )
    raise _fail(f"{path}.kind", "must be 'beta' or 'discrete'")


def _parse_start(table, path: str):
    table = _expect_table(table, path)
    kind = _expect_str(table.get("kind"), f"{path}.kind") if "kind" in table else None
    if kind == "competitive":
        _expect_keys(table, {"kind", "firms"}, {"kind", "firms"}, path)
        return CompetitiveStart(firms=_expect_int(table["firms"], f"{path}.firms"))
    if kind == "monopoly":
        _expect_keys(table, {"kind", "label"}, {"kind"}, path)
        label = table.get("label")
        return MonopolyStart(label=None if label is None else _expect_float(label, f"{path}.label"))
    if kind == "custom":
        _expect_keys(table, {"kind", "units"}, {"kind", "units"}, path)
        return CustomStart(units=tuple(_expect_float_list(table["units"], f"{path}.units")))
    raise _fail(f"{path}.kind", "must be 'competitive', 'monopoly' or 'custom'")


def _parse_removal(table, path: str) -> RemovalPolicy:
    table = _expect_table(table, path)
    policy = _expect_str(table.get("policy"), f"{path}.policy") if "policy" in table else None
    if policy not in _REMOVAL_NAMES:
        raise _fail(f"{path}.policy", f"must be one of {_REMOVAL_NAMES}")
    if policy == "antitrust":
        _expect_keys(table, {"policy", "threshold", "fallback"}, {"policy", "threshold"}, path)
        fallback_name = table.get("fallback", "neutral")
        fallback = _parse_removal({"policy": fallback_name}, f"{path}.fallback")
        if isinstance(fallback, AntitrustRemoval):
            raise _fail(f"{path}.fallback", "antitrust cannot be its own fallback")
        return AntitrustRemoval(
            threshold=_expect_float(table["threshold"], f"{path}.threshold"), fallback=fallback
        )
    _expect_keys(table, {"policy"}, {"policy"}, path)
    return {
        "neutral": NeutralRemoval,
        "proportional": ProportionalRemoval,
        "inverse": InverseRemoval,
        "uniform_unit": UniformUnitRemoval,
    }[policy]()


def _parse_selection(table, path: str) -> SelectionSpec:
    table = _expect_table(table, path)
    kind = _expect_str(table.get("kind"), f"{path}.kind") if "kind" in table else None
    if kind not in _SELECTION_NAMES:
        raise _fail(f"{path}.kind", f"must be one of {_SELECTION_NAMES}")
    if kind == "sigma_poly":
        _expect_keys(table, {"kind", "coeffs"}, {"kind", "coeffs"}, path)
        return SigmaSelection.from_coeffs(_expect_float_list(table["coeffs"], f"{path}.coeffs"))
    _expect_keys(table, {"kind"}, {"kind"}, path)
    return {
        "unit": UnitSelection,
        "identity": IdentitySelection,
        "inverse_cluster": InverseClusterSelection,
    }[kind]()


def _parse_scalar_or_map(value, path: str, market_ids: tuple[str, ...]):
    """A patch value: a number, or a table of per-market numbers."""
    if isinstance(value, dict):
        out = {}
        for r, v in value.items():
            if r not in market_ids:
                raise _fail(f"{path}.{r}", "unknown market id")
            out[r] = _expect_float(v, f"{path}.{r}")
        return out
    return _expect_float(value, path)


def parse_scenario(text: str) -> EngineConfig:
    """Parse scenario TOML text into a validated engine configuration."""
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ValidationError(f"scenario is not valid TOML: {exc}") from None

    _expect_keys(
        doc,
        {"schema_version", "run", "markets", "migration", "removal", "selection", "schedule"},
        {"schema_version", "run", "markets"},
        "scenario",
    )
    version = _expect_int(doc["schema_version"], "schema_version")
    if version != SCHEMA_VERSION:
        raise _fail("schema_version", f"unsupported version {version}, expected {SCHEMA_VERSION}")

    run_tbl = _expect_table(doc["run"], "run")
    _expect_keys(
        run_tbl,
        {"units", "iterations", "seed", "mode", "bins", "clock_rate", "snapshots", "spacing", "record_at"},
        {"units", "iterations"},
        "run",
    )
    n = _expect_int(run_tbl["units"], "run.units")
    iterations = _expect_int(run_tbl["iterations"], "run.iterations")
    seed = _expect_int(run_tbl.get("seed", 0), "run.seed")
    mode = _expect_str(run_tbl.get("mode", "discrete"), "run.mode")
    bins = _expect_int(run_tbl.get("bins", 15), "run.bins")
    clock_rate = (
        _expect_float(run_tbl["clock_rate"], "run.clock_rate") if "clock_rate" in run_tbl else None
    )
    if "record_at" in run_tbl and ("snapshots" in run_tbl or "spacing" in run_tbl):
        raise _fail("run.record_at", "cannot be combined with snapshots/spacing")
    if "record_at" in run_tbl:
        explicit = [
            _expect_int(v, f"run.record_at[{i}]") for i, v in enumerate(run_tbl["record_at"])
        ]
        retention = RetentionPlan(explicit=tuple(explicit))
    else:
        retention = RetentionPlan(
            count=_expect_int(run_tbl.get("snapshots", 150), "run.snapshots"),
            spacing=_expect_str(run_tbl.get("spacing", "log"), "run.spacing"),
        )

    markets_tbl = _expect_table(doc["markets"], "markets")
    if not markets_tbl:
        raise _fail("markets", "at least one market is required")
    theta: dict[str, float] = {}
    pi: dict[str, float] = {}
    base: dict[str, Any] = {}
    initial: dict[str, Any] = {}
    weights: dict[str, float] = {}
    for r in sorted(markets_tbl):
        if not _is_bare_key(r):
            raise _fail(f"markets.{r}", "market ids must use only letters, digits, '_' or '-'")
        path = f"markets.{r}"
        tbl = _expect_table(markets_tbl[r], path)
        _expect_keys(tbl, {"theta", "pi", "base", "start", "weight"}, {"theta", "base", "start"}, path)
        theta[r] = _expect_float(tbl["theta"], f"{path}.theta")
        pi[r] = _expect_float(tbl.get("pi", 1.0), f"{path}.pi")
        base[r] = _parse_base(tbl["base"], f"{path}.base")
        initial[r] = _parse_start(tbl["start"], f"{path}.start")
        if "weight" in tbl:
            weights[r] = _expect_float(tbl["weight"], f"{path}.weight")
    if weights and set(weights) != set(markets_tbl):
        raise _fail("markets", "either every market or no market may set a weight")

    migration = None
    if "migration" in doc:
        mig_tbl = _expect_table(doc["migration"], "migration")
        rows = {}
        for r, row in mig_tbl.items():
            if r not in theta:
                raise _fail(f"migration.{r}", "unknown market id")
            row = _expect_table(row, f"migration.{r}")
            rows[r] = {
                r2: _expect_float(w, f"migration.{r}.{r2}") for r2, w in row.items()
            }
            for r2 in row:
                if r2 not in theta:
                    raise _fail(f"migration.{r}.{r2}", "unknown market id")
        if set(rows) != set(theta):
            raise _fail("migration", "kernel rows must cover every market")
        migration = MigrationKernel(rows)

    removal = _parse_removal(doc["removal"], "removal") if "removal" in doc else UniformUnitRemoval()
    selection = _parse_selection(doc["selection"], "selection") if "selection" in doc else UnitSelection()

    market_ids = tuple(sorted(theta))
    schedule_entries = []
    if "schedule" in doc:
        if not isinstance(doc["schedule"], list):
            raise _fail("schedule", "expected an array of tables ([[schedule]])")
        for idx, entry in enumerate(doc["schedule"]):
            path = f"schedule[{idx}]"
            tbl = _expect_table(entry, path)
            _expect_keys(tbl, {"at", "theta", "pi", "clock_rate"}, {"at"}, path)
            patch: dict[str, Any] = {}
            for key in ("theta", "pi"):
                if key in tbl:
                    patch[key] = _parse_scalar_or_map(tbl[key], f"{path}.{key}", market_ids)
            if "clock_rate" in tbl:
                patch["clock_rate"] = _expect_float(tbl["clock_rate"], f"{path}.clock_rate")
            if not patch:
                raise _fail(path, "a schedule entry must patch at least one field")
            schedule_entries.append(
                ScheduleEntry(trigger=_expect_int(tbl["at"], f"{path}.at"), patch=patch)
            )

    params = ParameterSet(
        theta=theta,
        pi=pi,
        base=base,
        removal=removal,
        selection=selection,
        migration=migration,
        market_weights=weights or None,
        clock_rate=clock_rate,
    )
    config = EngineConfig(
        n=n,
        params=params,
        initial=initial,
        iterations=iterations,
        seed=seed,
        schedule=Schedule(entries=tuple(schedule_entries)),
        retention=retention,
        mode=mode,
        bin_count=bins,
    )
    params.validate(config.market_ids)
    config.schedule.validate(iterations)
    return config


# ---------------------------------------------------------------------------
# serialization

def _base_dict(measure) -> dict:
    if isinstance(measure, BetaBase):
        return {"kind": "beta", "a": measure.a, "b": measure.b}
    if isinstance(measure, DiscreteBase):
        return {"kind": "discrete", "atoms": list(measure.atoms), "weights": list(measure.weights)}
    raise ValidationError(f"base measure {measure!r} cannot be written to a scenario file")


def _start_dict(start) -> dict:
    if isinstance(start, CompetitiveStart):
        return {"kind": "competitive", "firms": start.firms}
    if isinstance(start, MonopolyStart):
        out: dict[str, Any] = {"kind": "monopoly"}
        if start.label is not None:
            out["label"] = start.label
        return out
    if isinstance(start, CustomStart):
        return {"kind": "custom", "units": list(start.units)}
    if isinstance(start, MarketConfiguration):
        return {"kind": "custom", "units": list(start.units)}
    raise ValidationError(f"initial condition {start!r} cannot be written to a scenario file")


def _removal_dict(policy: RemovalPolicy) -> dict:
    if isinstance(policy, AntitrustRemoval):
        return {
            "policy": "antitrust",
            "threshold": policy.threshold,
            "fallback": _removal_dict(policy.fallback)["policy"],
        }
    if policy.kind in _REMOVAL_NAMES:
        return {"policy": policy.kind}
    raise ValidationError(f"removal policy {policy!r} cannot be written to a scenario file")


def _selection_dict(selection: SelectionSpec) -> dict:
    if isinstance(selection, SigmaSelection):
        if selection.coeffs is None:
            raise ValidationError(
                "sigma selections need polynomial coefficients to be written to a scenario file"
            )
        return {"kind": "sigma_poly", "coeffs": list(selection.coeffs)}
    if selection.kind in ("unit", "identity", "inverse_cluster"):
        return {"kind": selection.kind}
    raise ValidationError(f"selection {selection!r} cannot be written to a scenario file")


def config_to_dict(config: EngineConfig) -> dict:
    """Scenario-shaped nested dict of a configuration (used for TOML and JSON)."""
    params = config.params
    ids = config.market_ids
    run: dict[str, Any] = {
        "units": config.n,
        "iterations": config.iterations,
        "seed": config.seed,
        "mode": config.mode,
        "bins": config.bin_count,
    }
    if params.clock_rate is not None:
        run["clock_rate"] = params.clock_rate
    if config.retention.explicit is not None:
        run["record_at"] = list(config.retention.explicit)
    else:
        run["snapshots"] = config.retention.count
        run["spacing"] = config.retention.spacing
    markets: dict[str, Any] = {}
    for r in ids:
        entry: dict[str, Any] = {
            "theta": params.theta_in(r),
            "pi": params.pi_in(r),
            "base": _base_dict(params.base_in(r)),
            "start": _start_dict(config.initial[r]),
        }
        if params.market_weights is not None:
            entry["weight"] = params.market_weights[r]
        markets[r] = entry
    doc: dict[str, Any] = {"schema_version": SCHEMA_VERSION, "run": run, "markets": markets}
    if params.migration is not None:
        doc["migration"] = params.migration.as_dict()
    doc["removal"] = _removal_dict(params.removal)
    doc["selection"] = _selection_dict(params.selection)
    if config.schedule.entries:
        entries = []
        for e in config.schedule.entries:
            entry = {"at": e.trigger}
            for key, value in e.patch.items():
                if key not in ("theta", "pi", "clock_rate"):
                    raise ValidationError(
                        f"schedule patch field {key!r} cannot be written to a scenario file"
                    )
                entry[key] = dict(value) if isinstance(value, Mapping) else value
            entries.append(entry)
        doc["schedule"] = entries
    return doc


def _fmt(value) -> str:
    if isinstance(value, bool):
        raise ValidationError(f"unexpected boolean {value!r} in scenario")
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_fmt(v) for v in value) + "]"
    if isinstance(value, dict):
        return "{" + ", ".join(f"{k} = {_fmt(v)}" for k, v in value.items()) + "}"
    raise ValidationError(f"cannot format {value!r} for a scenario file")


def serialize_scenario(config: EngineConfig) -> str:
    """Write a configuration back to scenario TOML.

    parse_scenario(serialize_scenario(parse_scenario(text))) yields a
    configuration equal to parse_scenario(text).
    """
    doc = config_to_dict(config)
    lines: list[str] = [f"schema_version = {doc['schema_version']}"]

    def table(name: str, body: Mapping[str, Any]) -> None:
        lines.append("")
        lines.append(f"[{name}]")
        for k, v in body.items():
            lines.append(f"{k} = {_fmt(v)}")

    table("run", doc["run"])
    for r, body in doc["markets"].items():
        if not _is_bare_key(r):
            raise ValidationError(f"market id {r!r} cannot be written as a TOML key")
        table(f"markets.{r}", body)
    if "migration" in doc:
        table("migration", doc["migration"])
    table("removal", doc["removal"])
    table("selection", doc["selection"])
    for entry in doc.get("schedule", []):
        lines.append("")
        lines.append("[[schedule]]")
        for k, v in entry.items():
            lines.append(f"{k} = {_fmt(v)}")
    return "\n".join(lines) + "\n"
