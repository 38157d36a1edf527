"""Trace serialization (CSV, JSON metadata, SVG heatmaps) and seed sweeps.

The CSV is one row per retained iteration per market; the JSON sidecar holds
the fully resolved configuration including the seed, so a trace file pair is
self-describing. The SVG renders the iteration-by-bin occupancy heatmap with
a log-scaled iteration axis. All three emitters are byte-deterministic for a
fixed trace.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, replace as _dc_replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import scenario as _scenario
from .engine import EngineConfig, SummaryStats, Trace, run, snapshot
from .errors import ValidationError
from .state import MarketConfiguration

FORMATS = ("csv", "json-meta", "svg-heatmap")

#: final Herfindahl above this counts as a dominant-firm outcome in sweeps
HIGH_CONCENTRATION = 0.8

_QUANTILES = (0.1, 0.5, 0.9)


def herfindahl(config: MarketConfiguration) -> float:
    """Sum of squared market shares of the configuration's firms."""
    return config.herfindahl()


# ---------------------------------------------------------------------------
# CSV

def _csv_header(bin_count: int) -> list[str]:
    return (
        ["iteration", "clock", "market"]
        + [f"bin_{b}" for b in range(bin_count)]
        + ["K_n", "herfindahl", "max_share", "events_new", "events_cross", "events_within"]
    )


def trace_csv(trace: Trace) -> str:
    """Render the trace as CSV text, one row per retained iteration and market."""
    if not trace.records:
        raise ValidationError("cannot emit an empty trace")
    bins = trace.config.bin_count
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_csv_header(bins))
    for rec in trace.records:
        clock = "" if rec.clock is None else repr(rec.clock)
        for r, stats in rec.markets.items():
            if len(stats.histogram.counts) != bins:
                raise ValidationError(
                    f"record at iteration {rec.iteration} has {len(stats.histogram.counts)} bins, expected {bins}"
                )
            writer.writerow(
                [rec.iteration, clock, r]
                + list(stats.histogram.counts)
                + [
                    stats.firm_count,
                    repr(stats.herfindahl),
                    repr(stats.max_share),
                    rec.events_new,
                    rec.events_cross,
                    rec.events_within,
                ]
            )
    return buf.getvalue()


# ---------------------------------------------------------------------------
# JSON metadata

def trace_meta(trace: Trace) -> str:
    """JSON sidecar: resolved configuration, seed and retention actually used."""
    if not trace.records:
        raise ValidationError("cannot emit an empty trace")
    doc = {
        "schema_version": _scenario.SCHEMA_VERSION,
        "scenario": _scenario.config_to_dict(trace.config),
        "markets": list(trace.market_ids),
        "retained_iterations": [rec.iteration for rec in trace.records],
        "final_iteration": trace.final_state.iteration,
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# SVG heatmap

_SVG_WIDTH = 720
_SVG_HEIGHT = 360
_MARGIN_LEFT = 64
_MARGIN_RIGHT = 16
_MARGIN_TOP = 28
_MARGIN_BOTTOM = 40


def _shade(share: float) -> str:
    v = 255 - int(round(min(max(share, 0.0), 1.0) * 255))
    return f"#{v:02x}{v:02x}ff"


def trace_svg(trace: Trace, market: str) -> str:
    """Iteration-by-bin occupancy heatmap for one market.

    The x axis is log-scaled in the iteration count (cells span the gap back
    to the previous retained iteration), the y axis is the label bins, and
    cell darkness is the share of units in the bin.
    """
    if not trace.records:
        raise ValidationError("cannot emit an empty trace")
    if market not in trace.market_ids:
        raise ValidationError(f"no market {market!r} in this trace")
    n = trace.config.n
    bins = trace.config.bin_count
    edges_ts = [math.log10(rec.iteration + 1.0) for rec in trace.records]
    if len(edges_ts) > 1:
        first_width = edges_ts[1] - edges_ts[0]
    else:
        first_width = 1.0
    lo = edges_ts[0] - first_width
    hi = edges_ts[-1]
    span = hi - lo

    plot_w = _SVG_WIDTH - _MARGIN_LEFT - _MARGIN_RIGHT
    plot_h = _SVG_HEIGHT - _MARGIN_TOP - _MARGIN_BOTTOM

    def x_of(t: float) -> float:
        return _MARGIN_LEFT + plot_w * (t - lo) / span

    cell_h = plot_h / bins
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_SVG_WIDTH}" height="{_SVG_HEIGHT}" '
        f'viewBox="0 0 {_SVG_WIDTH} {_SVG_HEIGHT}">',
        f'<rect width="{_SVG_WIDTH}" height="{_SVG_HEIGHT}" fill="white"/>',
        f'<text x="{_MARGIN_LEFT}" y="18" font-family="monospace" font-size="13">'
        f"market {market}: unit share per label bin</text>",
    ]
    prev = lo
    for rec, t in zip(trace.records, edges_ts):
        stats = rec.markets[market]
        x0, x1 = x_of(prev), x_of(t)
        w = x1 - x0
        for b, count in enumerate(stats.histogram.counts):
            if count == 0:
                continue
            y = _MARGIN_TOP + plot_h - (b + 1) * cell_h
            parts.append(
                f'<rect x="{x0:.2f}" y="{y:.2f}" width="{w:.2f}" height="{cell_h:.2f}" '
                f'fill="{_shade(count / n)}"/>'
            )
        prev = t
    axis_y = _MARGIN_TOP + plot_h
    parts.append(
        f'<line x1="{_MARGIN_LEFT}" y1="{axis_y}" x2="{_MARGIN_LEFT + plot_w}" y2="{axis_y}" '
        'stroke="black" stroke-width="1"/>'
    )
    parts.append(
        f'<line x1="{_MARGIN_LEFT}" y1="{_MARGIN_TOP}" x2="{_MARGIN_LEFT}" y2="{axis_y}" '
        'stroke="black" stroke-width="1"/>'
    )
    decade = 0
    while True:
        t = float(decade)
        if t > hi:
            break
        if t >= lo:
            x = x_of(t)
            parts.append(
                f'<line x1="{x:.2f}" y1="{axis_y}" x2="{x:.2f}" y2="{axis_y + 5}" '
                'stroke="black" stroke-width="1"/>'
            )
            parts.append(
                f'<text x="{x:.2f}" y="{axis_y + 18}" font-family="monospace" font-size="11" '
                f'text-anchor="middle">{10 ** decade}</text>'
            )
        decade += 1
    parts.append(
        f'<text x="{_MARGIN_LEFT + plot_w / 2:.2f}" y="{_SVG_HEIGHT - 8}" font-family="monospace" '
        'font-size="11" text-anchor="middle">iteration (log scale)</text>'
    )
    for frac, lab in ((0.0, "0"), (0.5, "0.5"), (1.0, "1")):
        y = _MARGIN_TOP + plot_h * (1.0 - frac)
        parts.append(
            f'<text x="{_MARGIN_LEFT - 8}" y="{y + 4:.2f}" font-family="monospace" font-size="11" '
            f'text-anchor="end">{lab}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# ---------------------------------------------------------------------------
# emission

def emit_trace(
    trace: Trace,
    formats: str | Iterable[str] = FORMATS,
    out_dir: str | Path = ".",
    stem: str = "trace",
) -> list[Path]:
    """Write the trace in the requested formats; returns the written paths."""
    if isinstance(formats, str):
        formats = (formats,)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    for fmt in formats:
        if fmt == "csv":
            path = out_dir / f"{stem}.csv"
            path.write_text(trace_csv(trace))
            written.append(path)
        elif fmt == "json-meta":
            path = out_dir / f"{stem}_meta.json"
            path.write_text(trace_meta(trace))
            written.append(path)
        elif fmt == "svg-heatmap":
            for r in trace.market_ids:
                path = out_dir / f"{stem}_heatmap_{r}.svg"
                path.write_text(trace_svg(trace, r))
                written.append(path)
        else:
            raise ValidationError(f"unknown trace format {fmt!r}, expected one of {FORMATS}")
    return written


# ---------------------------------------------------------------------------
# sweeps

@dataclass(frozen=True)
class SeedResult:
    """Final per-market summaries of one replica."""

    seed: int
    final: Mapping[str, SummaryStats]


@dataclass(frozen=True)
class SweepReport:
    """Per-seed final summaries plus cross-seed aggregates.

    `quantiles` maps market id -> stat name -> values at the 10/50/90 percent
    levels; `high_fraction` is the share of seeds whose final Herfindahl
    exceeds HIGH_CONCENTRATION.
    """

    seeds: tuple[int, ...]
    results: tuple[SeedResult, ...]
    quantiles: Mapping[str, Mapping[str, tuple[float, ...]]]
    high_fraction: Mapping[str, float]


def sweep(config: EngineConfig, seeds: Sequence[int]) -> SweepReport:
    """Run one replica per seed and aggregate the final summaries.

    Replicas are independent (no shared mutable state), so callers may
    reimplement this loop with any executor; this implementation runs them
    sequentially for deterministic ordering.
    """
    if not seeds:
        raise ValidationError("sweep needs at least one seed")
    results = []
    for seed in seeds:
        trace = run(_dc_replace(config, seed=int(seed)))
        results.append(SeedResult(seed=int(seed), final=snapshot(trace.final_state, config.bin_count)))
    quantiles: dict[str, dict[str, tuple[float, ...]]] = {}
    high: dict[str, float] = {}
    for r in config.market_ids:
        h_vals = np.array([res.final[r].herfindahl for res in results])
        k_vals = np.array([res.final[r].firm_count for res in results], dtype=float)
        s_vals = np.array([res.final[r].max_share for res in results])
        quantiles[r] = {
            "herfindahl": tuple(float(q) for q in np.quantile(h_vals, _QUANTILES)),
            "firm_count": tuple(float(q) for q in np.quantile(k_vals, _QUANTILES)),
            "max_share": tuple(float(q) for q in np.quantile(s_vals, _QUANTILES)),
        }
        high[r] = float(np.mean(h_vals > HIGH_CONCENTRATION))
    return SweepReport(
        seeds=tuple(int(s) for s in seeds),
        results=tuple(results),
        quantiles=quantiles,
        high_fraction=high,
    )


def format_sweep(report: SweepReport) -> str:
    """Plain-text sweep report for the CLI."""
    lines = [f"seeds: {', '.join(str(s) for s in report.seeds)}"]
    markets = sorted(report.quantiles)
    for r in markets:
        q = report.quantiles[r]
        lines.append(f"market {r}:")
        lines.append(
            "  herfindahl  q10={:.4f} q50={:.4f} q90={:.4f}".format(*q["herfindahl"])
        )
        lines.append(
            "  firm_count  q10={:.1f} q50={:.1f} q90={:.1f}".format(*q["firm_count"])
        )
        lines.append(
            "  max_share   q10={:.4f} q50={:.4f} q90={:.4f}".format(*q["max_share"])
        )
        lines.append(
            f"  herfindahl > {HIGH_CONCENTRATION}: {report.high_fraction[r]:.0%} of seeds"
        )
    lines.append("per-seed final herfindahl:")
    for res in report.results:
        vals = "  ".join(f"{r}={res.final[r].herfindahl:.4f}" for r in markets)
        lines.append(f"  seed {res.seed}: {vals}")
    return "\n".join(lines) + "\n"
