"""Command-line entry points: run, sweep and validate."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace as _dc_replace
from pathlib import Path

from .errors import ValidationError
from .oracle import run_all_checks
from .scenario import parse_scenario
from .traceio import FORMATS, emit_trace, format_sweep, sweep
from .engine import run as run_engine


def _load_config(path: str, seed: int | None, bins: int | None):
    text = Path(path).read_text()
    config = parse_scenario(text)
    if seed is not None:
        config = _dc_replace(config, seed=seed)
    if bins is not None:
        config = _dc_replace(config, bin_count=bins)
    return config


def _parse_seed_range(spec: str) -> list[int]:
    """Seed lists: '7', '0..9' (inclusive) or '1,4,9'."""
    out: list[int] = []
    for part in spec.split(","):
        part = part.strip()
        if ".." in part:
            lo_s, hi_s = part.split("..", 1)
            lo, hi = int(lo_s), int(hi_s)
            if hi < lo:
                raise ValidationError(f"empty seed range {part!r}")
            out.extend(range(lo, hi + 1))
        elif part:
            out.append(int(part))
    if not out:
        raise ValidationError(f"no seeds in {spec!r}")
    return out


def _cmd_run(args) -> int:
    config = _load_config(args.scenario, args.seed, args.bins)
    trace = run_engine(config)
    formats = args.format.split(",") if args.format else list(FORMATS)
    written = emit_trace(trace, formats, out_dir=args.out)
    last = trace.records[-1]
    for r in trace.market_ids:
        stats = last.markets[r]
        print(
            f"market {r}: iteration {last.iteration}, firms {stats.firm_count}, "
            f"herfindahl {stats.herfindahl:.4f}, max share {stats.max_share:.4f}"
        )
    for path in written:
        print(f"wrote {path}")
    return 0


def _cmd_sweep(args) -> int:
    config = _load_config(args.scenario, None, args.bins)
    seeds = _parse_seed_range(args.seeds)
    report = sweep(config, seeds)
    sys.stdout.write(format_sweep(report))
    return 0


def _cmd_validate(args) -> int:
    results = run_all_checks(
        cap=args.cap,
        include_moments=not args.quick,
        moment_steps=args.moment_steps,
    )
    ok = True
    for res in results:
        status = "PASS" if res.passed else "FAIL"
        ok = ok and res.passed
        detail = res.detail or f"value {res.value:.3g}, tolerance {res.tolerance:g}"
        print(f"{status} {res.name}: {detail}")
    print("all checks passed" if ok else "some checks FAILED")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="marketurns",
        description="Interacting-urn market simulator: run scenarios, sweep seeds, validate against exact oracles.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one scenario and write trace files")
    p_run.add_argument("scenario", help="path to a scenario TOML file")
    p_run.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p_run.add_argument("--out", default=".", help="output directory (default: current)")
    p_run.add_argument("--bins", type=int, default=None, help="override the histogram bin count")
    p_run.add_argument(
        "--format",
        default=None,
        help=f"comma-separated subset of {','.join(FORMATS)} (default: all)",
    )
    p_run.set_defaults(func=_cmd_run)

    p_sweep = sub.add_parser("sweep", help="run one scenario across many seeds")
    p_sweep.add_argument("scenario", help="path to a scenario TOML file")
    p_sweep.add_argument("--seeds", required=True, help="seed list, e.g. 0..9 or 1,4,9")
    p_sweep.add_argument("--bins", type=int, default=None, help="override the histogram bin count")
    p_sweep.set_defaults(func=_cmd_sweep)

    p_val = sub.add_parser("validate", help="run the exact-oracle check battery")
    p_val.add_argument("--cap", type=int, default=100_000, help="state-enumeration cap")
    p_val.add_argument("--quick", action="store_true", help="skip the long moment simulation")
    p_val.add_argument(
        "--moment-steps", type=int, default=2_000_000, help="steps for the moment simulation"
    )
    p_val.set_defaults(func=_cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
