"""Command-line entry points.

Exit codes: 0 on success, 1 when an input document (scenario or weights
file) fails validation, 2 on runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import Mapping, Optional, Sequence

import numpy as np
import yaml

from .errors import InvalidScenario, NotReciprocal, SkyGridError
from .evaluation import ComparisonMatrix, GROUPS, evaluation_report
from .eventlog import EventLogWriter, read_event_log
from .engine import run_trial
from .experiments import (DEFAULT_TRIALS_PER_CELL, JITTER_SIGMA_M,
                          SWEEP_COUNTS, SWEEP_MARGINS_M, sweep_envelope,
                          write_link_metrics_csv, write_sweep_csv)
from .links import default_link_modes
from .scenario import load_scenario


def _cmd_validate(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.scenario)
    print(f"ok: scenario '{scenario.name}' "
          f"({len(scenario.aircraft)} aircraft, "
          f"{len(scenario.corridors)} corridors) hash {scenario.hash}")
    return 0


def _cmd_run(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.scenario)
    with open(args.out, "w") as fh:
        writer = EventLogWriter(fh)
        result = run_trial(scenario, trial_index=args.trial_index,
                           lean=False, writer=writer)
    summary = {
        "success": result.success,
        "first_overlap_tick": result.first_overlap_tick,
        "ticks": result.ticks,
        "min_separation_m": (None if result.min_separation_m == float("inf")
                             else result.min_separation_m),
        "tier_counts": result.tier_counts,
        "violations": result.violation_count,
        "anomalies": result.anomaly_count,
        "scenario_hash": result.scenario_hash,
        "log": args.out,
    }
    print(json.dumps(summary, sort_keys=True))
    return 0


def _cmd_sweep(args: argparse.Namespace) -> int:
    margins = [float(x) for x in args.margins.split(",") if x]
    counts = [int(x) for x in args.counts.split(",") if x]
    cells = sweep_envelope(margins, counts, args.trials, seed=args.seed,
                           jitter_sigma_m=args.jitter_sigma,
                           progress=sys.stderr if args.progress else None)
    with open(args.out, "w") as fh:
        write_sweep_csv(cells, fh)
    print(f"wrote {len(cells)} cells to {args.out}")
    return 0


def _cmd_link_metrics(args: argparse.Namespace) -> int:
    if args.scenario:
        modes = load_scenario(args.scenario).link_modes
    else:
        modes = default_link_modes()
    with open(args.out, "w") as fh:
        write_link_metrics_csv(modes, fh, args.reference_km)
    print(f"wrote {len(modes)} modes to {args.out}")
    return 0


def _load_weight_matrices(path: str) -> tuple[ComparisonMatrix,
                                              dict[str, ComparisonMatrix]]:
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except (OSError, yaml.YAMLError) as err:
        raise InvalidScenario(f"cannot read weights file: {err}") from err
    if not isinstance(raw, dict) or "groups" not in raw or "leaves" not in raw:
        raise InvalidScenario(
            "weights file needs 'groups' and 'leaves' matrices")
    unknown = sorted(set(raw) - {"groups", "leaves"})
    if unknown:
        raise InvalidScenario(f"weights file has unknown keys {unknown}")
    group = ComparisonMatrix(np.array(raw["groups"], dtype=float))
    leaves = {}
    if not isinstance(raw["leaves"], Mapping):
        raise InvalidScenario("'leaves' must map group names to matrices")
    missing = sorted(set(GROUPS) - set(raw["leaves"]))
    if missing:
        raise InvalidScenario(f"weights file missing leaf matrices {missing}")
    for g in GROUPS:
        leaves[g] = ComparisonMatrix(np.array(raw["leaves"][g], dtype=float))
    return group, leaves


def _cmd_evaluate(args: argparse.Namespace) -> int:
    records = read_event_log(args.log)
    group, leaves = (None, None)
    if args.weights:
        group, leaves = _load_weight_matrices(args.weights)
    report = evaluation_report(records, group, leaves)
    text = json.dumps(report, sort_keys=True, indent=2)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
        print(f"wrote report to {args.out}")
    else:
        print(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="skygrid",
        description="Gridded low-altitude airspace simulation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a scenario file")
    p.add_argument("--scenario", required=True)
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("run", help="run one trial and write its event log")
    p.add_argument("--scenario", required=True)
    p.add_argument("--out", required=True, help="event log path (JSONL)")
    p.add_argument("--trial-index", type=int, default=0)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("sweep-envelope",
                       help="success probability over margin x fleet size")
    p.add_argument("--out", required=True, help="CSV output path")
    p.add_argument("--margins",
                   default=",".join(f"{m:g}" for m in SWEEP_MARGINS_M))
    p.add_argument("--counts",
                   default=",".join(str(c) for c in SWEEP_COUNTS))
    p.add_argument("--trials", type=int, default=DEFAULT_TRIALS_PER_CELL)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jitter-sigma", type=float, default=JITTER_SIGMA_M)
    p.add_argument("--progress", action="store_true")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("link-metrics", help="per-mode link budget table")
    p.add_argument("--out", required=True, help="CSV output path")
    p.add_argument("--scenario", default=None,
                   help="optional scenario supplying mode overrides")
    p.add_argument("--reference-km", type=float, default=1.0)
    p.set_defaults(func=_cmd_link_metrics)

    p = sub.add_parser("evaluate", help="indicator report from an event log")
    p.add_argument("--log", required=True)
    p.add_argument("--weights", default=None,
                   help="optional YAML comparison matrices")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_evaluate)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InvalidScenario, NotReciprocal) as err:
        print(f"invalid input: {err}", file=sys.stderr)
        return 1
    except SkyGridError as err:
        print(f"runtime failure: {err}", file=sys.stderr)
        return 2
    except OSError as err:
        print(f"runtime failure: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
