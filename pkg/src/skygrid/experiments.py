"""Experiment drivers: the margin/fleet-size success sweep and the link
metric table.

The sweep stresses the avoidance stack with engineered convergence: for each
(safety margin, fleet size) cell, aircraft start evenly spaced on a circle
and are all routed through one shared waypoint at the same instant, so with
avoidance disabled every trial ends in a physical overlap at that waypoint.
Start and end points carry Gaussian horizontal jitter per trial; the shared
waypoint and its arrival time are exact.
"""

from __future__ import annotations

import copy
import csv
import math
import time
from dataclasses import dataclass
from typing import IO, Optional, Sequence

import numpy as np

from .engine import TrialResult, run_trial
from .errors import InvalidScenario
from .links import LinkMode, LinkModeName, link_metric_rows
from .scenario import Scenario, parse_scenario

SWEEP_MARGINS_M = (5.0, 10.0, 20.0, 40.0, 60.0)
SWEEP_COUNTS = (2, 4, 6, 8)
DEFAULT_TRIALS_PER_CELL = 200
JITTER_SIGMA_M = 20.0

ENCOUNTER_CENTER = (500.0, 500.0, 300.0)
ENCOUNTER_RADIUS_M = 350.0
ENCOUNTER_ARRIVAL_S = 40.0
ENCOUNTER_EXIT_S = 80.0

WILSON_Z = 1.959963984540054  # two-sided 95%

SWEEP_CSV_COLUMNS = ("margin_m", "count", "trials", "successes", "p_success",
                     "wilson_lo", "wilson_mid", "wilson_hi",
                     "mean_min_separation_m")

LINK_CSV_COLUMNS = ("mode", "frequency_MHz", "tx_power_W", "bandwidth_MHz",
                    "effective_range_km", "data_rate_bps")


def wilson_interval(successes: int, trials: int,
                    z: float = WILSON_Z) -> tuple[float, float, float]:
    """Wilson score interval (lo, midpoint, hi) for a binomial proportion."""
    if trials <= 0:
        raise ValueError("trials must be positive")
    if not 0 <= successes <= trials:
        raise ValueError("successes must lie in [0, trials]")
    p = successes / trials
    denom = 1.0 + z * z / trials
    mid = (p + z * z / (2 * trials)) / denom
    half = (z / denom) * math.sqrt(p * (1 - p) / trials
                                   + z * z / (4 * trials * trials))
    return (max(mid - half, 0.0), mid, min(mid + half, 1.0))


def count_adjacent_increases(values: Sequence[float],
                             tolerance: float = 0.0) -> int:
    """Number of adjacent pairs that rise by more than the tolerance."""
    return sum(1 for a, b in zip(values, values[1:]) if b > a + tolerance)


@dataclass(frozen=True)
class EncounterGeometry:
    """Converging-ring construction: where the fleet meets and when."""

    center: tuple[float, float, float] = ENCOUNTER_CENTER
    radius_m: float = ENCOUNTER_RADIUS_M
    arrival_s: float = ENCOUNTER_ARRIVAL_S
    exit_s: float = ENCOUNTER_EXIT_S


def encounter_geometry(scenario: Scenario) -> EncounterGeometry:
    """Recover the ring construction from a converging-waypoint scenario.

    Requires the three-waypoint form: every aircraft flies start, shared
    center, exit, with one common center position, one common arrival time,
    and one common exit time. The ring radius is the mean horizontal start
    distance from the center.
    """
    if not scenario.aircraft:
        raise InvalidScenario("scenario lists no aircraft")
    centers = set()
    arrivals = set()
    exits = set()
    radii = []
    for a in scenario.aircraft:
        if len(a.waypoints) != 3:
            raise InvalidScenario(
                f"{a.id}: expected start/center/exit waypoints, "
                f"got {len(a.waypoints)}")
        start, mid, last = a.waypoints
        centers.add(mid.position.as_tuple())
        arrivals.add(mid.time_s)
        exits.add(last.time_s)
        radii.append(math.hypot(start.position.x - mid.position.x,
                                start.position.y - mid.position.y))
    if len(centers) != 1 or len(arrivals) != 1:
        raise InvalidScenario(
            "aircraft do not share one center waypoint at one arrival time")
    if len(exits) != 1:
        raise InvalidScenario("exit times differ between aircraft")
    return EncounterGeometry(center=centers.pop(),
                             radius_m=sum(radii) / len(radii),
                             arrival_s=arrivals.pop(), exit_s=exits.pop())


def make_encounter_scenario(margin_m: float, count: int, *, seed: int = 0,
                            jitter_sigma_m: float = JITTER_SIGMA_M,
                            jitter_rng: Optional[np.random.Generator] = None,
                            avoidance_enabled: bool = True,
                            dt_s: Optional[float] = None,
                            base: Optional[Scenario] = None) -> Scenario:
    """Radially converging fleet through one exact shared waypoint.

    All aircraft cross the center waypoint at the same instant; starts and
    exits sit diametrically opposed on a circle, jittered horizontally when a
    jitter generator is supplied. A base scenario, when given, supplies the
    airspace, stations, timing defaults, and ring geometry (via
    encounter_geometry); the roster is regenerated on that ring using the
    class and physical envelope of the first listed aircraft.
    """
    if count < 2:
        raise ValueError("an encounter needs at least two aircraft")
    if margin_m < 0:
        raise ValueError("safety margin must be non-negative")
    if base is not None:
        geom = encounter_geometry(base)
        raw = copy.deepcopy(base.raw)
        first = raw["aircraft"][0]
        aircraft_class = first.get("class", "RotaryWing")
        envelope = copy.deepcopy(
            first.get("envelope", {"shape": "sphere", "radius": 2.0}))
    else:
        geom = EncounterGeometry()
        aircraft_class = "RotaryWing"
        envelope = {"shape": "sphere", "radius": 2.0}
        cx, cy, _ = geom.center
        raw = {
            "seed": 0,
            "dt_s": 0.1,
            "duration_s": 100.0,
            "grid": {
                "bounds": {"x_max": 1000.0, "y_max": 1000.0, "z_max": 400.0},
                "cell_size": 10.0,
            },
            "stations": [{"id": "gs0", "position": [cx, cy, 0.0]}],
            "avoidance": {},
        }
    cx, cy, cz = geom.center
    rng = jitter_rng
    aircraft = []
    for k in range(count):
        angle = 2 * math.pi * k / count + 0.1
        sx = cx + geom.radius_m * math.cos(angle)
        sy = cy + geom.radius_m * math.sin(angle)
        ex = cx - geom.radius_m * math.cos(angle)
        ey = cy - geom.radius_m * math.sin(angle)
        if rng is not None and jitter_sigma_m > 0:
            sx, sy = rng.normal((sx, sy), jitter_sigma_m)
            ex, ey = rng.normal((ex, ey), jitter_sigma_m)
        aircraft.append({
            "id": f"uav{k:02d}",
            "class": aircraft_class,
            "envelope": copy.deepcopy(envelope),
            "safety_margin": float(margin_m),
            "waypoints": [
                {"position": [round(sx, 6), round(sy, 6), cz], "time_s": 0.0},
                {"position": [cx, cy, cz], "time_s": geom.arrival_s},
                {"position": [round(ex, 6), round(ey, 6), cz],
                 "time_s": geom.exit_s},
            ],
        })
    raw["name"] = f"encounter-m{margin_m:g}-n{count}"
    raw["seed"] = int(seed)
    raw["aircraft"] = aircraft
    if dt_s is not None:
        raw["dt_s"] = dt_s
    raw.setdefault("avoidance", {})["enabled"] = bool(avoidance_enabled)
    return parse_scenario(raw)


@dataclass(frozen=True)
class SweepCell:
    margin_m: float
    count: int
    trials: int
    successes: int
    p_success: float
    wilson_lo: float
    wilson_mid: float
    wilson_hi: float
    mean_min_separation_m: float

    def as_row(self) -> dict:
        return {
            "margin_m": self.margin_m, "count": self.count,
            "trials": self.trials, "successes": self.successes,
            "p_success": self.p_success, "wilson_lo": self.wilson_lo,
            "wilson_mid": self.wilson_mid, "wilson_hi": self.wilson_hi,
            "mean_min_separation_m": self.mean_min_separation_m,
        }


def sweep_envelope(base: Optional[Scenario] = None,
                   margins: Sequence[float] = SWEEP_MARGINS_M,
                   counts: Sequence[int] = SWEEP_COUNTS,
                   trials: int = DEFAULT_TRIALS_PER_CELL, *, seed: int = 0,
                   jitter_sigma_m: float = JITTER_SIGMA_M,
                   progress: Optional[IO[str]] = None) -> list[SweepCell]:
    """Success probability per (margin, count) cell with Wilson 95% bounds.

    Success is the absence of any physical overlap over the whole trial.
    Trial seeds derive from (seed, global trial counter), so cells are
    independent and the whole sweep is reproducible. The base scenario,
    when given, must be a converging-ring template (see encounter_geometry).
    """
    cells = []
    counter = 0
    started = time.monotonic()
    for margin in margins:
        for count in counts:
            successes = 0
            seps = []
            for _ in range(trials):
                jit = np.random.default_rng(
                    np.random.SeedSequence([seed, counter, 1]))
                scn = make_encounter_scenario(
                    margin, count, seed=seed, jitter_sigma_m=jitter_sigma_m,
                    jitter_rng=jit, base=base)
                result = run_trial(scn, trial_index=counter, lean=True,
                                   stop_on_overlap=True)
                successes += result.success
                if math.isfinite(result.min_separation_m):
                    seps.append(result.min_separation_m)
                counter += 1
            lo, mid, hi = wilson_interval(successes, trials)
            cells.append(SweepCell(
                margin_m=float(margin), count=int(count), trials=trials,
                successes=successes, p_success=successes / trials,
                wilson_lo=lo, wilson_mid=mid, wilson_hi=hi,
                mean_min_separation_m=(sum(seps) / len(seps)
                                       if seps else math.nan)))
            if progress is not None:
                elapsed = time.monotonic() - started
                progress.write(
                    f"margin={margin:g} count={count} "
                    f"p={successes / trials:.3f} [{elapsed:7.1f}s]\n")
                progress.flush()
    return cells


def write_sweep_csv(cells: Sequence[SweepCell], stream: IO[str]) -> None:
    writer = csv.DictWriter(stream, fieldnames=SWEEP_CSV_COLUMNS,
                            lineterminator="\n")
    writer.writeheader()
    for cell in cells:
        writer.writerow(cell.as_row())


def write_link_metrics_csv(modes, stream: IO[str],
                           reference_distance_km: float = 1.0) -> None:
    """Per-mode budget table: range from the closed-form inversion, rate at
    the reference distance (SAT at its standoff)."""
    writer = csv.DictWriter(stream, fieldnames=LINK_CSV_COLUMNS,
                            lineterminator="\n")
    writer.writeheader()
    for row in link_metric_rows(modes, reference_distance_km):
        writer.writerow(row)
