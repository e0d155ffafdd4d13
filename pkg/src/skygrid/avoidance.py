"""Four-tier conflict resolution plus conflict metrics and probabilistic
collision estimation.

Tier 1 picks a single bounded maneuver per aircraft from a fixed rule ladder
(altitude, then speed for the lower-priority aircraft, then a right turn).
Tier 2 coordinates a conflict cluster by synchronized severity-weighted
repulsion. Tier 3 switches corridors on high severity or deadlock. Tier 4
plans missions globally in priority order against a shared cell-time
occupancy table.

Severity of a predicted conflict combines CPA proximity and urgency:
clamp(1 - d_cpa/(alert_factor * R), 0, 1) * clamp(1 - t_cpa/horizon, 0, 1)
with R the pair's combined outer radius.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .corridors import Corridor, CorridorGraph, corridor_tangent, route
from .envelopes import AircraftState, ClassLimits, CpaResult, solve_cpa
from .errors import (MisalignedTrajectories, NoFeasibleManeuver, NonConvergence,
                     NoRoute, Unplannable)
from .grid import CellIndex, GridSpec, Point3, cell_center, point_to_cell

DEFAULT_ALERT_FACTOR = 2.0
DEFAULT_CLUSTER_EDGE = 0.2
DEFAULT_TIER3_SEVERITY = 0.8
DEFAULT_HORIZON_S = 30.0
ALTITUDE_TIE_BAND_M = 5.0     # below this, vertical offset is sensor noise
MISS_DIRECTION_FLOOR_M = 10.0  # CPA offsets smaller than this carry no geometry
TIER2_SCALAR_LIMIT = 12       # clusters this small iterate with scalar rounds


@dataclass(frozen=True)
class AvoidanceConfig:
    """All escalation thresholds and severity weights in one record."""

    horizon_s: float = DEFAULT_HORIZON_S
    alert_factor: float = DEFAULT_ALERT_FACTOR
    cluster_edge_threshold: float = DEFAULT_CLUSTER_EDGE
    tier2_target_severity: float = DEFAULT_CLUSTER_EDGE
    tier2_max_iters: int = 50
    tier2_step_mps: float = 1.0
    tier3_severity_threshold: float = DEFAULT_TIER3_SEVERITY
    # Added to the combined outer radius when sizing a clearing maneuver;
    # covers tracking error, which does not shrink with the margin.
    clearance_guard_m: float = 8.0
    angle_weight: float = 0.4
    altitude_weight: float = 0.3
    speed_weight: float = 0.3
    altitude_scale_m: float = 50.0
    speed_scale_mps: float = 10.0


# ---------------------------------------------------------------------------
# Maneuvers


@dataclass(frozen=True)
class HeadingChange:
    """Right turn for positive delta (headings are CCW-from-east)."""

    delta_psi: float


@dataclass(frozen=True)
class SpeedChange:
    delta_v: float


@dataclass(frozen=True)
class AltitudeChange:
    """Altitude displacement over the coming tick, meters."""

    delta_h: float


@dataclass(frozen=True)
class Composite:
    parts: tuple["Maneuver", ...]


Maneuver = HeadingChange | SpeedChange | AltitudeChange | Composite


@dataclass(frozen=True)
class ManeuverBounds:
    """Per-tick authority derived from class rate limits."""

    max_dpsi: float
    max_dv: float
    max_dh: float

    @staticmethod
    def from_limits(limits: ClassLimits, dt_s: float) -> "ManeuverBounds":
        return ManeuverBounds(max_dpsi=limits.max_turn_rate * dt_s,
                              max_dv=limits.max_accel * dt_s,
                              max_dh=limits.max_climb_rate * dt_s)


def _clip(x: float, bound: float) -> float:
    return min(max(x, -bound), bound)


def clamp_maneuver(m: Maneuver, bounds: ManeuverBounds) -> Maneuver:
    if isinstance(m, HeadingChange):
        return HeadingChange(_clip(m.delta_psi, bounds.max_dpsi))
    if isinstance(m, SpeedChange):
        return SpeedChange(_clip(m.delta_v, bounds.max_dv))
    if isinstance(m, AltitudeChange):
        return AltitudeChange(_clip(m.delta_h, bounds.max_dh))
    if isinstance(m, Composite):
        return Composite(tuple(clamp_maneuver(p, bounds) for p in m.parts))
    raise TypeError(f"not a maneuver: {m!r}")


def maneuver_magnitudes(m: Maneuver) -> tuple[float, float, float]:
    """Total (|heading|, |speed|, |altitude|) content, composites summed."""
    if isinstance(m, HeadingChange):
        return (abs(m.delta_psi), 0.0, 0.0)
    if isinstance(m, SpeedChange):
        return (0.0, abs(m.delta_v), 0.0)
    if isinstance(m, AltitudeChange):
        return (0.0, 0.0, abs(m.delta_h))
    if isinstance(m, Composite):
        sums = [0.0, 0.0, 0.0]
        for p in m.parts:
            for i, v in enumerate(maneuver_magnitudes(p)):
                sums[i] += v
        return tuple(sums)  # type: ignore[return-value]
    raise TypeError(f"not a maneuver: {m!r}")


def _rotate_ccw(vx: float, vy: float, theta: float) -> tuple[float, float]:
    c, s = math.cos(theta), math.sin(theta)
    return (vx * c - vy * s, vx * s + vy * c)


def apply_maneuver(velocity: np.ndarray, heading: float, m: Maneuver,
                   dt_s: float) -> tuple[np.ndarray, float]:
    """Apply a maneuver to a velocity/heading pair.

    Positive heading deltas turn right, so the stored CCW heading decreases.
    Speed changes act on the horizontal component (along the heading when
    currently stationary); altitude changes add delta_h/dt of vertical rate.
    """
    v = np.array(velocity, dtype=float)
    if isinstance(m, HeadingChange):
        v[0], v[1] = _rotate_ccw(v[0], v[1], -m.delta_psi)
        return v, (heading - m.delta_psi) % (2 * math.pi)
    if isinstance(m, SpeedChange):
        h_speed = math.hypot(v[0], v[1])
        new_speed = max(h_speed + m.delta_v, 0.0)
        if h_speed > 1e-12:
            scale = new_speed / h_speed
            v[0] *= scale
            v[1] *= scale
        else:
            v[0] = new_speed * math.cos(heading)
            v[1] = new_speed * math.sin(heading)
        return v, heading
    if isinstance(m, AltitudeChange):
        v[2] += m.delta_h / dt_s
        return v, heading
    if isinstance(m, Composite):
        for p in m.parts:
            v, heading = apply_maneuver(v, heading, p, dt_s)
        return v, heading
    raise TypeError(f"not a maneuver: {m!r}")


def decompose_velocity_change(v_from: np.ndarray, v_to: np.ndarray,
                              dt_s: float) -> tuple[float, float, float]:
    """Express a velocity change as (heading delta, speed delta, altitude
    delta); right turns positive. Inverse of applying the three components."""
    fx, fy = float(v_from[0]), float(v_from[1])
    tx, ty = float(v_to[0]), float(v_to[1])
    nf, nt = math.hypot(fx, fy), math.hypot(tx, ty)
    if nf > 1e-12 and nt > 1e-12:
        ccw = math.atan2(fx * ty - fy * tx, fx * tx + fy * ty)
        dpsi = -ccw
    else:
        dpsi = 0.0
    dv = nt - nf
    dh = (float(v_to[2]) - float(v_from[2])) * dt_s
    return dpsi, dv, dh


# ---------------------------------------------------------------------------
# Conflict prediction


@dataclass(frozen=True)
class ConflictRecord:
    id_a: str
    id_b: str
    t_cpa: float
    d_cpa: float
    t_breach: Optional[float]
    severity: float

    def involves(self, aircraft_id: str) -> bool:
        return aircraft_id in (self.id_a, self.id_b)

    def other(self, aircraft_id: str) -> str:
        if aircraft_id == self.id_a:
            return self.id_b
        if aircraft_id == self.id_b:
            return self.id_a
        raise ValueError(f"{aircraft_id} not in conflict pair")


def severity_of(d_cpa: float, t_cpa: float, combined_outer: float,
                config: AvoidanceConfig) -> float:
    prox = 1.0 - d_cpa / (config.alert_factor * combined_outer)
    urgency = 1.0 - t_cpa / config.horizon_s
    return min(max(prox, 0.0), 1.0) * min(max(urgency, 0.0), 1.0)


def cpa_pairs(positions: np.ndarray, velocities: np.ndarray,
              thresholds: np.ndarray, horizon_s: float
              ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized all-pairs CPA: (t_cpa, d_cpa, t_breach) as (n,n) arrays.

    thresholds[i, j] is the pair's combined outer radius; t_breach is NaN
    where the threshold is never crossed within the horizon.
    """
    dp = positions[:, None, :] - positions[None, :, :]
    dv = velocities[:, None, :] - velocities[None, :, :]
    a = np.einsum("ijk,ijk->ij", dv, dv)
    b = 2.0 * np.einsum("ijk,ijk->ij", dp, dv)
    moving = a > 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        t_cpa = np.where(moving, -b / (2.0 * np.where(moving, a, 1.0)), 0.0)
    t_cpa = np.clip(t_cpa, 0.0, horizon_s)
    rel = dp + t_cpa[:, :, None] * dv
    d_cpa = np.sqrt(np.einsum("ijk,ijk->ij", rel, rel))

    c = np.einsum("ijk,ijk->ij", dp, dp) - thresholds ** 2
    disc = b ** 2 - 4.0 * a * c
    ok = moving & (disc >= 0.0)
    sq = np.sqrt(np.where(ok, disc, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = np.where(ok, (-b - sq) / (2.0 * np.where(moving, a, 1.0)), np.nan)
    t_breach = np.where(ok & (t1 >= 0.0) & (t1 <= horizon_s), t1, np.nan)
    t_breach = np.where(c <= 0.0, 0.0, t_breach)  # already inside threshold
    return t_cpa, d_cpa, t_breach


def _states_arrays(states: Sequence[AircraftState]
                   ) -> tuple[list[AircraftState], np.ndarray, np.ndarray,
                              np.ndarray]:
    ordered = sorted(states, key=lambda s: s.id)
    pos = np.array([s.position.as_tuple() for s in ordered])
    vel = np.array([s.velocity for s in ordered])
    outer = np.array([s.envelope.outer_radius for s in ordered])
    return ordered, pos, vel, outer


def predict_conflicts(states: Sequence[AircraftState], horizon_s: float,
                      config: AvoidanceConfig = AvoidanceConfig()
                      ) -> list[ConflictRecord]:
    """Pairwise CPA screen: a record per pair whose predicted miss distance
    falls inside the alert-scaled combined outer radius."""
    if horizon_s <= 0:
        raise ValueError("horizon must be positive")
    if len(states) < 2:
        return []
    ordered, pos, vel, outer = _states_arrays(states)
    thr = outer[:, None] + outer[None, :]
    t_cpa, d_cpa, t_breach = cpa_pairs(pos, vel, thr, horizon_s)
    out = []
    for i, j in itertools.combinations(range(len(ordered)), 2):
        if d_cpa[i, j] < config.alert_factor * thr[i, j]:
            sev = severity_of(d_cpa[i, j], t_cpa[i, j], thr[i, j], config)
            tb = None if math.isnan(t_breach[i, j]) else float(t_breach[i, j])
            out.append(ConflictRecord(ordered[i].id, ordered[j].id,
                                      float(t_cpa[i, j]), float(d_cpa[i, j]),
                                      tb, sev))
    return out


@dataclass(frozen=True)
class ConflictMatrix:
    ids: tuple[str, ...]
    values: np.ndarray

    def entry(self, id_a: str, id_b: str) -> float:
        i, j = self.ids.index(id_a), self.ids.index(id_b)
        return float(self.values[i, j])


def _heading_gap(a: float, b: float) -> float:
    d = abs(a - b) % (2 * math.pi)
    return min(d, 2 * math.pi - d)


def conflict_matrix(states: Sequence[AircraftState], horizon_s: float,
                    config: AvoidanceConfig = AvoidanceConfig()
                    ) -> ConflictMatrix:
    """Symmetric severity matrix weighted by heading, altitude, and speed
    similarity; zero wherever no conflict record exists."""
    if len(states) < 2:
        raise ValueError("conflict matrix needs at least two aircraft")
    ordered = sorted(states, key=lambda s: s.id)
    ids = tuple(s.id for s in ordered)
    index = {aid: i for i, aid in enumerate(ids)}
    values = np.zeros((len(ids), len(ids)))
    records = predict_conflicts(ordered, horizon_s, config)
    for rec in records:
        i, j = index[rec.id_a], index[rec.id_b]
        a, b = ordered[i], ordered[j]
        angle_term = config.angle_weight * (
            1.0 - _heading_gap(a.heading, b.heading) / math.pi)
        alt_term = config.altitude_weight * math.exp(
            -abs(a.position.z - b.position.z) / config.altitude_scale_m)
        speed_term = config.speed_weight * math.exp(
            -abs(a.speed - b.speed) / config.speed_scale_mps)
        w = rec.severity * (angle_term + alt_term + speed_term)
        values[i, j] = values[j, i] = w
    return ConflictMatrix(ids=ids, values=values)


def conflict_clusters(matrix: ConflictMatrix,
                      threshold: float = DEFAULT_CLUSTER_EDGE
                      ) -> list[list[str]]:
    """Connected components (size >= 2) of the graph with edges above the
    threshold, each sorted by id, listed by their smallest member."""
    n = len(matrix.ids)
    adj = matrix.values.tolist()
    seen: set[int] = set()
    clusters = []
    for i in range(n):
        if i in seen:
            continue
        stack, comp = [i], {i}
        while stack:
            row = adj[stack.pop()]
            for v in range(n):
                if row[v] > threshold and v not in comp:
                    comp.add(v)
                    stack.append(v)
        seen |= comp
        if len(comp) >= 2:
            clusters.append(sorted(matrix.ids[k] for k in comp))
    return sorted(clusters, key=lambda c: c[0])


# ---------------------------------------------------------------------------
# Tier 1: single-aircraft maneuver


def _dcpa_with_velocity(own: AircraftState, intruder: AircraftState,
                        velocity: np.ndarray, horizon_s: float) -> float:
    dp = own.position_array() - intruder.position_array()
    dv = velocity - intruder.velocity
    res = solve_cpa(dp, dv, 1.0, horizon_s)
    return res.d_cpa


def tier1_maneuver(aircraft: AircraftState, conflict: ConflictRecord,
                   peers: Sequence[AircraftState], *, limits: ClassLimits,
                   dt_s: float, config: AvoidanceConfig = AvoidanceConfig(),
                   own_rank: int = 0, intruder_rank: int = 0) -> Maneuver:
    """Single bounded maneuver resolving one predicted conflict.

    Rule ladder: climb/descend away from the intruder when vertical offset
    exists; slow down when this aircraft has the lower priority; otherwise
    turn right by the smallest angle that clears the combined outer radius
    plus the clearance guard. Feasibility is judged at full class rates
    sustained to the CPA; the returned maneuver is the per-tick slice of
    that correction.
    """
    if not conflict.involves(aircraft.id):
        raise ValueError(f"conflict does not involve {aircraft.id}")
    intruder_id = conflict.other(aircraft.id)
    intruder = next((p for p in peers if p.id == intruder_id), None)
    if intruder is None:
        raise ValueError(f"intruder {intruder_id} missing from peers")

    bounds = ManeuverBounds.from_limits(limits, dt_s)
    threshold = (aircraft.envelope.outer_radius
                 + intruder.envelope.outer_radius + config.clearance_guard_m)
    horizon = config.horizon_s
    # Time available to diverge; at least one tick even when already at CPA.
    t_avail = max(conflict.t_cpa, dt_s)

    dz = aircraft.position.z - intruder.position.z
    if limits.max_climb_rate > 0.0:
        if abs(dz) >= ALTITUDE_TIE_BAND_M:
            sign = 1.0 if dz > 0 else -1.0
        else:
            # Near co-altitude the estimated offset is noise; a fixed
            # id convention keeps the two climb directions opposed and
            # stable from tick to tick.
            sign = 1.0 if aircraft.id < intruder_id else -1.0
        cand = np.array(aircraft.velocity, dtype=float)
        cand[2] += sign * limits.max_climb_rate
        if _dcpa_with_velocity(aircraft, intruder, cand, horizon) > threshold:
            return AltitudeChange(sign * bounds.max_dh)

    lower_priority = (own_rank < intruder_rank
                      or (own_rank == intruder_rank
                          and aircraft.id > intruder_id))
    h_speed = math.hypot(aircraft.velocity[0], aircraft.velocity[1])
    if lower_priority and limits.max_accel > 0.0 and h_speed > 1e-9:
        brake = min(limits.max_accel * t_avail, h_speed)
        if brake > 0.0:
            scale = (h_speed - brake) / h_speed
            cand = np.array(aircraft.velocity, dtype=float)
            cand[0] *= scale
            cand[1] *= scale
            if _dcpa_with_velocity(aircraft, intruder, cand, horizon) > threshold:
                return SpeedChange(-min(bounds.max_dv, brake))

    if limits.max_turn_rate > 0.0 and h_speed > 1e-9:
        cap = min(math.pi, limits.max_turn_rate * t_avail)

        def d_after(angle: float) -> float:
            cand = np.array(aircraft.velocity, dtype=float)
            cand[0], cand[1] = _rotate_ccw(cand[0], cand[1], -angle)
            return _dcpa_with_velocity(aircraft, intruder, cand, horizon)

        if d_after(cap) > threshold:
            lo, hi = 0.0, cap
            while hi - lo > 1e-3:
                mid = (lo + hi) / 2.0
                if d_after(mid) > threshold:
                    hi = mid
                else:
                    lo = mid
            return HeadingChange(min(hi, bounds.max_dpsi))

    raise NoFeasibleManeuver(
        f"{aircraft.id}: no bounded maneuver clears {threshold:.1f} m")


# ---------------------------------------------------------------------------
# Tier 2: cluster coordination


def _miss_direction(pa: np.ndarray, va: np.ndarray, pb: np.ndarray,
                    vb: np.ndarray, t_cpa: float, first_is_a: bool
                    ) -> np.ndarray:
    """Unit push direction for aircraft a away from b at their CPA.

    Below MISS_DIRECTION_FLOOR_M the predicted offset carries no usable
    geometry (for estimated states it is dominated by tracking noise), so
    the push falls back to the perpendicular of the relative velocity,
    which is stable and antisymmetric under argument swap.
    """
    d = (pa + t_cpa * va) - (pb + t_cpa * vb)
    norm = float(np.linalg.norm(d))
    if norm > MISS_DIRECTION_FLOOR_M:
        return d / norm
    dv = va - vb
    side = np.array([dv[1], -dv[0], 0.0])  # unit(dv x z-hat) direction
    norm = float(np.linalg.norm(side))
    if norm > 1e-9:
        return side / norm
    # Fully degenerate pair: split along x, antisymmetric by ordering.
    return np.array([1.0, 0.0, 0.0]) if first_is_a else np.array([-1.0, 0.0, 0.0])


def tier2_coordinate(cluster_states: Sequence[AircraftState],
                     horizon_s: float, max_iters: int = 50, *,
                     limits_of: Mapping[str, ClassLimits], dt_s: float,
                     config: AvoidanceConfig = AvoidanceConfig()
                     ) -> dict[str, Maneuver]:
    """Synchronized severity-weighted repulsion over a conflict cluster.

    Every round each aircraft accumulates a velocity nudge away from each
    conflicting peer along the CPA miss direction, scaled by severity; the
    cumulative correction stays clamped to per-tick maneuver bounds, so the
    working states are always realizable. Converges when the worst pairwise
    severity drops below the target; raises NonConvergence (carrying the
    partial result) when the iteration budget runs out or the clamped
    corrections stop improving the worst severity.
    """
    if len(cluster_states) < 2:
        raise ValueError("tier 2 needs a cluster of at least two aircraft")
    ordered = sorted(cluster_states, key=lambda s: s.id)
    ids = [s.id for s in ordered]
    n = len(ids)
    pos = np.array([s.position.as_tuple() for s in ordered])
    base_vel = np.array([s.velocity for s in ordered], dtype=float)
    heading = np.array([s.heading for s in ordered])
    bounds = [ManeuverBounds.from_limits(limits_of[aid], dt_s) for aid in ids]
    max_dpsi = np.array([b.max_dpsi for b in bounds])
    max_dv = np.array([b.max_dv for b in bounds])
    max_dh = np.array([b.max_dh for b in bounds])
    cum = np.zeros((n, 3))
    nf = np.hypot(base_vel[:, 0], base_vel[:, 1])

    def maneuvers() -> dict[str, Maneuver]:
        out: dict[str, Maneuver] = {}
        for i, aid in enumerate(ids):
            dpsi, dv, dh = cum[i]
            parts: list[Maneuver] = []
            if dpsi != 0.0:
                parts.append(HeadingChange(float(dpsi)))
            if dv != 0.0:
                parts.append(SpeedChange(float(dv)))
            if dh != 0.0:
                parts.append(AltitudeChange(float(dh)))
            if parts:
                out[aid] = Composite(tuple(parts))
        return out

    # Positions never move between rounds; only working velocities do.
    dp = pos[:, None, :] - pos[None, :, :]
    outer = np.array([s.envelope.outer_radius for s in ordered])
    alert_thr = config.alert_factor * (outer[:, None] + outer[None, :])
    rounds = (_tier2_rounds_small if n <= TIER2_SCALAR_LIMIT
              else _tier2_rounds_array)
    iters_used, converged = rounds(
        dp, alert_thr, base_vel, heading, nf, max_dpsi, max_dv, max_dh, cum,
        horizon_s, max_iters, dt_s, config)
    if converged:
        return maneuvers()

    exc = NonConvergence(
        f"cluster {ids} above severity {config.tier2_target_severity} "
        f"after {iters_used} of {max_iters} iterations")
    exc.partial = maneuvers()  # type: ignore[attr-defined]
    raise exc


def _tier2_rounds_array(dp: np.ndarray, alert_thr: np.ndarray,
                        base_vel: np.ndarray, heading: np.ndarray,
                        nf: np.ndarray, max_dpsi: np.ndarray,
                        max_dv: np.ndarray, max_dh: np.ndarray,
                        cum: np.ndarray, horizon_s: float, max_iters: int,
                        dt_s: float, config: AvoidanceConfig
                        ) -> tuple[int, bool]:
    """Coordination rounds over the whole cluster at once.

    Writes the cumulative per-tick correction for each aircraft into cum
    and reports (rounds used, converged).
    """
    n = cum.shape[0]
    work = base_vel.copy()
    bx, by, bz = base_vel[:, 0], base_vel[:, 1], base_vel[:, 2]
    # Sign convention for fully degenerate pairs, antisymmetric in (i, j).
    split = np.where(np.subtract.outer(np.arange(n), np.arange(n)) < 0,
                     1.0, -1.0)
    prev_worst = math.inf
    stalled = 0
    iters_used = 0
    for _ in range(max_iters):
        dv = work[:, None, :] - work[None, :, :]
        # Reductions over the component axis are spelled out so both round
        # paths accumulate in the same order and agree bit for bit.
        a = (dv[:, :, 0] * dv[:, :, 0] + dv[:, :, 1] * dv[:, :, 1]
             + dv[:, :, 2] * dv[:, :, 2])
        moving = a > 0.0
        b = (dp[:, :, 0] * dv[:, :, 0] + dp[:, :, 1] * dv[:, :, 1]
             + dp[:, :, 2] * dv[:, :, 2])
        t_cpa = np.where(moving, -b / np.where(moving, a, 1.0), 0.0)
        t_cpa = np.clip(t_cpa, 0.0, horizon_s)
        rel = dp + t_cpa[:, :, None] * dv
        d_cpa = np.sqrt(rel[:, :, 0] * rel[:, :, 0]
                        + rel[:, :, 1] * rel[:, :, 1]
                        + rel[:, :, 2] * rel[:, :, 2])
        sev = (np.clip(1.0 - d_cpa / alert_thr, 0.0, 1.0)
               * np.clip(1.0 - t_cpa / horizon_s, 0.0, 1.0))
        np.fill_diagonal(sev, 0.0)
        worst = float(sev.max())
        if worst < config.tier2_target_severity:
            return iters_used, True
        # Corrections are clamped to per-tick bounds, so once the worst
        # severity stops improving no later round can improve it either.
        if worst >= prev_worst - 1e-12:
            stalled += 1
            if stalled >= 3:
                return iters_used, False
        else:
            stalled = 0
        prev_worst = worst
        iters_used += 1

        # Push directions mirror _miss_direction, all pairs at once: the
        # CPA offset when it carries geometry, else the perpendicular of
        # the relative velocity, else an id-ordered split along x.
        side = np.stack([dv[:, :, 1], -dv[:, :, 0],
                         np.zeros_like(a)], axis=-1)
        side_norm = np.sqrt(side[:, :, 0] * side[:, :, 0]
                            + side[:, :, 1] * side[:, :, 1])
        side = np.where((side_norm > 1e-9)[:, :, None],
                        side / np.where(side_norm > 1e-9,
                                        side_norm, 1.0)[:, :, None],
                        split[:, :, None] * np.array([1.0, 0.0, 0.0]))
        offset_ok = d_cpa > MISS_DIRECTION_FLOOR_M
        dirs = np.where(offset_ok[:, :, None],
                        rel / np.where(offset_ok, d_cpa, 1.0)[:, :, None],
                        side)
        targets = (work + (sev[:, :, None] * dirs).sum(axis=1)
                   * config.tier2_step_mps)

        # Decompose each target against the base velocity, clamp to the
        # per-tick bounds, and re-apply; mirrors decompose_velocity_change
        # and apply_maneuver componentwise.
        tx, ty, tz = targets[:, 0], targets[:, 1], targets[:, 2]
        nt = np.hypot(tx, ty)
        turnable = (nf > 1e-12) & (nt > 1e-12)
        dpsi = np.where(turnable,
                        -np.arctan2(bx * ty - by * tx, bx * tx + by * ty),
                        0.0)
        np.clip(dpsi, -max_dpsi, max_dpsi, out=dpsi)
        dv_c = np.clip(nt - nf, -max_dv, max_dv)
        dh_c = np.clip((tz - bz) * dt_s, -max_dh, max_dh)
        cum[:, 0] = dpsi
        cum[:, 1] = dv_c
        cum[:, 2] = dh_c
        cos_r = np.cos(-dpsi)
        sin_r = np.sin(-dpsi)
        wx = bx * cos_r - by * sin_r
        wy = bx * sin_r + by * cos_r
        h_spd = np.hypot(wx, wy)
        new_spd = np.maximum(h_spd + dv_c, 0.0)
        scale = np.where(h_spd > 1e-12, new_spd / np.where(h_spd > 1e-12,
                                                           h_spd, 1.0), 1.0)
        psi_after = heading - dpsi
        work = np.stack([
            np.where(h_spd > 1e-12, wx * scale, new_spd * np.cos(psi_after)),
            np.where(h_spd > 1e-12, wy * scale, new_spd * np.sin(psi_after)),
            bz + dh_c / dt_s], axis=1)
    return iters_used, False


def _tier2_rounds_small(dp: np.ndarray, alert_thr: np.ndarray,
                        base_vel: np.ndarray, heading: np.ndarray,
                        nf: np.ndarray, max_dpsi: np.ndarray,
                        max_dv: np.ndarray, max_dh: np.ndarray,
                        cum: np.ndarray, horizon_s: float, max_iters: int,
                        dt_s: float, config: AvoidanceConfig
                        ) -> tuple[int, bool]:
    """Scalar twin of _tier2_rounds_array for small clusters.

    Follows the array path operation for operation in the same order so
    the two produce identical bits; only the trig and hypot calls stay on
    numpy, batched per round, because those kernels are not guaranteed to
    match libm one scalar at a time.
    """
    n = cum.shape[0]
    dpl = dp.tolist()
    thr = alert_thr.tolist()
    bxl = base_vel[:, 0].tolist()
    byl = base_vel[:, 1].tolist()
    bzl = base_vel[:, 2].tolist()
    hdg = heading.tolist()
    nfl = nf.tolist()
    dpsi_lim = max_dpsi.tolist()
    dv_lim = max_dv.tolist()
    dh_lim = max_dh.tolist()
    wx = list(bxl)
    wy = list(byl)
    wz = list(bzl)
    step = config.tier2_step_mps
    target = config.tier2_target_severity

    sev = [[0.0] * n for _ in range(n)]
    relx = [[0.0] * n for _ in range(n)]
    rely = [[0.0] * n for _ in range(n)]
    relz = [[0.0] * n for _ in range(n)]
    dcp = [[0.0] * n for _ in range(n)]
    rvx = [[0.0] * n for _ in range(n)]
    rvy = [[0.0] * n for _ in range(n)]
    dirx = [[0.0] * n for _ in range(n)]
    diry = [[0.0] * n for _ in range(n)]
    dirz = [[0.0] * n for _ in range(n)]
    tx = [0.0] * n
    ty = [0.0] * n
    tz = [0.0] * n
    num = [0.0] * n
    den = [0.0] * n
    neg = [0.0] * n
    psl = [0.0] * n
    dvcl = [0.0] * n
    dhcl = [0.0] * n
    wx2 = [0.0] * n
    wy2 = [0.0] * n

    prev_worst = math.inf
    stalled = 0
    iters_used = 0
    for _ in range(max_iters):
        worst = 0.0
        for i in range(n):
            for j in range(i + 1, n):
                dvx = wx[i] - wx[j]
                dvy = wy[i] - wy[j]
                dvz = wz[i] - wz[j]
                a = dvx * dvx + dvy * dvy + dvz * dvz
                dij = dpl[i][j]
                if a > 0.0:
                    t = -(dij[0] * dvx + dij[1] * dvy + dij[2] * dvz) / a
                    t = min(max(t, 0.0), horizon_s)
                else:
                    t = 0.0
                rx = dij[0] + t * dvx
                ry = dij[1] + t * dvy
                rz = dij[2] + t * dvz
                d = math.sqrt(rx * rx + ry * ry + rz * rz)
                s = (min(max(1.0 - d / thr[i][j], 0.0), 1.0)
                     * min(max(1.0 - t / horizon_s, 0.0), 1.0))
                sev[i][j] = s
                relx[i][j] = rx
                rely[i][j] = ry
                relz[i][j] = rz
                dcp[i][j] = d
                rvx[i][j] = dvx
                rvy[i][j] = dvy
                if s > worst:
                    worst = s
        if worst < target:
            return iters_used, True
        if worst >= prev_worst - 1e-12:
            stalled += 1
            if stalled >= 3:
                return iters_used, False
        else:
            stalled = 0
        prev_worst = worst
        iters_used += 1

        for i in range(n):
            for j in range(i + 1, n):
                d = dcp[i][j]
                if d > MISS_DIRECTION_FLOOR_M:
                    dirx[i][j] = relx[i][j] / d
                    diry[i][j] = rely[i][j] / d
                    dirz[i][j] = relz[i][j] / d
                else:
                    s0 = rvy[i][j]
                    s1 = -rvx[i][j]
                    sn = math.sqrt(s0 * s0 + s1 * s1)
                    if sn > 1e-9:
                        dirx[i][j] = s0 / sn
                        diry[i][j] = s1 / sn
                        dirz[i][j] = 0.0
                    else:
                        dirx[i][j] = 1.0
                        diry[i][j] = 0.0
                        dirz[i][j] = 0.0
        for i in range(n):
            ax = 0.0
            ay = 0.0
            az = 0.0
            for j in range(n):
                if i < j:
                    s = sev[i][j]
                    ax += s * dirx[i][j]
                    ay += s * diry[i][j]
                    az += s * dirz[i][j]
                elif j < i:
                    s = sev[j][i]
                    ax += s * -dirx[j][i]
                    ay += s * -diry[j][i]
                    az += s * -dirz[j][i]
            tx[i] = wx[i] + ax * step
            ty[i] = wy[i] + ay * step
            tz[i] = wz[i] + az * step
            num[i] = bxl[i] * ty[i] - byl[i] * tx[i]
            den[i] = bxl[i] * tx[i] + byl[i] * ty[i]
        nt = np.hypot(np.array(tx), np.array(ty)).tolist()
        raw = np.arctan2(np.array(num), np.array(den)).tolist()
        for i in range(n):
            if nfl[i] > 1e-12 and nt[i] > 1e-12:
                p = -raw[i]
            else:
                p = 0.0
            lim = dpsi_lim[i]
            p = min(max(p, -lim), lim)
            lim = dv_lim[i]
            dvc = min(max(nt[i] - nfl[i], -lim), lim)
            lim = dh_lim[i]
            dhc = min(max((tz[i] - bzl[i]) * dt_s, -lim), lim)
            cum[i, 0] = p
            cum[i, 1] = dvc
            cum[i, 2] = dhc
            psl[i] = p
            dvcl[i] = dvc
            dhcl[i] = dhc
            neg[i] = -p
        cos_r = np.cos(np.array(neg)).tolist()
        sin_r = np.sin(np.array(neg)).tolist()
        for i in range(n):
            wx2[i] = bxl[i] * cos_r[i] - byl[i] * sin_r[i]
            wy2[i] = bxl[i] * sin_r[i] + byl[i] * cos_r[i]
        h_spd = np.hypot(np.array(wx2), np.array(wy2)).tolist()
        after = np.array([hdg[i] - psl[i] for i in range(n)])
        cos_pa = np.cos(after).tolist()
        sin_pa = np.sin(after).tolist()
        for i in range(n):
            hs = h_spd[i]
            ns = hs + dvcl[i]
            if ns < 0.0:
                ns = 0.0
            if hs > 1e-12:
                sc = ns / hs
                wx[i] = wx2[i] * sc
                wy[i] = wy2[i] * sc
            else:
                wx[i] = ns * cos_pa[i]
                wy[i] = ns * sin_pa[i]
            wz[i] = bzl[i] + dhcl[i] / dt_s
    return iters_used, False


# ---------------------------------------------------------------------------
# Tier 3: corridor switching


@dataclass(frozen=True)
class ConflictState:
    """Escalation context for one aircraft: worst severity it is involved in
    and whether it sits on a wait-for cycle."""

    max_severity: float
    in_deadlock: bool


def wait_for_graph(states: Sequence[AircraftState],
                   corridors: Mapping[str, Corridor],
                   spec: GridSpec) -> dict[str, str]:
    """Edges i -> j where i's next corridor cell is occupied by j."""
    cell_of = {}
    for s in states:
        cell_of[point_to_cell(s.position, spec)] = s.id
    waits: dict[str, str] = {}
    for s in sorted(states, key=lambda s: s.id):
        if s.corridor is None or s.corridor not in corridors:
            continue
        corridor = corridors[s.corridor]
        try:
            pos = corridor.cell_position(point_to_cell(s.position, spec))
        except ValueError:
            continue
        if pos + 1 >= len(corridor.cells):
            continue
        holder = cell_of.get(corridor.cells[pos + 1])
        if holder is not None and holder != s.id:
            waits[s.id] = holder
    return waits


def deadlock_cycles(waits: Mapping[str, str]) -> list[list[str]]:
    """Cycles in the wait-for graph (out-degree <= 1 makes this a walk)."""
    color: dict[str, int] = {}
    cycles = []
    for start in sorted(waits):
        if start in color:
            continue
        path: list[str] = []
        node: Optional[str] = start
        seen_here: dict[str, int] = {}
        while node is not None and node not in color and node not in seen_here:
            seen_here[node] = len(path)
            path.append(node)
            node = waits.get(node)
        if node is not None and node in seen_here:
            cycles.append(sorted(path[seen_here[node]:]))
        for n in path:
            color[n] = 1
    return cycles


def tier3_switch(current_corridor: str, goal_corridor: str,
                 graph: CorridorGraph, conflict_state: ConflictState, *,
                 avoid_corridor: Optional[str] = None,
                 config: AvoidanceConfig = AvoidanceConfig()
                 ) -> Optional[list[str]]:
    """Alternative corridor sequence, or None when not triggered or no
    alternative exists."""
    triggered = (conflict_state.max_severity > config.tier3_severity_threshold
                 or conflict_state.in_deadlock)
    if not triggered:
        return None
    exclude = {avoid_corridor} if avoid_corridor else set()
    try:
        path = route(graph, current_corridor, goal_corridor, exclude=exclude)
    except NoRoute:
        return None
    if avoid_corridor is not None and avoid_corridor in path:
        return None
    return path


# ---------------------------------------------------------------------------
# Probabilistic collision estimation


@dataclass(frozen=True)
class Trajectory:
    """Time-stamped polyline for one aircraft with its physical radius."""

    times: np.ndarray
    positions: np.ndarray
    physical_radius: float

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        p = np.asarray(self.positions, dtype=float)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "positions", p)
        if t.ndim != 1 or p.shape != (t.shape[0], 3) or t.shape[0] == 0:
            raise ValueError("trajectory needs times (T,) and positions (T,3)")
        if self.physical_radius <= 0:
            raise ValueError("physical radius must be positive")


_MC_CHUNK = 2048


def estimate_collision_probability(traj_a: Trajectory, traj_b: Trajectory,
                                   sigma_m: float, n_samples: int,
                                   seed: int) -> float:
    """Monte Carlo overlap probability under per-sample constant Gaussian
    position errors on both trajectories."""
    if sigma_m < 0:
        raise ValueError("sigma must be non-negative")
    if n_samples < 1:
        raise ValueError("need at least one sample")
    if (traj_a.times.shape != traj_b.times.shape
            or not np.allclose(traj_a.times, traj_b.times, atol=1e-9)):
        raise MisalignedTrajectories("trajectories must share time stamps")

    diff = traj_a.positions - traj_b.positions            # (T, 3)
    thr2 = (traj_a.physical_radius + traj_b.physical_radius) ** 2
    rng = np.random.default_rng(seed)
    hits = 0
    remaining = n_samples
    while remaining > 0:
        m = min(_MC_CHUNK, remaining)
        offset_a = rng.normal(0.0, sigma_m, size=(m, 3))
        offset_b = rng.normal(0.0, sigma_m, size=(m, 3))
        delta = offset_a - offset_b
        shifted = diff[None, :, :] + delta[:, None, :]    # (m, T, 3)
        d2 = np.einsum("mtk,mtk->mt", shifted, shifted)
        hits += int((d2.min(axis=1) <= thr2).sum())
        remaining -= m
    return hits / n_samples


# ---------------------------------------------------------------------------
# Tier 4: global planning


@dataclass(frozen=True)
class Mission:
    aircraft_id: str
    start_corridor: str
    goal_corridor: str
    departure_s: float
    emergency: bool = False


@dataclass(frozen=True)
class Tier4Weights:
    time: float = 1.0
    collision: float = 100.0
    rel_velocity: float = 1.0
    separation: float = 10.0
    control: float = 2.0


@dataclass(frozen=True)
class TimedWaypoint:
    time_s: float
    position: Point3


@dataclass(frozen=True)
class PlanEntry:
    aircraft_id: str
    corridor_sequence: tuple[str, ...]
    waypoints: tuple[TimedWaypoint, ...]
    departure_delay_s: float
    cost: float

    def __post_init__(self):
        ts = [w.time_s for w in self.waypoints]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("waypoint times must increase strictly")


@dataclass(frozen=True)
class GlobalPlan:
    entries: dict[str, PlanEntry]
    cost_components: dict[str, float]


def _corridor_schedule(path: Sequence[str], graph: CorridorGraph,
                       depart_s: float, transfer_penalty_s: float,
                       spec_cell_size: float
                       ) -> tuple[list[tuple[CellIndex, float, float]], float]:
    """Cell occupancy intervals [(cell, enter, exit)] along a corridor
    sequence, plus the arrival time."""
    t = depart_s
    occ = []
    for n, cid in enumerate(path):
        corridor = graph.corridors[cid]
        per_cell = spec_cell_size / corridor.speed
        if n > 0:
            t += transfer_penalty_s
        for cell in corridor.cells:
            occ.append((cell, t, t + per_cell))
            t += per_cell
    return occ, t


def _sample_trajectory(occ: Sequence[tuple[CellIndex, float, float]],
                       spec: GridSpec, radius: float, sample_dt: float,
                       t0: float, t1: float) -> Optional[Trajectory]:
    """Step-function positions over [t0, t1] at sample_dt, or None when the
    schedule does not intersect the window."""
    if not occ or occ[-1][2] <= t0 or occ[0][1] >= t1:
        return None
    times = np.arange(t0, t1 + sample_dt / 2, sample_dt)
    centers = np.array([cell_center(c, spec).as_tuple() for c, _, _ in occ])
    enters = np.array([e for _, e, _ in occ])
    idx = np.clip(np.searchsorted(enters, times, side="right") - 1, 0,
                  len(occ) - 1)
    return Trajectory(times=times, positions=centers[idx],
                      physical_radius=radius)


def tier4_plan(missions: Sequence[Mission], graph: CorridorGraph,
               weights: Tier4Weights = Tier4Weights(), *,
               spec: GridSpec, physical_radius: float = 2.0,
               sigma_m: float = 5.0, n_samples: int = 200, seed: int = 0,
               transfer_penalty_s: float = 5.0, delay_step_s: float = 5.0,
               max_delay_steps: int = 24, sample_dt: float = 1.0
               ) -> GlobalPlan:
    """Sequential greedy planning in priority order.

    Emergencies plan first, then earlier departures. Each mission routes
    with penalty-augmented corridor costs against everything already
    committed, then takes the smallest departure delay that leaves every
    cell-time interval single-booked.
    """
    order = sorted(missions,
                   key=lambda m: (not m.emergency, m.departure_s,
                                  m.aircraft_id))
    occupancy: dict[CellIndex, list[tuple[float, float, str]]] = {}
    committed: list[tuple[Mission, list[tuple[CellIndex, float, float]]]] = []
    entries: dict[str, PlanEntry] = {}
    totals = {"time": 0.0, "collision": 0.0, "rel_velocity": 0.0,
              "separation": 0.0, "control": 0.0}

    cell_pts = {cid: np.array([cell_center(c, spec).as_tuple()
                               for c in corridor.cells])
                for cid, corridor in graph.corridors.items()}

    def corridors_of_committed() -> set[str]:
        used = set()
        for m, _ in committed:
            used.update(entries[m.aircraft_id].corridor_sequence)
        return used

    for n_mission, mission in enumerate(order):
        used_corridors = corridors_of_committed()
        penalty_cache: dict[str, float] = {}

        def penalty(cid: str) -> float:
            if cid in penalty_cache:
                return penalty_cache[cid]
            corridor = graph.corridors[cid]
            p_collision = 0.0
            relvel_terms: list[float] = []
            inv_sep = 0.0
            if committed:
                sched, _ = _corridor_schedule([cid], graph,
                                              mission.departure_s,
                                              transfer_penalty_s,
                                              graph.cell_size)
                t0 = sched[0][1]
                t1 = sched[-1][2]
                cand = _sample_trajectory(sched, spec, physical_radius,
                                          sample_dt, t0, t1)
                for k, (other, other_occ) in enumerate(committed):
                    other_traj = _sample_trajectory(
                        other_occ, spec, physical_radius, sample_dt, t0, t1)
                    if cand is not None and other_traj is not None:
                        p = estimate_collision_probability(
                            cand, other_traj, sigma_m, n_samples,
                            seed=seed + 7919 * n_mission + k)
                        p_collision = max(p_collision, p)
                own_cells = set(graph.corridors[cid].cells)
                for ocid in sorted(used_corridors):
                    if ocid == cid:
                        relvel_terms.append(0.0)
                        continue
                    other = graph.corridors[ocid]
                    for cell in sorted(own_cells & set(other.cells),
                                       key=lambda c: c.as_tuple()):
                        t_own = corridor_tangent(corridor, cell, spec)
                        t_oth = corridor_tangent(other, cell, spec)
                        if t_own is None or t_oth is None:
                            continue
                        relvel_terms.append(float(np.linalg.norm(
                            corridor.speed * t_own - other.speed * t_oth)))
                    a, b = cell_pts[cid], cell_pts[ocid]
                    d = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2)
                                .sum(axis=2)).min()
                    inv_sep = max(inv_sep, 1.0 / max(d, graph.cell_size))
            relvel = float(np.mean(relvel_terms)) if relvel_terms else 0.0
            extra = ((weights.time - 1.0)
                     * corridor.traversal_time_s(graph.cell_size)
                     + weights.collision * p_collision
                     + weights.rel_velocity * relvel
                     + weights.separation * inv_sep)
            penalty_cache[cid] = extra
            return extra

        def edge_cost(cid: str) -> float:
            # Control cost and the time-weight correction on the transfer
            # itself attach to every non-start corridor entered.
            return (penalty(cid) + weights.control
                    + (weights.time - 1.0) * transfer_penalty_s)

        try:
            path = route(graph, mission.start_corridor, mission.goal_corridor,
                         transfer_penalty_s=transfer_penalty_s,
                         extra_cost=lambda cid: (penalty(cid)
                                                 if cid == mission.start_corridor
                                                 else edge_cost(cid)))
        except NoRoute as err:
            raise Unplannable(f"{mission.aircraft_id}: {err}") from err

        chosen = None
        for k in range(max_delay_steps + 1):
            depart = mission.departure_s + k * delay_step_s
            occ, arrival = _corridor_schedule(path, graph, depart,
                                              transfer_penalty_s,
                                              graph.cell_size)
            clash = False
            for cell, enter, leave in occ:
                for (e2, l2, _) in occupancy.get(cell, []):
                    if enter < l2 and e2 < leave:
                        clash = True
                        break
                if clash:
                    break
            if not clash:
                chosen = (k * delay_step_s, occ, arrival)
                break
        if chosen is None:
            raise Unplannable(
                f"{mission.aircraft_id}: no conflict-free departure within "
                f"{max_delay_steps} delay steps")

        delay, occ, arrival = chosen
        for cell, enter, leave in occ:
            occupancy.setdefault(cell, []).append((enter, leave,
                                                   mission.aircraft_id))
        waypoints = tuple(TimedWaypoint(enter, cell_center(cell, spec))
                          for cell, enter, _ in occ)
        travel = arrival - (mission.departure_s + delay)
        cost = weights.time * (travel + delay) + weights.control * (len(path) - 1)
        entries[mission.aircraft_id] = PlanEntry(
            aircraft_id=mission.aircraft_id,
            corridor_sequence=tuple(path),
            waypoints=waypoints,
            departure_delay_s=delay,
            cost=cost)
        committed.append((mission, occ))
        totals["time"] += travel + delay
        totals["control"] += len(path) - 1

    # Aggregate cross-pair penalty components for the report.
    for (m1, occ1), (m2, occ2) in itertools.combinations(committed, 2):
        t0 = max(occ1[0][1], occ2[0][1])
        t1 = min(occ1[-1][2], occ2[-1][2])
        if t1 <= t0:
            continue
        tr1 = _sample_trajectory(occ1, spec, physical_radius, sample_dt, t0, t1)
        tr2 = _sample_trajectory(occ2, spec, physical_radius, sample_dt, t0, t1)
        if tr1 is None or tr2 is None:
            continue
        totals["collision"] += estimate_collision_probability(
            tr1, tr2, sigma_m, n_samples, seed=seed + 104729)
        seps = np.linalg.norm(tr1.positions - tr2.positions, axis=1)
        totals["separation"] += 1.0 / max(float(seps.min()), graph.cell_size)
        rel = np.diff(tr1.positions - tr2.positions, axis=0) / sample_dt
        if len(rel):
            totals["rel_velocity"] += float(np.linalg.norm(rel, axis=1).mean())

    return GlobalPlan(entries=entries, cost_components=totals)
