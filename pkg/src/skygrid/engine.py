"""Closed-loop tick simulation over a validated scenario.

Each tick runs a fixed pipeline: noisy link measurements feed the fleet
tracker, anomaly screens run on the estimates, conflicts are predicted on
the *estimated* states, the escalation ladder issues maneuvers, maneuvers
and guidance are integrated with explicit Euler on the *true* states, rule
checks run on the moved true states, and the tick is appended to the event
log. All iteration is in sorted-id order and the only randomness comes from
one Generator seeded by (scenario seed, trial index), so runs are exactly
reproducible.

Escalation per conflict cluster: pairs get the tier-1 rule ladder (both
members), any infeasibility or a cluster of three or more goes to tier-2
synchronized repulsion, and corridor-bound aircraft whose severity stays
above the tier-3 threshold (or that sit on a wait-for cycle) attempt a
corridor switch. A free-flight aircraft whose cluster exhausted tiers 1-2
receives no corrective command that tick; a corridor aircraft with no
alternative route falls back to braking inside its corridor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .avoidance import (ConflictMatrix, ConflictRecord, ConflictState,
                        Maneuver, ManeuverBounds, SpeedChange, apply_maneuver,
                        clamp_maneuver, conflict_clusters, cpa_pairs,
                        maneuver_magnitudes, tier1_maneuver, tier2_coordinate,
                        tier3_switch, wait_for_graph, deadlock_cycles)
from .corridors import (Corridor, CorridorGraph, build_graph, corridor_rank,
                        find_intersections)
from .envelopes import AircraftState
from .errors import NoFeasibleManeuver, NonConvergence
from .eventlog import EventLogWriter, iter_ticks
from .grid import Point3, cell_center
from .links import LinkMode, LinkModeName, effective_range_km, select_mode
from .rules import check_all
from .scenario import Scenario
from .tracking import BatchTracker, detect_anomalies

# Mode selection is refreshed on this cadence (in ticks); in between, each
# aircraft keeps its assigned mode unless it drops out of range.
MODE_REFRESH_TICKS = 10

# After a cluster exhausts tier 2, retry it only this often. Required
# clearance grows with urgency while per-tick authority is fixed, so a
# cluster that was infeasible stays infeasible over short horizons.
TIER2_RETRY_TICKS = 5

# Measurement noise is drawn this many ticks at a time. Chunk slices are
# bitwise identical to per-tick draws from the same generator state.
NOISE_CHUNK_TICKS = 64

# Severity below which a held aircraft may steer back to its goal. Set
# under the cluster-entry threshold so resolved traffic coasts through the
# encounter instead of re-engaging it every tick.
HOLD_RELEASE_SEVERITY = 0.1

# Rosters at or below this size take the scalar pair loop in the conflict
# scan; above it the array path wins.
SCALAR_SCAN_LIMIT = 12

# Raw severity that clusters a pair even when the similarity weighting
# would keep the matrix entry under the edge threshold.
HIGH_SEVERITY_EDGE = 0.4

# For escalation decisions a pair is screened as if its combined outer
# radius were at least this. Detection has to buy reaction time from the
# airframe's actual turn and climb authority, which does not shrink with
# the configured margin; maneuver sizing still uses the true envelopes.
DETECTION_FLOOR_M = 30.0

ARRIVAL_TOLERANCE_M = 5.0
CAPTURE_FRACTION = 0.6


@dataclass
class TrialResult:
    """Outcome summary of one run; success means no physical overlap ever."""

    success: bool
    first_overlap_tick: Optional[int]
    first_overlap_pair: Optional[tuple[str, str]]
    min_separation_m: float
    min_separation_ratio: float
    ticks: int
    elapsed_s: float
    completed: dict[str, Optional[float]]
    tier_counts: dict[str, int]
    violation_count: int
    anomaly_count: int
    scenario_hash: str
    seed: int
    trial_index: int


def _clamp(value: float, bound: float) -> float:
    return max(-bound, min(bound, value))


def _maneuver_record(aircraft_id: str, tier: int, m: Maneuver) -> dict:
    mag = maneuver_magnitudes(m)
    return {"id": aircraft_id, "tier": tier,
            "dpsi": float(mag[0]), "dv": float(mag[1]), "dh": float(mag[2])}


class World:
    """Mutable simulation state plus the per-tick pipeline."""

    def __init__(self, scenario: Scenario, *, trial_index: int = 0,
                 lean: bool = False, writer: Optional[EventLogWriter] = None,
                 stop_on_overlap: bool = False):
        self.scenario = scenario
        self.trial_index = trial_index
        self.lean = lean
        self.writer = writer
        self.stop_on_overlap = stop_on_overlap
        self.dt = scenario.dt_s
        self.spec = scenario.grid
        self.cfg = scenario.avoidance
        self.avoid_on = scenario.avoidance_enabled

        roster = sorted(scenario.aircraft, key=lambda a: a.id)
        self.n = len(roster)
        self.ids = [a.id for a in roster]
        self.index = {aid: i for i, aid in enumerate(self.ids)}
        self.specs = roster
        self.limits = [scenario.class_limits[a.aircraft_class] for a in roster]
        self.bounds = [ManeuverBounds.from_limits(l, self.dt)
                       for l in self.limits]
        self.envelopes = [a.envelope for a in roster]
        self.phys_r = np.array([a.envelope.physical_radius for a in roster])
        self.outer_r = np.array([a.envelope.outer_radius for a in roster])
        self.max_speed = np.array([l.max_speed for l in self.limits])
        self.max_climb = [l.max_climb_rate for l in self.limits]

        self.corridors: dict[str, Corridor] = {c.id: c
                                               for c in scenario.corridors}
        self.intersections = find_intersections(scenario.corridors, self.spec)
        self.graph: Optional[CorridorGraph] = (
            build_graph(scenario.corridors, self.spec)
            if scenario.corridors else None)

        self.waypoints = [[(w.time_s, w.position.as_tuple())
                           for w in a.waypoints] for a in roster]
        self.plan: list[list[str]] = [[a.corridor] if a.corridor else []
                                      for a in roster]
        self.plan_idx = [0] * self.n
        self.cell_ptr = [0] * self.n
        self.current_corridor: list[Optional[str]] = [a.corridor
                                                      for a in roster]

        self.pos = np.array([w[0][1] for w in self.waypoints], dtype=float)
        self.vel = np.zeros((self.n, 3))
        self.heading = np.zeros(self.n)
        self.active = np.ones(self.n, dtype=bool)
        self._act_idx = np.flatnonzero(self.active)
        self._cor_centers = {c.id: [cell_center(cell, self.spec).as_tuple()
                                    for cell in c.cells]
                             for c in scenario.corridors}
        self.completed: dict[str, Optional[float]] = {aid: None
                                                      for aid in self.ids}
        self.time = 0.0
        self.tick = 0

        ss = np.random.SeedSequence([scenario.seed, trial_index])
        self.rng = np.random.default_rng(ss)

        self.modes: list[LinkMode] = [None] * self.n  # type: ignore[list-item]
        self._range_km = {name: effective_range_km(m)
                          for name, m in scenario.link_modes.items()}
        self._station_xyz = {
            name: np.array([s.position.as_tuple() for s in scenario.stations
                            if name in s.modes]).reshape(-1, 3)
            for name in scenario.link_modes}
        self._refresh_modes()

        for i in range(self.n):
            vx, vy, vz = self._guidance_velocity(i)
            self.vel[i] = (vx, vy, _clamp(vz, self.max_climb[i]))
            if math.hypot(vx, vy) > 1e-9:
                self.heading[i] = math.atan2(vy, vx)
        self.est_heading = self.heading.copy()

        self.tracker = BatchTracker(
            self.ids, self.pos, self.vel,
            pos_var=scenario.tracker_init.pos_var,
            vel_var=scenario.tracker_init.vel_var, params=scenario.kalman)

        self.tier2_block: dict[frozenset, int] = {}
        self.tier_counts = {"tier1": 0, "tier2": 0, "tier3": 0, "tier4": 0}
        self.min_sep = math.inf
        self.min_sep_ratio = math.inf
        self.first_overlap_tick: Optional[int] = None
        self.first_overlap_pair: Optional[tuple[str, str]] = None
        self.violation_count = 0
        self.anomaly_count = 0
        self.prev_est_speed = np.linalg.norm(self.vel, axis=1)
        self._in_range = np.zeros(self.n, dtype=bool)
        self._iu_cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    # -- stage 1: measurement and tracking --------------------------------

    def _refresh_modes(self) -> None:
        for i in self._act_idx:
            self.modes[i] = self.scenario.link_modes[select_mode(
                Point3(*self.pos[i]), self.scenario.stations,
                self.scenario.link_modes)]
        self._sigmas = np.array([
            m.measurement_sigma_m if m is not None else 1.0
            for m in self.modes])
        self._rebuild_groups()

    def _rebuild_groups(self) -> None:
        """Mode membership is constant between refreshes; only the roster
        shrinks, so completion also rebuilds."""
        groups: dict[LinkModeName, list[int]] = {}
        for i in self._act_idx:
            groups.setdefault(self.modes[i].name, []).append(int(i))
        self._mode_groups = {name: np.array(members)
                             for name, members in groups.items()}

    def _measure_and_track(self) -> None:
        if self.tick % MODE_REFRESH_TICKS == 0:
            self._refresh_modes()
        sigmas = self._sigmas
        in_range = np.zeros(self.n, dtype=bool)
        for name, members in self._mode_groups.items():
            if name is LinkModeName.SAT:
                mode = self.scenario.link_modes[name]
                d_km = max(mode.reference_altitude_m, 1.0) / 1000.0
                in_range[members] = d_km <= self._range_km[name]
                continue
            xyz = self._station_xyz[name]
            if xyz.shape[0] == 0:
                continue
            diff = self.pos[members][:, None, :] - xyz[None, :, :]
            d2 = np.einsum("gsk,gsk->gs", diff, diff)
            d_km = np.maximum(np.sqrt(d2.min(axis=1)), 1.0) / 1000.0
            in_range[members] = d_km <= self._range_km[name]
        # Noise is drawn in fixed-shape chunks; the stream is identical to
        # one (n, 3) draw per tick, just with less generator overhead.
        k = self.tick % NOISE_CHUNK_TICKS
        if k == 0:
            self._noise_buf = self.rng.standard_normal(
                (NOISE_CHUNK_TICKS, self.n, 3))
        noise = self._noise_buf[k] * sigmas[:, None]
        meas = self.pos + noise
        meas[~(in_range & self.active)] = np.nan
        self.tracker.step(meas, sigmas, self.dt)
        self._in_range = in_range
        hv = np.hypot(self.tracker.vel[:, 0], self.tracker.vel[:, 1])
        upd = hv > 1e-9
        self.est_heading[upd] = np.arctan2(self.tracker.vel[upd, 1],
                                           self.tracker.vel[upd, 0])

    # -- stage 2: anomaly screens ------------------------------------------

    def _detect_anomalies(self) -> list[dict]:
        out = []
        for i in self._act_idx:
            signal = {self.modes[i].name: bool(self._in_range[i])}
            track = self.tracker.track(i, signal)
            plan = ([] if self.current_corridor[i] is not None
                    else [self.specs[i].waypoints[k].position
                          for k in range(len(self.specs[i].waypoints))])
            for a in detect_anomalies(track, plan, self.scenario.zones,
                                      self.scenario.anomalies, tick=self.tick,
                                      prev_speed=(float(self.prev_est_speed[i])
                                                  if self.tick else None),
                                      dt_s=self.dt):
                out.append({"kind": a.kind.value, "id": a.aircraft_id,
                            "magnitude": float(a.magnitude),
                            "threshold": float(a.threshold)})
        self.anomaly_count += len(out)
        return out

    # -- stage 3: conflict prediction on estimates -------------------------

    def _conflict_scan(self, act: np.ndarray
                       ) -> tuple[np.ndarray, np.ndarray, np.ndarray,
                                  np.ndarray, np.ndarray]:
        """(sev, sev_esc, matrix_esc, t_cpa, d_cpa) over the active subset.

        sev is the reported severity on true envelopes; the _esc arrays
        repeat the computation with the combined radius floored at
        DETECTION_FLOOR_M and feed escalation only. Mirrors the per-object
        severity/matrix definitions on raw arrays so the hot loop avoids
        object churn; equivalence is pinned by tests. Small rosters take a
        scalar pair loop, which beats array dispatch overhead up to a few
        dozen pairs.
        """
        if act.size <= SCALAR_SCAN_LIMIT:
            return self._conflict_scan_small(act)
        p = self.tracker.pos[act]
        v = self.tracker.vel[act]
        outer = self.outer_r[act]
        thr = outer[:, None] + outer[None, :]
        dp = p[:, None, :] - p[None, :, :]
        dv = v[:, None, :] - v[None, :, :]
        a = np.einsum("ijk,ijk->ij", dv, dv)
        b = np.einsum("ijk,ijk->ij", dp, dv)
        t_cpa = np.where(a > 0.0, -b / np.where(a > 0.0, a, 1.0), 0.0)
        np.clip(t_cpa, 0.0, self.cfg.horizon_s, out=t_cpa)
        rel = dp + t_cpa[:, :, None] * dv
        d_cpa = np.sqrt(np.einsum("ijk,ijk->ij", rel, rel))
        urg = np.clip(1.0 - t_cpa / self.cfg.horizon_s, 0.0, 1.0)
        prox = np.clip(1.0 - d_cpa / (self.cfg.alert_factor * thr), 0.0, 1.0)
        sev = prox * urg
        np.fill_diagonal(sev, 0.0)
        thr_esc = np.maximum(thr, DETECTION_FLOOR_M)
        prox_esc = np.clip(
            1.0 - d_cpa / (self.cfg.alert_factor * thr_esc), 0.0, 1.0)
        sev_esc = prox_esc * urg
        np.fill_diagonal(sev_esc, 0.0)

        hdg = self.est_heading[act]
        gap = np.abs(hdg[:, None] - hdg[None, :]) % (2 * math.pi)
        gap = np.minimum(gap, 2 * math.pi - gap, out=gap)
        dz = np.abs(dp[:, :, 2])
        spd = np.sqrt(np.einsum("ij,ij->i", v, v))
        dspd = np.abs(spd[:, None] - spd[None, :])
        sim = (self.cfg.angle_weight * (1.0 - gap / math.pi)
               + self.cfg.altitude_weight
               * np.exp(-dz / self.cfg.altitude_scale_m)
               + self.cfg.speed_weight
               * np.exp(-dspd / self.cfg.speed_scale_mps))
        matrix_esc = sev_esc * sim
        np.fill_diagonal(matrix_esc, 0.0)
        return sev, sev_esc, matrix_esc, t_cpa, d_cpa

    def _conflict_scan_small(self, act: np.ndarray
                             ) -> tuple[np.ndarray, np.ndarray, np.ndarray,
                                        np.ndarray, np.ndarray]:
        m = act.size
        pos = self.tracker.pos[act].tolist()
        vel = self.tracker.vel[act].tolist()
        outer = self.outer_r[act].tolist()
        hdg = self.est_heading[act].tolist()
        spd = [math.sqrt(vx * vx + vy * vy + vz * vz)
               for vx, vy, vz in vel]
        cfg = self.cfg
        horizon = cfg.horizon_s
        two_pi = 2 * math.pi
        sev = np.zeros((m, m))
        sev_esc = np.zeros((m, m))
        matrix_esc = np.zeros((m, m))
        t_cpa = np.zeros((m, m))
        d_cpa = np.zeros((m, m))
        for i in range(m):
            px, py, pz = pos[i]
            vx, vy, vz = vel[i]
            for j in range(i + 1, m):
                qx, qy, qz = pos[j]
                wx, wy, wz = vel[j]
                dpx = px - qx
                dpy = py - qy
                dpz = pz - qz
                dvx = vx - wx
                dvy = vy - wy
                dvz = vz - wz
                a = dvx * dvx + dvy * dvy + dvz * dvz
                t = 0.0
                if a > 0.0:
                    t = -(dpx * dvx + dpy * dvy + dpz * dvz) / a
                    t = min(max(t, 0.0), horizon)
                rx = dpx + t * dvx
                ry = dpy + t * dvy
                rz = dpz + t * dvz
                d = math.sqrt(rx * rx + ry * ry + rz * rz)
                t_cpa[i, j] = t_cpa[j, i] = t
                d_cpa[i, j] = d_cpa[j, i] = d
                thr = outer[i] + outer[j]
                thr_esc = thr if thr > DETECTION_FLOOR_M else DETECTION_FLOOR_M
                prox_esc = 1.0 - d / (cfg.alert_factor * thr_esc)
                if prox_esc <= 0.0:
                    continue
                urg = min(max(1.0 - t / horizon, 0.0), 1.0)
                if urg == 0.0:
                    continue
                s_esc = min(prox_esc, 1.0) * urg
                sev_esc[i, j] = sev_esc[j, i] = s_esc
                prox = 1.0 - d / (cfg.alert_factor * thr)
                if prox > 0.0:
                    sev[i, j] = sev[j, i] = min(prox, 1.0) * urg
                gap = abs(hdg[i] - hdg[j]) % two_pi
                gap = min(gap, two_pi - gap)
                sim = (cfg.angle_weight * (1.0 - gap / math.pi)
                       + cfg.altitude_weight
                       * math.exp(-abs(dpz) / cfg.altitude_scale_m)
                       + cfg.speed_weight
                       * math.exp(-abs(spd[i] - spd[j]) / cfg.speed_scale_mps))
                matrix_esc[i, j] = matrix_esc[j, i] = s_esc * sim
        return sev, sev_esc, matrix_esc, t_cpa, d_cpa

    def _est_state(self, i: int) -> AircraftState:
        return AircraftState(
            id=self.ids[i], aircraft_class=self.specs[i].aircraft_class,
            position=Point3(*self.tracker.pos[i]),
            velocity=self.tracker.vel[i].copy(),
            envelope=self.envelopes[i], heading=float(self.est_heading[i]),
            corridor=self.current_corridor[i])

    # -- stage 4: escalation ladder ----------------------------------------

    def _escalate(self, act: np.ndarray, sev: np.ndarray,
                  sev_esc: np.ndarray, matrix_esc: np.ndarray,
                  t_cpa: np.ndarray, d_cpa: np.ndarray
                  ) -> tuple[dict[str, tuple[int, Maneuver]], set[str],
                             list[dict]]:
        """Run tiers 1-3; returns (maneuvers, exhausted ids, conflicts).

        Cluster edges form on the detection-floored arrays; recorded
        conflicts and tier-3 triggers read the true-envelope severity.
        Exhausted aircraft are cluster members whose ladder ran dry this
        tick; they hold course rather than steering back toward their goal
        (and therefore back into the conflict).
        """
        act_ids = [self.ids[i] for i in act]
        local = {aid: k for k, aid in enumerate(act_ids)}
        maneuvers: dict[str, tuple[int, Maneuver]] = {}
        conflict_dicts: list[dict] = []

        # Similarity discounts coordination value, but it must not veto
        # escalation outright: a pair at high raw severity is clustered no
        # matter how dissimilar its members look.
        effective = np.maximum(
            matrix_esc, np.where(sev_esc >= HIGH_SEVERITY_EDGE, sev_esc, 0.0))
        if float(effective.max()) <= self.cfg.cluster_edge_threshold:
            return maneuvers, set(), conflict_dicts
        cm = ConflictMatrix(ids=tuple(act_ids), values=effective)
        clusters = conflict_clusters(cm, self.cfg.cluster_edge_threshold)
        if not clusters:
            return maneuvers, set(), conflict_dicts

        def record_for(a: str, b: str) -> ConflictRecord:
            i, j = local[a], local[b]
            return ConflictRecord(
                id_a=min(a, b), id_b=max(a, b), t_cpa=float(t_cpa[i, j]),
                d_cpa=float(d_cpa[i, j]), t_breach=None,
                severity=float(sev[i, j]))

        max_sev: dict[str, float] = {}
        for cluster in clusters:
            for a in cluster:
                peers = [local[b] for b in cluster if b != a]
                max_sev[a] = max(float(sev[local[a]][peers].max()), 0.0)

        dead_end: set[str] = set()
        for cluster in clusters:
            if not self.lean:
                for a, b in ((cluster[x], cluster[y])
                             for x in range(len(cluster))
                             for y in range(x + 1, len(cluster))):
                    conflict_dicts.append({
                        "a": min(a, b), "b": max(a, b),
                        "t_cpa": float(t_cpa[local[a], local[b]]),
                        "d_cpa": float(d_cpa[local[a], local[b]]),
                        "severity": float(sev[local[a], local[b]])})
            resolved = False
            if len(cluster) == 2:
                a, b = cluster
                rec = record_for(a, b)
                sa, sb = self._est_state(self.index[a]), \
                    self._est_state(self.index[b])
                ra = self._rank_of(a)
                rb = self._rank_of(b)
                try:
                    ma = tier1_maneuver(sa, rec, [sb],
                                        limits=self.limits[self.index[a]],
                                        dt_s=self.dt, config=self.cfg,
                                        own_rank=ra, intruder_rank=rb)
                    mb = tier1_maneuver(sb, rec, [sa],
                                        limits=self.limits[self.index[b]],
                                        dt_s=self.dt, config=self.cfg,
                                        own_rank=rb, intruder_rank=ra)
                    maneuvers[a] = (1, ma)
                    maneuvers[b] = (1, mb)
                    self.tier_counts["tier1"] += 2
                    resolved = True
                except NoFeasibleManeuver:
                    resolved = False
            if not resolved:
                key = frozenset(cluster)
                blocked_at = self.tier2_block.get(key)
                if (blocked_at is not None
                        and self.tick - blocked_at < TIER2_RETRY_TICKS):
                    dead_end.update(cluster)
                else:
                    states = [self._est_state(self.index[a]) for a in cluster]
                    limits_of = {a: self.limits[self.index[a]]
                                 for a in cluster}
                    try:
                        result = tier2_coordinate(
                            states, self.cfg.horizon_s,
                            self.cfg.tier2_max_iters, limits_of=limits_of,
                            dt_s=self.dt, config=self.cfg)
                        for aid, m in sorted(result.items()):
                            maneuvers[aid] = (2, m)
                        self.tier_counts["tier2"] += 1
                        self.tier2_block.pop(key, None)
                    except NonConvergence:
                        self.tier2_block[key] = self.tick
                        dead_end.update(cluster)

        # Tier 3 for corridor-bound aircraft: high severity, exhausted
        # clusters, or wait-for deadlock.
        if self.corridors and self.graph is not None:
            in_cycle = self._deadlocked(act)
            for aid in sorted(set(max_sev) | set(in_cycle)):
                i = self.index[aid]
                cur = self.current_corridor[i]
                if cur is None:
                    continue
                severity = max_sev.get(aid, 0.0)
                deadlocked = aid in in_cycle
                exhausted = aid in dead_end
                if not (deadlocked or exhausted
                        or severity > self.cfg.tier3_severity_threshold):
                    continue
                state = ConflictState(max_severity=max(severity, 1.0)
                                      if (deadlocked or exhausted)
                                      else severity,
                                      in_deadlock=deadlocked)
                goal = self.plan[i][-1] if self.plan[i] else cur
                avoid = self._conflict_corridor(aid, act, sev, local)
                path = tier3_switch(cur, goal, self.graph, state,
                                    avoid_corridor=avoid, config=self.cfg)
                if path is not None and path != self.plan[i][self.plan_idx[i]:]:
                    self.plan[i] = path
                    self.plan_idx[i] = 0
                    self.tier_counts["tier3"] += 1
                    maneuvers.pop(aid, None)
                elif exhausted or deadlocked:
                    brake = -min(float(np.linalg.norm(self.vel[i])),
                                 self.bounds[i].max_dv)
                    maneuvers[aid] = (3, SpeedChange(brake))
        return maneuvers, dead_end, conflict_dicts

    def _rank_of(self, aid: str) -> int:
        cid = self.current_corridor[self.index[aid]]
        if cid is not None and cid in self.corridors:
            return corridor_rank(self.corridors[cid].kind)
        return 0

    def _conflict_corridor(self, aid: str, act: np.ndarray,
                           sev: np.ndarray, local: dict) -> Optional[str]:
        """Corridor of the most severe conflicting peer, if it differs from
        the aircraft's own; used as the reroute exclusion."""
        if aid not in local:
            return None
        row = sev[local[aid]]
        if row.max() <= 0.0:
            return None
        peer = self.ids[act[int(row.argmax())]]
        own = self.current_corridor[self.index[aid]]
        peer_cor = self.current_corridor[self.index[peer]]
        if peer_cor is not None and peer_cor != own:
            return peer_cor
        i = self.index[aid]
        rest = self.plan[i][self.plan_idx[i] + 1:]
        return rest[0] if rest else None

    def _deadlocked(self, act: np.ndarray) -> set[str]:
        corridor_states = [self._est_state(i) for i in act
                           if self.current_corridor[i] is not None]
        if len(corridor_states) < 2:
            return set()
        waits = wait_for_graph(corridor_states, self.corridors, self.spec)
        out: set[str] = set()
        for cycle in deadlock_cycles(waits):
            out.update(cycle[1:])  # smallest id keeps its route
        return out

    # -- stage 5: guidance, maneuvers, integration --------------------------

    def _guidance_velocity(self, i: int) -> tuple[float, float, float]:
        if self.plan[i] and self.plan_idx[i] < len(self.plan[i]):
            return self._corridor_velocity(i)
        p = self.pos[i]
        px, py, pz = float(p[0]), float(p[1]), float(p[2])
        wps = self.waypoints[i]
        last = len(wps) - 1
        target = wps[last]
        for k, (t_wp, p_wp) in enumerate(wps):
            if t_wp <= self.time + 1e-9:
                continue
            # A waypoint that can no longer be reached on schedule is
            # treated as missed; chasing it at full speed only distorts
            # the path toward the next one.
            dx = p_wp[0] - px
            dy = p_wp[1] - py
            dz = p_wp[2] - pz
            if (k < last and math.sqrt(dx * dx + dy * dy + dz * dz)
                    > self.max_speed[i] * (t_wp - self.time)):
                continue
            target = (t_wp, p_wp)
            break
        t_rem = max(target[0] - self.time, self.dt)
        q = target[1]
        vx = (q[0] - px) / t_rem
        vy = (q[1] - py) / t_rem
        vz = (q[2] - pz) / t_rem
        speed = math.sqrt(vx * vx + vy * vy + vz * vz)
        limit = float(self.max_speed[i])
        if speed > limit:
            f = limit / speed
            vx *= f
            vy *= f
            vz *= f
        return (vx, vy, vz)

    def _track_command(self, i: int,
                       command: tuple[float, float, float]
                       ) -> tuple[float, float, float]:
        """Move the current velocity toward the commanded one, respecting
        the same per-tick rate bounds that constrain maneuvers; velocity
        never jumps faster than the airframe can change it."""
        b = self.bounds[i]
        v = self.vel[i]
        vx, vy, vz = float(v[0]), float(v[1]), float(v[2])
        cx, cy, cz = command
        s_now = math.hypot(vx, vy)
        s_cmd = math.hypot(cx, cy)
        psi_cmd = math.atan2(cy, cx) if s_cmd > 1e-9 else self.heading[i]
        if s_now > 1e-9:
            dpsi = math.remainder(psi_cmd - self.heading[i], math.tau)
            psi = self.heading[i] + _clamp(dpsi, b.max_dpsi)
        else:
            psi = psi_cmd
        s = s_now + _clamp(s_cmd - s_now, b.max_dv)
        w = _clamp(vz + _clamp(cz - vz, b.max_dh), self.max_climb[i])
        return (s * math.cos(psi), s * math.sin(psi), w)

    def _corridor_velocity(self, i: int) -> tuple[float, float, float]:
        cid = self.plan[i][self.plan_idx[i]]
        centers = self._cor_centers[cid]
        self.current_corridor[i] = cid
        capture = CAPTURE_FRACTION * self.spec.cell_size
        p = self.pos[i]
        v = self.vel[i]
        px, py, pz = float(p[0]), float(p[1]), float(p[2])
        while True:
            if self.cell_ptr[i] >= len(centers):
                self.plan_idx[i] += 1
                self.cell_ptr[i] = 0
                if self.plan_idx[i] >= len(self.plan[i]):
                    self.plan[i] = []
                    self.plan_idx[i] = 0
                    self.current_corridor[i] = None
                    return self._guidance_velocity(i)
                cid = self.plan[i][self.plan_idx[i]]
                centers = self._cor_centers[cid]
                self.current_corridor[i] = cid
            cx, cy, cz = centers[self.cell_ptr[i]]
            ox = cx - px
            oy = cy - py
            oz = cz - pz
            dist = math.sqrt(ox * ox + oy * oy + oz * oz)
            # A nearby cell that is already behind the velocity vector
            # counts as reached; bounded turn rates can arc a corner
            # without entering the capture ball.
            behind = (dist < 2.0 * self.spec.cell_size
                      and ox * v[0] + oy * v[1] + oz * v[2] < 0.0)
            if dist > capture and not behind:
                break
            self.cell_ptr[i] += 1
        speed = min(self.corridors[cid].speed, float(self.max_speed[i]))
        f = speed / dist
        return (ox * f, oy * f, oz * f)

    def _apply_and_integrate(self, act: np.ndarray,
                             maneuvers: dict[str, tuple[int, Maneuver]],
                             hold: set[str]) -> list[dict]:
        records = []
        for i in act:
            aid = self.ids[i]
            if aid in maneuvers:
                tier, m = maneuvers[aid]
                m = clamp_maneuver(m, self.bounds[i])
                self.vel[i], self.heading[i] = apply_maneuver(
                    self.vel[i], self.heading[i], m, self.dt)
                v = self.vel[i]
                vx, vy, vz = float(v[0]), float(v[1]), float(v[2])
                speed = math.sqrt(vx * vx + vy * vy + vz * vz)
                if speed > self.max_speed[i]:
                    f = self.max_speed[i] / speed
                    self.vel[i] *= f
                    vx *= f
                    vy *= f
                    vz *= f
                # Stacked altitude maneuvers must not exceed the sustained
                # climb rate the class can actually fly.
                climb = self.max_climb[i]
                if vz > climb:
                    self.vel[i, 2] = climb
                elif vz < -climb:
                    self.vel[i, 2] = -climb
                records.append(_maneuver_record(aid, tier, m))
            elif aid not in hold:
                vx, vy, vz = self._track_command(i, self._guidance_velocity(i))
                self.vel[i] = (vx, vy, vz)
            else:
                # Held aircraft keep their velocity, so the heading stored
                # when that velocity was last set still matches it.
                continue
            if math.hypot(vx, vy) > 1e-9:
                self.heading[i] = math.atan2(vy, vx)
        self.pos[act] += self.vel[act] * self.dt
        self.pos[act, 2] = np.maximum(self.pos[act, 2], 0.0)
        return records

    # -- stage 6: rules on true states --------------------------------------

    def _true_state(self, i: int) -> AircraftState:
        return AircraftState(
            id=self.ids[i], aircraft_class=self.specs[i].aircraft_class,
            position=Point3(*self.pos[i]), velocity=self.vel[i].copy(),
            envelope=self.envelopes[i], heading=float(self.heading[i]),
            corridor=self.current_corridor[i])

    def _check_rules(self) -> list[dict]:
        states = [self._true_state(i) for i in self._act_idx
                  if self.spec.bounds.contains(Point3(*self.pos[i]))]
        violations = check_all(states, self.spec, self.corridors,
                               self.intersections, self.scenario.zones,
                               self.scenario.rules,
                               self.scenario.landing_fields)
        self.violation_count += len(violations)
        return [{"rule": v.rule.value, "aircraft": list(v.aircraft),
                 "measured": float(v.measured),
                 "threshold": float(v.threshold)} for v in violations]

    # -- stage 7: bookkeeping and logging ------------------------------------

    def _pair_index(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        cached = self._iu_cache.get(n)
        if cached is None:
            cached = np.triu_indices(n, k=1)
            self._iu_cache[n] = cached
        return cached

    def _scan_separation(self) -> None:
        idx = self._act_idx
        m = idx.size
        if m < 2:
            return
        if m <= SCALAR_SCAN_LIMIT:
            pos = self.pos[idx].tolist()
            phys = self.phys_r[idx].tolist()
            outer = self.outer_r[idx].tolist()
            min_sep = self.min_sep
            min_ratio = self.min_sep_ratio
            for a in range(m):
                px, py, pz = pos[a]
                for b in range(a + 1, m):
                    qx, qy, qz = pos[b]
                    dx = px - qx
                    dy = py - qy
                    dz = pz - qz
                    d = math.sqrt(dx * dx + dy * dy + dz * dz)
                    min_sep = min(min_sep, d)
                    min_ratio = min(min_ratio, d / (outer[a] + outer[b]))
                    if (d <= phys[a] + phys[b]
                            and self.first_overlap_tick is None):
                        self.first_overlap_tick = self.tick
                        self.first_overlap_pair = (self.ids[idx[a]],
                                                   self.ids[idx[b]])
            self.min_sep = min_sep
            self.min_sep_ratio = min_ratio
            return
        p = self.pos[idx]
        ia, ib = self._pair_index(idx.size)
        diff = p[ia] - p[ib]
        d = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        phys = self.phys_r[idx]
        outer = self.outer_r[idx]
        self.min_sep = min(self.min_sep, float(d.min()))
        self.min_sep_ratio = min(
            self.min_sep_ratio, float((d / (outer[ia] + outer[ib])).min()))
        hit = d <= phys[ia] + phys[ib]
        if self.first_overlap_tick is None and hit.any():
            self.first_overlap_tick = self.tick
            k = int(np.flatnonzero(hit)[0])
            self.first_overlap_pair = (self.ids[idx[ia[k]]],
                                       self.ids[idx[ib[k]]])

    def _check_completion(self) -> None:
        changed = False
        for i in self._act_idx:
            if self.plan[i]:
                continue
            q = self.waypoints[i][-1][1]
            p = self.pos[i]
            dx = q[0] - p[0]
            dy = q[1] - p[1]
            dz = q[2] - p[2]
            if math.sqrt(dx * dx + dy * dy + dz * dz) <= ARRIVAL_TOLERANCE_M:
                self.active[i] = False
                self.completed[self.ids[i]] = round(self.time, 9)
                changed = True
        if changed:
            self._act_idx = np.flatnonzero(self.active)
            self._rebuild_groups()

    def step(self) -> Optional[dict]:
        """Advance one tick; returns the tick record (None in lean mode)."""
        self._measure_and_track()
        anomalies = [] if self.lean else self._detect_anomalies()

        act = self._act_idx
        maneuvers: dict[str, tuple[int, Maneuver]] = {}
        hold: set[str] = set()
        conflicts: list[dict] = []
        if self.avoid_on and act.size >= 2:
            sev, sev_esc, matrix_esc, t_cpa, d_cpa = self._conflict_scan(act)
            maneuvers, hold, conflicts = self._escalate(
                act, sev, sev_esc, matrix_esc, t_cpa, d_cpa)
            # Free-flight aircraft keep their heading while any pairwise
            # severity is live; steering back to the goal mid-conflict
            # undoes the separation the tiers just bought.
            peak = sev_esc.max(axis=1)
            for k, i in enumerate(act):
                if peak[k] > HOLD_RELEASE_SEVERITY and not self.plan[i]:
                    hold.add(self.ids[i])

        man_records = self._apply_and_integrate(act, maneuvers, hold)
        violations = [] if self.lean else self._check_rules()
        self._scan_separation()
        if not self.lean:
            self.prev_est_speed = np.linalg.norm(self.tracker.vel, axis=1)

        record = None
        if not self.lean:
            record = {
                "tick": self.tick, "time_s": round(self.time + self.dt, 9),
                "states": [
                    {"id": self.ids[i],
                     "pos": [float(x) for x in self.pos[i]],
                     "vel": [float(x) for x in self.vel[i]],
                     "corridor": self.current_corridor[i],
                     "mode": self.modes[i].name.value}
                    for i in act],
                "violations": violations, "anomalies": anomalies,
                "conflicts": conflicts, "maneuvers": man_records,
            }
            if self.writer is not None:
                self.writer.write_tick(record)

        self.tick += 1
        self.time = round(self.tick * self.dt, 9)
        self._check_completion()
        return record

    def header(self) -> dict:
        shared = sorted({cell.as_tuple() for inter in self.intersections
                         for cell in inter.shared_cells})
        g = self.spec
        return {
            "scenario": self.scenario.name,
            "scenario_hash": self.scenario.hash,
            "seed": self.scenario.seed, "trial_index": self.trial_index,
            "dt_s": self.dt, "duration_s": self.scenario.duration_s,
            "avoidance_enabled": self.avoid_on,
            "grid": {
                "bounds": [list(g.bounds.lo.as_tuple()),
                           list(g.bounds.hi.as_tuple())],
                "layer_boundaries": list(g.layer_boundaries),
                "cell_size": g.cell_size,
            },
            "aircraft": [
                {"id": self.ids[i],
                 "class": self.specs[i].aircraft_class.value,
                 "phys_radius": float(self.phys_r[i]),
                 "outer_radius": float(self.outer_r[i])}
                for i in range(self.n)],
            "corridors": [
                {"id": c.id, "kind": c.kind.value, "speed": c.speed,
                 "cells": [list(cell.as_tuple()) for cell in c.cells]}
                for c in sorted(self.corridors.values(), key=lambda c: c.id)],
            "shared_cells": [list(c) for c in shared],
        }

    def result(self) -> TrialResult:
        return TrialResult(
            success=self.first_overlap_tick is None,
            first_overlap_tick=self.first_overlap_tick,
            first_overlap_pair=self.first_overlap_pair,
            min_separation_m=self.min_sep,
            min_separation_ratio=self.min_sep_ratio,
            ticks=self.tick, elapsed_s=self.time,
            completed=dict(self.completed),
            tier_counts=dict(self.tier_counts),
            violation_count=self.violation_count,
            anomaly_count=self.anomaly_count,
            scenario_hash=self.scenario.hash, seed=self.scenario.seed,
            trial_index=self.trial_index)

    def run(self) -> TrialResult:
        max_ticks = int(round(self.scenario.duration_s / self.dt))
        if self.writer is not None:
            self.writer.write_header(self.header())
        while self.tick < max_ticks and self.active.any():
            self.step()
            if self.stop_on_overlap and self.first_overlap_tick is not None:
                break
        result = self.result()
        if self.writer is not None:
            sep = (None if math.isinf(result.min_separation_m)
                   else result.min_separation_m)
            ratio = (None if math.isinf(result.min_separation_ratio)
                     else result.min_separation_ratio)
            self.writer.write_result({
                "success": result.success,
                "first_overlap_tick": result.first_overlap_tick,
                "min_separation_m": sep, "min_separation_ratio": ratio,
                "ticks": result.ticks,
                "completed": result.completed,
                "tier_counts": result.tier_counts,
                "violations": result.violation_count,
                "anomalies": result.anomaly_count,
            })
        return result


def run_trial(scenario: Scenario, *, trial_index: int = 0, lean: bool = False,
              writer: Optional[EventLogWriter] = None,
              stop_on_overlap: bool = False) -> TrialResult:
    """Run one complete trial of a scenario."""
    world = World(scenario, trial_index=trial_index, lean=lean, writer=writer,
                  stop_on_overlap=stop_on_overlap)
    return world.run()


def scan_log_for_overlaps(records: Sequence[dict]) -> Optional[int]:
    """Post-hoc overlap scan over a finished event log.

    Recomputes the first tick with a physical overlap purely from logged
    positions and header radii; independent of the engine's own flag.
    """
    header = records[0]
    phys = {a["id"]: float(a["phys_radius"]) for a in header["aircraft"]}
    for tk in iter_ticks(list(records)):
        states = tk.get("states", [])
        for x in range(len(states)):
            for y in range(x + 1, len(states)):
                a, b = states[x], states[y]
                d = math.dist(a["pos"], b["pos"])
                if d <= phys[a["id"]] + phys[b["id"]]:
                    return tk["tick"]
    return None
