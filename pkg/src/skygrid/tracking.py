"""Constant-velocity Kalman tracking and track-level anomaly detection.

Two implementations of the same filter live here. ``kalman_step`` is the
reference 6-state form with a full covariance; ``BatchTracker`` runs the
identical recursion as three decoupled per-axis 2x2 filters vectorized over
the fleet, which is exact whenever the initial covariance, process noise, and
measurement noise carry no cross-axis terms (they never do here). Tests pin
the two against each other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .errors import NonPSDCovariance
from .grid import Point3, ZoneKind, ZoneSet, is_restricted
from .links import LinkModeName

MAHALANOBIS_GATE = 3.0
REACQUIRE_MISS_LIMIT = 5   # consecutive gate misses before the track reopens
DEFAULT_PROCESS_ACCEL_VAR = 1.0   # (m/s^2)^2 white-acceleration intensity
PSD_TOLERANCE = 1e-9
SCALAR_BATCH_LIMIT = 12    # fleets this small step with a scalar loop


@dataclass(frozen=True)
class KalmanParams:
    process_accel_var: float = DEFAULT_PROCESS_ACCEL_VAR
    gate: float = MAHALANOBIS_GATE


@dataclass
class Track:
    """Filtered estimate for one aircraft: stacked position+velocity."""

    aircraft_id: str
    state: np.ndarray                 # (6,) [x y z vx vy vz]
    covariance: np.ndarray            # (6,6) symmetric PSD
    updated_at_s: float
    signal: dict[LinkModeName, bool] = field(default_factory=dict)
    consecutive_misses: int = 0

    def __post_init__(self):
        self.state = np.asarray(self.state, dtype=float)
        self.covariance = np.asarray(self.covariance, dtype=float)
        if self.state.shape != (6,):
            raise ValueError("track state must be a 6-vector")
        if self.covariance.shape != (6, 6):
            raise ValueError("track covariance must be 6x6")
        _require_psd(self.covariance)

    @property
    def position(self) -> np.ndarray:
        return self.state[:3]

    @property
    def velocity(self) -> np.ndarray:
        return self.state[3:]

    @property
    def speed(self) -> float:
        return float(np.linalg.norm(self.velocity))


def _require_psd(cov: np.ndarray) -> None:
    if not np.allclose(cov, cov.T, atol=1e-8):
        raise NonPSDCovariance("covariance is not symmetric")
    try:
        np.linalg.cholesky(cov + PSD_TOLERANCE * np.eye(cov.shape[0]))
    except np.linalg.LinAlgError:
        raise NonPSDCovariance("covariance failed Cholesky check") from None


def make_track(aircraft_id: str, position: Sequence[float],
               velocity: Sequence[float], *, pos_var: float = 100.0,
               vel_var: float = 25.0, t: float = 0.0) -> Track:
    state = np.concatenate([np.asarray(position, float),
                            np.asarray(velocity, float)])
    cov = np.diag([pos_var] * 3 + [vel_var] * 3).astype(float)
    return Track(aircraft_id, state, cov, updated_at_s=t)


def _cv_matrices(dt: float, q: float) -> tuple[np.ndarray, np.ndarray]:
    f = np.eye(6)
    f[:3, 3:] = dt * np.eye(3)
    q00 = q * dt ** 4 / 4.0
    q01 = q * dt ** 3 / 2.0
    q11 = q * dt ** 2
    qm = np.zeros((6, 6))
    qm[:3, :3] = q00 * np.eye(3)
    qm[:3, 3:] = q01 * np.eye(3)
    qm[3:, :3] = q01 * np.eye(3)
    qm[3:, 3:] = q11 * np.eye(3)
    return f, qm


def kalman_step(track: Track, measurement: Optional[np.ndarray], dt_s: float,
                *, sigma_m: float, params: KalmanParams = KalmanParams()
                ) -> Track:
    """One predict(+update) cycle of the constant-velocity filter.

    Measurements are positions only; one whose innovation Mahalanobis
    distance exceeds the gate is discarded as corrupt (treated exactly like a
    missed sample).
    """
    if dt_s <= 0:
        raise ValueError("dt must be positive")
    _require_psd(track.covariance)

    f, qm = _cv_matrices(dt_s, params.process_accel_var)
    x = f @ track.state
    p = f @ track.covariance @ f.T + qm

    misses = track.consecutive_misses + 1
    if measurement is not None:
        z = np.asarray(measurement, dtype=float)
        h = np.zeros((3, 6))
        h[:, :3] = np.eye(3)
        r = sigma_m ** 2 * np.eye(3)
        innov = z - h @ x
        s = h @ p @ h.T + r
        maha = math.sqrt(float(innov @ np.linalg.solve(s, innov)))
        if maha <= params.gate:
            k = p @ h.T @ np.linalg.inv(s)
            x = x + k @ innov
            ikh = np.eye(6) - k @ h
            p = ikh @ p @ ikh.T + k @ r @ k.T   # Joseph form keeps PSD
            misses = 0
    p = (p + p.T) / 2.0
    return replace(track, state=x, covariance=p,
                   updated_at_s=track.updated_at_s + dt_s,
                   consecutive_misses=misses)


class BatchTracker:
    """Per-axis decoupled CV filters over the whole fleet.

    State arrays are (n, 3): one row per aircraft, one column per axis. The
    covariance per aircraft-axis is the 2x2 [[p00, p01], [p01, p11]].
    """

    def __init__(self, ids: Sequence[str], positions: np.ndarray,
                 velocities: np.ndarray, *, pos_var: float = 100.0,
                 vel_var: float = 25.0,
                 params: KalmanParams = KalmanParams()):
        n = len(ids)
        self.ids = list(ids)
        self.pos = np.array(positions, dtype=float).reshape(n, 3)
        self.vel = np.array(velocities, dtype=float).reshape(n, 3)
        self.pos_var = float(pos_var)
        self.vel_var = float(vel_var)
        self.p00 = np.full((n, 3), self.pos_var)
        self.p01 = np.zeros((n, 3))
        self.p11 = np.full((n, 3), self.vel_var)
        self.misses = np.zeros(n, dtype=int)
        self.params = params
        self.t = 0.0

    def __len__(self) -> int:
        return len(self.ids)

    def step(self, measurements: np.ndarray, sigmas: np.ndarray,
             dt: float) -> None:
        """Predict all filters by dt, then update where a measurement exists.

        Absent measurements are NaN rows; sigmas is (n,) per-aircraft
        measurement standard deviation (ignored on absent rows). Small
        fleets take a scalar loop; per-aircraft covariance is a single 2x2
        (the three axes share it), so the loop body stays short.
        """
        if dt <= 0:
            raise ValueError("dt must be positive")
        if len(self.ids) <= SCALAR_BATCH_LIMIT:
            self._step_small(measurements, sigmas, dt)
            return
        q = self.params.process_accel_var
        q00, q01, q11 = q * dt ** 4 / 4.0, q * dt ** 3 / 2.0, q * dt ** 2

        self.pos += dt * self.vel
        p00 = self.p00 + 2.0 * dt * self.p01 + dt * dt * self.p11 + q00
        p01 = self.p01 + dt * self.p11 + q01
        p11 = self.p11 + q11

        z = np.asarray(measurements, dtype=float).reshape(len(self.ids), 3)
        have = ~np.isnan(z).any(axis=1)
        sig = np.asarray(sigmas, dtype=float).reshape(-1)
        r = np.where(have, sig, 1.0) ** 2    # placeholder 1.0 on absent rows

        s = p00 + r[:, None]
        innov = np.where(have[:, None], z - self.pos, 0.0)
        maha2 = (innov ** 2 / s).sum(axis=1)
        accept = have & (maha2 <= self.params.gate ** 2)

        # Track maintenance: a run of gated-out measurements means the
        # filter diverged from the target rather than the target from the
        # filter. Reopen the track with prior covariance so the next
        # measurement re-anchors it.
        reacquire = have & ~accept & (self.misses >= REACQUIRE_MISS_LIMIT)
        if reacquire.any():
            rows = reacquire[:, None]
            p00 = np.where(rows, self.pos_var, p00)
            p01 = np.where(rows, 0.0, p01)
            p11 = np.where(rows, self.vel_var, p11)
            s = p00 + r[:, None]
            accept = accept | reacquire

        k0 = np.where(accept[:, None], p00 / s, 0.0)
        k1 = np.where(accept[:, None], p01 / s, 0.0)
        self.pos += k0 * innov
        self.vel += k1 * innov
        self.p00 = (1.0 - k0) * p00
        self.p01 = (1.0 - k0) * p01
        self.p11 = p11 - k1 * p01

        self.misses = np.where(accept, 0, self.misses + 1)
        self.t += dt

    def _step_small(self, measurements: np.ndarray, sigmas: np.ndarray,
                    dt: float) -> None:
        q = self.params.process_accel_var
        q00, q01, q11 = q * dt ** 4 / 4.0, q * dt ** 3 / 2.0, q * dt ** 2
        gate2 = self.params.gate ** 2
        n = len(self.ids)
        z = np.asarray(measurements, dtype=float).reshape(n, 3).tolist()
        sig = np.asarray(sigmas, dtype=float).reshape(-1).tolist()
        pos = self.pos.tolist()
        vel = self.vel.tolist()
        c00l = self.p00[:, 0].tolist()
        c01l = self.p01[:, 0].tolist()
        c11l = self.p11[:, 0].tolist()
        misses = self.misses.tolist()
        for i in range(n):
            px, py, pz = pos[i]
            vx, vy, vz = vel[i]
            px += dt * vx
            py += dt * vy
            pz += dt * vz
            c00 = c00l[i] + 2.0 * dt * c01l[i] + dt * dt * c11l[i] + q00
            c01 = c01l[i] + dt * c11l[i] + q01
            c11 = c11l[i] + q11
            zx, zy, zz = z[i]
            have = not (math.isnan(zx) or math.isnan(zy) or math.isnan(zz))
            if have:
                r = sig[i] * sig[i]
                s = c00 + r
                ix = zx - px
                iy = zy - py
                iz = zz - pz
                maha2 = ix * ix / s + iy * iy / s + iz * iz / s
                accept = maha2 <= gate2
                if not accept and misses[i] >= REACQUIRE_MISS_LIMIT:
                    c00 = self.pos_var
                    c01 = 0.0
                    c11 = self.vel_var
                    s = c00 + r
                    accept = True
            else:
                accept = False
            if accept:
                k0 = c00 / s
                k1 = c01 / s
                px += k0 * ix
                py += k0 * iy
                pz += k0 * iz
                vx += k1 * ix
                vy += k1 * iy
                vz += k1 * iz
                c00 = (1.0 - k0) * c00
                c11 = c11 - k1 * c01
                c01 = (1.0 - k0) * c01
                misses[i] = 0
            else:
                misses[i] += 1
            pos[i] = [px, py, pz]
            vel[i] = [vx, vy, vz]
            c00l[i] = c00
            c01l[i] = c01
            c11l[i] = c11
        self.pos = np.array(pos)
        self.vel = np.array(vel)
        self.p00[:, :] = np.array(c00l)[:, None]
        self.p01[:, :] = np.array(c01l)[:, None]
        self.p11[:, :] = np.array(c11l)[:, None]
        self.misses = np.array(misses)
        self.t += dt

    def covariance6(self, idx: int) -> np.ndarray:
        cov = np.zeros((6, 6))
        for ax in range(3):
            cov[ax, ax] = self.p00[idx, ax]
            cov[ax, ax + 3] = cov[ax + 3, ax] = self.p01[idx, ax]
            cov[ax + 3, ax + 3] = self.p11[idx, ax]
        return cov

    def track(self, idx: int,
              signal: Optional[dict[LinkModeName, bool]] = None) -> Track:
        return Track(self.ids[idx],
                     np.concatenate([self.pos[idx], self.vel[idx]]),
                     self.covariance6(idx), updated_at_s=self.t,
                     signal=dict(signal or {}),
                     consecutive_misses=int(self.misses[idx]))


class AnomalyKind(Enum):
    TRAJECTORY_DEVIATION = "TrajectoryDeviation"
    SPEED_FLUCTUATION = "SpeedFluctuation"
    SIGNAL_LOSS = "SignalLoss"
    NO_FLY_INTRUSION = "NoFlyIntrusion"


@dataclass(frozen=True)
class Anomaly:
    kind: AnomalyKind
    aircraft_id: str
    tick: int
    magnitude: float
    threshold: float

    def __post_init__(self):
        if self.magnitude < self.threshold:
            raise ValueError("anomalies are emitted only at/above threshold")


@dataclass(frozen=True)
class AnomalyThresholds:
    trajectory_deviation_m: float = 50.0
    speed_fluctuation_mps2: float = 10.0
    signal_loss_ticks: int = 3


def cross_track_distance(position: np.ndarray,
                         plan: Sequence[Point3]) -> float:
    """Distance from a point to the planned polyline (or waypoint)."""
    p = np.asarray(position, dtype=float)
    pts = [np.array(w.as_tuple()) for w in plan]
    if not pts:
        return 0.0
    if len(pts) == 1:
        return float(np.linalg.norm(p - pts[0]))
    best = math.inf
    for a, b in zip(pts, pts[1:]):
        ab = b - a
        denom = float(ab @ ab)
        t = 0.0 if denom == 0.0 else min(max(float((p - a) @ ab) / denom, 0.0), 1.0)
        best = min(best, float(np.linalg.norm(p - (a + t * ab))))
    return best


def detect_anomalies(track: Track, plan: Sequence[Point3], zones: ZoneSet,
                     thresholds: AnomalyThresholds, *, tick: int,
                     prev_speed: Optional[float] = None,
                     dt_s: float = 1.0) -> list[Anomaly]:
    """Screen one track for the four alert conditions.

    Speed fluctuation needs the previous tick's speed estimate; omit it on
    the first tick.
    """
    out: list[Anomaly] = []
    dev = cross_track_distance(track.position, plan)
    if plan and dev > thresholds.trajectory_deviation_m:
        out.append(Anomaly(AnomalyKind.TRAJECTORY_DEVIATION, track.aircraft_id,
                           tick, dev, thresholds.trajectory_deviation_m))
    if prev_speed is not None:
        accel = abs(track.speed - prev_speed) / dt_s
        if accel > thresholds.speed_fluctuation_mps2:
            out.append(Anomaly(AnomalyKind.SPEED_FLUCTUATION,
                               track.aircraft_id, tick, accel,
                               thresholds.speed_fluctuation_mps2))
    if track.consecutive_misses > thresholds.signal_loss_ticks:
        out.append(Anomaly(AnomalyKind.SIGNAL_LOSS, track.aircraft_id, tick,
                           float(track.consecutive_misses),
                           float(thresholds.signal_loss_ticks)))
    est = Point3(float(track.position[0]), float(track.position[1]),
                 max(float(track.position[2]), 0.0))
    if is_restricted(est, zones) is ZoneKind.NO_FLY:
        out.append(Anomaly(AnomalyKind.NO_FLY_INTRUSION, track.aircraft_id,
                           tick, 1.0, 1.0))
    return out
