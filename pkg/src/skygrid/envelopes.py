"""Dual-envelope aircraft geometry and pairwise conflict prediction.

Every aircraft carries an inner physical volume (its true extent) wrapped in
an outer safety volume obtained by growing the physical one isotropically.
Conflict tests reduce each shape to its conservative bounding sphere, so a
Clear verdict is trustworthy even for ellipsoids and cuboids; overlap of the
outer spheres is a warning (SafetyBreach), overlap of the inner ones a
PhysicalCollision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .errors import SameAircraft
from .grid import Point3

TWO_PI = 2 * math.pi


@dataclass(frozen=True)
class Sphere:
    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("sphere radius must be positive")


@dataclass(frozen=True)
class Ellipsoid:
    a: float
    b: float
    c: float

    def __post_init__(self):
        if min(self.a, self.b, self.c) <= 0:
            raise ValueError("ellipsoid semi-axes must be positive")


@dataclass(frozen=True)
class Cuboid:
    hx: float
    hy: float
    hz: float

    def __post_init__(self):
        if min(self.hx, self.hy, self.hz) < 0 or max(self.hx, self.hy, self.hz) <= 0:
            raise ValueError("cuboid half-extents must be non-negative, not all zero")


EnvelopeShape = Sphere | Ellipsoid | Cuboid


def bounding_radius(shape: EnvelopeShape) -> float:
    """Radius of the smallest origin-centered sphere containing the shape."""
    if isinstance(shape, Sphere):
        return shape.radius
    if isinstance(shape, Ellipsoid):
        return max(shape.a, shape.b, shape.c)
    if isinstance(shape, Cuboid):
        return math.sqrt(shape.hx ** 2 + shape.hy ** 2 + shape.hz ** 2)
    raise TypeError(f"not an envelope shape: {shape!r}")


@dataclass(frozen=True)
class DualEnvelope:
    """Inner physical shape plus an isotropic outer safety margin."""

    physical: EnvelopeShape
    safety_margin: float

    def __post_init__(self):
        if self.safety_margin < 0:
            raise ValueError("safety margin must be non-negative")

    @property
    def physical_radius(self) -> float:
        return bounding_radius(self.physical)

    @property
    def outer_radius(self) -> float:
        return self.physical_radius + self.safety_margin


class AircraftClass(Enum):
    FIXED_WING = "FixedWing"
    ROTARY_WING = "RotaryWing"
    HYBRID = "Hybrid"
    EVTOL = "EVTOL"
    MANNED = "Manned"


@dataclass(frozen=True)
class ClassLimits:
    """Per-class kinematic ceilings; per-tick maneuver bounds derive from
    these as rate * dt."""

    max_speed: float          # m/s
    max_turn_rate: float      # rad/s
    max_accel: float          # m/s^2
    max_climb_rate: float     # m/s


DEFAULT_CLASS_LIMITS: dict[AircraftClass, ClassLimits] = {
    AircraftClass.FIXED_WING: ClassLimits(40.0, 0.3, 3.0, 5.0),
    AircraftClass.ROTARY_WING: ClassLimits(20.0, 1.0, 4.0, 6.0),
    AircraftClass.HYBRID: ClassLimits(30.0, 0.5, 3.5, 6.0),
    AircraftClass.EVTOL: ClassLimits(25.0, 0.8, 3.0, 8.0),
    AircraftClass.MANNED: ClassLimits(60.0, 0.2, 2.0, 8.0),
}


def wrap_heading(psi: float) -> float:
    return psi % TWO_PI


@dataclass(eq=False)
class AircraftState:
    """Kinematic snapshot of one aircraft.

    heading is radians from east, counter-clockwise, in [0, 2pi). corridor is
    the id of the currently assigned corridor, or None in free flight.
    """

    id: str
    aircraft_class: AircraftClass
    position: Point3
    velocity: np.ndarray
    envelope: DualEnvelope
    heading: float = 0.0
    corridor: Optional[str] = None

    def __post_init__(self):
        self.velocity = np.asarray(self.velocity, dtype=float)
        if self.velocity.shape != (3,):
            raise ValueError("velocity must be a 3-vector")
        self.heading = wrap_heading(self.heading)

    @property
    def speed(self) -> float:
        return float(np.linalg.norm(self.velocity))

    def position_array(self) -> np.ndarray:
        return np.array(self.position.as_tuple())


class ConflictClass(Enum):
    CLEAR = "clear"
    SAFETY_BREACH = "safety_breach"
    PHYSICAL_COLLISION = "physical_collision"


def classify_conflict(a: AircraftState, b: AircraftState) -> ConflictClass:
    """Instantaneous conflict status from conservative bounding radii."""
    if a.id == b.id:
        raise SameAircraft(a.id)
    d = a.position.distance_to(b.position)
    if d <= a.envelope.physical_radius + b.envelope.physical_radius:
        return ConflictClass.PHYSICAL_COLLISION
    if d <= a.envelope.outer_radius + b.envelope.outer_radius:
        return ConflictClass.SAFETY_BREACH
    return ConflictClass.CLEAR


@dataclass(frozen=True)
class CpaResult:
    """Closest point of approach under constant-velocity extrapolation.

    t_breach is the earliest time in [0, horizon] at which the combined outer
    envelopes touch, or None when they never do within the horizon.
    """

    t_breach: Optional[float]
    t_cpa: float
    d_cpa: float


def cpa_threshold(a: AircraftState, b: AircraftState) -> float:
    return a.envelope.outer_radius + b.envelope.outer_radius


def solve_cpa(dp: np.ndarray, dv: np.ndarray, threshold: float,
              horizon_s: float) -> CpaResult:
    """CPA and first threshold crossing for relative state (dp, dv)."""
    a = float(dv @ dv)
    b = 2.0 * float(dp @ dv)
    if a > 0.0:
        t_cpa = min(max(-b / (2.0 * a), 0.0), horizon_s)
    else:
        t_cpa = 0.0
    d_cpa = float(np.linalg.norm(dp + t_cpa * dv))

    c = float(dp @ dp) - threshold * threshold
    if c <= 0.0:
        return CpaResult(t_breach=0.0, t_cpa=t_cpa, d_cpa=d_cpa)
    if a == 0.0:
        return CpaResult(t_breach=None, t_cpa=t_cpa, d_cpa=d_cpa)
    disc = b * b - 4.0 * a * c
    if disc < 0.0:
        return CpaResult(t_breach=None, t_cpa=t_cpa, d_cpa=d_cpa)
    t1 = (-b - math.sqrt(disc)) / (2.0 * a)
    if 0.0 <= t1 <= horizon_s:
        return CpaResult(t_breach=t1, t_cpa=t_cpa, d_cpa=d_cpa)
    return CpaResult(t_breach=None, t_cpa=t_cpa, d_cpa=d_cpa)


def time_to_breach(a: AircraftState, b: AircraftState,
                   horizon_s: float) -> CpaResult:
    """Predict when the pair's outer envelopes first touch, if ever, within
    the horizon; the CPA time and distance are always reported."""
    if a.id == b.id:
        raise SameAircraft(a.id)
    if horizon_s <= 0:
        raise ValueError("horizon must be positive")
    dp = a.position_array() - b.position_array()
    dv = a.velocity - b.velocity
    return solve_cpa(dp, dv, cpa_threshold(a, b), horizon_s)
