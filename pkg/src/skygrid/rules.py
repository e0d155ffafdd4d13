"""Stateless flight-rule checks over a snapshot of all aircraft.

Each check is a pure function returning a sorted list of Violation records;
permuting the input aircraft never changes the result. Corridor assignment is
taken from explicit aircraft state, never inferred from position, so shared
intersection cells stay unambiguous.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .corridors import Corridor, Intersection, corridor_tangent
from .envelopes import AircraftState
from .errors import UnknownCorridor
from .grid import (CellIndex, CylinderZone, GridSpec, Point3, ZoneKind,
                   ZoneSet, cell_neighbors, is_restricted, point_to_cell)

DEFAULT_SPEED_TOLERANCE_FRAC = 0.1
DEFAULT_MIN_GAP_CELLS = 2
DEFAULT_MIN_ALTITUDE_M = 30.0


class RuleName(Enum):
    MULTI_OCCUPANCY = "MultiOccupancy"
    SPEED_MISMATCH = "SpeedMismatch"
    WRONG_DIRECTION = "WrongDirection"
    SEPARATION_SHORTFALL = "SeparationShortfall"
    GEOFENCE_INTRUSION = "GeofenceIntrusion"
    BELOW_MIN_ALTITUDE = "BelowMinAltitude"
    PRIORITY_IGNORED = "PriorityIgnored"


@dataclass(frozen=True)
class Violation:
    """One rule breach; quantitative rules carry measured and threshold."""

    rule: RuleName
    aircraft: tuple[str, ...]
    cell: Optional[CellIndex] = None
    position: Optional[Point3] = None
    measured: Optional[float] = None
    threshold: Optional[float] = None

    def sort_key(self):
        return (self.rule.value, self.aircraft)


def _sorted(violations: list[Violation]) -> list[Violation]:
    return sorted(violations, key=Violation.sort_key)


def _corridor_of(state: AircraftState,
                 corridors: dict[str, Corridor]) -> Optional[Corridor]:
    if state.corridor is None:
        return None
    if state.corridor not in corridors:
        raise UnknownCorridor(state.corridor)
    return corridors[state.corridor]


def check_occupancy(states: Sequence[AircraftState],
                    spec: GridSpec) -> list[Violation]:
    """One aircraft per fine cell: every co-located pair is one violation."""
    by_cell: dict[CellIndex, list[str]] = {}
    for s in states:
        by_cell.setdefault(point_to_cell(s.position, spec), []).append(s.id)
    out = []
    for cell, ids in by_cell.items():
        if len(ids) < 2:
            continue
        for a, b in itertools.combinations(sorted(ids), 2):
            out.append(Violation(RuleName.MULTI_OCCUPANCY, (a, b), cell=cell,
                                 measured=float(len(ids)), threshold=1.0))
    return _sorted(out)


def check_speed(states: Sequence[AircraftState],
                corridors: dict[str, Corridor],
                tolerance_frac: float = DEFAULT_SPEED_TOLERANCE_FRAC
                ) -> list[Violation]:
    """Corridor traffic must hold the corridor speed within a fractional
    band; free-flight aircraft are exempt."""
    if not 0.0 <= tolerance_frac < 1.0:
        raise ValueError("tolerance_frac must be in [0, 1)")
    out = []
    for s in states:
        c = _corridor_of(s, corridors)
        if c is None:
            continue
        if abs(s.speed - c.speed) > tolerance_frac * c.speed:
            out.append(Violation(RuleName.SPEED_MISMATCH, (s.id,),
                                 position=s.position,
                                 measured=s.speed, threshold=c.speed))
    return _sorted(out)


def check_direction(states: Sequence[AircraftState],
                    corridors: dict[str, Corridor],
                    spec: GridSpec) -> list[Violation]:
    """One-way traffic: flag motion opposing the local corridor tangent.

    Perpendicular motion (dot = 0) is permitted lateral adjustment.
    """
    out = []
    for s in states:
        c = _corridor_of(s, corridors)
        if c is None:
            continue
        tangent = corridor_tangent(c, point_to_cell(s.position, spec), spec)
        if tangent is None:
            continue
        dot = float(s.velocity @ tangent)
        if dot < 0.0:
            out.append(Violation(RuleName.WRONG_DIRECTION, (s.id,),
                                 position=s.position,
                                 measured=dot, threshold=0.0))
    return _sorted(out)


def check_separation(states: Sequence[AircraftState],
                     corridors: dict[str, Corridor],
                     spec: GridSpec,
                     min_gap_cells: int = DEFAULT_MIN_GAP_CELLS
                     ) -> list[Violation]:
    """Along-corridor spacing: pairs in the same corridor closer than
    ``min_gap_cells`` in cell order are flagged."""
    if min_gap_cells < 1:
        raise ValueError("min_gap_cells must be >= 1")
    slots: dict[str, list[tuple[int, str]]] = {}
    for s in states:
        c = _corridor_of(s, corridors)
        if c is None:
            continue
        try:
            pos = c.cell_position(point_to_cell(s.position, spec))
        except ValueError:
            continue  # off-corridor stragglers are a containment matter
        slots.setdefault(c.id, []).append((pos, s.id))
    out = []
    for cid in sorted(slots):
        for (pa, ida), (pb, idb) in itertools.combinations(slots[cid], 2):
            gap = abs(pa - pb)
            if gap < min_gap_cells:
                pair = tuple(sorted((ida, idb)))
                out.append(Violation(RuleName.SEPARATION_SHORTFALL, pair,
                                     measured=float(gap),
                                     threshold=float(min_gap_cells)))
    return _sorted(out)


def check_geofence(states: Sequence[AircraftState], zones: ZoneSet,
                   min_altitude_m: float = DEFAULT_MIN_ALTITUDE_M,
                   landing_fields: Sequence[CylinderZone] = ()
                   ) -> list[Violation]:
    """No-fly incursions plus the ground-clearance floor.

    Flight below ``min_altitude_m`` is legal only inside a designated
    landing-field cylinder.
    """
    out = []
    for s in states:
        kind = is_restricted(s.position, zones)
        if kind is ZoneKind.NO_FLY:
            out.append(Violation(RuleName.GEOFENCE_INTRUSION, (s.id,),
                                 position=s.position))
        if s.position.z < min_altitude_m:
            if not any(f.contains(s.position) for f in landing_fields):
                out.append(Violation(RuleName.BELOW_MIN_ALTITUDE, (s.id,),
                                     position=s.position,
                                     measured=s.position.z,
                                     threshold=min_altitude_m))
    return _sorted(out)


def check_intersection_priority(states: Sequence[AircraftState],
                                intersections: Sequence[Intersection],
                                corridors: dict[str, Corridor],
                                spec: GridSpec) -> list[Violation]:
    """Right-of-way at corridor crossings.

    A lower-priority aircraft may not sit in a shared or buffer cell while a
    priority-corridor aircraft occupies a shared cell or is one cell from
    entering one.
    """
    cell_of = {s.id: point_to_cell(s.position, spec) for s in states}
    out = []
    for x in intersections:
        other = x.corridor_b if x.priority == x.corridor_a else x.corridor_a
        danger = set(x.shared_cells) | set(x.buffer_cells)
        adjacent_to_shared = set(x.shared_cells)
        for c in x.shared_cells:
            adjacent_to_shared.update(cell_neighbors(c, spec))
        priority_present = any(
            s.corridor == x.priority and cell_of[s.id] in adjacent_to_shared
            for s in states)
        if not priority_present:
            continue
        for s in states:
            if s.corridor == other and cell_of[s.id] in danger:
                out.append(Violation(RuleName.PRIORITY_IGNORED, (s.id,),
                                     cell=cell_of[s.id]))
    return _sorted(out)


@dataclass(frozen=True)
class RuleConfig:
    speed_tolerance_frac: float = DEFAULT_SPEED_TOLERANCE_FRAC
    min_gap_cells: int = DEFAULT_MIN_GAP_CELLS
    min_altitude_m: float = DEFAULT_MIN_ALTITUDE_M


def check_all(states: Sequence[AircraftState], spec: GridSpec,
              corridors: dict[str, Corridor],
              intersections: Sequence[Intersection],
              zones: ZoneSet,
              config: RuleConfig = RuleConfig(),
              landing_fields: Sequence[CylinderZone] = ()) -> list[Violation]:
    """Run the full rule catalog; result order is deterministic."""
    out = []
    out += check_occupancy(states, spec)
    out += check_speed(states, corridors, config.speed_tolerance_frac)
    out += check_direction(states, corridors, spec)
    out += check_separation(states, corridors, spec, config.min_gap_cells)
    out += check_geofence(states, zones, config.min_altitude_m, landing_fields)
    out += check_intersection_priority(states, intersections, corridors, spec)
    return out
