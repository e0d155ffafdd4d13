"""Typed one-way corridors over grid cells, ring structures, intersections,
and the corridor transition graph used for routing.

A corridor is an ordered, contiguous, repeat-free run of cells from its
entrance to its exit with a single mandated speed. Corridor-to-corridor
transitions are legal where an exit-side cell of one corridor is a grid
neighbor of an entrance-side cell of another.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import (Discontiguous, EmptyPath, NoRoute, OutOfBounds,
                     RadiiNotAscending, RestrictedOverlap, UnknownCorridor)
from .grid import (CellIndex, GridSpec, Point3, ZoneKind, ZoneSet, cell_center,
                   cell_neighbors, cell_to_box, is_restricted, point_to_cell)

DEFAULT_TRANSFER_PENALTY_S = 5.0


class CorridorKind(Enum):
    HORIZONTAL = "horizontal"
    VERTICAL = "vertical"
    HIGH_SPEED = "high_speed"
    EMERGENCY = "emergency"


# Right-of-way rank at shared cells: emergency clearance beats vertical
# traffic, which beats everything else.
_PRIORITY_RANK = {
    CorridorKind.EMERGENCY: 3,
    CorridorKind.VERTICAL: 2,
    CorridorKind.HORIZONTAL: 1,
    CorridorKind.HIGH_SPEED: 1,
}


def corridor_rank(kind: CorridorKind) -> int:
    return _PRIORITY_RANK[kind]


@dataclass(frozen=True)
class Corridor:
    id: str
    kind: CorridorKind
    cells: tuple[CellIndex, ...]
    speed: float
    width_cells: int = 1
    height_cells: int = 1

    def __post_init__(self):
        if not self.cells:
            raise EmptyPath(f"corridor {self.id} has no cells")
        if self.speed <= 0:
            raise ValueError(f"corridor {self.id} speed must be positive")
        if len(set(self.cells)) != len(self.cells):
            raise ValueError(f"corridor {self.id} repeats a cell")

    @property
    def entrance(self) -> CellIndex:
        return self.cells[0]

    @property
    def exit(self) -> CellIndex:
        return self.cells[-1]

    def traversal_time_s(self, cell_size: float) -> float:
        return len(self.cells) * cell_size / self.speed

    def cell_position(self, cell: CellIndex) -> int:
        """Index of a cell in traversal order; raises ValueError if absent."""
        return self.cells.index(cell)


def corridor_tangent(corridor: Corridor, cell: CellIndex,
                     spec: GridSpec) -> Optional[np.ndarray]:
    """Unit vector along the corridor's cell order at ``cell``.

    At the exit cell the inbound direction is used; None when the cell is
    not part of the corridor or the corridor is a single cell.
    """
    try:
        pos = corridor.cell_position(cell)
    except ValueError:
        return None
    if pos + 1 < len(corridor.cells):
        a, b = corridor.cells[pos], corridor.cells[pos + 1]
    elif pos > 0:
        a, b = corridor.cells[pos - 1], corridor.cells[pos]
    else:
        return None
    ca = np.array(cell_center(a, spec).as_tuple())
    cb = np.array(cell_center(b, spec).as_tuple())
    t = cb - ca
    return t / np.linalg.norm(t)


@dataclass(frozen=True)
class Intersection:
    corridor_a: str
    corridor_b: str
    shared_cells: frozenset[CellIndex]
    buffer_cells: frozenset[CellIndex]
    priority: str


@dataclass(frozen=True)
class HighSpeedRing:
    center: Point3
    loop_radii: tuple[float, float, float, float]
    z_band: tuple[float, float]
    emergency_corridor_id: str
    loop_ids: tuple[str, str, str, str]


def build_corridor(cells: Sequence[CellIndex], kind: CorridorKind, speed: float,
                   spec: GridSpec, *, corridor_id: str,
                   zones: ZoneSet | None = None,
                   width_cells: int = 1, height_cells: int = 1) -> Corridor:
    """Validate and construct a corridor.

    Rejects empty or discontiguous cell runs and any cell whose box center
    falls inside a no-fly zone.
    """
    if not cells:
        raise EmptyPath("corridor needs at least one cell")
    cells = tuple(cells)
    for a, b in zip(cells, cells[1:]):
        if b not in cell_neighbors(a, spec):
            raise Discontiguous(f"cells {a.as_tuple()} and {b.as_tuple()} are not neighbors")
    if zones is not None:
        for c in cells:
            if is_restricted(cell_center(c, spec), zones) == ZoneKind.NO_FLY:
                raise RestrictedOverlap(f"cell {c.as_tuple()} lies in a no-fly zone")
    return Corridor(id=corridor_id, kind=kind, cells=cells, speed=speed,
                    width_cells=width_cells, height_cells=height_cells)


def _ring_cells(center: Point3, radius: float, layer: int, k: int,
                spec: GridSpec, clockwise: bool) -> tuple[CellIndex, ...]:
    """Ordered closed loop of cells tracing a circle at one k level.

    Takes every cell whose center is within half a cell of the circle, orders
    by bearing, and splices in a connector cell wherever the angular ordering
    steps diagonally, so the result is face-contiguous.
    """
    b = spec.bounds
    cs = spec.cell_size
    imin = int(math.floor((center.x - radius - cs - b.lo.x) / cs))
    imax = int(math.ceil((center.x + radius + cs - b.lo.x) / cs))
    jmin = int(math.floor((center.y - radius - cs - b.lo.y) / cs))
    jmax = int(math.ceil((center.y + radius + cs - b.lo.y) / cs))

    on_ring: list[tuple[float, int, int]] = []
    for i in range(imin, imax):
        cx = b.lo.x + (i + 0.5) * cs
        for j in range(jmin, jmax):
            cy = b.lo.y + (j + 0.5) * cs
            d = math.hypot(cx - center.x, cy - center.y)
            if abs(d - radius) <= cs / 2:
                if not (0 <= i < spec.nx and 0 <= j < spec.ny):
                    raise OutOfBounds(f"ring of radius {radius} leaves the grid")
                ang = math.atan2(cy - center.y, cx - center.x) % (2 * math.pi)
                on_ring.append((ang, i, j))
    if len(on_ring) < 4:
        raise OutOfBounds(f"ring of radius {radius} does not fit the grid")

    on_ring.sort()
    order = [(i, j) for _, i, j in on_ring]
    if clockwise:
        order = [order[0]] + order[:0:-1]
    members = set(order)

    def dist(ij: tuple[int, int]) -> float:
        cx = b.lo.x + (ij[0] + 0.5) * cs
        cy = b.lo.y + (ij[1] + 0.5) * cs
        return math.hypot(cx - center.x, cy - center.y)

    path: list[tuple[int, int]] = []
    n = len(order)
    for idx in range(n):
        a, nxt = order[idx], order[(idx + 1) % n]
        path.append(a)
        di, dj = nxt[0] - a[0], nxt[1] - a[1]
        if abs(di) + abs(dj) <= 1:
            continue
        if abs(di) == 1 and abs(dj) == 1:
            cand = [(a[0] + di, a[1]), (a[0], a[1] + dj)]
            cand = [c for c in cand if c not in members and c not in path]
            if not cand:
                raise OutOfBounds(f"ring of radius {radius} cannot be made contiguous")
            path.append(min(cand, key=lambda c: (abs(dist(c) - radius), c)))
        else:
            raise OutOfBounds(f"ring of radius {radius} is too coarse for the grid")
    return tuple(CellIndex(layer, i, j, k) for i, j in path)


def build_high_speed_ring(center: Point3, radii: Sequence[float],
                          z_band: tuple[float, float], speed: float,
                          spec: GridSpec, *, zones: ZoneSet | None = None,
                          id_prefix: str = "ring",
                          emergency_speed: float | None = None,
                          ) -> tuple[list[Corridor], Corridor, HighSpeedRing]:
    """Four concentric one-way loops plus the central emergency column.

    Loops sit at the fine level containing the band midpoint and alternate
    rotation direction, innermost counter-clockwise. The emergency corridor
    is the vertical cell column at the center spanning the band.
    """
    radii = tuple(float(r) for r in radii)
    if len(radii) != 4 or any(r2 <= r1 for r1, r2 in zip(radii, radii[1:])):
        raise RadiiNotAscending(f"need 4 strictly ascending radii, got {radii}")
    z_lo, z_hi = z_band
    b = spec.bounds
    if z_lo < b.lo.z or z_hi > b.hi.z or z_hi <= z_lo:
        raise OutOfBounds(f"band {z_band} outside grid z extent")

    mid = Point3(center.x, center.y, (z_lo + z_hi) / 2)
    mid_cell = point_to_cell(mid, spec)

    loops: list[Corridor] = []
    for n, radius in enumerate(radii):
        cells = _ring_cells(center, radius, mid_cell.layer, mid_cell.k, spec,
                            clockwise=(n % 2 == 1))
        loops.append(build_corridor(cells, CorridorKind.HIGH_SPEED, speed, spec,
                                    corridor_id=f"{id_prefix}-loop{n}", zones=zones))

    column: list[CellIndex] = []
    z = z_lo
    while True:
        c = point_to_cell(Point3(center.x, center.y, z), spec)
        column.append(c)
        top = cell_to_box(c, spec).hi.z
        if top >= z_hi - 1e-9:
            break
        z = top
    emergency = build_corridor(column, CorridorKind.EMERGENCY,
                               emergency_speed or speed, spec,
                               corridor_id=f"{id_prefix}-emergency", zones=zones)
    for c in emergency.cells:
        if cell_center(c, spec).horizontal_distance_to(center) >= radii[0]:
            raise OutOfBounds("emergency corridor leaves the innermost loop radius")

    ring = HighSpeedRing(center=center, loop_radii=radii, z_band=(z_lo, z_hi),
                         emergency_corridor_id=emergency.id,
                         loop_ids=tuple(c.id for c in loops))
    return loops, emergency, ring


def find_intersections(corridors: Iterable[Corridor], spec: GridSpec) -> list[Intersection]:
    """One intersection per unordered corridor pair with shared cells.

    Right-of-way goes to the higher-ranked kind (emergency over all, vertical
    over horizontal traffic), ties to the lower id. Buffer cells are the
    in-corridor neighbors of the shared cells.
    """
    pool = sorted(corridors, key=lambda c: c.id)
    out: list[Intersection] = []
    for ai in range(len(pool)):
        for bi in range(ai + 1, len(pool)):
            a, b = pool[ai], pool[bi]
            shared = set(a.cells) & set(b.cells)
            if not shared:
                continue
            member = set(a.cells) | set(b.cells)
            buffer_cells = {n for c in shared for n in cell_neighbors(c, spec)
                            if n in member} - shared
            rank_a, rank_b = _PRIORITY_RANK[a.kind], _PRIORITY_RANK[b.kind]
            if rank_a > rank_b:
                priority = a.id
            elif rank_b > rank_a:
                priority = b.id
            else:
                priority = min(a.id, b.id)
            out.append(Intersection(corridor_a=a.id, corridor_b=b.id,
                                    shared_cells=frozenset(shared),
                                    buffer_cells=frozenset(buffer_cells),
                                    priority=priority))
    return out


@dataclass(frozen=True)
class Transition:
    from_id: str
    to_id: str
    transfer: tuple[CellIndex, CellIndex]


@dataclass
class CorridorGraph:
    """Directed corridor-transition graph over validated corridors."""

    corridors: dict[str, Corridor]
    edges: list[Transition]
    cell_size: float
    _out: dict[str, list[Transition]] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        for e in self.edges:
            self._out.setdefault(e.from_id, []).append(e)

    def successors(self, corridor_id: str) -> list[Transition]:
        return self._out.get(corridor_id, [])


def build_graph(corridors: Iterable[Corridor], spec: GridSpec,
                transfer_window: int = 1) -> CorridorGraph:
    """Connect corridors where an exit-side cell of one neighbors an
    entrance-side cell of another (sides are ``transfer_window`` cells deep)."""
    pool = sorted(corridors, key=lambda c: c.id)
    edges: list[Transition] = []
    for a in pool:
        exit_side = a.cells[-transfer_window:]
        for b in pool:
            if a.id == b.id:
                continue
            entrance_side = set(b.cells[:transfer_window])
            found = None
            for cell_a in reversed(exit_side):
                for nb in cell_neighbors(cell_a, spec):
                    if nb in entrance_side:
                        found = (cell_a, nb)
                        break
                if found:
                    break
            if found:
                edges.append(Transition(from_id=a.id, to_id=b.id, transfer=found))
    return CorridorGraph(corridors={c.id: c for c in pool}, edges=edges,
                         cell_size=spec.cell_size)


def route(graph: CorridorGraph, start_corridor: str, goal_corridor: str,
          *, transfer_penalty_s: float = DEFAULT_TRANSFER_PENALTY_S,
          exclude: frozenset[str] | set[str] = frozenset(),
          extra_cost: Callable[[str], float] | None = None) -> list[str]:
    """Minimum-time corridor sequence from start to goal.

    Path cost is the sum of corridor traversal times plus a fixed penalty per
    transfer; ties break toward the lexicographically smaller id sequence.
    ``exclude`` removes corridors from consideration (start/goal exempt).
    """
    for cid in (start_corridor, goal_corridor):
        if cid not in graph.corridors:
            raise UnknownCorridor(cid)

    def corridor_cost(cid: str) -> float:
        cost = graph.corridors[cid].traversal_time_s(graph.cell_size)
        if extra_cost is not None:
            cost += extra_cost(cid)
        return cost

    start_key = (corridor_cost(start_corridor), (start_corridor,))
    heap: list[tuple[float, tuple[str, ...]]] = [start_key]
    settled: set[str] = set()
    while heap:
        cost, seq = heapq.heappop(heap)
        node = seq[-1]
        if node == goal_corridor:
            return list(seq)
        if node in settled:
            continue
        settled.add(node)
        for edge in graph.successors(node):
            nxt = edge.to_id
            if nxt in settled or (nxt in exclude and nxt != goal_corridor):
                continue
            heapq.heappush(heap, (cost + transfer_penalty_s + corridor_cost(nxt),
                                  seq + (nxt,)))
    raise NoRoute(f"no corridor sequence from {start_corridor} to {goal_corridor}")
