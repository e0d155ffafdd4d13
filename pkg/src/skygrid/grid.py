"""3D airspace discretization: coarse vertical layers subdivided into fine cubic cells.

The vertical extent is partitioned into coarse layers by a list of boundary
altitudes; inside each layer the volume is diced into cubic cells of a single
edge length. Cell boxes are half-open (lower faces inclusive, upper exclusive)
except along the top/east/north boundary of the volume, where the last cell is
closed so that every in-bounds point maps to exactly one cell.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional, Sequence

from .errors import InvalidIndex, OutOfBounds

_EPS = 1e-9


@dataclass(frozen=True)
class Point3:
    """Position in a local east-north-up frame, meters; z is height AGL."""

    x: float
    y: float
    z: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.z)):
            raise ValueError(f"non-finite point ({self.x}, {self.y}, {self.z})")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.z)

    def distance_to(self, other: "Point3") -> float:
        return math.dist(self.as_tuple(), other.as_tuple())

    def horizontal_distance_to(self, other: "Point3") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)


@dataclass(frozen=True)
class Box:
    """Axis-aligned box, closed on all faces."""

    lo: Point3
    hi: Point3

    def contains(self, p: Point3) -> bool:
        return (self.lo.x <= p.x <= self.hi.x
                and self.lo.y <= p.y <= self.hi.y
                and self.lo.z <= p.z <= self.hi.z)

    @property
    def center(self) -> Point3:
        return Point3((self.lo.x + self.hi.x) / 2,
                      (self.lo.y + self.hi.y) / 2,
                      (self.lo.z + self.hi.z) / 2)


@dataclass(frozen=True)
class GridSpec:
    """Gridded volume: bounds, coarse layer boundaries, fine cell edge length.

    ``layer_boundaries`` must ascend strictly, start at the volume z-min and
    end at the z-max. Horizontal extents must be exact multiples of
    ``cell_size``; layer heights need not be, in which case the topmost cell
    row of a layer is truncated to the layer boundary.
    """

    bounds: Box
    layer_boundaries: tuple[float, ...]
    cell_size: float

    def __post_init__(self):
        b = self.bounds
        if self.cell_size <= 0:
            raise ValueError("cell_size must be positive")
        if b.lo.x >= b.hi.x or b.lo.y >= b.hi.y or b.lo.z >= b.hi.z:
            raise ValueError("bounds box is degenerate")
        zb = self.layer_boundaries
        if len(zb) < 2:
            raise ValueError("need at least two layer boundaries")
        if any(b2 - b1 <= 0 for b1, b2 in zip(zb, zb[1:])):
            raise ValueError("layer_boundaries must ascend strictly")
        if abs(zb[0] - b.lo.z) > _EPS or abs(zb[-1] - b.hi.z) > _EPS:
            raise ValueError("layer_boundaries must span the bounds z extent exactly")
        for extent in (b.hi.x - b.lo.x, b.hi.y - b.lo.y):
            ratio = extent / self.cell_size
            if abs(ratio - round(ratio)) > _EPS:
                raise ValueError(
                    f"horizontal extent {extent} is not a multiple of cell_size {self.cell_size}")

    @property
    def nx(self) -> int:
        return round((self.bounds.hi.x - self.bounds.lo.x) / self.cell_size)

    @property
    def ny(self) -> int:
        return round((self.bounds.hi.y - self.bounds.lo.y) / self.cell_size)

    @property
    def layer_count(self) -> int:
        return len(self.layer_boundaries) - 1

    def layer_z_range(self, layer: int) -> tuple[float, float]:
        if not 0 <= layer < self.layer_count:
            raise InvalidIndex(f"layer {layer} out of range")
        return self.layer_boundaries[layer], self.layer_boundaries[layer + 1]

    def nk(self, layer: int) -> int:
        """Number of fine-cell levels in a layer (top level may be truncated)."""
        z0, z1 = self.layer_z_range(layer)
        return max(1, math.ceil((z1 - z0) / self.cell_size - _EPS))


@dataclass(frozen=True)
class CellIndex:
    """Address of a fine cell: coarse layer ordinal plus east/north/up offsets.

    ``k`` is layer-local; it resets to 0 at the bottom of every layer.
    """

    layer: int
    i: int
    j: int
    k: int

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.layer, self.i, self.j, self.k)


class ZoneKind(Enum):
    NO_FLY = "no-fly"
    SENSITIVE = "sensitive"
    BUFFER = "buffer"

    @property
    def severity(self) -> int:
        return _ZONE_SEVERITY[self]


_ZONE_SEVERITY = {ZoneKind.NO_FLY: 3, ZoneKind.SENSITIVE: 2, ZoneKind.BUFFER: 1}


@dataclass(frozen=True)
class CylinderZone:
    """Vertical cylinder; containment is inclusive on radius and z bounds."""

    kind: ZoneKind
    center_x: float
    center_y: float
    radius: float
    z_min: float
    z_max: float

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("cylinder radius must be positive")
        if self.z_max <= self.z_min:
            raise ValueError("cylinder z range is empty")

    def contains(self, p: Point3) -> bool:
        if not self.z_min <= p.z <= self.z_max:
            return False
        return math.hypot(p.x - self.center_x, p.y - self.center_y) <= self.radius


@dataclass(frozen=True)
class PolygonZone:
    """Extruded simple polygon (2D vertex loop over a z range)."""

    kind: ZoneKind
    vertices: tuple[tuple[float, float], ...]
    z_min: float
    z_max: float

    def __post_init__(self):
        if len(self.vertices) < 3:
            raise ValueError("polygon needs at least 3 vertices")
        if self.z_max <= self.z_min:
            raise ValueError("polygon z range is empty")
        if _self_intersects(self.vertices):
            raise ValueError("polygon loop self-intersects")

    def contains(self, p: Point3) -> bool:
        if not self.z_min <= p.z <= self.z_max:
            return False
        return _point_in_polygon(p.x, p.y, self.vertices)


Zone = CylinderZone | PolygonZone


@dataclass(frozen=True)
class ZoneSet:
    zones: tuple[Zone, ...] = ()

    def __iter__(self):
        return iter(self.zones)

    def with_zone(self, zone: Zone) -> "ZoneSet":
        return ZoneSet(self.zones + (zone,))


def _segments_properly_cross(a, b, c, d) -> bool:
    def orient(p, q, r):
        v = (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])
        return 0 if abs(v) < _EPS else (1 if v > 0 else -1)

    o1, o2 = orient(a, b, c), orient(a, b, d)
    o3, o4 = orient(c, d, a), orient(c, d, b)
    return o1 != o2 and o3 != o4 and 0 not in (o1, o2, o3, o4)


def _self_intersects(vertices: Sequence[tuple[float, float]]) -> bool:
    n = len(vertices)
    edges = [(vertices[i], vertices[(i + 1) % n]) for i in range(n)]
    for i in range(n):
        for j in range(i + 2, n):
            if i == 0 and j == n - 1:
                continue  # closing edge shares a vertex with the first
            if _segments_properly_cross(*edges[i], *edges[j]):
                return True
    return False


def _point_in_polygon(x: float, y: float, vertices: Sequence[tuple[float, float]]) -> bool:
    inside = False
    n = len(vertices)
    for idx in range(n):
        x1, y1 = vertices[idx]
        x2, y2 = vertices[(idx + 1) % n]
        if (y1 > y) != (y2 > y):
            x_cross = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if x < x_cross:
                inside = not inside
    return inside


def point_to_cell(p: Point3, spec: GridSpec) -> CellIndex:
    """Map an in-bounds point to the unique cell containing it.

    Cells are half-open boxes; points on the top/east/north volume boundary
    belong to the last cell along that axis.
    """
    b = spec.bounds
    if not b.contains(p):
        raise OutOfBounds(f"point {p.as_tuple()} outside bounds")

    def axis_index(v: float, lo: float, count: int) -> int:
        idx = int(math.floor((v - lo) / spec.cell_size))
        return min(max(idx, 0), count - 1)

    i = axis_index(p.x, b.lo.x, spec.nx)
    j = axis_index(p.y, b.lo.y, spec.ny)

    zb = spec.layer_boundaries
    layer = min(bisect_right(zb, p.z) - 1, spec.layer_count - 1)
    layer = max(layer, 0)
    z0, _ = spec.layer_z_range(layer)
    k = axis_index(p.z, z0, spec.nk(layer))
    return CellIndex(layer, i, j, k)


def _check_index(c: CellIndex, spec: GridSpec) -> None:
    if not 0 <= c.layer < spec.layer_count:
        raise InvalidIndex(f"layer {c.layer} out of range")
    if not (0 <= c.i < spec.nx and 0 <= c.j < spec.ny and 0 <= c.k < spec.nk(c.layer)):
        raise InvalidIndex(f"cell {c.as_tuple()} out of range")


def cell_to_box(c: CellIndex, spec: GridSpec) -> Box:
    """Closed box of a cell; the top row of a layer may be z-truncated."""
    _check_index(c, spec)
    b = spec.bounds
    z0, z1 = spec.layer_z_range(c.layer)
    lo = Point3(b.lo.x + c.i * spec.cell_size,
                b.lo.y + c.j * spec.cell_size,
                z0 + c.k * spec.cell_size)
    hi = Point3(lo.x + spec.cell_size,
                lo.y + spec.cell_size,
                min(lo.z + spec.cell_size, z1))
    return Box(lo, hi)


def cell_center(c: CellIndex, spec: GridSpec) -> Point3:
    return cell_to_box(c, spec).center


def is_restricted(p: Point3, zones: ZoneSet) -> Optional[ZoneKind]:
    """Highest-severity zone kind containing the point, or None when clear."""
    hit: Optional[ZoneKind] = None
    for zone in zones:
        if zone.contains(p) and (hit is None or zone.kind.severity > hit.severity):
            hit = zone.kind
    return hit


def cell_neighbors(c: CellIndex, spec: GridSpec) -> list[CellIndex]:
    """Face neighbors: 6-connected in-layer plus face-sharing cells across
    layer boundaries. Never includes the cell itself."""
    _check_index(c, spec)
    out: list[CellIndex] = []
    nk = spec.nk(c.layer)
    for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        i, j = c.i + di, c.j + dj
        if 0 <= i < spec.nx and 0 <= j < spec.ny:
            out.append(CellIndex(c.layer, i, j, c.k))
    if c.k + 1 < nk:
        out.append(CellIndex(c.layer, c.i, c.j, c.k + 1))
    elif c.layer + 1 < spec.layer_count:
        out.append(CellIndex(c.layer + 1, c.i, c.j, 0))
    if c.k > 0:
        out.append(CellIndex(c.layer, c.i, c.j, c.k - 1))
    elif c.layer > 0:
        out.append(CellIndex(c.layer - 1, c.i, c.j, spec.nk(c.layer - 1) - 1))
    return out


def make_grid(x_extent: float, y_extent: float, z_max: float,
              cell_size: float = 10.0,
              layer_boundaries: Iterable[float] | None = None,
              origin: tuple[float, float, float] = (0.0, 0.0, 0.0)) -> GridSpec:
    """Convenience constructor with the default layering: a 0-120 m small-UAV
    layer, a 120-300 m layer, and everything above 300 m as buffer."""
    ox, oy, oz = origin
    bounds = Box(Point3(ox, oy, oz), Point3(ox + x_extent, oy + y_extent, oz + z_max))
    if layer_boundaries is None:
        zb = [b for b in (0.0, 120.0, 300.0) if oz < b < oz + z_max]
        layer_boundaries = [oz] + zb + [oz + z_max]
    return GridSpec(bounds=bounds, layer_boundaries=tuple(float(z) for z in layer_boundaries),
                    cell_size=float(cell_size))
