"""Scenario ingestion: strict schema validation into typed configuration.

Scenario files are YAML mappings. Validation is strict: unknown keys are
rejected with their full path, and all diagnostics are collected before
failing so a broken file reports every problem at once. The scenario hash is
the SHA-256 of the canonical JSON form of the parsed document, so formatting
and key order do not affect identity.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Any, Optional, Sequence

import yaml

from .avoidance import AvoidanceConfig, Tier4Weights
from .corridors import (Corridor, CorridorKind, HighSpeedRing, build_corridor,
                        build_high_speed_ring)
from .envelopes import (AircraftClass, ClassLimits, Cuboid, DualEnvelope,
                        Ellipsoid, EnvelopeShape, Sphere,
                        DEFAULT_CLASS_LIMITS)
from .errors import InvalidScenario, SkyGridError
from .grid import (Box, CellIndex, CylinderZone, GridSpec, Point3, PolygonZone,
                   ZoneKind, ZoneSet)
from .links import (LinkMode, LinkModeName, Station, TERRESTRIAL_MODES,
                    default_link_modes)
from .rules import RuleConfig
from .tracking import AnomalyThresholds, KalmanParams

DEFAULT_DT_S = 0.1
DEFAULT_DURATION_S = 120.0


@dataclass(frozen=True)
class Waypoint:
    position: Point3
    time_s: float


@dataclass(frozen=True)
class AircraftSpec:
    id: str
    aircraft_class: AircraftClass
    envelope: DualEnvelope
    waypoints: tuple[Waypoint, ...]
    corridor: Optional[str] = None


@dataclass(frozen=True)
class TrackerInit:
    pos_var: float = 100.0
    vel_var: float = 25.0


@dataclass
class Scenario:
    name: str
    seed: int
    dt_s: float
    duration_s: float
    grid: GridSpec
    zones: ZoneSet
    landing_fields: tuple[CylinderZone, ...]
    corridors: list[Corridor]
    ring: Optional[HighSpeedRing]
    stations: list[Station]
    link_modes: dict[LinkModeName, LinkMode]
    aircraft: list[AircraftSpec]
    rules: RuleConfig
    avoidance: AvoidanceConfig
    avoidance_enabled: bool
    tier4_weights: Tier4Weights
    kalman: KalmanParams
    tracker_init: TrackerInit
    anomalies: AnomalyThresholds
    class_limits: dict[AircraftClass, ClassLimits]
    raw: dict = field(repr=False, default_factory=dict)

    @property
    def hash(self) -> str:
        return scenario_hash(self.raw)


def scenario_hash(raw: dict) -> str:
    canonical = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


class _Check:
    """Collects path-qualified diagnostics; raises them all at once."""

    def __init__(self) -> None:
        self.problems: list[str] = []

    def fail(self, path: str, message: str) -> None:
        self.problems.append(f"{path}: {message}")

    def mapping(self, data: Any, path: str, allowed: set[str],
                required: set[str] = frozenset()) -> dict:
        if not isinstance(data, dict):
            self.fail(path, f"expected a mapping, got {type(data).__name__}")
            return {}
        unknown = sorted(set(data) - allowed)
        if unknown:
            self.fail(path, f"unknown keys {unknown} (allowed: {sorted(allowed)})")
        for key in sorted(required - set(data)):
            self.fail(path, f"missing required key '{key}'")
        return data

    def number(self, data: Any, path: str, *, positive: bool = False,
               nonnegative: bool = False, default=None) -> float:
        if data is None and default is not None:
            return default
        if not isinstance(data, (int, float)) or isinstance(data, bool) \
                or not math.isfinite(data):
            self.fail(path, f"expected a finite number, got {data!r}")
            return float("nan")
        v = float(data)
        if positive and v <= 0:
            self.fail(path, f"must be positive, got {v}")
        if nonnegative and v < 0:
            self.fail(path, f"must be non-negative, got {v}")
        return v

    def xyz(self, data: Any, path: str) -> tuple[float, float, float]:
        if not isinstance(data, (list, tuple)) or len(data) != 3:
            self.fail(path, f"expected [x, y, z], got {data!r}")
            return (0.0, 0.0, 0.0)
        return tuple(self.number(v, f"{path}[{i}]")
                     for i, v in enumerate(data))  # type: ignore[return-value]

    def xy(self, data: Any, path: str) -> tuple[float, float]:
        if not isinstance(data, (list, tuple)) or len(data) != 2:
            self.fail(path, f"expected [x, y], got {data!r}")
            return (0.0, 0.0)
        return tuple(self.number(v, f"{path}[{i}]")
                     for i, v in enumerate(data))  # type: ignore[return-value]

    def raise_if_failed(self) -> None:
        if self.problems:
            raise InvalidScenario("\n".join(self.problems))


def _parse_grid(data: dict, chk: _Check) -> Optional[GridSpec]:
    g = chk.mapping(data, "grid", {"bounds", "layer_boundaries", "cell_size"},
                    {"bounds", "cell_size"})
    b = chk.mapping(g.get("bounds", {}), "grid.bounds",
                    {"x_min", "x_max", "y_min", "y_max", "z_min", "z_max"},
                    {"x_max", "y_max", "z_max"})
    lo = Point3(chk.number(b.get("x_min", 0.0), "grid.bounds.x_min"),
                chk.number(b.get("y_min", 0.0), "grid.bounds.y_min"),
                chk.number(b.get("z_min", 0.0), "grid.bounds.z_min"))
    hi_vals = (chk.number(b.get("x_max"), "grid.bounds.x_max"),
               chk.number(b.get("y_max"), "grid.bounds.y_max"),
               chk.number(b.get("z_max"), "grid.bounds.z_max"))
    cell = chk.number(g.get("cell_size"), "grid.cell_size", positive=True)
    layers = g.get("layer_boundaries")
    if chk.problems:
        return None
    hi = Point3(*hi_vals)
    if layers is None:
        bounds_list = [lo.z]
        for z in (120.0, 300.0):
            if lo.z < z < hi.z:
                bounds_list.append(z)
        bounds_list.append(hi.z)
        layers = bounds_list
    elif not isinstance(layers, list):
        chk.fail("grid.layer_boundaries", "expected a list of z values")
        return None
    try:
        return GridSpec(bounds=Box(lo, hi),
                        layer_boundaries=tuple(float(z) for z in layers),
                        cell_size=cell)
    except (ValueError, TypeError) as err:
        chk.fail("grid", str(err))
        return None


_ZONE_KINDS = {k.value: k for k in ZoneKind}


def _parse_zone(data: dict, path: str, chk: _Check):
    z = chk.mapping(data, path,
                    {"kind", "shape", "center", "radius", "z", "vertices"},
                    {"kind", "shape"})
    kind_raw = z.get("kind")
    if kind_raw not in _ZONE_KINDS:
        chk.fail(f"{path}.kind", f"expected one of {sorted(_ZONE_KINDS)}, "
                                 f"got {kind_raw!r}")
        return None
    kind = _ZONE_KINDS[kind_raw]
    zr = z.get("z", [0.0, float("inf")])
    if not isinstance(zr, (list, tuple)) or len(zr) != 2:
        chk.fail(f"{path}.z", f"expected [z_min, z_max], got {zr!r}")
        return None
    z_min = chk.number(zr[0], f"{path}.z[0]")
    if isinstance(zr[1], (int, float)) and math.isinf(zr[1]):
        z_max = float("inf")
    else:
        z_max = chk.number(zr[1], f"{path}.z[1]")
    shape = z.get("shape")
    try:
        if shape == "cylinder":
            cx, cy = chk.xy(z.get("center"), f"{path}.center")
            radius = chk.number(z.get("radius"), f"{path}.radius", positive=True)
            if chk.problems:
                return None
            return CylinderZone(kind, cx, cy, radius, z_min, z_max)
        if shape == "polygon":
            verts = z.get("vertices")
            if not isinstance(verts, list) or len(verts) < 3:
                chk.fail(f"{path}.vertices", "expected >= 3 [x, y] pairs")
                return None
            loop = tuple(chk.xy(v, f"{path}.vertices[{i}]")
                         for i, v in enumerate(verts))
            if chk.problems:
                return None
            return PolygonZone(kind, loop, z_min, z_max)
    except (ValueError, SkyGridError) as err:
        chk.fail(path, str(err))
        return None
    chk.fail(f"{path}.shape", f"expected cylinder or polygon, got {shape!r}")
    return None


def _parse_landing_field(data: dict, path: str, chk: _Check):
    f = chk.mapping(data, path, {"center", "radius", "z"},
                    {"center", "radius"})
    cx, cy = chk.xy(f.get("center"), f"{path}.center")
    radius = chk.number(f.get("radius"), f"{path}.radius", positive=True)
    zr = f.get("z", [0.0, 50.0])
    if not isinstance(zr, (list, tuple)) or len(zr) != 2:
        chk.fail(f"{path}.z", f"expected [z_min, z_max], got {zr!r}")
        return None
    z0 = chk.number(zr[0], f"{path}.z[0]")
    z1 = chk.number(zr[1], f"{path}.z[1]")
    if chk.problems:
        return None
    try:
        return CylinderZone(ZoneKind.BUFFER, cx, cy, radius, z0, z1)
    except ValueError as err:
        chk.fail(path, str(err))
        return None


_CORRIDOR_KINDS = {k.value: k for k in CorridorKind}


def _parse_corridors(data: dict, chk: _Check, spec: Optional[GridSpec],
                     zones: ZoneSet
                     ) -> tuple[list[Corridor], Optional[HighSpeedRing]]:
    c = chk.mapping(data, "corridors", {"explicit", "ring"})
    corridors: list[Corridor] = []
    ring = None
    for i, item in enumerate(c.get("explicit", []) or []):
        path = f"corridors.explicit[{i}]"
        e = chk.mapping(item, path, {"id", "kind", "speed", "cells"},
                        {"id", "kind", "speed", "cells"})
        kind_raw = e.get("kind")
        if kind_raw not in _CORRIDOR_KINDS:
            chk.fail(f"{path}.kind",
                     f"expected one of {sorted(_CORRIDOR_KINDS)}, got {kind_raw!r}")
            continue
        speed = chk.number(e.get("speed"), f"{path}.speed", positive=True)
        cells_raw = e.get("cells")
        if not isinstance(cells_raw, list) or not cells_raw:
            chk.fail(f"{path}.cells", "expected a non-empty list of "
                                      "[layer, i, j, k]")
            continue
        cells = []
        ok = True
        for n, idx in enumerate(cells_raw):
            if (not isinstance(idx, (list, tuple)) or len(idx) != 4
                    or not all(isinstance(v, int) for v in idx)):
                chk.fail(f"{path}.cells[{n}]",
                         f"expected [layer, i, j, k] integers, got {idx!r}")
                ok = False
                break
            cells.append(CellIndex(*idx))
        if not ok or spec is None or chk.problems:
            continue
        try:
            corridors.append(build_corridor(
                cells, _CORRIDOR_KINDS[kind_raw], speed, spec,
                corridor_id=str(e.get("id")), zones=zones))
        except SkyGridError as err:
            chk.fail(path, str(err))
    if "ring" in c and c["ring"] is not None:
        r = chk.mapping(c["ring"], "corridors.ring",
                        {"center", "radii", "z", "speed", "emergency_speed",
                         "id_prefix"},
                        {"center", "radii", "z", "speed"})
        cx, cy = chk.xy(r.get("center"), "corridors.ring.center")
        radii_raw = r.get("radii")
        if not isinstance(radii_raw, (list, tuple)) or len(radii_raw) != 4:
            chk.fail("corridors.ring.radii", "expected four ascending radii")
            radii_raw = None
        zr = r.get("z")
        if not isinstance(zr, (list, tuple)) or len(zr) != 2:
            chk.fail("corridors.ring.z", f"expected [z_min, z_max], got {zr!r}")
            zr = None
        speed = chk.number(r.get("speed"), "corridors.ring.speed", positive=True)
        if radii_raw is not None and zr is not None and spec is not None \
                and not chk.problems:
            emergency_speed = r.get("emergency_speed")
            try:
                loops, emergency, ring = build_high_speed_ring(
                    Point3(cx, cy, float(zr[0])),
                    tuple(float(v) for v in radii_raw),
                    (float(zr[0]), float(zr[1])), speed, spec, zones=zones,
                    id_prefix=str(r.get("id_prefix", "ring")),
                    emergency_speed=(float(emergency_speed)
                                     if emergency_speed is not None else None))
                corridors.extend(loops)
                corridors.append(emergency)
            except SkyGridError as err:
                chk.fail("corridors.ring", str(err))
    ids = [c.id for c in corridors]
    for dup in sorted({i for i in ids if ids.count(i) > 1}):
        chk.fail("corridors", f"duplicate corridor id '{dup}'")
    return corridors, ring


_MODE_NAMES = {m.value: m for m in LinkModeName}

_LINK_FIELDS = {"frequency_MHz", "tx_power_W", "bandwidth_MHz",
                "sensitivity_dBm", "noise_figure_dB", "reference_altitude_m",
                "measurement_sigma_m"}


def _parse_link_modes(data: dict, chk: _Check) -> dict[LinkModeName, LinkMode]:
    modes = default_link_modes()
    m = chk.mapping(data, "link_modes", set(_MODE_NAMES))
    for name_raw, overrides in sorted(m.items()):
        if name_raw not in _MODE_NAMES:
            continue
        name = _MODE_NAMES[name_raw]
        o = chk.mapping(overrides or {}, f"link_modes.{name_raw}", _LINK_FIELDS)
        base = modes[name]
        kwargs = {}
        for key in sorted(_LINK_FIELDS):
            if key in o:
                kwargs[key] = chk.number(o[key], f"link_modes.{name_raw}.{key}")
        if chk.problems:
            continue
        try:
            modes[name] = LinkMode(name=name, **{
                **{f: getattr(base, f) for f in _LINK_FIELDS}, **kwargs})
        except ValueError as err:
            chk.fail(f"link_modes.{name_raw}", str(err))
    return modes


def _parse_stations(data: list, chk: _Check) -> list[Station]:
    stations = []
    for i, item in enumerate(data or []):
        path = f"stations[{i}]"
        s = chk.mapping(item, path, {"id", "position", "modes"},
                        {"id", "position"})
        pos = chk.xyz(s.get("position"), f"{path}.position")
        modes_raw = s.get("modes", [m.value for m in TERRESTRIAL_MODES])
        modes = []
        for m in modes_raw:
            if m not in _MODE_NAMES:
                chk.fail(f"{path}.modes", f"unknown mode {m!r}")
            else:
                modes.append(_MODE_NAMES[m])
        if chk.problems:
            continue
        stations.append(Station(id=str(s.get("id")), position=Point3(*pos),
                                modes=tuple(modes)))
    return stations


_CLASS_NAMES = {c.value: c for c in AircraftClass}


def _parse_envelope(data: dict, path: str, chk: _Check,
                    margin: float) -> Optional[DualEnvelope]:
    e = chk.mapping(data, path,
                    {"shape", "radius", "a", "b", "c", "hx", "hy", "hz"},
                    {"shape"})
    shape_raw = e.get("shape")
    shape: Optional[EnvelopeShape] = None
    try:
        if shape_raw == "sphere":
            shape = Sphere(chk.number(e.get("radius"), f"{path}.radius",
                                      positive=True))
        elif shape_raw == "ellipsoid":
            shape = Ellipsoid(chk.number(e.get("a"), f"{path}.a", positive=True),
                              chk.number(e.get("b"), f"{path}.b", positive=True),
                              chk.number(e.get("c"), f"{path}.c", positive=True))
        elif shape_raw == "cuboid":
            shape = Cuboid(chk.number(e.get("hx"), f"{path}.hx", nonnegative=True),
                           chk.number(e.get("hy"), f"{path}.hy", nonnegative=True),
                           chk.number(e.get("hz"), f"{path}.hz", nonnegative=True))
        else:
            chk.fail(f"{path}.shape",
                     f"expected sphere, ellipsoid, or cuboid, got {shape_raw!r}")
            return None
        if chk.problems:
            return None
        return DualEnvelope(physical=shape, safety_margin=margin)
    except ValueError as err:
        chk.fail(path, str(err))
        return None


def _parse_aircraft(data: list, chk: _Check, spec: Optional[GridSpec],
                    corridor_ids: set[str]) -> list[AircraftSpec]:
    roster = []
    seen_ids: set[str] = set()
    for i, item in enumerate(data or []):
        path = f"aircraft[{i}]"
        a = chk.mapping(item, path,
                        {"id", "class", "envelope", "safety_margin",
                         "waypoints", "corridor"},
                        {"id", "class", "envelope", "waypoints"})
        aid = str(a.get("id"))
        if aid in seen_ids:
            chk.fail(f"{path}.id", f"duplicate aircraft id '{aid}'")
        seen_ids.add(aid)
        cls_raw = a.get("class")
        if cls_raw not in _CLASS_NAMES:
            chk.fail(f"{path}.class",
                     f"expected one of {sorted(_CLASS_NAMES)}, got {cls_raw!r}")
            continue
        margin = chk.number(a.get("safety_margin", 10.0),
                            f"{path}.safety_margin", nonnegative=True)
        envelope = _parse_envelope(a.get("envelope", {}), f"{path}.envelope",
                                   chk, margin)
        corridor = a.get("corridor")
        if corridor is not None and str(corridor) not in corridor_ids:
            chk.fail(f"{path}.corridor",
                     f"references unknown corridor '{corridor}'")
        wps_raw = a.get("waypoints")
        if not isinstance(wps_raw, list) or not wps_raw:
            chk.fail(f"{path}.waypoints", "expected a non-empty list")
            continue
        wps = []
        for n, w in enumerate(wps_raw):
            wp = chk.mapping(w, f"{path}.waypoints[{n}]",
                             {"position", "time_s"}, {"position", "time_s"})
            pos = chk.xyz(wp.get("position"), f"{path}.waypoints[{n}].position")
            t = chk.number(wp.get("time_s"), f"{path}.waypoints[{n}].time_s",
                           nonnegative=True)
            if chk.problems:
                continue
            point = Point3(*pos)
            if spec is not None and not spec.bounds.contains(point):
                chk.fail(f"{path}.waypoints[{n}].position",
                         f"{pos} outside grid bounds")
            wps.append(Waypoint(position=point, time_s=t))
        if len(wps) == len(wps_raw):
            times = [w.time_s for w in wps]
            if any(b <= a2 for a2, b in zip(times, times[1:])):
                chk.fail(f"{path}.waypoints",
                         f"times must increase strictly, got {times}")
        if envelope is None or chk.problems:
            continue
        roster.append(AircraftSpec(
            id=aid, aircraft_class=_CLASS_NAMES[cls_raw], envelope=envelope,
            waypoints=tuple(wps),
            corridor=str(corridor) if corridor is not None else None))
    return roster


_AVOIDANCE_FIELDS = {
    "enabled", "horizon_s", "alert_factor", "cluster_edge_threshold",
    "tier2_target_severity", "tier2_max_iters", "tier2_step_mps",
    "tier3_severity_threshold", "clearance_guard_m", "angle_weight",
    "altitude_weight", "speed_weight", "altitude_scale_m", "speed_scale_mps",
}

_TIER4_FIELDS = {"time", "collision", "rel_velocity", "separation", "control"}

TOP_LEVEL_KEYS = {
    "name", "seed", "dt_s", "duration_s", "grid", "zones", "landing_fields",
    "corridors", "stations", "link_modes", "aircraft", "rules", "avoidance",
    "tier4_weights", "tracking", "anomalies", "class_limits",
}


def parse_scenario(raw: Any) -> Scenario:
    """Validate a parsed YAML document into a Scenario."""
    chk = _Check()
    if not isinstance(raw, dict):
        raise InvalidScenario("scenario must be a mapping at top level")
    chk.mapping(raw, "scenario", TOP_LEVEL_KEYS, {"grid", "aircraft"})

    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        chk.fail("seed", f"expected a non-negative integer, got {seed!r}")
        seed = 0
    dt = chk.number(raw.get("dt_s", DEFAULT_DT_S), "dt_s", positive=True)
    duration = chk.number(raw.get("duration_s", DEFAULT_DURATION_S),
                          "duration_s", positive=True)

    spec = _parse_grid(raw.get("grid", {}), chk)

    zone_list = []
    for i, z in enumerate(raw.get("zones", []) or []):
        zone = _parse_zone(z, f"zones[{i}]", chk)
        if zone is not None:
            zone_list.append(zone)
    zones = ZoneSet(tuple(zone_list))

    fields = []
    for i, f in enumerate(raw.get("landing_fields", []) or []):
        lf = _parse_landing_field(f, f"landing_fields[{i}]", chk)
        if lf is not None:
            fields.append(lf)

    corridors, ring = _parse_corridors(raw.get("corridors", {}) or {}, chk,
                                       spec, zones)
    stations = _parse_stations(raw.get("stations", []), chk)
    link_modes = _parse_link_modes(raw.get("link_modes", {}) or {}, chk)
    roster = _parse_aircraft(raw.get("aircraft", []), chk, spec,
                             {c.id for c in corridors})

    r = chk.mapping(raw.get("rules", {}) or {}, "rules",
                    {"speed_tolerance_frac", "min_gap_cells", "min_altitude_m"})
    gap = r.get("min_gap_cells", 2)
    if not isinstance(gap, int) or gap < 1:
        chk.fail("rules.min_gap_cells", f"expected integer >= 1, got {gap!r}")
        gap = 2
    rules = RuleConfig(
        speed_tolerance_frac=chk.number(r.get("speed_tolerance_frac", 0.1),
                                        "rules.speed_tolerance_frac",
                                        nonnegative=True),
        min_gap_cells=gap,
        min_altitude_m=chk.number(r.get("min_altitude_m", 30.0),
                                  "rules.min_altitude_m", nonnegative=True))

    av = chk.mapping(raw.get("avoidance", {}) or {}, "avoidance",
                     _AVOIDANCE_FIELDS)
    enabled = av.get("enabled", True)
    if not isinstance(enabled, bool):
        chk.fail("avoidance.enabled", f"expected true/false, got {enabled!r}")
        enabled = True
    iters = av.get("tier2_max_iters", 50)
    if not isinstance(iters, int) or iters < 1:
        chk.fail("avoidance.tier2_max_iters",
                 f"expected integer >= 1, got {iters!r}")
        iters = 50
    defaults = AvoidanceConfig()

    def avf(key: str) -> float:
        return chk.number(av.get(key, getattr(defaults, key)),
                          f"avoidance.{key}")

    avoidance = AvoidanceConfig(
        horizon_s=avf("horizon_s"), alert_factor=avf("alert_factor"),
        cluster_edge_threshold=avf("cluster_edge_threshold"),
        tier2_target_severity=avf("tier2_target_severity"),
        tier2_max_iters=iters, tier2_step_mps=avf("tier2_step_mps"),
        tier3_severity_threshold=avf("tier3_severity_threshold"),
        clearance_guard_m=avf("clearance_guard_m"),
        angle_weight=avf("angle_weight"),
        altitude_weight=avf("altitude_weight"),
        speed_weight=avf("speed_weight"),
        altitude_scale_m=avf("altitude_scale_m"),
        speed_scale_mps=avf("speed_scale_mps"))

    t4 = chk.mapping(raw.get("tier4_weights", {}) or {}, "tier4_weights",
                     _TIER4_FIELDS)
    t4_defaults = Tier4Weights()
    tier4 = Tier4Weights(**{k: chk.number(t4.get(k, getattr(t4_defaults, k)),
                                          f"tier4_weights.{k}")
                            for k in sorted(_TIER4_FIELDS)})

    tr = chk.mapping(raw.get("tracking", {}) or {}, "tracking",
                     {"process_accel_var", "gate", "pos_var", "vel_var"})
    kalman = KalmanParams(
        process_accel_var=chk.number(tr.get("process_accel_var", 1.0),
                                     "tracking.process_accel_var",
                                     nonnegative=True),
        gate=chk.number(tr.get("gate", 3.0), "tracking.gate", positive=True))
    tracker_init = TrackerInit(
        pos_var=chk.number(tr.get("pos_var", 100.0), "tracking.pos_var",
                           positive=True),
        vel_var=chk.number(tr.get("vel_var", 25.0), "tracking.vel_var",
                           positive=True))

    an = chk.mapping(raw.get("anomalies", {}) or {}, "anomalies",
                     {"trajectory_deviation_m", "speed_fluctuation_mps2",
                      "signal_loss_ticks"})
    loss_ticks = an.get("signal_loss_ticks", 3)
    if not isinstance(loss_ticks, int) or loss_ticks < 1:
        chk.fail("anomalies.signal_loss_ticks",
                 f"expected integer >= 1, got {loss_ticks!r}")
        loss_ticks = 3
    anomalies = AnomalyThresholds(
        trajectory_deviation_m=chk.number(
            an.get("trajectory_deviation_m", 50.0),
            "anomalies.trajectory_deviation_m", positive=True),
        speed_fluctuation_mps2=chk.number(
            an.get("speed_fluctuation_mps2", 10.0),
            "anomalies.speed_fluctuation_mps2", positive=True),
        signal_loss_ticks=loss_ticks)

    limits = dict(DEFAULT_CLASS_LIMITS)
    cl = chk.mapping(raw.get("class_limits", {}) or {}, "class_limits",
                     set(_CLASS_NAMES))
    for cls_raw, overrides in sorted(cl.items()):
        if cls_raw not in _CLASS_NAMES:
            continue
        cls = _CLASS_NAMES[cls_raw]
        o = chk.mapping(overrides or {}, f"class_limits.{cls_raw}",
                        {"max_speed", "max_turn_rate", "max_accel",
                         "max_climb_rate"})
        base = limits[cls]
        limits[cls] = ClassLimits(
            max_speed=chk.number(o.get("max_speed", base.max_speed),
                                 f"class_limits.{cls_raw}.max_speed",
                                 positive=True),
            max_turn_rate=chk.number(o.get("max_turn_rate", base.max_turn_rate),
                                     f"class_limits.{cls_raw}.max_turn_rate",
                                     nonnegative=True),
            max_accel=chk.number(o.get("max_accel", base.max_accel),
                                 f"class_limits.{cls_raw}.max_accel",
                                 nonnegative=True),
            max_climb_rate=chk.number(o.get("max_climb_rate",
                                            base.max_climb_rate),
                                      f"class_limits.{cls_raw}.max_climb_rate",
                                      nonnegative=True))

    chk.raise_if_failed()
    assert spec is not None
    return Scenario(
        name=str(raw.get("name", "unnamed")), seed=seed, dt_s=dt,
        duration_s=duration, grid=spec, zones=zones,
        landing_fields=tuple(fields), corridors=corridors, ring=ring,
        stations=stations, link_modes=link_modes, aircraft=roster,
        rules=rules, avoidance=avoidance, avoidance_enabled=enabled,
        tier4_weights=tier4, kalman=kalman, tracker_init=tracker_init,
        anomalies=anomalies, class_limits=limits, raw=raw)


def load_scenario(path: str) -> Scenario:
    """Read and validate a scenario file."""
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except OSError as err:
        raise InvalidScenario(f"cannot read scenario file: {err}") from err
    except yaml.YAMLError as err:
        raise InvalidScenario(f"scenario file is not valid YAML: {err}") from err
    return parse_scenario(raw)
