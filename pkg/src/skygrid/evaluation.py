"""Post-run evaluation: indicator construction from event logs and
hierarchical weight aggregation.

Indicators are min-max normalized into [0,1] with 1 always the favorable
end (rate-style metrics are inverted), so the composite score is monotone in
every leaf. Weights come from pairwise comparison matrices via the principal
eigenvector; triangular-fuzzy judgments are collapsed by centroid before the
eigen-analysis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import DimensionMismatch, EmptyLog, NotReciprocal
from .grid import Box, CellIndex, GridSpec, Point3, point_to_cell

GROUPS = ("airspace_structure", "aircraft_performance", "operational_safety")
LEAVES: dict[str, tuple[str, ...]] = {
    "airspace_structure": ("corridor_utilization", "intersection_load"),
    "aircraft_performance": ("speed_conformity", "energy_proxy"),
    "operational_safety": ("violation_rate", "min_separation_ratio",
                           "anomaly_rate"),
}

# Saaty random-index table for consistency ratios.
RANDOM_INDEX = {1: 0.0, 2: 0.0, 3: 0.58, 4: 0.90, 5: 1.12,
                6: 1.24, 7: 1.32, 8: 1.41, 9: 1.45}

CONSISTENCY_BOUND = 0.1
POWER_ITERATION_RESIDUAL = 1e-10
RECIPROCAL_TOL = 1e-9


@dataclass(frozen=True)
class NormalizationBounds:
    """Raw-metric caps used for min-max scaling of rate-style indicators."""

    max_violation_rate_per_hour: float = 60.0
    max_anomaly_rate_per_hour: float = 60.0
    max_control_effort_mps2: float = 5.0


@dataclass
class IndicatorSet:
    """Leaf indicators grouped into the three evaluation dimensions.

    ``bounds`` records, per leaf, the raw value, the normalization interval,
    and whether the scale was inverted (1 = favorable throughout).
    """

    values: dict[str, dict[str, float]]
    bounds: dict[str, dict] = field(default_factory=dict)

    def __post_init__(self):
        for group in GROUPS:
            if group not in self.values:
                raise DimensionMismatch(f"missing indicator group {group}")
            for leaf in LEAVES[group]:
                if leaf not in self.values[group]:
                    raise DimensionMismatch(f"missing indicator {leaf}")
                v = self.values[group][leaf]
                if not 0.0 <= v <= 1.0:
                    raise ValueError(f"indicator {leaf}={v} outside [0,1]")

    def group_vector(self, group: str) -> np.ndarray:
        return np.array([self.values[group][leaf] for leaf in LEAVES[group]])


def _clamp01(x: float) -> float:
    return min(max(x, 0.0), 1.0)


def _normalize(raw: float, hi: float, *, invert: bool) -> tuple[float, dict]:
    scaled = _clamp01(raw / hi if hi > 0 else 0.0)
    value = 1.0 - scaled if invert else scaled
    return value, {"raw": raw, "lo": 0.0, "hi": hi, "inverted": invert}


def _header_and_ticks(events: Iterable[dict]) -> tuple[dict, list[dict]]:
    header: Optional[dict] = None
    ticks: list[dict] = []
    for ev in events:
        if ev.get("type") == "header":
            header = ev
        elif ev.get("type") == "tick":
            ticks.append(ev)
    if header is None or not ticks:
        raise EmptyLog("need a header and at least one completed tick")
    return header, ticks


def grid_from_header(header: dict) -> GridSpec:
    g = header["grid"]
    lo, hi = g["bounds"]
    return GridSpec(bounds=Box(Point3(*lo), Point3(*hi)),
                    layer_boundaries=tuple(g["layer_boundaries"]),
                    cell_size=g["cell_size"])


def build_indicators(events: Iterable[dict],
                     bounds: NormalizationBounds = NormalizationBounds()
                     ) -> IndicatorSet:
    """Aggregate a finished event log into the normalized indicator set."""
    header, ticks = _header_and_ticks(events)
    spec = grid_from_header(header)
    dt = float(header["dt_s"])
    n_ticks = len(ticks)
    hours = n_ticks * dt / 3600.0

    corridor_cells: dict[str, set[CellIndex]] = {}
    corridor_speed: dict[str, float] = {}
    total_corridor_cells = 0
    for c in header.get("corridors", []):
        cells = {CellIndex(*idx) for idx in c["cells"]}
        corridor_cells[c["id"]] = cells
        corridor_speed[c["id"]] = float(c["speed"])
        total_corridor_cells += len(cells)
    shared = {CellIndex(*idx) for idx in header.get("shared_cells", [])}
    outer_radius = {a["id"]: float(a["outer_radius"])
                    for a in header.get("aircraft", [])}

    n_aircraft = max(len(outer_radius), 1)
    occupied_corridor_cell_ticks = 0
    occupied_shared_cell_ticks = 0
    conformities: list[float] = []
    min_sep_ratio = 1.0
    n_violations = 0
    n_anomalies = 0
    prev_vel: dict[str, np.ndarray] = {}
    effort_sum = 0.0
    effort_count = 0

    for tk in ticks:
        states = tk.get("states", [])
        n_violations += len(tk.get("violations", []))
        n_anomalies += len(tk.get("anomalies", []))

        occupied: dict[str, set[CellIndex]] = {}
        occupied_shared: set[CellIndex] = set()
        pos = np.array([s["pos"] for s in states]) if states else np.zeros((0, 3))
        for s in states:
            cell = point_to_cell(Point3(*s["pos"]), spec)
            cid = s.get("corridor")
            if cid in corridor_cells and cell in corridor_cells[cid]:
                occupied.setdefault(cid, set()).add(cell)
            if cell in shared:
                occupied_shared.add(cell)
            speed = float(np.linalg.norm(s["vel"]))
            if cid in corridor_speed:
                ref = corridor_speed[cid]
                conformities.append(_clamp01(1.0 - abs(speed - ref) / ref))
            v = np.asarray(s["vel"], dtype=float)
            if s["id"] in prev_vel:
                effort_sum += float(np.linalg.norm(v - prev_vel[s["id"]])) / dt
                effort_count += 1
            prev_vel[s["id"]] = v
        occupied_corridor_cell_ticks += sum(len(v) for v in occupied.values())
        occupied_shared_cell_ticks += len(occupied_shared)

        for i in range(len(states)):
            for j in range(i + 1, len(states)):
                d = float(np.linalg.norm(pos[i] - pos[j]))
                req = (outer_radius.get(states[i]["id"], 0.0)
                       + outer_radius.get(states[j]["id"], 0.0))
                if req > 0:
                    min_sep_ratio = min(min_sep_ratio, _clamp01(d / req))

    values: dict[str, dict[str, float]] = {g: {} for g in GROUPS}
    rec: dict[str, dict] = {}

    denom = total_corridor_cells * n_ticks
    util = occupied_corridor_cell_ticks / denom if denom else 0.0
    values["airspace_structure"]["corridor_utilization"] = _clamp01(util)
    rec["corridor_utilization"] = {"raw": util, "lo": 0.0, "hi": 1.0,
                                   "inverted": False}

    denom = len(shared) * n_ticks
    load = occupied_shared_cell_ticks / denom if denom else 0.0
    values["airspace_structure"]["intersection_load"] = _clamp01(1.0 - load)
    rec["intersection_load"] = {"raw": load, "lo": 0.0, "hi": 1.0,
                                "inverted": True}

    conf = sum(conformities) / len(conformities) if conformities else 1.0
    values["aircraft_performance"]["speed_conformity"] = _clamp01(conf)
    rec["speed_conformity"] = {"raw": conf, "lo": 0.0, "hi": 1.0,
                               "inverted": False}

    effort = effort_sum / effort_count if effort_count else 0.0
    v, b = _normalize(effort, bounds.max_control_effort_mps2, invert=True)
    values["aircraft_performance"]["energy_proxy"] = v
    rec["energy_proxy"] = b

    vr = n_violations / (n_aircraft * hours) if hours > 0 else 0.0
    v, b = _normalize(vr, bounds.max_violation_rate_per_hour, invert=True)
    values["operational_safety"]["violation_rate"] = v
    rec["violation_rate"] = b

    values["operational_safety"]["min_separation_ratio"] = min_sep_ratio
    rec["min_separation_ratio"] = {"raw": min_sep_ratio, "lo": 0.0, "hi": 1.0,
                                   "inverted": False}

    ar = n_anomalies / (n_aircraft * hours) if hours > 0 else 0.0
    v, b = _normalize(ar, bounds.max_anomaly_rate_per_hour, invert=True)
    values["operational_safety"]["anomaly_rate"] = v
    rec["anomaly_rate"] = b

    return IndicatorSet(values=values, bounds=rec)


@dataclass(frozen=True)
class ComparisonMatrix:
    """Positive reciprocal judgment matrix, crisp (n,n) or triangular-fuzzy
    (n,n,3) with (low, mid, high) entries."""

    entries: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.entries, dtype=float)
        object.__setattr__(self, "entries", a)
        if a.ndim == 2:
            n, m = a.shape
            if n != m or n < 2:
                raise NotReciprocal("matrix must be square with n >= 2")
            if np.any(a <= 0):
                raise NotReciprocal("entries must be positive")
            if not np.allclose(np.diag(a), 1.0, atol=RECIPROCAL_TOL):
                raise NotReciprocal("diagonal must be 1")
            if not np.allclose(a * a.T, 1.0, atol=1e-6):
                raise NotReciprocal("a_ij * a_ji must equal 1")
        elif a.ndim == 3 and a.shape[2] == 3:
            n, m = a.shape[:2]
            if n != m or n < 2:
                raise NotReciprocal("matrix must be square with n >= 2")
            if np.any(a <= 0):
                raise NotReciprocal("entries must be positive")
            if np.any(a[:, :, 0] > a[:, :, 1]) or np.any(a[:, :, 1] > a[:, :, 2]):
                raise NotReciprocal("fuzzy entries need low <= mid <= high")
            for i in range(n):
                if not np.allclose(a[i, i], 1.0, atol=RECIPROCAL_TOL):
                    raise NotReciprocal("diagonal must be (1,1,1)")
            # reciprocity on inverted support: (l,m,u)_ji = (1/u, 1/m, 1/l)_ij
            flipped = a[..., ::-1]
            if not np.allclose(a * flipped.transpose(1, 0, 2), 1.0, atol=1e-6):
                raise NotReciprocal("fuzzy reciprocity violated")
        else:
            raise NotReciprocal("entries must be (n,n) or (n,n,3)")

    @property
    def is_fuzzy(self) -> bool:
        return self.entries.ndim == 3

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def defuzzified(self) -> np.ndarray:
        """Centroid collapse (l+m+u)/3 of fuzzy entries; crisp pass-through.

        The centroid matrix keeps a unit diagonal but is generally no longer
        exactly reciprocal; eigen-analysis does not require it to be.
        """
        if self.is_fuzzy:
            return self.entries.mean(axis=2)
        return np.array(self.entries)


@dataclass(frozen=True)
class AhpResult:
    weights: np.ndarray
    consistency_ratio: float
    lambda_max: float
    inconsistent: bool


def ahp_weights(matrix: ComparisonMatrix) -> AhpResult:
    """Principal-eigenvector weights plus the consistency ratio.

    Inconsistent matrices (ratio > 0.1) are returned flagged, never
    rejected, so callers can decide how to escalate.
    """
    a = matrix.defuzzified()
    n = a.shape[0]
    if not 2 <= n <= 9:
        raise NotReciprocal("supported judgment sizes are 2..9")
    w = np.full(n, 1.0 / n)
    lam = float(n)
    for _ in range(100_000):
        aw = a @ w
        total = aw.sum()
        w_new = aw / total
        lam = total  # since w sums to 1, sum(Aw) is the Rayleigh estimate
        if np.max(np.abs(a @ w_new - lam * w_new)) < POWER_ITERATION_RESIDUAL:
            w = w_new
            break
        w = w_new
    ri = RANDOM_INDEX[n]
    ci = (lam - n) / (n - 1)
    cr = ci / ri if ri > 0 else 0.0
    cr = max(cr, 0.0)
    return AhpResult(weights=w, consistency_ratio=cr, lambda_max=lam,
                     inconsistent=cr > CONSISTENCY_BOUND)


def composite_score(indicators: IndicatorSet, group_weights: np.ndarray,
                    leaf_weights: Mapping[str, np.ndarray]) -> float:
    """Two-level weighted aggregate of the indicator hierarchy."""
    gw = np.asarray(group_weights, dtype=float)
    if gw.shape != (len(GROUPS),):
        raise DimensionMismatch(f"need {len(GROUPS)} group weights")
    score = 0.0
    for g, weight in zip(GROUPS, gw):
        if g not in leaf_weights:
            raise DimensionMismatch(f"missing leaf weights for {g}")
        lw = np.asarray(leaf_weights[g], dtype=float)
        if lw.shape != (len(LEAVES[g]),):
            raise DimensionMismatch(
                f"group {g} needs {len(LEAVES[g])} leaf weights")
        score += weight * float(lw @ indicators.group_vector(g))
    return score


def default_group_matrix() -> ComparisonMatrix:
    """Shipped expert judgment: safety weighted highest. Configuration, not
    ground truth."""
    return ComparisonMatrix(np.array([
        [1.0, 1.0, 1 / 3],
        [1.0, 1.0, 1 / 3],
        [3.0, 3.0, 1.0],
    ]))


def default_leaf_matrices() -> dict[str, ComparisonMatrix]:
    return {
        "airspace_structure": ComparisonMatrix(np.ones((2, 2))),
        "aircraft_performance": ComparisonMatrix(np.ones((2, 2))),
        "operational_safety": ComparisonMatrix(np.array([
            [1.0, 2.0, 2.0],
            [0.5, 1.0, 1.0],
            [0.5, 1.0, 1.0],
        ])),
    }


def evaluation_report(events: Iterable[dict],
                      group_matrix: Optional[ComparisonMatrix] = None,
                      leaf_matrices: Optional[Mapping[str, ComparisonMatrix]] = None,
                      bounds: NormalizationBounds = NormalizationBounds()
                      ) -> dict:
    """Full evaluation document: indicators, weights, ratios, composite."""
    indicators = build_indicators(events, bounds)
    gm = group_matrix if group_matrix is not None else default_group_matrix()
    lms = dict(leaf_matrices) if leaf_matrices is not None else default_leaf_matrices()
    group_res = ahp_weights(gm)
    leaf_res = {g: ahp_weights(lms[g]) for g in GROUPS}
    score = composite_score(indicators, group_res.weights,
                            {g: leaf_res[g].weights for g in GROUPS})
    return {
        "indicators": indicators.values,
        "normalization": indicators.bounds,
        "weights": {
            "groups": {g: float(w) for g, w in zip(GROUPS, group_res.weights)},
            "leaves": {g: {leaf: float(w) for leaf, w in
                           zip(LEAVES[g], leaf_res[g].weights)}
                       for g in GROUPS},
        },
        "consistency_ratios": {
            "groups": group_res.consistency_ratio,
            **{g: leaf_res[g].consistency_ratio for g in GROUPS},
        },
        "inconsistent": bool(group_res.inconsistent
                             or any(leaf_res[g].inconsistent for g in GROUPS)),
        "composite_score": score,
    }
