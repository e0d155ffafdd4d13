"""Link-budget models for the four monitoring modes.

Free-space propagation with 0 dBi antennas throughout: received power in dBm
is transmit power in dBm minus FSPL, so received + FSPL is distance-invariant.
Rates are Shannon bounds against thermal noise; below receiver sensitivity a
link carries nothing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import NoModesConfigured, NonPositiveInput
from .grid import Point3

FSPL_CONST_DB = 32.44          # km/MHz form of the free-space constant
THERMAL_NOISE_DBM_PER_HZ = -174.0

DEFAULT_SENSITIVITY_DBM = -85.0
DEFAULT_NOISE_FIGURE_DB = 7.0
DEFAULT_SAT_STANDOFF_M = 600_000.0
DEFAULT_REFERENCE_DISTANCE_KM = 1.0


class LinkModeName(Enum):
    RID = "RID"
    FIVEG_A = "FiveG_A"
    ADSB = "ADSB"
    SAT = "SAT"


# Tie-break order for mode selection at equal rates.
MODE_PREFERENCE = (LinkModeName.FIVEG_A, LinkModeName.ADSB,
                   LinkModeName.RID, LinkModeName.SAT)

TERRESTRIAL_MODES = (LinkModeName.RID, LinkModeName.FIVEG_A, LinkModeName.ADSB)


@dataclass(frozen=True)
class LinkMode:
    """One monitoring mode's radio parameters.

    reference_altitude_m is the transmitter placement: antenna height for
    ground modes, or the fixed standoff link distance for SAT.
    """

    name: LinkModeName
    frequency_MHz: float
    tx_power_W: float
    bandwidth_MHz: float
    sensitivity_dBm: float = DEFAULT_SENSITIVITY_DBM
    noise_figure_dB: float = DEFAULT_NOISE_FIGURE_DB
    reference_altitude_m: float = 0.0
    measurement_sigma_m: float = 10.0

    def __post_init__(self):
        if self.frequency_MHz <= 0 or self.tx_power_W <= 0 or self.bandwidth_MHz <= 0:
            raise ValueError("frequency, power, and bandwidth must be positive")
        if self.sensitivity_dBm >= 0:
            raise ValueError("sensitivity must be below 0 dBm")
        if self.measurement_sigma_m < 0:
            raise ValueError("measurement sigma must be non-negative")

    @property
    def tx_power_dBm(self) -> float:
        return 10.0 * math.log10(self.tx_power_W * 1000.0)

    @property
    def bandwidth_Hz(self) -> float:
        return self.bandwidth_MHz * 1e6


def default_link_modes() -> dict[LinkModeName, LinkMode]:
    """Standard four-mode parameter table."""
    return {
        LinkModeName.RID: LinkMode(
            LinkModeName.RID, frequency_MHz=2400.0, tx_power_W=0.1,
            bandwidth_MHz=2.0, measurement_sigma_m=10.0),
        LinkModeName.FIVEG_A: LinkMode(
            LinkModeName.FIVEG_A, frequency_MHz=3500.0, tx_power_W=4.0,
            bandwidth_MHz=100.0, measurement_sigma_m=3.0),
        LinkModeName.ADSB: LinkMode(
            LinkModeName.ADSB, frequency_MHz=1090.0, tx_power_W=5.0,
            bandwidth_MHz=2.0, measurement_sigma_m=15.0),
        LinkModeName.SAT: LinkMode(
            LinkModeName.SAT, frequency_MHz=1600.0, tx_power_W=3000.0,
            bandwidth_MHz=8.0, reference_altitude_m=DEFAULT_SAT_STANDOFF_M,
            measurement_sigma_m=10.0),
    }


@dataclass(frozen=True)
class Station:
    """Ground transceiver site; serves the listed terrestrial modes."""

    id: str
    position: Point3
    modes: tuple[LinkModeName, ...] = TERRESTRIAL_MODES


def fspl_dB(frequency_MHz: float, distance_km: float) -> float:
    """Free-space path loss, d in km and f in MHz."""
    if frequency_MHz <= 0:
        raise NonPositiveInput(f"frequency_MHz={frequency_MHz}")
    if distance_km <= 0:
        raise NonPositiveInput(f"distance_km={distance_km}")
    return (20.0 * math.log10(distance_km)
            + 20.0 * math.log10(frequency_MHz) + FSPL_CONST_DB)


def received_power_dBm(mode: LinkMode, distance_km: float) -> float:
    return mode.tx_power_dBm - fspl_dB(mode.frequency_MHz, distance_km)


def effective_range_km(mode: LinkMode) -> float:
    """Largest distance at which received power still meets sensitivity."""
    exponent = (mode.tx_power_dBm - mode.sensitivity_dBm
                - 20.0 * math.log10(mode.frequency_MHz) - FSPL_CONST_DB) / 20.0
    return 10.0 ** exponent


def noise_power_dBm(mode: LinkMode) -> float:
    return (THERMAL_NOISE_DBM_PER_HZ
            + 10.0 * math.log10(mode.bandwidth_Hz) + mode.noise_figure_dB)


def data_rate_bps(mode: LinkMode, distance_km: float) -> float:
    """Shannon-bound throughput; zero once the link drops below sensitivity."""
    rx = received_power_dBm(mode, distance_km)
    if rx < mode.sensitivity_dBm:
        return 0.0
    snr = 10.0 ** ((rx - noise_power_dBm(mode)) / 10.0)
    return mode.bandwidth_Hz * math.log2(1.0 + snr)


def link_distance_km(mode: LinkMode, position: Point3,
                     stations: Sequence[Station]) -> Optional[float]:
    """Link distance for the mode, or None when no transmitter serves it.

    SAT uses its fixed standoff; ground modes use the nearest serving
    station. Distances are floored at 1 m to keep the budget finite.
    """
    if mode.name is LinkModeName.SAT:
        return max(mode.reference_altitude_m, 1.0) / 1000.0
    best: Optional[float] = None
    for st in stations:
        if mode.name not in st.modes:
            continue
        d = position.distance_to(st.position)
        if best is None or d < best:
            best = d
    if best is None:
        return None
    return max(best, 1.0) / 1000.0


def in_range(mode: LinkMode, position: Point3,
             stations: Sequence[Station]) -> bool:
    d = link_distance_km(mode, position, stations)
    return d is not None and d <= effective_range_km(mode)


def measure(position: Point3, mode: LinkMode, stations: Sequence[Station],
            rng: np.random.Generator | int) -> Optional[np.ndarray]:
    """Noisy position sample, or None when the mode is out of range.

    Noise is isotropic zero-mean Gaussian with the mode's sigma; results are
    reproducible for a fixed seed.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    if not in_range(mode, position, stations):
        return None
    noise = rng.normal(0.0, mode.measurement_sigma_m, size=3)
    return np.array(position.as_tuple()) + noise


def select_mode(position: Point3, stations: Sequence[Station],
                modes: Mapping[LinkModeName, LinkMode] | Iterable[LinkMode]
                ) -> LinkModeName:
    """Best in-range mode by data rate; SAT is the out-of-range fallback."""
    if isinstance(modes, Mapping):
        pool = list(modes.values())
    else:
        pool = list(modes)
    if not pool:
        raise NoModesConfigured("select_mode needs at least one link mode")
    pref = {name: i for i, name in enumerate(MODE_PREFERENCE)}
    candidates = []
    for mode in pool:
        d = link_distance_km(mode, position, stations)
        if d is None or d > effective_range_km(mode):
            continue
        rate = data_rate_bps(mode, d)
        candidates.append((-rate, pref.get(mode.name, len(pref)), mode.name))
    if not candidates:
        return LinkModeName.SAT
    return min(candidates)[2]


def metric_distance_km(mode: LinkMode,
                       reference_distance_km: float = DEFAULT_REFERENCE_DISTANCE_KM
                       ) -> float:
    """Rate-evaluation distance: terrestrial modes at the common reference,
    SAT at its own standoff."""
    if mode.name is LinkModeName.SAT:
        return max(mode.reference_altitude_m, 1.0) / 1000.0
    return reference_distance_km


def link_metric_rows(modes: Mapping[LinkModeName, LinkMode] | Iterable[LinkMode],
                     reference_distance_km: float = DEFAULT_REFERENCE_DISTANCE_KM
                     ) -> list[dict]:
    """Per-mode summary rows for the metrics table."""
    if isinstance(modes, Mapping):
        pool = list(modes.values())
    else:
        pool = list(modes)
    if not pool:
        raise NoModesConfigured("link metrics need at least one link mode")
    order = {name: i for i, name in enumerate(LinkModeName)}
    pool.sort(key=lambda m: order[m.name])
    rows = []
    for mode in pool:
        rows.append({
            "mode": mode.name.value,
            "frequency_MHz": mode.frequency_MHz,
            "tx_power_W": mode.tx_power_W,
            "bandwidth_MHz": mode.bandwidth_MHz,
            "effective_range_km": effective_range_km(mode),
            "data_rate_bps": data_rate_bps(
                mode, metric_distance_km(mode, reference_distance_km)),
        })
    return rows
