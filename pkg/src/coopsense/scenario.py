"""Configuration, geometry and search-grid construction.

Both uniform linear arrays lie along the global x-axis with broadside +y.
Angles are measured from broadside, so ``sin(angle) = dx / range``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0  # m/s

# Default search rectangle (xmin, xmax, ymin, ymax) in meters.
DEFAULT_REGION = (0.0, 300.0, 10.0, 100.0)


class GeometryError(ValueError):
    """Raised for degenerate or out-of-domain bistatic geometry."""


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass(frozen=True)
class SystemConfig:
    """Per-BS *transmit* parameters of the two base stations.

    Each receiver observes the numerology of the other BS: the MBS receives
    MiBS transmissions and vice versa.
    """

    n_subcarriers_mbs: int = 512
    n_subcarriers_mibs: int = 512
    n_symbols: int = 128
    n_rx: int = 64
    n_tx: int = 64
    tx_power_mbs_dbm: float = 46.0
    tx_power_mibs_dbm: float = 27.0
    carrier_freq_mbs_hz: float = 2.6e9
    carrier_freq_mibs_hz: float = 26e9
    scs_mbs_hz: float = 30e3
    scs_mibs_hz: float = 120e3
    cp_duration_s: float = 2.34e-6

    def __post_init__(self):
        counts = (self.n_subcarriers_mbs, self.n_subcarriers_mibs, self.n_symbols,
                  self.n_rx, self.n_tx)
        if any(int(c) != c or c < 1 for c in counts):
            raise ValueError("all counts must be integers >= 1")
        if self.n_rx != self.n_tx:
            raise ValueError(f"n_rx ({self.n_rx}) must equal n_tx ({self.n_tx})")
        for name in ("tx_power_mbs_dbm", "tx_power_mibs_dbm"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        for name in ("carrier_freq_mbs_hz", "carrier_freq_mibs_hz", "scs_mbs_hz", "scs_mibs_hz"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be a positive finite number")
        if not (math.isfinite(self.cp_duration_s) and self.cp_duration_s >= 0):
            raise ValueError("cp_duration_s must be >= 0")
        ratio = self.scs_mibs_hz / self.scs_mbs_hz
        if ratio < 1 or abs(ratio - round(ratio)) > 1e-9 * ratio:
            raise ValueError(
                f"subcarrier spacing ratio {ratio:g} must be a positive integer")

    @property
    def q(self) -> int:
        """Subcarrier spacing ratio between the high and low band."""
        return int(round(self.scs_mibs_hz / self.scs_mbs_hz))

    @property
    def n_antennas(self) -> int:
        return self.n_rx

    @property
    def wavelength_mbs_m(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_freq_mbs_hz

    @property
    def wavelength_mibs_m(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_freq_mibs_hz

    @property
    def symbol_duration_mbs_s(self) -> float:
        return 1.0 / self.scs_mbs_hz + self.cp_duration_s

    @property
    def symbol_duration_mibs_s(self) -> float:
        return 1.0 / self.scs_mibs_hz + self.cp_duration_s


def desk_config(**overrides) -> SystemConfig:
    """Small configuration used for CI-scale experiments.

    Spacings are raised so 64 subcarriers keep a usable bistatic range
    resolution (about 5 m at the fused bandwidth).
    """
    params = dict(n_subcarriers_mbs=64, n_subcarriers_mibs=64, n_rx=8, n_tx=8,
                  scs_mbs_hz=480e3, scs_mibs_hz=960e3)
    params.update(overrides)
    return SystemConfig(**params)


@dataclass(frozen=True)
class Target:
    pos: tuple[float, float]
    speed: float = 0.0
    heading: float = 0.0
    reflectivity: complex = 1.0 + 0.0j

    def __post_init__(self):
        object.__setattr__(self, "pos", (float(self.pos[0]), float(self.pos[1])))
        if not self.speed >= 0:
            raise ValueError("speed must be >= 0")
        if not -math.pi <= self.heading < math.pi:
            raise ValueError("heading must lie in [-pi, pi)")


@dataclass(frozen=True)
class Scenario:
    """BS placement, targets and receiver noise level.

    ``noise_psd_dbm_hz=None`` disables noise.
    """

    mbs_pos: tuple[float, float] = (0.0, 0.0)
    mibs_pos: tuple[float, float] = (300.0, 0.0)
    targets: tuple[Target, ...] = ()
    noise_psd_dbm_hz: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "mbs_pos", (float(self.mbs_pos[0]), float(self.mbs_pos[1])))
        object.__setattr__(self, "mibs_pos", (float(self.mibs_pos[0]), float(self.mibs_pos[1])))
        object.__setattr__(self, "targets", tuple(self.targets))
        if self.mbs_pos == self.mibs_pos:
            raise ValueError("MBS and MiBS positions must differ")
        positions = [t.pos for t in self.targets]
        if len(set(positions)) != len(positions):
            raise ValueError("target positions must be pairwise distinct")

    @property
    def baseline_m(self) -> float:
        return math.dist(self.mbs_pos, self.mibs_pos)

    def with_noise(self, noise_psd_dbm_hz: float | None) -> "Scenario":
        return Scenario(self.mbs_pos, self.mibs_pos, self.targets, noise_psd_dbm_hz)

    def truth(self) -> np.ndarray:
        return np.array([t.pos for t in self.targets], dtype=float).reshape(-1, 2)


def reference_scenario(noise_psd_dbm_hz: float | None = None) -> Scenario:
    """Three-target layout with MBS at the origin and MiBS 300 m east."""
    targets = tuple(Target(p) for p in ((200.0, 30.0), (250.0, 60.0), (300.0, 80.0)))
    return Scenario((0.0, 0.0), (300.0, 0.0), targets, noise_psd_dbm_hz)


def _geometry_arrays(points: np.ndarray, mbs_pos, mibs_pos):
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    dx_m = points[:, 0] - mbs_pos[0]
    dy_m = points[:, 1] - mbs_pos[1]
    dx_mi = points[:, 0] - mibs_pos[0]
    dy_mi = points[:, 1] - mibs_pos[1]
    r_m = np.hypot(dx_m, dy_m)
    r_mi = np.hypot(dx_mi, dy_mi)
    if np.any(r_m == 0) or np.any(r_mi == 0):
        raise GeometryError("point coincides with a base station")
    if np.any(dy_m <= 0) or np.any(dy_mi <= 0):
        raise GeometryError("point lies on or behind the array plane")
    aoa = np.arctan2(dx_m, dy_m)
    aod = np.arctan2(dx_mi, dy_mi)
    delay = (r_m + r_mi) / SPEED_OF_LIGHT
    return aoa, aod, delay


def bistatic_geometry(target_pos, mbs_pos, mibs_pos) -> tuple[float, float, float]:
    """Return ``(aoa, aod, delay)`` for a point target.

    ``aoa`` is seen from the MBS, ``aod`` from the MiBS; ``delay`` is the
    bistatic path length over the speed of light.
    """
    aoa, aod, delay = _geometry_arrays(np.asarray(target_pos, dtype=float), mbs_pos, mibs_pos)
    return float(aoa[0]), float(aod[0]), float(delay[0])


def doppler_shift(target: Target, aoa: float, aod: float, carrier_freq: float) -> float:
    if not carrier_freq > 0:
        raise ValueError("carrier_freq must be positive")
    return (-target.speed * carrier_freq / SPEED_OF_LIGHT) * (
        math.cos(target.heading - aoa) + math.cos(target.heading - aod))


@dataclass(frozen=True, eq=False)
class GridSpec:
    points: np.ndarray
    aoa: np.ndarray
    aod: np.ndarray
    delays: np.ndarray
    resolution: float | None = None
    region: tuple[float, float, float, float] | None = None

    def __post_init__(self):
        sizes = {len(self.points), len(self.aoa), len(self.aod), len(self.delays)}
        if len(sizes) != 1 or len(self.points) < 1:
            raise ValueError("grid vectors must share one nonzero length")

    @property
    def n_grid(self) -> int:
        return len(self.points)

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        if self.region is not None:
            return self.region
        xs, ys = self.points[:, 0], self.points[:, 1]
        return float(xs.min()), float(xs.max()), float(ys.min()), float(ys.max())

    @property
    def diagonal_m(self) -> float:
        x0, x1, y0, y1 = self.bounds
        return math.hypot(x1 - x0, y1 - y0)


def grid_from_points(points: Sequence, mbs_pos, mibs_pos, resolution=None, region=None) -> GridSpec:
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    aoa, aod, delays = _geometry_arrays(pts, mbs_pos, mibs_pos)
    return GridSpec(pts, aoa, aod, delays, resolution, region)


def build_grid(region=DEFAULT_REGION, resolution: float = 1.0, scenario: Scenario | None = None,
               mbs_pos=None, mibs_pos=None) -> GridSpec:
    """Rectangular search lattice ``(xmin, xmax, ymin, ymax)``, x varying fastest.

    Lattice points coincident with either BS are dropped.
    """
    xmin, xmax, ymin, ymax = map(float, region)
    if not (xmax >= xmin and ymax >= ymin) or (xmax - xmin) * (ymax - ymin) <= 0:
        if not (xmax == xmin and ymax == ymin):
            raise ValueError("region must have positive area (or be a single point)")
    if not resolution > 0:
        raise ValueError("resolution must be positive")
    if scenario is not None:
        mbs_pos, mibs_pos = scenario.mbs_pos, scenario.mibs_pos
    if mbs_pos is None or mibs_pos is None:
        raise ValueError("BS positions are required")

    nx = int(math.floor((xmax - xmin) / resolution + 1e-9)) + 1
    ny = int(math.floor((ymax - ymin) / resolution + 1e-9)) + 1
    xs = xmin + resolution * np.arange(nx)
    ys = ymin + resolution * np.arange(ny)
    gx, gy = np.meshgrid(xs, ys)  # rows follow y, so x is the fast index
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    keep = ~(np.all(pts == mbs_pos, axis=1) | np.all(pts == mibs_pos, axis=1))
    pts = pts[keep]
    if len(pts) == 0:
        raise ValueError("grid is empty after removing BS positions")
    return grid_from_points(pts, mbs_pos, mibs_pos, resolution, (xmin, xmax, ymin, ymax))


def snap_to_grid(pos, region=DEFAULT_REGION, resolution: float = 1.0) -> tuple[float, float]:
    """Nearest lattice point of :func:`build_grid` for ``pos``."""
    xmin, xmax, ymin, ymax = region
    nx = int(math.floor((xmax - xmin) / resolution + 1e-9))
    ny = int(math.floor((ymax - ymin) / resolution + 1e-9))
    ix = min(max(round((pos[0] - xmin) / resolution), 0), nx)
    iy = min(max(round((pos[1] - ymin) / resolution), 0), ny)
    return xmin + ix * resolution, ymin + iy * resolution
