"""Grid matched-filter localizer and the 3D-DFT / 3D-MUSIC baselines."""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .fusion import FusedTensor, compact
from .scenario import SPEED_OF_LIGHT, GridSpec


class Method(str, enum.Enum):
    GDFT = "GDFT"
    DFT3D = "DFT3D"
    MUSIC3D = "MUSIC3D"


class EstimationError(ValueError):
    """Raised when an estimator cannot produce the requested output."""


@dataclass(frozen=True, eq=False)
class SpectrumResult:
    values: np.ndarray
    grid: GridSpec


@dataclass(frozen=True)
class ParamEstimate:
    aoa: float
    aod: float
    delay: float


@dataclass(frozen=True, eq=False)
class LocalizationResult:
    estimates: np.ndarray  # (L_hat, 2)
    method: Method
    peak_values: np.ndarray
    complete: bool = True
    indices: np.ndarray | None = None
    dropped: int = 0


def gdft_spectrum(d: FusedTensor, grid: GridSpec, chunk: int = 2048) -> SpectrumResult:
    """Matched-filter spectrum ``P(g) = |sum_{k,p,n'} H^g(k,p,n') D(k,p,n')|``.

    Templates are built per chunk of grid points; empty bins are skipped.
    """
    if grid.n_grid < 1:
        raise EstimationError("empty grid")
    n_r, n_t, _ = d.data.shape
    bins = d.occupied_bins
    freqs = bins * d.scs_base_hz
    flat = d.data[:, :, bins].reshape(n_r * n_t, len(bins))
    k = np.arange(1, n_r + 1)
    p = np.arange(1, n_t + 1)
    sin_aoa = np.sin(grid.aoa)
    sin_aod = np.sin(grid.aod)
    out = np.empty(grid.n_grid)
    for start in range(0, grid.n_grid, chunk):
        sl = slice(start, min(start + chunk, grid.n_grid))
        delay_tpl = np.exp(2j * np.pi * np.outer(freqs, grid.delays[sl]))
        partial = (flat @ delay_tpl).reshape(n_r, n_t, -1)
        rx_tpl = np.exp(-1j * np.pi * np.outer(k, sin_aoa[sl]))
        tx_tpl = np.exp(-1j * np.pi * np.outer(p, sin_aod[sl]))
        out[sl] = np.abs(np.einsum("kg,kpg,pg->g", rx_tpl, partial, tx_tpl))
    return SpectrumResult(out, grid)


def _local_maxima(values: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Boolean mask of points not exceeded by any lattice neighbour."""
    if grid.resolution is None or grid.n_grid == 1:
        return np.ones(len(values), dtype=bool)
    tree = cKDTree(grid.points)
    radius = grid.resolution * math.sqrt(2) * (1 + 1e-6)
    mask = np.ones(len(values), dtype=bool)
    for g, neighbours in enumerate(tree.query_ball_point(grid.points, radius)):
        mask[g] = values[g] >= values[neighbours].max()
    return mask


def pick_peaks(spectrum: SpectrumResult, n_targets: int,
               min_separation: float | None = None) -> LocalizationResult:
    """Greedy peak selection with non-maximum suppression.

    Candidates are local maxima on the lattice, taken in descending order
    (ties go to the lower grid index) and suppressed within ``min_separation``
    meters of an accepted peak. Defaults to two grid cells.
    """
    if n_targets < 1:
        raise ValueError("n_targets must be >= 1")
    grid = spectrum.grid
    values = spectrum.values
    if min_separation is None:
        min_separation = 2 * grid.resolution if grid.resolution else 0.0
    candidates = np.flatnonzero(_local_maxima(values, grid))
    order = candidates[np.argsort(-values[candidates], kind="stable")]
    chosen: list[int] = []
    for g in order:
        if len(chosen) == n_targets:
            break
        if chosen and np.min(np.hypot(*(grid.points[chosen] - grid.points[g]).T)) < min_separation:
            continue
        chosen.append(int(g))
    idx = np.array(chosen, dtype=int)
    return LocalizationResult(grid.points[idx].reshape(-1, 2), Method.GDFT, values[idx],
                              complete=len(chosen) == n_targets, indices=idx)


def _wrapped(index: int, size: int) -> int:
    return index - size if index >= size / 2 else index


def dft3d_transform(tensor: np.ndarray, n_fft: int | None = None) -> np.ndarray:
    """Forward DFT over both antenna axes, inverse DFT (1/N) over subcarriers."""
    spec = np.fft.fft(np.fft.fft(tensor, axis=0), axis=1)
    return np.fft.ifft(spec, n=n_fft, axis=2)


def dft3d_estimate(tensor: np.ndarray, scs_hz: float, n_targets: int, n_fft: int | None = None,
                   literal_delay: bool = False) -> list[ParamEstimate]:
    """Angle/angle/delay estimates from the strongest peaks of the 3D transform.

    Antenna bins at or above ``N/2`` wrap to negative spatial frequency, so
    estimated sines lie in ``[-1, 1)``. ``literal_delay`` divides the
    delay by an extra antenna count.
    """
    if n_targets < 1:
        raise ValueError("n_targets must be >= 1")
    n_r, n_t, n_c = tensor.shape
    n_fft = n_fft or n_c
    mag = np.abs(dft3d_transform(tensor, n_fft))
    peaks = (mag == ndimage.maximum_filter(mag, size=3, mode="wrap")) & (mag > 0)
    flat = np.flatnonzero(peaks)
    if len(flat) < n_targets:
        raise EstimationError(f"only {len(flat)} peaks for {n_targets} targets")
    flat = flat[np.argsort(-mag.ravel()[flat], kind="stable")][:n_targets]
    delay_den = scs_hz * n_fft * (n_r if literal_delay else 1)
    out = []
    for a, b, c in zip(*np.unravel_index(flat, mag.shape)):
        out.append(ParamEstimate(aoa=math.asin(2 * _wrapped(a, n_r) / n_r),
                                 aod=math.asin(2 * _wrapped(b, n_t) / n_t),
                                 delay=c / delay_den))
    return out


def dft3d_peak_values(tensor: np.ndarray, n_targets: int, n_fft: int | None = None) -> np.ndarray:
    mag = np.abs(dft3d_transform(tensor, n_fft))
    peaks = (mag == ndimage.maximum_filter(mag, size=3, mode="wrap")) & (mag > 0)
    vals = np.sort(mag[peaks])[::-1]
    return vals[:n_targets]


def _noise_subspace(snapshots: np.ndarray, n_targets: int) -> np.ndarray:
    dim = snapshots.shape[0]
    if dim <= n_targets:
        raise EstimationError(f"no noise subspace: dimension {dim} <= {n_targets} targets")
    cov = snapshots @ snapshots.conj().T / snapshots.shape[1]
    _, vecs = np.linalg.eigh(cov)
    return vecs[:, :dim - n_targets]


def music_pseudospectrum(noise_sub: np.ndarray, manifold: np.ndarray) -> np.ndarray:
    """``1 / ||E_n^H a||^2`` for each column of ``manifold`` (unit-norm steering)."""
    a = manifold / np.linalg.norm(manifold, axis=0)
    proj = noise_sub.conj().T @ a
    return 1.0 / np.maximum(np.sum(np.abs(proj) ** 2, axis=0), 1e-300)


def _top_peaks(values: np.ndarray, count: int) -> np.ndarray:
    inner = np.flatnonzero((values[1:-1] >= values[:-2]) & (values[1:-1] > values[2:])) + 1
    edges = [i for i, ok in ((0, values[0] > values[1]), (len(values) - 1, values[-1] > values[-2]))
             if ok]
    idx = np.concatenate([inner, np.array(edges, dtype=int)])
    if len(idx) == 0:
        idx = np.array([int(np.argmax(values))])
    idx = idx[np.argsort(-values[idx], kind="stable")][:count]
    # unresolved sources share the strongest peak
    return np.concatenate([idx, np.full(count - len(idx), idx[0], dtype=int)])


@dataclass(frozen=True, eq=False)
class MusicSpectra:
    angles: np.ndarray
    aoa: np.ndarray
    aod: np.ndarray
    delays: np.ndarray
    delay: np.ndarray


def music3d_spectra(tensor: np.ndarray, n_targets: int, angle_grid: int = 361,
                    delay_grid: int = 1001, scs_hz: float = 30e3,
                    bins: np.ndarray | None = None,
                    delay_span: tuple[float, float] | None = None) -> MusicSpectra:
    if n_targets < 1:
        raise ValueError("n_targets must be >= 1")
    if angle_grid < 2 or delay_grid < 2:
        raise ValueError("search grids need at least two points")
    n_r, n_t, n_c = tensor.shape
    if bins is None:
        bins = np.arange(n_c)
    else:
        tensor = tensor[:, :, bins]
    rx_noise = _noise_subspace(tensor.reshape(n_r, -1), n_targets)
    tx_noise = _noise_subspace(np.transpose(tensor, (1, 0, 2)).reshape(n_t, -1), n_targets)
    sc_noise = _noise_subspace(tensor.reshape(n_r * n_t, -1).T, n_targets)

    angles = np.linspace(-np.pi / 2, np.pi / 2, angle_grid)
    rx_manifold = np.exp(1j * np.pi * np.outer(np.arange(1, n_r + 1), np.sin(angles)))
    tx_manifold = np.exp(1j * np.pi * np.outer(np.arange(1, n_t + 1), np.sin(angles)))
    lo, hi = delay_span if delay_span is not None else (0.0, 1.0 / scs_hz)
    delays = np.linspace(lo, hi, delay_grid)
    sc_manifold = np.exp(-2j * np.pi * np.outer(bins * scs_hz, delays))
    return MusicSpectra(angles, music_pseudospectrum(rx_noise, rx_manifold),
                        music_pseudospectrum(tx_noise, tx_manifold), delays,
                        music_pseudospectrum(sc_noise, sc_manifold))


def music3d_estimate(tensor: np.ndarray, n_targets: int, angle_grid: int = 361,
                     delay_grid: int = 1001, scs_hz: float = 30e3,
                     bins: np.ndarray | None = None,
                     delay_span: tuple[float, float] | None = None) -> list[ParamEstimate]:
    """Three independent 1D MUSIC searches (AoA, AoD, delay).

    Parameters from the three searches are paired by descending peak height.
    ``bins`` gives the lattice index of each subcarrier column when the
    subcarrier axis is not uniformly spaced.
    """
    spectra = music3d_spectra(tensor, n_targets, angle_grid, delay_grid, scs_hz, bins, delay_span)
    return _music_params(spectra, n_targets)[0]


def _music_params(spectra: MusicSpectra, n_targets: int):
    i_aoa = _top_peaks(spectra.aoa, n_targets)
    i_aod = _top_peaks(spectra.aod, n_targets)
    i_del = _top_peaks(spectra.delay, n_targets)
    params = [ParamEstimate(float(spectra.angles[a]), float(spectra.angles[b]),
                            float(spectra.delays[c])) for a, b, c in zip(i_aoa, i_aod, i_del)]
    return params, spectra.aoa[i_aoa]


def unwrap_delay(delay: float, scs_hz: float, floor: float) -> float:
    """Shift a delay by whole periods ``1/scs`` so it is not below ``floor``."""
    period = 1.0 / scs_hz
    if delay >= floor:
        return delay
    return delay + math.ceil((floor - delay) / period) * period


def aoa_localize(est: ParamEstimate, mbs_pos, mibs_pos) -> tuple[float, float]:
    """Position from the MBS angle and the bistatic range ellipse.

    The MBS-to-target range is ``((tau c)^2 - L^2) / (2 (tau c - L cos psi))``
    with ``psi`` the angle between the target ray and the MBS-MiBS baseline.
    """
    bx, by = mibs_pos[0] - mbs_pos[0], mibs_pos[1] - mbs_pos[1]
    baseline = math.hypot(bx, by)
    path = est.delay * SPEED_OF_LIGHT
    if path <= baseline:
        raise EstimationError("bistatic path not longer than the baseline")
    ux, uy = math.sin(est.aoa), math.cos(est.aoa)  # broadside +y
    cos_psi = (ux * bx + uy * by) / baseline
    den = 2.0 * (path - baseline * cos_psi)
    if den <= 0:
        raise EstimationError("degenerate ellipse geometry")
    d_ro = (path ** 2 - baseline ** 2) / den
    return mbs_pos[0] + d_ro * ux, mbs_pos[1] + d_ro * uy


@dataclass
class EstimatorOptions:
    min_separation: float | None = None
    angle_grid: int = 361
    delay_grid: int = 1001
    literal_delay: bool = False
    clip_to_region: bool = True


def _box_distance(pt, bounds) -> float:
    x0, x1, y0, y1 = bounds
    return math.hypot(max(x0 - pt[0], 0.0, pt[0] - x1), max(y0 - pt[1], 0.0, pt[1] - y1))


def resolve_endfire(est: ParamEstimate, mbs_pos, mibs_pos, bounds) -> ParamEstimate:
    """Pick the sign of an endfire AoA using the search region.

    ``sin = -1`` and ``sin = +1`` give the same phase ramp across a
    half-wavelength array, so estimators cannot tell them apart. The side
    whose position lands closer to the region wins; on a tie (the two
    ellipse vertices are often symmetric about the region) the ray pointing
    toward the MiBS is kept.
    """
    if abs(abs(math.sin(est.aoa)) - 1.0) > 1e-12:
        return est
    toward = math.copysign(math.pi / 2, mibs_pos[0] - mbs_pos[0])
    cands = [ParamEstimate(toward, est.aod, est.delay), ParamEstimate(-toward, est.aod, est.delay)]
    dist = []
    for cand in cands:
        try:
            dist.append(_box_distance(aoa_localize(cand, mbs_pos, mibs_pos), bounds))
        except EstimationError:
            dist.append(math.inf)
    return cands[1] if dist[1] < dist[0] - 1e-6 else cands[0]


def _params_to_positions(params, peak_values, grid: GridSpec, mbs_pos, mibs_pos, method,
                         clip: bool) -> LocalizationResult:
    pts, vals, dropped = [], [], 0
    for est, val in zip(params, peak_values):
        est = resolve_endfire(est, mbs_pos, mibs_pos, grid.bounds)
        try:
            pts.append(aoa_localize(est, mbs_pos, mibs_pos))
            vals.append(val)
        except EstimationError:
            dropped += 1
    pts = np.array(pts, dtype=float).reshape(-1, 2)
    if clip and len(pts):
        x0, x1, y0, y1 = grid.bounds
        pts[:, 0] = np.clip(pts[:, 0], x0, x1)
        pts[:, 1] = np.clip(pts[:, 1], y0, y1)
    vals = np.asarray(vals, dtype=float)
    order = np.argsort(-vals, kind="stable")
    return LocalizationResult(pts[order], method, vals[order], complete=dropped == 0,
                              dropped=dropped)


def localize(method: Method | str, tensor: FusedTensor, grid: GridSpec, n_targets: int,
             mbs_pos, mibs_pos, options: EstimatorOptions | None = None) -> LocalizationResult:
    """Run one localization method on a lattice tensor (fused or single link)."""
    method = Method(method)
    options = options or EstimatorOptions()
    if n_targets < 1:
        raise ValueError("n_targets must be >= 1")
    if method is Method.GDFT:
        return pick_peaks(gdft_spectrum(tensor, grid), n_targets, options.min_separation)

    data, scs, bins = compact(tensor)
    if method is Method.DFT3D:
        # delays come back modulo 1/scs; the direct path bounds them from below,
        # less one bin of quantization
        floor = math.dist(mbs_pos, mibs_pos) / SPEED_OF_LIGHT - 1.0 / (scs * data.shape[2])
        params = [ParamEstimate(e.aoa, e.aod, unwrap_delay(e.delay, scs, floor))
                  for e in dft3d_estimate(data, scs, n_targets,
                                          literal_delay=options.literal_delay)]
        values = dft3d_peak_values(data, n_targets)
    else:
        span = (float(grid.delays.min()), float(grid.delays.max()))
        spectra = music3d_spectra(data, n_targets, options.angle_grid, options.delay_grid, scs,
                                  bins if len(bins) != data.shape[2] else None, span)
        params, values = _music_params(spectra, n_targets)
    return _params_to_positions(params, values, grid, mbs_pos, mibs_pos, method,
                                options.clip_to_region)


def write_spectrum_csv(path, spectrum: SpectrumResult, header_lines=()) -> None:
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(["grid_index", "x_m", "y_m", "spectrum_value"])
        for g, ((x, y), v) in enumerate(zip(spectrum.grid.points, spectrum.values)):
            writer.writerow([g, repr(float(x)), repr(float(y)), repr(float(v))])
