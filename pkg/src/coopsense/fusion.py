"""Symbol-level fusion of the two receivers onto a common subcarrier lattice.

The lattice has spacing ``scs_base_hz`` (the low-band spacing). MiBS-received
data occupies every bin below its subcarrier count; MBS-received data lands on
every ``q``-th bin.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .waveform import EchoTensor, Side


class Occupancy(enum.IntEnum):
    EMPTY = 0
    MIBS_ONLY = 1
    MBS_ONLY = 2
    OVERLAP = 3


class FusionMode(str, enum.Enum):
    PAPER_LITERAL = "paper_literal"
    NORMALIZED = "normalized"


@dataclass(frozen=True, eq=False)
class FusedTensor:
    data: np.ndarray
    occupancy: np.ndarray
    scs_base_hz: float
    mode: FusionMode | None = None

    @property
    def n_bins(self) -> int:
        return self.data.shape[2]

    @property
    def occupied_bins(self) -> np.ndarray:
        return np.flatnonzero(self.occupancy != Occupancy.EMPTY)

    def counts(self) -> dict[Occupancy, int]:
        return {state: int(np.count_nonzero(self.occupancy == state)) for state in Occupancy}


def occupancy_map(n_mibs: int, n_mbs: int, q: int, n_bins: int | None = None) -> np.ndarray:
    """Per-bin occupancy for ``n_mibs`` MiBS-received and ``n_mbs`` MBS-received subcarriers."""
    if n_bins is None:
        n_bins = fused_depth(n_mibs, n_mbs, q)
    occ = np.full(n_bins, Occupancy.EMPTY, dtype=np.int8)
    mibs = np.arange(min(n_mibs, n_bins))
    mbs = q * np.arange(n_mbs)
    mbs = mbs[mbs < n_bins]
    occ[mibs] |= Occupancy.MIBS_ONLY
    occ[mbs] |= Occupancy.MBS_ONLY
    return occ


def fused_depth(n_mibs: int, n_mbs: int, q: int) -> int:
    return max(n_mibs, q * (n_mbs - 1) + 1)


def fused_bin_frequency(n_prime: int, scs_base_hz: float, n_bins: int | None = None) -> float:
    if n_prime < 0 or (n_bins is not None and n_prime >= n_bins):
        raise IndexError(f"bin {n_prime} outside the fused lattice")
    return n_prime * scs_base_hz


def _rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.abs(x) ** 2)))


def fuse_symbol_level(y_mbs: EchoTensor, y_mibs: EchoTensor, q: int | None = None,
                      mode: FusionMode | str = FusionMode.NORMALIZED, equalize: bool = False,
                      literal_depth: bool = False) -> FusedTensor:
    """Fuse the MBS- and MiBS-received tensors into one coherent tensor.

    The MiBS tensor is transposed so both share (AoA, AoD) antenna axes.
    Overlapping bins are averaged (``normalized``) or scaled by ``1/(2N^2)``
    (``paper_literal``). With ``equalize`` each link is first scaled to unit
    RMS amplitude. ``literal_depth`` uses ``q*N_mibs - 1`` bins.
    """
    mode = FusionMode(mode)
    if Side(y_mbs.side) is not Side.MBS_RX or Side(y_mibs.side) is not Side.MIBS_RX:
        raise ValueError("expected an MBS_RX and a MIBS_RX tensor")
    n_r, n_t, n_mbs = y_mbs.shape
    m_r, m_t, n_mibs = y_mibs.shape
    if (n_r, n_t) != (m_r, m_t) or n_r != n_t:
        raise ValueError(f"antenna dims differ: {y_mbs.shape} vs {y_mibs.shape}")
    ratio = y_mbs.scs_hz / y_mibs.scs_hz
    if q is None:
        q = int(round(ratio))
    if q < 1 or abs(ratio - q) > 1e-9 * q:
        raise ValueError(f"q={q} inconsistent with spacing ratio {ratio:g}")
    n = n_r

    a = np.transpose(y_mibs.data, (1, 0, 2))
    b = y_mbs.data
    if equalize:
        a = a / (_rms(a) or 1.0)
        b = b / (_rms(b) or 1.0)

    n_bins = q * n_mibs - 1 if literal_depth else fused_depth(n_mibs, n_mbs, q)
    occ = occupancy_map(n_mibs, n_mbs, q, n_bins)
    data = np.zeros((n, n, n_bins), dtype=complex)
    n_a = min(n_mibs, n_bins)
    data[:, :, :n_a] = a[:, :, :n_a]
    mbs_bins = q * np.arange(n_mbs)
    in_range = mbs_bins < n_bins
    mbs_bins = mbs_bins[in_range]
    overlap = occ[mbs_bins] == Occupancy.OVERLAP
    data[:, :, mbs_bins[~overlap]] = b[:, :, in_range][:, :, ~overlap]
    ov = mbs_bins[overlap]
    scale = 0.5 if mode is FusionMode.NORMALIZED else 1.0 / (2 * n * n)
    data[:, :, ov] = scale * (data[:, :, ov] + b[:, :, in_range][:, :, overlap])
    return FusedTensor(data, occ, y_mibs.scs_hz, mode)


def link_lattice(echo: EchoTensor, q: int) -> FusedTensor:
    """Place one receiver's tensor on the fused lattice without the other link.

    MiBS-received data is transposed into the MBS antenna orientation.
    """
    side = Side(echo.side)
    n_c = echo.shape[2]
    if side is Side.MIBS_RX:
        occ = occupancy_map(n_c, 0, q, n_c)
        return FusedTensor(np.transpose(echo.data, (1, 0, 2)).copy(), occ, echo.scs_hz)
    n_bins = q * (n_c - 1) + 1
    occ = occupancy_map(0, n_c, q, n_bins)
    data = np.zeros(echo.shape[:2] + (n_bins,), dtype=complex)
    data[:, :, ::q] = echo.data
    return FusedTensor(data, occ, echo.scs_hz / q)


def compact(tensor: FusedTensor) -> tuple[np.ndarray, float, np.ndarray]:
    """Strip a lattice tensor down for the DFT/MUSIC baselines.

    Returns ``(data, scs_hz, bins)``. Regularly strided occupancy collapses to
    a dense tensor at the stride spacing; otherwise the lattice is kept up to
    its last occupied bin and ``bins`` lists the occupied indices.
    """
    occupied = tensor.occupied_bins
    if len(occupied) == 0:
        raise ValueError("tensor has no occupied bins")
    if len(occupied) == 1:
        return tensor.data[:, :, occupied], tensor.scs_base_hz, np.arange(1)
    stride = occupied[1] - occupied[0]
    if occupied[0] == 0 and np.all(np.diff(occupied) == stride):
        return (tensor.data[:, :, occupied], tensor.scs_base_hz * stride,
                np.arange(len(occupied)))
    return tensor.data[:, :, :occupied[-1] + 1], tensor.scs_base_hz, occupied
