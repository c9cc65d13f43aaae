"""Frequency-domain echo synthesis for the two passive receivers.

Tensors are indexed ``(rx antenna k, tx antenna p, subcarrier n)`` and hold a
single OFDM symbol after the known communication symbols have been removed.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .scenario import (SPEED_OF_LIGHT, Scenario, SystemConfig, Target, bistatic_geometry,
                       dbm_to_watts, doppler_shift)


class Side(str, enum.Enum):
    MBS_RX = "MBS_RX"    # MBS listening to the MiBS transmission
    MIBS_RX = "MIBS_RX"  # MiBS listening to the MBS transmission


class GainMode(str, enum.Enum):
    UNIT = "unit"
    BISTATIC_RADAR = "bistatic_radar"


@dataclass(frozen=True, eq=False)
class EchoTensor:
    data: np.ndarray
    scs_hz: float
    side: Side

    def __post_init__(self):
        if self.data.ndim != 3:
            raise ValueError("echo tensor must have three axes")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("echo tensor contains non-finite entries")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape


@dataclass(frozen=True)
class LinkParams:
    """Transmit-side parameters as observed by one receiver."""

    side: Side
    power_w: float
    carrier_hz: float
    scs_hz: float
    n_subcarriers: int
    symbol_duration_s: float

    @property
    def wavelength_m(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_hz


def link_params(config: SystemConfig, side: Side) -> LinkParams:
    side = Side(side)
    if side is Side.MBS_RX:
        return LinkParams(side, dbm_to_watts(config.tx_power_mibs_dbm), config.carrier_freq_mibs_hz,
                          config.scs_mibs_hz, config.n_subcarriers_mibs,
                          config.symbol_duration_mibs_s)
    return LinkParams(side, dbm_to_watts(config.tx_power_mbs_dbm), config.carrier_freq_mbs_hz,
                      config.scs_mbs_hz, config.n_subcarriers_mbs, config.symbol_duration_mbs_s)


def noise_variance(noise_psd_dbm_hz: float, scs_hz: float) -> float:
    """Per-resource-element noise power in watts: PSD times subcarrier bandwidth."""
    return dbm_to_watts(noise_psd_dbm_hz) * scs_hz


def steering_vector(angle: float, n_elems: int) -> np.ndarray:
    """Half-wavelength ULA response, elements indexed 1..n_elems."""
    if n_elems < 1:
        raise ValueError("n_elems must be >= 1")
    k = np.arange(1, n_elems + 1)
    return np.exp(1j * np.pi * k * np.sin(angle))


def path_gain(target: Target, ranges: tuple[float, float], wavelength: float,
              mode: GainMode | str = GainMode.UNIT) -> complex:
    """Complex target attenuation for one bistatic link.

    In ``bistatic_radar`` mode the reflectivity magnitude is read as the RCS
    in m^2 and its phase is kept.
    """
    d_tx, d_rx = ranges
    if not (d_tx > 0 and d_rx > 0):
        raise ValueError("ranges must be positive")
    mode = GainMode(mode)
    refl = complex(target.reflectivity)
    if mode is GainMode.UNIT:
        return refl
    rcs = abs(refl)
    phase = refl / rcs if rcs > 0 else 1.0
    return phase * np.sqrt(rcs) * wavelength / ((4 * np.pi) ** 1.5 * d_tx * d_rx)


def _target_terms(config: SystemConfig, scenario: Scenario, link: LinkParams,
                  gain_mode: GainMode, symbol_index: int):
    n = config.n_antennas
    for target in scenario.targets:
        aoa, aod, delay = bistatic_geometry(target.pos, scenario.mbs_pos, scenario.mibs_pos)
        ranges = (np.hypot(*np.subtract(target.pos, scenario.mbs_pos)),
                  np.hypot(*np.subtract(target.pos, scenario.mibs_pos)))
        gain = path_gain(target, ranges, link.wavelength_m, gain_mode)
        if symbol_index:
            fd = doppler_shift(target, aoa, aod, link.carrier_hz)
            gain = gain * np.exp(2j * np.pi * fd * symbol_index * link.symbol_duration_s)
        # the MiBS receiver sees the roles of AoA and AoD swapped
        rx_angle, tx_angle = (aoa, aod) if link.side is Side.MBS_RX else (aod, aoa)
        freq = np.exp(-2j * np.pi * np.arange(link.n_subcarriers) * link.scs_hz * delay)
        yield gain, steering_vector(rx_angle, n), steering_vector(tx_angle, n), freq


def noiseless_echo(config: SystemConfig, scenario: Scenario, side: Side | str,
                   symbol_index: int = 0,
                   gain_mode: GainMode | str = GainMode.BISTATIC_RADAR) -> np.ndarray:
    link = link_params(config, side)
    if not 0 <= symbol_index < config.n_symbols:
        raise ValueError("symbol_index out of range")
    n = config.n_antennas
    data = np.zeros((n, n, link.n_subcarriers), dtype=complex)
    for gain, a_rx, a_tx, freq in _target_terms(config, scenario, link, GainMode(gain_mode),
                                                symbol_index):
        data += gain * np.einsum("k,p,n->kpn", a_rx, a_tx, freq)
    return np.sqrt(link.power_w) * data


def complex_noise(rng: np.random.Generator, shape, variance: float) -> np.ndarray:
    scale = np.sqrt(variance / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def synthesize_echo(config: SystemConfig, scenario: Scenario, side: Side | str,
                    symbol_index: int = 0, seed=None,
                    gain_mode: GainMode | str = GainMode.BISTATIC_RADAR) -> EchoTensor:
    """Post-cancellation echo tensor for one receiver, with AWGN if enabled.

    ``seed`` may be an int or a ``numpy.random.Generator``.
    """
    side = Side(side)
    link = link_params(config, side)
    data = noiseless_echo(config, scenario, side, symbol_index, gain_mode)
    if scenario.noise_psd_dbm_hz is not None:
        rng = np.random.default_rng(seed)
        data = data + complex_noise(rng, data.shape,
                                    noise_variance(scenario.noise_psd_dbm_hz, link.scs_hz))
    return EchoTensor(data, link.scs_hz, side)


def qpsk_symbols(rng: np.random.Generator, shape) -> np.ndarray:
    """Unit-modulus QPSK symbols."""
    bits = rng.integers(0, 4, size=shape)
    return np.exp(1j * (np.pi / 4 + np.pi / 2 * bits))


def modulate(echo: EchoTensor, symbols: np.ndarray) -> EchoTensor:
    """Apply per-(tx antenna, subcarrier) symbols to a channel tensor."""
    return EchoTensor(echo.data * _broadcast_symbols(symbols, echo.data.shape), echo.scs_hz,
                      echo.side)


def _broadcast_symbols(symbols: np.ndarray, shape) -> np.ndarray:
    symbols = np.asarray(symbols)
    if symbols.ndim == 2:  # (tx antenna, subcarrier)
        symbols = symbols[np.newaxis, :, :]
    try:
        return np.broadcast_to(symbols, shape)
    except ValueError as exc:
        raise ValueError(f"symbol shape {symbols.shape} incompatible with {shape}") from exc


def cancel_communication(raw: EchoTensor, known_symbols: np.ndarray) -> EchoTensor:
    """Strip the known transmit symbols from each resource element.

    ``known_symbols`` is ``(n_tx, n_subcarriers)`` or the full tensor shape.
    """
    symbols = _broadcast_symbols(known_symbols, raw.data.shape)
    if np.any(symbols == 0):
        raise ZeroDivisionError("known symbol with zero magnitude")
    return EchoTensor(raw.data / symbols, raw.scs_hz, raw.side)


_MAGIC = b"CSET"
_HEADER = struct.Struct("<4s3QBd")
_SIDE_CODES = {Side.MBS_RX: 0, Side.MIBS_RX: 1}


def write_tensor(path, echo: EchoTensor) -> None:
    """Flat binary dump: header then interleaved float64 re/im in (k, p, n) order."""
    header = _HEADER.pack(_MAGIC, *echo.data.shape, _SIDE_CODES[echo.side], echo.scs_hz)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(echo.data, dtype="<c16").tobytes())


def read_tensor(path) -> EchoTensor:
    raw = Path(path).read_bytes()
    magic, n0, n1, n2, side_code, scs = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise ValueError(f"{path}: not a tensor dump")
    data = np.frombuffer(raw, dtype="<c16", offset=_HEADER.size).reshape(n0, n1, n2).copy()
    side = {v: k for k, v in _SIDE_CODES.items()}[side_code]
    return EchoTensor(data, scs, side)
