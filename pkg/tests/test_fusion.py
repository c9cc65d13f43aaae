import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from coopsense.scenario import Scenario, Target, bistatic_geometry, desk_config
from coopsense.fusion import (FusionMode, Occupancy, compact, fuse_symbol_level, fused_bin_frequency,
                              fused_depth, link_lattice, occupancy_map)
from coopsense.waveform import EchoTensor, Side, noiseless_echo, synthesize_echo

MBS, MIBS = (0.0, 0.0), (300.0, 0.0)


def pair(a, b, scs=30e3, q=2):
    """Tensors as the receivers see them: MBS_RX at q*scs, MIBS_RX at scs."""
    return EchoTensor(b, q * scs, Side.MBS_RX), EchoTensor(a, scs, Side.MIBS_RX)


def test_hand_enumeration_q2():
    a = np.array([2.0 + 1j, 3.0]).reshape(1, 1, 2)
    b = np.array([4.0 - 1j, 5j]).reshape(1, 1, 2)
    fused = fuse_symbol_level(*pair(a, b), q=2)
    assert fused.occupancy.tolist() == [Occupancy.OVERLAP, Occupancy.MIBS_ONLY,
                                        Occupancy.MBS_ONLY]
    assert np.allclose(fused.data[0, 0], [(a[0, 0, 0] + b[0, 0, 0]) / 2, a[0, 0, 1], b[0, 0, 1]])
    assert fused.scs_base_hz == 30e3


def test_paper_literal_overlap_scale():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((3, 3, 4)) + 0j
    b = rng.standard_normal((3, 3, 4)) + 0j
    lit = fuse_symbol_level(*pair(a, b), mode="paper_literal")
    norm = fuse_symbol_level(*pair(a, b), mode=FusionMode.NORMALIZED)
    ov = lit.occupancy == Occupancy.OVERLAP
    assert np.allclose(lit.data[:, :, ov] * 2 * 9, norm.data[:, :, ov] * 2)
    assert np.array_equal(lit.data[:, :, ~ov], norm.data[:, :, ~ov])


def test_transpose_applied_to_mibs():
    a = np.arange(8, dtype=complex).reshape(2, 2, 2)
    b = np.zeros((2, 2, 2), dtype=complex)
    fused = fuse_symbol_level(*pair(a, b))
    assert fused.data[0, 1, 1] == a[1, 0, 1]


def test_q1_all_overlap():
    a = np.ones((2, 2, 5), dtype=complex)
    fused = fuse_symbol_level(*pair(a, 3 * a, q=1), q=1)
    counts = fused.counts()
    assert counts[Occupancy.OVERLAP] == 5
    assert counts[Occupancy.MIBS_ONLY] == counts[Occupancy.MBS_ONLY] == 0
    assert np.allclose(fused.data, 2.0)


def test_reciprocal_overlap_matches_neighbours():
    cfg = desk_config(tx_power_mibs_dbm=46.0, carrier_freq_mibs_hz=2.6e9)
    sc = Scenario(MBS, MIBS, (Target((150, 40)),))
    y_mbs = synthesize_echo(cfg, sc, Side.MBS_RX, gain_mode="unit")
    # MiBS-side tensor with the MBS-side phase law at the fine spacing
    fine = desk_config(scs_mibs_hz=480e3, tx_power_mibs_dbm=46.0, carrier_freq_mibs_hz=2.6e9,
                       n_subcarriers_mibs=128)
    ref = noiseless_echo(fine, sc, Side.MBS_RX, gain_mode="unit")
    y_mibs = EchoTensor(np.transpose(ref[:, :, :64], (1, 0, 2)), 480e3, Side.MIBS_RX)
    fused = fuse_symbol_level(y_mbs, y_mibs)
    occ = fused.occupancy != Occupancy.EMPTY
    assert np.allclose(fused.data[:, :, occ], ref[:, :, :fused.n_bins][:, :, occ], atol=1e-12)


def test_transpose_and_phase_continuity():
    cfg = desk_config()
    pos = (150.0, 40.0)
    aoa, aod, tau = bistatic_geometry(pos, MBS, MIBS)
    sc = Scenario(MBS, MIBS, (Target(pos),))
    fused = fuse_symbol_level(synthesize_echo(cfg, sc, Side.MBS_RX, gain_mode="unit"),
                              synthesize_echo(cfg, sc, Side.MIBS_RX, gain_mode="unit"))
    d = fused.data
    for state in (Occupancy.MIBS_ONLY, Occupancy.MBS_ONLY):
        bins = fused.occupancy == state
        sub = d[:, :, bins]
        assert np.allclose(sub[1:] / sub[:-1], np.exp(1j * math.pi * math.sin(aoa)))
        assert np.allclose(sub[:, 1:] / sub[:, :-1], np.exp(1j * math.pi * math.sin(aod)))
    q = cfg.q
    mbs_only = np.flatnonzero(fused.occupancy == Occupancy.MBS_ONLY)
    n = mbs_only[0]
    ratio = d[:, :, n + q] / d[:, :, n]
    assert np.allclose(ratio, np.exp(-2j * math.pi * q * cfg.scs_mbs_hz * tau))


def test_empty_bins_are_zero():
    rng = np.random.default_rng(1)
    a = rng.standard_normal((2, 2, 4)) + 1j
    b = rng.standard_normal((2, 2, 8)) + 1j
    fused = fuse_symbol_level(*pair(a, b, q=4), q=4)
    empty = fused.occupancy == Occupancy.EMPTY
    assert empty.any() and not np.any(fused.data[:, :, empty])
    assert fused.n_bins == fused_depth(4, 8, 4) == 29


@given(st.sampled_from([1, 2, 4]), st.integers(1, 70), st.integers(1, 70))
def test_partition_identities(q, n_mibs, n_mbs):
    occ = occupancy_map(n_mibs, n_mbs, q)
    mibs = np.count_nonzero(occ == Occupancy.MIBS_ONLY)
    mbs = np.count_nonzero(occ == Occupancy.MBS_ONLY)
    ov = np.count_nonzero(occ == Occupancy.OVERLAP)
    assert mibs + ov == n_mibs and mbs + ov == n_mbs
    n = np.arange(len(occ))
    assert np.array_equal(occ == Occupancy.OVERLAP, (n % q == 0) & (n < n_mibs) & (n // q < n_mbs))


def test_literal_depth_flag():
    a = np.ones((1, 1, 4), dtype=complex)
    fused = fuse_symbol_level(*pair(a, a), literal_depth=True)
    assert fused.n_bins == 2 * 4 - 1


def test_fuse_errors():
    a = np.ones((2, 2, 4), dtype=complex)
    with pytest.raises(ValueError):
        fuse_symbol_level(*pair(a, np.ones((3, 3, 4), dtype=complex)))
    with pytest.raises(ValueError):
        fuse_symbol_level(*pair(a, a), q=4)
    y_mbs, y_mibs = pair(a, a)
    with pytest.raises(ValueError):
        fuse_symbol_level(y_mibs, y_mbs)


def test_equalize_scales_links():
    a = np.ones((1, 1, 2), dtype=complex)
    fused = fuse_symbol_level(*pair(5 * a, 100 * a), equalize=True)
    assert np.allclose(np.abs(fused.data[0, 0]), 1.0)


def test_bin_frequency():
    assert fused_bin_frequency(0, 30e3) == 0.0
    assert fused_bin_frequency(511, 30e3) == pytest.approx(15.33e6)
    assert fused_bin_frequency(1, 30e3) == 30e3
    with pytest.raises(IndexError):
        fused_bin_frequency(5, 30e3, n_bins=5)
    with pytest.raises(IndexError):
        fused_bin_frequency(-1, 30e3)


def test_link_lattice_and_compact():
    cfg = desk_config()
    sc = Scenario(MBS, MIBS, (Target((150, 40)),))
    y_mbs = synthesize_echo(cfg, sc, Side.MBS_RX)
    lat = link_lattice(y_mbs, 2)
    assert lat.n_bins == 127 and lat.scs_base_hz == cfg.scs_mbs_hz
    data, scs, bins = compact(lat)
    assert np.array_equal(data, y_mbs.data) and scs == cfg.scs_mibs_hz
    y_mibs = synthesize_echo(cfg, sc, Side.MIBS_RX)
    lat = link_lattice(y_mibs, 2)
    assert np.array_equal(lat.data, np.transpose(y_mibs.data, (1, 0, 2)))
    fused = fuse_symbol_level(y_mbs, y_mibs)
    data, scs, bins = compact(fused)
    assert data.shape[2] == 127 and scs == cfg.scs_mbs_hz and len(bins) == 96
