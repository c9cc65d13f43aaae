import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from coopsense.scenario import (SPEED_OF_LIGHT, GeometryError, Scenario, SystemConfig, Target,
                                bistatic_geometry, build_grid, desk_config, doppler_shift,
                                reference_scenario, snap_to_grid)
from oracles import C0, path_sum

MBS, MIBS = (0.0, 0.0), (300.0, 0.0)


def test_speed_of_light_exact():
    assert SPEED_OF_LIGHT == C0


def test_default_config_values():
    cfg = SystemConfig()
    assert cfg.q == 4
    assert (cfg.n_subcarriers_mbs, cfg.n_subcarriers_mibs, cfg.n_symbols) == (512, 512, 128)
    assert cfg.n_antennas == 64
    assert (cfg.tx_power_mbs_dbm, cfg.tx_power_mibs_dbm) == (46.0, 27.0)


def test_desk_config_ratio():
    cfg = desk_config()
    assert cfg.q == 2 and cfg.n_antennas == 8 and cfg.n_subcarriers_mibs == 64


@pytest.mark.parametrize("kwargs", [
    dict(scs_mbs_hz=30e3, scs_mibs_hz=45e3),
    dict(scs_mbs_hz=60e3, scs_mibs_hz=30e3),
    dict(n_rx=4, n_tx=8),
    dict(n_symbols=0),
    dict(tx_power_mbs_dbm=math.inf),
    dict(carrier_freq_mibs_hz=0.0),
])
def test_config_rejects(kwargs):
    with pytest.raises(ValueError):
        SystemConfig(**kwargs)


def test_target_validation():
    with pytest.raises(ValueError):
        Target((1, 1), speed=-1.0)
    with pytest.raises(ValueError):
        Target((1, 1), heading=math.pi)
    Target((1, 1), heading=-math.pi)


def test_scenario_validation():
    with pytest.raises(ValueError):
        Scenario((0, 0), (0, 0))
    with pytest.raises(ValueError):
        Scenario(targets=(Target((1, 2)), Target((1, 2))))
    assert reference_scenario().baseline_m == 300.0


def test_geometry_coincident_with_mibs():
    with pytest.raises(GeometryError):
        bistatic_geometry((300.0, 0.0), MBS, MIBS)


def test_geometry_behind_array():
    with pytest.raises(GeometryError):
        bistatic_geometry((100.0, -5.0), MBS, MIBS)


def test_geometry_delay_hand_value():
    _, _, delay = bistatic_geometry((200.0, 30.0), MBS, MIBS)
    r = math.sqrt(200 ** 2 + 30 ** 2) + math.sqrt(100 ** 2 + 30 ** 2)
    assert r == pytest.approx(306.64, abs=0.01)
    assert delay == pytest.approx(r / C0, rel=1e-14)
    assert delay == pytest.approx(1.0228e-6, rel=1e-4)


def test_geometry_broadside():
    aoa, _, _ = bistatic_geometry((0.0, 100.0), MBS, MIBS)
    assert aoa == 0.0


def test_geometry_sine_convention():
    aoa, aod, _ = bistatic_geometry((200.0, 30.0), MBS, MIBS)
    assert math.sin(aoa) == pytest.approx(200 / math.hypot(200, 30))
    assert math.sin(aod) == pytest.approx(-100 / math.hypot(100, 30))


def test_doppler_examples():
    assert doppler_shift(Target((1, 1)), 0.3, -0.2, 2.6e9) == 0.0
    fd = doppler_shift(Target((1, 1), speed=10.0, heading=0.0), 0.0, 0.0, 2.6e9)
    assert fd == pytest.approx(-2 * 10 * 2.6e9 / C0)
    assert fd == pytest.approx(-173.45, abs=0.01)
    fd = doppler_shift(Target((1, 1), speed=10.0, heading=0.0), -math.pi / 2, math.pi / 2, 2.6e9)
    assert abs(fd) < 1e-9
    with pytest.raises(ValueError):
        doppler_shift(Target((1, 1)), 0, 0, 0.0)


coords = st.tuples(st.floats(-500, 500), st.floats(1, 500))


@settings(max_examples=200, deadline=None)
@given(coords)
def test_swap_bs_swaps_angles(target):
    a = bistatic_geometry(target, MBS, MIBS)
    b = bistatic_geometry(target, MIBS, MBS)
    assert a[0] == b[1] and a[1] == b[0]
    assert a[2] == pytest.approx(b[2], rel=1e-15)


@settings(max_examples=200, deadline=None)
@given(coords)
def test_delay_lower_bound(target):
    _, _, delay = bistatic_geometry(target, MBS, MIBS)
    assert delay * C0 >= 300.0 * (1 - 1e-12)
    assert delay * C0 == pytest.approx(path_sum(target, MBS, MIBS), rel=1e-12)


def test_grid_counting():
    grid = build_grid((0, 300, 10, 100), 10, reference_scenario())
    assert grid.n_grid == 31 * 10


def test_grid_row_major_x_fastest():
    grid = build_grid((0, 20, 10, 20), 10, reference_scenario())
    assert grid.points[:4].tolist() == [[0, 10], [10, 10], [20, 10], [0, 20]]


def test_grid_single_point_region():
    grid = build_grid((200, 200, 30, 30), 1.0, reference_scenario())
    assert grid.n_grid == 1
    assert grid.delays[0] == pytest.approx(path_sum((200, 30), MBS, MIBS) / C0)


def test_grid_coarse_resolution_single_point():
    grid = build_grid((0, 300, 10, 100), 1000.0, reference_scenario())
    assert grid.n_grid == 1 and grid.points[0].tolist() == [0.0, 10.0]


def test_grid_excludes_bs_points():
    sc = Scenario((0.0, 10.0), (300.0, 0.0))
    with pytest.raises(GeometryError):
        build_grid((0, 300, 10, 100), 10, sc)  # remaining y=10 points sit on the MBS array plane
    sc = Scenario((0.0, 5.0), (300.0, 5.0))
    grid = build_grid((0, 300, 10, 100), 10, sc)
    assert grid.n_grid == 310


def test_grid_empty_after_exclusion():
    sc = Scenario((0.0, 10.0), (300.0, 0.0))
    with pytest.raises(ValueError):
        build_grid((0, 0, 10, 10), 1.0, sc)


def test_grid_rejects_bad_inputs():
    with pytest.raises(ValueError):
        build_grid((0, 300, 10, 10), 1.0, reference_scenario())
    with pytest.raises(ValueError):
        build_grid((0, 300, 10, 100), 0.0, reference_scenario())


def test_grid_consistency_invariant():
    grid = build_grid((0, 300, 10, 100), 7.5, reference_scenario())
    for g in range(0, grid.n_grid, 17):
        assert bistatic_geometry(grid.points[g], MBS, MIBS) == (
            grid.aoa[g], grid.aod[g], grid.delays[g])


def test_snap_to_grid():
    assert snap_to_grid((201.2, 29.1), resolution=5.0) == (200.0, 30.0)
    assert snap_to_grid((-40, 500), resolution=5.0) == (0.0, 100.0)
    grid = build_grid(resolution=5.0, scenario=reference_scenario())
    for t in reference_scenario().targets:
        assert list(snap_to_grid(t.pos, resolution=5.0)) in grid.points.tolist()
