import math

import numpy as np
import pytest
from scipy import stats

from evtradio import config
from evtradio.channel import (build_scenario, db_to_lin, ground_truth_sinr, lin_to_db,
                              sample_grid_locations)
from evtradio.errors import ConfigError


def test_noise_power_from_bandwidth_and_noise_figure(desk_scenario):
    assert desk_scenario.noise_dbm == pytest.approx(-106.8, abs=1e-12)


def test_full_grid_cell_spacing():
    sc = build_scenario(profile="full")
    dx, dy = sc.cell_size
    assert round(dx, 2) == 1.33
    assert round(dy, 2) == 0.87


def test_desk_profile_grid(desk_scenario):
    assert (desk_scenario.nx, desk_scenario.ny) == (60, 40)
    assert desk_scenario.n_cells == 2400


def test_free_space_intercept_at_one_metre(desk_scenario):
    # 20 log10(4 pi f / c) at 2.5 GHz, computed independently
    expected = 20 * math.log10(4 * math.pi * 2.5e9 / 299_792_458.0)
    tx = np.array([[0.0, 0.0, desk_scenario.ue_height]])
    link = desk_scenario.serving_link
    pl = desk_scenario.path_loss_db(link, tx, [[1.0, 0.0]])[0, 0]
    assert pl == pytest.approx(expected + link.extra_loss_db, abs=1e-9)
    assert expected == pytest.approx(40.40, abs=0.01)


def test_path_loss_slope(desk_scenario):
    tx = np.array([[0.0, 0.0, desk_scenario.ue_height]])
    link = desk_scenario.interferer_link
    pl = desk_scenario.path_loss_db(link, tx, [[10.0, 0.0], [100.0, 0.0]])[0]
    assert pl[1] - pl[0] == pytest.approx(10 * link.exponent, abs=1e-9)


def test_db_round_trip():
    x = np.array([-30.0, 0.0, 12.5])
    np.testing.assert_allclose(lin_to_db(db_to_lin(x)), x, atol=1e-12)


def test_unknown_key_named():
    with pytest.raises(ConfigError, match="radio.bogus"):
        build_scenario({"radio": {"bogus": 1}})


def test_malformed_value_named():
    with pytest.raises(ConfigError, match="channel.serving.exponent"):
        build_scenario({"channel": {"serving": {"exponent": "steep"}}})


def test_bs_outside_sanity_box():
    with pytest.raises(ConfigError, match="sanity box"):
        build_scenario({"serving_bs": [[5000.0, 0.0, 6.0]]})


def test_grid_dimension_validated():
    with pytest.raises(ConfigError, match="grid.nx"):
        build_scenario({"grid": {"nx": 1}})


def test_unknown_profile():
    with pytest.raises(ConfigError, match="profile"):
        build_scenario(profile="huge")


def test_config_file_round_trip(tmp_path):
    path = tmp_path / "scn.yaml"
    path.write_text("grid:\n  nx: 12\n  ny: 10\nseed: 4\n")
    sc = build_scenario(config.read_config_file(path))
    assert (sc.nx, sc.ny, sc.seed) == (12, 10, 4)


def test_samples_positive_and_finite(desk_scenario):
    s = ground_truth_sinr(desk_scenario, [[3.0, -7.0]], 100_000, seed=1)
    assert s.samples.shape == (4, 1, 100_000)
    assert np.all(np.isfinite(s.samples)) and np.all(s.samples > 0)


def test_identical_seeds_identical_samples(desk_scenario):
    locs = [[0.0, 0.0], [50.0, 20.0]]
    a = ground_truth_sinr(desk_scenario, locs, 2000, seed=5)
    b = ground_truth_sinr(desk_scenario, locs, 2000, seed=5)
    c = ground_truth_sinr(desk_scenario, locs, 2000, seed=6)
    assert np.array_equal(a.samples, b.samples)
    assert not np.array_equal(a.samples, c.samples)


def test_keyed_streams_independent_of_batch(desk_scenario):
    locs = desk_scenario.flat_to_xy([10, 500, 1200])
    keys = [10, 500, 1200]
    batch = ground_truth_sinr(desk_scenario, locs, 1000, seed=3, keys=keys)
    alone = ground_truth_sinr(desk_scenario, locs[1:2], 1000, seed=3, keys=keys[1:2])
    assert np.array_equal(batch.samples[:, 1], alone.samples[:, 0])


def test_near_beats_far(desk_scenario):
    bs = desk_scenario.serving[0]
    near = [bs[0] + 5.0, bs[1]]
    far = [bs[0] + 150.0, bs[1] - 30.0]
    s = ground_truth_sinr(desk_scenario, [near, far], 10_000, seed=2, bs=[0])
    assert s.samples[0, 0].mean() > s.samples[0, 1].mean()


def test_no_interferers_gives_snr():
    sc = build_scenario({"interferers": []})
    loc = [[10.0, 5.0]]
    s = ground_truth_sinr(sc, loc, 100_000, seed=9, bs=[2]).samples[0, 0]
    ls = sc.large_scale(loc)
    fading = s * db_to_lin(sc.noise_dbm) / (db_to_lin(sc.p0_dbm) * ls["serving_gain"][2, 0])
    # Rician power gain has unit mean
    assert fading.mean() == pytest.approx(1.0, abs=0.01)
    # and its envelope follows the Rice law with the local K-factor
    k = ls["k"][2, 0]
    scale = math.sqrt(0.5 / (k + 1))
    nu = math.sqrt(k / (k + 1))
    p = stats.kstest(np.sqrt(fading[:20_000]), stats.rice(nu / scale, scale=scale).cdf).pvalue
    assert p > 1e-3


def test_location_outside_area_rejected(desk_scenario):
    with pytest.raises(ConfigError, match="outside"):
        ground_truth_sinr(desk_scenario, [[500.0, 0.0]], 10, seed=1)


def test_zero_samples_rejected(desk_scenario):
    with pytest.raises(ConfigError):
        ground_truth_sinr(desk_scenario, [[0.0, 0.0]], 0, seed=1)


def test_shadowing_field_statistics(desk_scenario):
    # twenty unit fields on the 60 x 40 lattice with 20 m exponential correlation
    fields = desk_scenario._unit_fields(20.0, 20, stream=99)
    assert fields.std() == pytest.approx(1.0, abs=0.1)
    dx = desk_scenario.cell_size[0]
    lag = 6  # 6 cells x 3.33 m = 20 m
    a, b = fields[:, :, :-lag].ravel(), fields[:, :, lag:].ravel()
    assert np.corrcoef(a, b)[0, 1] == pytest.approx(math.exp(-lag * dx / 20.0), abs=0.1)


def test_large_scale_frozen_across_seeds(desk_scenario):
    a = desk_scenario.large_scale([[12.0, 3.0]])
    b = desk_scenario.large_scale([[12.0, 3.0]])
    assert np.array_equal(a["serving_gain"], b["serving_gain"])


def test_k_factor_within_bounds(desk_scenario):
    k_db = lin_to_db(desk_scenario.large_scale(desk_scenario.cell_centers())["k"])
    assert k_db.min() >= -1e-9 and k_db.max() <= 10 + 1e-9


def test_grid_locations_distinct_and_deterministic(desk_scenario):
    a = sample_grid_locations(desk_scenario, 200, seed=1)
    b = sample_grid_locations(desk_scenario, 200, seed=1)
    assert np.array_equal(a, b)
    flat = desk_scenario.flat_index(a)
    assert len(np.unique(flat)) == 200
    np.testing.assert_allclose(desk_scenario.flat_to_xy(flat), a)


def test_grid_locations_too_many(desk_scenario):
    with pytest.raises(ConfigError, match="n_locations"):
        sample_grid_locations(desk_scenario, 2401, seed=1)
