import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evtradio.channel import ground_truth_sinr
from evtradio.errors import ConfigError, DomainError
from evtradio.evt import QosTarget
from evtradio.handover import (ClassicalState, HoEvent, HoPolicy, HoState, classical_ho_step,
                               genie_power, ho_step, initial_step, nearest_bs, select_bs)
from evtradio.powermap import load_maps, save_maps

TARGET = QosTarget.from_db(10.0, 1e-3)


def one_cell_maps(*values):
    return np.array(values, dtype=float).reshape(len(values), 1, 1)


def test_select_bs_argmin():
    assert select_bs(one_cell_maps(10, 5, 7, 20), (0, 0)) == (5.0, 1)


def test_select_bs_tie_goes_to_lowest_index():
    assert select_bs(one_cell_maps(4, 4, 4, 4), (0, 0)) == (4.0, 0)


def test_select_bs_out_of_bounds():
    with pytest.raises(DomainError):
        select_bs(one_cell_maps(1, 2), (1, 0))


def test_select_bs_agrees_with_map_files(tmp_path, tiny_scenario, tiny_maps):
    save_maps(tiny_maps, tmp_path)
    files = load_maps(tmp_path)
    rng = np.random.default_rng(1)
    for _ in range(100):
        ix, iy = int(rng.integers(tiny_scenario.nx)), int(rng.integers(tiny_scenario.ny))
        column = [pm.fused[iy, ix] for pm in files]
        assert select_bs(files, (ix, iy)) == (min(column), int(np.argmin(column)))


def _state(serving=0, t0=0.0, n=2):
    return HoState(serving, t0, n)


def test_no_handover_before_hold_timer():
    maps = one_cell_maps(20, 10)
    step = ho_step(_state(t0=0.0), HoPolicy(1.0, 3.0, 50.0), maps, (0, 0), t=0.5)
    assert step.event is None and step.state.serving == 0 and step.power_dbm == 20.0


def test_handover_when_both_conditions_hold():
    maps = one_cell_maps(15, 10)
    step = ho_step(_state(t0=0.0), HoPolicy(1.0, 3.0, 50.0), maps, (0, 0), t=2.0)
    assert step.event.trigger == "power-saving"
    assert (step.event.previous, step.event.new) == (0, 1)
    assert step.state.serving == 1 and step.state.last_ho_s == 2.0
    assert step.power_dbm == 10.0


def test_saving_below_hysteresis_keeps_bs():
    maps = one_cell_maps(12, 10)
    step = ho_step(_state(), HoPolicy(1.0, 3.0, 50.0), maps, (0, 0), t=5.0)
    assert step.event is None and step.state.last_ho_s == 0.0


def test_pmax_violation_overrides_timer():
    maps = one_cell_maps(51, 40)
    step = ho_step(_state(t0=0.0), HoPolicy(1.0, 3.0, 50.0), maps, (0, 0), t=0.1)
    assert step.event.trigger == "p_max-violation" and step.state.serving == 1
    assert not step.outage_risk


def test_power_clamped_when_every_bs_exceeds_pmax():
    maps = one_cell_maps(55, 53)
    step = ho_step(_state(), HoPolicy(1.0, 3.0, 50.0), maps, (0, 0), t=0.1)
    assert step.state.serving == 1
    assert step.power_dbm == 50.0 and step.outage_risk


def test_time_before_last_handover_rejected():
    with pytest.raises(DomainError):
        ho_step(_state(t0=3.0), HoPolicy(), one_cell_maps(1, 2), (0, 0), t=1.0)


def test_initial_step_selects_minimum():
    step = initial_step(one_cell_maps(9, 3, 5), HoPolicy(), (0, 0), 0.0, (1.0, 2.0))
    assert step.state.serving == 1 and step.event.trigger == "initial"
    assert step.event.previous is None


def test_activation_is_one_hot():
    np.testing.assert_array_equal(HoState(2, 0.0, 4).activation, [0, 0, 1, 0])
    with pytest.raises(DomainError):
        HoState(4, 0.0, 4)


def test_event_validation():
    with pytest.raises(DomainError):
        HoEvent(1.0, (), 2, 2, "power-saving")
    with pytest.raises(ConfigError):
        HoEvent(1.0, (), 1, 2, "teleport")


def test_policy_validation():
    with pytest.raises(ConfigError, match="dt"):
        HoPolicy(-1.0, 3.0, 50.0)
    with pytest.raises(ConfigError, match="dp"):
        HoPolicy(1.0, -3.0, 50.0)


def test_nearest_bs_at_projection(desk_scenario):
    for b, (x, y, _) in enumerate(desk_scenario.serving):
        assert nearest_bs(desk_scenario, (x, y)) == b


def test_nearest_bs_centre_tie(desk_scenario):
    assert nearest_bs(desk_scenario, (0.0, 0.0)) == 0


def test_nearest_bs_brute_force(desk_scenario):
    rng = np.random.default_rng(2)
    for x, y in zip(rng.uniform(-100, 100, 100), rng.uniform(-65, 65, 100)):
        d = [math.dist((x, y, desk_scenario.ue_height), tuple(p))
             for p in desk_scenario.serving]
        assert nearest_bs(desk_scenario, (x, y)) == int(np.argmin(d))


def run_classical(trace, gamma0=1.0, ttt=0.036, dt=0.009):
    """Feed a (T, B) SINR trace; return handover snapshot indices."""
    state = ClassicalState(0)
    hos = []
    for i, row in enumerate(trace):
        state, ev = classical_ho_step(state, gamma0, ttt, row, i * dt, dt)
        if ev is not None:
            hos.append((i, ev.previous, ev.new))
    return hos, state


def test_classical_no_trigger_when_above():
    hos, state = run_classical(np.full((100, 2), 5.0))
    assert hos == [] and state.below_count == 0


def test_classical_strict_time_to_trigger():
    # 4 snapshots x 9 ms = exactly the 36 ms TTT: no handover
    trace = np.array([[5.0, 3.0]] * 3 + [[0.5, 3.0]] * 4 + [[5.0, 3.0]] * 3)
    assert run_classical(trace)[0] == []
    # one more snapshot below the target triggers it
    trace = np.array([[5.0, 3.0]] * 3 + [[0.5, 3.0]] * 5 + [[5.0, 3.0]] * 3)
    assert run_classical(trace)[0] == [(7, 0, 1)]


def test_classical_scripted_schedule():
    # dips of 3, 6 and 10 snapshots; the other BS is always better during a dip
    good, bad = [5.0, 2.0], [0.1, 2.0]
    trace = [good] * 5 + [bad] * 3 + [good] * 5 + [bad] * 6 + [good] * 5
    trace += [[2.0, 0.1]] * 10
    hos, _ = run_classical(np.array(trace))
    # second dip starts at index 13, fifth snapshot below is index 17;
    # the UE is then on BS 1 whose dip starts at 24, fifth snapshot below is 28
    assert hos == [(17, 0, 1), (28, 1, 0)]


def test_classical_requires_positive_ttt():
    with pytest.raises(ConfigError):
        classical_ho_step(ClassicalState(0), 1.0, 0.0, [1.0, 1.0], 0.0, 0.009)


def test_genie_already_compliant():
    samples = np.full(20_000, 20.0)
    assert genie_power(samples, TARGET, p0_dbm=0.0) <= 0.0


def test_genie_single_atom():
    samples = np.full(20_000, TARGET.gamma0 / 2)
    assert genie_power(samples, TARGET, 0.0) == pytest.approx(10 * math.log10(2), abs=1e-9)
    assert genie_power(samples, TARGET, 0.0) == pytest.approx(3.0103, abs=1e-4)


def test_genie_needs_resolution():
    with pytest.raises(ConfigError, match="genie_samples"):
        genie_power(np.ones(500), TARGET)


def bisection_power(samples, target, lo=-60.0, hi=90.0):
    """Smallest power with empirical outage <= zeta, by bisection on the dB axis."""
    def ok(p):
        return np.mean(samples * 10 ** (p / 10) < target.gamma0) <= target.zeta
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        lo, hi = (lo, mid) if ok(mid) else (mid, hi)
    return hi


def test_genie_matches_bisection(desk_scenario):
    rng = np.random.default_rng(3)
    cells = rng.choice(desk_scenario.n_cells, 20, replace=False)
    s = ground_truth_sinr(desk_scenario, desk_scenario.flat_to_xy(cells), 20_000, seed=4, bs=[1])
    for samples in s.samples[0]:
        g = genie_power(samples, TARGET)
        assert g == pytest.approx(bisection_power(samples, TARGET), abs=0.05)
        assert np.mean(samples * 10 ** (g / 10) < TARGET.gamma0) <= TARGET.zeta


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31), st.floats(1e-3, 0.05), st.floats(1e-3, 0.05))
def test_genie_monotone_in_zeta(seed, z1, z2):
    samples = np.random.default_rng(seed).exponential(size=10_000)
    lo, hi = sorted((z1, z2))
    assert genie_power(samples, QosTarget(10.0, hi)) <= genie_power(samples, QosTarget(10.0, lo))
