import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from stresslane.maneuvers import (KMH, AccBrakeParams, DriverBrakeParams, InfeasibleManeuver,
                                  LceParams, LceScheduler, acc_brake_profile,
                                  acc_release_speed_loss,
                                  acc_transition_coefficients, decel_lookup, driver_brake_accel,
                                  driver_brake_profile, driver_peak_decel, iso_limits,
                                  lane_change_accel, lane_change_trajectory, lateral_coefficients,
                                  lateral_offset, lateral_velocity, lce_catalog,
                                  table_braking_time)
from stresslane.world import VehicleState


# ---------------------------------------------------------------- driver braking

def test_driver_profile_integral_matches_speed_drop():
    params = DriverBrakeParams(t_d=12.0, v_final_kmh=28.67)
    v0 = 71.03 * KMH
    area, _ = integrate.quad(lambda t: float(driver_brake_accel(t, v0, params)), 0.0, 12.0,
                             epsabs=1e-12)
    assert area == pytest.approx(28.67 * KMH - v0, abs=1e-9)


def test_driver_peak_reached_early_and_fades():
    params = DriverBrakeParams(t_d=12.0, v_final_kmh=28.67)
    prof = driver_brake_profile(71.03 * KMH, params, 0.01)
    k = int(np.argmin(prof.a))
    # th(1-th)^2 peaks at th = 1/3
    assert prof.t[k] == pytest.approx(4.0, abs=0.01)
    assert prof.a[0] == 0.0 and abs(prof.a[-1]) < 1e-12
    assert prof.a.min() == pytest.approx(prof.meta["a_peak"], rel=1e-6)


@given(v0=st.floats(10.0, 45.0), v_final=st.floats(0.0, 30.0), t_d=st.floats(6.0, 20.0),
       m=st.sampled_from([0.5, 1.0, 2.0]))
@settings(max_examples=60, deadline=None)
def test_driver_step_means_integrate_exactly(v0, v_final, t_d, m):
    params = DriverBrakeParams(t_d=t_d, v_final_kmh=v_final, shape_m=m)
    if v0 <= v_final * KMH or driver_peak_decel(v0, params) < -8.5:
        return
    prof = driver_brake_profile(v0, params, 0.1)
    assert prof.speed(v0)[-1] == pytest.approx(v_final * KMH, abs=1e-9)


def test_driver_profile_rejects_impossible_demand():
    with pytest.raises(InfeasibleManeuver):
        driver_brake_profile(60.0, DriverBrakeParams(t_d=2.0, v_final_kmh=0.0), 0.1)


def test_driver_profile_noop_when_already_slow():
    prof = driver_brake_profile(5.0, DriverBrakeParams(v_final_kmh=20.0), 0.1)
    assert prof.n_steps == 0


# ---------------------------------------------------------------- ACC braking

def test_iso_envelope_corners():
    assert iso_limits(25.0) == (3.5, 2.5)
    assert iso_limits(2.0) == (5.0, 5.0)
    assert iso_limits(12.5) == pytest.approx((4.25, 3.75))


def test_acc_parabola_has_vertex_at_delta():
    big_a, big_b, big_c = acc_transition_coefficients(0.0, -3.0, 4.0)
    y = lambda t: big_a * t * t + big_b * t + big_c
    assert y(4.0) == pytest.approx(-3.0)
    assert 2 * big_a * 4.0 + big_b == pytest.approx(0.0)
    assert abs(big_b) == pytest.approx(1.5)


def test_acc_profile_reaches_target_and_releases():
    prof = acc_brake_profile(AccBrakeParams(), 30.0, 10.0, 0.1)
    v = prof.speed(30.0)
    assert prof.meta["v_at_target"] <= 10.0 + 1e-9
    assert prof.a[-1] == 0.0
    assert prof.a.min() == pytest.approx(-3.0)
    # release keeps slowing a little past the target, never below zero
    assert 0.0 <= v[-1] < 10.0


@given(v0=st.floats(8.0, 40.0), frac=st.floats(0.1, 0.9), a1=st.floats(-3.5, -0.5),
       jerk=st.floats(0.5, 3.0))
@settings(max_examples=60, deadline=None)
def test_acc_jerk_never_exceeds_cap(v0, frac, a1, jerk):
    params = AccBrakeParams(a1=a1, jerk_limit=jerk)
    try:
        prof = acc_brake_profile(params, v0, frac * v0, 0.1)
    except InfeasibleManeuver:
        return
    cap = min(jerk, iso_limits(v0)[1])
    v = prof.speed(v0)
    moving = v[1:] > 1e-9
    # the onset parabola is steepest at t = 0; samples and the hold are bounded by it
    assert np.all(np.abs(np.diff(prof.a))[moving] / 0.1 <= cap + 1e-6)
    assert np.all(v >= -1e-12)


def test_acc_release_loss_matches_profile():
    loss = acc_release_speed_loss(-3.0, 1.5)
    prof = acc_brake_profile(AccBrakeParams(), 30.0, 10.0 + loss, 0.01)
    v = prof.speed(30.0)
    assert v[-1] == pytest.approx(10.0, abs=0.15)


def test_acc_rejects_decel_above_iso_cap():
    with pytest.raises(InfeasibleManeuver):
        acc_brake_profile(AccBrakeParams(a1=-4.0), 30.0, 10.0, 0.1)


# ---------------------------------------------------------------- deceleration table

@pytest.mark.parametrize("approach,current,expected", [
    (75, 65, 0.78), (85, 15, 1.9), (45, 45, 0.67), (55, 5, 0.84), (62, 28, 2.12)])
def test_table_cells(approach, current, expected):
    cell = decel_lookup(approach, current)
    assert cell.decel == expected and not cell.fallback


def test_table_missing_cell_falls_back_to_nearest_row():
    cell = decel_lookup(45, 75)
    assert cell.fallback and cell.decel == 0.67


def test_table_rejects_out_of_range_approach():
    with pytest.raises(ValueError):
        decel_lookup(30, 20)


def test_table_braking_time_is_clipped():
    assert 10.1 <= table_braking_time(85.0, 10.0) <= 17.2
    assert table_braking_time(71.03, 28.67) == pytest.approx(10.1)


# ---------------------------------------------------------------- lane change

def test_lateral_coefficients_closed_form():
    c5, c4, c3 = lateral_coefficients(3.5, 5.0)
    assert (c5, c4, c3) == pytest.approx((21 / 3125, -21 / 250, 7 / 25))


@given(h=st.floats(1.0, 5.0), t_m=st.floats(2.0, 10.0))
def test_lateral_path_boundary_conditions(h, t_m):
    assert float(lateral_offset(0.0, h, t_m)) == 0.0
    assert float(lateral_offset(t_m, h, t_m)) == pytest.approx(h, abs=1e-9)
    assert float(lateral_offset(t_m / 2, h, t_m)) == pytest.approx(h / 2, abs=1e-9)
    assert float(lateral_velocity(0.0, h, t_m)) == 0.0
    assert float(lateral_velocity(t_m, h, t_m)) == pytest.approx(0.0, abs=1e-12)


def test_lateral_velocity_is_derivative():
    t = np.linspace(0.2, 5.8, 29)
    eps = 1e-6
    num = (lateral_offset(t + eps, 3.5, 6.0) - lateral_offset(t - eps, 3.5, 6.0)) / (2 * eps)
    assert np.allclose(lateral_velocity(t, 3.5, 6.0), num, atol=1e-6)


def test_lane_change_step_means_match_quadrature():
    params = LceParams(t_m=6.0, a_max=1.2)
    prof = lane_change_trajectory(params, 85 * KMH, "right", 0.1)
    for k in (0, 7, 31, 59):
        ref, _ = integrate.quad(lambda t: float(lane_change_accel(t, 1.2, 6.0)),
                                prof.t[k], prof.t[k + 1])
        assert prof.a_step[k] == pytest.approx(ref / 0.1, abs=1e-12)
    # a full sine period leaves the speed unchanged
    assert prof.speed(20.0)[-1] == pytest.approx(20.0, abs=1e-12)


def test_left_change_moves_towards_lane_one():
    prof = lane_change_trajectory(LceParams(), 25.0, "left", 0.1)
    assert prof.y_lat[-1] == pytest.approx(-3.5)
    assert np.sum(prof.lateral_rate) * 0.1 == pytest.approx(-3.5)


# ---------------------------------------------------------------- LCE scheduling

def _veh(vid, lane, s, kind="traffic"):
    return VehicleState(vid, kind, lane, s, 25.0)


def test_catalogs():
    assert [e.name for e in lce_catalog(2)] == ["cut_in_from_left", "cut_in_from_right"]
    assert len(lce_catalog(3)) == 3
    with pytest.raises(ValueError):
        lce_catalog(4)


def test_scheduler_cycles_in_order_with_min_spacing():
    sched = LceScheduler(LceParams(t_int_min=300.0), 2)
    ego = _veh(0, 2, 100.0, "ego")
    left = _veh(5, 1, 102.0)
    rng = np.random.default_rng(0)
    assert sched.step(0.0, ego, [left], rng).event.name == "cut_in_from_left"
    # too early, and then wrong ego lane for the second event
    assert sched.step(299.9, ego, [left], rng) is None
    assert sched.step(300.0, ego, [left], rng) is None
    ego1 = _veh(0, 1, 100.0, "ego")
    right = _veh(6, 2, 101.0)
    pick = sched.step(310.0, ego1, [right], rng)
    assert pick.vehicle_id == 6 and pick.direction == "left"
    assert sched.cycle == 1 and sched.index == 0


def test_scheduler_candidate_window():
    sched = LceScheduler(LceParams(ahead_window=8.0), 3)
    ego = _veh(0, 2, 100.0, "ego")
    event = sched.catalog[0]
    vs = [_veh(1, 1, 97.0), _veh(2, 1, 97.8), _veh(3, 1, 112.5), _veh(4, 1, 112.6), _veh(5, 3, 100.0)]
    assert [v.id for v in sched.candidates(ego, vs, event)] == [2, 3]


def test_middle_source_cuts_towards_ego():
    sched = LceScheduler(LceParams(), 3)
    sched.index = 2
    rng = np.random.default_rng(1)
    pick = sched.step(0.0, _veh(0, 3, 100.0, "ego"), [_veh(9, 2, 101.0)], rng)
    assert pick.direction == "right"


def test_param_violations():
    assert LceParams(t_m=0).violations()
    assert DriverBrakeParams(a_peak=-9.0).violations()
    assert AccBrakeParams(a1=1.0).violations()
    assert not LceParams().violations()
