import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stresslane.evaluation import (CollisionDetector, CriticalityLabel, CriticalityMonitor,
                                   CriticalityThresholds, RunSummary, boxes_overlap, classify,
                                   compare_runs, ttb)
from stresslane.world import VehicleState


# ------------------------------------------------------------------ time to brake

def test_ttb_worked_value():
    assert ttb(50.0, 10.0, 8.5) == pytest.approx((50.0 - 100.0 / 17.0) / 10.0)
    assert ttb(50.0, 10.0, 8.5) == pytest.approx(4.41, abs=5e-3)


def test_ttb_zero_on_braking_boundary():
    assert ttb(10.0**2 / (2 * 8.5), 10.0) == pytest.approx(0.0, abs=1e-12)


def test_ttb_infinite_when_not_closing():
    assert ttb(5.0, 0.0) == math.inf and ttb(5.0, -3.0) == math.inf


def _final_gap(gap, v_rel, wait, a_max, dt=1e-3):
    """Coast for ``wait`` seconds, then brake fully; return the smallest gap."""
    t, g, w = 0.0, gap, v_rel
    while w > 0.0:
        a = a_max if t >= wait else 0.0
        w_next = max(0.0, w - a * dt)
        g -= 0.5 * (w + w_next) * dt
        w = w_next
        t += dt
    return g


def test_ttb_against_forward_simulation():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        v_rel = rng.uniform(0.5, 20.0)
        gap = v_rel**2 / 17.0 + rng.uniform(0.0, 60.0)
        wait = ttb(gap, v_rel)
        g = _final_gap(gap, v_rel, wait, 8.5)
        assert -v_rel * 1e-3 <= g <= v_rel * 1e-3


# ------------------------------------------------------------------ collisions

def _veh(vid, lane, s, y=0.0):
    return VehicleState(vid, "traffic", lane, s, 20.0, y_lat=y)


def test_collision_gap_and_overlap():
    det = CollisionDetector(3.5)
    assert det.step([_veh(1, 1, 0.0), _veh(2, 1, 5.0)], 0.0) == []
    assert det.step([_veh(1, 1, 0.0), _veh(2, 1, 4.4)], 0.1) == [((1, 2), 0.1)]


def test_adjacent_lanes_do_not_touch():
    det = CollisionDetector(3.5)
    assert det.step([_veh(1, 1, 0.0), _veh(2, 2, 1.0)], 0.0) == []


def test_contact_reported_once():
    det = CollisionDetector(3.5)
    a, b = _veh(1, 1, 0.0), _veh(2, 1, 4.0)
    assert len(det.step([a, b], 0.0)) == 1
    assert det.step([a, b], 0.1) == []
    b.s = 10.0
    det.step([a, b], 0.2)
    b.s = 4.0
    assert len(det.step([a, b], 0.3)) == 1


@given(s1=st.floats(0, 50), s2=st.floats(0, 50), l1=st.integers(1, 3), l2=st.integers(1, 3),
       y1=st.floats(-1.7, 1.7), y2=st.floats(-1.7, 1.7))
def test_overlap_matches_interval_oracle(s1, s2, l1, l2, y1, y2):
    a, b = _veh(1, l1, s1, y1), _veh(2, l2, s2, y2)
    lon = max(s1, s2) < min(s1 + 4.5, s2 + 4.5)
    c1, c2 = 3.5 * (l1 - 1) + y1, 3.5 * (l2 - 1) + y2
    lat = max(c1 - 0.9, c2 - 0.9) < min(c1 + 0.9, c2 + 0.9)
    assert boxes_overlap(a, b, 3.5) == (lon and lat)


def test_detector_finds_all_overlapping_pairs():
    rng = np.random.default_rng(3)
    for _ in range(200):
        vs = [_veh(i, int(rng.integers(1, 4)), float(rng.uniform(0, 60)),
                   float(rng.uniform(-1, 1))) for i in range(12)]
        expect = sorted((a.id, b.id) for i, a in enumerate(vs) for b in vs[i + 1:]
                        if boxes_overlap(a, b, 3.5))
        got = [p for p, _ in CollisionDetector(3.5).step(vs, 0.0)]
        assert got == expect


# ------------------------------------------------------------------ classification

def _scenario(samples, collision=False):
    return SimpleNamespace(frame=samples, collision=collision)


def test_classify_levels():
    calm = [{"ttb": None, "a_ego": 0.0}]
    assert classify(_scenario(calm)) == CriticalityLabel.NON_CRITICAL
    assert classify(_scenario(calm, collision=True)) == CriticalityLabel.VERY_CRITICAL
    assert classify(_scenario([{"ttb": 1.2, "a_ego": -1.0}])) == CriticalityLabel.EVENTUALLY_CRITICAL
    assert classify(_scenario([{"ttb": 3.0, "a_ego": -6.0}])) == CriticalityLabel.VERY_CRITICAL
    assert CriticalityLabel.EVENTUALLY_CRITICAL.text == "eventually critical"


@given(t1=st.floats(-2, 10), t2=st.floats(-2, 10), a=st.floats(0, 9))
def test_level_monotone_in_ttb(t1, t2, a):
    th = CriticalityThresholds()
    lo, hi = sorted((t1, t2))
    assert th.level(lo, a) >= th.level(hi, a)


def test_threshold_ordering_checked():
    assert CriticalityThresholds(ttb_very_critical=2.0).violations()


def test_monitor_merges_close_instants():
    m = CriticalityMonitor(quiet_time=1.0)
    for k, t_val in enumerate([5, 1.2, 1.2, 0.5, 5, 5, 5, 5, 5, 5, 5, 5, 1.0, 5]):
        m.update(0.1 * k, t_val, 0.0)
    m.close()
    assert (m.eventually_critical, m.very_critical) == (0, 1)
    m2 = CriticalityMonitor(quiet_time=1.0)
    for k in range(40):
        m2.update(0.1 * k, 1.0 if k in (0, 30) else 9.0, 0.0)
    m2.close()
    assert m2.eventually_critical == 2


# ------------------------------------------------------------------ summaries

def test_compare_requires_same_distance():
    a = RunSummary(1, 200.0, False, 0, 1, 0)
    with pytest.raises(ValueError, match="km mismatch"):
        compare_runs(a, RunSummary(1, 150.0, True, 1, 2, 3))


def test_self_comparison_ratios_are_one():
    a = RunSummary(1, 200.0, True, 4, 10, 3)
    assert [r for *_, r in compare_runs(a, a).rows] == [1.0, 1.0, 1.0]
    b = RunSummary(1, 200.0, False, 0, 5, 3)
    rows = compare_runs(b, a).rows
    assert rows[0][3] == math.inf and rows[1][3] == 2.0


def test_summary_rejects_nonpositive_distance():
    with pytest.raises(ValueError):
        RunSummary(1, 0.0, True, 0, 0, 0)
    assert RunSummary(2, 12.5, False, 0, 1, 2).csv_row() == "2,12.500,off,0,1,2"
