"""Behaviour models for manipulated traffic vehicles.

Three maneuvers are provided:

* a driver braking profile (single-peak polynomial deceleration),
* an ACC braking profile built from a jerk-limited parabola and bounded by
  the ISO 22179 deceleration/jerk envelope,
* an aggressive lane change (quintic lateral path, sinusoidal longitudinal
  acceleration) together with the scheduler that decides when cut-ins fire.

All profiles are sampled on the simulation grid.  ``ManeuverProfile.a`` holds
point samples ``a(t_k)``; ``ManeuverProfile.a_step`` holds the exact mean
acceleration over ``[t_k, t_k + dt)`` so that a semi-implicit Euler integrator
fed with ``a_step`` reproduces the continuous speed change exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple, Sequence

import numpy as np

KMH = 1.0 / 3.6

COMFORT_DECEL_LIMIT = -3.5
EMERGENCY_DECEL_LIMIT = -8.5
BRAKING_TIME_RANGE = (10.1, 17.2)


class InfeasibleManeuver(ValueError):
    """Raised when a requested maneuver violates its physical envelope."""


class ManeuverKind(str, Enum):
    DRIVER_BRAKE = "driver_brake"
    ACC_BRAKE = "acc_brake"
    LANE_CHANGE = "lane_change"


@dataclass(frozen=True)
class DriverBrakeParams:
    """Driver braking configuration.

    ``a_peak`` is the nominal peak used for reporting and validation; the
    profile derives its own peak from ``(v0, v_final, t_d)``.
    """

    t_d: float = 12.0
    v_final_kmh: float = 20.0
    a_peak: float = -1.7
    shape_m: float = 1.0

    def violations(self) -> list[str]:
        out = []
        if not EMERGENCY_DECEL_LIMIT <= self.a_peak < 0:
            out.append("a_peak must lie in [-8.5, 0)")
        if self.t_d <= 0:
            out.append("t_d must be positive")
        if self.v_final_kmh < 0:
            out.append("v_final must be >= 0")
        if self.shape_m <= 0:
            out.append("shape_m must be positive")
        return out


@dataclass(frozen=True)
class AccBrakeParams:
    a0: float = 0.0
    a1: float = -3.0
    jerk_limit: float = 1.5

    def violations(self) -> list[str]:
        out = []
        if self.a1 >= 0:
            out.append("a1 must be negative")
        if self.jerk_limit <= 0:
            out.append("jerk_limit must be positive")
        return out


@dataclass(frozen=True)
class LceParams:
    """Lane change event configuration.

    Attributes
    ----------
    t_m : float
        maneuver time, in s
    h : float
        lateral displacement at the end of the maneuver, in m
    a_max : float
        peak longitudinal acceleration during the maneuver, in m/s2
    t_int_min : float
        minimum time between two consecutive lane change events, in s
    init_times : tuple of float
        earliest run time at which each catalog event may fire during the
        first pass through the catalog
    ahead_window : float
        how far in front of the ego's front bumper a candidate's rear may be,
        in m
    """

    t_m: float = 6.0
    h: float = 3.5
    a_max: float = 1.2
    t_int_min: float = 300.0
    init_times: tuple[float, ...] = ()
    ahead_window: float = 8.0

    def violations(self) -> list[str]:
        out = []
        if self.t_m <= 0:
            out.append("t_m must be positive")
        if self.h <= 0:
            out.append("h must be positive")
        if self.t_int_min < 0:
            out.append("t_int_min must be >= 0")
        if self.ahead_window < 0:
            out.append("ahead_window must be >= 0")
        return out


@dataclass(frozen=True)
class ManeuverProfile:
    kind: ManeuverKind
    dt: float
    t: np.ndarray
    a: np.ndarray
    a_step: np.ndarray
    y_lat: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def duration(self) -> float:
        return float(self.t[-1])

    @property
    def n_steps(self) -> int:
        return len(self.a_step)

    @property
    def lateral_rate(self) -> np.ndarray:
        """Per-step lateral velocity that moves exactly between samples."""
        return np.diff(self.y_lat) / self.dt

    def speed(self, v0: float) -> np.ndarray:
        """Speed at every grid point when driven by ``a_step``."""
        return v0 + np.concatenate(([0.0], np.cumsum(self.a_step) * self.dt))


def _grid(duration: float, dt: float) -> np.ndarray:
    n = max(int(math.ceil(duration / dt - 1e-9)), 0)
    return np.arange(n + 1) * dt


# --------------------------------------------------------------------------
# driver braking


def _driver_shape_constants(m: float) -> tuple[float, float]:
    """Return ``(r, I)`` for f(th) = th (1 - th**m)**2.

    ``r`` scales the peak of f to 1; ``I`` is the integral of f over [0, 1].
    """
    th_star = (1.0 / (1.0 + 2.0 * m)) ** (1.0 / m)
    f_max = th_star * (2.0 * m / (1.0 + 2.0 * m)) ** 2
    integral = 0.5 - 2.0 / (m + 2.0) + 1.0 / (2.0 * m + 2.0)
    return 1.0 / f_max, integral


def _driver_antiderivative(th: np.ndarray, m: float) -> np.ndarray:
    return th**2 / 2.0 - 2.0 * th ** (m + 2.0) / (m + 2.0) + th ** (2.0 * m + 2.0) / (2.0 * m + 2.0)


def driver_peak_decel(v0: float, params: DriverBrakeParams) -> float:
    """Peak deceleration (negative) needed to go from v0 to v_final in t_d."""
    r, integral = _driver_shape_constants(params.shape_m)
    dv = params.v_final_kmh * KMH - v0
    return dv / (params.t_d * r * integral)


def driver_brake_accel(t, v0: float, params: DriverBrakeParams):
    """Continuous driver braking acceleration a(t); zero outside [0, t_d]."""
    m = params.shape_m
    r, _ = _driver_shape_constants(m)
    a_peak = driver_peak_decel(v0, params)
    th = np.clip(np.asarray(t, dtype=float) / params.t_d, 0.0, 1.0)
    return r * a_peak * th * (1.0 - th**m) ** 2


def driver_brake_profile(v0: float, params: DriverBrakeParams, dt: float) -> ManeuverProfile:
    """Driver braking profile from ``v0`` (m/s) down to ``params.v_final_kmh``.

    The deceleration follows ``r * a_peak * th * (1 - th**m)**2`` with
    ``th = t / t_d``: it drops quickly to its peak and fades back to zero.
    The peak is solved from the required speed change, so the integral of
    the profile equals ``v_final - v0``.

    Raises
    ------
    InfeasibleManeuver
        if the derived peak is below the emergency limit of -8.5 m/s2
    """
    v_final = params.v_final_kmh * KMH
    if v0 <= v_final:
        t = np.array([0.0])
        return ManeuverProfile(ManeuverKind.DRIVER_BRAKE, dt, t, np.zeros(1), np.zeros(0),
                               np.zeros(1), {"a_peak": 0.0, "v0": v0, "v_final": v0})
    a_peak = driver_peak_decel(v0, params)
    if a_peak < EMERGENCY_DECEL_LIMIT:
        raise InfeasibleManeuver(
            f"infeasible braking demand: peak {a_peak:.2f} m/s2 below {EMERGENCY_DECEL_LIMIT}")
    m = params.shape_m
    r, _ = _driver_shape_constants(m)
    t = _grid(params.t_d, dt)
    a = driver_brake_accel(t, v0, params)
    th = np.clip(t / params.t_d, 0.0, 1.0)
    big_f = _driver_antiderivative(th, m) * params.t_d * r * a_peak
    a_step = np.diff(big_f) / dt
    meta = {"a_peak": a_peak, "v0": v0, "v_final": v_final, "t_d": params.t_d}
    return ManeuverProfile(ManeuverKind.DRIVER_BRAKE, dt, t, a, a_step, np.zeros_like(t), meta)


# --------------------------------------------------------------------------
# ACC braking


def iso_limits(v: float) -> tuple[float, float]:
    """ISO 22179 envelope ``(max mean decel, max jerk)`` at speed ``v`` (m/s).

    3.5 m/s2 and 2.5 m/s3 above 20 m/s, 5 m/s2 and 5 m/s3 below 5 m/s,
    linear in between.
    """
    if v < 0:
        raise ValueError("speed must be >= 0")
    w = min(max((v - 5.0) / 15.0, 0.0), 1.0)
    return 5.0 + w * (3.5 - 5.0), 5.0 + w * (2.5 - 5.0)


def acc_transition_coefficients(a0: float, a1: float, delta: float) -> tuple[float, float, float]:
    """Coefficients (A, B, C) of y(t) = A t^2 + B t + C, vertex at t = delta."""
    if delta <= 0:
        return 0.0, 0.0, a0
    big_a = (a0 - a1) / delta**2
    return big_a, -2.0 * big_a * delta, a0


def acc_transition_duration(a0: float, a1: float, jerk_limit: float) -> float:
    """Length of the parabolic transition whose initial jerk equals the cap."""
    return 2.0 * abs(a0 - a1) / jerk_limit


def acc_release_speed_loss(a: float, jerk_limit: float) -> float:
    """Speed lost during the mirrored release from ``a`` back to zero."""
    return (4.0 / 3.0) * a * a / jerk_limit


def acc_brake_profile(params: AccBrakeParams, v0: float, v_target: float, dt: float,
                      max_duration: float = 120.0) -> ManeuverProfile:
    """Jerk-limited ACC deceleration from ``v0`` towards ``v_target``.

    Phases: parabolic onset from ``a0`` to ``a1`` (zero slope at the vertex),
    hold at ``a1``, and as soon as the speed reaches ``v_target`` a mirrored
    parabolic release back to zero.  The effective jerk cap is the smaller of
    ``params.jerk_limit`` and the ISO value at ``v0``.  If the release would
    carry the speed below zero the vehicle halts and the acceleration drops
    to zero at standstill.
    """
    if not v0 > v_target >= 0:
        raise ValueError("need v0 > v_target >= 0")
    decel_cap, iso_jerk = iso_limits(v0)
    if abs(params.a1) > decel_cap + 1e-12:
        raise InfeasibleManeuver(
            f"|a1|={abs(params.a1):.2f} exceeds ISO deceleration cap {decel_cap:.2f} at v={v0:.1f}")
    jerk = min(params.jerk_limit, iso_jerk)
    delta = acc_transition_duration(params.a0, params.a1, jerk)
    big_a, big_b, big_c = acc_transition_coefficients(params.a0, params.a1, delta)

    acc = [params.a0]
    speeds = [v0]
    phase = "onset"
    t_release = a_release = delta_r = 0.0
    v_at_target = None
    t_at_target = None
    k = 0
    while True:
        k += 1
        t = k * dt
        if phase == "onset" and t >= delta:
            phase = "hold"
        if phase == "onset":
            a_next = big_a * t * t + big_b * t + big_c
        elif phase == "hold":
            a_next = params.a1
        else:
            tau = t - t_release
            a_next = a_release * (1.0 - (tau / delta_r) ** 2) if tau < delta_r else 0.0
        v_next = max(speeds[-1] + 0.5 * (acc[-1] + a_next) * dt, 0.0)
        acc.append(a_next)
        speeds.append(v_next)
        if phase != "release" and (v_next <= v_target or t >= max_duration):
            phase = "release"
            v_at_target, t_at_target = v_next, t
            t_release, a_release = t, a_next
            delta_r = acc_transition_duration(a_next, 0.0, jerk)
            if delta_r <= 0:
                break
        elif phase == "release" and (a_next == 0.0 or v_next == 0.0):
            if a_next != 0.0:
                acc[-1] = 0.0
            break
    a = np.array(acc)
    t = np.arange(len(a)) * dt
    a_step = 0.5 * (a[:-1] + a[1:])
    if speeds[-1] == 0.0:
        # halted: the last step brings the speed exactly to zero
        a_step[-1] = -speeds[-2] / dt
    meta = {"delta": delta, "jerk": jerk, "A": big_a, "B": big_b, "C": big_c,
            "v0": v0, "v_target": v_target, "v_at_target": v_at_target,
            "t_at_target": t_at_target}
    return ManeuverProfile(ManeuverKind.ACC_BRAKE, dt, t, a, a_step, np.zeros_like(t), meta)


# --------------------------------------------------------------------------
# deceleration lookup table

APPROACH_BUCKETS = ((40, 50), (50, 60), (60, 70), (70, 80), (80, 90))
SPEED_INTERVALS = tuple((lo, lo + 10) for lo in range(0, 90, 10))

# rows: speed interval 0-10 .. 80-90 km/h; columns: approach speed 40-50 .. 80-90 km/h;
# each cell is (mean speed km/h, deceleration m/s2) or None
_NA = None
DECEL_TABLE: tuple[tuple[tuple[float, float] | None, ...], ...] = (
    ((2.64, 0.91), (2.81, 0.84), (2.43, 0.88), (2.62, 0.89), (2.6, 0.87)),
    ((14.95, 1.92), (14.91, 1.87), (14.82, 1.91), (14.95, 2.0), (14.77, 1.9)),
    ((25.1, 1.82), (25.03, 1.92), (25.07, 2.12), (24.84, 1.71), (24.87, 2.07)),
    ((35.46, 1.26), (35.32, 1.67), (35.2, 2.06), (35.29, 1.83), (34.57, 2.12)),
    ((44.04, 0.67), (45.46, 1.1), (45.23, 1.75), (44.83, 1.76), (45.12, 2.02)),
    (_NA, (54.01, 0.58), (55.41, 1.07), (55.16, 1.37), (55.3, 1.83)),
    (_NA, _NA, (63.69, 0.58), (65.49, 0.78), (65.2, 1.34)),
    (_NA, _NA, _NA, (72.88, 0.45), (75.86, 0.91)),
    (_NA, _NA, _NA, _NA, (82.9, 0.48)),
)


class DecelCell(NamedTuple):
    decel: float
    speed_kmh: float
    fallback: bool


def _bucket(kmh: float, buckets: Sequence[tuple[int, int]], what: str) -> int:
    for idx, (lo, hi) in enumerate(buckets):
        if lo <= kmh < hi:
            return idx
    if kmh == buckets[-1][1]:
        return len(buckets) - 1
    raise ValueError(f"{what} {kmh} km/h outside table domain "
                     f"[{buckets[0][0]}, {buckets[-1][1]}]")


def decel_lookup(approach_kmh: float, current_kmh: float) -> DecelCell:
    """Average deceleration (m/s2, positive) by approach speed and current speed.

    Undefined cells fall back to the nearest defined row in the same
    approach-speed column; the result is then flagged.
    """
    col = _bucket(approach_kmh, APPROACH_BUCKETS, "approach speed")
    row = _bucket(current_kmh, SPEED_INTERVALS, "speed")
    cell = DECEL_TABLE[row][col]
    if cell is not None:
        return DecelCell(cell[1], cell[0], False)
    defined = [r for r in range(len(DECEL_TABLE)) if DECEL_TABLE[r][col] is not None]
    nearest = min(defined, key=lambda r: (abs(r - row), r))
    speed, decel = DECEL_TABLE[nearest][col]
    return DecelCell(decel, speed, True)


def table_braking_time(v0_kmh: float, v_final_kmh: float) -> float:
    """Braking time implied by the lookup table, clipped to the observed range.

    Integrates dt = dv / decel(approach, interval) across the speed intervals
    between ``v_final_kmh`` and ``v0_kmh``.
    """
    approach = min(max(v0_kmh, APPROACH_BUCKETS[0][0]), APPROACH_BUCKETS[-1][1] - 1e-9)
    total = 0.0
    hi = min(v0_kmh, SPEED_INTERVALS[-1][1])
    while hi > v_final_kmh + 1e-12:
        lo = max(math.floor((hi - 1e-9) / 10.0) * 10.0, v_final_kmh)
        cell = decel_lookup(approach, 0.5 * (lo + hi))
        total += (hi - lo) * KMH / cell.decel
        hi = lo
    return min(max(total, BRAKING_TIME_RANGE[0]), BRAKING_TIME_RANGE[1])


# --------------------------------------------------------------------------
# lane change


def lateral_coefficients(h: float, t_m: float) -> tuple[float, float, float]:
    """Magnitude-form quintic coefficients (c5, c4, c3) reaching ``h`` at ``t_m``.

    y(t) = c5 t^5 + c4 t^4 + c3 t^3 with c5 = 6h/t_m^5, c4 = -15h/t_m^4,
    c3 = 10h/t_m^3.
    """
    return 6.0 * h / t_m**5, -15.0 * h / t_m**4, 10.0 * h / t_m**3


def lateral_offset(t, h: float, t_m: float):
    tt = np.clip(np.asarray(t, dtype=float), 0.0, t_m)
    c5, c4, c3 = lateral_coefficients(h, t_m)
    return ((c5 * tt + c4) * tt + c3) * tt**3


def lateral_velocity(t, h: float, t_m: float):
    tt = np.clip(np.asarray(t, dtype=float), 0.0, t_m)
    return 30.0 * h * tt**2 * (tt - t_m) ** 2 / t_m**5


def lane_change_accel(t, a_max: float, t_m: float):
    tt = np.asarray(t, dtype=float)
    inside = (tt >= 0) & (tt <= t_m)
    return np.where(inside, a_max * np.sin(2.0 * np.pi * tt / t_m), 0.0)


def lane_change_trajectory(params: LceParams, v_m: float, direction: str,
                           dt: float) -> ManeuverProfile:
    """Lane change maneuver sampled on the simulation grid.

    ``direction`` is ``"left"`` (towards lane 1) or ``"right"``.  Positive
    lateral offsets point to the right, so a left change ends at ``-h``.
    """
    if params.t_m <= 0:
        raise ValueError("t_m must be positive")
    sign = {"left": -1.0, "right": 1.0}[direction]
    t = _grid(params.t_m, dt)
    y = sign * lateral_offset(t, params.h, params.t_m)
    a = lane_change_accel(t, params.a_max, params.t_m)
    # exact cell means of a_max sin(w t), zero past t_m
    w = 2.0 * np.pi / params.t_m
    lo = np.minimum(t[:-1], params.t_m)
    hi = np.minimum(t[1:], params.t_m)
    a_step = params.a_max * (np.cos(w * lo) - np.cos(w * hi)) / (w * dt)
    meta = {"h": params.h, "t_m": params.t_m, "v_m": v_m, "direction": direction,
            "y_long": v_m * t, "coefficients": lateral_coefficients(params.h, params.t_m)}
    return ManeuverProfile(ManeuverKind.LANE_CHANGE, dt, t, a, a_step, y, meta)


# --------------------------------------------------------------------------
# lane change event scheduling


@dataclass(frozen=True)
class LceEvent:
    """One cut-in pattern: a vehicle from ``source_side`` of the ego moves into
    the ego's lane; allowed only while the ego is in one of ``ego_lanes``."""

    name: str
    source_side: str
    ego_lanes: frozenset[int]

    @property
    def direction(self) -> str:
        # a vehicle coming from the left moves right, and vice versa
        return "right" if self.source_side == "left" else "left"


def lce_catalog(lane_count: int) -> tuple[LceEvent, ...]:
    if lane_count == 2:
        return (LceEvent("cut_in_from_left", "left", frozenset({2})),
                LceEvent("cut_in_from_right", "right", frozenset({1})))
    if lane_count == 3:
        return (LceEvent("cut_in_from_left", "left", frozenset({2})),
                LceEvent("cut_in_from_right", "right", frozenset({2})),
                LceEvent("cut_in_from_middle", "middle", frozenset({1, 3})))
    raise ValueError("lane_count must be 2 or 3")


class LceCandidate(NamedTuple):
    vehicle_id: int
    direction: str
    event: LceEvent


class LceScheduler:
    """Fires cut-in events one after the other, in catalog order.

    An event fires when at least ``t_int_min`` has elapsed since the previous
    one and a vehicle in the matching adjacent lane overlaps the ego or is
    just ahead of it.  After the last catalog entry the cycle restarts.
    """

    def __init__(self, params: LceParams, lane_count: int):
        self.params = params
        self.catalog = lce_catalog(lane_count)
        self.index = 0
        self.cycle = 0
        self.last_fire: float | None = None
        self.fired: list[tuple[float, int, str]] = []

    def _source_lane(self, event: LceEvent, ego_lane: int) -> int:
        if event.source_side == "left":
            return ego_lane - 1
        if event.source_side == "right":
            return ego_lane + 1
        return 2

    def candidates(self, ego, vehicles, event: LceEvent) -> list:
        if ego.lane not in event.ego_lanes:
            return []
        src = self._source_lane(event, ego.lane)
        lo = ego.s - 0.5 * ego.length
        hi = ego.s + ego.length + self.params.ahead_window
        return [v for v in vehicles
                if v.lane == src and v.kind != "ego" and abs(v.y_lat) < 1e-9
                and v.controlled_by == "internal_model" and lo <= v.s <= hi]

    def step(self, t: float, ego, vehicles, rng) -> LceCandidate | None:
        """Return the vehicle to start a cut-in with, or None."""
        if self.last_fire is not None and t - self.last_fire < self.params.t_int_min - 1e-9:
            return None
        if self.cycle == 0 and self.index < len(self.params.init_times):
            if t < self.params.init_times[self.index]:
                return None
        event = self.catalog[self.index]
        found = sorted(self.candidates(ego, vehicles, event), key=lambda v: v.id)
        if not found:
            return None
        pick = found[int(rng.integers(len(found)))] if len(found) > 1 else found[0]
        direction = event.direction
        if event.source_side == "middle":
            direction = "left" if ego.lane == 1 else "right"
        self.last_fire = t
        self.fired.append((t, pick.id, event.name))
        self.index += 1
        if self.index == len(self.catalog):
            self.index = 0
            self.cycle += 1
        return LceCandidate(pick.id, direction, event)
