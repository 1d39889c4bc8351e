"""Background microscopic traffic.

Vehicles enter at ``s = 0`` with Poisson arrivals, follow an Intelligent
Driver Model, change lanes with a gap-acceptance rule and leave at the end of
the road segment.  The ego runs a constant-time-gap ACC with an emergency
braking fallback and an automatic lane change.
"""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field

import numpy as np

from .world import (EGO, INTERNAL, PLUGIN, TRAFFIC, RoadConfig, SimClock, VehicleState,
                    body_lanes)


@dataclass(frozen=True)
class TrafficDemand:
    inflow_per_lane: float = 1200.0
    desired_speed_mean: float = 30.0
    desired_speed_sd: float = 3.0
    seed: int = 0

    def violations(self) -> list[str]:
        out = []
        if self.inflow_per_lane < 0:
            out.append("inflow must be >= 0")
        if not self.desired_speed_mean > 0:
            out.append("desired_speed_mean must be positive")
        if self.desired_speed_sd < 0:
            out.append("desired_speed_sd must be >= 0")
        return out


@dataclass(frozen=True)
class IdmParams:
    """Intelligent Driver Model parameters.

    Attributes
    ----------
    time_headway : float
        safe time headway, in s
    max_accel : float
        maximum acceleration, in m/s2
    comfort_decel : float
        comfortable deceleration, in m/s2
    jam_distance : float
        minimum bumper-to-bumper gap at standstill, in m
    delta : float
        acceleration exponent
    emergency_decel : float
        hard lower bound on the commanded acceleration, in m/s2
    """

    time_headway: float = 1.5
    max_accel: float = 1.4
    comfort_decel: float = 2.0
    jam_distance: float = 2.0
    delta: float = 4.0
    emergency_decel: float = 8.5


@dataclass(frozen=True)
class EgoControllerParams:
    time_gap: float = 1.5
    acc_max_decel: float = 3.5
    acc_max_accel: float = 1.5
    emergency_decel: float = 8.5
    set_speed: float = 120.0 / 3.6
    standstill_gap: float = 5.0
    gap_gain: float = 0.2
    speed_diff_gain: float = 0.6
    speed_gain: float = 0.4
    emergency_margin: float = 2.0
    lane_change: bool = True
    lane_change_time: float = 5.0

    def violations(self) -> list[str]:
        out = []
        if not 0 < self.acc_max_decel <= self.emergency_decel:
            out.append("need 0 < acc_max_decel <= emergency_decel")
        if not self.time_gap > 0:
            out.append("time_gap must be positive")
        if not self.acc_max_accel > 0:
            out.append("acc_max_accel must be positive")
        return out


@dataclass(frozen=True)
class LaneChangeRule:
    """Gap acceptance for background lane changes."""

    safe_decel: float = 2.0
    min_gap: float = 2.0
    threshold: float = 0.2
    keep_right_bias: float = 0.2
    duration: float = 4.0
    cooldown: float = 10.0
    decision_period: float = 1.0


@dataclass
class LateralMove:
    start_y: float
    delta_y: float
    t0: float
    duration: float
    target_lane: int


def idm_accel(v: float, v_des: float, gap: float | None, v_lead: float,
              p: IdmParams) -> float:
    """IDM acceleration, bounded to ``[-emergency_decel, max_accel]``.

    ``gap`` is the bumper-to-bumper distance to the leader, ``None`` for free
    road.
    """
    free = 1.0 - (v / v_des) ** p.delta if v_des > 0 else -1.0
    if gap is None:
        a = p.max_accel * free
    elif gap <= 0:
        return -p.emergency_decel
    else:
        s_star = p.jam_distance + max(
            0.0, v * p.time_headway + v * (v - v_lead) / (2.0 * math.sqrt(p.max_accel * p.comfort_decel)))
        ratio = s_star / gap
        if ratio > 1e6:  # squaring would overflow; the clamp below wins anyway
            return -p.emergency_decel
        a = p.max_accel * (free - ratio * ratio)
    return min(max(a, -p.emergency_decel), p.max_accel)


def follow_step(vehicle: VehicleState, leader: VehicleState | None, dt: float,
                params: IdmParams = IdmParams()) -> float:
    """Car-following acceleration of ``vehicle`` behind ``leader``.

    The model is memoryless, so ``dt`` only documents the step the result
    will be applied over.
    """
    if leader is None:
        return idm_accel(vehicle.v, vehicle.v_des, None, 0.0, params)
    return idm_accel(vehicle.v, vehicle.v_des, leader.s - vehicle.front, leader.v, params)


def acc_accel(ego: VehicleState, leader: VehicleState | None, p: EgoControllerParams) -> float:
    """Constant-time-gap ACC with emergency fallback.

    The comfort command is clamped to ``[-acc_max_decel, acc_max_accel]``.
    When the gap predicted under comfort braking would drop below
    ``emergency_margin``, the controller requests what the kinematics need,
    up to ``emergency_decel``.
    """
    v = ego.v
    a = p.speed_gain * (p.set_speed - v)
    if leader is None:
        return min(max(a, -p.acc_max_decel), p.acc_max_accel)
    gap = leader.s - ego.front
    desired = max(p.standstill_gap, p.time_gap * v)
    a_gap = p.gap_gain * (gap - desired) + p.speed_diff_gain * (leader.v - v)
    a = min(max(min(a, a_gap), -p.acc_max_decel), p.acc_max_accel)
    need = required_decel(ego.v, leader.v, leader.a, gap, p.acc_max_decel, p.emergency_margin)
    if need > p.acc_max_decel:
        a = min(a, -min(need, p.emergency_decel))
    return a


def predicted_min_gap(v: float, v_lead: float, a_lead: float, gap: float, decel: float) -> float:
    """Smallest gap reached when braking at ``decel`` behind the leader.

    Uses the worse of a constant-leader-speed prediction and, when the leader
    is braking, a stopping-distance comparison.
    """
    closing = v - v_lead
    g = gap - closing * closing / (2.0 * decel) if closing > 0 else gap
    if a_lead < -0.5:
        g = min(g, gap + v_lead * v_lead / (2.0 * -a_lead) - v * v / (2.0 * decel))
    return g


def required_decel(v: float, v_lead: float, a_lead: float, gap: float, comfort: float,
                   margin: float) -> float:
    """Deceleration needed to keep ``margin`` metres of gap (0 if comfort suffices)."""
    if predicted_min_gap(v, v_lead, a_lead, gap, comfort) >= margin:
        return 0.0
    room = max(gap - 0.5 * margin, 0.05)
    need = 0.0
    closing = v - v_lead
    if closing > 0:
        need = closing * closing / (2.0 * room)
    if a_lead < -0.5:
        room_stop = gap + v_lead * v_lead / (2.0 * -a_lead) - 0.5 * margin
        need = max(need, v * v / (2.0 * max(room_stop, 0.05)))
    return max(need, comfort)


class World:
    """A road segment with its vehicles, clock and random stream."""

    def __init__(self, road: RoadConfig, demand: TrafficDemand | None = None,
                 clock: SimClock | None = None, idm: IdmParams = IdmParams(),
                 ego_params: EgoControllerParams = EgoControllerParams(),
                 lc_rule: LaneChangeRule = LaneChangeRule(), rng=None):
        self.road = road
        self.demand = demand or TrafficDemand()
        self.clock = clock or SimClock()
        self.idm = idm
        self.ego_params = ego_params
        self.lc_rule = lc_rule
        self.rng = rng if rng is not None else np.random.default_rng(self.demand.seed)
        self.vehicles: dict[int, VehicleState] = {}
        self.overrides: dict[int, float] = {}
        self.lateral_rates: dict[int, float] = {}
        self.moves: dict[int, LateralMove] = {}
        self.last_lane_change: dict[int, float] = {}
        self.pending_spawns = [0] * road.lane_count
        self.arrivals = 0
        self.spawned = 0
        self.next_id = 1
        self.injector = None
        self.accel: dict[int, float] = {}
        self.ego_lane_requests = 0

    # ------------------------------------------------------------------ setup
    def add_vehicle(self, lane: int, s: float, v: float, v_des: float | None = None,
                    kind: str = TRAFFIC, vid: int | None = None, length: float = 4.5) -> VehicleState:
        if vid is None:
            vid = self.next_id
            self.next_id += 1
        veh = VehicleState(vid, kind, lane, s, v, 0.0, 0.0, length, 1.8, INTERNAL,
                           v if v_des is None else v_des, 0.0)
        self.vehicles[vid] = veh
        return veh

    def draw_desired_speed(self) -> float:
        d = self.demand
        v = d.desired_speed_mean + d.desired_speed_sd * float(self.rng.standard_normal())
        lo = max(0.5 * d.desired_speed_mean, d.desired_speed_mean - 2.5 * d.desired_speed_sd)
        return min(max(v, lo), d.desired_speed_mean + 2.5 * d.desired_speed_sd)

    def populate(self, s_min: float = 0.0) -> None:
        """Fill every lane as if traffic had been entering for a long time."""
        q = self.demand.inflow_per_lane / 3600.0
        if q <= 0:
            return
        mean_extra = max(1.0 / q - 2.0, 0.1)
        for lane in range(1, self.road.lane_count + 1):
            s = self.road.length - 5.0
            while True:
                v_des = self.draw_desired_speed()
                self.add_vehicle(lane, s, v_des)
                headway = 2.0 + float(self.rng.exponential(mean_extra))
                s -= 4.5 + headway * v_des
                if s < s_min:
                    break

    def clear(self) -> None:
        self.vehicles.clear()
        self.overrides.clear()
        self.lateral_rates.clear()
        self.moves.clear()
        self.last_lane_change.clear()
        self.pending_spawns = [0] * self.road.lane_count

    def remove(self, vid: int) -> None:
        self.vehicles.pop(vid, None)
        self.overrides.pop(vid, None)
        self.lateral_rates.pop(vid, None)
        self.moves.pop(vid, None)

    def release(self, vid: int) -> None:
        """Return a vehicle to the internal model."""
        veh = self.vehicles.get(vid)
        if veh is None:
            return
        self.overrides.pop(vid, None)
        self.lateral_rates.pop(vid, None)
        veh.controlled_by = INTERNAL
        if abs(veh.y_lat) < 1e-6:
            veh.y_lat = 0.0
        else:
            y = self.road.lane_center(veh.lane) + veh.y_lat
            self.moves[vid] = LateralMove(y, -veh.y_lat, self.clock.t, 2.0, veh.lane)

    # ------------------------------------------------------------- geometry
    def occupied_lanes(self, veh: VehicleState) -> tuple[int, ...]:
        lanes = body_lanes(veh, self.road)
        move = self.moves.get(veh.id)
        if move is not None and move.target_lane not in lanes:
            lanes = lanes + (move.target_lane,)
        return lanes

    def lane_index(self) -> dict[int, list[tuple[float, int]]]:
        """Per lane, the ``(s, id)`` of every vehicle occupying it, sorted."""
        index: dict[int, list[tuple[float, int]]] = {j: [] for j in range(1, self.road.lane_count + 1)}
        half = 0.5 * self.road.lane_width
        n = self.road.lane_count
        moves = self.moves
        for veh in self.vehicles.values():
            entry = (veh.s, veh.id)
            index[veh.lane].append(entry)
            y = veh.y_lat
            if y != 0.0:
                free = half - 0.5 * veh.width
                if y > free and veh.lane < n:
                    index[veh.lane + 1].append(entry)
                elif y < -free and veh.lane > 1:
                    index[veh.lane - 1].append(entry)
            move = moves.get(veh.id)
            if move is not None and move.target_lane != veh.lane:
                other = index[move.target_lane]
                if not other or other[-1] != entry:
                    other.append(entry)
        for entries in index.values():
            entries.sort()
        return index

    def leader_in(self, index, veh: VehicleState, lane: int) -> VehicleState | None:
        entries = index[lane]
        i = bisect.bisect_right(entries, (veh.s, veh.id))
        while i < len(entries):
            other = self.vehicles[entries[i][1]]
            if other.id != veh.id:
                return other
            i += 1
        return None

    def follower_in(self, index, veh: VehicleState, lane: int) -> VehicleState | None:
        entries = index[lane]
        i = bisect.bisect_left(entries, (veh.s, veh.id)) - 1
        while i >= 0:
            other = self.vehicles[entries[i][1]]
            if other.id != veh.id:
                return other
            i -= 1
        return None

    # --------------------------------------------------------------- spawning
    def spawn_step(self) -> int:
        """Poisson arrivals at ``s = 0``; blocked entries stay queued."""
        rate = self.demand.inflow_per_lane / 3600.0 * self.clock.dt
        spawned = 0
        if rate <= 0 and not any(self.pending_spawns):
            return 0
        last_in_lane: dict[int, VehicleState] = {}
        for veh in self.vehicles.values():
            if veh.s > 1000.0:
                continue
            for lane in self.occupied_lanes(veh):
                cur = last_in_lane.get(lane)
                if cur is None or veh.s < cur.s:
                    last_in_lane[lane] = veh
        for lane in range(1, self.road.lane_count + 1):
            n = int(self.rng.poisson(rate)) if rate > 0 else 0
            self.arrivals += n
            self.pending_spawns[lane - 1] = min(self.pending_spawns[lane - 1] + n, 10)
            if not self.pending_spawns[lane - 1]:
                continue
            v_des = self.draw_desired_speed()
            lead = last_in_lane.get(lane)
            v0 = v_des
            if lead is not None:
                if lead.s - 4.5 < 2.0 * v_des:
                    continue
                if lead.s < 300.0:
                    v0 = min(v_des, lead.v)
            self.add_vehicle(lane, 0.0, v0, v_des)
            self.pending_spawns[lane - 1] -= 1
            self.spawned += 1
            spawned += 1
        return spawned

    # ------------------------------------------------------------- behaviour
    def internal_accel(self, index, veh: VehicleState) -> float:
        a = math.inf
        for lane in self.occupied_lanes(veh):
            lead = self.leader_in(index, veh, lane)
            a = min(a, follow_step(veh, lead, self.clock.dt, self.idm))
        return a

    def ego_step(self, index, ego: VehicleState) -> tuple[float, str | None]:
        return ego_step(self, index, ego)

    def lane_change_ok(self, index, veh: VehicleState, target: int) -> tuple[bool, float]:
        """Gap acceptance for ``veh`` moving into ``target``.

        Returns (safe, own acceleration behind the new leader).
        """
        rule = self.lc_rule
        lead = self.leader_in(index, veh, target)
        foll = self.follower_in(index, veh, target)
        if lead is not None and lead.s - veh.front < rule.min_gap + 2.0:
            return False, 0.0
        if foll is not None:
            gap_f = veh.s - foll.front
            if gap_f < rule.min_gap + 2.0:
                return False, 0.0
            if foll.kind == EGO:
                a_f = acc_accel(foll, veh, self.ego_params)
            else:
                a_f = follow_step(foll, veh, self.clock.dt, self.idm)
            if a_f < -rule.safe_decel:
                return False, 0.0
        if veh.kind == EGO:
            a_new = acc_accel(veh, lead, self.ego_params)
        else:
            a_new = follow_step(veh, lead, self.clock.dt, self.idm)
        return a_new >= -rule.safe_decel, a_new

    def start_lane_change(self, veh: VehicleState, target: int, duration: float) -> None:
        y = self.road.lane_center(veh.lane) + veh.y_lat
        delta = self.road.lane_center(target) - y
        self.moves[veh.id] = LateralMove(y, delta, self.clock.t, duration, target)
        self.last_lane_change[veh.id] = self.clock.t

    def background_lane_changes(self, index) -> None:
        rule = self.lc_rule
        period = max(int(round(rule.decision_period / self.clock.dt)), 1)
        phase = self.clock.step_index % period
        for veh in list(self.vehicles.values()):
            if veh.kind == EGO or veh.controlled_by != INTERNAL or veh.id in self.moves:
                continue
            if veh.id % period != phase or abs(veh.y_lat) > 1e-9:
                continue
            last = self.last_lane_change.get(veh.id)
            if last is not None and self.clock.t - last < rule.cooldown:
                continue
            lead = self.leader_in(index, veh, veh.lane)
            a_cur = follow_step(veh, lead, self.clock.dt, self.idm)
            best, best_gain = None, rule.threshold
            for target, bias in ((veh.lane - 1, -rule.keep_right_bias),
                                 (veh.lane + 1, rule.keep_right_bias)):
                if not 1 <= target <= self.road.lane_count:
                    continue
                ok, a_new = self.lane_change_ok(index, veh, target)
                if ok and a_new - a_cur + bias > best_gain:
                    best, best_gain = target, a_new - a_cur + bias
            if best is not None:
                self.start_lane_change(veh, best, rule.duration)
                bisect.insort(index[best], (veh.s, veh.id))

    def compute_accelerations(self) -> dict[int, float]:
        index = self.lane_index()
        self.background_lane_changes(index)
        vehicles = self.vehicles
        p = self.idm
        a_max, b_eff = p.max_accel, 2.0 * math.sqrt(p.max_accel * p.comfort_decel)
        s0, t_h, delta, floor = p.jam_distance, p.time_headway, p.delta, -p.emergency_decel
        accel: dict[int, float] = {}
        # internal vehicles follow the next entry of every lane they occupy
        for entries in index.values():
            last = len(entries) - 1
            for k, (_, vid) in enumerate(entries):
                veh = vehicles[vid]
                if veh.kind == EGO or (veh.controlled_by == PLUGIN and vid in self.overrides):
                    continue
                v = veh.v
                free = 1.0 - (v / veh.v_des) ** delta if veh.v_des > 0 else -1.0
                if k == last:
                    a = a_max * free
                else:
                    lead = vehicles[entries[k + 1][1]]
                    gap = lead.s - veh.s - veh.length
                    if gap <= 0:
                        a = floor
                    else:
                        s_star = v * t_h + v * (v - lead.v) / b_eff
                        s_star = s0 + (s_star if s_star > 0.0 else 0.0)
                        ratio = s_star / gap
                        a = floor if ratio > 1e6 else a_max * (free - ratio * ratio)
                a = a_max if a > a_max else (floor if a < floor else a)
                prev = accel.get(vid)
                if prev is None or a < prev:
                    accel[vid] = a
        for veh in vehicles.values():
            if veh.controlled_by == PLUGIN and veh.id in self.overrides:
                accel[veh.id] = self.overrides[veh.id]
            elif veh.kind == EGO:
                a, lc = self.ego_step(index, veh)
                accel[veh.id] = a
                if lc is not None:
                    target = veh.lane + (-1 if lc == "left" else 1)
                    self.start_lane_change(veh, target, self.ego_params.lane_change_time)
                    self.ego_lane_requests += 1
        self.accel = accel
        return accel

    # -------------------------------------------------------------- advance
    def advance(self, accel: dict[int, float] | None = None) -> list[int]:
        """Semi-implicit Euler step; returns ids of traffic that left the road."""
        accel = self.accel if accel is None else accel
        dt = self.clock.dt
        t_next = self.clock.t + dt
        w = self.road.lane_width
        gone = []
        for veh in self.vehicles.values():
            a = accel.get(veh.id, 0.0)
            v_new = veh.v + a * dt
            if v_new < 0.0:
                v_new = 0.0
            veh.a = a
            veh.v = v_new
            veh.s += v_new * dt
            veh.distance += v_new * dt
            rate = self.lateral_rates.get(veh.id)
            move = self.moves.get(veh.id)
            if rate is not None:
                if move is not None:
                    del self.moves[veh.id]
                veh.y_lat += rate * dt
            elif move is not None:
                x = min((t_next - move.t0) / move.duration, 1.0)
                y = move.start_y + move.delta_y * x * x * x * (10.0 + x * (-15.0 + 6.0 * x))
                if x >= 1.0 - 1e-12:
                    veh.lane = move.target_lane
                    veh.y_lat = 0.0
                    del self.moves[veh.id]
                else:
                    veh.lane = min(max(int(round(y / w)) + 1, 1), self.road.lane_count)
                    veh.y_lat = y - (veh.lane - 1) * w
            if veh.y_lat > 0.5 * w and veh.lane < self.road.lane_count:
                veh.lane += 1
                veh.y_lat -= w
            elif veh.y_lat < -0.5 * w and veh.lane > 1:
                veh.lane -= 1
                veh.y_lat += w
            if veh.kind != EGO and veh.s > self.road.length:
                gone.append(veh.id)
        self.lateral_rates.clear()
        for vid in gone:
            self.remove(vid)
        self.clock.tick()
        return gone


def ego_step(world: World, index, ego: VehicleState) -> tuple[float, str | None]:
    """ACC acceleration plus an optional lane change request for the ego."""
    p = world.ego_params
    leaders = [world.leader_in(index, ego, lane) for lane in world.occupied_lanes(ego)]
    a = math.inf
    for lead in leaders:
        a = min(a, acc_accel(ego, lead, p))
    if not p.lane_change or ego.id in world.moves or abs(ego.y_lat) > 1e-9:
        return a, None
    period = max(int(round(world.lc_rule.decision_period / world.clock.dt)), 1)
    if world.clock.step_index % period:
        return a, None
    last = world.last_lane_change.get(ego.id)
    if last is not None and world.clock.t - last < 2.0 * world.lc_rule.cooldown:
        return a, None
    lead = leaders[0]
    blocked = (lead is not None and lead.s - ego.front < 3.0 * p.time_gap * ego.v
               and lead.v < p.set_speed - 2.0)
    if blocked and ego.lane > 1:
        ok, a_new = world.lane_change_ok(index, ego, ego.lane - 1)
        if ok and a_new > a + 0.3:
            return a, "left"
    if ego.lane < world.road.lane_count:
        ok, a_new = world.lane_change_ok(index, ego, ego.lane + 1)
        right_lead = world.leader_in(index, ego, ego.lane + 1)
        clear = right_lead is None or (right_lead.s - ego.front > 4.0 * p.time_gap * ego.v
                                       and right_lead.v > p.set_speed - 3.0)
        if ok and clear and a_new >= a - 0.1:
            return a, "right"
    return a, None
