"""Seeded simulation runs over a chain of road-segment episodes.

The ego drives one segment per episode.  When it nears the end of the
segment (or is involved in a collision) the segment is repopulated and the
ego re-enters near the start, keeping its odometer and the run clock.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .config import SimConfig
from .evaluation import CollisionDetector, CriticalityMonitor, RunSummary, classify, ttb
from .injector import InjectorSettings, register_plugin
from .stm import ScenarioRecord, StmPlugin
from .traffic import World
from .world import EGO, SimClock, VehicleState

log = logging.getLogger(__name__)

EGO_ID = 0


class InvariantBreach(RuntimeError):
    pass


@dataclass
class RunResult:
    summary: RunSummary
    records: list[ScenarioRecord]
    events: list[str]
    collisions: list[tuple[float, tuple[int, int]]]
    mask_counts: dict[str, int]
    lce_fired: list[tuple[float, int, str]]
    steps: int
    episodes: int
    wall_time: float
    first_intervention: float | None = None
    ego_trace: list[tuple[float, float, float]] = field(default_factory=list)


def insert_ego(world: World, cfg: SimConfig, distance: float) -> VehicleState:
    """Put the ego into the rightmost lane near the segment start."""
    lane = world.road.lane_count
    s0 = cfg.ego_start_m
    for vid in [v.id for v in world.vehicles.values()
                if v.lane == lane and s0 - 60.0 < v.s < s0 + 60.0]:
        world.remove(vid)
    ahead = [v for v in world.vehicles.values() if v.lane == lane and v.s > s0]
    v0 = cfg.ego.set_speed
    if ahead:
        v0 = min(v0, min(ahead, key=lambda v: v.s).v)
    ego = world.add_vehicle(lane, s0, v0, cfg.ego.set_speed, kind=EGO, vid=EGO_ID)
    ego.distance = distance
    return ego


def ego_leader(world: World, ego: VehicleState):
    lanes = set(world.occupied_lanes(ego))
    best = None
    for veh in world.vehicles.values():
        if veh.id == ego.id or veh.s <= ego.s:
            continue
        if best is not None and veh.s >= best.s:
            continue
        if lanes & set(world.occupied_lanes(veh)):
            best = veh
    return best


def check_invariants(world: World) -> None:
    n = world.road.lane_count
    for veh in world.vehicles.values():
        if veh.v < 0 or not 1 <= veh.lane <= n or abs(veh.y_lat) > world.road.lane_width + 1e-9:
            raise InvariantBreach(f"vehicle {veh.id} left the valid state space: {veh}")


def run_simulation(cfg: SimConfig, stm_enabled: bool, on_record=None,
                   trace_ego: bool = False) -> RunResult:
    """Drive the ego for ``cfg.km`` kilometres with or without the STM plugin.

    Traffic randomness and STM randomness come from separate streams seeded
    from ``cfg.seed``, so paired runs see the same traffic until the first
    STM intervention.
    """
    t_start = time.perf_counter()
    traffic_rng = np.random.default_rng([cfg.seed, 0])
    stm_rng = np.random.default_rng([cfg.seed, 1])
    clock = SimClock(cfg.dt)
    world = World(cfg.road, cfg.demand, clock, cfg.idm, cfg.ego, rng=traffic_rng)
    detector = CollisionDetector(cfg.road.lane_width)
    monitor = CriticalityMonitor(cfg.thresholds)
    records: list[ScenarioRecord] = []
    events: list[str] = []

    def sealed(rec: ScenarioRecord) -> None:
        rec.label = classify(rec, cfg.thresholds).text
        records.append(rec)
        if on_record is not None:
            on_record(rec)

    plugin = None
    if stm_enabled:
        plugin = StmPlugin(cfg.stm, cfg.road, cfg.dt, stm_rng, on_record=sealed)
        register_plugin(world, plugin, InjectorSettings(
            ego_id=EGO_ID, sit=cfg.stm.sit, t_max=cfg.stm.t_max))

    target = cfg.km * 1000.0
    collisions: list[tuple[float, tuple[int, int]]] = []
    distance = 0.0
    episodes = 0
    steps = 0
    first_intervention = None
    trace = []
    end_s = cfg.road.length - cfg.ego_end_margin_m
    done = False
    while not done:
        episodes += 1
        world.clear()
        detector.reset()
        world.populate()
        ego = insert_ego(world, cfg, distance)
        if plugin is not None:
            plugin.episode_start = clock.t
        while True:
            if world.injector is not None:
                world.injector.step(world)
                if first_intervention is None and world.overrides:
                    first_intervention = clock.t
            world.compute_accelerations()
            world.advance()
            steps += 1
            ego_hit = False
            for pair, t in detector.step(world.vehicles.values(), clock.t):
                collisions.append((t, pair))
                events.append(f"t={t:.1f} collision {pair[0]}-{pair[1]}")
                if plugin is not None:
                    plugin.note_collision(t, pair, EGO_ID)
                for vid in pair:
                    if vid == EGO_ID:
                        ego_hit = True
                    else:
                        world.remove(vid)
            lead = ego_leader(world, ego)
            ttb_value = math.inf if lead is None else ttb(lead.s - ego.front, ego.v - lead.v)
            monitor.update(clock.t, ttb_value, -ego.a, ego_hit)
            if trace_ego:
                trace.append((clock.t, ego.v, ego.a))
            if steps % 10 == 0:
                check_invariants(world)
            world.spawn_step()
            if ego.distance >= target:
                done = True
                break
            if ego_hit or ego.front >= end_s:
                break
        distance = ego.distance
        if plugin is not None:
            plugin.end_episode(clock.t)
    monitor.close()
    if plugin is not None:
        for t, vid, name in plugin.lce.fired:
            events.append(f"t={t:.1f} lane_change {name} vehicle {vid}")
        for ev in plugin.events:
            if ev["kind"] == "braking":
                events.append(f"t={ev['time']:.1f} braking {ev['mask']} vehicles "
                              + ",".join(str(v) for v in ev["vehicles"]))
        counts = dict(sorted(plugin.counter.counts.items()))
        if any(c > cfg.stm.n_ct_max for c in counts.values()):
            raise InvariantBreach("trigger counter above its cap")
        lce_fired = list(plugin.lce.fired)
    else:
        counts, lce_fired = {}, []
    events.sort(key=lambda line: float(line.split()[0][2:]))
    summary = RunSummary(cfg.seed, cfg.km, stm_enabled, len(collisions),
                         monitor.eventually_critical, monitor.very_critical)
    return RunResult(summary, records, events, collisions, counts, lce_fired, steps, episodes,
                     time.perf_counter() - t_start, first_intervention, trace)
