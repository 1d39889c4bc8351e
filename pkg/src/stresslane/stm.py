"""Stress testing engine.

Per step the engine turns the ego speed into three distance bands ahead of
the ego, places the nearest vehicle of each band and lane into a distance
matrix, reduces it to a boolean event matrix and compares that against a
catalog of combination masks.  A matching mask makes the vehicles on its
``One`` positions brake.  Independently, a scheduler fires cut-ins from the
adjacent lanes.  Every event opens a scenario capture around its trigger time.
"""
from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from .evaluation import ttb
from .injector import InjectorAbstract, NeighborView, VehicleCommand
from .maneuvers import (KMH, LceScheduler, ManeuverProfile, acc_brake_profile,
                        acc_release_speed_loss, driver_brake_profile, iso_limits, lane_change_trajectory, table_braking_time)
from .world import RoadConfig, SimClock, StmParameters, VehicleState, body_lanes

log = logging.getLogger(__name__)

TOL = 1e-9


# ---------------------------------------------------------------- bands & matrices

@dataclass(frozen=True)
class TvcBands:
    """Band edges ``(d1, d2, d3, d_max)`` in metres ahead of the ego."""

    d1: float
    d2: float
    d3: float
    d_max: float

    @property
    def edges(self) -> tuple[float, float, float, float]:
        return self.d1, self.d2, self.d3, self.d_max


def tvc_bands(v_ego: float, sit=(2.0, 4.0, 6.0), t_max: float = 8.0) -> TvcBands:
    t1, t2, t3 = sit
    if not 0 < t1 < t2 < t3 < t_max:
        raise ValueError("sit not strictly increasing")
    return TvcBands(v_ego * t1, v_ego * t2, v_ego * t3, v_ego * t_max)


@dataclass
class DistanceMatrix:
    """Distances ``d`` (lanes x 3) with vehicle ids; empty cells hold ``inf``/-1."""

    d: np.ndarray
    ids: np.ndarray

    @classmethod
    def empty(cls, lane_count: int) -> "DistanceMatrix":
        return cls(np.full((lane_count, 3), np.inf), np.full((lane_count, 3), -1, dtype=int))

    @property
    def lane_count(self) -> int:
        return self.d.shape[0]


def distance_matrix(ego: VehicleState, view: NeighborView, lane_count: int,
                    bands: TvcBands | None = None, exclude=frozenset()) -> DistanceMatrix:
    """Distance matrix of the vehicles in ``view``.

    Without ``bands`` the cell placement of ``view.relative_map`` is used.
    With ``bands`` the placement is redone from ``view.flat``, skipping the
    ids in ``exclude``; the nearest vehicle of each cell wins.
    """
    out = DistanceMatrix.empty(lane_count)
    if bands is None:
        by_id = view.by_id()
        for (col, lane), vid in view.relative_map.items():
            if vid in exclude or not 1 <= lane <= lane_count:
                continue
            out.d[lane - 1, col - 1] = by_id[vid].s - ego.s
            out.ids[lane - 1, col - 1] = vid
        return out
    edges = bands.edges
    for veh in view.flat:
        if veh.id in exclude or not 1 <= veh.lane <= lane_count:
            continue
        d = veh.s - ego.s
        for col in range(3):
            if edges[col] < d < edges[col + 1]:
                j = veh.lane - 1
                cur = out.d[j, col]
                if d < cur or (d == cur and veh.id < out.ids[j, col]):
                    out.d[j, col] = d
                    out.ids[j, col] = veh.id
                break
    return out


def compute_tem(dm: DistanceMatrix | np.ndarray, bands: TvcBands) -> np.ndarray:
    """Boolean event matrix: cell (lane, column) is set iff its distance lies
    strictly inside that column's band."""
    d = dm.d if isinstance(dm, DistanceMatrix) else np.asarray(dm, dtype=float)
    lo = np.array(bands.edges[:3])
    hi = np.array(bands.edges[1:])
    return (lo < d) & (d < hi)


# ------------------------------------------------------------------ combination masks

@dataclass(frozen=True)
class CombinationMask:
    """Pattern over the event matrix; ``ones`` are 1-based (lane, column) pairs."""

    id: str
    ones: frozenset[tuple[int, int]]
    lane_count: int
    order: int = 0

    @classmethod
    def from_pattern(cls, mask_id: str, pattern: str, lane_count: int, order: int = 0):
        """Build from a row-major string of ``1``/``X`` (lane 1 first)."""
        if len(pattern) != 3 * lane_count:
            raise ValueError("pattern length does not match the lane count")
        ones = frozenset((k // 3 + 1, k % 3 + 1) for k, ch in enumerate(pattern) if ch == "1")
        return cls(mask_id, ones, lane_count, order)

    @property
    def brake_set(self) -> frozenset[tuple[int, int]]:
        return self.ones

    @property
    def columns(self) -> set[int]:
        return {c for _, c in self.ones}

    @property
    def pattern(self) -> str:
        return "".join("1" if (k // 3 + 1, k % 3 + 1) in self.ones else "X"
                       for k in range(3 * self.lane_count))

    def as_array(self) -> np.ndarray:
        arr = np.zeros((self.lane_count, 3), dtype=bool)
        for lane, col in self.ones:
            arr[lane - 1, col - 1] = True
        return arr

    def matches(self, tem: np.ndarray) -> bool:
        return all(tem[lane - 1, col - 1] for lane, col in self.ones)


_TWO_LANE = ("1XXXXX", "1XX1XX", "X1XXXX", "X1XX1X", "XX1XXX",
             "XX1XX1", "XXX1XX", "XXXX1X", "XXXXX1")
_THREE_LANE_ONES = ((1, 4, 7), (2, 5, 8), (3, 6, 9), (1,), (4,), (3, 7),
                    (2,), (5,), (3, 8), (3,), (6,), (9,))


def _positions_to_pattern(positions, lane_count: int) -> str:
    return "".join("1" if k + 1 in positions else "X" for k in range(3 * lane_count))


def printed_catalog(lane_count: int) -> tuple[CombinationMask, ...]:
    """The reference mask tables: 9 masks for two lanes, 12 for three."""
    if lane_count == 2:
        pats = _TWO_LANE
    elif lane_count == 3:
        pats = tuple(_positions_to_pattern(p, 3) for p in _THREE_LANE_ONES)
    else:
        raise ValueError("lane_count must be 2 or 3")
    return tuple(CombinationMask.from_pattern(f"C{q}", p, lane_count, q - 1)
                 for q, p in enumerate(pats, start=1))


def supplementary_catalog(lane_count: int) -> tuple[CombinationMask, ...]:
    """Adjacent-lane pairs in one column that the three-lane table lacks.

    Two lanes already carry every such pair, so the result is empty there.
    """
    if lane_count == 2:
        return ()
    out = []
    k = 0
    for lane in (1, 2):
        for col in (1, 2, 3):
            k += 1
            out.append(CombinationMask(f"S{k}", frozenset({(lane, col), (lane + 1, col)}), 3, 100 + k))
    return tuple(out)


def default_catalog(lane_count: int, supplementary: bool = True) -> tuple[CombinationMask, ...]:
    extra = supplementary_catalog(lane_count) if supplementary else ()
    return printed_catalog(lane_count) + extra


@dataclass
class EventCounter:
    n_ct_max: int
    counts: dict[str, int] = field(default_factory=dict)
    triggers: list[tuple[float, str]] = field(default_factory=list)

    def __post_init__(self):
        if self.n_ct_max < 1:
            raise ValueError("n_ct_max must be >= 1")

    def count(self, mask_id: str) -> int:
        return self.counts.get(mask_id, 0)

    def saturated(self, mask_id: str) -> bool:
        return self.count(mask_id) >= self.n_ct_max

    def record(self, mask_id: str, t: float | None = None) -> None:
        if self.saturated(mask_id):
            raise RuntimeError(f"mask {mask_id} already at its trigger cap")
        self.counts[mask_id] = self.count(mask_id) + 1
        self.triggers.append((t, mask_id))


def eligible_masks(tem: np.ndarray, catalog, counter: EventCounter, ego_lane: int) -> list:
    """Masks that may fire on ``tem``, best first.

    A mask qualifies when the event matrix is set on all of its ``One``
    positions, one of them lies in the ego lane, all of them share a single
    band column and its trigger count is below the cap.  Order: nearest
    column first, then more braked vehicles, then catalog order.
    """
    found = []
    for mask in catalog:
        if mask.lane_count != tem.shape[0]:
            raise ValueError("catalog does not match the lane count")
        if not mask.ones or len(mask.columns) != 1:
            continue
        if not any(lane == ego_lane for lane, _ in mask.ones):
            continue
        if counter.saturated(mask.id) or not mask.matches(tem):
            continue
        found.append(mask)
    found.sort(key=lambda m: (min(m.columns), -len(m.ones), m.order))
    return found


def match_combinations(tem: np.ndarray, catalog, counter: EventCounter, ego_lane: int,
                       t: float | None = None) -> list[tuple[str, frozenset]]:
    """Trigger at most one mask; returns ``[(mask id, brake positions)]`` or ``[]``.

    The triggering mask's counter is incremented.
    """
    found = eligible_masks(tem, catalog, counter, ego_lane)
    if not found:
        return []
    best = found[0]
    counter.record(best.id, t)
    return [(best.id, best.brake_set)]


# ------------------------------------------------------------------ scenario capture

_NUM_OR_NULL = {"type": ["number", "null"]}
_GRID = {"type": "array", "items": {"type": "array", "items": _NUM_OR_NULL}}
_INT_GRID = {"type": "array", "items": {"type": "array", "items": {"type": ["integer", "null"]}}}

# JSON Schema (draft 2020-12) of one scenarios.jsonl line; null stands for an empty cell
SCENARIO_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "ScenarioRecord",
    "type": "object",
    "required": ["index", "trigger_time", "event_kind", "triggered_mask_id",
                 "triggered_vehicle_ids", "partial", "collision", "label", "frame"],
    "additionalProperties": False,
    "properties": {
        "index": {"type": "integer", "minimum": 0},
        "trigger_time": {"type": "number", "minimum": 0},
        "event_kind": {"enum": ["braking", "lane_change"]},
        "triggered_mask_id": {"type": ["string", "null"]},
        "triggered_vehicle_ids": {"type": "array", "items": {"type": "integer"}},
        "partial": {"type": "boolean"},
        "collision": {"type": "boolean"},
        "label": {"enum": ["non critical", "eventually critical", "very critical", None]},
        "frame": {"type": "array", "items": {
            "type": "object",
            "required": ["time", "s_ego", "v_ego", "a_ego", "distance", "d", "s_T", "v_T", "a_T"],
            "properties": {
                "time": {"type": "number"}, "s_ego": {"type": "number"},
                "v_ego": {"type": "number", "minimum": 0}, "a_ego": {"type": "number"},
                "lane_ego": {"type": "integer"}, "y_ego": {"type": "number"},
                "distance": {"type": "number", "minimum": 0},
                "d": _GRID, "s_T": _GRID, "v_T": _GRID, "a_T": _GRID, "id_T": _INT_GRID,
                "lead_id": {"type": ["integer", "null"]}, "ttb": _NUM_OR_NULL,
                "collision": {"type": "boolean"},
                "vehicles": {"type": "object", "additionalProperties": {
                    "type": "array", "items": {"type": "number"}, "minItems": 5, "maxItems": 5}},
            }}},
    },
}


@dataclass
class ScenarioRecord:
    index: int
    trigger_time: float
    event_kind: str
    triggered_mask_id: str | None
    triggered_vehicle_ids: tuple[int, ...]
    frame: list[dict]
    partial: bool = False
    collision: bool = False
    label: str | None = None

    def to_json_dict(self) -> dict:
        return {"index": self.index, "trigger_time": round(self.trigger_time, 6),
                "event_kind": self.event_kind, "triggered_mask_id": self.triggered_mask_id,
                "triggered_vehicle_ids": list(self.triggered_vehicle_ids),
                "partial": self.partial, "collision": self.collision, "label": self.label,
                "frame": [_jsonable(s) for s in self.frame]}


def _jsonable(obj):
    if isinstance(obj, float):
        return None if math.isinf(obj) or math.isnan(obj) else obj
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def capture_scenario(history, t_trigger: float, t_lower: float, t_upper: float,
                     relevant_ids=(), *, index: int = 0, event_kind: str = "braking",
                     mask_id: str | None = None, dt: float | None = None) -> ScenarioRecord:
    """Cut the samples strictly inside ``(t_trigger - t_lower, t_trigger + t_upper)``.

    ``history`` is any iterable of sample dicts with a ``time`` key.  Only the
    ``vehicles`` entries of ``relevant_ids`` and of the ego's leader are kept.
    The record is flagged partial when the available history does not cover
    the whole window (trigger too close to the start, or cut short).
    """
    lo, hi = t_trigger - t_lower, t_trigger + t_upper
    keep = set(relevant_ids)
    frame = []
    for sample in history:
        t = sample["time"]
        if lo + TOL < t < hi - TOL:
            s = dict(sample)
            vehicles = sample.get("vehicles", {})
            wanted = keep | ({sample["lead_id"]} if sample.get("lead_id") is not None else set())
            s["vehicles"] = {vid: vehicles[vid] for vid in sorted(wanted) if vid in vehicles}
            frame.append(s)
    partial = not frame
    if frame and dt:
        n_lo = math.floor((lo + TOL) / dt) + 1
        n_hi = math.ceil((hi - TOL) / dt) - 1
        first = round(frame[0]["time"] / dt)
        last = round(frame[-1]["time"] / dt)
        partial = first > n_lo or last < n_hi
    collision = any(s.get("collision") for s in frame)
    return ScenarioRecord(index, t_trigger, event_kind, mask_id, tuple(sorted(relevant_ids)),
                          frame, partial, collision)


@dataclass
class _OpenCapture:
    index: int
    t_trigger: float
    kind: str
    mask_id: str | None
    ids: tuple[int, ...]
    samples: list[dict]
    collision: bool = False


@dataclass
class _ActiveManeuver:
    vehicle_id: int
    profile: ManeuverProfile
    kind: str
    k: int = 0


# ------------------------------------------------------------------ plugin

class StmPlugin(InjectorAbstract):
    """Stress testing plugin: braking triggers, cut-ins and scenario capture.

    Parameters
    ----------
    params : StmParameters
    road : RoadConfig
    dt : float
        simulation step, in s
    rng : numpy.random.Generator
        used to pick among several cut-in candidates
    on_record : callable, optional
        receives each :class:`ScenarioRecord` as soon as it is sealed
    """

    def __init__(self, params: StmParameters, road: RoadConfig, dt: float, rng,
                 on_record=None):
        self.params = params
        self.road = road
        self.dt = dt
        self.rng = rng
        self.on_record = on_record
        self.catalog = default_catalog(road.lane_count, params.supplementary_masks)
        self.counter = EventCounter(params.n_ct_max)
        self.lce = LceScheduler(params.lce, road.lane_count)
        self.history: deque = deque(maxlen=math.ceil(params.t_lower / dt) + 10)
        self.captures: list[_OpenCapture] = []
        self.maneuvers: dict[int, _ActiveManeuver] = {}
        self.records: list[ScenarioRecord] = []
        self.n_records = 0
        self.events: list[dict] = []
        self.episode_start = 0.0
        self.last_sample: dict | None = None
        self._collision_pending = False

    # ---------------------------------------------------------------- hooks
    def inject(self, clock: SimClock, ego: VehicleState | None,
               view: NeighborView) -> list[VehicleCommand]:
        commands = self._continue_maneuvers(view)
        if ego is None:
            return commands
        t = clock.t
        bands = tvc_bands(ego.v, self.params.sit, self.params.t_max)
        dm = distance_matrix(ego, view, self.road.lane_count, bands,
                             exclude=frozenset(self.maneuvers))
        tem = compute_tem(dm, bands)
        sample = self._sample(t, ego, view, dm)
        self.history.append(sample)
        self.last_sample = sample
        self._feed_captures(sample)

        if self.params.braking_enabled and not any(
                m.kind == "braking" for m in self.maneuvers.values()):
            hit = match_combinations(tem, self.catalog, self.counter, ego.lane, t)
            if hit:
                mask_id, positions = hit[0]
                commands += self._start_braking(t, mask_id, positions, dm, view)

        if self.params.lce_enabled:
            pool = [v for v in view.flat if v.id not in self.maneuvers]
            pick = self.lce.step(t, ego, pool, self.rng)
            if pick is not None:
                commands += self._start_lane_change(t, pick, view)
        return commands

    def note_collision(self, t: float, pair: tuple[int, int], ego_id: int = 0) -> None:
        """Flag the captures that a collision at ``t`` belongs to."""
        self._collision_pending = True
        for cap in self.captures:
            if ego_id in pair or set(pair) & set(cap.ids):
                cap.collision = True
        for rec in self.records:
            if rec.trigger_time + self.params.t_upper > t and (ego_id in pair or set(pair) & set(rec.triggered_vehicle_ids)):
                rec.collision = True

    def end_episode(self, t: float) -> None:
        """Seal open captures (truncated) and forget the history."""
        for cap in list(self.captures):
            self._seal(cap, truncated=True)
        self.captures.clear()
        self.maneuvers.clear()
        self.history.clear()
        self.last_sample = None
        self.episode_start = t

    def on_finish(self, summary=None) -> None:
        self.end_episode(self.episode_start)

    # ------------------------------------------------------------- internals
    def _sample(self, t: float, ego: VehicleState, view: NeighborView, dm: DistanceMatrix) -> dict:
        by_id = {v.id: v for v in view.flat}
        lanes = self.road.lane_count
        s_t = [[None] * 3 for _ in range(lanes)]
        v_t = [[None] * 3 for _ in range(lanes)]
        a_t = [[None] * 3 for _ in range(lanes)]
        id_t = [[None] * 3 for _ in range(lanes)]
        d = [[None] * 3 for _ in range(lanes)]
        for j in range(lanes):
            for i in range(3):
                vid = int(dm.ids[j, i])
                if vid >= 0:
                    veh = by_id[vid]
                    s_t[j][i], v_t[j][i], a_t[j][i], id_t[j][i] = veh.s, veh.v, veh.a, vid
                    d[j][i] = float(dm.d[j, i])
        ego_lanes = body_lanes(ego, self.road)
        lead = None
        near = {}
        reach = ego.s + self.params.t_max * max(ego.v, 1.0)
        for veh in view.flat:
            if veh.s <= ego.s - 2.0 * veh.length or veh.s > reach:
                continue
            near[veh.id] = [veh.s, veh.v, veh.a, veh.lane, veh.y_lat]
            if veh.s > ego.s and (lead is None or veh.s < lead.s):
                if set(body_lanes(veh, self.road)) & set(ego_lanes):
                    lead = veh
        ttb_value = math.inf if lead is None else ttb(lead.s - ego.front, ego.v - lead.v)
        collision = self._collision_pending
        self._collision_pending = False
        return {"time": round(t, 9), "s_ego": ego.s, "v_ego": ego.v, "a_ego": ego.a,
                "lane_ego": ego.lane, "y_ego": ego.y_lat, "distance": ego.distance,
                "d": d, "s_T": s_t, "v_T": v_t, "a_T": a_t, "id_T": id_t,
                "lead_id": None if lead is None else lead.id, "ttb": ttb_value,
                "collision": collision, "vehicles": near}

    def _feed_captures(self, sample: dict) -> None:
        t = sample["time"]
        for cap in list(self.captures):
            if t < cap.t_trigger + self.params.t_upper - TOL:
                cap.samples.append(sample)
            else:
                self._seal(cap, truncated=False)
                self.captures.remove(cap)

    def _open_capture(self, t: float, kind: str, mask_id: str | None, ids) -> None:
        pre = [s for s in self.history]
        cap = _OpenCapture(self.n_records, t, kind, mask_id, tuple(sorted(ids)), pre)
        self.n_records += 1
        self.captures.append(cap)
        self.events.append({"time": round(t, 9), "kind": kind, "mask": mask_id,
                            "vehicles": list(cap.ids), "record": cap.index})

    def _seal(self, cap: _OpenCapture, truncated: bool) -> None:
        rec = capture_scenario(cap.samples, cap.t_trigger, self.params.t_lower,
                               self.params.t_upper, cap.ids, index=cap.index,
                               event_kind=cap.kind, mask_id=cap.mask_id, dt=self.dt)
        rec.partial = rec.partial or truncated
        rec.collision = rec.collision or cap.collision
        self.records.append(rec)
        if self.on_record is not None:
            self.on_record(rec)

    def braking_profile(self, v0: float) -> ManeuverProfile | None:
        p = self.params
        if v0 <= p.v_final_kmh * KMH + 1e-6:
            return None
        if p.braking_model == "acc":
            # begin the release early so the maneuver ends near v_final
            jerk = min(p.acc.jerk_limit, iso_limits(v0)[1])
            v_release = p.v_final_kmh * KMH + acc_release_speed_loss(p.acc.a1, jerk)
            if v0 <= v_release:
                return None
            return acc_brake_profile(p.acc, v0, v_release, self.dt)
        driver = replace(p.driver, v_final_kmh=p.v_final_kmh)
        if p.t_d_source == "table":
            driver = replace(driver, t_d=table_braking_time(v0 / KMH, p.v_final_kmh))
        return driver_brake_profile(v0, driver, self.dt)

    def _start_braking(self, t, mask_id, positions, dm: DistanceMatrix, view) -> list:
        by_id = view.by_id()
        ids = []
        commands = []
        for lane, col in sorted(positions):
            vid = int(dm.ids[lane - 1, col - 1])
            veh = by_id.get(vid)
            if veh is None:
                continue
            profile = self.braking_profile(veh.v)
            ids.append(vid)
            if profile is None or profile.n_steps == 0:
                continue
            self.maneuvers[vid] = _ActiveManeuver(vid, profile, "braking", 1)
            commands.append(VehicleCommand(vid, accel_override=float(profile.a_step[0])))
        log.debug("t=%.1f braking %s on %s", t, mask_id, ids)
        self._open_capture(t, "braking", mask_id, ids)
        return commands

    def _start_lane_change(self, t, pick, view) -> list:
        veh = view.by_id()[pick.vehicle_id]
        profile = lane_change_trajectory(self.params.lce, veh.v, pick.direction, self.dt)
        self.maneuvers[veh.id] = _ActiveManeuver(veh.id, profile, "lane_change", 1)
        log.debug("t=%.1f cut-in %s by %d", t, pick.event.name, veh.id)
        self._open_capture(t, "lane_change", pick.event.name, (veh.id,))
        return [VehicleCommand(veh.id, accel_override=float(profile.a_step[0]),
                               lateral_rate=float(profile.lateral_rate[0]))]

    def _continue_maneuvers(self, view: NeighborView) -> list:
        commands = []
        present = {v.id for v in view.flat}
        for vid, man in list(self.maneuvers.items()):
            if vid not in present:
                del self.maneuvers[vid]
                commands.append(VehicleCommand(vid, release=True))
                continue
            if man.k >= man.profile.n_steps:
                del self.maneuvers[vid]
                commands.append(VehicleCommand(vid, release=True))
                continue
            lat = None
            if man.kind == "lane_change":
                lat = float(man.profile.lateral_rate[man.k])
            commands.append(VehicleCommand(vid, accel_override=float(man.profile.a_step[man.k]),
                                           lateral_rate=lat))
            man.k += 1
        return commands
