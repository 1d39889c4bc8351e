"""Collision detection, time-to-brake and criticality bookkeeping."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from enum import IntEnum

MAX_DECEL = 8.5


class CriticalityLabel(IntEnum):
    NON_CRITICAL = 0
    EVENTUALLY_CRITICAL = 1
    VERY_CRITICAL = 2

    @property
    def text(self) -> str:
        return self.name.lower().replace("_", " ")


@dataclass(frozen=True)
class CriticalityThresholds:
    ttb_very_critical: float = 0.8
    ttb_eventually_critical: float = 1.6
    req_decel_very: float = 5.5
    req_decel_eventually: float = 3.5

    def violations(self) -> list[str]:
        out = []
        if not self.ttb_very_critical < self.ttb_eventually_critical:
            out.append("ttb_very_critical must be below ttb_eventually_critical")
        if not abs(self.req_decel_very) > abs(self.req_decel_eventually):
            out.append("|req_decel_very| must exceed |req_decel_eventually|")
        return out

    def level(self, ttb_value: float, req_decel: float) -> CriticalityLabel:
        """Criticality of a single instant."""
        if ttb_value < self.ttb_very_critical or req_decel > abs(self.req_decel_very):
            return CriticalityLabel.VERY_CRITICAL
        if ttb_value < self.ttb_eventually_critical or req_decel > abs(self.req_decel_eventually):
            return CriticalityLabel.EVENTUALLY_CRITICAL
        return CriticalityLabel.NON_CRITICAL


def ttb(gap: float, v_rel: float, a_max: float = MAX_DECEL) -> float:
    """Time left before full braking at ``a_max`` must start.

    Parameters
    ----------
    gap : float
        bumper-to-bumper distance to the leader, in m
    v_rel : float
        closing speed ``v_follower - v_leader``, in m/s
    a_max : float
        maximum deceleration magnitude, in m/s2

    Returns
    -------
    float
        ``(gap - v_rel**2 / (2 a_max)) / v_rel``, or ``inf`` for an opening
        or constant gap.  Negative values mean braking already comes too late.
    """
    if v_rel <= 0.0:
        return math.inf
    return (gap - v_rel * v_rel / (2.0 * a_max)) / v_rel


def ttb_between(ego, lead, a_max: float = MAX_DECEL) -> float:
    if lead is None:
        return math.inf
    return ttb(lead.s - ego.s - ego.length, ego.v - lead.v, a_max)


# ----------------------------------------------------------------- collisions

def boxes_overlap(a, b, lane_width: float) -> bool:
    """2-D overlap of two vehicle footprints (longitudinal and lateral)."""
    if a.s >= b.s + b.length or b.s >= a.s + a.length:
        return False
    ya = (a.lane - 1) * lane_width + a.y_lat
    yb = (b.lane - 1) * lane_width + b.y_lat
    return abs(ya - yb) < 0.5 * (a.width + b.width)


class CollisionDetector:
    """Reports each touching pair once per contact episode."""

    def __init__(self, lane_width: float):
        self.lane_width = lane_width
        self.in_contact: set[tuple[int, int]] = set()

    def reset(self) -> None:
        self.in_contact.clear()

    def step(self, vehicles, t: float) -> list[tuple[tuple[int, int], float]]:
        ordered = sorted(vehicles, key=lambda v: (v.s, v.id))
        longest = max((v.length for v in ordered), default=0.0)
        touching = set()
        for i, a in enumerate(ordered):
            reach = a.s + max(a.length, longest)
            for b in ordered[i + 1:]:
                if b.s >= reach:
                    break
                if boxes_overlap(a, b, self.lane_width):
                    touching.add((min(a.id, b.id), max(a.id, b.id)))
        new = sorted(touching - self.in_contact)
        self.in_contact = touching
        return [(pair, t) for pair in new]


def detect_collision(world, detector: CollisionDetector | None = None):
    """Pairs of vehicles whose footprints overlap in ``world`` at its current time."""
    detector = detector or CollisionDetector(world.road.lane_width)
    return detector.step(world.vehicles.values(), world.clock.t)


# ------------------------------------------------------------- classification

def classify(scenario, thresholds: CriticalityThresholds = CriticalityThresholds()) -> CriticalityLabel:
    """Label a sealed scenario record from its ego TTB and braking demand.

    ``scenario`` needs ``frame`` (samples with ``ttb`` and ``a_ego``) and a
    ``collision`` flag.
    """
    if scenario.collision or any(s.get("collision") for s in scenario.frame):
        return CriticalityLabel.VERY_CRITICAL
    level = CriticalityLabel.NON_CRITICAL
    for sample in scenario.frame:
        t_val = sample.get("ttb")
        t_val = math.inf if t_val is None else t_val
        level = max(level, thresholds.level(t_val, -sample["a_ego"]))
    return level


class CriticalityMonitor:
    """Counts critical situations of the ego over a whole run.

    A situation starts at the first critical instant and ends after
    ``quiet_time`` seconds without one; it is counted once, at its worst
    level.
    """

    def __init__(self, thresholds: CriticalityThresholds = CriticalityThresholds(),
                 quiet_time: float = 1.0):
        self.thresholds = thresholds
        self.quiet_time = quiet_time
        self.counts = {CriticalityLabel.EVENTUALLY_CRITICAL: 0, CriticalityLabel.VERY_CRITICAL: 0}
        self.current = CriticalityLabel.NON_CRITICAL
        self.last_critical = -math.inf

    def update(self, t: float, ttb_value: float, req_decel: float, collision: bool = False) -> None:
        level = (CriticalityLabel.VERY_CRITICAL if collision
                 else self.thresholds.level(ttb_value, req_decel))
        if self.current and t - self.last_critical >= self.quiet_time - 1e-9:
            self.close()
        if level:
            self.current = max(self.current, level)
            self.last_critical = t

    def close(self) -> None:
        if self.current:
            self.counts[self.current] += 1
        self.current = CriticalityLabel.NON_CRITICAL

    @property
    def eventually_critical(self) -> int:
        return self.counts[CriticalityLabel.EVENTUALLY_CRITICAL]

    @property
    def very_critical(self) -> int:
        return self.counts[CriticalityLabel.VERY_CRITICAL]


# ------------------------------------------------------------------- summaries

@dataclass(frozen=True)
class RunSummary:
    seed: int
    km_driven: float
    stm_enabled: bool
    collision_count: int
    eventually_critical_count: int
    very_critical_count: int

    CSV_HEADER = "seed,km,stm,collisions,eventually_critical,very_critical"

    def __post_init__(self):
        if not self.km_driven > 0:
            raise ValueError("km_driven must be positive")
        for f in ("collision_count", "eventually_critical_count", "very_critical_count"):
            if getattr(self, f) < 0:
                raise ValueError(f"{f} must be >= 0")

    def csv_row(self) -> str:
        return (f"{self.seed},{self.km_driven:.3f},{'on' if self.stm_enabled else 'off'},"
                f"{self.collision_count},{self.eventually_critical_count},{self.very_critical_count}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Comparison:
    baseline: RunSummary
    stressed: RunSummary
    rows: tuple[tuple[str, int, int, float], ...]

    def render(self) -> str:
        lines = [f"Comparison over {self.baseline.km_driven:.1f} km (seed {self.baseline.seed})",
                 f"{'':<22}{'without STM':>13}{'with STM':>11}{'ratio':>9}"]
        for name, a, b, r in self.rows:
            lines.append(f"{name:<22}{a:>13d}{b:>11d}{r:>9.2f}")
        return "\n".join(lines)


def _ratio(a: int, b: int) -> float:
    if a == b:
        return 1.0
    return math.inf if a == 0 else b / a


def compare_runs(a: RunSummary, b: RunSummary, km_tol: float = 1e-6) -> Comparison:
    """Side-by-side counts of a baseline run ``a`` and a stressed run ``b``.

    Raises
    ------
    ValueError
        when the two runs did not cover the same distance
    """
    if abs(a.km_driven - b.km_driven) > km_tol * max(1.0, a.km_driven):
        raise ValueError(f"km mismatch: {a.km_driven} vs {b.km_driven}")
    rows = tuple((name, getattr(a, f), getattr(b, f), _ratio(getattr(a, f), getattr(b, f)))
                 for name, f in (("Collisions", "collision_count"),
                                 ("Eventually critical", "eventually_critical_count"),
                                 ("Very critical", "very_critical_count")))
    return Comparison(a, b, rows)


SUMMARY_FIELDS = tuple(f.name for f in fields(RunSummary))
