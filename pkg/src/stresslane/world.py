"""Domain types shared across the simulator: road, vehicles, clock, STM settings."""
from __future__ import annotations

from dataclasses import dataclass, field

from .maneuvers import AccBrakeParams, DriverBrakeParams, LceParams

EGO = "ego"
TRAFFIC = "traffic"
INTERNAL = "internal_model"
PLUGIN = "stm_plugin"


@dataclass(frozen=True)
class RoadConfig:
    """Straight multilane motorway segment.

    Lane 1 is the leftmost lane; lateral offsets are positive to the right.
    """

    lane_count: int = 3
    lane_width: float = 3.5
    length: float = 3000.0
    speed_limit: float = 130.0 / 3.6

    def violations(self) -> list[str]:
        out = []
        if self.lane_count not in (2, 3):
            out.append("lane_count must be 2 or 3")
        if not self.lane_width > 0:
            out.append("lane_width must be positive")
        if not self.length > 0:
            out.append("length must be positive")
        if not self.speed_limit > 0:
            out.append("speed_limit must be positive")
        return out

    def lane_center(self, lane: int) -> float:
        return (lane - 1) * self.lane_width


@dataclass(slots=True)
class VehicleState:
    """Kinematic record of one driver-vehicle unit.

    ``s`` is the rear bumper position, so the vehicle occupies
    ``[s, s + length]``.  ``distance`` is the driven distance since the
    vehicle entered the simulation.
    """

    id: int
    kind: str
    lane: int
    s: float
    v: float
    a: float = 0.0
    y_lat: float = 0.0
    length: float = 4.5
    width: float = 1.8
    controlled_by: str = INTERNAL
    v_des: float = 30.0
    distance: float = 0.0

    @property
    def front(self) -> float:
        return self.s + self.length

    def copy(self) -> "VehicleState":
        return VehicleState(self.id, self.kind, self.lane, self.s, self.v, self.a, self.y_lat,
                            self.length, self.width, self.controlled_by, self.v_des,
                            self.distance)


def lateral_position(vehicle: VehicleState, lane_width: float) -> float:
    return (vehicle.lane - 1) * lane_width + vehicle.y_lat


def body_lanes(vehicle: VehicleState, road: RoadConfig) -> tuple[int, ...]:
    """Lanes physically touched by the vehicle body."""
    half_free = 0.5 * (road.lane_width - vehicle.width)
    if vehicle.y_lat > half_free and vehicle.lane < road.lane_count:
        return vehicle.lane, vehicle.lane + 1
    if vehicle.y_lat < -half_free and vehicle.lane > 1:
        return vehicle.lane, vehicle.lane - 1
    return (vehicle.lane,)


@dataclass
class SimClock:
    """Fixed-step clock; time is always ``step_index * dt``."""

    dt: float = 0.1
    step_index: int = 0

    @property
    def t(self) -> float:
        return self.step_index * self.dt

    def tick(self) -> None:
        self.step_index += 1


@dataclass(frozen=True)
class StmParameters:
    """Stress testing configuration.

    ``sit`` are the three safety interval times, ``t_max`` the fourth one
    that closes the last band.  ``v_final_kmh`` is the target speed of
    braking events and overrides the one carried by ``driver``.
    """

    sit: tuple[float, float, float] = (2.0, 4.0, 6.0)
    t_max: float = 8.0
    n_ct_max: int = 10
    t_lower: float = 5.0
    t_upper: float = 10.0
    braking_model: str = "driver"
    driver: DriverBrakeParams = field(default_factory=DriverBrakeParams)
    acc: AccBrakeParams = field(default_factory=AccBrakeParams)
    t_d_source: str = "fixed"
    lce: LceParams = field(default_factory=LceParams)
    v_final_kmh: float = 20.0
    supplementary_masks: bool = True
    lce_enabled: bool = True
    braking_enabled: bool = True

    def violations(self) -> list[str]:
        out = []
        t1, t2, t3 = self.sit
        if not (0 < t1 < t2 < t3):
            out.append("sit not strictly increasing")
        if not self.t_max > t3:
            out.append("t_max must exceed the third sit")
        if self.n_ct_max < 1:
            out.append("n_ct_max must be >= 1")
        if not self.t_lower > 0:
            out.append("t_lower must be positive")
        if not self.t_upper > 0:
            out.append("t_upper must be positive")
        if self.braking_model not in ("driver", "acc"):
            out.append("braking model must be 'driver' or 'acc'")
        if self.t_d_source not in ("fixed", "table"):
            out.append("t_d_source must be 'fixed' or 'table'")
        if self.v_final_kmh < 0:
            out.append("v_final must be >= 0")
        return out
