"""External driver-model plugin framework.

The simulation hands full control of the per-step vehicle data flow to a
single installed :class:`Injector`.  Each step runs

    extract -> inject -> apply -> advance

``extract`` copies the vehicles around the ego into a :class:`NeighborView`,
the user plugin's ``inject`` turns that view into :class:`VehicleCommand`
objects, and ``apply`` hands the commands back to the world before it is
advanced.  Plugins only ever see copies, so they cannot mutate world state
behind the simulator's back.
"""
from __future__ import annotations

import abc
import logging
from dataclasses import dataclass, field

from .world import PLUGIN, SimClock, VehicleState

log = logging.getLogger(__name__)


class InjectorError(RuntimeError):
    pass


@dataclass(frozen=True)
class InjectorSettings:
    """Constructor flags of the injector.

    ``sit``/``t_max`` define the distance bands used to place vehicles into
    the relative map.
    """

    ego_id: int = 0
    neighbor_threshold: float = 300.0
    front_only: bool = False
    apply_every_n_steps: int = 1
    sit: tuple[float, float, float] = (2.0, 4.0, 6.0)
    t_max: float = 8.0

    def __post_init__(self):
        if self.apply_every_n_steps < 1:
            raise ValueError("apply_every_n_steps must be >= 1")
        if not self.neighbor_threshold > 0:
            raise ValueError("neighbor_threshold must be positive")


@dataclass
class NeighborView:
    """Vehicles around the ego, as a flat list and as a relative map.

    ``relative_map`` is keyed by ``(tvc_column, lane)``.
    """

    flat: list[VehicleState] = field(default_factory=list)
    relative_map: dict[tuple[int, int], int] = field(default_factory=dict)
    warning: bool = False

    def by_id(self) -> dict[int, VehicleState]:
        return {v.id: v for v in self.flat}


@dataclass(frozen=True)
class VehicleCommand:
    target_id: int
    accel_override: float | None = None
    lateral_rate: float | None = None
    release: bool = False

    def __post_init__(self):
        if self.release and (self.accel_override is not None or self.lateral_rate is not None):
            raise ValueError("a release command carries no overrides")


class InjectorAbstract(abc.ABC):
    """Base class for user plugins.  Only :meth:`inject` is mandatory."""

    def on_start(self, settings: InjectorSettings) -> None:
        pass

    @abc.abstractmethod
    def inject(self, clock: SimClock, ego: VehicleState | None,
               view: NeighborView) -> list[VehicleCommand]:
        ...

    def on_finish(self, summary) -> None:
        pass


class NoOpPlugin(InjectorAbstract):
    def inject(self, clock, ego, view):
        return []


def extract_neighbors(world, settings: InjectorSettings) -> NeighborView:
    """Copy the vehicles within ``neighbor_threshold`` of the ego.

    A vehicle at distance ``d = s - s_ego`` lands in relative-map cell
    ``(i, lane)`` when ``d`` lies strictly inside band ``i``; the nearest
    vehicle wins and ties go to the lower id.
    """
    from .stm import tvc_bands

    ego = world.vehicles.get(settings.ego_id)
    if ego is None:
        return NeighborView(warning=True)
    flat = []
    for veh in world.vehicles.values():
        if veh.id == ego.id:
            continue
        d = veh.s - ego.s
        if abs(d) > settings.neighbor_threshold or (settings.front_only and d < 0):
            continue
        flat.append(veh.copy())
    flat.sort(key=lambda v: (v.s, v.id))

    edges = tvc_bands(ego.v, settings.sit, settings.t_max).edges
    best: dict[tuple[int, int], tuple[float, int]] = {}
    for veh in flat:
        d = veh.s - ego.s
        for col in range(3):
            if edges[col] < d < edges[col + 1]:
                key = (col + 1, veh.lane)
                if key not in best or (d, veh.id) < best[key]:
                    best[key] = (d, veh.id)
                break
    return NeighborView(flat, {k: vid for k, (_, vid) in sorted(best.items())})


class Injector:
    """The single installed plugin host of a world."""

    def __init__(self, plugin: InjectorAbstract, settings: InjectorSettings):
        self.plugin = plugin
        self.settings = settings
        self.pending: dict[int, VehicleCommand] = {}
        self.incidents: list[str] = []

    def step(self, world) -> NeighborView:
        view = extract_neighbors(world, self.settings)
        ego = world.vehicles.get(self.settings.ego_id)
        clock = SimClock(world.clock.dt, world.clock.step_index)
        commands = self.plugin.inject(clock, ego.copy() if ego else None, view)
        self.apply(world, commands or [])
        return view

    def apply(self, world, commands: list[VehicleCommand]) -> None:
        for cmd in commands:
            self.pending[cmd.target_id] = cmd
        if world.clock.step_index % self.settings.apply_every_n_steps:
            return
        for target, cmd in self.pending.items():
            veh = world.vehicles.get(target)
            if veh is None:
                msg = f"t={world.clock.t:.1f} command for unknown vehicle {target} skipped"
                self.incidents.append(msg)
                log.debug(msg)
                continue
            if cmd.release:
                world.release(target)
                continue
            if cmd.accel_override is not None:
                world.overrides[target] = cmd.accel_override
            if cmd.lateral_rate is not None:
                world.lateral_rates[target] = cmd.lateral_rate
            veh.controlled_by = PLUGIN
        self.pending.clear()


def register_plugin(world, plugin: InjectorAbstract,
                    settings: InjectorSettings | None = None) -> Injector:
    """Install ``plugin`` as the world's injector; only one may be active."""
    if world.injector is not None:
        raise InjectorError("injector already installed")
    settings = settings or InjectorSettings()
    injector = Injector(plugin, settings)
    world.injector = injector
    plugin.on_start(settings)
    return injector


def apply_commands(world, commands: list[VehicleCommand]) -> None:
    """Hand commands to the world's installed injector."""
    if world.injector is None:
        raise InjectorError("no injector installed")
    world.injector.apply(world, commands)

