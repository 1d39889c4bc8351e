"""Run configuration: TOML parsing, validation with key paths, and dumping."""
from __future__ import annotations

from dataclasses import dataclass, field

import tomli
import tomli_w

from .evaluation import CriticalityThresholds
from .maneuvers import AccBrakeParams, DriverBrakeParams, LceParams
from .traffic import EgoControllerParams, IdmParams, TrafficDemand
from .world import RoadConfig, StmParameters


class ConfigError(ValueError):
    """Invalid configuration; ``violations`` lists every problem found."""

    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


@dataclass(frozen=True)
class SimConfig:
    road: RoadConfig = field(default_factory=RoadConfig)
    demand: TrafficDemand = field(default_factory=TrafficDemand)
    ego: EgoControllerParams = field(default_factory=EgoControllerParams)
    idm: IdmParams = field(default_factory=IdmParams)
    stm: StmParameters = field(default_factory=StmParameters)
    thresholds: CriticalityThresholds = field(default_factory=CriticalityThresholds)
    dt: float = 0.1
    seed: int = 1
    km: float = 200.0
    ego_start_m: float = 300.0
    ego_end_margin_m: float = 300.0


# key path -> (accepted types, default); defaults mirror the dataclasses
_NUM = (int, float)
SCHEMA: dict[str, tuple[tuple[type, ...], object]] = {
    "road.lanes": ((int,), 3),
    "road.length_m": (_NUM, 2500.0),
    "road.lane_width_m": (_NUM, 3.5),
    "road.speed_limit_ms": (_NUM, RoadConfig().speed_limit),
    "traffic.inflow_veh_h": (_NUM, 1200.0),
    "traffic.desired_speed_ms": (_NUM, 30.0),
    "traffic.desired_speed_sd_ms": (_NUM, 3.0),
    "ego.time_gap_s": (_NUM, 1.5),
    "ego.acc_max_decel_ms2": (_NUM, 3.5),
    "ego.acc_max_accel_ms2": (_NUM, 1.5),
    "ego.emergency_decel_ms2": (_NUM, 8.5),
    "ego.set_speed_ms": (_NUM, EgoControllerParams().set_speed),
    "ego.lane_change": ((bool,), True),
    "stm.sit_s": ((list,), [2.0, 4.0, 6.0]),
    "stm.t_max_s": (_NUM, 8.0),
    "stm.n_ct_max": ((int,), 10),
    "stm.v_final_kmh": (_NUM, 20.0),
    "stm.supplementary_masks": ((bool,), True),
    "stm.braking_enabled": ((bool,), True),
    "stm.lce_enabled": ((bool,), True),
    "stm.frame.lower_s": (_NUM, 5.0),
    "stm.frame.upper_s": (_NUM, 10.0),
    "braking.model": ((str,), "driver"),
    "braking.t_d_s": (_NUM, 12.0),
    "braking.t_d_source": ((str,), "fixed"),
    "braking.a_peak_ms2": (_NUM, -1.7),
    "braking.shape_m": (_NUM, 1.0),
    "braking.acc_a0_ms2": (_NUM, 0.0),
    "braking.acc_a1_ms2": (_NUM, -3.0),
    "braking.acc_jerk_ms3": (_NUM, 1.5),
    "lce.t_m_s": (_NUM, 6.0),
    "lce.h_m": (_NUM, 3.5),
    "lce.a_max_ms2": (_NUM, 1.2),
    "lce.t_int_min_s": (_NUM, 300.0),
    "lce.init_times_s": ((list,), []),
    "lce.ahead_window_m": (_NUM, 8.0),
    "evaluation.ttb_very_s": (_NUM, 0.8),
    "evaluation.ttb_eventually_s": (_NUM, 1.6),
    "evaluation.req_decel_very_ms2": (_NUM, 5.5),
    "evaluation.req_decel_eventually_ms2": (_NUM, 3.5),
    "run.seed": ((int,), 1),
    "run.km": (_NUM, 200.0),
    "run.dt_s": (_NUM, 0.1),
    "run.ego_start_m": (_NUM, 300.0),
    "run.ego_end_margin_m": (_NUM, 300.0),
}


def _flatten(tree: dict, prefix: str = "") -> dict[str, object]:
    out = {}
    for key, val in tree.items():
        path = f"{prefix}{key}"
        if isinstance(val, dict):
            out.update(_flatten(val, path + "."))
        else:
            out[path] = val
    return out


def _check_type(path: str, val, types) -> str | None:
    if isinstance(val, bool) and bool not in types:
        return f"{path}: expected {'/'.join(t.__name__ for t in types)}, got bool"
    if not isinstance(val, types):
        return f"{path}: expected {'/'.join(t.__name__ for t in types)}, got {type(val).__name__}"
    return None


def parse_config(text: str) -> dict:
    return tomli.loads(text)


def load_config(path) -> SimConfig:
    """Read and validate a TOML file."""
    with open(path, "rb") as fh:
        try:
            raw = tomli.load(fh)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError([f"{path}: {exc}"]) from exc
    return validate_config(raw)


def validate_config(raw: dict, overrides: dict[str, object] | None = None) -> SimConfig:
    """Build a :class:`SimConfig` from a parsed tree.

    ``overrides`` maps key paths (``"run.km"``) to values that replace the
    file's.  All violations are collected and raised together.

    Raises
    ------
    ConfigError
        listing each violation prefixed with its key path
    """
    flat = _flatten(raw)
    flat.update(overrides or {})
    errors = [f"{k}: unknown key" for k in sorted(flat) if k not in SCHEMA]
    vals = {}
    for key, (types, default) in SCHEMA.items():
        val = flat.get(key, default)
        err = _check_type(key, val, types)
        if err:
            errors.append(err)
            val = default
        vals[key] = val

    sit = vals["stm.sit_s"]
    if len(sit) != 3 or any(isinstance(x, bool) or not isinstance(x, _NUM) for x in sit):
        errors.append("stm.sit_s: expected three numbers")
        sit = SCHEMA["stm.sit_s"][1]
    init_times = vals["lce.init_times_s"]
    if any(isinstance(x, bool) or not isinstance(x, _NUM) for x in init_times):
        errors.append("lce.init_times_s: expected numbers")
        init_times = []

    road = RoadConfig(vals["road.lanes"], float(vals["road.lane_width_m"]),
                      float(vals["road.length_m"]), float(vals["road.speed_limit_ms"]))
    errors += [f"road: {m}" for m in road.violations()]
    demand = TrafficDemand(float(vals["traffic.inflow_veh_h"]), float(vals["traffic.desired_speed_ms"]),
                           float(vals["traffic.desired_speed_sd_ms"]), vals["run.seed"])
    errors += [f"traffic: {m}" for m in demand.violations()]
    ego = EgoControllerParams(time_gap=float(vals["ego.time_gap_s"]),
                              acc_max_decel=float(vals["ego.acc_max_decel_ms2"]),
                              acc_max_accel=float(vals["ego.acc_max_accel_ms2"]),
                              emergency_decel=float(vals["ego.emergency_decel_ms2"]),
                              set_speed=float(vals["ego.set_speed_ms"]),
                              lane_change=vals["ego.lane_change"])
    errors += [f"ego: {m}" for m in ego.violations()]
    driver = DriverBrakeParams(float(vals["braking.t_d_s"]), float(vals["stm.v_final_kmh"]),
                               float(vals["braking.a_peak_ms2"]), float(vals["braking.shape_m"]))
    acc = AccBrakeParams(float(vals["braking.acc_a0_ms2"]), float(vals["braking.acc_a1_ms2"]),
                         float(vals["braking.acc_jerk_ms3"]))
    lce = LceParams(float(vals["lce.t_m_s"]), float(vals["lce.h_m"]), float(vals["lce.a_max_ms2"]),
                    float(vals["lce.t_int_min_s"]), tuple(float(x) for x in init_times),
                    float(vals["lce.ahead_window_m"]))
    errors += [f"braking: {m}" for m in driver.violations() + acc.violations()]
    errors += [f"lce: {m}" for m in lce.violations()]
    stm = StmParameters(sit=tuple(float(x) for x in sit), t_max=float(vals["stm.t_max_s"]),
                        n_ct_max=vals["stm.n_ct_max"], t_lower=float(vals["stm.frame.lower_s"]),
                        t_upper=float(vals["stm.frame.upper_s"]), braking_model=vals["braking.model"],
                        driver=driver, acc=acc, t_d_source=vals["braking.t_d_source"], lce=lce,
                        v_final_kmh=float(vals["stm.v_final_kmh"]),
                        supplementary_masks=vals["stm.supplementary_masks"],
                        lce_enabled=vals["stm.lce_enabled"],
                        braking_enabled=vals["stm.braking_enabled"])
    errors += [f"stm: {m}" for m in stm.violations()]
    thresholds = CriticalityThresholds(float(vals["evaluation.ttb_very_s"]),
                                       float(vals["evaluation.ttb_eventually_s"]),
                                       float(vals["evaluation.req_decel_very_ms2"]),
                                       float(vals["evaluation.req_decel_eventually_ms2"]))
    errors += [f"evaluation: {m}" for m in thresholds.violations()]
    if not vals["run.km"] > 0:
        errors.append("run.km: must be positive")
    if not vals["run.dt_s"] > 0:
        errors.append("run.dt_s: must be positive")
    if not 0 <= vals["run.ego_start_m"] < vals["road.length_m"] - vals["run.ego_end_margin_m"]:
        errors.append("run.ego_start_m: ego must start before the end margin")
    if errors:
        raise ConfigError(errors)
    return SimConfig(road, demand, ego, IdmParams(), stm, thresholds, float(vals["run.dt_s"]),
                     vals["run.seed"], float(vals["run.km"]), float(vals["run.ego_start_m"]),
                     float(vals["run.ego_end_margin_m"]))


def config_to_tree(cfg: SimConfig) -> dict:
    s, d, e = cfg.stm, cfg.stm.driver, cfg.ego
    return {
        "road": {"lanes": cfg.road.lane_count, "length_m": cfg.road.length,
                 "lane_width_m": cfg.road.lane_width, "speed_limit_ms": cfg.road.speed_limit},
        "traffic": {"inflow_veh_h": cfg.demand.inflow_per_lane,
                    "desired_speed_ms": cfg.demand.desired_speed_mean,
                    "desired_speed_sd_ms": cfg.demand.desired_speed_sd},
        "ego": {"time_gap_s": e.time_gap, "acc_max_decel_ms2": e.acc_max_decel,
                "acc_max_accel_ms2": e.acc_max_accel, "emergency_decel_ms2": e.emergency_decel,
                "set_speed_ms": e.set_speed, "lane_change": e.lane_change},
        "stm": {"sit_s": list(s.sit), "t_max_s": s.t_max, "n_ct_max": s.n_ct_max,
                "v_final_kmh": s.v_final_kmh, "supplementary_masks": s.supplementary_masks,
                "braking_enabled": s.braking_enabled, "lce_enabled": s.lce_enabled,
                "frame": {"lower_s": s.t_lower, "upper_s": s.t_upper}},
        "braking": {"model": s.braking_model, "t_d_s": d.t_d, "t_d_source": s.t_d_source,
                    "a_peak_ms2": d.a_peak, "shape_m": d.shape_m, "acc_a0_ms2": s.acc.a0,
                    "acc_a1_ms2": s.acc.a1, "acc_jerk_ms3": s.acc.jerk_limit},
        "lce": {"t_m_s": s.lce.t_m, "h_m": s.lce.h, "a_max_ms2": s.lce.a_max,
                "t_int_min_s": s.lce.t_int_min, "init_times_s": list(s.lce.init_times),
                "ahead_window_m": s.lce.ahead_window},
        "evaluation": {"ttb_very_s": cfg.thresholds.ttb_very_critical,
                       "ttb_eventually_s": cfg.thresholds.ttb_eventually_critical,
                       "req_decel_very_ms2": cfg.thresholds.req_decel_very,
                       "req_decel_eventually_ms2": cfg.thresholds.req_decel_eventually},
        "run": {"seed": cfg.seed, "km": cfg.km, "dt_s": cfg.dt, "ego_start_m": cfg.ego_start_m,
                "ego_end_margin_m": cfg.ego_end_margin_m},
    }


def dump_config(cfg: SimConfig) -> str:
    return tomli_w.dumps(config_to_tree(cfg))


def default_config() -> SimConfig:
    return validate_config({})
