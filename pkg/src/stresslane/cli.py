"""Command line entry point: seeded batch runs and maneuver traces.

Examples
--------
Paired runs with and without stress testing::

    stresslane --config run.toml --seed 7,8,9 --km 200 --stm both --out results/

Deceleration trace of the driver braking model::

    stresslane --trace driver_brake --out traces/
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import tomli

from . import plotting
from .config import ConfigError, SimConfig, validate_config
from .evaluation import RunSummary, compare_runs
from .maneuvers import (KMH, InfeasibleManeuver, acc_brake_profile, driver_brake_profile,
                        lane_change_trajectory)
from .sim import InvariantBreach, RunResult, run_simulation

log = logging.getLogger("stresslane")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_INVARIANT = 0, 1, 2, 3
TRACE_KINDS = ("driver_brake", "acc_brake", "lane_change")
# default speeds of the reference maneuvers, km/h: (start, end)
TRACE_SPEEDS = {"driver_brake": (71.03, 28.67), "acc_brake": (70.97, 42.25),
                "lane_change": (85.0, None)}


@dataclass(frozen=True)
class RunSpec:
    config: SimConfig
    seeds: tuple[int, ...]
    km: float
    stm: str
    out: Path

    def __post_init__(self):
        if not self.km > 0:
            raise ConfigError(["run.km: must be positive"])
        if not self.seeds:
            raise ConfigError(["run.seed: at least one seed required"])
        if self.stm not in ("on", "off", "both"):
            raise ConfigError(["stm: must be on, off or both"])

    def modes(self) -> tuple[bool, ...]:
        return {"on": (True,), "off": (False,), "both": (False, True)}[self.stm]


# ------------------------------------------------------------------- writing

def _round(obj, nd: int = 4):
    if isinstance(obj, float):
        return round(obj, nd)
    if isinstance(obj, dict):
        return {k: _round(v, nd) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_round(v, nd) for v in obj]
    return obj


def scenario_line(rec) -> str:
    return json.dumps(_round(rec.to_json_dict()), separators=(",", ":"))


def run_dir(out: Path, seed: int, stm: bool) -> Path:
    return out / "runs" / f"seed{seed}_stm-{'on' if stm else 'off'}"


def _execute(cfg: SimConfig, stm: bool, out: Path) -> RunSummary:
    """Run one (seed, mode) pair and stream its artifacts to disk."""
    d = run_dir(out, cfg.seed, stm)
    d.mkdir(parents=True, exist_ok=True)
    with open(d / "scenarios.jsonl", "w", encoding="utf-8") as fh:
        result: RunResult = run_simulation(cfg, stm, on_record=lambda r: fh.write(scenario_line(r) + "\n"))
    with open(d / "events.log", "w", encoding="utf-8") as fh:
        for line in result.events:
            fh.write(line + "\n")
    log.info("seed %d stm=%s: %s in %.1fs", cfg.seed, stm, result.summary.csv_row(), result.wall_time)
    return result.summary


def run(spec: RunSpec, workers: int = 1) -> list[RunSummary]:
    """Execute every (seed, mode) of ``spec``; rows come back in seed order."""
    jobs = [(replace(spec.config, seed=s, km=spec.km,
                     demand=replace(spec.config.demand, seed=s)), stm, spec.out)
            for s in spec.seeds for stm in spec.modes()]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            summaries = list(pool.map(_execute, *zip(*jobs)))
    else:
        summaries = [_execute(*job) for job in jobs]

    with open(spec.out / "summary.csv", "w", encoding="utf-8") as fh:
        fh.write(RunSummary.CSV_HEADER + "\n")
        for s in summaries:
            fh.write(s.csv_row() + "\n")
    if spec.stm == "both":
        write_comparisons(summaries, spec.out)
    return summaries


def write_comparisons(summaries: list[RunSummary], out: Path) -> Path:
    fig_dir = out / "figures"
    fig_dir.mkdir(exist_ok=True)
    blocks = []
    by_seed: dict[int, dict[bool, RunSummary]] = {}
    for s in summaries:
        by_seed.setdefault(s.seed, {})[s.stm_enabled] = s
    for seed, pair in by_seed.items():
        cmp = compare_runs(pair[False], pair[True])
        blocks.append(cmp.render())
        plotting.plot_comparison([(n, a, b) for n, a, b, _ in cmp.rows],
                                 f"seed {seed}, {cmp.baseline.km_driven:.0f} km",
                                 fig_dir / f"comparison_seed{seed}.png")
    path = out / "comparison.txt"
    path.write_text("\n\n".join(blocks) + "\n", encoding="utf-8")
    return path


# -------------------------------------------------------------------- traces

def trace_series(kind: str, cfg: SimConfig, v0_kmh: float | None = None,
                 v_end_kmh: float | None = None) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Time series of the named maneuver, keyed by quantity name."""
    if kind not in TRACE_KINDS:
        raise ValueError(f"unknown trace kind {kind!r}")
    v0_default, v_end_default = TRACE_SPEEDS[kind]
    v0 = (v0_kmh if v0_kmh is not None else v0_default) * KMH
    v_end = v_end_kmh if v_end_kmh is not None else v_end_default
    dt = cfg.dt
    if kind == "driver_brake":
        prof = driver_brake_profile(v0, replace(cfg.stm.driver, v_final_kmh=v_end), dt)
    elif kind == "acc_brake":
        prof = acc_brake_profile(cfg.stm.acc, v0, v_end * KMH, dt)
        # the trace stops where the target speed is reached, before the release
        n = int(round(prof.meta["t_at_target"] / dt)) + 1
        speed = prof.speed(v0)[:n] / KMH
        return {"accel_ms2": (prof.t[:n], prof.a[:n]), "speed_kmh": (prof.t[:n], speed)}
    else:
        lce = cfg.stm.lce
        prof = lane_change_trajectory(lce, v0, "left", dt)
        return {"lateral_offset_m": (prof.t, np.abs(prof.y_lat)),
                "accel_ms2": (prof.t, prof.a),
                "speed_kmh": (prof.t, prof.speed(v0) / KMH)}
    return {"accel_ms2": (prof.t, prof.a), "speed_kmh": (prof.t, prof.speed(v0) / KMH)}


def emit_trace(kind: str, cfg: SimConfig, out: Path, v0_kmh=None, v_end_kmh=None) -> list[Path]:
    """Write one ``t value`` text file per quantity plus a PNG figure."""
    series = trace_series(kind, cfg, v0_kmh, v_end_kmh)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, (t, y) in series.items():
        path = out / f"{kind}_{name}.dat"
        np.savetxt(path, np.column_stack([t, y]), fmt="%.6f", header=f"t {name}")
        paths.append(path)
    paths.append(plotting.plot_trace(series, kind.replace("_", " "), out / f"{kind}.png"))
    return paths


# ----------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stresslane", description=__doc__.splitlines()[0])
    p.add_argument("--config", type=Path, help="TOML configuration file")
    p.add_argument("--seed", help="seed or comma-separated seeds (default: run.seed)")
    p.add_argument("--km", type=float, help="kilometres per run (default: run.km)")
    p.add_argument("--stm", choices=("on", "off", "both"), default="both")
    p.add_argument("--out", type=Path, default=Path("out"))
    p.add_argument("--trace", choices=TRACE_KINDS, help="emit a maneuver trace instead of running")
    p.add_argument("--dt", type=float, help="time step in s (default: run.dt_s)")
    p.add_argument("--workers", type=int, default=1, help="parallel worker processes")
    p.add_argument("--v0-kmh", type=float, help="trace start speed")
    p.add_argument("--v-end-kmh", type=float, help="trace end speed")
    return p


def _setup_logging() -> None:
    level = os.environ.get("STRESSLANE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _parse_seeds(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise ConfigError([f"run.seed: not an integer list: {text!r}"]) from None


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        overrides = {}
        if args.km is not None:
            overrides["run.km"] = args.km
        if args.dt is not None:
            overrides["run.dt_s"] = args.dt
        if args.config is not None:
            try:
                raw = tomli.loads(args.config.read_text(encoding="utf-8"))
            except OSError as exc:
                raise ConfigError([f"config: cannot read {args.config}: {exc}"]) from exc
            except tomli.TOMLDecodeError as exc:
                raise ConfigError([f"config: {exc}"]) from exc
        else:
            raw = {}
        cfg = validate_config(raw, overrides)
        seeds = _parse_seeds(args.seed) if args.seed else (cfg.seed,)
        if args.workers < 1:
            raise ConfigError(["workers: must be >= 1"])
    except ConfigError as exc:
        print("configuration error:", file=sys.stderr)
        for v in exc.violations:
            print(f"  - {v}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        args.out.mkdir(parents=True, exist_ok=True)
        probe = args.out / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        print(f"output directory not writable: {exc}", file=sys.stderr)
        return EXIT_IO

    try:
        if args.trace:
            for path in emit_trace(args.trace, cfg, args.out, args.v0_kmh, args.v_end_kmh):
                print(path)
            return EXIT_OK
        spec = RunSpec(cfg, seeds, cfg.km, args.stm, args.out)
        summaries = run(spec, args.workers)
    except ConfigError as exc:
        for v in exc.violations:
            print(f"  - {v}", file=sys.stderr)
        return EXIT_CONFIG
    except (InfeasibleManeuver, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvariantBreach as exc:
        print(f"invariant breach: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    print(RunSummary.CSV_HEADER)
    for s in summaries:
        print(s.csv_row())
    if spec.stm == "both":
        print((args.out / "comparison.txt").read_text(encoding="utf-8"), end="")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
