"""Highway traffic simulator with a stress testing layer for automated driving."""
from .config import ConfigError, SimConfig, default_config, dump_config, load_config, validate_config
from .evaluation import CriticalityLabel, CriticalityThresholds, RunSummary, classify, compare_runs, ttb
from .sim import RunResult, run_simulation
from .world import RoadConfig, SimClock, StmParameters, VehicleState

__version__ = "0.1.0"
