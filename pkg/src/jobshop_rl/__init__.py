"""Job-shop scheduling with a discrete-event RL environment, order swapping and PPO."""
from .env import EnvConfig, JobShopEnv, Observation, Schedule, SimState, StepResult
from .instance import Bounds, Instance, generate_random, load, load_bundled, lower_bound, parse_standard, parse_taillard
from .osm import OsmConfig, OsmState
from .rules import Rule, brute_force_optimum, dispatch

__version__ = "0.1.0"

__all__ = [
    "Bounds", "EnvConfig", "Instance", "JobShopEnv", "Observation", "OsmConfig", "OsmState", "Rule", "Schedule",
    "SimState", "StepResult", "brute_force_optimum", "dispatch", "generate_random", "load", "load_bundled", "lower_bound",
    "parse_standard", "parse_taillard",
]
