"""Model-based RL with decision-time planning over a learned latent model."""

from .config import TrainConfig, load_config, parse_config
from .envs import OracleLatentAdapter, PendulumSwingUp, PointMass2D, make_env
from .loop import Agent, MetricsRow, run_experiment
from .planner import MODES, Planner, PlannerConfig

__all__ = ["Agent", "MODES", "MetricsRow", "OracleLatentAdapter", "PendulumSwingUp", "Planner",
           "PlannerConfig", "PointMass2D", "TrainConfig", "load_config", "make_env", "parse_config",
           "run_experiment"]
__version__ = "0.1.0"
