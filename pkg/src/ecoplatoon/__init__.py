"""Eco-driving control of a mixed CAV/HDV platoon at a signalized intersection.

A lead connected EV, trailed by human-driven IDM vehicles, learns a linear
longitudinal policy with augmented random search to cross a fixed-timing
signal with minimal battery draw and delay.
"""

from .ars import ArsConfig, LinearPolicy, RunningStats, load_checkpoint, \
    save_checkpoint, train
from .config import ConfigError, EnvBuilder, ScenarioConfig, load_scenario
from .energy import EvParams, step_energy
from .env import EpisodeRecord, PlatoonEnv, RewardConfig, RewardMode
from .evaluation import (GlosaController, Metrics, PolicyController,
                         idm_controller, run_controller)
from .traffic import (CollisionError, IdmParams, SignalProgram, TrafficWorld,
                      VehicleState, WorldConfig, idm_acceleration,
                      signal_query)

__version__ = "0.1.0"

__all__ = [
    "ArsConfig", "CollisionError", "ConfigError", "EnvBuilder",
    "EpisodeRecord", "EvParams", "GlosaController", "IdmParams",
    "LinearPolicy", "Metrics", "PlatoonEnv", "PolicyController",
    "RewardConfig", "RewardMode", "RunningStats", "ScenarioConfig",
    "SignalProgram", "TrafficWorld", "VehicleState", "WorldConfig",
    "idm_acceleration", "idm_controller", "load_checkpoint", "load_scenario",
    "run_controller", "save_checkpoint", "signal_query", "step_energy",
    "train",
]
