"""Shared fixtures and scenario helpers for the test suite."""

from __future__ import annotations

import dataclasses
from pathlib import Path

import pytest
from hypothesis import settings

from ecoplatoon.ars import (ArsConfig, LinearPolicy, load_checkpoint,
                            save_checkpoint)

# Property tests share machines with training runs; wall-clock deadlines
# would only add flakiness.
settings.register_profile("no_deadline", deadline=None)
settings.load_profile("no_deadline")
from ecoplatoon.config import EvalConfig, ScenarioConfig
from ecoplatoon.energy import EvParams
from ecoplatoon.env import PlatoonEnv, RewardConfig, RewardMode
from ecoplatoon.traffic import IdmParams, SignalProgram, WorldConfig

CACHE_DIR = Path(__file__).resolve().parent / "_cache"

# A single-phase program that serves the approach for its whole (very long)
# green: effectively "always green" within any test horizon.
ALWAYS_GREEN = SignalProgram(green_durations=(10_000.0,), yellow_duration=0.0)


@pytest.fixture
def default_idm() -> IdmParams:
    return IdmParams()


@pytest.fixture
def default_signal() -> SignalProgram:
    return SignalProgram()


@pytest.fixture
def default_ev() -> EvParams:
    return EvParams()


def lossless_ev(**overrides) -> EvParams:
    """EV parameters with no drag, rolling, or conversion losses."""
    base = dict(frontal_area=0.0, drag_coeff=0.0, roll_coeff=0.0,
                propulsion_eff=1.0, recuperation_eff=1.0, aux_power=0.0)
    base.update(overrides)
    return EvParams(**base)


def make_env(world: WorldConfig = WorldConfig(),
             idm: IdmParams = IdmParams(),
             signal: SignalProgram = SignalProgram(),
             ev: EvParams = EvParams(),
             reward: RewardConfig = RewardConfig(),
             horizon: float = 600.0,
             record_trajectory: bool = False) -> PlatoonEnv:
    return PlatoonEnv(world, idm, signal, ev, reward, horizon=horizon,
                      record_trajectory=record_trajectory)


def small_scenario(**ars_overrides) -> ScenarioConfig:
    """A cheap scenario for CLI and pipeline tests: short lane, tiny search.

    One follower and a 150 m lane keep episodes to a few dozen steps, so
    whole train/eval pipelines finish in well under a second.
    """
    ars = ArsConfig(iterations=2, directions=4, top_directions=2,
                    eval_interval=0, horizon=120.0, **ars_overrides)
    return ScenarioConfig(
        world=WorldConfig(lane_length=150.0, platoon_size=1,
                          preload_low=20.0, preload_high=30.0),
        ars=ars,
        eval=EvalConfig(episodes=2, seed=1000, agents=1),
    )


def replace_section(scenario: ScenarioConfig, **sections) -> ScenarioConfig:
    return dataclasses.replace(scenario, **sections)


def training_scenario(base_seed: int = 0, iterations: int = 500,
                      mode: RewardMode = RewardMode.EPISODIC,
                      omega_energy: float = 6.0, omega_delay: float = 1.0,
                      platoon_size: int = 3) -> ScenarioConfig:
    """Default full-size scenario with only the knobs the experiments vary."""
    base = ScenarioConfig()
    return dataclasses.replace(
        base,
        world=dataclasses.replace(base.world, platoon_size=platoon_size),
        reward=RewardConfig(omega_energy, omega_delay, mode),
        ars=dataclasses.replace(base.ars, base_seed=base_seed,
                                iterations=iterations, eval_interval=0),
    )


def trained_policy(scenario: ScenarioConfig) -> LinearPolicy:
    """Train the scenario's policy, cached on disk under tests/_cache.

    Checkpoints are keyed by the full configuration digest, so any change to
    the scenario (seed and budget included) retrains rather than reusing
    stale weights. The training curve is stored next to the checkpoint so
    convergence checks can read it back without retraining.
    """
    from ecoplatoon.ars import train
    from ecoplatoon.config import EnvBuilder
    from ecoplatoon.recording import write_training_curve

    CACHE_DIR.mkdir(exist_ok=True)
    path = CACHE_DIR / f"agent_{scenario.digest()[:16]}.bin"
    curve = path.with_suffix(".curve.csv")
    if path.exists() and curve.exists():
        return load_checkpoint(path)[0]
    policy, history = train(scenario.ars, EnvBuilder(scenario))
    save_checkpoint(path, policy, sidecar=scenario.to_dict())
    write_training_curve(curve, history)
    return policy


def smoothed_final(scenario: ScenarioConfig) -> float:
    """Final smoothed training reward of the (cached) run for the scenario."""
    import csv

    trained_policy(scenario)
    curve = CACHE_DIR / f"agent_{scenario.digest()[:16]}.curve.csv"
    with curve.open() as fh:
        last = list(csv.DictReader(fh))[-1]
    return float(last["smoothed_reward"])
