"""Controllers, evaluation metrics, and the comparative experiment drivers.

Every controller is a callable (env, obs) -> commanded acceleration; the
environment clips commands and enforces the IDM safety ceiling, so baselines
and learned policies share one actuation path. Comparisons reuse the same
evaluation seeds across methods, so each method sees the same traffic draws.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .ars import LinearPolicy, _effective_weights, train
from .config import EnvBuilder, ScenarioConfig
from .env import EpisodeRecord, PlatoonEnv, RewardMode
from .traffic import SignalProgram, SignalState, VehicleClass

STOP_SPEED = 0.1  # m/s, below this a vehicle counts as standing
STOP_DEBOUNCE = 2  # consecutive standing steps that make one full stop

# omega_energy/omega_delay ratios swept in the weight study.
DEFAULT_WEIGHT_RATIOS = ("1/1", "1/2", "1/3", "1/4", "1/5", "1/6",
                         "2/1", "3/1", "4/1", "5/1", "6/1")

Controller = Callable[[PlatoonEnv, np.ndarray], float]


# ----------------------------------------------------------------------
# controllers

class PolicyController:
    """Greedy linear policy with frozen whitening statistics."""

    def __init__(self, policy: LinearPolicy, low: float, high: float) -> None:
        self.low = low
        self.high = high
        self._w_eff, self._bias = _effective_weights(
            policy.theta, policy.stats.mean, policy.stats.var)

    def __call__(self, env: PlatoonEnv, obs: np.ndarray) -> float:
        a = float(self._w_eff @ obs) - self._bias
        if a < self.low:
            return self.low
        if a > self.high:
            return self.high
        return a


def idm_controller(env: PlatoonEnv, obs: np.ndarray) -> float:
    """Baseline: the ego drives exactly like another IDM human."""
    return env.ego_idm_bound()


def glosa_advice(distance: float, speed: float, sig: SignalState,
                 next_green_in: float, v_max: float,
                 v_floor: float = 2.0) -> float:
    """Green-wave speed advice for a vehicle ``distance`` m from the line.

    If the current green is reachable at the current speed, hold the limit;
    otherwise pace the arrival to the next green window start, clipped to
    [v_floor, v_max].
    """
    if distance <= 0.0:
        return v_max
    if sig.approach_proceed and speed > 0.0 and distance / speed <= sig.remaining:
        return v_max
    if next_green_in <= 0.0:
        return v_max
    target = distance / next_green_in
    if target < v_floor:
        return v_floor
    if target > v_max:
        return v_max
    return target


class GlosaController:
    """Ego-efficient green-wave advisory driver for the lead vehicle."""

    def __init__(self, v_floor: float = 2.0) -> None:
        self.v_floor = v_floor

    def __call__(self, env: PlatoonEnv, obs: np.ndarray) -> float:
        world = env.world
        ego = world.ego
        cfg = env.world_config
        sig = env.signal.query(world.time)
        distance = cfg.lane_length - ego.position
        target = glosa_advice(distance, ego.speed, sig,
                              env.signal.approach_green_start_in(world.time),
                              cfg.speed_limit, self.v_floor)
        a = (target - ego.speed) / cfg.dt
        if a < cfg.accel_min:
            return cfg.accel_min
        if a > cfg.accel_max:
            return cfg.accel_max
        return a


def controller_from_policy(policy: LinearPolicy, scenario: ScenarioConfig
                           ) -> PolicyController:
    return PolicyController(policy, scenario.world.accel_min,
                            scenario.world.accel_max)


# ----------------------------------------------------------------------
# metrics

def count_full_stops(speeds: Sequence[float], threshold: float = STOP_SPEED,
                     debounce: int = STOP_DEBOUNCE) -> int:
    """Number of debounced standstills in a speed trace.

    A stop needs ``debounce`` consecutive samples below ``threshold``;
    staying below it longer still counts once, and a new stop requires the
    speed to recover first.
    """
    stops = 0
    run = 0
    counted = False
    for v in speeds:
        if v < threshold:
            run += 1
            if run >= debounce and not counted:
                stops += 1
                counted = True
        else:
            run = 0
            counted = False
    return stops


@dataclass(frozen=True)
class Metrics:
    """Platoon-level outcome aggregates over a batch of episodes."""

    episodes: int
    delay_per_vehicle_s: float  # mean over episodes of the platoon-mean delay
    energy_per_vehicle_wh: float
    platoon_energy_wh: float  # mean over episodes of the platoon total
    full_stops_per_episode: float  # platoon-wide stop count, mean
    episode_delays_s: tuple[float, ...]
    episode_energies_wh: tuple[float, ...]
    episode_stops: tuple[int, ...]


def _episode_stops(record: EpisodeRecord) -> int:
    """Full stops accumulated by platoon vehicles up to their crossing."""
    if record.step_log is None:
        raise ValueError("episode was not recorded; cannot count stops")
    total = 0
    for vid in record.platoon_ids:
        limit = record.effective_crossing(vid)
        speeds = [row[4] for row in record.step_log
                  if row[1] == vid and row[0] <= limit]
        total += count_full_stops(speeds)
    return total


def metrics_from_records(records: Sequence[EpisodeRecord], lane_length: float,
                         speed_limit: float) -> Metrics:
    """Aggregate finished episodes (recorded with trajectories) into Metrics."""
    delays = []
    energies = []
    stops = []
    for rec in records:
        size = len(rec.platoon_ids)
        delays.append(sum(rec.delay(vid, lane_length, speed_limit)
                          for vid in rec.platoon_ids) / size)
        energies.append(sum(rec.energies[vid] for vid in rec.platoon_ids))
        stops.append(_episode_stops(rec))
    n = len(records)
    platoon = len(records[0].platoon_ids)
    return Metrics(
        episodes=n,
        delay_per_vehicle_s=sum(delays) / n,
        energy_per_vehicle_wh=sum(energies) / (n * platoon),
        platoon_energy_wh=sum(energies) / n,
        full_stops_per_episode=sum(stops) / n,
        episode_delays_s=tuple(delays),
        episode_energies_wh=tuple(energies),
        episode_stops=tuple(stops),
    )


def metrics_from_trajectory(rows: Sequence[tuple], lane_length: float,
                            speed_limit: float, dt: float) -> Metrics:
    """Recompute Metrics from trajectory rows alone (one episode's rows).

    Rows follow the trajectory schema (time, id, class, position, speed,
    accel, energy, phase, remaining). The episode start is one step before
    the first logged time.
    """
    platoon_rows: dict[int, list[tuple]] = {}
    for row in rows:
        if row[2] in (VehicleClass.EGO_CAV.value, VehicleClass.PLATOON_HDV.value):
            platoon_rows.setdefault(row[1], []).append(row)
    if not platoon_rows:
        raise ValueError("trajectory contains no platoon vehicles")
    start_time = min(r[0] for rs in platoon_rows.values() for r in rs) - dt
    end_time = max(r[0] for rs in platoon_rows.values() for r in rs)
    free_flow = lane_length / speed_limit

    delays = []
    energies = []
    stops_total = 0
    for vid, vrows in platoon_rows.items():
        vrows.sort(key=lambda r: r[0])
        crossing = None
        energy = vrows[-1][6]
        for row in vrows:
            if row[3] >= lane_length:
                crossing = row[0]
                energy = row[6]
                break
        if crossing is None:
            crossing = end_time
        delays.append(crossing - start_time - free_flow)
        energies.append(energy)
        stops_total += count_full_stops(
            [r[4] for r in vrows if r[0] <= crossing])
    size = len(platoon_rows)
    delay = sum(delays) / size
    energy = sum(energies)
    return Metrics(
        episodes=1,
        delay_per_vehicle_s=delay,
        energy_per_vehicle_wh=energy / size,
        platoon_energy_wh=energy,
        full_stops_per_episode=float(stops_total),
        episode_delays_s=(delay,),
        episode_energies_wh=(energy,),
        episode_stops=(stops_total,),
    )


# ----------------------------------------------------------------------
# rollout driver

def run_controller(env: PlatoonEnv, controller: Controller,
                   seeds: Sequence[int]) -> tuple[Metrics, list[EpisodeRecord]]:
    """Roll the controller for one episode per seed and aggregate metrics.

    The environment must record trajectories (stop counts need speed traces).
    """
    records = []
    for seed in seeds:
        obs = env.reset(int(seed))
        done = False
        while not done:
            obs, _, done = env.step(controller(env, obs))
        records.append(env.record)
    metrics = metrics_from_records(records, env.world_config.lane_length,
                                   env.world_config.speed_limit)
    return metrics, records


def evaluation_seeds(scenario: ScenarioConfig) -> list[int]:
    """Shared evaluation seed list; methods under comparison all reuse it."""
    return [scenario.eval.seed + j for j in range(scenario.eval.episodes)]


def train_agent(scenario: ScenarioConfig, base_seed: Optional[int] = None,
                jobs: int = 1) -> LinearPolicy:
    """Train one policy on the scenario (optionally overriding the seed)."""
    ars_config = scenario.ars
    if base_seed is not None:
        ars_config = dataclasses.replace(ars_config, base_seed=base_seed)
    policy, _ = train(ars_config, EnvBuilder(scenario), jobs=jobs)
    return policy


# ----------------------------------------------------------------------
# experiment drivers

def _eval_env(scenario: ScenarioConfig) -> PlatoonEnv:
    return EnvBuilder(scenario, record_trajectory=True,
                      reward_mode=RewardMode.EPISODIC)()


def ablation_er_vs_dr(scenario: ScenarioConfig, jobs: int = 1,
                      progress: Optional[Callable[[str], None]] = None) -> dict:
    """Episodic vs distributed reward, multiple agents each, plus IDM.

    Trains ``eval.agents`` independent agents per reward mode, evaluates every
    agent on the shared seed list, and reports per-(agent, episode) groups
    with their mean/variance summary.
    """
    seeds = evaluation_seeds(scenario)
    env = _eval_env(scenario)
    lane = scenario.world.lane_length
    vmax = scenario.world.speed_limit

    groups: dict[str, list[dict]] = {}
    rows = []
    for mode in (RewardMode.EPISODIC, RewardMode.DISTRIBUTED):
        label = "ER" if mode is RewardMode.EPISODIC else "DR"
        mode_scenario = dataclasses.replace(
            scenario, reward=dataclasses.replace(scenario.reward, mode=mode))
        mode_groups = []
        for agent_idx in range(scenario.eval.agents):
            if progress is not None:
                progress(f"training {label} agent {agent_idx + 1}/{scenario.eval.agents}")
            policy = train_agent(mode_scenario,
                                 scenario.ars.base_seed + agent_idx, jobs)
            controller = controller_from_policy(policy, scenario)
            _, records = run_controller(env, controller, seeds)
            for seed, rec in zip(seeds, records):
                size = len(rec.platoon_ids)
                mode_groups.append({
                    "agent": agent_idx,
                    "seed": seed,
                    "energy_wh": sum(rec.energies[v] for v in rec.platoon_ids),
                    "delay_s": sum(rec.delay(v, lane, vmax)
                                   for v in rec.platoon_ids) / size,
                })
        groups[label] = mode_groups
        rows.append(_summary_row(label, mode_groups))

    if progress is not None:
        progress("evaluating IDM baseline")
    _, idm_records = run_controller(env, idm_controller, seeds)
    idm_groups = [{
        "agent": -1,
        "seed": seed,
        "energy_wh": sum(rec.energies[v] for v in rec.platoon_ids),
        "delay_s": sum(rec.delay(v, lane, vmax)
                       for v in rec.platoon_ids) / len(rec.platoon_ids),
    } for seed, rec in zip(seeds, idm_records)]
    groups["IDM"] = idm_groups
    rows.append(_summary_row("IDM", idm_groups))
    return {"rows": rows, "groups": groups}


def _summary_row(method: str, groups: list[dict]) -> dict:
    energies = np.array([g["energy_wh"] for g in groups])
    delays = np.array([g["delay_s"] for g in groups])
    return {
        "method": method,
        "groups": len(groups),
        "energy_mean_wh": float(energies.mean()),
        "energy_var_wh2": float(energies.var()),
        "delay_mean_s": float(delays.mean()),
        "delay_var_s2": float(delays.var()),
    }


def parse_ratio(ratio: str) -> tuple[float, float]:
    """"6/1" -> (6.0, 1.0) as (omega_energy, omega_delay)."""
    parts = ratio.split("/")
    if len(parts) != 2:
        raise ValueError(f"bad weight ratio {ratio!r}; expected like '6/1'")
    try:
        num, den = float(parts[0]), float(parts[1])
    except ValueError as exc:
        raise ValueError(f"bad weight ratio {ratio!r}; expected like '6/1'") from exc
    if num <= 0 or den <= 0:
        raise ValueError(f"bad weight ratio {ratio!r}; parts must be positive")
    return num, den


def sweep_weights(scenario: ScenarioConfig,
                  ratios: Sequence[str] = DEFAULT_WEIGHT_RATIOS,
                  jobs: int = 1,
                  progress: Optional[Callable[[str], None]] = None) -> list[dict]:
    """Train/evaluate one agent per reward-weight ratio; report vs IDM."""
    seeds = evaluation_seeds(scenario)
    env = _eval_env(scenario)
    idm_metrics, _ = run_controller(env, idm_controller, seeds)
    rows = []
    for ratio in ratios:
        omega_e, omega_d = parse_ratio(ratio)
        if progress is not None:
            progress(f"training weight ratio {ratio}")
        ratio_scenario = dataclasses.replace(
            scenario,
            reward=dataclasses.replace(scenario.reward, omega_energy=omega_e,
                                       omega_delay=omega_d))
        policy = train_agent(ratio_scenario, jobs=jobs)
        metrics, _ = run_controller(env, controller_from_policy(policy, scenario),
                                    seeds)
        rows.append({
            "ratio": ratio,
            "omega_energy": omega_e,
            "omega_delay": omega_d,
            "energy_per_vehicle_wh": metrics.energy_per_vehicle_wh,
            "delay_per_vehicle_s": metrics.delay_per_vehicle_s,
            "stops_per_episode": metrics.full_stops_per_episode,
            "energy_improvement_pct": _improvement(
                idm_metrics.energy_per_vehicle_wh, metrics.energy_per_vehicle_wh),
            "delay_improvement_pct": _improvement(
                idm_metrics.delay_per_vehicle_s, metrics.delay_per_vehicle_s),
        })
    return rows


def _improvement(baseline: float, value: float) -> float:
    if baseline == 0.0:
        return math.nan
    return 100.0 * (baseline - value) / baseline


def sweep_platoon_size(scenario: ScenarioConfig, sizes: Sequence[int],
                       jobs: int = 1,
                       progress: Optional[Callable[[str], None]] = None) -> dict:
    """Learned policy vs IDM vs GLOSA across platoon sizes.

    Returns summary rows plus per-(size, method) trajectory rows of the first
    evaluation episode for the time-space diagrams.
    """
    rows = []
    trajectories: dict[tuple[int, str], list[tuple]] = {}
    for size in sizes:
        size_scenario = dataclasses.replace(
            scenario, world=dataclasses.replace(scenario.world,
                                                platoon_size=int(size)))
        seeds = evaluation_seeds(size_scenario)
        env = _eval_env(size_scenario)
        if progress is not None:
            progress(f"training agent for platoon size {size}")
        policy = train_agent(size_scenario, jobs=jobs)
        methods: list[tuple[str, Controller]] = [
            ("ars", controller_from_policy(policy, size_scenario)),
            ("idm", idm_controller),
            ("glosa", GlosaController()),
        ]
        for name, controller in methods:
            metrics, records = run_controller(env, controller, seeds)
            trajectories[(size, name)] = list(records[0].step_log or [])
            rows.append({
                "platoon_size": size,
                "method": name,
                "energy_per_vehicle_wh": metrics.energy_per_vehicle_wh,
                "platoon_energy_wh": metrics.platoon_energy_wh,
                "delay_per_vehicle_s": metrics.delay_per_vehicle_s,
                "stops_per_episode": metrics.full_stops_per_episode,
            })
    return {"rows": rows, "trajectories": trajectories}
