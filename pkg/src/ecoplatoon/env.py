"""Episodic control environment around the traffic world.

One episode: warm up background traffic, inject the ego and its followers at
the lane tail, then control the ego's longitudinal acceleration until the
whole platoon has crossed the stop line (or the horizon truncates). The
observation stacks ego progress, follower kinematics, relative state of the
preceding vehicle, and the signal head; the reward charges platoon energy and
delay, either once at episode end or as a per-step proxy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .energy import EvParams, make_step_energy
from .traffic import (IdmParams, SignalProgram, TrafficWorld, VehicleState,
                      WorldConfig)

# Placeholder relative state when no vehicle precedes the ego within range:
# gap saturates at the sensing range, closing speed at the speed limit, and
# relative acceleration at the full actuation span.
DEFAULT_LEAD_GAP = 500.0  # m
DEFAULT_LEAD_DV = 13.88  # m/s
DEFAULT_LEAD_DA = 7.5  # m/s^2


class LifecycleError(RuntimeError):
    """Raised when step() is called on a finished or unreset episode."""


class RewardMode(Enum):
    EPISODIC = "episodic"
    DISTRIBUTED = "distributed"


class TerminationReason(Enum):
    CROSSED = "crossed"
    TRUNCATED = "truncated"


@dataclass(frozen=True)
class RewardConfig:
    """Weights of the energy/delay trade-off and the reward schedule."""

    omega_energy: float = 6.0  # per Wh of platoon battery draw
    omega_delay: float = 1.0  # per second of per-vehicle delay
    mode: RewardMode = RewardMode.EPISODIC

    def __post_init__(self) -> None:
        if self.omega_energy < 0 or self.omega_delay < 0:
            raise ValueError("reward weights must be >= 0")


@dataclass
class EpisodeRecord:
    """Outcome bookkeeping for one episode."""

    start_time: float  # s, world time at platoon injection
    platoon_ids: list[int]
    crossing_times: dict[int, float] = field(default_factory=dict)
    energies: dict[int, float] = field(default_factory=dict)  # Wh at crossing
    reason: Optional[TerminationReason] = None
    end_time: Optional[float] = None
    total_reward: float = 0.0
    preload_duration: float = 0.0  # s, warm-up draw
    applied_actions: list[float] = field(default_factory=list)
    step_log: Optional[list[tuple]] = None  # trajectory rows when recorded

    def effective_crossing(self, vehicle_id: int) -> float:
        """Crossing time, or the truncation time for vehicles still en route."""
        t = self.crossing_times.get(vehicle_id)
        if t is not None:
            return t
        if self.end_time is None:
            raise LifecycleError("episode still running")
        return self.end_time

    def delay(self, vehicle_id: int, lane_length: float, speed_limit: float) -> float:
        """Travel time beyond the free-flow time over the lane, in seconds."""
        free_flow = lane_length / speed_limit
        return self.effective_crossing(vehicle_id) - self.start_time - free_flow


class PlatoonEnv:
    """Single-agent episodic environment controlling the lead CAV.

    ``reset(seed)`` builds a fresh world, warms it up, injects the platoon,
    and returns the first observation. ``step(a)`` clips ``a`` to the
    actuation box, caps it by the ego's IDM-safe acceleration, advances one
    ``dt``, and returns ``(obs, reward, done)``.
    """

    def __init__(self, world_config: WorldConfig, idm: IdmParams,
                 signal: SignalProgram, ev: EvParams,
                 reward: RewardConfig = RewardConfig(),
                 horizon: float = 600.0,
                 record_trajectory: bool = False) -> None:
        if horizon <= 0:
            raise ValueError("horizon must be positive")
        self.world_config = world_config
        self.idm = idm
        self.signal = signal
        self.ev = ev
        self.reward_config = reward
        self.horizon = horizon
        self.record_trajectory = record_trajectory
        self.world: Optional[TrafficWorld] = None
        self.record: Optional[EpisodeRecord] = None
        self._done = True
        self._energy_fn = make_step_energy(ev)
        self._free_flow = world_config.lane_length / world_config.speed_limit
        self._obs_dim = (2 + 2 * world_config.platoon_size + 3 + 1
                         + signal.phase_slots)
        # Paired rollouts reuse the same seed back to back; caching the
        # post-warm-up world state halves the warm-up cost without changing
        # a single bit of the episode (restore() is exact, rng included).
        self._preload_cache: Optional[tuple] = None
        # Distributed-mode step reward scales: draw in Wh and ego progress in
        # meters enter unweighted, following the ablation's stepwise sum.
        self._dr_energy_scale = 1.0
        self._dr_distance_scale = 1.0

    @property
    def observation_dim(self) -> int:
        """2 ego + 2 per follower + 3 preceding-vehicle + 1 timer + one-hot."""
        return self._obs_dim

    @property
    def action_low(self) -> float:
        return self.world_config.accel_min

    @property
    def action_high(self) -> float:
        return self.world_config.accel_max

    def reset(self, seed: Optional[int] = None) -> np.ndarray:
        world = TrafficWorld(self.world_config, self.idm, self.signal, seed)
        world.energy_fn = self._energy_fn
        cache = self._preload_cache
        if cache is not None and cache[0] == seed:
            world.restore(cache[1])
            preload = cache[2]
        else:
            preload = world.preload()
            self._preload_cache = (seed, world.snapshot(), preload)
        world.inject_platoon()
        if self.record_trajectory:
            world.start_recording()
        self.world = world
        self.record = EpisodeRecord(
            start_time=world.time,
            platoon_ids=[v.id for v in world.platoon],
            preload_duration=preload,
        )
        self._done = False
        return self._observe()

    def ego_idm_bound(self) -> float:
        """Safety ceiling for the current state (also the IDM baseline action)."""
        if self.world is None:
            raise LifecycleError("call reset() first")
        return self.world.ego_idm_bound()

    def apply_action(self, action: float) -> float:
        """Actuation actually sent to the ego for a commanded ``action``.

        The command is clipped to the actuation box and then capped by the
        IDM-safe acceleration against the effective leader, so the learned
        policy can never command a less safe motion than the baseline driver.
        """
        lo, hi = self.action_low, self.action_high
        raw = float(action)
        if raw < lo:
            raw = lo
        elif raw > hi:
            raw = hi
        bound = self.ego_idm_bound()
        return bound if bound < raw else raw

    def step(self, action: float) -> tuple[np.ndarray, float, bool]:
        if self._done or self.world is None or self.record is None:
            raise LifecycleError("episode finished; call reset() first")
        world = self.world
        record = self.record
        rc = self.reward_config
        distributed = rc.mode is RewardMode.DISTRIBUTED

        applied = self.apply_action(action)
        record.applied_actions.append(applied)
        if distributed:
            pre_x = world.ego.position
            pre_energy = 0.0
            for veh in world.platoon:
                pre_energy += veh.energy_wh

        world.step(applied)

        crossing = record.crossing_times
        for veh in world.platoon:
            if veh.crossed_at is not None and veh.id not in crossing:
                crossing[veh.id] = veh.crossed_at
                record.energies[veh.id] = veh.energy_wh

        all_crossed = len(crossing) == len(record.platoon_ids)
        truncated = (not all_crossed
                     and world.time - record.start_time >= self.horizon - 1e-9)
        done = all_crossed or truncated

        if distributed:
            d_energy = -pre_energy
            for veh in world.platoon:
                d_energy += veh.energy_wh
            reward = (-self._dr_energy_scale * d_energy
                      + self._dr_distance_scale * (world.ego.position - pre_x))
        else:
            reward = 0.0

        if done:
            self._done = True
            record.end_time = world.time
            record.reason = (TerminationReason.CROSSED if all_crossed
                             else TerminationReason.TRUNCATED)
            for veh in world.platoon:
                if veh.id not in record.energies:
                    record.energies[veh.id] = veh.energy_wh
            if not distributed:
                reward = self._episodic_reward(record)
            record.step_log = world.trajectory
        record.total_reward += reward
        return self._observe(), reward, done

    def _episodic_reward(self, record: EpisodeRecord) -> float:
        """Terminal reward: weighted energy plus delay summed over the platoon."""
        rc = self.reward_config
        total = 0.0
        for vid in record.platoon_ids:
            delay = record.effective_crossing(vid) - record.start_time - self._free_flow
            total += -rc.omega_energy * record.energies[vid] - rc.omega_delay * delay
        return total

    def _observe(self) -> np.ndarray:
        world = self.world
        cfg = self.world_config
        ego = world.ego
        obs = np.empty(self._obs_dim)

        d = cfg.lane_length - ego.position
        if d < 0.0:
            d = 0.0
        elif d > cfg.lane_length:
            d = cfg.lane_length
        obs[0] = d
        obs[1] = ego.speed

        k = 2
        for veh in world.platoon[1:]:
            obs[k] = veh.position
            obs[k + 1] = veh.speed
            k += 2

        idx = world.ego_index
        lead = world.vehicles[idx - 1] if idx > 0 else None
        if lead is not None and lead.position - ego.position <= DEFAULT_LEAD_GAP:
            obs[k] = lead.position - ego.position
            obs[k + 1] = lead.speed - ego.speed
            obs[k + 2] = lead.accel - ego.accel
        else:
            obs[k] = DEFAULT_LEAD_GAP
            obs[k + 1] = DEFAULT_LEAD_DV
            obs[k + 2] = DEFAULT_LEAD_DA
        k += 3

        sig = world.signal_now()
        obs[k] = sig.remaining
        k += 1
        obs[k:] = 0.0
        obs[k + 2 * sig.phase_index + (1 if sig.is_yellow else 0)] = 1.0
        return obs
