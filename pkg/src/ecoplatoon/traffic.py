"""Single-lane microscopic traffic world.

Positions are front-bumper distances in meters from the lane origin; the stop
line sits at ``lane_length``. Human-driven vehicles follow the intelligent
driver model, a fixed-timing signal gates the stop line, and background
traffic enters at the origin as a Poisson stream. One step advances every
vehicle by ``dt`` using semi-implicit Euler (speed first, then position).
"""

from __future__ import annotations

import copy
import functools
import math
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple, Optional

import numpy as np


class CollisionError(RuntimeError):
    """Raised when a bumper-to-bumper gap closes to zero or below."""


class VehicleClass(Enum):
    EGO_CAV = "ego_cav"
    PLATOON_HDV = "platoon_hdv"
    BACKGROUND_HDV = "background_hdv"
    VIRTUAL = "virtual"


@dataclass(slots=True, eq=False)
class VehicleState:
    """Kinematic record for one vehicle (identity semantics, mutable)."""

    id: int
    vclass: VehicleClass
    position: float  # m, front bumper
    speed: float  # m/s, >= 0
    accel: float = 0.0  # m/s^2, last applied
    length: float = 5.0  # m
    crossed_at: Optional[float] = None  # s, first time position >= lane_length
    energy_wh: float = 0.0  # Wh, cumulative battery draw (EV accounting)


@dataclass(frozen=True)
class IdmParams:
    """Intelligent driver model parameters (Treiber form)."""

    max_accel: float = 3.0  # a0, m/s^2
    desired_speed: float = 13.88  # v0, m/s
    min_gap: float = 2.0  # s0, m
    time_headway: float = 1.0  # T, s
    comfort_decel: float = 2.8  # b, m/s^2, stored positive
    delta: float = 4.0  # speed-term exponent; 1 gives the linear variant

    def __post_init__(self) -> None:
        if self.max_accel <= 0:
            raise ValueError("idm.max_accel must be positive")
        if self.desired_speed <= 0:
            raise ValueError("idm.desired_speed must be positive")
        if self.min_gap <= 0:
            raise ValueError("idm.min_gap must be positive")
        if self.time_headway < 0:
            raise ValueError("idm.time_headway must be >= 0")
        if self.comfort_decel <= 0:
            raise ValueError("idm.comfort_decel must be positive (magnitude)")
        if self.delta <= 0:
            raise ValueError("idm.delta must be positive")


def _idm_raw(v: float, gap: float, dv: float, a0: float, inv_v0: float,
             delta: float, s0: float, headway: float, inv_2sab: float) -> float:
    """Unclamped IDM acceleration against a leader at bumper gap ``gap`` > 0."""
    s_star = s0 + headway * v + v * dv * inv_2sab
    if delta == 4.0:
        r = v * inv_v0
        r2 = r * r
        speed_term = r2 * r2
    else:
        speed_term = (v * inv_v0) ** delta
    ratio = s_star / gap
    return a0 * (1.0 - speed_term - ratio * ratio)


def _idm_free(v: float, a0: float, inv_v0: float, delta: float) -> float:
    """Unclamped IDM acceleration with no interaction term."""
    if delta == 4.0:
        r = v * inv_v0
        r2 = r * r
        speed_term = r2 * r2
    else:
        speed_term = (v * inv_v0) ** delta
    return a0 * (1.0 - speed_term)


def idm_acceleration(follower: VehicleState, leader: Optional[VehicleState],
                     params: IdmParams) -> float:
    """IDM acceleration of ``follower`` behind ``leader`` (None for free road).

    Returns the raw model output; callers clamp to their actuation box.
    Raises CollisionError when the bumper gap is not positive.
    """
    inv_v0 = 1.0 / params.desired_speed
    if leader is None:
        return _idm_free(follower.speed, params.max_accel, inv_v0, params.delta)
    gap = leader.position - leader.length - follower.position
    if gap <= 0.0:
        raise CollisionError(
            f"vehicle {follower.id} has non-positive gap {gap:.3f} m to leader {leader.id}"
        )
    inv_2sab = 1.0 / (2.0 * math.sqrt(params.max_accel * params.comfort_decel))
    return _idm_raw(follower.speed, gap, follower.speed - leader.speed,
                    params.max_accel, inv_v0, params.delta,
                    params.min_gap, params.time_headway, inv_2sab)


class SignalState(NamedTuple):
    phase_index: int
    is_yellow: bool
    remaining: float  # s left in the current green or yellow interval
    approach_proceed: bool  # True only during green of the phase serving the approach


@dataclass(frozen=True)
class SignalProgram:
    """Fixed-timing program: each phase is a green interval plus a yellow tail.

    The cycle is green(0), yellow(0), green(1), yellow(1), ... and repeats.
    ``approach_phase`` is the phase whose green serves the modeled approach.
    """

    green_durations: tuple[float, ...] = (30.0, 30.0, 30.0, 30.0)
    yellow_duration: float = 3.0  # s, appended to every phase
    offset: float = 0.0  # s, shifts the cycle origin
    approach_phase: int = 0

    def __post_init__(self) -> None:
        if not self.green_durations:
            raise ValueError("signal.green_durations must be non-empty")
        if any(g <= 0 for g in self.green_durations):
            raise ValueError("signal.green_durations must be positive")
        if self.yellow_duration < 0:
            raise ValueError("signal.yellow_duration must be >= 0")
        if not 0 <= self.approach_phase < len(self.green_durations):
            raise ValueError("signal.approach_phase out of range")

    @property
    def num_phases(self) -> int:
        return len(self.green_durations)

    @functools.cached_property
    def cycle_length(self) -> float:
        return sum(self.green_durations) + self.num_phases * self.yellow_duration

    @property
    def phase_slots(self) -> int:
        """One-hot width: a green and a yellow slot per phase."""
        return 2 * self.num_phases

    def query(self, t: float) -> SignalState:
        cycle = self.cycle_length
        tau = math.fmod(t - self.offset, cycle)
        if tau < 0.0:
            tau += cycle
        for i, green in enumerate(self.green_durations):
            if tau < green:
                proceed = i == self.approach_phase
                return SignalState(i, False, green - tau, proceed)
            tau -= green
            if tau < self.yellow_duration:
                return SignalState(i, True, self.yellow_duration - tau, False)
            tau -= self.yellow_duration
        # Float roundoff can leave tau a hair past the last yellow; wrap to phase 0.
        proceed = self.approach_phase == 0
        return SignalState(0, False, self.green_durations[0], proceed)

    def approach_green_start_in(self, t: float) -> float:
        """Seconds until the next start of the approach green (0 if starting now).

        When the approach green is already running, returns the time to the
        start of the next cycle's window, not 0.
        """
        cycle = self.cycle_length
        tau = math.fmod(t - self.offset, cycle)
        if tau < 0.0:
            tau += cycle
        start = 0.0
        for i in range(self.approach_phase):
            start += self.green_durations[i] + self.yellow_duration
        delta = math.fmod(start - tau, cycle)
        if delta < 0.0:
            delta += cycle
        return delta


def signal_query(program: SignalProgram, t: float) -> SignalState:
    """Signal head state at absolute time ``t`` (periodic in the cycle length)."""
    return program.query(t)


@dataclass(frozen=True)
class WorldConfig:
    """Geometry, actuation box, and traffic demand for one approach lane."""

    lane_length: float = 500.0  # m, origin to stop line
    speed_limit: float = 13.88  # m/s
    accel_min: float = -4.5  # m/s^2
    accel_max: float = 3.0  # m/s^2
    hourly_volume: float = 400.0  # veh/h Poisson arrivals at the origin
    preload_low: float = 180.0  # s, warm-up duration draw, lower bound
    preload_high: float = 220.0  # s, upper bound
    platoon_size: int = 3  # n human-driven followers behind the ego
    vehicle_length: float = 5.0  # m
    dt: float = 1.0  # s
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.lane_length <= 0:
            raise ValueError("world.lane_length must be positive")
        if self.speed_limit <= 0:
            raise ValueError("world.speed_limit must be positive")
        if self.accel_min >= 0 or self.accel_max <= 0:
            raise ValueError("world accel box must satisfy accel_min < 0 < accel_max")
        if self.hourly_volume < 0:
            raise ValueError("world.hourly_volume must be >= 0")
        if self.preload_low < 0 or self.preload_high < self.preload_low:
            raise ValueError("world preload range must satisfy 0 <= low <= high")
        if self.platoon_size < 0:
            raise ValueError("world.platoon_size must be >= 0")
        if self.vehicle_length <= 0:
            raise ValueError("world.vehicle_length must be positive")
        if self.dt <= 0:
            raise ValueError("world.dt must be positive")


class TrafficWorld:
    """Mutable simulation state for one approach lane.

    Vehicles are held sorted front to back. Accelerations for a step are all
    computed from the pre-step snapshot, so update order inside a step does
    not leak into the dynamics.
    """

    def __init__(self, config: WorldConfig, idm: IdmParams, signal: SignalProgram,
                 seed: Optional[int] = None) -> None:
        self.config = config
        self.idm = idm
        self.signal = signal
        self.time = 0.0
        self.vehicles: list[VehicleState] = []
        self.platoon: list[VehicleState] = []
        self.ego: Optional[VehicleState] = None
        self.ego_index: Optional[int] = None
        self.rng = np.random.default_rng(config.rng_seed if seed is None else seed)
        self.spawned = 0
        self.trajectory: Optional[list[tuple]] = None
        self.energy_fn = None  # set by the owner; (v_prev, v_new, dt) -> Wh
        self._next_id = 0
        self._pending = 0
        self._sig_time = math.nan
        self._sig_state: Optional[SignalState] = None
        if config.hourly_volume > 0:
            self._mean_headway = 3600.0 / config.hourly_volume
            self._next_arrival = float(self.rng.exponential(self._mean_headway))
        else:
            self._mean_headway = math.inf
            self._next_arrival = math.inf
        # Derived IDM constants for the hot loop.
        p = idm
        self._a0 = p.max_accel
        self._inv_v0 = 1.0 / p.desired_speed
        self._delta = p.delta
        self._s0 = p.min_gap
        self._headway = p.time_headway
        self._inv_2sab = 1.0 / (2.0 * math.sqrt(p.max_accel * p.comfort_decel))

    # ------------------------------------------------------------------
    # construction helpers

    def _new_id(self) -> int:
        vid = self._next_id
        self._next_id += 1
        return vid

    def start_recording(self) -> None:
        """Begin appending per-step trajectory rows (post-step state)."""
        self.trajectory = []

    def inject_platoon(self) -> list[VehicleState]:
        """Insert the ego and its human-driven followers at the lane tail.

        Spacing is the IDM equilibrium gap at the speed limit; everyone starts
        at the speed limit. The ego front bumper goes at the origin, or one
        gap behind the rearmost vehicle if the origin is occupied.
        """
        cfg = self.config
        gap = self.idm.min_gap + self.idm.time_headway * cfg.speed_limit
        spacing = gap + cfg.vehicle_length
        x0 = 0.0
        if self.vehicles:
            rear = min(v.position - v.length for v in self.vehicles)
            x0 = min(0.0, rear - gap)
        ego = VehicleState(self._new_id(), VehicleClass.EGO_CAV, x0,
                           cfg.speed_limit, 0.0, cfg.vehicle_length)
        platoon = [ego]
        for i in range(1, cfg.platoon_size + 1):
            platoon.append(VehicleState(self._new_id(), VehicleClass.PLATOON_HDV,
                                        x0 - i * spacing, cfg.speed_limit, 0.0,
                                        cfg.vehicle_length))
        self.ego_index = len(self.vehicles)
        self.vehicles.extend(platoon)
        self.platoon = platoon
        self.ego = ego
        return platoon

    def preload(self) -> float:
        """Warm up background traffic for a uniform random duration.

        Returns the drawn duration in seconds; the world runs the nearest
        whole number of steps. The draw happens even when the range is empty
        so downstream streams stay aligned.
        """
        cfg = self.config
        duration = float(self.rng.uniform(cfg.preload_low, cfg.preload_high))
        for _ in range(int(round(duration / cfg.dt))):
            self.step(None)
        return duration

    def snapshot(self) -> tuple:
        """Deterministic copy of the full mutable state (see ``restore``)."""
        return (
            self.time,
            [(v.id, v.vclass, v.position, v.speed, v.accel, v.length,
              v.crossed_at, v.energy_wh) for v in self.vehicles],
            copy.deepcopy(self.rng.bit_generator.state),
            self._next_id,
            self._pending,
            self._next_arrival,
            self.spawned,
        )

    def restore(self, snap: tuple) -> None:
        """Reset to a snapshot taken before the platoon was injected.

        Restored worlds continue bit-for-bit identically to the original,
        including future random draws.
        """
        (self.time, rows, rng_state, self._next_id, self._pending,
         self._next_arrival, self.spawned) = (
            snap[0], snap[1], copy.deepcopy(snap[2]), snap[3], snap[4],
            snap[5], snap[6])
        self.vehicles = [VehicleState(*row) for row in rows]
        self.platoon = []
        self.ego = None
        self.ego_index = None
        self.rng.bit_generator.state = rng_state
        self.trajectory = None

    # ------------------------------------------------------------------
    # per-step logic

    def _spawn_background(self) -> None:
        """Admit due Poisson arrivals at the origin when the entry gap is clear.

        Arrivals that cannot enter queue up and are injected one per step as
        soon as the rearmost vehicle has cleared the entry gap.
        """
        t = self.time
        while self._next_arrival <= t:
            self._pending += 1
            self._next_arrival += float(self.rng.exponential(self._mean_headway))
        if self._pending == 0:
            return
        cfg = self.config
        entry_gap = self.idm.min_gap + self.idm.time_headway * cfg.speed_limit
        if self.vehicles:
            # The list is front to back, so the last vehicle is rearmost.
            last = self.vehicles[-1]
            if last.position - last.length < entry_gap:
                return
        veh = VehicleState(self._new_id(), VehicleClass.BACKGROUND_HDV, 0.0,
                           cfg.speed_limit, 0.0, cfg.vehicle_length)
        self.vehicles.append(veh)
        self.spawned += 1
        self._pending -= 1

    def signal_now(self) -> SignalState:
        """Signal state at the current world time (memoized per time value)."""
        if self.time != self._sig_time:
            self._sig_state = self.signal.query(self.time)
            self._sig_time = self.time
        return self._sig_state

    def _may_proceed(self, position: float, speed: float, sig: SignalState) -> bool:
        """Signal permission for a vehicle at ``position`` approaching the line.

        Green for the approach always permits. Yellow permits only when the
        vehicle can reach the stop line before the yellow expires at its
        current speed. Red never permits.
        """
        if sig.approach_proceed:
            return True
        if sig.is_yellow and sig.phase_index == self.signal.approach_phase:
            if speed <= 0.0:
                return False
            return (self.config.lane_length - position) / speed <= sig.remaining
        return False

    def effective_leader(self, vehicle: VehicleState) -> Optional[VehicleState]:
        """Leader that constrains ``vehicle`` this step.

        The real predecessor when one binds; a virtual stationary zero-length
        vehicle at the stop line when the signal forbids proceeding and no
        real predecessor sits at or before the line. Vehicles past the line
        are never signal-constrained.
        """
        idx = self.vehicles.index(vehicle)
        prev = self.vehicles[idx - 1] if idx > 0 else None
        line = self.config.lane_length
        if vehicle.position >= line:
            return prev
        sig = self.signal_now()
        if self._may_proceed(vehicle.position, vehicle.speed, sig):
            return prev
        if prev is not None and prev.position - prev.length <= line:
            return prev
        return VehicleState(-1, VehicleClass.VIRTUAL, line, 0.0, 0.0, 0.0)

    def ego_idm_bound(self) -> float:
        """Clamped IDM acceleration of the ego against its effective leader.

        This is both the safety ceiling applied to commanded actions and the
        action of the plain IDM baseline controller.
        """
        if self.ego is None:
            raise RuntimeError("no ego vehicle; inject_platoon first")
        sig = self.signal_now()
        a = self._accel_for(self.ego_index, self.ego, sig)
        cfg = self.config
        if a < cfg.accel_min:
            return cfg.accel_min
        if a > cfg.accel_max:
            return cfg.accel_max
        return a

    def _accel_for(self, idx: int, veh: VehicleState, sig: SignalState) -> float:
        """Raw IDM acceleration for the vehicle at list index ``idx``."""
        prev = self.vehicles[idx - 1] if idx > 0 else None
        line = self.config.lane_length
        pos = veh.position
        v = veh.speed
        if pos < line and not self._may_proceed(pos, v, sig):
            # The binding obstacle is whichever rear bumper is nearer: the
            # real predecessor or the virtual stop-line vehicle.
            if prev is None or prev.position - prev.length > line:
                gap = line - pos
                return _idm_raw(v, gap, v, self._a0, self._inv_v0, self._delta,
                                self._s0, self._headway, self._inv_2sab)
        if prev is None:
            return _idm_free(v, self._a0, self._inv_v0, self._delta)
        gap = prev.position - prev.length - pos
        if gap <= 0.0:
            raise CollisionError(
                f"vehicle {veh.id} has non-positive gap {gap:.3f} m to leader {prev.id}"
            )
        return _idm_raw(v, gap, v - prev.speed, self._a0, self._inv_v0, self._delta,
                        self._s0, self._headway, self._inv_2sab)

    def step(self, ego_accel: Optional[float] = None) -> None:
        """Advance the world by one ``dt``.

        ``ego_accel`` is applied verbatim to the ego (the caller enforces the
        actuation box and safety ceiling); every other vehicle follows IDM
        against its effective leader, clamped to the actuation box. The
        acceleration pass below inlines the same expressions as
        ``_accel_for`` for speed; the two must stay in lockstep.
        """
        cfg = self.config
        dt = cfg.dt
        lo = cfg.accel_min
        hi = cfg.accel_max
        line = cfg.lane_length
        vmax = cfg.speed_limit
        self._spawn_background()
        vehicles = self.vehicles
        ego = self.ego
        sig = self.signal_now()
        can_green = sig.approach_proceed
        on_yellow = sig.is_yellow and sig.phase_index == self.signal.approach_phase
        remaining = sig.remaining
        a0 = self._a0
        inv_v0 = self._inv_v0
        delta = self._delta
        s0 = self._s0
        headway = self._headway
        inv_2sab = self._inv_2sab

        accels: list[float] = []
        append = accels.append
        prev: Optional[VehicleState] = None
        for veh in vehicles:
            if veh is ego and ego_accel is not None:
                append(float(ego_accel))
                prev = veh
                continue
            pos = veh.position
            v = veh.speed
            if pos >= line:
                proceed = True
            elif can_green:
                proceed = True
            elif on_yellow and v > 0.0:
                proceed = (line - pos) / v <= remaining
            else:
                proceed = False
            if not proceed and (prev is None or prev.position - prev.length > line):
                gap = line - pos
                dv = v
            elif prev is None:
                if delta == 4.0:
                    r = v * inv_v0
                    r2 = r * r
                    speed_term = r2 * r2
                else:
                    speed_term = (v * inv_v0) ** delta
                a = a0 * (1.0 - speed_term)
                if a < lo:
                    a = lo
                elif a > hi:
                    a = hi
                append(a)
                prev = veh
                continue
            else:
                gap = prev.position - prev.length - pos
                if gap <= 0.0:
                    raise CollisionError(
                        f"vehicle {veh.id} has non-positive gap {gap:.3f} m "
                        f"to leader {prev.id}")
                dv = v - prev.speed
            s_star = s0 + headway * v + v * dv * inv_2sab
            if delta == 4.0:
                r = v * inv_v0
                r2 = r * r
                speed_term = r2 * r2
            else:
                speed_term = (v * inv_v0) ** delta
            ratio = s_star / gap
            a = a0 * (1.0 - speed_term - ratio * ratio)
            if a < lo:
                a = lo
            elif a > hi:
                a = hi
            append(a)
            prev = veh

        t_new = self.time + dt
        energy_fn = self.energy_fn
        crossed_background = False
        for veh, a in zip(vehicles, accels):
            v0 = veh.speed
            v1 = v0 + a * dt
            if v1 < 0.0:
                v1 = 0.0
            elif v1 > vmax:
                v1 = vmax
            veh.speed = v1
            veh.accel = a
            veh.position += v1 * dt
            if energy_fn is not None:
                veh.energy_wh += energy_fn(v0, v1, dt)
            if veh.crossed_at is None and veh.position >= line:
                veh.crossed_at = t_new
                if veh.vclass is VehicleClass.BACKGROUND_HDV:
                    crossed_background = True

        for i in range(1, len(vehicles)):
            lead = vehicles[i - 1]
            gap = lead.position - lead.length - vehicles[i].position
            if gap <= 0.0:
                raise CollisionError(
                    f"vehicle {vehicles[i].id} collided with {lead.id} "
                    f"(gap {gap:.3f} m at t={t_new:.1f} s)"
                )

        self.time = t_new
        if self.trajectory is not None:
            sig_new = self.signal_now()
            label = f"{'y' if sig_new.is_yellow else 'g'}{sig_new.phase_index}"
            rows = self.trajectory
            for veh in vehicles:
                rows.append((t_new, veh.id, veh.vclass.value, veh.position,
                             veh.speed, veh.accel, veh.energy_wh, label,
                             sig_new.remaining))
        if crossed_background:
            self.vehicles = [v for v in vehicles
                             if not (v.vclass is VehicleClass.BACKGROUND_HDV
                                     and v.crossed_at is not None)]
            if self.ego is not None:
                for idx, veh in enumerate(self.vehicles):
                    if veh is self.ego:
                        self.ego_index = idx
                        break
