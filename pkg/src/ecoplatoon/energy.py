"""Battery-draw model for electric vehicles.

Per step the model charges the battery for the change in kinetic energy plus
aerodynamic and rolling losses evaluated at the mean step speed. Positive
demand is divided by the propulsion efficiency; negative demand (braking) is
scaled by the recuperation efficiency and returned as negative draw.
"""

from __future__ import annotations

from dataclasses import dataclass

WH_PER_J = 1.0 / 3600.0


@dataclass(frozen=True)
class EvParams:
    mass: float = 1600.0  # kg
    frontal_area: float = 2.5  # m^2
    drag_coeff: float = 0.29
    roll_coeff: float = 0.012
    air_density: float = 1.225  # kg/m^3
    gravity: float = 9.81  # m/s^2
    propulsion_eff: float = 0.9  # battery -> wheel
    recuperation_eff: float = 0.6  # wheel -> battery
    aux_power: float = 0.0  # W, constant hotel load

    def __post_init__(self) -> None:
        if self.mass <= 0:
            raise ValueError("ev.mass must be positive")
        if self.frontal_area < 0 or self.drag_coeff < 0 or self.roll_coeff < 0:
            raise ValueError("ev resistance coefficients must be >= 0")
        if self.air_density <= 0 or self.gravity <= 0:
            raise ValueError("ev.air_density and ev.gravity must be positive")
        if not 0 < self.propulsion_eff <= 1:
            raise ValueError("ev.propulsion_eff must be in (0, 1]")
        if not 0 <= self.recuperation_eff <= 1:
            raise ValueError("ev.recuperation_eff must be in [0, 1]")
        if self.aux_power < 0:
            raise ValueError("ev.aux_power must be >= 0")


def step_energy(v_prev: float, v_new: float, dt: float, params: EvParams) -> float:
    """Battery draw in Wh for one step from speed ``v_prev`` to ``v_new``.

    Draw is never below -|dE|: recuperation cannot return more energy than
    the wheel demand released.
    """
    p = params
    vbar = 0.5 * (v_prev + v_new)
    losses = (0.5 * p.air_density * p.frontal_area * p.drag_coeff * vbar ** 3
              + p.roll_coeff * p.mass * p.gravity * vbar) * dt
    de = 0.5 * p.mass * (v_new * v_new - v_prev * v_prev) + losses
    if de >= 0.0:
        draw = de / p.propulsion_eff + p.aux_power * dt
    else:
        draw = de * p.recuperation_eff + p.aux_power * dt
        if draw < de:
            draw = de
    return draw * WH_PER_J


def make_step_energy(params: EvParams):
    """Bind ``params`` into a fast (v_prev, v_new, dt) -> Wh callable.

    The closure evaluates the same expression as :func:`step_energy` in the
    same operation order, so accumulated values agree bit for bit.
    """
    p = params
    k_air = 0.5 * p.air_density * p.frontal_area * p.drag_coeff
    k_roll = p.roll_coeff * p.mass * p.gravity
    half_m = 0.5 * p.mass
    eff = p.propulsion_eff
    recup = p.recuperation_eff
    aux = p.aux_power

    def fn(v_prev: float, v_new: float, dt: float) -> float:
        vbar = 0.5 * (v_prev + v_new)
        losses = (k_air * vbar ** 3 + k_roll * vbar) * dt
        de = half_m * (v_new * v_new - v_prev * v_prev) + losses
        if de >= 0.0:
            draw = de / eff + aux * dt
        else:
            draw = de * recup + aux * dt
            if draw < de:
                draw = de
        return draw * WH_PER_J

    return fn


def episode_energy(record, vehicle_id: int) -> float:
    """Energy in Wh charged to ``vehicle_id`` over a finished episode.

    ``record`` is any object with an ``energies`` mapping keyed by vehicle id
    (an EpisodeRecord). Raises KeyError for unknown ids.
    """
    return record.energies[vehicle_id]
