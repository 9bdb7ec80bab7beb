"""Intelligent Driver Model, in feet and seconds.

Used as the car-following law for every vehicle. Parameters are plain
config values; nothing here is calibrated against field data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class IdmParams:
    # Gives ~2080 veh/h/lane at 58.7 ft/s and ~1880 at 44 ft/s from a standing queue.
    a_max: float = 8.0  # ft/s^2
    b: float = 8.0  # comfortable deceleration, ft/s^2
    s0: float = 6.5  # jam gap, ft
    time_headway: float = 1.1  # s
    delta: int = 4


def idm_acceleration(v: float, v0: float, gap: float, dv: float,
                     params: IdmParams = IdmParams()) -> float:
    """Scalar IDM acceleration.

    The desired gap is floored at zero so a fast-receding leader never
    produces braking.

    ``dv`` is the approach rate ``v - v_leader``. ``gap`` must be positive;
    callers deal with standstill at zero gap themselves.
    """
    if not gap > 0:
        raise ValueError(f"IDM gap must be positive, got {gap}")
    s_star = params.s0 + v * params.time_headway + v * dv / (2.0 * math.sqrt(params.a_max * params.b))
    s_star = max(s_star, 0.0)
    return params.a_max * (1.0 - (v / v0) ** params.delta - (s_star / gap) ** 2)


def idm_acceleration_array(v, v0, gap, dv, params: IdmParams = IdmParams()):
    """Vectorised form of :func:`idm_acceleration`; ``gap`` is clipped at 1e-3 ft."""
    gap = np.maximum(gap, 1e-3)
    s_star = params.s0 + v * params.time_headway + v * dv * (0.5 / math.sqrt(params.a_max * params.b))
    s_star = np.maximum(s_star, 0.0)
    return params.a_max * (1.0 - (v / v0) ** params.delta - (s_star / gap) ** 2)


def free_acceleration(v, v0, params: IdmParams = IdmParams()):
    return params.a_max * (1.0 - (v / v0) ** params.delta)
