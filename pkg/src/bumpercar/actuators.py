"""Steering servo and motor/brake models."""

import math
from dataclasses import dataclass

import numpy as np

from ._accel import kernel


@dataclass(frozen=True)
class SteeringParams:
    delta_max: float = 2.012  # rad
    d: float = 1.418  # rad/s, maximum steer rate
    T_s: float = 0.155  # s

    def __post_init__(self):
        if min(self.delta_max, self.d, self.T_s) <= 0:
            raise ValueError("steering parameters must be positive")


@dataclass(frozen=True)
class MotorParams:
    K_t: float = 274.8  # N s/m
    c: float = 2.033  # m/s
    K_b: float = 597.0  # N s/m
    F_m_max: float = 423.4  # N

    def __post_init__(self):
        if min(self.K_t, self.c, self.K_b, self.F_m_max) <= 0:
            raise ValueError("motor parameters must be positive")


# Elementwise kernels below accept floats or equally shaped arrays.

@kernel
def _steering_rate(delta, u_s, d, T_s):
    return np.minimum(np.maximum((u_s - delta) / T_s, -d), d)


@kernel
def _motor_force(u_m, v_fx, K_t, c, K_b, F_max):
    throttle = np.minimum(np.maximum(K_t * (u_m * c - v_fx), -F_max), F_max)
    brake = u_m * K_b * v_fx
    w = (u_m > 0.0) * 1.0
    return w * throttle + (1.0 - w) * brake


@kernel
def _steer_step(delta, u_s, dt, delta_max, d, T_s):
    err = u_s - delta
    rem = dt
    out = delta
    if abs(err) >= d * T_s:
        # rate-limited slew until the error shrinks to the linear band
        t_sat = (abs(err) - d * T_s) / d
        sgn = 1.0 if err > 0.0 else -1.0
        if t_sat >= dt:
            out = delta + sgn * d * dt
            rem = 0.0
        else:
            out = u_s - sgn * d * T_s
            rem = dt - t_sat
    if rem > 0.0:
        out = out + (u_s - out) * (1.0 - math.exp(-rem / T_s))
    return min(max(out, -delta_max), delta_max)


def steering_rate(delta, u_s, params: SteeringParams):
    """Commanded steering rate: first-order lag saturated at the max steer rate."""
    return _steering_rate(delta, u_s, params.d, params.T_s)


def steer_step(delta, u_s, dt, params: SteeringParams):
    """Advance the steering angle by ``dt`` using the exact piecewise solution.

    Inside the linear band the first-order lag is integrated exactly; a
    saturated slew is followed analytically up to the crossover time, so the
    result never overshoots ``u_s`` and never exceeds ``d * dt`` in magnitude.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    return _steer_step(float(delta), float(u_s), float(dt), params.delta_max, params.d, params.T_s)


def motor_force(u_m, v_fx, params: MotorParams):
    """Throttle (saturated P-controller on ``u_m * c``) or brake (drag) force."""
    return _motor_force(u_m, v_fx, params.K_t, params.c, params.K_b, params.F_m_max)
