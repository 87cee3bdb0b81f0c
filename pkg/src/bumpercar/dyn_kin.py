"""Extended kinematic single-track model: output map, transition contract, rollouts."""

from typing import Protocol, runtime_checkable

import numpy as np

from ._accel import kernel
from .actuators import SteeringParams, _steer_step, _steering_rate
from .core import T_SAMPLE, DomainError, Trajectory, _integrate_pose
from .params import NeParams

HALF_PI = 0.5 * np.pi


@kernel
def _g_kin(v_f, alpha_f, alpha_r, delta, lf, lr, printed):
    bf = delta + alpha_f
    cf, sf = np.cos(bf), np.sin(bf)
    tr = np.tan(alpha_r)
    L = lf + lr
    # rigid-body consistent lever arms; the printed form swaps l_f and l_r
    a = (1.0 - printed) * lr + printed * lf
    b = (1.0 - printed) * lf + printed * lr
    return cf * v_f, (a * sf + b * cf * tr) / L * v_f, (sf - cf * tr) / L * v_f


def g_kin(x, l_f=0.54, l_r=0.33, printed=False):
    """Body velocity (v_x, v_y, omega) of kinematic state(s) ``x = (v_f, alpha_f, alpha_r, delta)``.

    Accepts one state or an (N, 4) array. The front heading may exceed pi/2
    (reverse motion); only slip angles at +-pi/2 are singular.
    """
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    X = X.reshape(-1, 4)
    if np.any(np.abs(X[:, 2]) >= HALF_PI) or np.any(np.abs(X[:, 1]) >= HALF_PI):
        raise DomainError("slip angle outside (-pi/2, pi/2)")
    vx, vy, om = _g_kin(X[:, 0], X[:, 1], X[:, 2], X[:, 3], l_f, l_r, 1.0 if printed else 0.0)
    out = np.column_stack([vx, vy, om])
    return out[0] if single else out


@runtime_checkable
class TransitionModel(Protocol):
    """Maps (x_k, u_k) to (v_f, alpha_f, alpha_r) at k+1; steering is stepped separately."""

    description: str

    def step(self, x, u) -> np.ndarray:
        ...


@kernel
def _appendix_d(v_f, a_f, delta, delta_dot, u_m, c):
    ad, add = np.abs(delta), np.abs(delta_dot)
    v_next = (0.968 * v_f + 0.0379 * v_f ** 2 - 0.0155 * v_f ** 3 - 0.475 * a_f ** 2
              + 0.053 * np.maximum(u_m * c - v_f, 0.0) * (1.0 + 0.487 * v_f)
              + 0.181 * np.minimum(u_m * v_f, 0.0) * (1.0 - 0.462 * v_f))
    af_next = (0.777 * a_f + 0.00718 * v_f * delta * ad - 0.0117 * v_f ** 2 * delta
               + 0.0259 * v_f * delta_dot - 0.0169 * v_f * delta_dot * add - 0.0169 * v_f ** 2 * delta_dot
               - 0.00836 * v_f * delta_dot * delta ** 2)
    ar_next = (-0.0485 * a_f + 0.0147 * v_f * delta - 0.0127 * v_f * delta * ad
               - 0.00661 * v_f * delta_dot * ad + 0.00580 * v_f * delta_dot * delta ** 2)
    return np.maximum(v_next, 0.0), af_next, ar_next


def appendix_d_step(x, u, steering: SteeringParams = SteeringParams(), c=2.033):
    """Published sparse transition; the steering rate is the commanded one."""
    v_f, a_f, _, delta = (float(z) for z in x)
    dd = float(_steering_rate(delta, float(u[0]), steering.d, steering.T_s))
    return np.array(_appendix_d(v_f, a_f, delta, dd, float(u[1]), c), dtype=float)


class AppendixDModel:
    description = "identified sparse reference transition (fixed coefficients)"

    def __init__(self, steering: SteeringParams = SteeringParams(), c=2.033):
        self.steering = steering
        self.c = c

    def step(self, x, u):
        return appendix_d_step(x, u, self.steering, self.c)

    def step_many(self, X, U):
        X = np.asarray(X, float)
        U = np.asarray(U, float)
        dd = _steering_rate(X[:, 3], U[:, 0], self.steering.d, self.steering.T_s)
        return np.column_stack(_appendix_d(X[:, 0], X[:, 1], X[:, 3], dd, U[:, 1], self.c))


def rollout(model, x0, inputs, params: NeParams = NeParams(), pose0=(0.0, 0.0, 0.0), t0=0.0) -> Trajectory:
    """Drive a transition model open loop from ``x0`` with the given inputs.

    Steering is advanced exactly; ``v_f`` is clamped at zero; the pose uses the
    mean of consecutive body velocities over each step.
    """
    U = np.asarray(inputs, dtype=float).reshape(-1, 2)
    n = U.shape[0]
    fast = getattr(model, "rollout_arrays", None)
    if fast is not None:
        X, V, P, failed = fast(np.asarray(x0, float), np.asarray(pose0, float), U, params)
        if failed >= 0:
            raise DomainError(f"rollout left the model domain at step {failed}")
    else:
        X, V, P = np.empty((n, 4)), np.empty((n, 3)), np.empty((n, 3))
        X[0] = x0
        V[0] = g_kin(X[0], params.l_f, params.l_r, params.printed_tire_frame)
        P[0] = pose0
        s = params.steering
        for k in range(n - 1):
            y = np.asarray(model.step(X[k], U[k]), dtype=float)
            d_next = _steer_step(X[k, 3], U[k, 0], T_SAMPLE, s.delta_max, s.d, s.T_s)
            X[k + 1] = (max(y[0], 0.0), y[1], y[2], d_next)
            if not np.all(np.isfinite(X[k + 1])) or abs(y[1]) >= HALF_PI or abs(y[2]) >= HALF_PI:
                raise DomainError(f"rollout left the model domain at step {k}")
            V[k + 1] = g_kin(X[k + 1], params.l_f, params.l_r, params.printed_tire_frame)
            m = 0.5 * (V[k] + V[k + 1])
            P[k + 1] = _integrate_pose(P[k, 0], P[k, 1], P[k, 2], m[0], m[1], m[2], T_SAMPLE)
    t = t0 + T_SAMPLE * np.arange(n)
    return Trajectory(t, P, U, V, X)
