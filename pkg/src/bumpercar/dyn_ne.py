"""Newton-Euler single-track model with ASR slip regularization and two-substep RK4.

All ``_``-prefixed kernels are elementwise: they take floats or equally shaped
arrays, so the numpy fallback vectorizes across samples while the numba build
loops over scalars.
"""

from dataclasses import dataclass

import numpy as np

from ._accel import USE_NUMBA, kernel
from .actuators import _motor_force, _steering_rate
from .core import BodyVelocity, DriverInput, NumericError, _integrate_pose
from .params import (NeParams, P_C, P_CAF, P_CAR, P_D, P_FAF, P_FAR, P_FM, P_IZ, P_KB, P_KT, P_LF, P_LR, P_M,
                     P_PRINTED, P_R1, P_R2, P_TS, P_V0)

T_STEP = 0.1
N_SUBSTEPS = 2
DERIV_LIMIT = 1e6  # stage derivatives beyond this abort the step


@dataclass(frozen=True)
class NeState:
    v: BodyVelocity
    delta: float


@kernel
def _wheel_frame(vx, vy, om, c, s, lf, lr, printed):
    w = vy + lf * om
    sgn = 1.0 - 2.0 * printed
    return c * vx + s * w, c * w - sgn * s * vx, vx, vy - lr * om


@kernel
def _tire_velocities(vx, vy, om, delta, lf, lr, printed):
    return _wheel_frame(vx, vy, om, np.cos(delta), np.sin(delta), lf, lr, printed)


@kernel
def _slip_angle(v_ix, v_iy, v_0):
    return np.arctan(v_iy / np.maximum(np.abs(v_ix), v_0))


@kernel
def _lateral_force(alpha, C, F_hat):
    return -np.sign(alpha) * np.minimum(C * np.abs(alpha), F_hat)


@kernel
def _drag(v_fx, R1, R2):
    return R1 * v_fx + R2 * v_fx * v_fx


@kernel
def _forces_cs(vx, vy, om, c, s, F_m, p):
    vfx, vfy, vrx, vry = _wheel_frame(vx, vy, om, c, s, p[P_LF], p[P_LR], p[P_PRINTED])
    F_af = _lateral_force(_slip_angle(vfx, vfy, p[P_V0]), p[P_CAF], p[P_FAF])
    F_ar = _lateral_force(_slip_angle(vrx, vry, p[P_V0]), p[P_CAR], p[P_FAR])
    F_l = F_m - _drag(vfx, p[P_R1], p[P_R2])
    # lateral tire axis is (-sin, cos); the printed variant uses (sin, cos)
    sgn = 1.0 - 2.0 * p[P_PRINTED]
    F_x = c * F_l - sgn * s * F_af
    F_y = s * F_l + c * F_af + F_ar
    M_z = p[P_LF] * (s * F_l + c * F_af) - p[P_LR] * F_ar
    return F_x, F_y, M_z


@kernel
def _forces(vx, vy, om, delta, F_m, p):
    return _forces_cs(vx, vy, om, np.cos(delta), np.sin(delta), F_m, p)


@kernel
def _ne_rhs(vx, vy, om, delta, u_s, u_m, p):
    c, s = np.cos(delta), np.sin(delta)
    v_fx = c * vx + s * (vy + p[P_LF] * om)
    F_m = _motor_force(u_m, v_fx, p[P_KT], p[P_C], p[P_KB], p[P_FM])
    F_x, F_y, M_z = _forces_cs(vx, vy, om, c, s, F_m, p)
    return (F_x / p[P_M] + om * vy,
            F_y / p[P_M] - om * vx,
            M_z / p[P_IZ],
            _steering_rate(delta, u_s, p[P_D], p[P_TS]))


@kernel
def _bounded(a, b, c, d):
    L = DERIV_LIMIT
    return (np.abs(a) <= L) & (np.abs(b) <= L) & (np.abs(c) <= L) & (np.abs(d) <= L)


@kernel
def _rk4_substep(vx, vy, om, dl, u_s, u_m, h, p):
    a1, b1, c1, d1 = _ne_rhs(vx, vy, om, dl, u_s, u_m, p)
    a2, b2, c2, d2 = _ne_rhs(vx + 0.5 * h * a1, vy + 0.5 * h * b1, om + 0.5 * h * c1, dl + 0.5 * h * d1, u_s, u_m, p)
    a3, b3, c3, d3 = _ne_rhs(vx + 0.5 * h * a2, vy + 0.5 * h * b2, om + 0.5 * h * c2, dl + 0.5 * h * d2, u_s, u_m, p)
    a4, b4, c4, d4 = _ne_rhs(vx + h * a3, vy + h * b3, om + h * c3, dl + h * d3, u_s, u_m, p)
    ok = (_bounded(a1, b1, c1, d1) & _bounded(a2, b2, c2, d2)
          & _bounded(a3, b3, c3, d3) & _bounded(a4, b4, c4, d4))
    return (vx + h * (a1 + 2.0 * a2 + 2.0 * a3 + a4) / 6.0,
            vy + h * (b1 + 2.0 * b2 + 2.0 * b3 + b4) / 6.0,
            om + h * (c1 + 2.0 * c2 + 2.0 * c3 + c4) / 6.0,
            dl + h * (d1 + 2.0 * d2 + 2.0 * d3 + d4) / 6.0,
            ok)


@kernel
def _ne_step(vx, vy, om, dl, u_s, u_m, p):
    """Two RK4 substeps of T/2; last value is 0 (ok) or the failing substep (1, 2)."""
    h = T_STEP / N_SUBSTEPS
    vx1, vy1, om1, dl1, ok1 = _rk4_substep(vx, vy, om, dl, u_s, u_m, h, p)
    vx2, vy2, om2, dl2, ok2 = _rk4_substep(vx1, vy1, om1, dl1, u_s, u_m, h, p)
    status = (1.0 - ok1 * 1.0) + ok1 * (1.0 - ok2 * 1.0) * 2.0
    return vx2, vy2, om2, dl2, status


@kernel
def _ne_step_loop(V, D, U, p, out_V, out_D, status):
    for k in range(V.shape[0]):
        vx, vy, om, dl, st = _ne_step(V[k, 0], V[k, 1], V[k, 2], D[k], U[k, 0], U[k, 1], p)
        out_V[k, 0] = vx
        out_V[k, 1] = vy
        out_V[k, 2] = om
        out_D[k] = dl
        status[k] = st


@kernel
def _ne_rollout(v0, d0, pose0, U, p, V, D, P):
    """Closed-loop rollout; returns the first failing step index or -1."""
    n = U.shape[0]
    V[0, 0], V[0, 1], V[0, 2] = v0[0], v0[1], v0[2]
    D[0] = d0
    P[0, 0], P[0, 1], P[0, 2] = pose0[0], pose0[1], pose0[2]
    for k in range(n - 1):
        vx, vy, om, dl, st = _ne_step(V[k, 0], V[k, 1], V[k, 2], D[k], U[k, 0], U[k, 1], p)
        if st != 0.0 or not (np.isfinite(vx) and np.isfinite(vy) and np.isfinite(om)):
            return k
        V[k + 1, 0], V[k + 1, 1], V[k + 1, 2], D[k + 1] = vx, vy, om, dl
        px, py, th = _integrate_pose(P[k, 0], P[k, 1], P[k, 2], 0.5 * (V[k, 0] + vx), 0.5 * (V[k, 1] + vy),
                                     0.5 * (V[k, 2] + om), T_STEP)
        P[k + 1, 0], P[k + 1, 1], P[k + 1, 2] = px, py, th
    return -1


def _p(params):
    return params.to_array() if isinstance(params, NeParams) else np.asarray(params, dtype=float)


def tire_velocities(v: BodyVelocity, delta, params: NeParams):
    """(v_fx, v_fy, v_rx, v_ry) expressed in the respective wheel frames."""
    return tuple(float(x) for x in _tire_velocities(float(v[0]), float(v[1]), float(v[2]), float(delta),
                                                    params.l_f, params.l_r, float(params.printed_tire_frame)))


def slip_angle(v_ix, v_iy, v_0):
    if not v_0 > 0:
        raise ValueError("v_0 must be positive")
    return _slip_angle(v_ix, v_iy, v_0)


def lateral_tire_force(alpha, C_alpha, F_hat):
    return _lateral_force(alpha, C_alpha, F_hat)


def drag_force(v_fx, R1, R2):
    return _drag(v_fx, R1, R2)


def force_balance(v: BodyVelocity, delta, F_m, params: NeParams):
    """Body-frame (F_x, F_y, M_z) at the CoG."""
    return tuple(float(x) for x in _forces(float(v[0]), float(v[1]), float(v[2]), float(delta), float(F_m),
                                           params.to_array()))


def ne_derivative(state: NeState, u: DriverInput, params: NeParams):
    """(v_x_dot, v_y_dot, omega_dot, delta_dot)."""
    v = state.v
    return tuple(float(x) for x in _ne_rhs(float(v[0]), float(v[1]), float(v[2]), float(state.delta),
                                           float(u[0]), float(u[1]), params.to_array()))


def ne_step(state: NeState, u: DriverInput, params: NeParams) -> NeState:
    """One 0.1 s step of the discrete Newton-Euler map."""
    v = state.v
    vx, vy, om, dl, st = _ne_step(float(v[0]), float(v[1]), float(v[2]), float(state.delta),
                                  float(u[0]), float(u[1]), _p(params))
    if st != 0 or not np.all(np.isfinite([vx, vy, om, dl])):
        raise NumericError(f"Newton-Euler step unstable in substep {int(st) or N_SUBSTEPS} (stiffness)")
    return NeState(BodyVelocity(float(vx), float(vy), float(om)), float(dl))


def ne_step_many(velocities, deltas, inputs, params):
    """Independent one-step predictions for (N, 3) velocities, (N,) steer, (N, 2) inputs.

    Returns ``(V_next, delta_next, status)`` with status 0 where the step is valid.
    """
    V = np.ascontiguousarray(velocities, dtype=float)
    D = np.ascontiguousarray(deltas, dtype=float)
    U = np.ascontiguousarray(inputs, dtype=float)
    p = _p(params)
    if USE_NUMBA:
        out_V, out_D, st = np.empty_like(V), np.empty_like(D), np.empty_like(D)
        _ne_step_loop(V, D, U, p, out_V, out_D, st)
    else:
        vx, vy, om, dl, st = _ne_step(V[:, 0], V[:, 1], V[:, 2], D, U[:, 0], U[:, 1], p)
        out_V, out_D = np.column_stack([vx, vy, om]), dl
        st = np.asarray(st, dtype=float)
    bad = ~np.all(np.isfinite(out_V), axis=1)
    st = np.where(bad & (st == 0), float(N_SUBSTEPS), st)
    return out_V, out_D, st


def ne_rollout(v0, delta0, pose0, inputs, params):
    """Closed-loop rollout with the midpoint-velocity pose convention.

    Returns ``(V, D, P, failed_at)``; rows after a failure are NaN.
    """
    U = np.ascontiguousarray(inputs, dtype=float)
    n = U.shape[0]
    V, D, P = np.full((n, 3), np.nan), np.full(n, np.nan), np.full((n, 3), np.nan)
    k = _ne_rollout(np.asarray(v0, float), float(delta0), np.asarray(pose0, float), U, _p(params), V, D, P)
    return V, D, P, int(k)


def kinematic_labels(velocities, deltas, params: NeParams, eps=1e-3):
    """Kinematic state (v_f, alpha_f, alpha_r, delta) that reproduces each body velocity.

    ``alpha_f`` is the front velocity direction relative to the wheel and
    ``alpha_r`` the rear velocity direction modulo pi (the reverse-rolling
    rear wheel is the same geometric line); ``eps`` only guards the division
    at standstill.
    """
    V = np.asarray(velocities, dtype=float).reshape(-1, 3)
    D = np.asarray(deltas, dtype=float).ravel()
    vfx, vfy, vrx, vry = _tire_velocities(V[:, 0], V[:, 1], V[:, 2], D, params.l_f, params.l_r, 0.0)
    v_f = np.hypot(vfx, vfy)
    a_f = np.arctan(vfy / np.maximum(vfx, eps))
    den = np.where(vrx >= 0, 1.0, -1.0) * np.maximum(np.abs(vrx), eps)
    a_r = np.arctan(vry / den)
    return np.column_stack([v_f, a_f, a_r, D])
