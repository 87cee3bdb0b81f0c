"""Extended Kalman filter recovering the kinematic state from pose measurements."""

import math
from dataclasses import dataclass, field

import numpy as np

from ._accel import kernel
from .core import T_SAMPLE, NumericError, Trajectory, wrap_angle
from .dyn_kin import _g_kin
from .params import NeParams

N_X = 7  # px, py, theta, v_f, beta_f, beta_r, delta
JAC_STEP = 1e-6


@dataclass
class EkfConfig:
    q: tuple = (0.1, 0.1, 0.1)  # process noise on (v_f, beta_f, beta_r), per second
    r: tuple = (1e-6, 1e-6, 1e-6)  # pose measurement variances (m^2, m^2, rad^2)
    eta: float = 20.0  # slip decay pole, 1/s
    p0: tuple = (1e-4, 1e-4, 1e-4, 1.0, 0.25, 0.25, 0.25)
    substeps: int = 1

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if min(self.q) < 0 or min(self.r) <= 0 or min(self.p0) < 0:
            raise ValueError("covariances must be non-negative (R positive)")


@dataclass
class EkfState:
    x: np.ndarray
    P: np.ndarray


def slip_gate(v_f):
    """gamma in (0, 1): ~0 at standstill (slip states decay), ~1 when rolling."""
    return 0.5 * (np.tanh(10.0 * v_f - 1.0) + 1.0)


@kernel
def _process(x, u_s, k):
    # k = (l_f, l_r, printed, eta, d, T_s)
    v_f, bf, br, dl = x[3], x[4], x[5], x[6]
    vx, vy, om = _g_kin(v_f, bf - dl, br, dl, k[0], k[1], k[2])
    c, s = math.cos(x[2]), math.sin(x[2])
    gam = 0.5 * (math.tanh(10.0 * v_f - 1.0) + 1.0)
    rate = (u_s - dl) / k[5]
    rate = min(max(rate, -k[4]), k[4])
    out = np.empty(7)
    out[0] = c * vx - s * vy
    out[1] = s * vx + c * vy
    out[2] = om
    out[3] = 0.0
    out[4] = k[3] * (1.0 - gam) * (dl - bf)
    out[5] = k[3] * (1.0 - gam) * (-br)
    out[6] = rate
    return out


@kernel
def _jacobian(x, u_s, k):
    F = np.empty((7, 7))
    for j in range(7):
        xp = x.copy()
        xm = x.copy()
        xp[j] += JAC_STEP
        xm[j] -= JAC_STEP
        fp = _process(xp, u_s, k)
        fm = _process(xm, u_s, k)
        for i in range(7):
            F[i, j] = (fp[i] - fm[i]) / (2.0 * JAC_STEP)
    return F


@kernel
def _predict(x, P, u_s, dt, k, GQG, substeps):
    # RK4 on the mean and, with the same stage states, on the variational
    # equation Phi' = F Phi. P <- Phi P Phi^T + Qd stays PSD by construction,
    # which RK4 applied directly to the Lyapunov equation does not guarantee.
    h = dt / substeps
    eye = np.eye(7)
    for _ in range(substeps):
        k1 = _process(x, u_s, k)
        F1 = _jacobian(x, u_s, k)
        x2 = x + 0.5 * h * k1
        k2 = _process(x2, u_s, k)
        F2 = _jacobian(x2, u_s, k)
        x3 = x + 0.5 * h * k2
        k3 = _process(x3, u_s, k)
        F3 = _jacobian(x3, u_s, k)
        x4 = x + h * k3
        k4 = _process(x4, u_s, k)
        F4 = _jacobian(x4, u_s, k)
        K1 = F1
        K2 = F2 @ (eye + 0.5 * h * K1)
        K3 = F3 @ (eye + 0.5 * h * K2)
        K4 = F4 @ (eye + h * K3)
        Phi = eye + h * (K1 + 2.0 * K2 + 2.0 * K3 + K4) / 6.0
        # Simpson quadrature of the injected noise; Phi(h, h/2) to second order
        Fm = 0.5 * (F2 + F3)
        Ph = eye + 0.5 * h * Fm + 0.125 * h * h * (Fm @ Fm)
        Qd = h * (Phi @ GQG @ Phi.T + 4.0 * (Ph @ GQG @ Ph.T) + GQG) / 6.0
        x = x + h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
        P = Phi @ P @ Phi.T + Qd
        P = 0.5 * (P + P.T)
    return x, P


class ExtendedKalmanFilter:
    """Sequential pose-only EKF; one instance per trajectory."""

    def __init__(self, params: NeParams = NeParams(), config: EkfConfig = None):
        self.params = params
        self.config = config or EkfConfig()
        s = params.steering
        self._k = np.array([params.l_f, params.l_r, 1.0 if params.printed_tire_frame else 0.0,
                            self.config.eta, s.d, s.T_s])
        G = np.zeros((N_X, 3))
        G[3, 0] = G[4, 1] = G[5, 2] = 1.0
        self._GQG = G @ np.diag(self.config.q) @ G.T
        self._R = np.diag(np.asarray(self.config.r, float))
        self.state = None
        self.nis = []

    def reset(self, pose, v_f=0.0, delta=0.0, beta_f=None):
        x = np.array([pose[0], pose[1], pose[2], v_f, delta if beta_f is None else beta_f, 0.0, delta], float)
        self.state = EkfState(x, np.diag(np.asarray(self.config.p0, float)))
        return self.state

    def process(self, x, u_s):
        return _process(np.asarray(x, float), float(u_s), self._k)

    def jacobian(self, x, u_s):
        return _jacobian(np.asarray(x, float), float(u_s), self._k)

    def predict(self, u, dt=T_SAMPLE):
        st = self.state
        x, P = _predict(st.x, st.P, float(u[0]), float(dt), self._k, self._GQG, int(self.config.substeps))
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(P))):
            raise NumericError("filter diverged during prediction")
        dmax = self.params.steering.delta_max
        x[6] = min(max(x[6], -dmax), dmax)
        self._check(P)
        self.state = EkfState(x, P)
        return self.state

    def update(self, z):
        st = self.state
        x, P = st.x, st.P
        innov = np.asarray(z, float)[:3] - x[:3]
        innov[2] = wrap_angle(innov[2])
        S = P[:3, :3] + self._R
        try:
            Sinv = np.linalg.inv(S)
        except np.linalg.LinAlgError as exc:
            raise NumericError("innovation covariance is singular") from exc
        K = P[:, :3] @ Sinv
        x = x + K @ innov
        # Joseph form keeps P positive semi-definite
        IKH = np.eye(N_X)
        IKH[:, :3] -= K
        P = IKH @ P @ IKH.T + K @ self._R @ K.T
        P = 0.5 * (P + P.T)
        self._check(P)
        self.nis.append(float(innov @ Sinv @ innov))
        self.state = EkfState(x, P)
        return self.state

    @staticmethod
    def _check(P):
        lo = np.linalg.eigvalsh(P)[0]
        if lo < -1e-9 * max(1.0, np.trace(P)):
            raise NumericError(f"covariance lost positive semi-definiteness (min eigenvalue {lo:.3g})")

    def kinematic_state(self):
        x = self.state.x
        return np.array([max(x[3], 0.0), x[4] - x[6], x[5], x[6]])


@dataclass
class FilterRun:
    trajectory: Trajectory
    nis: np.ndarray
    asymmetry: np.ndarray = field(default=None)


def run_filter(raw: Trajectory, params: NeParams = NeParams(), config: EkfConfig = None) -> FilterRun:
    """Forward EKF pass over a pose+input trajectory, one segment at a time."""
    n = len(raw)
    if n < 2:
        raise ValueError("need at least two samples")
    kf = ExtendedKalmanFilter(params, config)
    bounces = {int(i) for i in raw.meta.get("bounce", [])}
    restarts = set(raw.segment_starts) | bounces
    K = np.empty((n, 4))
    nis = np.full(n, np.nan)
    asym = np.zeros(n)
    for k in range(n):
        z = raw.poses[k]
        try:
            if k in bounces and kf.state is not None:
                # wall contact: the car stops, the steering servo carries on
                kf.predict(raw.inputs[k - 1])
                kf.reset(z, 0.0, float(kf.state.x[6]))
            elif k in restarts:
                nxt = min(k + 1, n - 1)
                speed = float(np.hypot(*(raw.poses[nxt, :2] - z[:2]))) / T_SAMPLE
                kf.reset(z, speed, 0.0)
            else:
                kf.predict(raw.inputs[k - 1])
                asym[k] = np.abs(kf.state.P - kf.state.P.T).max()
                kf.update(z)
                nis[k] = kf.nis[-1]
        except NumericError as exc:
            raise NumericError(f"sample {k}: {exc}") from exc
        asym[k] = max(asym[k], np.abs(kf.state.P - kf.state.P.T).max())
        K[k] = kf.kinematic_state()
    lim = 0.5 * np.pi - 1e-6
    K[:, 1:3] = np.clip(K[:, 1:3], -lim, lim)
    vx, vy, om = _g_kin(K[:, 0], K[:, 1], K[:, 2], K[:, 3], params.l_f, params.l_r,
                        1.0 if params.printed_tire_frame else 0.0)
    out = raw.with_(kin_states=K, velocities=np.column_stack([vx, vy, om]))
    return FilterRun(out, nis, asym)


def smooth_dataset(raw: Trajectory, config: EkfConfig = None, params: NeParams = NeParams()) -> Trajectory:
    """Label a pose-only trajectory with EKF kinematic states and body velocities."""
    return run_filter(raw, params, config).trajectory


def ekf_process(state: EkfState, u, config: EkfConfig = None, params: NeParams = NeParams()):
    """Continuous-time state derivative of the filter model."""
    return ExtendedKalmanFilter(params, config).process(state.x, u[0])


def ekf_predict(state: EkfState, u, dt=T_SAMPLE, config: EkfConfig = None, params: NeParams = NeParams()):
    kf = ExtendedKalmanFilter(params, config)
    kf.state = EkfState(np.array(state.x, float), np.array(state.P, float))
    return kf.predict(u, dt)


def ekf_update(state: EkfState, z, config: EkfConfig = None, params: NeParams = NeParams()):
    kf = ExtendedKalmanFilter(params, config)
    kf.state = EkfState(np.array(state.x, float), np.array(state.P, float))
    return kf.update(z)
