"""Physics-informed candidate libraries, sequentially thresholded least squares,
and sparse kinematic transition models."""

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._accel import kernel
from .actuators import SteeringParams, _steer_step, _steering_rate
from .core import T_SAMPLE, Trajectory, _integrate_pose
from .dyn_kin import HALF_PI, _g_kin
from .params import NeParams

log = logging.getLogger(__name__)

TARGETS = ("vf", "alpha_f", "alpha_r")

# d = steering angle, dd = commanded steering rate, af = front slip
VF_TERMS = (
    "max(0,um*c-vf)", "max(0,um*c-vf)*vf", "min(0,um)*vf", "min(0,um)*vf^2",
    "vf", "vf^2", "vf^3",
    "af^2", "vf*|af|", "vf*af^2", "vf*|d|", "vf*|dd|", "vf^2*|af|", "vf*|d|*|af|", "vf*|d|*|dd|", "vf*|dd|*|af|",
)
SLIP_TERMS = (
    "af", "vf*d", "vf*d*|d|", "vf^2*d", "vf*dd", "vf*dd*|dd|", "vf^2*dd", "vf*d*|dd|", "vf*dd*|d|",
    "vf*d^3", "vf*d*dd^2", "vf*dd*d^2", "vf*dd^3",
)


@kernel
def _vf_terms(vf, af, d, dd, um, c):
    thr = np.maximum(um * c - vf, 0.0)
    brk = np.minimum(um, 0.0)
    aaf, ad, add = np.abs(af), np.abs(d), np.abs(dd)
    return (thr, thr * vf, brk * vf, brk * vf * vf,
            vf, vf * vf, vf * vf * vf,
            af * af, vf * aaf, vf * af * af, vf * ad, vf * add, vf * vf * aaf, vf * ad * aaf, vf * ad * add,
            vf * add * aaf)


@kernel
def _slip_terms(vf, af, d, dd):
    ad, add = np.abs(d), np.abs(dd)
    return (af, vf * d, vf * d * ad, vf * vf * d, vf * dd, vf * dd * add, vf * vf * dd, vf * d * add, vf * dd * ad,
            vf * d * d * d, vf * d * dd * dd, vf * dd * d * d, vf * dd * dd * dd)


@dataclass(frozen=True)
class CandidateLibrary:
    name: str
    terms: tuple
    c: float = 2.033
    steering: SteeringParams = field(default_factory=SteeringParams)

    def __len__(self):
        return len(self.terms)

    def evaluate(self, X, U):
        """(N, M) term matrix for kinematic states X (N, 4) and inputs U (N, 2)."""
        X = np.atleast_2d(np.asarray(X, float))
        U = np.atleast_2d(np.asarray(U, float))
        vf, af, d = X[:, 0], X[:, 1], X[:, 3]
        dd = _steering_rate(d, U[:, 0], self.steering.d, self.steering.T_s)
        if self.name == "vf":
            cols = _vf_terms(vf, af, d, dd, U[:, 1], self.c)
        else:
            cols = _slip_terms(vf, af, d, dd)
        return np.column_stack([np.broadcast_to(col, vf.shape) for col in cols])


def build_vf_library(c=2.033, steering=SteeringParams()):
    """Throttle pair, brake pair, cubic rolling resistance, slip/steer drag products."""
    return CandidateLibrary("vf", VF_TERMS, c, steering)


def build_slip_library(c=2.033, steering=SteeringParams()):
    """Slip angle plus v_f-weighted terms odd in the steering quantities."""
    return CandidateLibrary("slip", SLIP_TERMS, c, steering)


@dataclass
class StlsqResult:
    xi: np.ndarray  # (targets, terms), unscaled
    scales: np.ndarray
    threshold: float
    residual: np.ndarray  # per-target mean squared residual
    iterations: int

    @property
    def support(self):
        return self.xi != 0


def stlsq(targets, library_values, threshold, scales=None, max_iter=20):
    """Sequentially thresholded least squares on unit-scaled library columns.

    Coefficients whose magnitude in scaled units falls below ``threshold`` are
    zeroed and the survivors refit, until the support stops changing.
    """
    Y = np.asarray(targets, float)
    Y = Y[:, None] if Y.ndim == 1 else Y
    Theta = np.asarray(library_values, float)
    n, m = Theta.shape
    if Y.shape[0] != n:
        raise ValueError("targets and library have different sample counts")
    if n <= m:
        raise ValueError(f"need more samples ({n}) than library terms ({m})")
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    if scales is None:
        scales = Theta.std(axis=0)
    scales = np.asarray(scales, float).copy()
    dead = ~(scales > 0)
    scales[dead] = 1.0
    Ts = Theta / scales

    xi_s = np.zeros((Y.shape[1], m))
    iters = 0
    for t in range(Y.shape[1]):
        y = Y[:, t]
        active = ~dead
        coef = np.zeros(m)
        coef[active] = np.linalg.lstsq(Ts[:, active], y, rcond=None)[0]
        for it in range(1, max_iter + 1):
            iters = max(iters, it)
            keep = active & (np.abs(coef) >= threshold)
            if np.array_equal(keep, active):
                break
            new = np.zeros(m)
            if keep.any():
                sol, _, rank, _ = np.linalg.lstsq(Ts[:, keep], y, rcond=None)
                if rank < keep.sum():
                    log.warning("rank deficient support for target %d; keeping previous iterate", t)
                    coef[~active] = 0.0
                    break
                new[keep] = sol
            coef, active = new, keep
        coef[~active] = 0.0
        xi_s[t] = coef
    xi = xi_s / scales
    resid = np.mean((Y - Theta @ xi.T) ** 2, axis=0)
    return StlsqResult(xi, scales, float(threshold), resid, iters)


@kernel
def _sparse_step(vf, af, d, um, us, xv, xf, xr, c, dd_max, Ts):
    dd = _steering_rate(d, us, dd_max, Ts)
    tv = _vf_terms(vf, af, d, dd, um, c)
    ts = _slip_terms(vf, af, d, dd)
    # literal indices: a runtime loop over a tuple compiles to a slow switch
    a = (xv[0] * tv[0] + xv[1] * tv[1] + xv[2] * tv[2] + xv[3] * tv[3] + xv[4] * tv[4] + xv[5] * tv[5]
         + xv[6] * tv[6] + xv[7] * tv[7] + xv[8] * tv[8] + xv[9] * tv[9] + xv[10] * tv[10]
         + xv[11] * tv[11] + xv[12] * tv[12] + xv[13] * tv[13] + xv[14] * tv[14] + xv[15] * tv[15])
    b = (xf[0] * ts[0] + xf[1] * ts[1] + xf[2] * ts[2] + xf[3] * ts[3] + xf[4] * ts[4] + xf[5] * ts[5]
         + xf[6] * ts[6] + xf[7] * ts[7] + xf[8] * ts[8] + xf[9] * ts[9] + xf[10] * ts[10]
         + xf[11] * ts[11] + xf[12] * ts[12])
    e = (xr[0] * ts[0] + xr[1] * ts[1] + xr[2] * ts[2] + xr[3] * ts[3] + xr[4] * ts[4] + xr[5] * ts[5]
         + xr[6] * ts[6] + xr[7] * ts[7] + xr[8] * ts[8] + xr[9] * ts[9] + xr[10] * ts[10]
         + xr[11] * ts[11] + xr[12] * ts[12])
    return a, b, e


@kernel
def _sparse_rollout(x0, pose0, U, xv, xf, xr, c, lf, lr, printed, dmax, dd_max, Ts, X, V, P):
    n = U.shape[0]
    for i in range(4):
        X[0, i] = x0[i]
    for i in range(3):
        P[0, i] = pose0[i]
    V[0, 0], V[0, 1], V[0, 2] = _g_kin(X[0, 0], X[0, 1], X[0, 2], X[0, 3], lf, lr, printed)
    for k in range(n - 1):
        a, b, e = _sparse_step(X[k, 0], X[k, 1], X[k, 3], U[k, 1], U[k, 0], xv, xf, xr, c, dd_max, Ts)
        if not (np.isfinite(a) and abs(b) < HALF_PI and abs(e) < HALF_PI):
            return k
        X[k + 1, 0] = max(a, 0.0)
        X[k + 1, 1] = b
        X[k + 1, 2] = e
        X[k + 1, 3] = _steer_step(X[k, 3], U[k, 0], T_SAMPLE, dmax, dd_max, Ts)
        vx, vy, om = _g_kin(X[k + 1, 0], b, e, X[k + 1, 3], lf, lr, printed)
        V[k + 1, 0], V[k + 1, 1], V[k + 1, 2] = vx, vy, om
        P[k + 1, 0], P[k + 1, 1], P[k + 1, 2] = _integrate_pose(
            P[k, 0], P[k, 1], P[k, 2], 0.5 * (V[k, 0] + vx), 0.5 * (V[k, 1] + vy), 0.5 * (V[k, 2] + om), T_SAMPLE)
    return -1


@dataclass
class SparseModel:
    """Sparse transition ``x_{k+1} = Xi Theta(x_k, u_k)`` over the two libraries."""

    xi_vf: np.ndarray
    xi_alpha_f: np.ndarray
    xi_alpha_r: np.ndarray
    c: float = 2.033
    steering: SteeringParams = field(default_factory=SteeringParams)
    threshold: float = float("nan")
    meta: dict = field(default_factory=dict)
    description: str = "sparse kinematic transition"

    def __post_init__(self):
        self.xi_vf = np.asarray(self.xi_vf, float).ravel()
        self.xi_alpha_f = np.asarray(self.xi_alpha_f, float).ravel()
        self.xi_alpha_r = np.asarray(self.xi_alpha_r, float).ravel()
        if self.xi_vf.size != len(VF_TERMS) or self.xi_alpha_f.size != len(SLIP_TERMS) \
                or self.xi_alpha_r.size != len(SLIP_TERMS):
            raise ValueError("coefficient vectors do not match the libraries")

    @property
    def libraries(self):
        return build_vf_library(self.c, self.steering), build_slip_library(self.c, self.steering)

    def coefficients(self):
        """``{target: {term: value}}`` for the nonzero coefficients."""
        out = {}
        for tgt, names, xi in zip(TARGETS, (VF_TERMS, SLIP_TERMS, SLIP_TERMS),
                                  (self.xi_vf, self.xi_alpha_f, self.xi_alpha_r)):
            out[tgt] = {nm: float(v) for nm, v in zip(names, xi) if v != 0.0}
        return out

    def step(self, x, u):
        s = self.steering
        a, b, e = _sparse_step(float(x[0]), float(x[1]), float(x[3]), float(u[1]), float(u[0]),
                               self.xi_vf, self.xi_alpha_f, self.xi_alpha_r, self.c, s.d, s.T_s)
        return np.array([max(a, 0.0), b, e])

    def step_many(self, X, U):
        lv, ls = self.libraries
        Ts = ls.evaluate(X, U)
        v_next = np.maximum(lv.evaluate(X, U) @ self.xi_vf, 0.0)
        return np.column_stack([v_next, Ts @ self.xi_alpha_f, Ts @ self.xi_alpha_r])

    def rollout_arrays(self, x0, pose0, U, params: NeParams):
        n = U.shape[0]
        X, V, P = np.full((n, 4), np.nan), np.full((n, 3), np.nan), np.full((n, 3), np.nan)
        s = self.steering
        k = _sparse_rollout(x0, pose0, U, self.xi_vf, self.xi_alpha_f, self.xi_alpha_r, self.c,
                            params.l_f, params.l_r, 1.0 if params.printed_tire_frame else 0.0,
                            s.delta_max, s.d, s.T_s, X, V, P)
        return X, V, P, int(k)

    def save(self, path):
        lines = ["# sparse kinematic transition, format 1", "# target term coefficient",
                 f"# c = {self.c!r}", f"# threshold = {self.threshold!r}"]
        for tgt, terms in self.coefficients().items():
            for nm, v in terms.items():
                lines.append(f"{tgt} {nm} {v!r}")
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path, steering=SteeringParams()):
        c, thr = 2.033, float("nan")
        xi = {t: np.zeros(len(VF_TERMS if t == "vf" else SLIP_TERMS)) for t in TARGETS}
        for raw in Path(path).read_text().splitlines():
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, val = line[1:].partition("=")
                if key.strip() == "c":
                    c = float(val)
                elif key.strip() == "threshold":
                    thr = float(val)
                continue
            tgt, name, val = line.split()
            names = VF_TERMS if tgt == "vf" else SLIP_TERMS
            if tgt not in xi or name not in names:
                raise ValueError(f"{path}: unknown term {tgt} {name}")
            xi[tgt][names.index(name)] = float(val)
        return cls(xi["vf"], xi["alpha_f"], xi["alpha_r"], c, steering, thr, description=f"sparse model from {path}")


def appendix_d_reference(steering=SteeringParams()):
    """The published sparse model, read from the shipped coefficient file."""
    return SparseModel.load(Path(__file__).with_name("data") / "appendix_d.txt", steering)


def transition_pairs(data, params: NeParams = NeParams()):
    """(X_k, U_k, targets_{k+1}) over all valid consecutive pairs."""
    if data.kin_states is None:
        raise ValueError("data carries no kinematic states")
    mask = data.pair_mask()
    idx = np.flatnonzero(mask)
    return data.kin_states[idx], data.inputs[idx], data.kin_states[idx + 1, :3]


def fit_ksindy(data: Trajectory, threshold=0.02, params: NeParams = NeParams()):
    X, U, Y = transition_pairs(data, params)
    lv = build_vf_library(params.motor.c, params.steering)
    ls = build_slip_library(params.motor.c, params.steering)
    if X.shape[0] <= max(len(lv), len(ls)):
        raise ValueError("insufficient data for the candidate libraries")
    rv = stlsq(Y[:, 0], lv.evaluate(X, U), threshold)
    rs = stlsq(Y[:, 1:], ls.evaluate(X, U), threshold)
    meta = {"samples": int(X.shape[0]), "residual": [float(r) for r in (*rv.residual, *rs.residual)]}
    return SparseModel(rv.xi[0], rs.xi[0], rs.xi[1], params.motor.c, params.steering, float(threshold), meta,
                       description=f"K-SINDy (threshold {threshold})")


def threshold_sweep(data: Trajectory, thresholds, params: NeParams = NeParams()):
    """Support size and residual per target for each threshold."""
    rows = []
    for thr in thresholds:
        m = fit_ksindy(data, thr, params)
        rows.append({"threshold": float(thr),
                     "support": [int(np.count_nonzero(x)) for x in (m.xi_vf, m.xi_alpha_f, m.xi_alpha_r)],
                     "residual": m.meta["residual"]})
    return rows
