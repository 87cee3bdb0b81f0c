"""Small numpy MLP stack (ReLU, dropout, Adam with step decay) and the learned transition models."""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .actuators import SteeringParams, _steer_step
from .core import T_SAMPLE, DimensionError, NumericError, Trajectory
from .dyn_kin import HALF_PI, g_kin
from .dyn_ne import _integrate_pose
from .params import NeParams

FORMAT_VERSION = 1


class Mlp:
    """Dense ReLU network with identity output and frozen input/output standardization.

    The training objective is the mean squared error in standardized output
    units, which equals the NMSE with ``W = diag(1/sigma_y)``.
    """

    def __init__(self, sizes, dropout=0.1, seed=0):
        sizes = [int(s) for s in sizes]
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError("need at least input and output sizes")
        if not 0.0 <= dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        self.sizes = sizes
        self.dropout = float(dropout)
        rng = np.random.default_rng(seed)
        self.W, self.b = [], []
        for a, b in zip(sizes[:-1], sizes[1:]):
            lim = np.sqrt(6.0 / a)  # He-uniform
            self.W.append(rng.uniform(-lim, lim, size=(a, b)))
            self.b.append(np.zeros(b))
        self.x_mean, self.x_std = np.zeros(sizes[0]), np.ones(sizes[0])
        self.y_mean, self.y_std = np.zeros(sizes[-1]), np.ones(sizes[-1])

    @property
    def n_in(self):
        return self.sizes[0]

    @property
    def n_out(self):
        return self.sizes[-1]

    def params(self):
        return self.W + self.b

    def set_params(self, values):
        n = len(self.W)
        self.W = [np.array(v, float) for v in values[:n]]
        self.b = [np.array(v, float) for v in values[n:]]

    def fit_normalization(self, X, Y):
        X, Y = np.asarray(X, float), np.asarray(Y, float)
        sx, sy = X.std(axis=0), Y.std(axis=0)
        self.x_mean, self.x_std = X.mean(axis=0), np.where(sx > 1e-12, sx, 1.0)
        self.y_mean, self.y_std = Y.mean(axis=0), np.where(sy > 1e-12, sy, 1.0)

    def normalize_x(self, X):
        return (X - self.x_mean) / self.x_std

    def normalize_y(self, Y):
        return (Y - self.y_mean) / self.y_std

    def _check(self, X):
        X = np.asarray(X, float)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if X.shape[1] != self.n_in:
            raise DimensionError(f"expected {self.n_in} input features, got {X.shape[1]}")
        return X, single

    def forward_normalized(self, Z, training=False, rng=None):
        """Map standardized inputs to standardized outputs; returns (output, cache)."""
        acts, masks = [Z], []
        h = Z
        last = len(self.W) - 1
        for i, (W, b) in enumerate(zip(self.W, self.b)):
            h = h @ W + b
            if i < last:
                h = np.maximum(h, 0.0)
                if training and self.dropout > 0:
                    keep = 1.0 - self.dropout
                    m = (rng.random(h.shape) < keep) / keep
                    h = h * m
                    masks.append(m)
                else:
                    masks.append(None)
            acts.append(h)
        return h, (acts, masks)

    def forward(self, X, training=False, rng=None):
        X, single = self._check(X)
        if training and rng is None:
            raise ValueError("training mode needs an rng for dropout")
        out, _ = self.forward_normalized(self.normalize_x(X), training, rng)
        y = out * self.y_std + self.y_mean
        return y[0] if single else y

    __call__ = forward

    def backward(self, cache, grad_out, weight_decay=0.0):
        """Parameter gradients given dLoss/d(standardized output); weight decay adds ``lambda W``."""
        acts, masks = cache
        gW, gb = [None] * len(self.W), [None] * len(self.W)
        g = grad_out
        for i in range(len(self.W) - 1, -1, -1):
            gW[i] = acts[i].T @ g + weight_decay * self.W[i]
            gb[i] = g.sum(axis=0)
            if i > 0:
                g = g @ self.W[i].T
                if masks[i - 1] is not None:
                    g = g * masks[i - 1]
                g = g * (acts[i] > 0.0)
        return gW + gb

    def loss_and_grad(self, Zx, Zy, weight_decay=0.0, training=False, rng=None):
        """Standardized-space MSE plus ``lambda/2 ||W||^2`` and its gradient."""
        out, cache = self.forward_normalized(Zx, training, rng)
        r = out - Zy
        n = r.size
        loss = float(np.sum(r * r) / n) + 0.5 * weight_decay * sum(float(np.sum(W * W)) for W in self.W)
        grads = self.backward(cache, 2.0 * r / n, weight_decay)
        return loss, grads

    def save(self, path, **extra):
        arrays = {f"W{i}": W for i, W in enumerate(self.W)}
        arrays.update({f"b{i}": b for i, b in enumerate(self.b)})
        np.savez(path, version=FORMAT_VERSION, sizes=np.array(self.sizes), dropout=self.dropout,
                 x_mean=self.x_mean, x_std=self.x_std, y_mean=self.y_mean, y_std=self.y_std, **arrays, **extra)

    @classmethod
    def from_npz(cls, z):
        if int(z["version"]) != FORMAT_VERSION:
            raise ValueError(f"unsupported network format {int(z['version'])}")
        net = cls(z["sizes"].tolist(), float(z["dropout"]))
        n = len(net.W)
        net.set_params([z[f"W{i}"] for i in range(n)] + [z[f"b{i}"] for i in range(n)])
        net.x_mean, net.x_std, net.y_mean, net.y_std = (np.array(z[k]) for k in ("x_mean", "x_std", "y_mean", "y_std"))
        return net


@dataclass
class TrainConfig:
    batch_size: int = 256
    weight_decay: float = 1e-5
    lr: float = 5e-5
    decay: float = 0.6
    decay_every: int = 40
    epochs: int = 400
    patience: int = 60
    holdout: float = 0.1  # trailing fraction used for early stopping
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if self.lr < 0 or self.weight_decay < 0 or not 0 < self.decay <= 1:
            raise ValueError("invalid learning-rate settings")
        if not 0 <= self.holdout < 1:
            raise ValueError("holdout must be in [0, 1)")


@dataclass
class TrainResult:
    loss: list = field(default_factory=list)  # per-epoch training NMSE (standardized, dropout off)
    val_loss: list = field(default_factory=list)
    best_epoch: int = -1


def train(net: Mlp, X, Y, config: TrainConfig = TrainConfig(), normalize=True) -> TrainResult:
    """Adam with step decay; early stop on the time-contiguous trailing holdout.

    ``X``/``Y`` must be in time order so the holdout is the last segment.
    Parameters of the epoch with the best holdout loss are restored.
    """
    X, Y = np.asarray(X, float), np.asarray(Y, float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if X.shape[0] == 0 or X.shape[0] != Y.shape[0]:
        raise ValueError("dataset must be nonempty with matching rows")
    if X.shape[1] != net.n_in or Y.shape[1] != net.n_out:
        raise DimensionError("dataset shape does not match the network")
    n_hold = int(config.holdout * X.shape[0]) if X.shape[0] >= 20 else 0
    n_fit = X.shape[0] - n_hold
    if normalize:
        net.fit_normalization(X[:n_fit], Y[:n_fit])
    Zx, Zy = net.normalize_x(X), net.normalize_y(Y)
    Fx, Fy, Hx, Hy = Zx[:n_fit], Zy[:n_fit], Zx[n_fit:], Zy[n_fit:]
    rng = np.random.default_rng(config.seed)
    params = net.params()
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    t = 0
    res = TrainResult()
    best, best_params, stale = np.inf, [p.copy() for p in params], 0
    for epoch in range(config.epochs):
        lr = config.lr * config.decay ** (epoch // config.decay_every)
        order = rng.permutation(n_fit)
        for s in range(0, n_fit, config.batch_size):
            idx = order[s:s + config.batch_size]
            _, grads = net.loss_and_grad(Fx[idx], Fy[idx], config.weight_decay, True, rng)
            t += 1
            c1, c2 = 1.0 - config.beta1 ** t, 1.0 - config.beta2 ** t
            for p, g, mi, vi in zip(params, grads, m, v):
                mi *= config.beta1
                mi += (1.0 - config.beta1) * g
                vi *= config.beta2
                vi += (1.0 - config.beta2) * g * g
                p -= lr * (mi / c1) / (np.sqrt(vi / c2) + config.eps)
        out, _ = net.forward_normalized(Fx)
        loss = float(np.mean((out - Fy) ** 2))
        if not np.isfinite(loss):
            raise NumericError(f"training loss became non-finite at epoch {epoch}")
        res.loss.append(loss)
        if n_hold:
            hv = float(np.mean((net.forward_normalized(Hx)[0] - Hy) ** 2))
            res.val_loss.append(hv)
            score = hv
        else:
            score = loss
        if score < best:
            best, best_params, stale, res.best_epoch = score, [p.copy() for p in params], 0, epoch
        else:
            stale += 1
            if n_hold and stale >= config.patience:
                break
    if config.epochs:
        for p, q in zip(params, best_params):
            p[...] = q
    return res


# -- learned transition models ---------------------------------------------------------


def _kin_pairs(data: Trajectory):
    if data.kin_states is None:
        raise ValueError("data carries no kinematic states")
    idx = np.flatnonzero(data.pair_mask())
    if idx.size == 0:
        raise ValueError("no valid transition pairs")
    X = np.column_stack([data.kin_states[idx], data.inputs[idx]])
    return X, data.kin_states[idx + 1, :3]


class KinematicMlp:
    """K-MLP: (v_f, alpha_f, alpha_r, delta, u_s, u_m)_k -> (v_f, alpha_f, alpha_r)_{k+1}."""

    kind = "kmlp"

    def __init__(self, net: Mlp, description="K-MLP"):
        self.net = net
        self.description = description

    def step(self, x, u):
        return np.asarray(self.net(np.concatenate([np.asarray(x, float), np.asarray(u, float)])))

    def step_many(self, X, U):
        return self.net(np.column_stack([X, U]))

    def rollout_arrays(self, x0, pose0, U, params: NeParams):
        return _kin_rollout(self.step, x0, pose0, U, params)

    def save(self, path):
        self.net.save(path, kind=self.kind)


class ResidualModel:
    """K-SINDy-MLP: sparse base transition plus a learned one-step residual."""

    kind = "residual"

    def __init__(self, base, net: Mlp, description="K-SINDy-MLP"):
        self.base = base
        self.net = net
        self.description = description
        self.residual_enabled = True

    def step(self, x, u):
        y = self.base.step(x, u)
        if self.residual_enabled:
            y = y + self.net(np.concatenate([np.asarray(x, float), np.asarray(u, float)]))
        return y

    def step_many(self, X, U):
        y = self.base.step_many(X, U)
        if self.residual_enabled:
            y = y + self.net(np.column_stack([X, U]))
        return y

    def rollout_arrays(self, x0, pose0, U, params: NeParams):
        return _kin_rollout(self.step, x0, pose0, U, params)

    def save(self, path):
        b = self.base
        self.net.save(path, kind=self.kind, xi_vf=b.xi_vf, xi_alpha_f=b.xi_alpha_f, xi_alpha_r=b.xi_alpha_r,
                      c=b.c, threshold=b.threshold)


def _kin_rollout(step, x0, pose0, U, params: NeParams):
    """Shared closed-loop loop for learned kinematic models (mirrors ``dyn_kin.rollout``)."""
    n = U.shape[0]
    X, V, P = np.full((n, 4), np.nan), np.full((n, 3), np.nan), np.full((n, 3), np.nan)
    X[0], P[0] = x0, pose0
    lf, lr, pr = params.l_f, params.l_r, params.printed_tire_frame
    V[0] = g_kin(X[0], lf, lr, pr)
    s = params.steering
    for k in range(n - 1):
        y = step(X[k], U[k])
        if not np.all(np.isfinite(y)) or abs(y[1]) >= HALF_PI or abs(y[2]) >= HALF_PI:
            return X, V, P, k
        X[k + 1] = (max(y[0], 0.0), y[1], y[2], _steer_step(X[k, 3], U[k, 0], T_SAMPLE, s.delta_max, s.d, s.T_s))
        V[k + 1] = g_kin(X[k + 1], lf, lr, pr)
        m = 0.5 * (V[k] + V[k + 1])
        P[k + 1] = _integrate_pose(P[k, 0], P[k, 1], P[k, 2], m[0], m[1], m[2], T_SAMPLE)
    return X, V, P, -1


NARX_LAG = 2


def narx_features(V, U):
    """Rows k >= 2: [v_k, v_{k-1}, v_{k-2}, u_k, u_{k-1}, u_{k-2}] (15 features)."""
    V, U = np.asarray(V, float), np.asarray(U, float)
    if V.shape[0] <= NARX_LAG:
        raise ValueError("trajectory shorter than the NARX lag window")
    cols = [V[NARX_LAG - j:V.shape[0] - j] for j in range(NARX_LAG + 1)]
    cols += [U[NARX_LAG - j:U.shape[0] - j] for j in range(NARX_LAG + 1)]
    return np.column_stack(cols)


class NarxModel:
    """NARX-MLP on body-frame velocities with two lags of output and input."""

    kind = "narx"
    description = "NARX-MLP"

    def __init__(self, net: Mlp):
        self.net = net

    def predict_one_step(self, V, U):
        return self.net(narx_features(V, U))

    def rollout(self, v_hist, U):
        """Autoregressive rollout; ``v_hist`` holds the first three velocities."""
        U = np.asarray(U, float)
        n = U.shape[0]
        V = np.full((n, 3), np.nan)
        h = min(NARX_LAG + 1, n)
        V[:h] = v_hist[:h]
        for k in range(NARX_LAG, n - 1):
            f = np.concatenate([V[k], V[k - 1], V[k - 2], U[k], U[k - 1], U[k - 2]])
            y = self.net(f)
            if not np.all(np.isfinite(y)):
                return V, k
            V[k + 1] = y
        return V, -1

    def save(self, path):
        self.net.save(path, kind=self.kind)


def narx_mlp(data: Trajectory, hidden=(256, 128), config: TrainConfig = TrainConfig(), dropout=0.1):
    if data.velocities is None:
        raise ValueError("data carries no velocities")
    if len(data) <= NARX_LAG + 1:
        raise ValueError("trajectory shorter than the NARX lag window")
    F = narx_features(data.velocities, data.inputs)  # row j <-> sample k = j + 2
    k = np.arange(NARX_LAG, len(data))
    ok = data.pair_mask(NARX_LAG)[k]
    X, Y = F[ok], data.velocities[k[ok] + 1]
    net = Mlp([X.shape[1], *hidden, 3], dropout, config.seed)
    res = train(net, X, Y, config)
    model = NarxModel(net)
    model.train_result = res
    return model


def k_mlp(data: Trajectory, hidden=(256, 128), config: TrainConfig = TrainConfig(), dropout=0.1):
    X, Y = _kin_pairs(data)
    net = Mlp([6, *hidden, 3], dropout, config.seed)
    res = train(net, X, Y, config)
    model = KinematicMlp(net)
    model.train_result = res
    return model


def ksindy_mlp(data: Trajectory, base, hidden=(128, 64), config: TrainConfig = TrainConfig(), dropout=0.1):
    """Residual net on ``x_{k+1} - f_base(x_k, u_k)``; half-size hidden layers."""
    X, Y = _kin_pairs(data)
    R = Y - base.step_many(X[:, :4], X[:, 4:])
    net = Mlp([6, *hidden, 3], dropout, config.seed)
    res = train(net, X, R, config)
    model = ResidualModel(base, net)
    model.train_result = res
    return model


def load_model(path, steering: SteeringParams = SteeringParams()):
    """Load any network saved by the models above."""
    from .ident_sindy import SparseModel

    with np.load(path, allow_pickle=False) as z:
        net = Mlp.from_npz(z)
        kind = str(z["kind"])
        if kind == "narx":
            return NarxModel(net)
        if kind == "kmlp":
            return KinematicMlp(net)
        if kind == "residual":
            base = SparseModel(z["xi_vf"], z["xi_alpha_f"], z["xi_alpha_r"], float(z["c"]), steering,
                               float(z["threshold"]))
            return ResidualModel(base, net)
    raise ValueError(f"unknown model kind {kind!r}")
