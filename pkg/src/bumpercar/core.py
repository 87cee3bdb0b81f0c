"""Shared value types, trajectory container and CSV I/O, NMSE, planar kinematics."""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

from ._accel import kernel

T_SAMPLE = 0.1  # s, every discrete model runs at 10 Hz

CSV_COLUMNS = ("t", "px", "py", "theta", "vx", "vy", "omega", "vf", "alpha_f", "alpha_r", "delta", "us", "um")


class DimensionError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


class DomainError(ValueError):
    pass


class Pose(NamedTuple):
    p_x: float
    p_y: float
    theta: float  # unwrapped


class BodyVelocity(NamedTuple):
    v_x: float
    v_y: float
    omega: float


class DriverInput(NamedTuple):
    u_s: float
    u_m: float


class KinematicState(NamedTuple):
    v_f: float
    alpha_f: float
    alpha_r: float
    delta: float


@dataclass(frozen=True)
class NormalizationWeights:
    diag: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.diag, dtype=float).ravel()
        if d.size == 0 or not np.all(np.isfinite(d)) or np.any(d <= 0):
            raise ValueError("normalization weights must be positive and finite")
        object.__setattr__(self, "diag", d)

    @classmethod
    def from_targets(cls, targets):
        """``W = diag(1/sigma)`` from per-channel standard deviations."""
        sd = np.std(np.asarray(targets, dtype=float), axis=0)
        sd = np.where(sd > 1e-12, sd, 1.0)
        return cls(1.0 / sd)

    @classmethod
    def ones(cls, n):
        return cls(np.ones(n))

    def tolist(self):
        return [float(x) for x in self.diag]


def nmse(predicted, measured, weights: NormalizationWeights):
    """(1/nN) sum_k ||W (q_hat_k - q_k)||^2 for equally shaped (N, n) sequences."""
    q_hat = np.asarray(predicted, dtype=float)
    q = np.asarray(measured, dtype=float)
    if q_hat.ndim == 1:
        q_hat = q_hat[:, None]
    if q.ndim == 1:
        q = q[:, None]
    if q_hat.shape != q.shape or q.shape[0] < 1:
        raise DimensionError(f"shape mismatch: {q_hat.shape} vs {q.shape}")
    if weights.diag.shape[0] != q.shape[1]:
        raise DimensionError(f"{weights.diag.shape[0]} weights for {q.shape[1]} channels")
    if not (np.all(np.isfinite(q_hat)) and np.all(np.isfinite(q))):
        raise NumericError("non-finite entries in nmse input")
    r = (q_hat - q) * weights.diag
    return float(np.mean(r * r))


@kernel
def _body_to_world(theta, vx, vy):
    c, s = math.cos(theta), math.sin(theta)
    return c * vx - s * vy, s * vx + c * vy


@kernel
def _integrate_pose(px, py, th, vx, vy, om, dt):
    # RK4 on p' = R(theta) v with v frozen; stages 2 and 3 coincide. The
    # stage headings theta + k*om*dt/2 come from angle addition (2 sincos, not 3).
    c1, s1 = math.cos(th), math.sin(th)
    ch, sh = math.cos(0.5 * dt * om), math.sin(0.5 * dt * om)
    c2, s2 = c1 * ch - s1 * sh, s1 * ch + c1 * sh
    c3, s3 = c2 * ch - s2 * sh, s2 * ch + c2 * sh
    cs = c1 + 4.0 * c2 + c3
    ss = s1 + 4.0 * s2 + s3
    return (px + dt * (cs * vx - ss * vy) / 6.0,
            py + dt * (ss * vx + cs * vy) / 6.0,
            th + dt * om)


def body_to_world(pose: Pose, v: BodyVelocity):
    """World-frame pose rate (px_dot, py_dot, theta_dot)."""
    xd, yd = _body_to_world(float(pose[2]), float(v[0]), float(v[1]))
    return (xd, yd, float(v[2]))


def world_to_body(pose: Pose, rate):
    c, s = math.cos(pose[2]), math.sin(pose[2])
    return BodyVelocity(c * rate[0] + s * rate[1], -s * rate[0] + c * rate[1], rate[2])


def integrate_pose(pose: Pose, v: BodyVelocity, dt: float) -> Pose:
    if not dt > 0:
        raise ValueError("dt must be positive")
    return Pose(*_integrate_pose(float(pose[0]), float(pose[1]), float(pose[2]),
                                 float(v[0]), float(v[1]), float(v[2]), float(dt)))


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    w = np.mod(np.asarray(a, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
    w = np.where(w == -np.pi, np.pi, w)
    return float(w) if np.ndim(w) == 0 else w


def _frozen(a, width):
    if a is None:
        return None
    a = np.array(a, dtype=float)
    if width is not None:
        a = a.reshape(-1, width)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Uniformly sampled record; arrays are (N, k) and read-only.

    ``segment_starts`` marks indices where a new contiguous piece begins (a
    dataset with a window cut out of the middle has two); ``excluded`` flags
    samples (wall contacts) that may not start or end a training pair.
    """

    timestamps: np.ndarray
    poses: np.ndarray
    inputs: np.ndarray
    velocities: Optional[np.ndarray] = None
    kin_states: Optional[np.ndarray] = None
    segment_starts: tuple = (0,)
    excluded: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        t = _frozen(self.timestamps, None).ravel()
        object.__setattr__(self, "timestamps", t)
        n = t.shape[0]
        for name, width in (("poses", 3), ("inputs", 2), ("velocities", 3), ("kin_states", 4)):
            arr = _frozen(getattr(self, name), width)
            if arr is not None and arr.shape[0] != n:
                raise DimensionError(f"{name} has {arr.shape[0]} rows, expected {n}")
            object.__setattr__(self, name, arr)
        starts = tuple(sorted({0, *(int(s) for s in self.segment_starts)})) if n else (0,)
        object.__setattr__(self, "segment_starts", starts)
        ex = np.zeros(n, bool) if self.excluded is None else np.array(self.excluded, dtype=bool).ravel()
        if ex.shape[0] != n:
            raise DimensionError("excluded mask length mismatch")
        ex.flags.writeable = False
        object.__setattr__(self, "excluded", ex)
        bounds = list(starts) + [n]
        for a, b in zip(bounds[:-1], bounds[1:]):
            if b - a > 1:
                dt = np.diff(t[a:b])
                if np.any(np.abs(dt - T_SAMPLE) > 1e-6):
                    raise ValueError("trajectory must be sampled uniformly at 10 Hz")

    def __len__(self):
        return self.timestamps.shape[0]

    @property
    def duration(self):
        return len(self) * T_SAMPLE

    def pair_mask(self, lag=0):
        """Boolean mask over k: samples k-lag..k+1 are contiguous and not excluded."""
        n = len(self)
        ok = np.zeros(n, bool)
        if n < lag + 2:
            return ok
        bounds = list(self.segment_starts) + [n]
        for a, b in zip(bounds[:-1], bounds[1:]):
            ok[a + lag:b - 1] = True
        bad = self.excluded
        for j in range(-lag, 2):
            shifted = np.zeros(n, bool)
            lo, hi = max(0, -j), min(n, n - j)
            shifted[lo:hi] = bad[lo + j:hi + j]
            ok &= ~shifted
        return ok

    def slice(self, start, stop):
        sel = slice(start, stop)
        starts = [s - start for s in self.segment_starts if start < s < stop]
        return Trajectory(
            self.timestamps[sel], self.poses[sel], self.inputs[sel],
            None if self.velocities is None else self.velocities[sel],
            None if self.kin_states is None else self.kin_states[sel],
            tuple(starts), self.excluded[sel], dict(self.meta),
        )

    def with_(self, **changes):
        kw = dict(timestamps=self.timestamps, poses=self.poses, inputs=self.inputs,
                  velocities=self.velocities, kin_states=self.kin_states,
                  segment_starts=self.segment_starts, excluded=self.excluded, meta=dict(self.meta))
        kw.update(changes)
        return Trajectory(**kw)


def concatenate(parts):
    """Join trajectories end to end; each part becomes its own segment."""
    parts = [p for p in parts if len(p)]
    if not parts:
        raise ValueError("nothing to concatenate")
    starts, off = [], 0
    for p in parts:
        starts += [off + s for s in p.segment_starts]
        off += len(p)

    def cat(name):
        arrs = [getattr(p, name) for p in parts]
        return None if any(a is None for a in arrs) else np.concatenate(arrs)

    return Trajectory(cat("timestamps"), cat("poses"), cat("inputs"), cat("velocities"),
                      cat("kin_states"), tuple(starts), cat("excluded"), dict(parts[0].meta))


def _fmt(x):
    return "" if not np.isfinite(x) else repr(float(x))


def write_csv(traj: Trajectory, path):
    """Write the CSV plus a ``.meta.json`` sidecar for segments/exclusions/metadata."""
    n = len(traj)
    cols = np.full((n, len(CSV_COLUMNS)), np.nan)
    cols[:, 0] = traj.timestamps
    cols[:, 1:4] = traj.poses
    if traj.velocities is not None:
        cols[:, 4:7] = traj.velocities
    if traj.kin_states is not None:
        cols[:, 7:11] = traj.kin_states
    cols[:, 11:13] = traj.inputs
    lines = [",".join(CSV_COLUMNS)]
    lines += [",".join(_fmt(x) for x in row) for row in cols]
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    side = {
        "segment_starts": list(traj.segment_starts),
        "excluded": [int(i) for i in np.flatnonzero(traj.excluded)],
        "meta": traj.meta,
    }
    Path(str(path) + ".meta.json").write_text(json.dumps(side, indent=1, sort_keys=True) + "\n")


def read_csv(path) -> Trajectory:
    path = Path(path)
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if tuple(header[:len(CSV_COLUMNS)]) != CSV_COLUMNS:
            raise ValueError(f"{path}: unexpected header {header}")
        rows = [line.rstrip("\n").split(",") for line in fh if line.strip()]
    data = np.array([[float(x) if x != "" else np.nan for x in r[:len(CSV_COLUMNS)]] for r in rows]).reshape(-1, 13)

    def block(lo, hi, required):
        b = data[:, lo:hi]
        if np.all(np.isnan(b)):
            if required:
                raise ValueError(f"{path}: missing required columns {CSV_COLUMNS[lo:hi]}")
            return None
        if np.any(np.isnan(b)):
            raise ValueError(f"{path}: partially empty columns {CSV_COLUMNS[lo:hi]}")
        return b

    kw = {}
    side = Path(str(path) + ".meta.json")
    if side.exists():
        info = json.loads(side.read_text())
        ex = np.zeros(len(data), bool)
        ex[np.asarray(info.get("excluded", []), dtype=int)] = True
        kw = dict(segment_starts=tuple(info.get("segment_starts", [0])), excluded=ex, meta=info.get("meta", {}))
    return Trajectory(block(0, 1, True)[:, 0], block(1, 4, True), block(11, 13, True),
                      block(4, 7, False), block(7, 11, False), **kw)
