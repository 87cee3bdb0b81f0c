"""Synthetic data generation, dataset splitting and the closed-loop evaluation protocol."""

import json
import platform
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import __version__
from ._accel import backend_name, kernel
from .core import T_SAMPLE, NormalizationWeights, NumericError, Trajectory, concatenate, nmse
from .dyn_ne import _integrate_pose, _ne_step, _p, kinematic_labels, ne_rollout
from .params import NeParams

PATTERNS = ("constant", "ramp", "sinusoid", "bang-bang", "filtered-noise")
ARENA = (7.0, 12.0)
BOUNCE_GUARD = 10  # samples after a wall contact kept out of training pairs
U_M_MAX = 1.0


@dataclass(frozen=True)
class Pattern:
    kind: str
    value: float = 0.0  # constant level, or offset for the periodic/noise kinds
    end: float = 0.0  # ramp end level
    amplitude: float = 0.0
    freq: float = 0.0  # Hz; for bang-bang the switching frequency
    phase: float = 0.0
    tau: float = 0.5  # filtered-noise time constant, s

    def __post_init__(self):
        if self.kind not in PATTERNS:
            raise ValueError(f"unknown pattern {self.kind!r}; expected one of {PATTERNS}")
        if self.kind == "filtered-noise" and not self.tau > 0:
            raise ValueError("filtered-noise needs tau > 0")

    def sample(self, t, rng):
        k = self.kind
        if k == "constant":
            return np.full_like(t, self.value)
        if k == "ramp":
            frac = t / t[-1] if t[-1] > 0 else np.zeros_like(t)
            return self.value + (self.end - self.value) * frac
        arg = 2.0 * np.pi * self.freq * t + self.phase
        if k == "sinusoid":
            return self.value + self.amplitude * np.sin(arg)
        if k == "bang-bang":
            return self.value + self.amplitude * np.where(np.sin(arg) >= 0, 1.0, -1.0)
        a = np.exp(-T_SAMPLE / self.tau)
        w = rng.standard_normal(t.shape[0]) * self.amplitude * np.sqrt(1.0 - a * a)
        out = np.empty_like(t)
        s = rng.standard_normal() * self.amplitude
        for i in range(t.shape[0]):
            s = a * s + w[i]
            out[i] = s
        return self.value + out

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass(frozen=True)
class Segment:
    duration: float
    u_s: Pattern
    u_m: Pattern


@dataclass(frozen=True)
class ExcitationProfile:
    segments: tuple
    seed: int = 0

    def __post_init__(self):
        if not self.segments or sum(s.duration for s in self.segments) <= 0:
            raise ValueError("profile must have positive total duration")
        if any(s.duration <= 0 for s in self.segments):
            raise ValueError("segment durations must be positive")

    @property
    def duration(self):
        return sum(s.duration for s in self.segments)

    def inputs(self, delta_max=NeParams().steering.delta_max):
        """(N, 2) command sequence clipped to the actuator ranges."""
        rng = np.random.default_rng(self.seed)
        cols = []
        for seg in self.segments:
            n = int(round(seg.duration / T_SAMPLE))
            t = np.arange(n) * T_SAMPLE
            cols.append(np.column_stack([seg.u_s.sample(t, rng), seg.u_m.sample(t, rng)]))
        U = np.concatenate(cols)
        U[:, 0] = np.clip(U[:, 0], -delta_max, delta_max)
        U[:, 1] = np.clip(U[:, 1], -U_M_MAX, U_M_MAX)
        return U

    @classmethod
    def from_dict(cls, d, seed=None):
        seed = d.get("seed", 0) if seed is None else seed
        if "rich" in d:
            r = d["rich"]
            return rich_profile(float(r.get("duration", 600.0)), seed, float(r.get("max_segment", 8.0)))
        segs = tuple(Segment(float(s["duration"]), Pattern.from_dict(s["u_s"]), Pattern.from_dict(s["u_m"]))
                     for s in d.get("segment", []))
        return cls(segs, seed)

    @classmethod
    def load(cls, path, seed=None):
        import tomli

        with open(path, "rb") as fh:
            return cls.from_dict(tomli.load(fh), seed)


def zero_profile(duration):
    z = Pattern("constant")
    return ExcitationProfile((Segment(duration, z, z),))


def _random_pattern(rng, lo, hi, steer):
    kind = PATTERNS[rng.integers(len(PATTERNS))]
    span = hi - lo
    if kind == "constant":
        return Pattern(kind, value=rng.uniform(lo, hi))
    if kind == "ramp":
        return Pattern(kind, value=rng.uniform(lo, hi), end=rng.uniform(lo, hi))
    amp = rng.uniform(0.1, 0.5) * span
    off = rng.uniform(lo + amp, hi - amp) if hi - lo > 2 * amp else 0.5 * (lo + hi)
    if kind == "filtered-noise":
        return Pattern(kind, value=off, amplitude=amp, tau=rng.uniform(0.2, 2.0) if steer else rng.uniform(0.5, 3.0))
    return Pattern(kind, value=off, amplitude=amp, freq=rng.uniform(0.05, 1.0), phase=rng.uniform(0, 2 * np.pi))


def rich_profile(duration, seed=0, max_segment=8.0, delta_max=NeParams().steering.delta_max):
    """Random mix of all pattern kinds covering the full steering range and both drive directions."""
    rng = np.random.default_rng([seed, 0x70F17E])
    segs, total = [], 0.0
    while total < duration - 1e-9:
        d = min(round(rng.uniform(2.0, max_segment), 1), round(duration - total, 1))
        # throttle biased forward like a human driver, with brake and reverse pulses
        segs.append(Segment(d, _random_pattern(rng, -delta_max, delta_max, True),
                            _random_pattern(rng, -0.6, 1.0, False)))
        total += d
    return ExcitationProfile(tuple(segs), seed)


@kernel
def _generate(U, p, x0, arena, V, D, P, bounce):
    """NE rollout with a crude wall bounce; returns the failing step or -1."""
    n = U.shape[0]
    P[0, 0], P[0, 1], P[0, 2] = x0[0], x0[1], x0[2]
    V[0, 0], V[0, 1], V[0, 2] = x0[3], x0[4], x0[5]
    D[0] = x0[6]
    for k in range(n - 1):
        vx, vy, om, dl, st = _ne_step(V[k, 0], V[k, 1], V[k, 2], D[k], U[k, 0], U[k, 1], p)
        if st != 0.0 or not (np.isfinite(vx) and np.isfinite(vy) and np.isfinite(om)):
            return k
        px, py, th = _integrate_pose(P[k, 0], P[k, 1], P[k, 2], 0.5 * (V[k, 0] + vx), 0.5 * (V[k, 1] + vy),
                                     0.5 * (V[k, 2] + om), 0.1)
        hit_x = px < 0.0 or px > arena[0]
        hit_y = py < 0.0 or py > arena[1]
        if hit_x or hit_y:
            px = min(max(px, 0.0), arena[0])
            py = min(max(py, 0.0), arena[1])
            # reflect the direction of travel, keeping the body-frame slip
            # pattern, so a car moving sideways or backwards also leaves the wall
            psi = np.arctan2(0.5 * (V[k, 1] + vy), 0.5 * (V[k, 0] + vx))
            phi = th + psi
            if hit_x:
                phi = np.pi - phi
            if hit_y:
                phi = -phi
            th = phi - psi
            vx, vy, om = 0.0, 0.0, 0.0
            bounce[k + 1] = True
        V[k + 1, 0], V[k + 1, 1], V[k + 1, 2], D[k + 1] = vx, vy, om, dl
        P[k + 1, 0], P[k + 1, 1], P[k + 1, 2] = px, py, th
    return -1


def generate_dataset(profile: ExcitationProfile, params: NeParams = NeParams(), noise=(0.0, 0.0, 0.0),
                     start=None, arena=ARENA) -> Trajectory:
    """Ground-truth NE trajectory with labels; Gaussian noise on the pose channels only.

    ``start`` is (px, py, theta); the default is the arena centre facing +x.
    """
    U = profile.inputs(params.steering.delta_max)
    n = U.shape[0]
    pose0 = (0.5 * arena[0], 0.5 * arena[1], 0.0) if start is None else tuple(start)
    x0 = np.array([*pose0, 0.0, 0.0, 0.0, 0.0])
    V, D, P = np.zeros((n, 3)), np.zeros(n), np.zeros((n, 3))
    bounce = np.zeros(n, bool)
    k = _generate(U, _p(params), x0, np.asarray(arena, float), V, D, P, bounce)
    if k >= 0:
        raise NumericError(f"NE model became stiff at t = {k * T_SAMPLE:.1f} s")
    sig = np.asarray(noise, float)
    if np.any(sig < 0):
        raise ValueError("noise sigmas must be non-negative")
    rng = np.random.default_rng([profile.seed, 0x9015E])
    Pn = P + rng.standard_normal(P.shape) * sig if np.any(sig > 0) else P
    hits = np.flatnonzero(bounce)
    excluded = bounce.copy()
    for h in hits:
        excluded[h:h + BOUNCE_GUARD + 1] = True
    meta = {"source": "ne-generator", "seed": int(profile.seed), "noise": [float(s) for s in sig],
            "bounce": [int(h) for h in hits]}
    return Trajectory(np.arange(n) * T_SAMPLE, Pn, U, V, kinematic_labels(V, D, params), (0,), excluded, meta)


def split_dataset(data: Trajectory, validation_seconds=110.0, position: Optional[float] = None):
    """Cut a contiguous validation window; the default window is the final one.

    ``position`` is the window start in seconds. Training keeps everything else,
    as one trajectory with a segment boundary where the window was removed.
    """
    n, m = len(data), int(round(validation_seconds / T_SAMPLE))
    if m <= 0 or n <= m:
        raise ValueError(f"need more than {validation_seconds} s of data to split, have {n * T_SAMPLE:.1f} s")
    a = n - m if position is None else int(round(position / T_SAMPLE))
    if not 0 <= a <= n - m:
        raise ValueError("validation window falls outside the data")
    val = data.slice(a, a + m)
    pieces = [p for p in (data.slice(0, a), data.slice(a + m, n)) if len(p)]
    train = concatenate(pieces)
    bounce = [h for h in data.meta.get("bounce", []) if not a <= h < a + m]
    train = train.with_(meta={**data.meta, "bounce": [h if h < a else h - m for h in bounce], "role": "train"})
    vb = [h - a for h in data.meta.get("bounce", []) if a <= h < a + m]
    val = val.with_(meta={**data.meta, "bounce": vb, "role": "validation",
                          "window": [a * T_SAMPLE, (a + m) * T_SAMPLE]})
    return train, val


# -- closed-loop evaluation ------------------------------------------------------------


class NePredictor:
    """Newton-Euler model driven from the reference velocity and steering angle."""

    def __init__(self, params: NeParams = NeParams(), name="NE"):
        self.params = params
        self.name = name

    def run(self, ref: Trajectory):
        V, D, P, failed = ne_rollout(ref.velocities[0], ref.kin_states[0, 3], ref.poses[0], ref.inputs, self.params)
        return V, P, None, failed


class KinematicPredictor:
    """Any transition model over the kinematic state, rolled out through g_kin."""

    def __init__(self, model, name, params: NeParams = NeParams()):
        self.model = model
        self.name = name
        self.params = params

    def run(self, ref: Trajectory):
        from .nn import _kin_rollout

        U = np.ascontiguousarray(ref.inputs)
        x0, p0 = np.array(ref.kin_states[0]), np.array(ref.poses[0])
        fast = getattr(self.model, "rollout_arrays", None)
        if fast is not None:
            X, V, P, failed = fast(x0, p0, U, self.params)
        else:
            X, V, P, failed = _kin_rollout(self.model.step, x0, p0, U, self.params)
        return V, P, X, failed


class NarxPredictor:
    def __init__(self, model, name="NARX-MLP", params: NeParams = NeParams()):
        self.model = model
        self.name = name
        self.params = params

    def run(self, ref: Trajectory):
        V, failed = self.model.rollout(ref.velocities, ref.inputs)
        n = V.shape[0]
        P = np.full((n, 3), np.nan)
        P[0] = ref.poses[0]
        last = n - 1 if failed < 0 else failed
        for k in range(last):
            m = 0.5 * (V[k] + V[k + 1])
            P[k + 1] = _integrate_pose(P[k, 0], P[k, 1], P[k, 2], m[0], m[1], m[2], T_SAMPLE)
        return V, P, None, failed


def _pieces(ref: Trajectory, period=None):
    """Contiguous index ranges split at segment starts, wall contacts and every ``period`` samples."""
    n = len(ref)
    cuts = set(ref.segment_starts) | {int(b) for b in ref.meta.get("bounce", [])}
    if period is not None:
        cuts |= set(range(0, n, period))
    cuts = sorted(c for c in cuts if 0 <= c < n)
    return list(zip(cuts, cuts[1:] + [n]))


def _run_pieces(pred, ref: Trajectory, pieces, slices=None):
    n = len(ref)
    V, P = np.full((n, 3), np.nan), np.full((n, 3), np.nan)
    X = np.full((n, 4), np.nan)
    failed = -1
    slices = slices or [ref.slice(a, b) for a, b in pieces]
    for (a, b), part in zip(pieces, slices):
        v, p, x, f = pred.run(part)
        V[a:b], P[a:b] = v, p
        if x is not None:
            X[a:b] = x
        if f >= 0 and failed < 0:
            failed = a + f
    return V, P, X, failed


@dataclass
class EvalReport:
    models: list
    dataset: dict
    env: dict
    note: str = ("Ground truth is the Newton-Euler generator; NMSE values are oracle-relative, "
                 "not reproductions of measured-vehicle results.")

    def to_json(self):
        return json.dumps({"note": self.note, "models": self.models, "dataset": self.dataset, "env": self.env},
                          indent=2, sort_keys=False) + "\n"

    def table(self):
        lines = [self.note, "", f"{'model':<16}{'NMSE x1e3':>14}{'time [ms]':>12}  diverged at"]
        for m in self.models:
            nm = "inf" if m["nmse_e3"] is None else f"{m['nmse_e3']:.4f}"
            d = "-" if m["diverged_at"] is None else str(m["diverged_at"])
            lines.append(f"{m['name']:<16}{nm:>14}{m['time_ms']:>12.2f}  {d}")
        return "\n".join(lines) + "\n"


def environment():
    return {"python": platform.python_version(), "numpy": np.__version__, "backend": backend_name(),
            "machine": platform.machine(), "package": __version__}


def evaluate(models, validation: Trajectory, weights: Optional[NormalizationWeights] = None, repeats=5,
             dataset: Optional[dict] = None):
    """One closed-loop rollout per model over the whole validation window.

    Rollouts restart from the reference only at segment starts and generator
    wall contacts. NMSE uses the shared ``W`` (from the validation velocities
    unless given); the time is the median of ``repeats`` warm runs covering
    velocity and pose propagation, excluding I/O.
    """
    if validation.velocities is None or validation.kin_states is None:
        raise ValueError("validation data needs velocities and kinematic states")
    W = weights or NormalizationWeights.from_targets(validation.velocities)
    pieces = _pieces(validation)
    slices = [validation.slice(a, b) for a, b in pieces]
    rows, preds = [], {}
    for pred in models:
        _run_pieces(pred, validation, pieces, slices)  # warm-up (compilation, caches)
        times = []
        for _ in range(max(int(repeats), 1)):
            t0 = time.perf_counter()
            out = _run_pieces(pred, validation, pieces, slices)
            times.append(time.perf_counter() - t0)
        V, P, X, failed = out
        preds[pred.name] = out
        score = None if failed >= 0 else nmse(V, validation.velocities, W) * 1e3
        rows.append({"name": pred.name, "nmse_e3": score, "time_ms": float(np.median(times) * 1e3),
                     "diverged_at": None if failed < 0 else int(failed)})
    ds = {"samples": len(validation), "duration_s": round(len(validation) * T_SAMPLE, 3),
          "weights": W.tolist(), "restarts": [a for a, _ in pieces]}
    ds.update(dataset or {})
    report = EvalReport(rows, ds, environment())
    report.predictions = preds
    return report


@dataclass
class ReinitResult:
    predicted: Trajectory
    segments: list  # (start, stop, nmse)
    diverged_at: int = -1


def reinit_rollout(pred, reference: Trajectory, period=2.0, weights: Optional[NormalizationWeights] = None):
    """Closed-loop rollouts restarted from the reference every ``period`` seconds."""
    if reference.velocities is None or reference.kin_states is None:
        raise ValueError("reference needs velocities and kinematic states")
    W = weights or NormalizationWeights.from_targets(reference.velocities)
    step = max(int(round(period / T_SAMPLE)), 1)
    pieces = _pieces(reference, step)
    V, P, X, failed = _run_pieces(pred, reference, pieces)
    segs = []
    for a, b in pieces:
        ok = np.all(np.isfinite(V[a:b]))
        segs.append((a, b, nmse(V[a:b], reference.velocities[a:b], W) if ok else float("inf")))
    K = None if np.all(np.isnan(X)) else X
    out = Trajectory(reference.timestamps, P, reference.inputs, V, K, tuple(a for a, _ in pieces),
                     None, {"model": pred.name, "period_s": period})
    return ReinitResult(out, segs, failed)
