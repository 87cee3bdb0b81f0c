"""Genetic-algorithm fit of the unmeasured Newton-Euler parameters on one-step velocity NMSE."""

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from ._accel import USE_NUMBA, kernel
from .core import NormalizationWeights, Trajectory
from .dyn_ne import _ne_step, _p
from .params import FLAT_KEYS, OPTIMIZED, UNITS, NeParams

NUMERIC_KEYS = tuple(k for k in FLAT_KEYS if k != "printed_tire_frame")
FAILED = -1.0


@dataclass(frozen=True)
class ParamSpec:
    name: str
    value: float
    fixed: bool = True
    lower: float = float("nan")
    upper: float = float("nan")
    unit: str = ""

    def __post_init__(self):
        if self.name not in NUMERIC_KEYS:
            raise KeyError(f"unknown parameter {self.name!r}")
        if not self.fixed:
            if not self.lower < self.upper:
                raise ValueError(f"{self.name}: lower bound must be below upper bound")
            if self.lower * self.upper <= 0:
                raise ValueError(f"{self.name}: bounds must not straddle zero")


def default_spec(params: NeParams = NeParams(), free=OPTIMIZED, factor=(0.2, 5.0)):
    """Fixed parameters at their nominal value, free ones in [0.2x, 5x] (sign-preserving)."""
    flat = params.to_flat()
    out = []
    for key in NUMERIC_KEYS:
        v = float(flat[key])
        if key in free:
            lo, hi = sorted((v * factor[0], v * factor[1]))
            out.append(ParamSpec(key, v, False, lo, hi, UNITS[key]))
        else:
            out.append(ParamSpec(key, v, True, unit=UNITS[key]))
    return out


def write_spec(spec, path):
    lines = []
    for s in spec:
        lines.append(f"[{s.name}]  # {s.unit}")
        lines.append(f"value = {float(s.value)!r}")
        lines.append(f"fixed = {'true' if s.fixed else 'false'}")
        if not s.fixed:
            lines.append(f"lower = {float(s.lower)!r}")
            lines.append(f"upper = {float(s.upper)!r}")
        lines.append("")
    Path(path).write_text("\n".join(lines))


def read_spec(path):
    """Spec file: one table per parameter; missing parameters stay fixed at nominal."""
    import tomli

    with open(path, "rb") as fh:
        raw = tomli.load(fh)
    nominal = NeParams().to_flat()
    spec = []
    for key in NUMERIC_KEYS:
        t = raw.get(key, {})
        if not isinstance(t, dict):
            t = {"value": t}
        fixed = bool(t.get("fixed", True))
        spec.append(ParamSpec(key, float(t.get("value", nominal[key])), fixed,
                              float(t.get("lower", "nan")), float(t.get("upper", "nan")), UNITS[key]))
    unknown = set(raw) - set(NUMERIC_KEYS)
    if unknown:
        raise KeyError(f"unknown parameter(s) in spec: {sorted(unknown)}")
    return spec


@dataclass
class GaConfig:
    population_size: int = 150
    max_generations: int = 200
    elite_count: int = 2
    crossover_fraction: float = 0.8
    mutation_scale: float = 0.05  # fraction of the (log) range
    mutation_rate: float = 0.1
    tournament: int = 3
    blx_alpha: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.population_size < 2:
            raise ValueError("population_size must be at least 2")
        if not 0 <= self.elite_count < self.population_size:
            raise ValueError("elite_count must be below population_size")
        if self.max_generations < 0 or self.tournament < 1:
            raise ValueError("invalid generation count or tournament size")


@kernel
def _pair_nmse(V0, D0, U, V1, w, p):
    n = V0.shape[0]
    acc = 0.0
    for k in range(n):
        vx, vy, om, dl, st = _ne_step(V0[k, 0], V0[k, 1], V0[k, 2], D0[k], U[k, 0], U[k, 1], p)
        if st != 0.0 or not (np.isfinite(vx) and np.isfinite(vy) and np.isfinite(om)):
            return -1.0
        e0 = w[0] * (vx - V1[k, 0])
        e1 = w[1] * (vy - V1[k, 1])
        e2 = w[2] * (om - V1[k, 2])
        acc += e0 * e0 + e1 * e1 + e2 * e2
    return acc / (3.0 * n)


@dataclass(frozen=True)
class PairData:
    """Contiguous one-step pairs extracted from a labeled trajectory."""

    V0: np.ndarray
    D0: np.ndarray
    U: np.ndarray
    V1: np.ndarray
    w: np.ndarray

    @classmethod
    def from_trajectory(cls, data: Trajectory, weights: Optional[NormalizationWeights] = None):
        if data.velocities is None or data.kin_states is None:
            raise ValueError("GA data needs velocities and steering angles")
        mask = data.pair_mask()
        if len(data) < 2 or not mask.any():
            raise ValueError("need at least one consecutive sample pair")
        idx = np.flatnonzero(mask)
        V = data.velocities
        w = (weights or NormalizationWeights.from_targets(V)).diag
        c = np.ascontiguousarray
        return cls(c(V[idx]), c(data.kin_states[idx, 3]), c(data.inputs[idx]), c(V[idx + 1]), c(w, dtype=float))

    def __len__(self):
        return self.V0.shape[0]


def _fitness_array(pairs: PairData, p):
    if USE_NUMBA:
        return _pair_nmse(pairs.V0, pairs.D0, pairs.U, pairs.V1, pairs.w, p)
    V0 = pairs.V0
    with np.errstate(all="ignore"):
        vx, vy, om, dl, st = _ne_step(V0[:, 0], V0[:, 1], V0[:, 2], pairs.D0, pairs.U[:, 0], pairs.U[:, 1], p)
        pred = np.column_stack([vx, vy, om])
        if np.any(np.asarray(st) != 0) or not np.all(np.isfinite(pred)):
            return FAILED
        r = (pred - pairs.V1) * pairs.w
    return float(np.mean(r * r))


def ga_fitness(candidate, data, weights: Optional[NormalizationWeights] = None):
    """One-step NMSE of a parameter set; ``inf`` when a step fails numerically.

    ``candidate`` is an :class:`NeParams` or a flat kernel array; ``data`` a
    labeled trajectory or prebuilt :class:`PairData`.
    """
    pairs = data if isinstance(data, PairData) else PairData.from_trajectory(data, weights)
    f = _fitness_array(pairs, _p(candidate))
    return math.inf if f == FAILED else float(f)


@dataclass
class GaResult:
    params: NeParams
    fitness: float
    history: list = field(default_factory=list)  # best-so-far fitness per generation, index 0 = initial
    evaluations: int = 0

    def free_values(self, spec):
        flat = self.params.to_flat()
        return {s.name: flat[s.name] for s in spec if not s.fixed}


class _Genome:
    """Maps free parameters to normalized genes in [0, 1] over log|value|."""

    def __init__(self, spec, base: NeParams):
        self.spec = list(spec)
        self.free = [s for s in self.spec if not s.fixed]
        if not self.free:
            raise ValueError("at least one parameter must be free")
        self.sign = np.array([math.copysign(1.0, s.lower) for s in self.free])
        a = np.log(np.abs([s.lower for s in self.free]))
        b = np.log(np.abs([s.upper for s in self.free]))
        self.lo, self.hi = np.minimum(a, b), np.maximum(a, b)
        flat = base.to_flat()
        flat.update({s.name: s.value for s in self.spec if s.fixed})
        self.base = NeParams.from_flat(flat)
        self._slots = [_flat_slot(s.name) for s in self.free]
        self._template = self.base.to_array()

    def decode_array(self, g):
        p = self._template.copy()
        vals = self.sign * np.exp(self.lo + g * (self.hi - self.lo))
        for slot, v in zip(self._slots, vals):
            p[slot] = v
        return p

    def decode(self, g):
        vals = self.sign * np.exp(self.lo + g * (self.hi - self.lo))
        return self.base.with_values(**{s.name: float(v) for s, v in zip(self.free, vals)})


def _flat_slot(name):
    from . import params as P

    slots = {"m": P.P_M, "I_z": P.P_IZ, "l_f": P.P_LF, "l_r": P.P_LR, "C_alpha_f": P.P_CAF,
             "C_alpha_r": P.P_CAR, "F_hat_f": P.P_FAF, "F_hat_r": P.P_FAR, "R1": P.P_R1, "R2": P.P_R2,
             "v_0": P.P_V0, "delta_max": P.P_DMAX, "d": P.P_D, "T_s": P.P_TS, "K_t": P.P_KT,
             "c": P.P_C, "K_b": P.P_KB, "F_m_max": P.P_FM}
    return slots[name]


def _evaluate(genome, pairs, G):
    f = np.array([_fitness_array(pairs, genome.decode_array(g)) for g in G])
    bad = f == FAILED
    if bad.any():
        # penalty relative to this batch; all-failed batches get a huge finite value
        worst = f[~bad].max() if (~bad).any() else 1e150
        f[bad] = 10.0 * max(worst, 1e-300)
    return f


def ga_run(spec, data, config: GaConfig = GaConfig(), base: NeParams = NeParams(),
           weights: Optional[NormalizationWeights] = None,
           callback: Optional[Callable[[int, float], None]] = None) -> GaResult:
    """Tournament selection, BLX-alpha crossover, Gaussian mutation, elitism.

    Genes live in log-magnitude space normalized to [0, 1], so a [0.2x, 5x]
    bound is symmetric around the nominal value and mutation acts
    multiplicatively. Elite fitness values are carried over without
    re-evaluation, which makes the best-so-far curve monotone by construction.
    """
    genome = _Genome(spec, base)
    pairs = data if isinstance(data, PairData) else PairData.from_trajectory(data, weights)
    rng = np.random.default_rng(config.seed)
    N, n = config.population_size, len(genome.free)
    pop = rng.random((N, n))
    fit = _evaluate(genome, pairs, pop)
    evals = N
    order = np.argsort(fit, kind="stable")
    history = [float(fit[order[0]])]
    if callback:
        callback(0, history[-1])
    n_child = N - config.elite_count
    a = config.blx_alpha
    for gen in range(1, config.max_generations + 1):
        elite = order[:config.elite_count]
        # tournaments: winners are the lowest fitness among random contestants
        cont = rng.integers(0, N, size=(n_child, 2, config.tournament))
        win = np.take_along_axis(cont, np.argmin(fit[cont], axis=2)[..., None], axis=2)[..., 0]
        A, B = pop[win[:, 0]], pop[win[:, 1]]
        lo, hi = np.minimum(A, B), np.maximum(A, B)
        span = hi - lo
        blend = rng.uniform(lo - a * span, hi + a * span)
        cross = rng.random(n_child) < config.crossover_fraction
        child = np.where(cross[:, None], blend, A)
        mut = rng.random((n_child, n)) < config.mutation_rate
        child = child + mut * rng.normal(0.0, config.mutation_scale, size=(n_child, n))
        child = np.clip(child, 0.0, 1.0)
        child_fit = _evaluate(genome, pairs, child)
        evals += n_child
        pop = np.concatenate([pop[elite], child])
        fit = np.concatenate([fit[elite], child_fit])
        order = np.argsort(fit, kind="stable")
        history.append(min(history[-1], float(fit[order[0]])))
        if callback:
            callback(gen, history[-1])
    best = pop[order[0]]
    return GaResult(genome.decode(best), float(fit[order[0]]), history, evals)
