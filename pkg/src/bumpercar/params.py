"""Newton-Euler parameter set, its flat kernel layout, and the parameter file."""

from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import tomli

from .actuators import MotorParams, SteeringParams

# Flat layout consumed by the compiled kernels.
P_M, P_IZ, P_LF, P_LR = 0, 1, 2, 3
P_CAF, P_CAR, P_FAF, P_FAR = 4, 5, 6, 7
P_R1, P_R2, P_V0 = 8, 9, 10
P_DMAX, P_D, P_TS = 11, 12, 13
P_KT, P_C, P_KB, P_FM = 14, 15, 16, 17
P_PRINTED = 18
N_PARAMS = 19


@dataclass(frozen=True)
class NeParams:
    m: float = 319.6
    I_z: float = 90.85
    l_f: float = 0.54
    l_r: float = 0.33
    C_alpha_f: float = 3594.0
    C_alpha_r: float = 7840.0
    F_hat_f: float = 629.6
    F_hat_r: float = 1360.0
    R1: float = 43.40
    R2: float = -15.61
    # ASR floor; below ~0.7 m/s rest is not a stable fixed point of the two-substep RK4
    v_0: float = 0.8
    steering: SteeringParams = field(default_factory=SteeringParams)
    motor: MotorParams = field(default_factory=MotorParams)
    # use the tire-frame projection exactly as printed instead of the rotation
    printed_tire_frame: bool = False

    def __post_init__(self):
        for name in ("m", "I_z", "l_f", "l_r", "C_alpha_f", "C_alpha_r", "F_hat_f", "F_hat_r", "R1", "v_0"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")

    @property
    def wheelbase(self):
        return self.l_f + self.l_r

    def to_array(self):
        p = np.empty(N_PARAMS)
        p[P_M], p[P_IZ], p[P_LF], p[P_LR] = self.m, self.I_z, self.l_f, self.l_r
        p[P_CAF], p[P_CAR], p[P_FAF], p[P_FAR] = self.C_alpha_f, self.C_alpha_r, self.F_hat_f, self.F_hat_r
        p[P_R1], p[P_R2], p[P_V0] = self.R1, self.R2, self.v_0
        s, mo = self.steering, self.motor
        p[P_DMAX], p[P_D], p[P_TS] = s.delta_max, s.d, s.T_s
        p[P_KT], p[P_C], p[P_KB], p[P_FM] = mo.K_t, mo.c, mo.K_b, mo.F_m_max
        p[P_PRINTED] = 1.0 if self.printed_tire_frame else 0.0
        return p

    def to_flat(self):
        """Plain ``name -> value`` mapping, the parameter-file vocabulary."""
        out = {f.name: getattr(self, f.name) for f in fields(self) if f.name not in ("steering", "motor")}
        out.update(asdict(self.steering))
        out.update(asdict(self.motor))
        return out

    @classmethod
    def from_flat(cls, values):
        values = dict(values)
        unknown = set(values) - set(FLAT_KEYS)
        if unknown:
            raise KeyError(f"unknown parameter(s): {sorted(unknown)}")
        base = cls().to_flat()
        base.update(values)
        steering = SteeringParams(**{k: float(base.pop(k)) for k in ("delta_max", "d", "T_s")})
        motor = MotorParams(**{k: float(base.pop(k)) for k in ("K_t", "c", "K_b", "F_m_max")})
        printed = bool(base.pop("printed_tire_frame"))
        return cls(steering=steering, motor=motor, printed_tire_frame=printed,
                   **{k: float(v) for k, v in base.items()})

    def with_values(self, **values):
        flat = self.to_flat()
        flat.update(values)
        return NeParams.from_flat(flat)


UNITS = {
    "m": "kg", "I_z": "kg m^2", "l_f": "m", "l_r": "m",
    "C_alpha_f": "N/rad", "C_alpha_r": "N/rad", "F_hat_f": "N", "F_hat_r": "N",
    "R1": "N s/m", "R2": "N (s/m)^2", "v_0": "m/s",
    "delta_max": "rad", "d": "rad/s", "T_s": "s",
    "K_t": "N s/m", "c": "m/s", "K_b": "N s/m", "F_m_max": "N",
    "printed_tire_frame": "flag",
}
FLAT_KEYS = tuple(UNITS)

# Parameters that the identification treats as unknown (the rest are measured).
OPTIMIZED = ("F_m_max", "K_t", "c", "K_b", "I_z", "C_alpha_f", "C_alpha_r", "F_hat_f", "F_hat_r", "R1", "R2")


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(float(value))


def write_params(params: NeParams, path, header=None):
    """Write ``key = value  # unit`` lines (valid TOML)."""
    lines = []
    if header:
        lines += [f"# {h}" for h in header.splitlines()]
    for key, value in params.to_flat().items():
        lines.append(f"{key} = {_fmt(value)}  # {UNITS[key]}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_params(path) -> NeParams:
    with open(path, "rb") as fh:
        raw = tomli.load(fh)
    return NeParams.from_flat(raw)


__all__ = ["NeParams", "read_params", "write_params", "OPTIMIZED", "UNITS", "replace"]
