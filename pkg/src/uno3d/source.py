"""Point double-couple source: moment tensor and source time function."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

__all__ = [
    "SourceSpec",
    "moment_tensor_ned",
    "moment_tensor_from_angles",
    "source_time_function",
    "source_time_derivative",
]


@dataclass(frozen=True)
class SourceSpec:
    """Point source; ``position_m`` is (x east, y north, z up) with z <= 0 below the surface."""

    position_m: tuple[float, float, float] = (4800.0, 4800.0, -8400.0)
    strike: float = 50.0
    dip: float = 45.0
    rake: float = 88.0
    tau_s: float = 0.127
    moment_scale: float = 1.0e16

    def __post_init__(self):
        object.__setattr__(self, "position_m", tuple(float(v) for v in self.position_m))
        if len(self.position_m) != 3:
            raise ValueError("position_m needs three coordinates")
        if self.position_m[2] > 0:
            raise ValueError("source depth must be at or below the free surface (z <= 0)")
        if not 0 <= self.strike < 360:
            raise ValueError("strike must lie in [0, 360)")
        if not 0 <= self.dip <= 90:
            raise ValueError("dip must lie in [0, 90]")
        if not -180 <= self.rake <= 180:
            raise ValueError("rake must lie in [-180, 180]")
        if self.tau_s <= 0:
            raise ValueError("tau_s must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def moment_tensor_ned(strike: float, dip: float, rake: float, moment_scale: float = 1.0) -> np.ndarray:
    """Double-couple moment tensor in north-east-down coordinates (Aki & Richards, Box 4.4)."""
    phi, delta, lam = np.radians([strike, dip, rake])
    sd, cd = np.sin(delta), np.cos(delta)
    s2d, c2d = np.sin(2 * delta), np.cos(2 * delta)
    sl, cl = np.sin(lam), np.cos(lam)
    sp, cp = np.sin(phi), np.cos(phi)
    s2p, c2p = np.sin(2 * phi), np.cos(2 * phi)

    mnn = -(sd * cl * s2p + s2d * sl * sp ** 2)
    mee = sd * cl * s2p - s2d * sl * cp ** 2
    mdd = s2d * sl
    mne = sd * cl * c2p + 0.5 * s2d * sl * s2p
    mnd = -(cd * cl * cp + c2d * sl * sp)
    med = -(cd * cl * sp - c2d * sl * cp)
    m = np.array([
        [mnn, mne, mnd],
        [mne, mee, med],
        [mnd, med, mdd],
    ])
    return moment_scale * m


def moment_tensor_from_angles(strike: float, dip: float, rake: float, moment_scale: float = 1.0) -> np.ndarray:
    """Moment tensor in the solver frame (x east, y north, z down)."""
    ned = moment_tensor_ned(strike, dip, rake, moment_scale)
    perm = [1, 0, 2]  # x<-E, y<-N, z<-D
    return ned[np.ix_(perm, perm)]


def source_time_function(t, tau: float):
    """``1 - (1 + t/tau) exp(-t/tau)`` for ``t >= 0``; zero before the origin time."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    t = np.asarray(t, dtype=np.float64)
    x = np.maximum(t, 0.0) / tau
    out = np.where(t > 0, -np.expm1(-x) - x * np.exp(-x), 0.0)
    return out if out.ndim else float(out)


def source_time_derivative(t, tau: float):
    """Moment-rate shape ``(t / tau**2) exp(-t/tau)``, zero before the origin time."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    t = np.asarray(t, dtype=np.float64)
    tp = np.maximum(t, 0.0)
    out = np.where(t > 0, tp / tau ** 2 * np.exp(-tp / tau), 0.0)
    return out if out.ndim else float(out)
