"""Velocity-stress staggered-grid finite differences for the 3D isotropic elastic wave equation.

Grid layout (solver frame x east, y north, z down), array index ``i`` on each
axis:

======================  ====================
field                   position
======================  ====================
sxx, syy, szz, moduli   (i, j, k)
vx                      (i+1/2, j, k)
vy                      (i, j+1/2, k)
vz                      (i, j, k+1/2)
sxy                     (i+1/2, j+1/2, k)
sxz                     (i+1/2, j, k+1/2)
syz                     (i, j+1/2, k+1/2)
======================  ====================

Spatial derivatives are 4th order, time stepping is 2nd-order leapfrog.  The
free surface sits on the normal-stress plane ``k = 0`` and is imposed by
stress imaging.  A Cerjan-type exponential sponge, padded outside the
physical volume on the four lateral sides and the bottom, absorbs outgoing
waves.  Density is constant, ``V_P = alpha * V_S``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .geology import GeologyField
from .source import SourceSpec, moment_tensor_from_angles, source_time_derivative

__all__ = [
    "SimConfig",
    "Medium",
    "WavefieldState",
    "SurfaceRecord",
    "SimulationBlowUp",
    "SourceInjection",
    "build_medium",
    "step",
    "run_simulation",
    "interpolate_record",
    "energy",
]

C1, C2 = 9.0 / 8.0, -1.0 / 24.0


class SimulationBlowUp(RuntimeError):
    """A non-finite value appeared in the wavefield."""

    def __init__(self, step_index: int, time_s: float):
        super().__init__(f"wavefield became non-finite at step {step_index} (t = {time_s:.4f} s)")
        self.step_index = step_index
        self.time_s = time_s


@dataclass(frozen=True)
class SimConfig:
    spacing_m: float | None = None
    dt: float | None = None
    duration_s: float | None = None
    vp_vs_ratio: float = 1.7
    density: float = 2700.0
    sponge_width: int = 20
    sponge_strength: float = 0.3
    sensor_grid: tuple[int, int] = (16, 16)
    sensor_spacing_m: float = 600.0
    record_rate_hz: float = 20.0
    record_window_s: tuple[float, float] = (1.0, 7.4)
    cfl: float = 0.49
    check_every: int = 10

    def __post_init__(self):
        object.__setattr__(self, "sensor_grid", tuple(int(n) for n in self.sensor_grid))
        object.__setattr__(self, "record_window_s", tuple(float(v) for v in self.record_window_s))
        start, end = self.record_window_s
        dur = self.duration if self.duration_s is None else self.duration_s
        if not 0 <= start < end <= dur:
            raise ValueError(f"record window {self.record_window_s} must lie within (0, {dur}]")
        npts = (end - start) * self.record_rate_hz
        if abs(npts - round(npts)) > 1e-6 or round(npts) < 1:
            raise ValueError(f"record window x rate must be a positive integer, got {npts}")
        if self.vp_vs_ratio <= math.sqrt(2):
            raise ValueError("vp_vs_ratio must exceed sqrt(2) for a positive Lame lambda")
        if self.density <= 0 or self.sponge_width < 0:
            raise ValueError("density must be positive and sponge_width non-negative")
        if any(n < 1 for n in self.sensor_grid):
            raise ValueError("sensor_grid extents must be positive")

    @property
    def duration(self) -> float:
        return self.record_window_s[1] if self.duration_s is None else self.duration_s

    @property
    def n_samples(self) -> int:
        start, end = self.record_window_s
        return int(round((end - start) * self.record_rate_hz))

    @property
    def record_times(self) -> np.ndarray:
        return self.record_window_s[0] + np.arange(self.n_samples) / self.record_rate_hz

    def stable_dt(self, spacing_m: float, max_vs: float) -> float:
        return self.cfl * spacing_m / (self.vp_vs_ratio * max_vs)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Medium:
    """Moduli on the padded solver grid."""

    lam: np.ndarray
    mu: np.ndarray
    mu_xy: np.ndarray
    mu_xz: np.ndarray
    mu_yz: np.ndarray
    buoyancy: float
    spacing_m: float
    pad: int
    damping: np.ndarray
    max_vp: float

    @property
    def shape(self):
        return self.mu.shape


@dataclass
class WavefieldState:
    vx: np.ndarray
    vy: np.ndarray
    vz: np.ndarray
    sxx: np.ndarray
    syy: np.ndarray
    szz: np.ndarray
    sxy: np.ndarray
    sxz: np.ndarray
    syz: np.ndarray
    time: float = 0.0
    step_index: int = 0

    FIELDS = ("vx", "vy", "vz", "sxx", "syy", "szz", "sxy", "sxz", "syz")

    @classmethod
    def zeros(cls, shape) -> "WavefieldState":
        return cls(*(np.zeros(shape) for _ in range(9)))

    def arrays(self):
        return [getattr(self, f) for f in self.FIELDS]

    def copy(self) -> "WavefieldState":
        return WavefieldState(*(a.copy() for a in self.arrays()), time=self.time, step_index=self.step_index)

    def is_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays())


@dataclass
class SurfaceRecord:
    """Three-component surface velocities, ``data[c, ix, iy, it]`` with c = E, N, Z (up)."""

    data: np.ndarray
    times: np.ndarray
    x_m: np.ndarray
    y_m: np.ndarray
    meta: dict = field(default_factory=dict)

    COMPONENTS = ("E", "N", "Z")

    @property
    def shape(self):
        return self.data.shape


@dataclass
class SourceInjection:
    """Stress-rate weights of a moment-tensor point source on the staggered grid."""

    index: tuple[int, int, int]
    moment: np.ndarray  # solver frame, divided by cell volume
    tau_s: float


def _harmonic(*arrs):
    return len(arrs) / sum(1.0 / a for a in arrs)


def _shift(a, axis):
    # a[i+1] along axis, replicating the last plane
    idx = [slice(None)] * 3
    idx[axis] = slice(1, None)
    tail = [slice(None)] * 3
    tail[axis] = slice(-1, None)
    return np.concatenate([a[tuple(idx)], a[tuple(tail)]], axis=axis)


def _sponge_profile(n_phys: int, pad: int, strength: float, both_ends: bool) -> np.ndarray:
    n = n_phys + (2 * pad if both_ends else pad)
    prof = np.ones(n)
    if pad == 0:
        return prof
    dist = np.arange(pad, 0, -1)  # pad .. 1 cells from the physical edge
    g = np.exp(-(strength * dist / pad) ** 2)
    if both_ends:
        prof[:pad] = g
        prof[n - pad:] = g[::-1]
    else:
        prof[n - pad:] = g[::-1]
    return prof


def build_medium(vs: np.ndarray, spacing_m: float, config: SimConfig) -> Medium:
    """Lame moduli from ``V_S`` with edge-replicated padding for the sponge band."""
    pad = config.sponge_width
    vs_p = np.pad(vs, ((pad, pad), (pad, pad), (0, pad)), mode="edge")
    rho = config.density
    mu = rho * vs_p ** 2
    lam = rho * vs_p ** 2 * (config.vp_vs_ratio ** 2 - 2.0)
    mux, muy, muz = _shift(mu, 0), _shift(mu, 1), _shift(mu, 2)
    mu_xy = _harmonic(mu, mux, muy, _shift(mux, 1))
    mu_xz = _harmonic(mu, mux, muz, _shift(mux, 2))
    mu_yz = _harmonic(mu, muy, muz, _shift(muy, 2))
    s = config.sponge_strength
    px = _sponge_profile(vs.shape[0], pad, s, True)
    py = _sponge_profile(vs.shape[1], pad, s, True)
    pz = _sponge_profile(vs.shape[2], pad, s, False)
    damping = px[:, None, None] * py[None, :, None] * pz[None, None, :]
    return Medium(lam=lam, mu=mu, mu_xy=mu_xy, mu_xz=mu_xz, mu_yz=mu_yz,
                  buoyancy=1.0 / rho, spacing_m=float(spacing_m), pad=pad,
                  damping=damping, max_vp=float(config.vp_vs_ratio * vs.max()))


def _pad_axis(f, axis, top=None):
    # two ghost planes on each side; ``top`` optionally supplies the low-side ghosts
    shape = list(f.shape)
    shape[axis] += 4
    out = np.zeros(shape)
    idx = [slice(None)] * 3
    idx[axis] = slice(2, -2)
    out[tuple(idx)] = f
    if top is not None:
        idx[axis] = slice(0, 2)
        out[tuple(idx)] = top
    return out


def _sl(axis, start, stop):
    idx = [slice(None)] * 3
    idx[axis] = slice(start, stop)
    return tuple(idx)


def _dplus(f, axis, h, top=None):
    """Derivative at i+1/2 of a field sampled at i."""
    p = _pad_axis(f, axis, top)
    n = f.shape[axis]
    return (C1 * (p[_sl(axis, 3, 3 + n)] - p[_sl(axis, 2, 2 + n)])
            + C2 * (p[_sl(axis, 4, 4 + n)] - p[_sl(axis, 1, 1 + n)])) / h


def _dminus(f, axis, h, top=None):
    """Derivative at i of a field whose index i holds position i+1/2."""
    p = _pad_axis(f, axis, top)
    n = f.shape[axis]
    return (C1 * (p[_sl(axis, 2, 2 + n)] - p[_sl(axis, 1, 1 + n)])
            + C2 * (p[_sl(axis, 3, 3 + n)] - p[_sl(axis, 0, n)])) / h


def _image_odd_centered(s):
    # ghosts for a field on the k = 0 free-surface plane: s(-k) = -s(k)
    return np.stack([-s[:, :, 2], -s[:, :, 1]], axis=2)


def _image_odd_half(s):
    # ghosts for a field at k + 1/2: s(-1/2) = -s(1/2), s(-3/2) = -s(3/2)
    return np.stack([-s[:, :, 1], -s[:, :, 0]], axis=2)


def step(state: WavefieldState, medium: Medium, dt: float,
         source: SourceInjection | None = None) -> WavefieldState:
    """Advance one leapfrog step in place and return the state.

    Velocities move from t - dt/2 to t + dt/2 using stresses at t, then
    stresses move from t to t + dt.  The source stress rate is evaluated at
    t + dt/2.
    """
    h = medium.spacing_m
    b = medium.buoyancy
    s = state

    dsxx_dx = _dplus(s.sxx, 0, h)
    dsxy_dy = _dminus(s.sxy, 1, h)
    dsxz_dz = _dminus(s.sxz, 2, h, top=_image_odd_half(s.sxz))
    s.vx += dt * b * (dsxx_dx + dsxy_dy + dsxz_dz)

    dsxy_dx = _dminus(s.sxy, 0, h)
    dsyy_dy = _dplus(s.syy, 1, h)
    dsyz_dz = _dminus(s.syz, 2, h, top=_image_odd_half(s.syz))
    s.vy += dt * b * (dsxy_dx + dsyy_dy + dsyz_dz)

    dsxz_dx = _dminus(s.sxz, 0, h)
    dsyz_dy = _dminus(s.syz, 1, h)
    dszz_dz = _dplus(s.szz, 2, h, top=_image_odd_centered(s.szz))
    s.vz += dt * b * (dsxz_dx + dsyz_dy + dszz_dz)

    dvx_dx = _dminus(s.vx, 0, h)
    dvy_dy = _dminus(s.vy, 1, h)
    dvz_dz = _dminus(s.vz, 2, h)
    dvz_dz[:, :, 1] = (s.vz[:, :, 1] - s.vz[:, :, 0]) / h
    lam, mu = medium.lam, medium.mu
    l2m = lam + 2 * mu
    rxx = l2m * dvx_dx + lam * (dvy_dy + dvz_dz)
    ryy = l2m * dvy_dy + lam * (dvx_dx + dvz_dz)
    rzz = l2m * dvz_dz + lam * (dvx_dx + dvy_dy)
    # traction-free plane k = 0: szz stays 0, dvz/dz is eliminated from sxx, syy
    l0, l2m0 = lam[:, :, 0], l2m[:, :, 0]
    ex, ey = dvx_dx[:, :, 0], dvy_dy[:, :, 0]
    rxx[:, :, 0] = (l2m0 - l0 ** 2 / l2m0) * ex + (l0 - l0 ** 2 / l2m0) * ey
    ryy[:, :, 0] = (l0 - l0 ** 2 / l2m0) * ex + (l2m0 - l0 ** 2 / l2m0) * ey
    rzz[:, :, 0] = 0.0
    s.sxx += dt * rxx
    s.syy += dt * ryy
    s.szz += dt * rzz

    dvx_dy = _dplus(s.vx, 1, h)
    dvy_dx = _dplus(s.vy, 0, h)
    s.sxy += dt * medium.mu_xy * (dvx_dy + dvy_dx)

    dvx_dz = _dplus(s.vx, 2, h)
    dvx_dz[:, :, 0] = (s.vx[:, :, 1] - s.vx[:, :, 0]) / h
    dvz_dx = _dplus(s.vz, 0, h)
    s.sxz += dt * medium.mu_xz * (dvx_dz + dvz_dx)

    dvy_dz = _dplus(s.vy, 2, h)
    dvy_dz[:, :, 0] = (s.vy[:, :, 1] - s.vy[:, :, 0]) / h
    dvz_dy = _dplus(s.vz, 1, h)
    s.syz += dt * medium.mu_yz * (dvy_dz + dvz_dy)

    if source is not None:
        _inject(s, source, s.time + 0.5 * dt, dt)

    d = medium.damping
    for a in s.arrays():
        a *= d
    s.time += dt
    s.step_index += 1
    return s


def _inject(s: WavefieldState, src: SourceInjection, t: float, dt: float):
    rate = source_time_derivative(t, src.tau_s)
    if rate == 0.0:
        return
    i, j, k = src.index
    m = -dt * rate * src.moment
    s.sxx[i, j, k] += m[0, 0]
    s.syy[i, j, k] += m[1, 1]
    s.szz[i, j, k] += m[2, 2]
    s.sxy[i - 1:i + 1, j - 1:j + 1, k] += 0.25 * m[0, 1]
    s.sxz[i - 1:i + 1, j, k - 1:k + 1] += 0.25 * m[0, 2]
    s.syz[i, j - 1:j + 1, k - 1:k + 1] += 0.25 * m[1, 2]


def energy(state: WavefieldState, medium: Medium) -> float:
    """Discrete kinetic plus strain energy (J) over the padded grid."""
    vol = medium.spacing_m ** 3
    s = state
    kin = 0.5 / medium.buoyancy * (np.sum(s.vx ** 2) + np.sum(s.vy ** 2) + np.sum(s.vz ** 2))
    lam, mu = medium.lam, medium.mu
    tr = s.sxx + s.syy + s.szz
    normal = (s.sxx ** 2 + s.syy ** 2 + s.szz ** 2 - lam / (3 * lam + 2 * mu) * tr ** 2) / (4 * mu)
    shear = s.sxy ** 2 / (2 * medium.mu_xy) + s.sxz ** 2 / (2 * medium.mu_xz) + s.syz ** 2 / (2 * medium.mu_yz)
    return float(vol * (kin + np.sum(normal) + np.sum(shear)))


def _cell_index(coord: float, spacing: float, n: int) -> int:
    return int(min(max(math.floor(coord / spacing), 0), n - 1))


def sensor_coordinates(config: SimConfig, domain_size_m: float):
    nx, ny = config.sensor_grid
    sp = config.sensor_spacing_m
    x = domain_size_m / 2 + (np.arange(nx) - (nx - 1) / 2) * sp
    y = domain_size_m / 2 + (np.arange(ny) - (ny - 1) / 2) * sp
    if x.min() < 0 or x.max() > domain_size_m or y.min() < 0 or y.max() > domain_size_m:
        raise ValueError("sensor grid does not fit inside the domain")
    return x, y


def _surface_sampler(medium: Medium, ix: np.ndarray, iy: np.ndarray):
    p = medium.pad
    gx = ix[:, None] + p
    gy = iy[None, :] + p

    def sample(s: WavefieldState) -> np.ndarray:
        e = 0.5 * (s.vx[gx - 1, gy, 0] + s.vx[gx, gy, 0])
        n = 0.5 * (s.vy[gx, gy - 1, 0] + s.vy[gx, gy, 0])
        z = -s.vz[gx, gy, 0]
        return np.stack([e, n, z])

    return sample


def run_simulation(geology: GeologyField, source: SourceSpec, config: SimConfig,
                   domain_size_m: float | None = None) -> SurfaceRecord:
    """Propagate the source through ``geology`` and record surface velocities.

    Records are linearly interpolated in time between the half-step velocity
    levels at ``config.record_rate_hz`` inside ``config.record_window_s``.
    """
    vs = np.asarray(geology.vs, dtype=np.float64)
    if domain_size_m is None:
        if geology.config is None:
            raise ValueError("domain size unknown: pass domain_size_m or a geology with a config")
        domain_size_m = geology.config.domain_size_m
    nx, ny, nz = vs.shape
    h = domain_size_m / nx
    if config.spacing_m is not None and abs(config.spacing_m - h) > 1e-9 * h:
        raise ValueError(f"config spacing {config.spacing_m} m does not match the geology spacing {h} m")
    if abs(ny * h - domain_size_m) > 1e-6 * domain_size_m:
        raise ValueError("geology must use the same spacing on x and y")

    sx, sy, sz = source.position_m
    depth = -sz
    if not (0 <= sx <= nx * h and 0 <= sy <= ny * h and 0 <= depth <= (nz - 1) * h):
        raise ValueError(f"source {source.position_m} lies outside the domain")

    dt = config.dt if config.dt is not None else config.stable_dt(h, float(vs.max()))
    limit = config.stable_dt(h, float(vs.max()))
    if dt > limit * (1 + 1e-12):
        raise ValueError(f"dt = {dt} violates the CFL bound {limit}")

    medium = build_medium(vs, h, config)
    p = medium.pad
    si = _cell_index(sx, h, nx) + p
    sj = _cell_index(sy, h, ny) + p
    sk = int(min(max(round(depth / h), 1), nz - 1))
    m = moment_tensor_from_angles(source.strike, source.dip, source.rake, source.moment_scale)
    inj = SourceInjection(index=(si, sj, sk), moment=m / h ** 3, tau_s=source.tau_s)

    xs, ys = sensor_coordinates(config, domain_size_m)
    ix = np.array([_cell_index(x, h, nx) for x in xs])
    iy = np.array([_cell_index(y, h, ny) for y in ys])
    sample = _surface_sampler(medium, ix, iy)

    times = config.record_times
    out = np.zeros((3, len(xs), len(ys), len(times)))
    n_steps = int(math.ceil(config.duration / dt)) + 1
    state = WavefieldState.zeros(medium.shape)
    prev_t, prev = -0.5 * dt, sample(state)
    r = 0
    # overflow is reported as SimulationBlowUp, not as floating-point warnings
    with np.errstate(over="ignore", invalid="ignore"):
        for n in range(n_steps):
            step(state, medium, dt, inj)
            if (n + 1) % config.check_every == 0 and not state.is_finite():
                raise SimulationBlowUp(state.step_index, state.time)
            cur_t = state.time - 0.5 * dt
            cur = sample(state)
            while r < len(times) and times[r] <= cur_t:
                w = (times[r] - prev_t) / (cur_t - prev_t)
                out[..., r] = (1 - w) * prev + w * cur
                r += 1
            prev_t, prev = cur_t, cur
            if r == len(times):
                break
    if not state.is_finite():
        raise SimulationBlowUp(state.step_index, state.time)

    meta = {
        "spacing_m": h,
        "dt": dt,
        "boundary": "cerjan-sponge",
        "sponge_width": config.sponge_width,
        "source_index": [int(si - p), int(sj - p), int(sk)],
    }
    return SurfaceRecord(data=out, times=times, x_m=xs, y_m=ys, meta=meta)


def interpolate_record(record: SurfaceRecord, x_out: np.ndarray, y_out: np.ndarray) -> SurfaceRecord:
    """Separable cubic-spline interpolation of the sensor grid onto new surface points."""
    data = record.data
    if len(record.x_m) >= 2:
        data = CubicSpline(record.x_m, data, axis=1)(x_out)
    else:
        data = np.repeat(data, len(x_out), axis=1)
    if len(record.y_m) >= 2:
        data = CubicSpline(record.y_m, data, axis=2)(y_out)
    else:
        data = np.repeat(data, len(y_out), axis=2)
    return SurfaceRecord(data=data, times=record.times.copy(), x_m=np.asarray(x_out, float),
                         y_m=np.asarray(y_out, float), meta={**record.meta, "interpolation": "cubic-spline"})

