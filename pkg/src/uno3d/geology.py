"""Stochastic layered shear-wave velocity models with von Karman heterogeneities.

The z axis of every volume points down: index 0 is the free surface and the
last index is the deepest cell.  A homogeneous bottom layer fills the deepest
``bottom_fraction`` of the column; the rest is split into 1 to 6 layers whose
interfaces are drawn by uniform stick-breaking.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.fft as sfft

__all__ = [
    "GeologyConfig",
    "LayerSpec",
    "GeologyField",
    "sample_layer_specs",
    "von_karman_field",
    "assemble_geology",
    "generate_geology",
    "layer_streams",
]


@dataclass(frozen=True)
class GeologyConfig:
    grid: tuple[int, int, int] = (64, 64, 64)
    domain_size_m: float = 9600.0
    n_layers_range: tuple[int, int] = (1, 6)
    mean_vs_low: float = 1785.0
    mean_vs_high: float = 3214.0
    corr_len_range_m: tuple[float, float] = (1500.0, 6000.0)
    cv_mean: float = 0.2
    cv_std: float = 0.1
    clip_low: float = 1071.0
    clip_high: float = 4500.0
    bottom_vs: float = 4500.0
    bottom_fraction: float = 0.125
    hurst: float = 0.3
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "grid", tuple(int(n) for n in self.grid))
        object.__setattr__(self, "n_layers_range", tuple(int(n) for n in self.n_layers_range))
        object.__setattr__(self, "corr_len_range_m", tuple(float(v) for v in self.corr_len_range_m))
        self.validate()

    def validate(self):
        if len(self.grid) != 3 or any(n < 2 for n in self.grid):
            raise ValueError(f"grid must have 3 extents >= 2, got {self.grid}")
        if not (self.clip_low < self.mean_vs_low <= self.mean_vs_high < self.clip_high <= self.bottom_vs):
            raise ValueError(
                "velocity bounds must satisfy clip_low < mean_vs_low <= mean_vs_high < clip_high <= bottom_vs"
            )
        lo, hi = self.n_layers_range
        if not 1 <= lo <= hi <= 6:
            raise ValueError(f"n_layers_range must lie within [1, 6], got {self.n_layers_range}")
        if self.domain_size_m <= 0:
            raise ValueError("domain_size_m must be positive")
        c0, c1 = self.corr_len_range_m
        if not 0 < c0 <= c1:
            raise ValueError(f"invalid corr_len_range_m {self.corr_len_range_m}")
        if self.cv_std < 0:
            raise ValueError("cv_std must be non-negative")
        if not 0 < self.hurst < 1:
            raise ValueError("hurst must lie in (0, 1)")
        if not 0 < self.bottom_fraction < 1:
            raise ValueError("bottom_fraction must lie in (0, 1)")

    @property
    def spacing_m(self) -> float:
        return self.domain_size_m / self.grid[0]

    @property
    def bottom_cells(self) -> int:
        return max(1, int(math.ceil(self.bottom_fraction * self.grid[2])))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class LayerSpec:
    top_index: int
    bottom_index: int  # exclusive
    mean_vs: float
    corr_len_m: float
    cv: float

    @property
    def thickness(self) -> int:
        return self.bottom_index - self.top_index


@dataclass
class GeologyField:
    vs: np.ndarray
    layers: list[LayerSpec]
    seed: int
    config: GeologyConfig | None = field(default=None, repr=False)

    @property
    def a(self) -> np.ndarray:
        """Operator input ``V_S**2``."""
        return self.vs ** 2


def layer_streams(seed: int, n: int = 8) -> list[np.random.Generator]:
    """Independent generators: stream 0 draws layer specs, stream 1+i feeds layer i."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def _truncated_normal(rng: np.random.Generator, mean: float, std: float) -> float:
    if std == 0:
        return max(mean, 0.0)
    while True:
        v = rng.normal(mean, std)
        if v >= 0:
            return float(v)


def sample_layer_specs(rng: np.random.Generator, config: GeologyConfig) -> list[LayerSpec]:
    """Draw the layers above the homogeneous bottom layer, top to bottom."""
    nz = config.grid[2]
    n_top = nz - config.bottom_cells
    lo, hi = config.n_layers_range
    n_layers = int(rng.integers(lo, hi + 1))
    if n_top < n_layers:
        raise ValueError(f"{n_top} cells above the bottom layer cannot host {n_layers} layers")
    cuts = np.sort(rng.choice(np.arange(1, n_top), size=n_layers - 1, replace=False)) if n_layers > 1 else []
    edges = [0, *[int(c) for c in cuts], n_top]
    c0, c1 = config.corr_len_range_m
    layers = []
    for top, bottom in zip(edges[:-1], edges[1:]):
        layers.append(LayerSpec(
            top_index=top,
            bottom_index=bottom,
            mean_vs=float(rng.uniform(config.mean_vs_low, config.mean_vs_high)),
            corr_len_m=float(rng.uniform(c0, c1)),
            cv=_truncated_normal(rng, config.cv_mean, config.cv_std),
        ))
    return layers


def von_karman_power(k: np.ndarray, corr_len_m: float, hurst: float) -> np.ndarray:
    """Unnormalized 3D von Karman power spectrum at wavenumber magnitude ``k`` (rad/m)."""
    return (1.0 + (k * corr_len_m) ** 2) ** (-(hurst + 1.5))


def _wavenumber_magnitude(grid, spacing_m):
    ks = [2 * np.pi * np.fft.fftfreq(n, d=spacing_m) for n in grid]
    kx, ky, kz = np.meshgrid(*ks, indexing="ij")
    return np.sqrt(kx ** 2 + ky ** 2 + kz ** 2)


def von_karman_field(grid, spacing_m: float, corr_len_m: float, hurst: float,
                     rng: np.random.Generator) -> np.ndarray:
    """Zero-mean, unit-variance von Karman random field by spectral filtering of white noise."""
    grid = tuple(int(n) for n in grid)
    if len(grid) != 3 or any(n < 2 for n in grid):
        raise ValueError(f"degenerate grid {grid}")
    if corr_len_m <= 0:
        raise ValueError("corr_len_m must be positive")
    if not 0 < hurst < 1:
        raise ValueError("hurst must lie in (0, 1)")
    noise = rng.standard_normal(grid)
    amp = np.sqrt(von_karman_power(_wavenumber_magnitude(grid, spacing_m), corr_len_m, hurst))
    field = sfft.ifftn(sfft.fftn(noise) * amp).real
    return _standardize(field)


def _standardize(x: np.ndarray) -> np.ndarray:
    x = x - x.mean()
    std = x.std()
    if std == 0:
        return x
    x = x / std
    # second pass removes the rounding left by the first
    return (x - x.mean()) / x.std()


def assemble_geology(layers: list[LayerSpec], config: GeologyConfig,
                     rngs: list[np.random.Generator], clip: bool = True) -> GeologyField:
    """Fill each layer with its own heterogeneous field and add the bottom layer.

    ``rngs[i]`` drives the heterogeneity of layer ``i``.  Each layer field is
    generated on the full grid, cut to the layer's slab and re-standardized
    over the slab, so that before clipping the layer has exactly its mean
    velocity and coefficient of variation.
    """
    nx, ny, nz = config.grid
    n_top = nz - config.bottom_cells
    if not layers or layers[0].top_index != 0 or layers[-1].bottom_index != n_top:
        raise ValueError("layers must cover the column above the bottom layer")
    for upper, lower in zip(layers[:-1], layers[1:]):
        if upper.bottom_index != lower.top_index:
            raise ValueError("layers must be contiguous")
    if any(l.thickness < 1 for l in layers):
        raise ValueError("every layer needs at least one cell")
    if len(rngs) < len(layers):
        raise ValueError("one random stream per layer is required")

    vs = np.full(config.grid, float(config.bottom_vs))
    h = config.spacing_m
    for layer, rng in zip(layers, rngs):
        sl = slice(layer.top_index, layer.bottom_index)
        if layer.cv == 0:
            vs[:, :, sl] = layer.mean_vs
            continue
        f = von_karman_field(config.grid, h, layer.corr_len_m, config.hurst, rng)[:, :, sl]
        vs[:, :, sl] = layer.mean_vs * (1.0 + layer.cv * _standardize(f))
    if clip:
        np.clip(vs, config.clip_low, config.clip_high, out=vs)
    return GeologyField(vs=vs, layers=list(layers), seed=config.seed, config=config)


def generate_geology(config: GeologyConfig, seed: int | None = None) -> GeologyField:
    """Full draw: layer specs then heterogeneities, all from one seed."""
    seed = config.seed if seed is None else int(seed)
    streams = layer_streams(seed, 1 + config.n_layers_range[1])
    layers = sample_layer_specs(streams[0], config)
    geo = assemble_geology(layers, config, streams[1:])
    geo.seed = seed
    return geo
