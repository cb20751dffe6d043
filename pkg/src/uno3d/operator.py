"""U-shaped Fourier neural operator mapping a geology volume to surface velocity movies.

Tensors are channel-first, ``(batch, channels, X, Y, Z)``.  Eight Fourier
layers change resolution spectrally; the decoder stretches the third axis,
which leaves the network as the time axis of the prediction.

The model is defined on a fixed entry grid.  Inputs sampled on another grid
are spectrally resampled onto it and predictions are spectrally resampled
back to ``(X_in, Y_in, time_factor * Z_in)``, so a band-limited input gives
the same band-limited prediction at any resolution.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensorcore as tc
from .container import ContainerError, Dataset, DatasetWriter
from .normalize import NormStats, normalize_inputs
from .tensorcore import DiffTensor

__all__ = [
    "LayerPlan",
    "UnoSchedule",
    "UnoModel",
    "positional_encoding",
    "uplift",
    "spectral_conv",
    "fourier_layer_forward",
    "uno_forward",
    "network",
    "spectral_resample_node",
    "desk_schedule",
    "full_scale_schedule",
    "count_parameters",
    "init_params",
    "param_shapes",
]


@dataclass(frozen=True)
class LayerPlan:
    out_channels: int
    scale: tuple[float, float, float]
    modes: tuple[int, int, int]
    activation: bool = True

    def __post_init__(self):
        object.__setattr__(self, "scale", tuple(float(s) for s in self.scale))
        object.__setattr__(self, "modes", tuple(int(m) for m in self.modes))


@dataclass(frozen=True)
class UnoSchedule:
    """Resolution, width and mode plan of the eight Fourier layers.

    ``skips`` pairs an encoder layer index with the decoder layer whose input
    receives its output by channel concatenation (0-based indices).
    """

    entry: tuple[int, int, int]
    width: int
    uplift_hidden: int
    head_hidden: int
    layers: tuple[LayerPlan, ...]
    skips: tuple[tuple[int, int], ...] = ((0, 7), (1, 6), (2, 5))
    n_encoder: int = 4

    def __post_init__(self):
        object.__setattr__(self, "entry", tuple(int(n) for n in self.entry))
        object.__setattr__(self, "layers", tuple(
            l if isinstance(l, LayerPlan) else LayerPlan(**l) for l in self.layers))
        object.__setattr__(self, "skips", tuple(tuple(int(i) for i in s) for s in self.skips))
        self.validate()

    def resolutions(self) -> list[tuple[int, int, int]]:
        """Output grid of every layer."""
        return [tuple(max(1, int(round(n * s))) for n, s in zip(self.entry, l.scale)) for l in self.layers]

    def input_resolutions(self) -> list[tuple[int, int, int]]:
        return [self.entry] + self.resolutions()[:-1]

    def skip_into(self) -> dict[int, int]:
        return {dec: enc for enc, dec in self.skips}

    def in_channels(self) -> list[int]:
        into = self.skip_into()
        chans = []
        prev = self.width
        for j, layer in enumerate(self.layers):
            c = prev + (self.layers[into[j]].out_channels if j in into else 0)
            chans.append(c)
            prev = layer.out_channels
        return chans

    @property
    def output_resolution(self) -> tuple[int, int, int]:
        return self.resolutions()[-1]

    @property
    def time_factor(self) -> float:
        return self.layers[-1].scale[2]

    def validate(self):
        if any(n < 1 for n in self.entry):
            raise ValueError(f"entry grid must be positive, got {self.entry}")
        if len(self.layers) < 2:
            raise ValueError("at least two Fourier layers are required")
        ins, outs = self.input_resolutions(), self.resolutions()
        for j, (layer, rin, rout) in enumerate(zip(self.layers, ins, outs)):
            for m, a, b in zip(layer.modes, rin, rout):
                if m < 0 or m > a // 2 or m > b // 2:
                    raise ValueError(
                        f"layer {j + 1}: {layer.modes} modes do not fit resolutions {rin} -> {rout}")
        enc = outs[: self.n_encoder]
        dec = outs[self.n_encoder - 1:]
        for r0, r1 in zip(enc[:-1], enc[1:]):
            if any(b > a for a, b in zip(r0, r1)):
                raise ValueError("encoder resolutions must be non-increasing")
        for r0, r1 in zip(dec[:-1], dec[1:]):
            if any(b < a for a, b in zip(r0, r1)):
                raise ValueError("decoder resolutions must be non-decreasing")
        for enc_i, dec_j in self.skips:
            if not (enc_i < self.n_encoder <= dec_j < len(self.layers)):
                raise ValueError(f"invalid skip pair {(enc_i, dec_j)}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "UnoSchedule":
        d = dict(d)
        d["layers"] = tuple(LayerPlan(**l) for l in d["layers"])
        d["skips"] = tuple(tuple(s) for s in d.get("skips", ()))
        return cls(**d)


_ENC_SCALES = [(0.5,) * 3, (0.25,) * 3, (0.125,) * 3, (0.125,) * 3]
_DEC_SCALES = [(0.25,) * 3, (0.5,) * 3, (1.0,) * 3, (1.0, 1.0, 2.0)]


def _schedule(entry, width, uplift_hidden, head_hidden, channels, modes):
    scales = _ENC_SCALES + _DEC_SCALES
    layers = tuple(
        LayerPlan(out_channels=c, scale=s, modes=m, activation=(j < 7))
        for j, (c, s, m) in enumerate(zip(channels, scales, modes))
    )
    return UnoSchedule(entry=tuple(entry), width=width, uplift_hidden=uplift_hidden,
                       head_hidden=head_hidden, layers=layers)


def _clamp_modes(entry, modes):
    # keep the requested mode counts where the layer grids allow them
    scales = _ENC_SCALES + _DEC_SCALES
    outs = [tuple(max(1, int(round(n * s))) for n, s in zip(entry, sc)) for sc in scales]
    ins = [tuple(entry)] + outs[:-1]
    return [tuple(min(m, a // 2, b // 2) for m, a, b in zip(mm, ri, ro))
            for mm, ri, ro in zip(modes, ins, outs)]


def desk_schedule(entry=(16, 16, 16)) -> UnoSchedule:
    """Small schedule: 89,299 parameters at any entry grid of 16^3 or more."""
    entry = tuple(int(n) for n in (entry if np.ndim(entry) else (entry,) * 3))
    modes = _clamp_modes(entry, [(2, 2, 2)] + [(1, 1, 1)] * 7)
    return _schedule(entry, width=16, uplift_hidden=32, head_hidden=32,
                     channels=[8, 12, 12, 12, 12, 8, 8, 8], modes=modes)


def full_scale_schedule() -> UnoSchedule:
    """64^3 -> 8^3 -> 64 x 64 x 128 plan with 90,844,243 parameters, an approximation of the 87M-parameter reference model."""
    modes = [(6, 6, 6), (5, 5, 5), (4, 4, 4), (4, 4, 4),
             (4, 4, 4), (5, 5, 5), (6, 6, 6), (5, 5, 5)]
    return _schedule((64, 64, 64), width=16, uplift_hidden=64, head_hidden=128,
                     channels=[32, 64, 128, 128, 64, 32, 32, 32], modes=modes)


def _n_modes(modes):
    return int(np.prod([2 * m + 1 for m in modes]))


def count_parameters(schedule: UnoSchedule) -> int:
    """Number of real degrees of freedom stored by a model with this schedule."""
    u, w, hh = schedule.uplift_hidden, schedule.width, schedule.head_hidden
    total = 4 * u + u + u * w + w
    for cin, layer in zip(schedule.in_channels(), schedule.layers):
        cout = layer.out_channels
        total += 2 * cin * cout * _n_modes(layer.modes) + cin * cout + cout
    c = schedule.layers[-1].out_channels
    total += 3 * (c * hh + hh + hh + 1)
    return total


def param_shapes(schedule: UnoSchedule) -> dict[str, tuple[tuple[int, ...], bool]]:
    """Name -> (shape, is_complex) of every stored weight, in creation order."""
    shapes: dict[str, tuple[tuple[int, ...], bool]] = {}

    def dense(name, fan_in, fan_out):
        shapes[f"{name}.weight"] = ((fan_in, fan_out), False)
        shapes[f"{name}.bias"] = ((fan_out,), False)

    dense("uplift.0", 4, schedule.uplift_hidden)
    dense("uplift.1", schedule.uplift_hidden, schedule.width)
    for j, (cin, layer) in enumerate(zip(schedule.in_channels(), schedule.layers)):
        cout = layer.out_channels
        shapes[f"layer{j + 1}.spectral"] = ((cin, cout) + tuple(2 * m + 1 for m in layer.modes), True)
        dense(f"layer{j + 1}.pointwise", cin, cout)
    c = schedule.layers[-1].out_channels
    for comp in "ENZ":
        dense(f"head{comp}.0", c, schedule.head_hidden)
        dense(f"head{comp}.1", schedule.head_hidden, 1)
    return shapes


def init_params(schedule: UnoSchedule, seed: int = 0) -> dict[str, np.ndarray]:
    """Fan-in uniform point-wise weights; spectral weights ``U[0, 1) / (cin * cout)``."""
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    shapes = param_shapes(schedule)
    for name, (shape, is_complex) in shapes.items():
        if is_complex:
            scale = 1.0 / (shape[0] * shape[1])
            params[name] = scale * (rng.random(shape) + 1j * rng.random(shape))
        else:
            fan_in = shapes[name.rsplit(".", 1)[0] + ".weight"][0][0]
            bound = 1.0 / np.sqrt(fan_in)
            params[name] = rng.uniform(-bound, bound, size=shape)
    return params


def positional_encoding(extents, domain_size=None) -> np.ndarray:
    """Voxel-center coordinates normalized to [0, 1]: shape ``(3, X, Y, Z)``.

    ``domain_size`` is accepted for symmetry with physical grids; the
    encoding is dimensionless.
    """
    extents = tuple(int(n) for n in extents)
    if any(n < 1 for n in extents):
        raise ValueError(f"extents must be positive, got {extents}")
    axes = [(np.arange(n) + 0.5) / n for n in extents]
    return np.stack(np.meshgrid(*axes, indexing="ij"))


def uplift(a: DiffTensor, coords: np.ndarray, p: dict[str, DiffTensor]) -> DiffTensor:
    """``(B, 1, X, Y, Z)`` normalized input plus coordinates -> ``(B, width, X, Y, Z)``."""
    if a.shape[2:] != coords.shape[1:]:
        raise ValueError(f"input grid {a.shape[2:]} and coordinate grid {coords.shape[1:]} differ")
    c = tc.constant(np.broadcast_to(coords, (a.shape[0],) + coords.shape).copy())
    x = tc.concat([a, c], axis=1)
    x = tc.relu(tc.pointwise_linear(x, p["uplift.0.weight"], p["uplift.0.bias"]))
    return tc.pointwise_linear(x, p["uplift.1.weight"], p["uplift.1.bias"])


def spectral_resample_node(x: DiffTensor, out_res) -> DiffTensor:
    if tuple(x.shape[-3:]) == tuple(out_res):
        return x
    return tc.grid_from_coeffs(tc.diff_resample_coeffs(tc.fft_coeffs(x), out_res))


def spectral_conv(v: DiffTensor, r: DiffTensor, out_res) -> DiffTensor:
    """Keep the ``|k_i| <= m_i`` modes, mix channels per mode, evaluate on ``out_res``.

    ``r`` holds one complex ``(Cin, Cout)`` matrix per retained mode, in FFT
    order on a ``(2 m1 + 1, 2 m2 + 1, 2 m3 + 1)`` block.  Only its Hermitian
    part acts, which is the spectrum of a real convolution kernel.
    """
    block = tuple(r.shape[2:])
    modes = [(b - 1) // 2 for b in block]
    for m, n_in, n_out in zip(modes, v.shape[-3:], out_res):
        if m > n_in // 2 or m > n_out // 2:
            raise ValueError(f"modes {modes} overflow resolutions {v.shape[-3:]} -> {tuple(out_res)}")
    c = tc.diff_resample_coeffs(tc.fft_coeffs(v), block)
    y = tc.mix_modes(tc.hermitian_part(r), c)
    return tc.grid_from_coeffs(tc.diff_resample_coeffs(y, out_res))


def fourier_layer_forward(v: DiffTensor, r: DiffTensor, w: DiffTensor, b: DiffTensor | None,
                          out_res, activation: bool = True) -> DiffTensor:
    """``sigma(spectral_conv(v) + W v)`` with both paths on ``out_res``."""
    y = spectral_conv(v, r, out_res)
    lin = spectral_resample_node(tc.pointwise_linear(v, w, b), out_res)
    y = tc.add(y, lin)
    return tc.relu(y) if activation else y


def _layer(v, p, j, schedule, out_res):
    plan = schedule.layers[j]
    pre = f"layer{j + 1}"
    return fourier_layer_forward(v, p[f"{pre}.spectral"], p[f"{pre}.pointwise.weight"],
                                 p[f"{pre}.pointwise.bias"], out_res, plan.activation)


def network(x: DiffTensor, p: dict[str, DiffTensor], schedule: UnoSchedule) -> DiffTensor:
    """Normalized ``(B, X, Y, Z)`` input on the entry grid -> ``(B, 3, X, Y, T)``."""
    if tuple(x.shape[-3:]) != schedule.entry:
        raise ValueError(f"input grid {x.shape[-3:]} does not match the entry grid {schedule.entry}")
    a = tc.reshape(x, (x.shape[0], 1) + tuple(x.shape[1:]))
    v = uplift(a, positional_encoding(schedule.entry), p)
    outs = []
    into = schedule.skip_into()
    for j, res in enumerate(schedule.resolutions()):
        if j in into:
            skip = spectral_resample_node(outs[into[j]], v.shape[-3:])
            v = tc.concat([v, skip], axis=1)
        v = _layer(v, p, j, schedule, res)
        outs.append(v)
    comps = []
    for comp in "ENZ":
        h = tc.relu(tc.pointwise_linear(v, p[f"head{comp}.0.weight"], p[f"head{comp}.0.bias"]))
        comps.append(tc.pointwise_linear(h, p[f"head{comp}.1.weight"], p[f"head{comp}.1.bias"]))
    return tc.concat(comps, axis=1)


@dataclass
class UnoModel:
    schedule: UnoSchedule
    params: dict[str, np.ndarray]
    norm: NormStats | None = None
    seed: int = 0
    meta: dict = field(default_factory=dict)

    @classmethod
    def create(cls, schedule: UnoSchedule, seed: int = 0, norm: NormStats | None = None) -> "UnoModel":
        return cls(schedule=schedule, params=init_params(schedule, seed), norm=norm, seed=seed)

    @property
    def n_parameters(self) -> int:
        return int(sum(v.size * (2 if np.iscomplexobj(v) else 1) for v in self.params.values()))

    def nodes(self, requires_grad: bool = False) -> dict[str, DiffTensor]:
        make = tc.parameter if requires_grad else tc.constant
        return {k: make(v) for k, v in self.params.items()}

    def output_shape(self, grid) -> tuple[int, int, int, int]:
        gx, gy, gz = grid
        return (3, gx, gy, int(round(gz * self.schedule.time_factor)))

    def predict(self, a: np.ndarray) -> np.ndarray:
        return uno_forward(self, a)

    def save(self, path) -> Path:
        """Checkpoint directory: one f64 tensor file per weight plus the manifest."""
        w = DatasetWriter(Path(path), kind="model", root_seed=self.seed)
        files = {}
        for k, v in sorted(self.params.items()):
            arr = np.stack([v.real, v.imag], axis=-1) if np.iscomplexobj(v) else v
            files[k] = {**w.write(f"{k}.nopd", arr, dtype="f64"), "complex": bool(np.iscomplexobj(v))}
        w.add_sample(0, files)
        w.extra = {
            "schedule": self.schedule.to_dict(),
            "norm": None if self.norm is None else self.norm.to_dict(),
            "n_parameters": self.n_parameters,
            "init": "spectral U[0,1)/(cin*cout) real and imaginary; point-wise U(-1/sqrt(fan_in), 1/sqrt(fan_in))",
            "meta": self.meta,
        }
        w.close()
        return Path(path)

    @classmethod
    def load(cls, path) -> "UnoModel":
        ds = Dataset(path)
        if ds.kind != "model":
            raise ContainerError(f"{path}: dataset kind {ds.kind!r} is not a model checkpoint")
        man = ds.manifest
        params = {}
        for k, entry in ds.samples[0]["files"].items():
            a = ds.load(0, k)
            params[k] = a[..., 0] + 1j * a[..., 1] if entry.get("complex") else a
        norm = None if man.get("norm") is None else NormStats(**man["norm"])
        model = cls(schedule=UnoSchedule.from_dict(man["schedule"]), params=params, norm=norm,
                    seed=int(man["root_seed"]), meta=man.get("meta", {}))
        expected = {k: v[0] for k, v in param_shapes(model.schedule).items()}
        if {k: v.shape for k, v in params.items()} != expected:
            raise ContainerError(f"{path}: checkpoint weights do not match its schedule")
        return model


def uno_forward(model: UnoModel, a: np.ndarray) -> np.ndarray:
    """Predict ``(B, 3, X, Y, T)`` from raw ``a = V_S**2`` of shape ``(B, X, Y, Z)``.

    A single volume ``(X, Y, Z)`` returns ``(3, X, Y, T)``.
    """
    a = np.asarray(a, dtype=np.float64)
    single = a.ndim == 3
    if single:
        a = a[None]
    if a.ndim != 4:
        raise ValueError(f"expected (B, X, Y, Z) input, got shape {a.shape}")
    if model.norm is None:
        raise ValueError("model has no normalization statistics; fit it first")
    grid = a.shape[1:]
    x = normalize_inputs(a, model.norm)
    entry = model.schedule.entry
    if tuple(grid) != entry:
        if any(n < 2 * m + 1 for n, m in zip(grid, model.schedule.layers[0].modes)):
            raise ValueError(f"input grid {grid} is coarser than the first layer's modes")
        x = tc.spectral_resample(x, entry)
    out = network(tc.constant(x), model.nodes(), model.schedule).value
    target = model.output_shape(grid)[1:]
    if tuple(out.shape[-3:]) != tuple(target):
        out = tc.spectral_resample(out, target)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite activations in the operator output")
    return out[0] if single else out
