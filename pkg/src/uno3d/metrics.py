"""Evaluation metrics: MAE, peak ground velocity, wavelet goodness-of-fit, Fourier spectra.

Goodness-of-fit scores are single-valued envelope and phase criteria computed
on an analytic Morlet scalogram (``omega0 = 6``):

* envelope misfit ``EM = sum | |W_pred| - |W_ref| | / sum |W_ref|``
* phase misfit ``PM = sum |W_ref| |arg(W_pred conj(W_ref))| / pi / sum |W_ref|``
* score ``10 exp(-|misfit|)``

Sums run over the time-frequency plane inside the frequency band.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.fft as sfft

__all__ = [
    "mae_per_component",
    "pgv",
    "pgv_vector",
    "cwt_morlet",
    "morlet_frequencies",
    "gof_envelope_phase",
    "GofReport",
    "gof_report",
    "FourierSpectrum",
    "fourier_amplitude_spectrum",
    "spectrum_energy",
    "write_mae_csv",
    "write_spectra_csv",
    "GOF_FORMULA",
]

OMEGA0 = 6.0
GOF_FORMULA = {
    "wavelet": "analytic Morlet, omega0 = 6, unit-peak frequency response",
    "envelope_misfit": "sum| |Wp| - |Wr| | / sum|Wr|",
    "phase_misfit": "sum(|Wr| |arg(Wp conj(Wr))| / pi) / sum|Wr|",
    "score": "10 exp(-|misfit|)",
    "variant": "single-valued, globally normalized",
}


def _data(x) -> np.ndarray:
    return np.asarray(getattr(x, "data", x), dtype=np.float64)


def _component_axis(a: np.ndarray) -> int:
    if a.ndim < 2:
        raise ValueError(f"records need a component axis and a time axis, got shape {a.shape}")
    # (3, ..., T) single record or (B, 3, X, Y, T) batch
    return 1 if a.ndim == 5 else 0


def mae_per_component(pred, ref) -> np.ndarray:
    """Mean ``|pred - ref|`` over everything but the component axis."""
    p, r = _data(pred), _data(ref)
    if p.shape != r.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {r.shape}")
    ax = _component_axis(p)
    d = np.abs(p - r)
    return d.mean(axis=tuple(i for i in range(d.ndim) if i != ax))


def pgv(record) -> np.ndarray:
    """Peak ``|v|`` over time, per component and sensor."""
    d = _data(record)
    if d.size == 0:
        raise ValueError("empty record")
    return np.abs(d).max(axis=-1)


def pgv_vector(record) -> np.ndarray:
    """Peak of the three-component Euclidean norm over time, per sensor."""
    d = _data(record)
    if d.size == 0:
        raise ValueError("empty record")
    ax = _component_axis(d)
    return np.sqrt((d ** 2).sum(axis=ax)).max(axis=-1)


def morlet_frequencies(band, n: int = 32) -> np.ndarray:
    lo, hi = band
    if not 0 < lo < hi:
        raise ValueError(f"invalid frequency band {band}")
    return np.geomspace(lo, hi, n)


def cwt_morlet(signal, sample_rate: float, freqs, omega0: float = OMEGA0) -> np.ndarray:
    """Continuous wavelet transform with an analytic Morlet wavelet.

    Parameters
    ----------
    signal : array_like, shape (..., T)
        Real traces; the transform acts on the last axis.
    sample_rate : float
        Samples per second.
    freqs : array_like
        Analysis frequencies in Hz, each in ``(0, sample_rate / 2)``.

    Returns
    -------
    ndarray, shape (..., F, T)
        Complex coefficients.  The wavelet spectrum at scale ``s`` is
        ``2 exp(-(s w - omega0)**2 / 2)`` for ``w > 0`` and zero otherwise, so a
        sinusoid of amplitude ``A`` has ``|W| = A`` on its ridge.
    """
    x = np.asarray(signal, dtype=np.float64)
    freqs = np.atleast_1d(np.asarray(freqs, dtype=np.float64))
    nyq = sample_rate / 2
    if np.any(freqs <= 0) or np.any(freqs >= nyq):
        raise ValueError(f"frequencies must lie in (0, {nyq}) Hz")
    n = x.shape[-1]
    omega = 2 * np.pi * sfft.fftfreq(n, d=1.0 / sample_rate)
    scales = omega0 / (2 * np.pi * freqs)
    arg = scales[:, None] * omega[None, :]
    psi = np.where(omega[None, :] > 0, 2.0 * np.exp(-0.5 * (arg - omega0) ** 2), 0.0)
    spec = sfft.fft(x, axis=-1)
    return sfft.ifft(spec[..., None, :] * psi, axis=-1)


def gof_envelope_phase(pred, ref, sample_rate: float, band=None, n_freqs: int = 32,
                       freqs=None) -> tuple[float, float, bool]:
    """Envelope and phase goodness-of-fit of one trace pair.

    Returns ``(envelope_gof, phase_gof, defined)``.  When the reference has no
    energy in the band the criteria are undefined and ``(nan, nan, False)``
    is returned.
    """
    p = np.asarray(pred, dtype=np.float64)
    r = np.asarray(ref, dtype=np.float64)
    if p.shape != r.shape or p.ndim != 1:
        raise ValueError(f"need two traces of equal length, got {p.shape} and {r.shape}")
    if freqs is None:
        freqs = morlet_frequencies(band if band is not None else (0.2, 0.4 * sample_rate), n_freqs)
    wp = cwt_morlet(p, sample_rate, freqs)
    wr = cwt_morlet(r, sample_rate, freqs)
    return _gof_from_cwt(wp, wr)


def _gof_from_cwt(wp, wr):
    ar = np.abs(wr)
    norm = ar.sum(axis=(-2, -1))
    em = np.abs(np.abs(wp) - ar).sum(axis=(-2, -1))
    pm = (ar * np.abs(np.angle(wp * np.conj(wr)))).sum(axis=(-2, -1)) / np.pi
    tiny = np.finfo(np.float64).tiny
    defined = norm > tiny
    with np.errstate(divide="ignore", invalid="ignore"):
        env = np.where(defined, 10.0 * np.exp(-np.abs(em / norm)), np.nan)
        pha = np.where(defined, 10.0 * np.exp(-np.abs(pm / norm)), np.nan)
    if np.ndim(env) == 0:
        return float(env), float(pha), bool(defined)
    return env, pha, defined


@dataclass
class GofReport:
    envelope: np.ndarray
    phase: np.ndarray
    defined: np.ndarray
    band: tuple[float, float]
    frequencies: np.ndarray
    sample_rate: float
    meta: dict = field(default_factory=dict)

    @property
    def frac_envelope_good(self) -> float:
        v = self.envelope[self.defined]
        return float(np.mean(v > 6)) if v.size else float("nan")

    @property
    def frac_phase_very_good(self) -> float:
        v = self.phase[self.defined]
        return float(np.mean(v > 8)) if v.size else float("nan")

    def summary(self) -> dict:
        comps = {}
        for i, c in enumerate("ENZ"):
            ok = self.defined[..., i, :, :] if self.defined.ndim == 4 else self.defined[i]
            env = (self.envelope[..., i, :, :] if self.envelope.ndim == 4 else self.envelope[i])[ok]
            pha = (self.phase[..., i, :, :] if self.phase.ndim == 4 else self.phase[i])[ok]
            comps[c] = {
                "envelope_mean": float(env.mean()) if env.size else None,
                "phase_mean": float(pha.mean()) if pha.size else None,
                "frac_envelope_gt_6": float(np.mean(env > 6)) if env.size else None,
                "frac_phase_gt_8": float(np.mean(pha > 8)) if pha.size else None,
            }
        return {
            "frac_envelope_gt_6": self.frac_envelope_good,
            "frac_phase_gt_8": self.frac_phase_very_good,
            "n_points": int(self.defined.size),
            "n_undefined": int((~self.defined).sum()),
            "band_hz": list(self.band),
            "components": comps,
        }

    def to_json(self, path) -> Path:
        path = Path(path)
        doc = {
            "summary": self.summary(),
            "formula": GOF_FORMULA,
            "frequencies_hz": self.frequencies.tolist(),
            "sample_rate_hz": self.sample_rate,
            "shape": list(self.envelope.shape),
            "envelope": np.where(self.defined, self.envelope, -1.0).tolist(),
            "phase": np.where(self.defined, self.phase, -1.0).tolist(),
            "undefined_sentinel": -1.0,
            "meta": self.meta,
        }
        path.write_text(json.dumps(doc, indent=1))
        return path


def gof_report(pred, ref, sample_rate: float, band=(0.2, 5.0), n_freqs: int = 32) -> GofReport:
    """Per-sensor, per-component scores for records of shape ``(..., 3, X, Y, T)``."""
    p, r = _data(pred), _data(ref)
    if p.shape != r.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {r.shape}")
    freqs = morlet_frequencies(band, n_freqs)
    env = np.empty(p.shape[:-1])
    pha = np.empty(p.shape[:-1])
    ok = np.empty(p.shape[:-1], dtype=bool)
    # one row of sensors at a time keeps the scalogram memory bounded
    for idx in np.ndindex(p.shape[:-2]):
        e, f, d = _gof_from_cwt(cwt_morlet(p[idx], sample_rate, freqs), cwt_morlet(r[idx], sample_rate, freqs))
        env[idx], pha[idx], ok[idx] = e, f, d
    return GofReport(envelope=env, phase=pha, defined=ok, band=tuple(band), frequencies=freqs,
                     sample_rate=sample_rate)


@dataclass
class FourierSpectrum:
    """One-sided, unnormalized DFT amplitudes ``|X_k|``."""

    frequencies: np.ndarray
    amplitudes: np.ndarray
    n_samples: int
    taper: str | None = None

    def __iter__(self):
        yield self.frequencies
        yield self.amplitudes

    @property
    def meta(self) -> dict:
        return {"taper": self.taper, "normalization": "none (|rfft|)", "n_samples": self.n_samples}


def fourier_amplitude_spectrum(trace, sample_rate: float, taper: str | None = None) -> FourierSpectrum:
    """Amplitude spectrum along the last axis; ``taper='hann'`` applies a Hann window first."""
    x = np.asarray(trace, dtype=np.float64)
    if x.shape[-1] == 0:
        raise ValueError("empty trace")
    n = x.shape[-1]
    if taper == "hann":
        x = x * np.hanning(n)
    elif taper is not None:
        raise ValueError(f"unknown taper {taper!r}")
    amps = np.abs(sfft.rfft(x, axis=-1))
    return FourierSpectrum(sfft.rfftfreq(n, d=1.0 / sample_rate), amps, n, taper)


def spectrum_energy(spec: FourierSpectrum) -> np.ndarray:
    """``sum x**2`` recovered from a one-sided spectrum (Parseval)."""
    a2 = spec.amplitudes ** 2
    n = spec.n_samples
    w = np.full(a2.shape[-1], 2.0)
    w[0] = 1.0
    if n % 2 == 0:
        w[-1] = 1.0
    return (a2 * w).sum(axis=-1) / n


def write_mae_csv(path, maes, sample_ids=None) -> Path:
    """One row per sample: ``sample, mae_E, mae_N, mae_Z``."""
    maes = np.atleast_2d(np.asarray(maes, dtype=np.float64))
    ids = range(len(maes)) if sample_ids is None else sample_ids
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample", "mae_E", "mae_N", "mae_Z"])
        for i, row in zip(ids, maes):
            w.writerow([i, *(repr(float(v)) for v in row)])
    return path


def write_spectra_csv(path, pred, ref, sample_rate: float) -> Path:
    """Sensor-averaged amplitude spectra per component for prediction and reference."""
    p, r = _data(pred), _data(ref)
    sp, sr = fourier_amplitude_spectrum(p, sample_rate), fourier_amplitude_spectrum(r, sample_rate)
    ax = _component_axis(p)
    pa = np.moveaxis(sp.amplitudes, ax, 0).reshape(3, -1, len(sp.frequencies)).mean(axis=1)
    ra = np.moveaxis(sr.amplitudes, ax, 0).reshape(3, -1, len(sr.frequencies)).mean(axis=1)
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frequency_hz"] + [f"{k}_{c}" for k in ("pred", "ref") for c in "ENZ"])
        for j, f in enumerate(sp.frequencies):
            w.writerow([repr(float(f))] + [repr(float(v)) for v in (*pa[:, j], *ra[:, j])])
    return path
