import json

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.signal import hilbert

from uno3d import tensorcore as tc
from uno3d.metrics import (
    cwt_morlet,
    fourier_amplitude_spectrum,
    gof_envelope_phase,
    gof_report,
    mae_per_component,
    morlet_frequencies,
    pgv,
    pgv_vector,
    spectrum_energy,
    write_mae_csv,
    write_spectra_csv,
)
from uno3d.training import mae_loss

RATE = 20.0


def _wavelet_trace(n=256, f0=2.0, t0=6.0, seed=None):
    t = np.arange(n) / RATE
    tr = np.exp(-((t - t0) * f0) ** 2) * np.cos(2 * np.pi * f0 * (t - t0))
    if seed is not None:
        tr += 0.3 * np.random.default_rng(seed).normal(size=n)
    return tr


def test_mae_examples(rng):
    ref = rng.normal(size=(3, 4, 4, 10))
    np.testing.assert_array_equal(mae_per_component(ref, ref), 0.0)
    pred = ref.copy()
    pred[0] += 1e-3
    np.testing.assert_allclose(mae_per_component(pred, ref), [1e-3, 0, 0], atol=1e-15)
    pred = rng.normal(size=ref.shape)
    loop = [np.mean([abs(pred[c, i, j, k] - ref[c, i, j, k]) for i in range(4) for j in range(4) for k in range(10)])
            for c in range(3)]
    np.testing.assert_allclose(mae_per_component(pred, ref), loop, rtol=1e-12)
    # training loss = sum of the per-component MAEs
    assert np.isclose(mae_per_component(pred, ref).sum(), float(mae_loss(tc.constant(pred), ref).value), rtol=1e-12)
    with pytest.raises(ValueError):
        mae_per_component(pred, ref[..., :5])


def test_pgv_examples():
    assert np.all(pgv(np.full((3, 2, 2, 5), -2.5)) == 2.5)
    spike = np.zeros((3, 1, 1, 50))
    spike[1, 0, 0, 17] = 4.0
    assert pgv(spike)[1, 0, 0] == 4.0
    t = np.linspace(0, 1, 2001)
    assert abs(pgv(np.stack([3.0 * np.sin(2 * np.pi * 5 * t)] * 3))[0] - 3.0) < 0.03
    rec = np.zeros((3, 1, 1, 4))
    rec[:, 0, 0, 2] = [3.0, 4.0, 0.0]
    assert pgv_vector(rec)[0, 0] == 5.0
    with pytest.raises(ValueError):
        pgv(np.zeros((3, 0)))


def test_cwt_ridge_at_sinusoid_frequency():
    n = 1024
    t = np.arange(n) / RATE
    f0 = 1.7
    freqs = np.linspace(0.5, 4.0, 351)
    w = np.abs(cwt_morlet(2.0 * np.sin(2 * np.pi * f0 * t), RATE, freqs))
    mid = w[:, n // 4: 3 * n // 4]
    ridge = freqs[np.argmax(mid, axis=0)]
    assert np.all(np.abs(ridge - f0) <= 0.01 + 1e-9)
    assert np.allclose(mid[np.argmin(np.abs(freqs - f0))], 2.0, rtol=0.02)


def test_cwt_zero_and_linearity(rng):
    freqs = morlet_frequencies((0.2, 5.0), 16)
    assert not cwt_morlet(np.zeros(128), RATE, freqs).any()
    x = rng.normal(size=128)
    w1, w3 = cwt_morlet(x, RATE, freqs), cwt_morlet(3.0 * x, RATE, freqs)
    np.testing.assert_allclose(np.abs(w3), 3 * np.abs(w1), rtol=1e-12)
    big = np.abs(w1) > 1e-6 * np.abs(w1).max()
    np.testing.assert_allclose(np.angle(w3)[big], np.angle(w1)[big], atol=1e-9)


def test_cwt_rejects_frequency_above_nyquist():
    with pytest.raises(ValueError):
        cwt_morlet(np.zeros(64), RATE, [1.0, 10.0])
    with pytest.raises(ValueError):
        morlet_frequencies((1.0, 0.5))


def test_gof_identical_and_scaled():
    ref = _wavelet_trace(seed=1)
    env, pha, ok = gof_envelope_phase(ref, ref, RATE, band=(0.2, 5.0))
    assert ok and env == 10.0 and pha == 10.0
    env, pha, _ = gof_envelope_phase(2 * ref, ref, RATE, band=(0.2, 5.0))
    assert pha == 10.0
    assert abs(env - 10 * np.exp(-1)) < 0.01


def test_gof_envelope_asymmetry():
    ref = _wavelet_trace(seed=2)
    env_fwd, _, _ = gof_envelope_phase(2 * ref, ref, RATE, band=(0.2, 5.0))
    env_bwd, _, _ = gof_envelope_phase(ref, 2 * ref, RATE, band=(0.2, 5.0))
    assert np.isclose(env_fwd, 10 * np.exp(-1.0), atol=1e-12)
    assert np.isclose(env_bwd, 10 * np.exp(-0.5), atol=1e-12)


def test_gof_half_period_shift_hurts_phase_more():
    f0 = 2.0
    ref = _wavelet_trace(n=512, f0=f0, t0=12.0)
    shifted = _wavelet_trace(n=512, f0=f0, t0=12.0 + 0.5 / f0)
    env, pha, _ = gof_envelope_phase(shifted, ref, RATE, band=(0.5, 5.0))
    assert pha < env


def test_gof_undefined_for_zero_reference(tmp_path):
    env, pha, ok = gof_envelope_phase(np.ones(64), np.zeros(64), RATE, band=(0.2, 5.0))
    assert not ok and np.isnan(env) and np.isnan(pha)
    rep = gof_report(np.ones((3, 1, 1, 64)), np.zeros((3, 1, 1, 64)), RATE, band=(0.2, 5.0), n_freqs=8)
    doc = json.loads(rep.to_json(tmp_path / "g.json").read_text())
    assert doc["envelope"][0][0][0] == -1.0 and doc["summary"]["n_undefined"] == 3


@given(st.integers(0, 2 ** 31), st.floats(-5, 5), st.floats(0.1, 10))
def test_gof_range(seed, shift, scale):
    rng = np.random.default_rng(seed)
    ref = rng.normal(size=96)
    pred = scale * rng.normal(size=96) + shift
    env, pha, ok = gof_envelope_phase(pred, ref, RATE, band=(0.2, 5.0), n_freqs=12)
    assert ok and 0 <= env <= 10 and 0 <= pha <= 10


@given(st.integers(0, 2 ** 31), st.floats(0.2, 5.0), st.floats(-3.0, 3.0))
def test_phase_gof_symmetric_for_scaled_rotations(seed, scale, phi):
    ref = _wavelet_trace(seed=seed % 1000)
    pred = scale * np.real(np.exp(1j * phi) * hilbert(ref))
    _, fwd, _ = gof_envelope_phase(pred, ref, RATE, band=(0.5, 5.0), n_freqs=16)
    _, bwd, _ = gof_envelope_phase(ref, pred, RATE, band=(0.5, 5.0), n_freqs=16)
    assert abs(fwd - bwd) < 1e-9


def test_spectrum_line():
    n, k, amp = 200, 13, 1.5
    t = np.arange(n) / RATE
    spec = fourier_amplitude_spectrum(amp * np.cos(2 * np.pi * k * RATE / n * t), RATE)
    f, a = spec
    assert np.isclose(f[k], k * RATE / n)
    assert np.isclose(a[k], amp * n / 2, rtol=1e-12)
    assert np.all(np.delete(a, k) < 1e-9)
    assert not fourier_amplitude_spectrum(np.zeros(32), RATE).amplitudes.any()


@given(st.integers(1, 300), st.integers(0, 2 ** 31))
def test_parseval(n, seed):
    x = np.random.default_rng(seed).normal(size=n)
    e = spectrum_energy(fourier_amplitude_spectrum(x, RATE))
    assert abs(e - np.sum(x ** 2)) <= 1e-10 * max(1.0, np.sum(x ** 2))


def test_spectrum_taper_meta():
    s = fourier_amplitude_spectrum(np.ones(16), RATE, taper="hann")
    assert s.meta["taper"] == "hann" and s.meta["n_samples"] == 16
    assert fourier_amplitude_spectrum(np.ones(16), RATE).meta["taper"] is None
    with pytest.raises(ValueError):
        fourier_amplitude_spectrum(np.ones(16), RATE, taper="bartlett")


def test_report_and_csv_writers(tmp_path, rng):
    ref = np.stack([_wavelet_trace(128, seed=s) for s in range(3 * 2 * 2)]).reshape(3, 2, 2, 128)
    rep = gof_report(ref, ref, RATE, band=(0.2, 5.0), n_freqs=8)
    assert rep.envelope.shape == (3, 2, 2) and np.all(rep.envelope == 10.0)
    assert rep.frac_envelope_good == 1.0 and rep.frac_phase_very_good == 1.0
    write_mae_csv(tmp_path / "mae.csv", [[1.0, 2.0, 3.0]], [7])
    assert (tmp_path / "mae.csv").read_text().splitlines() == ["sample,mae_E,mae_N,mae_Z", "7,1.0,2.0,3.0"]
    write_spectra_csv(tmp_path / "s.csv", ref, ref, RATE)
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0].startswith("frequency_hz,pred_E") and len(lines) == 1 + 65
