import time

import numpy as np
import pytest

from uno3d import tensorcore as tc
from uno3d.normalize import NormStats
from uno3d.operator import (
    LayerPlan,
    UnoModel,
    UnoSchedule,
    count_parameters,
    desk_schedule,
    fourier_layer_forward,
    full_scale_schedule,
    init_params,
    network,
    param_shapes,
    positional_encoding,
    spectral_conv,
    uno_forward,
    uplift,
)


def _field(shape, kmax, seed):
    rng = np.random.default_rng(seed)
    grids = np.meshgrid(*[np.arange(n) / n for n in shape], indexing="ij")
    out = np.zeros(shape)
    for _ in range(6):
        k = [rng.integers(-m, m + 1) for m in kmax]
        out += rng.normal() * np.cos(2 * np.pi * sum(ki * g for ki, g in zip(k, grids)) + rng.uniform(0, 6))
    return out


# ---------------------------------------------------------------------------
# positional encoding and lifting
# ---------------------------------------------------------------------------


def test_positional_encoding_voxel_centres():
    pe = positional_encoding((2, 4, 1))
    assert pe.shape == (3, 2, 4, 1)
    np.testing.assert_allclose(pe[0, :, 0, 0], [0.25, 0.75])
    np.testing.assert_allclose(pe[1, 0, :, 0], [0.125, 0.375, 0.625, 0.875])
    np.testing.assert_allclose(pe[2], 0.5)


def test_positional_encoding_rejects_empty():
    with pytest.raises(ValueError):
        positional_encoding((0, 3, 3))


def test_uplift_shape_and_zero_weights(rng):
    sched = desk_schedule((4, 4, 4))
    p = {k: tc.constant(v) for k, v in init_params(sched, 1).items()}
    a = tc.constant(rng.normal(size=(2, 1, 4, 4, 4)))
    out = uplift(a, positional_encoding((4, 4, 4)), p)
    assert out.shape == (2, 16, 4, 4, 4)
    zero = {k: tc.constant(np.zeros_like(v.value)) for k, v in p.items()}
    zero["uplift.1.bias"] = tc.constant(np.arange(16.0))
    out = uplift(a, positional_encoding((4, 4, 4)), zero).value
    np.testing.assert_array_equal(out, np.broadcast_to(np.arange(16.0)[None, :, None, None, None], out.shape))


def test_uplift_grid_mismatch(rng):
    p = {k: tc.constant(v) for k, v in init_params(desk_schedule((4, 4, 4))).items()}
    with pytest.raises(ValueError):
        uplift(tc.constant(np.zeros((1, 1, 4, 4, 4))), positional_encoding((4, 4, 2)), p)


def test_uplift_gradient(rng):
    p = {k: tc.constant(v) for k, v in init_params(desk_schedule((4, 4, 4)), 2).items()}
    coords = positional_encoding((3, 3, 3))
    probe = tc.constant(rng.normal(size=(1, 16, 3, 3, 3)))
    f = lambda x: tc.sum_all(tc.mul(uplift(x, coords, p), probe))
    assert tc.grad_check(f, rng.normal(size=(1, 1, 3, 3, 3))) < 1e-6


# ---------------------------------------------------------------------------
# spectral convolution
# ---------------------------------------------------------------------------


def test_spectral_conv_matches_circular_convolution(rng):
    n, cin, cout = 8, 2, 3
    kernel = rng.normal(size=(cin, cout, n, n, n))
    v = rng.normal(size=(2, cin, n, n, n))
    big = np.fft.fftn(kernel, axes=(-3, -2, -1))
    idx = np.array([0, 1, 2, 3, 4, -4, -3, -2, -1]) % n
    r = big[:, :, idx][:, :, :, idx][:, :, :, :, idx]
    t0 = time.perf_counter()
    got = spectral_conv(tc.constant(v), tc.constant(r), (n, n, n)).value
    assert time.perf_counter() - t0 < 1.0
    want = np.zeros((2, cout, n, n, n))
    for s in np.ndindex(n, n, n):
        shifted = np.roll(v, s, axis=(-3, -2, -1))
        want += np.einsum("io,bixyz->boxyz", kernel[:, :, s[0], s[1], s[2]], shifted)
    assert np.linalg.norm(got - want) / np.linalg.norm(want) < 1e-10


def test_spectral_conv_identity_keeps_band_limited_field(rng):
    x = _field((8, 8, 8), (3, 3, 3), 4)[None, None]
    r = np.zeros((1, 1, 9, 9, 9), complex)
    r[...] = 1.0
    y = spectral_conv(tc.constant(x), tc.constant(r), (8, 8, 8)).value
    np.testing.assert_allclose(y, x, atol=1e-12)


def test_spectral_conv_constant_input_keeps_only_mean_mode(rng):
    r = rng.normal(size=(2, 2, 3, 3, 3)) + 1j * rng.normal(size=(2, 2, 3, 3, 3))
    v = np.ones((1, 2, 6, 6, 6)) * np.array([1.5, -2.0])[None, :, None, None, None]
    y = spectral_conv(tc.constant(v), tc.constant(r), (4, 4, 4)).value
    want = np.einsum("io,i->o", r[:, :, 0, 0, 0].real, [1.5, -2.0])
    np.testing.assert_allclose(y, np.broadcast_to(want[None, :, None, None, None], y.shape), atol=1e-12)


def test_spectral_conv_mode_overflow():
    r = np.zeros((1, 1, 7, 7, 7), complex)
    with pytest.raises(ValueError, match="overflow"):
        spectral_conv(tc.constant(np.zeros((1, 1, 4, 4, 4))), tc.constant(r), (4, 4, 4))


def test_fourier_layer_trivial_weights(rng):
    v = rng.normal(size=(1, 2, 4, 4, 4))
    r = tc.constant(np.zeros((2, 3, 3, 3, 3), complex))
    w = tc.constant(np.zeros((2, 3)))
    b = tc.constant(np.array([1.0, -1.0, 0.5]))
    y = fourier_layer_forward(tc.constant(v), r, w, b, (2, 2, 2), activation=True).value
    want = np.broadcast_to(np.array([1.0, 0.0, 0.5])[None, :, None, None, None], (1, 3, 2, 2, 2))
    np.testing.assert_allclose(y, want, atol=1e-14)
    y = fourier_layer_forward(tc.constant(v), r, tc.constant(np.eye(2, 3)), None, (4, 4, 4),
                              activation=False).value
    np.testing.assert_allclose(y[:, :2], v, atol=1e-14)
    np.testing.assert_allclose(y[:, 2], 0.0, atol=1e-14)


def test_fourier_layer_gradients(rng):
    r0 = rng.normal(size=(2, 3, 3, 3, 3)) + 1j * rng.normal(size=(2, 3, 3, 3, 3))
    w = tc.constant(rng.normal(size=(2, 3)))
    b = tc.constant(rng.normal(size=3))
    probe = tc.constant(rng.normal(size=(1, 3, 6, 6, 6)))
    fx = lambda x: tc.sum_all(tc.mul(fourier_layer_forward(x, tc.constant(r0), w, b, (6, 6, 6)), probe))
    assert tc.grad_check(fx, rng.normal(size=(1, 2, 4, 4, 4))) < 1e-6
    v = tc.constant(rng.normal(size=(1, 2, 4, 4, 4)))
    fr = lambda re: tc.sum_all(tc.mul(
        fourier_layer_forward(v, tc.add(tc.mul(re, 1.0 + 0j), tc.constant(1j * r0.imag)), w, b, (6, 6, 6)), probe))
    assert tc.grad_check(fr, r0.real) < 1e-6


# ---------------------------------------------------------------------------
# schedules and the full network
# ---------------------------------------------------------------------------


def test_desk_forward_shape():
    sched = desk_schedule((16, 16, 16))
    model = UnoModel.create(sched, seed=0, norm=NormStats(0.0, 1.0))
    out = model.predict(np.random.default_rng(0).normal(size=(2, 16, 16, 16)))
    assert out.shape == (2, 3, 16, 16, 32)
    assert np.all(np.isfinite(out))
    assert model.predict(np.zeros((16, 16, 16))).shape == (3, 16, 16, 32)


def test_full_schedule_plan():
    sched = full_scale_schedule()
    assert sched.entry == (64, 64, 64)
    assert sched.resolutions()[3] == (8, 8, 8)
    assert sched.output_resolution == (64, 64, 128)
    assert count_parameters(sched) == 90_844_243


def test_parameter_count_formula_matches_weights():
    sched = desk_schedule((16, 16, 16))
    model = UnoModel.create(sched)
    assert model.n_parameters == count_parameters(sched) == 89_299
    full = full_scale_schedule()
    enumerated = sum(int(np.prod(s)) * (2 if c else 1) for s, c in param_shapes(full).values())
    assert enumerated == count_parameters(full)


def test_desk_in_channels_include_skips():
    assert desk_schedule().in_channels() == [16, 8, 12, 12, 12, 24, 20, 16]


def test_discretization_invariance():
    sched = desk_schedule((16, 16, 16))
    model = UnoModel.create(sched, seed=3, norm=NormStats(1.0, 2.0))
    fine = _field((32, 32, 32), (5, 5, 5), 9)
    coarse = _field((16, 16, 16), (5, 5, 5), 9)
    out_fine = uno_forward(model, fine)
    out_coarse = uno_forward(model, coarse)
    assert out_fine.shape == (3, 32, 32, 64)
    up = tc.spectral_resample(out_coarse, (32, 32, 64))
    assert np.abs(out_fine - up).max() <= 1e-10 * np.abs(up).max()


def test_network_rejects_wrong_entry():
    sched = desk_schedule((8, 8, 8))
    p = {k: tc.constant(v) for k, v in init_params(sched).items()}
    with pytest.raises(ValueError):
        network(tc.constant(np.zeros((1, 8, 8, 4))), p, sched)


def test_network_parameter_gradients():
    sched = desk_schedule((4, 4, 4))
    rng = np.random.default_rng(5)
    params = init_params(sched, 5)
    x = tc.constant(rng.normal(size=(1, 4, 4, 4)))
    probe = tc.constant(rng.normal(size=(1, 3, 4, 4, 8)))
    for name in ["uplift.0.weight", "layer1.pointwise.weight", "layer5.pointwise.bias", "headZ.0.weight"]:
        def f(w, name=name):
            p = {k: tc.constant(v) for k, v in params.items() if k != name}
            p[name] = w
            return tc.sum_all(tc.mul(network(x, p, sched), probe))
        assert tc.grad_check(f, params[name], n_probe=12) < 1e-4, name
    p = {k: tc.constant(v) for k, v in params.items()}
    f = lambda inp: tc.sum_all(tc.mul(network(inp, p, sched), probe))
    assert tc.grad_check(f, x.value) < 1e-4


def test_schedule_validation():
    good = desk_schedule((16, 16, 16))
    layers = list(good.layers)
    layers[0] = LayerPlan(8, (0.5,) * 3, (5, 5, 5))
    with pytest.raises(ValueError, match="modes"):
        UnoSchedule(entry=(16, 16, 16), width=16, uplift_hidden=8, head_hidden=8, layers=tuple(layers))
    layers = list(good.layers)
    layers[1] = LayerPlan(12, (1.0,) * 3, (1, 1, 1))
    with pytest.raises(ValueError, match="encoder"):
        UnoSchedule(entry=(16, 16, 16), width=16, uplift_hidden=8, head_hidden=8, layers=tuple(layers))
    with pytest.raises(ValueError, match="skip"):
        UnoSchedule(entry=(16, 16, 16), width=16, uplift_hidden=8, head_hidden=8, layers=good.layers,
                    skips=((5, 6),))
    assert UnoSchedule.from_dict(good.to_dict()) == good


def test_forward_requires_norm():
    model = UnoModel.create(desk_schedule((8, 8, 8)))
    with pytest.raises(ValueError, match="normalization"):
        model.predict(np.zeros((8, 8, 8)))


def test_save_load_roundtrip(tmp_path):
    model = UnoModel.create(desk_schedule((8, 8, 8)), seed=11, norm=NormStats(2.0, 3.0))
    model.save(tmp_path / "m")
    back = UnoModel.load(tmp_path / "m")
    assert back.schedule == model.schedule and back.norm == model.norm and back.seed == 11
    for k, v in model.params.items():
        np.testing.assert_array_equal(back.params[k], v)
    a = np.random.default_rng(0).uniform(1e6, 9e6, size=(8, 8, 8))
    np.testing.assert_array_equal(back.predict(a), model.predict(a))
