import numpy as np
import pytest
from hypothesis import given, strategies as st

from uno3d.source import (
    SourceSpec,
    moment_tensor_from_angles,
    moment_tensor_ned,
    source_time_derivative,
    source_time_function,
)


def _slip_normal_tensor(strike, dip, rake):
    """Oracle: M = s n^T + n s^T from the fault normal and slip vectors in NED."""
    phi, delta, lam = np.radians([strike, dip, rake])
    n = np.array([-np.sin(delta) * np.sin(phi), np.sin(delta) * np.cos(phi), -np.cos(delta)])
    s = np.array([
        np.cos(lam) * np.cos(phi) + np.cos(delta) * np.sin(lam) * np.sin(phi),
        np.cos(lam) * np.sin(phi) - np.cos(delta) * np.sin(lam) * np.cos(phi),
        -np.sin(lam) * np.sin(delta),
    ])
    return np.outer(s, n) + np.outer(n, s)


def test_source_time_function_values():
    assert source_time_function(0.0, 0.127) == 0.0
    assert np.isclose(source_time_function(0.127, 0.127), 1 - 2 / np.e, atol=1e-12)
    assert np.isclose(source_time_function(0.127, 0.127), 0.26424, atol=1e-5)
    assert source_time_function(-1.0, 0.127) == 0.0
    assert np.isclose(source_time_function(50.0, 0.127), 1.0)


def test_source_time_function_monotone():
    t = np.linspace(-0.5, 5, 5001)
    s = source_time_function(t, 0.2)
    assert np.all(np.diff(s) >= 0) and np.all(s < 1) and np.all(s >= 0)


def test_derivative_peaks_at_tau():
    tau = 0.127
    t = np.linspace(0, 2, 200001)
    d = source_time_derivative(t, tau)
    assert abs(t[np.argmax(d)] - tau) < 1e-5
    fd = np.gradient(source_time_function(t, tau), t)
    np.testing.assert_allclose(d[1:-1], fd[1:-1], atol=1e-4)


def test_tau_must_be_positive():
    with pytest.raises(ValueError):
        source_time_function(1.0, 0.0)
    with pytest.raises(ValueError):
        source_time_derivative(1.0, -1.0)


def test_vertical_strike_slip_tensor():
    m = moment_tensor_ned(0, 90, 0)
    want = np.zeros((3, 3))
    want[0, 1] = want[1, 0] = 1.0
    np.testing.assert_allclose(m, want, atol=1e-15)


def test_pinned_default_tensor():
    m = moment_tensor_ned(50, 45, 88)
    np.testing.assert_allclose(m, _slip_normal_tensor(50, 45, 88), atol=1e-14)
    pinned = np.array([
        [-0.61076937, 0.48781868, -0.01586250],
        [0.48781868, -0.38862145, -0.01890419],
        [-0.01586250, -0.01890419, 0.99939083],
    ])
    np.testing.assert_allclose(m, pinned, atol=1e-8)


@given(st.floats(0, 359.99), st.floats(0, 90), st.floats(-180, 180), st.floats(0.1, 10))
def test_double_couple_properties(strike, dip, rake, scale):
    m = moment_tensor_ned(strike, dip, rake, scale)
    np.testing.assert_allclose(m, m.T, atol=0)
    assert abs(np.trace(m)) < 1e-14 * max(1.0, scale)
    np.testing.assert_allclose(m, scale * _slip_normal_tensor(strike, dip, rake), atol=1e-12 * scale)
    ev = np.sort(np.linalg.eigvalsh(m / scale))
    np.testing.assert_allclose(ev, [-1, 0, 1], atol=1e-12)


def test_solver_frame_permutation():
    m = moment_tensor_from_angles(50, 45, 88, 2.0)
    ned = moment_tensor_ned(50, 45, 88, 2.0)
    assert m[0, 0] == ned[1, 1] and m[1, 1] == ned[0, 0] and m[2, 2] == ned[2, 2]
    assert m[0, 2] == ned[1, 2] and m[1, 2] == ned[0, 2]


@pytest.mark.parametrize("kw", [
    {"strike": 360.0}, {"dip": -1.0}, {"dip": 91.0}, {"rake": 181.0},
    {"tau_s": 0.0}, {"position_m": (0.0, 0.0, 10.0)}, {"position_m": (0.0, 0.0)},
])
def test_source_spec_validation(kw):
    with pytest.raises(ValueError):
        SourceSpec(**kw)
