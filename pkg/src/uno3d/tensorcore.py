"""Dense tensor kernels, 3D Fourier transforms and a small reverse-mode autodiff.

Tensors are plain ``numpy.ndarray`` objects (float64 or complex128).  The
differentiable layer wraps them in :class:`DiffTensor` nodes that record a
backward closure per operation; :func:`backward` walks the recorded graph
once and then releases it.

FFT conventions
---------------
``fft3`` is unnormalized, ``ifft3`` carries the ``1/N`` factor.  Internally the
spectral operators work on *normalized coefficients* ``c = fft(x) / N``, which
are the Fourier-series coefficients of the trigonometric interpolant of ``x``
and therefore do not depend on the grid size.  Resampling a spectrum from ``N``
to ``M`` points is zero-padding or truncation of those coefficients, with the
Nyquist bin of an even grid split in two halves (upsampling) or folded
(downsampling).  Downsampling after upsampling is the identity.

Complex gradients
-----------------
For a complex node ``z`` and a real scalar loss ``L`` the stored gradient is
``dL/dRe(z) + 1j * dL/dIm(z)``.  With this convention a complex-linear map
``y = A z`` back-propagates as ``A^H g``.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
import scipy.fft as sfft

__all__ = [
    "DiffTensor",
    "fft3",
    "ifft3",
    "resample_coeffs",
    "spectral_resample",
    "backward",
    "grad_check",
    "constant",
    "parameter",
    "add",
    "mul",
    "relu",
    "absolute",
    "sum_all",
    "mean_all",
    "pointwise_linear",
    "concat",
    "fft_coeffs",
    "grid_from_coeffs",
    "diff_resample_coeffs",
    "hermitian_part",
    "mix_modes",
    "split_channels",
    "stack_channels",
    "reshape",
]

REAL_TOL = 1e-10


# ---------------------------------------------------------------------------
# plain (non-differentiable) spectral kernels
# ---------------------------------------------------------------------------

def _check_axes(ndim: int, axes: Sequence[int]) -> tuple[int, ...]:
    if len(axes) != 3:
        raise ValueError(f"expected 3 axes, got {len(axes)}")
    out = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ValueError(f"axis {ax} out of range for a rank-{ndim} tensor")
        out.append(ax % ndim)
    if len(set(out)) != 3:
        raise ValueError(f"axes must be distinct, got {tuple(axes)}")
    return tuple(out)


def _take(a, axis, sl):
    idx = [slice(None)] * a.ndim
    idx[axis] = sl
    return a[tuple(idx)]


def _resample_axis(c: np.ndarray, axis: int, m: int) -> np.ndarray:
    n = c.shape[axis]
    if m == n:
        return c
    shape = list(c.shape)
    shape[axis] = m
    out = np.zeros(shape, dtype=c.dtype)
    if m > n:
        h = (n - 1) // 2
        _take(out, axis, slice(0, h + 1))[...] = _take(c, axis, slice(0, h + 1))
        if h:
            _take(out, axis, slice(m - h, m))[...] = _take(c, axis, slice(n - h, n))
        if n % 2 == 0:
            half = 0.5 * _take(c, axis, slice(n // 2, n // 2 + 1))
            _take(out, axis, slice(n // 2, n // 2 + 1))[...] += half
            _take(out, axis, slice(m - n // 2, m - n // 2 + 1))[...] += half
    else:
        h = (m - 1) // 2
        _take(out, axis, slice(0, h + 1))[...] = _take(c, axis, slice(0, h + 1))
        if h:
            _take(out, axis, slice(m - h, m))[...] = _take(c, axis, slice(n - h, n))
        if m % 2 == 0:
            _take(out, axis, slice(m // 2, m // 2 + 1))[...] = (
                _take(c, axis, slice(m // 2, m // 2 + 1))
                + _take(c, axis, slice(n - m // 2, n - m // 2 + 1))
            )
    return out


def _resample_axis_adjoint(g: np.ndarray, axis: int, n: int) -> np.ndarray:
    m = g.shape[axis]
    if m == n:
        return g
    shape = list(g.shape)
    shape[axis] = n
    out = np.zeros(shape, dtype=g.dtype)
    if m > n:
        h = (n - 1) // 2
        _take(out, axis, slice(0, h + 1))[...] = _take(g, axis, slice(0, h + 1))
        if h:
            _take(out, axis, slice(n - h, n))[...] = _take(g, axis, slice(m - h, m))
        if n % 2 == 0:
            _take(out, axis, slice(n // 2, n // 2 + 1))[...] = 0.5 * (
                _take(g, axis, slice(n // 2, n // 2 + 1))
                + _take(g, axis, slice(m - n // 2, m - n // 2 + 1))
            )
    else:
        h = (m - 1) // 2
        _take(out, axis, slice(0, h + 1))[...] = _take(g, axis, slice(0, h + 1))
        if h:
            _take(out, axis, slice(n - h, n))[...] = _take(g, axis, slice(m - h, m))
        if m % 2 == 0:
            nyq = _take(g, axis, slice(m // 2, m // 2 + 1))
            _take(out, axis, slice(m // 2, m // 2 + 1))[...] = nyq
            _take(out, axis, slice(n - m // 2, n - m // 2 + 1))[...] = nyq
    return out


def resample_coeffs(c: np.ndarray, axes: Sequence[int], out_extents: Sequence[int]) -> np.ndarray:
    """Pad or truncate normalized Fourier coefficients (FFT ordering) per axis."""
    axes = _check_axes(c.ndim, axes)
    for ax, m in zip(axes, out_extents):
        if m < 1:
            raise ValueError(f"output extent must be >= 1, got {m}")
        c = _resample_axis(c, ax, int(m))
    return c


def _resample_coeffs_adjoint(g, axes, in_extents):
    for ax, n in zip(axes, in_extents):
        g = _resample_axis_adjoint(g, ax, int(n))
    return g


def fft3(t: np.ndarray, axes: Sequence[int] = (-3, -2, -1)) -> np.ndarray:
    """Unnormalized complex DFT of a real tensor over three axes.

    Axes that are not transformed act as batch/channel axes.
    """
    t = np.asarray(t)
    if np.iscomplexobj(t):
        raise TypeError("fft3 expects a real tensor")
    axes = _check_axes(t.ndim, axes)
    if any(t.shape[ax] == 0 for ax in axes):
        raise ValueError(f"zero-extent transform axis in shape {t.shape}")
    return sfft.fftn(t.astype(np.float64, copy=False), axes=axes)


def ifft3(
    spec: np.ndarray,
    axes: Sequence[int] = (-3, -2, -1),
    out_extents: Sequence[int] | None = None,
    tol: float = REAL_TOL,
) -> np.ndarray:
    """Inverse DFT evaluated on a grid of ``out_extents`` points.

    With matching extents this is the exact inverse of :func:`fft3`.  Otherwise
    the spectrum is zero-padded or truncated, and the result is rescaled by
    the grid-size ratio so that a band-limited function keeps its values.

    Raises
    ------
    ValueError
        If the imaginary residue of the result exceeds ``tol`` relative to its
        real part, i.e. the spectrum is not conjugate-symmetric.
    """
    spec = np.asarray(spec, dtype=np.complex128)
    axes = _check_axes(spec.ndim, axes)
    n_in = [spec.shape[ax] for ax in axes]
    if out_extents is None:
        out_extents = n_in
    out_extents = [int(m) for m in out_extents]
    if any(m < 1 for m in out_extents):
        raise ValueError(f"output extents must be >= 1, got {out_extents}")
    c = resample_coeffs(spec / np.prod(n_in), axes, out_extents)
    y = sfft.ifftn(c, axes=axes) * np.prod(out_extents)
    return _real_part(y, tol)


def _real_part(y: np.ndarray, tol: float) -> np.ndarray:
    if y.size:
        scale = np.max(np.abs(y.real))
        resid = np.max(np.abs(y.imag))
        if resid > tol * max(scale, 1e-300):
            raise ValueError(
                f"spectrum is not conjugate-symmetric: imaginary residue {resid:.3e} "
                f"vs real magnitude {scale:.3e}"
            )
    return np.ascontiguousarray(y.real)


def spectral_resample(x: np.ndarray, out_extents: Sequence[int], axes: Sequence[int] = (-3, -2, -1)) -> np.ndarray:
    """Resample a real field to a new grid through its Fourier coefficients."""
    return ifft3(fft3(x, axes), axes, out_extents)


# ---------------------------------------------------------------------------
# reverse-mode autodiff
# ---------------------------------------------------------------------------

class DiffTensor:
    """A node of the gradient tape.

    Leaves are created with :func:`parameter` (gradient wanted) or
    :func:`constant`.  Every operation on nodes returns a new node holding a
    reference to its parents and the vector-Jacobian product for each.
    """

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_consumed")

    def __init__(self, value, requires_grad: bool = False, parents=()):
        value = np.asarray(value)
        if not np.iscomplexobj(value):
            value = value.astype(np.float64, copy=False)
        self.value = value
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._consumed = False

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"DiffTensor(shape={self.value.shape}, dtype={self.value.dtype}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(_as_node(other), -1.0))

    def __rsub__(self, other):
        return add(_as_node(other), mul(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)


def constant(value) -> DiffTensor:
    return DiffTensor(value, requires_grad=False)


def parameter(value) -> DiffTensor:
    return DiffTensor(np.array(value, copy=True), requires_grad=True)


def _as_node(x) -> DiffTensor:
    return x if isinstance(x, DiffTensor) else DiffTensor(x)


def _node(value, parents) -> DiffTensor:
    parents = tuple((p, fn) for p, fn in parents if p.requires_grad)
    return DiffTensor(value, requires_grad=bool(parents), parents=parents)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _match_dtype(g: np.ndarray, like: np.ndarray) -> np.ndarray:
    if np.iscomplexobj(g) and not np.iscomplexobj(like):
        return g.real
    return g


def add(a, b) -> DiffTensor:
    a, b = _as_node(a), _as_node(b)
    out = a.value + b.value
    return _node(out, [
        (a, lambda g: _match_dtype(_unbroadcast(g, a.value.shape), a.value)),
        (b, lambda g: _match_dtype(_unbroadcast(g, b.value.shape), b.value)),
    ])


def mul(a, b) -> DiffTensor:
    a, b = _as_node(a), _as_node(b)
    av, bv = a.value, b.value
    return _node(av * bv, [
        (a, lambda g: _match_dtype(_unbroadcast(g * np.conj(bv), av.shape), av)),
        (b, lambda g: _match_dtype(_unbroadcast(g * np.conj(av), bv.shape), bv)),
    ])


def relu(x: DiffTensor) -> DiffTensor:
    mask = x.value > 0
    return _node(np.where(mask, x.value, 0.0), [(x, lambda g: g * mask)])


def absolute(x: DiffTensor) -> DiffTensor:
    """Elementwise ``|x|`` for real input; subgradient 0 at 0."""
    s = np.sign(x.value)
    return _node(np.abs(x.value), [(x, lambda g: g * s)])


def sum_all(x: DiffTensor) -> DiffTensor:
    shape = x.value.shape
    return _node(np.asarray(x.value.sum()), [(x, lambda g: np.broadcast_to(g, shape).copy())])


def mean_all(x: DiffTensor) -> DiffTensor:
    n = x.value.size
    return mul(sum_all(x), 1.0 / n)


def pointwise_linear(x: DiffTensor, w: DiffTensor, b: DiffTensor | None = None) -> DiffTensor:
    """Channel mixing at every grid point.

    ``x`` has shape ``(B, Cin, *grid)``, ``w`` is ``(Cin, Cout)`` and ``b`` is
    ``(Cout,)``.  Returns ``(B, Cout, *grid)``.
    """
    xv, wv = x.value, w.value
    bsz, cin = xv.shape[:2]
    grid = xv.shape[2:]
    flat = xv.reshape(bsz, cin, -1)
    y = np.matmul(wv.T, flat)
    if b is not None:
        y = y + b.value[None, :, None]
    y = y.reshape((bsz, wv.shape[1]) + grid)

    def gx(g):
        return np.matmul(wv, g.reshape(bsz, wv.shape[1], -1)).reshape(xv.shape)

    def gw(g):
        return np.einsum("bis,bos->io", flat, g.reshape(bsz, wv.shape[1], -1))

    parents = [(x, gx), (w, gw)]
    if b is not None:
        parents.append((b, lambda g: g.reshape(bsz, wv.shape[1], -1).sum(axis=(0, 2))))
    return _node(y, parents)


def concat(nodes: Sequence[DiffTensor], axis: int = 1) -> DiffTensor:
    values = [n.value for n in nodes]
    bounds = np.cumsum([0] + [v.shape[axis] for v in values])
    out = np.concatenate(values, axis=axis)

    def make(i):
        return lambda g: _take(g, axis, slice(bounds[i], bounds[i + 1]))

    return _node(out, [(n, make(i)) for i, n in enumerate(nodes)])


def split_channels(x: DiffTensor, index: int) -> DiffTensor:
    """Select channel ``index`` of a ``(B, C, ...)`` node, keeping the axis."""
    shape = x.value.shape

    def gx(g):
        out = np.zeros(shape, dtype=g.dtype)
        out[:, index:index + 1] = g
        return out

    return _node(x.value[:, index:index + 1], [(x, gx)])


def reshape(x: DiffTensor, shape) -> DiffTensor:
    in_shape = x.value.shape
    return _node(x.value.reshape(shape), [(x, lambda g: g.reshape(in_shape))])


def stack_channels(nodes: Sequence[DiffTensor]) -> DiffTensor:
    return concat(nodes, axis=1)


# spectral primitives on (B, C, X, Y, Z) tensors, transforms over the last 3 axes
_SPATIAL = (-3, -2, -1)


def fft_coeffs(x: DiffTensor) -> DiffTensor:
    """Normalized Fourier coefficients ``fft(x) / N`` over the last three axes."""
    n = int(np.prod(x.value.shape[-3:]))
    c = sfft.fftn(x.value, axes=_SPATIAL) / n
    real_in = not np.iscomplexobj(x.value)

    def gx(g):
        r = sfft.ifftn(g, axes=_SPATIAL)
        return r.real if real_in else r

    return _node(c, [(x, gx)])


def grid_from_coeffs(c: DiffTensor, tol: float = REAL_TOL) -> DiffTensor:
    """Real field whose normalized Fourier coefficients are ``c``."""
    m = int(np.prod(c.value.shape[-3:]))
    y = _real_part(sfft.ifftn(c.value, axes=_SPATIAL) * m, tol)
    return _node(y, [(c, lambda g: sfft.fftn(g, axes=_SPATIAL))])


def diff_resample_coeffs(c: DiffTensor, out_extents: Sequence[int]) -> DiffTensor:
    in_extents = c.value.shape[-3:]
    axes = tuple(range(c.value.ndim - 3, c.value.ndim))
    out = resample_coeffs(c.value, axes, out_extents)
    return _node(out, [(c, lambda g: _resample_coeffs_adjoint(g, axes, in_extents))])


def _mirror(a: np.ndarray) -> np.ndarray:
    # k -> -k on the last three axes in FFT ordering
    for ax in (-3, -2, -1):
        a = np.roll(np.flip(a, axis=ax), 1, axis=ax)
    return a


def hermitian_part(r: DiffTensor) -> DiffTensor:
    """``(R(k) + conj(R(-k))) / 2`` over the last three (mode) axes."""
    out = 0.5 * (r.value + np.conj(_mirror(r.value)))
    return _node(out, [(r, lambda g: 0.5 * (g + np.conj(_mirror(g))))])


def mix_modes(r: DiffTensor, c: DiffTensor) -> DiffTensor:
    """Per-mode channel mixing ``Y[b, o, k] = sum_i R[i, o, k] C[b, i, k]``."""
    rv, cv = r.value, c.value
    cin, cout = rv.shape[:2]
    modes = rv.shape[2:]
    bsz = cv.shape[0]
    rk = rv.reshape(cin, cout, -1).transpose(2, 0, 1)          # (K, Cin, Cout)
    ck = cv.reshape(bsz, cin, -1).transpose(2, 0, 1)           # (K, B, Cin)
    yk = np.matmul(ck, rk)                                     # (K, B, Cout)
    y = yk.transpose(1, 2, 0).reshape((bsz, cout) + modes)

    def gc(g):
        gk = g.reshape(bsz, cout, -1).transpose(2, 0, 1)       # (K, B, Cout)
        out = np.matmul(gk, np.conj(rk).transpose(0, 2, 1))    # (K, B, Cin)
        return out.transpose(1, 2, 0).reshape(cv.shape)

    def gr(g):
        gk = g.reshape(bsz, cout, -1).transpose(2, 0, 1)
        out = np.matmul(np.conj(ck).transpose(0, 2, 1), gk)    # (K, Cin, Cout)
        return out.transpose(1, 2, 0).reshape(rv.shape)

    return _node(y, [(c, gc), (r, gr)])


def backward(root: DiffTensor) -> None:
    """Accumulate ``d root / d leaf`` into ``leaf.grad`` for every parameter leaf.

    The graph below ``root`` is released afterwards; a second call raises.
    """
    if root.value.size != 1:
        raise ValueError(f"backward needs a scalar root, got shape {root.value.shape}")
    if root._consumed:
        raise RuntimeError("this graph has already been consumed by backward()")
    if not root.requires_grad:
        return

    order: list[DiffTensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        if node._consumed:
            raise RuntimeError("graph contains a node already consumed by backward()")
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))

    grads = {id(root): np.ones_like(root.value)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if not node._parents:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, fn in node._parents:
            contrib = fn(g)
            key = id(parent)
            grads[key] = contrib if key not in grads else grads[key] + contrib
        node._parents = ()
        node._consumed = True
    root._consumed = True


def grad_check(
    f: Callable[[DiffTensor], DiffTensor],
    point: np.ndarray,
    eps: float = 1e-5,
    n_probe: int | None = None,
    seed: int = 0,
    floor: float = 1e-6,
) -> float:
    """Worst relative discrepancy between reverse-mode and central-difference gradients.

    Parameters
    ----------
    f : callable
        Maps a :class:`DiffTensor` to a scalar :class:`DiffTensor`.
    point : ndarray
        Real point at which the gradient is compared.
    eps : float
        Central-difference step.
    n_probe : int, optional
        Number of randomly chosen coordinates to probe; all of them if None.
    floor : float
        Denominator floor, relative to the largest gradient magnitude, so that
        near-zero components are compared in absolute terms.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    point = np.asarray(point, dtype=np.float64)
    x = parameter(point)
    out = f(x)
    backward(out)
    ad = np.zeros_like(point) if x.grad is None else np.asarray(x.grad).real

    flat_idx = np.arange(point.size)
    if n_probe is not None and n_probe < point.size:
        flat_idx = np.sort(np.random.default_rng(seed).choice(point.size, n_probe, replace=False))

    fd = np.empty(len(flat_idx))
    for j, i in enumerate(flat_idx):
        vals = []
        for step in (eps, -eps):
            p = point.copy().reshape(-1)
            p[i] += step
            v = float(np.real(f(constant(p.reshape(point.shape))).value))
            if not np.isfinite(v):
                raise ValueError(f"non-finite function value at probe coordinate {i}")
            vals.append(v)
        fd[j] = (vals[0] - vals[1]) / (2 * eps)

    ad_sel = ad.reshape(-1)[flat_idx]
    scale = max(np.max(np.abs(ad_sel), initial=0.0), np.max(np.abs(fd), initial=0.0))
    denom = np.maximum(np.maximum(np.abs(ad_sel), np.abs(fd)), floor * max(scale, 1e-300))
    return float(np.max(np.abs(ad_sel - fd) / denom, initial=0.0))
