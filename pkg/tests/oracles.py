"""Independent reference computations shared by the unit and acceptance tests."""
import numpy as np
from scipy.optimize import minimize_scalar


def circular_convolution(v, kernel):
    """Direct ``y[b, o] = sum_i sum_s kernel[i, o, s] v[b, i, x - s]`` on a periodic grid."""
    out = np.zeros((v.shape[0], kernel.shape[1]) + v.shape[2:])
    for s in np.ndindex(*kernel.shape[2:]):
        shifted = np.roll(v, s, axis=(-3, -2, -1))
        out += np.einsum("io,bixyz->boxyz", kernel[(slice(None), slice(None)) + s], shifted)
    return out


def shell_periodogram(field, spacing_m):
    """Mean periodogram per distinct |k|^2 (k = 0 dropped): ``(k, mean power, count)``."""
    n = field.shape
    power = np.abs(np.fft.fftn(field)) ** 2
    idx = np.meshgrid(*[np.fft.fftfreq(m) * m for m in n], indexing="ij")
    k2 = sum((i / (m * spacing_m)) ** 2 for i, m in zip(idx, n))
    key = np.round(k2 * (n[0] * spacing_m) ** 2).astype(np.int64).ravel()
    counts = np.bincount(key)
    sums = np.bincount(key, weights=power.ravel())
    keep = counts > 0
    keep[0] = False
    k = 2 * np.pi * np.sqrt(np.nonzero(keep)[0]) / (n[0] * spacing_m)
    return k, sums[keep] / counts[keep], counts[keep]


def pooled_corr_scale(shells, targets, hurst):
    """Whittle estimate of a common factor ``s`` with fitted length ``s * target``.

    ``shells`` are :func:`shell_periodogram` outputs, one per realization;
    each realization's amplitude is profiled out.
    """
    def nll(log_s):
        total = 0.0
        for (k, p, c), a in zip(shells, targets):
            model = (1 + (k * a * np.exp(log_s)) ** 2) ** (-(hurst + 1.5))
            scale = np.sum(c * p / model) / c.sum()
            total += np.sum(c * np.log(scale * model))
        return total
    res = minimize_scalar(nll, bounds=(-2.0, 2.0), method="bounded", options={"xatol": 1e-5})
    return float(np.exp(res.x))
