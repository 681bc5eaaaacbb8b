"""Gaussian-windowed SSIM with an exact analytic gradient.

The window is applied as a "valid" correlation (a banded matrix product per
axis), so the SSIM map is smaller than the input by ``window - 1`` along each
axis. Shared by the structural loss and the evaluation metric.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np


@dataclass(frozen=True)
class SSIMParams:
    window: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    data_range: float = 1.0

    @property
    def c1(self) -> float:
        return (self.k1 * self.data_range) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.data_range) ** 2


DEFAULT_PARAMS = SSIMParams()


def gaussian_window(size: int, sigma: float) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    return g / g.sum()


@lru_cache(maxsize=32)
def _filter_matrix(size: int, window: int, sigma: float) -> np.ndarray:
    """(size - window + 1, size) matrix applying the window as valid correlation."""
    g = gaussian_window(window, sigma)
    m = np.zeros((size - window + 1, size))
    for i in range(size - window + 1):
        m[i, i:i + window] = g
    m.setflags(write=False)
    return m


def _filter(img: np.ndarray, params: SSIMParams) -> np.ndarray:
    gh = _filter_matrix(img.shape[-2], params.window, params.sigma)
    gw = _filter_matrix(img.shape[-1], params.window, params.sigma)
    return gh @ img @ gw.T


def _filter_adjoint(grad: np.ndarray, shape, params: SSIMParams) -> np.ndarray:
    gh = _filter_matrix(shape[-2], params.window, params.sigma)
    gw = _filter_matrix(shape[-1], params.window, params.sigma)
    return gh.T @ grad @ gw


def _check(a: np.ndarray, b: np.ndarray, params: SSIMParams):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.shape[-1] < params.window or a.shape[-2] < params.window:
        raise ValueError(
            f"image {a.shape[-2]}x{a.shape[-1]} smaller than the {params.window}px window")


def ssim_map(a, b, params: SSIMParams = DEFAULT_PARAMS) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check(a, b, params)
    return _terms(a, b, params)[0]


def _terms(a, b, params):
    mu_a, mu_b = _filter(a, params), _filter(b, params)
    e_aa, e_bb, e_ab = _filter(a * a, params), _filter(b * b, params), _filter(a * b, params)
    a1 = 2 * mu_a * mu_b + params.c1
    a2 = 2 * (e_ab - mu_a * mu_b) + params.c2
    b1 = mu_a**2 + mu_b**2 + params.c1
    b2 = (e_aa - mu_a**2) + (e_bb - mu_b**2) + params.c2
    s = (a1 * a2) / (b1 * b2)
    return s, mu_a, mu_b, a1, a2, b1, b2


def mean_ssim(a, b, params: SSIMParams = DEFAULT_PARAMS) -> float:
    """Mean of the SSIM map. Accepts arrays or objects with ``.data``."""
    a = getattr(a, "data", a)
    b = getattr(b, "data", b)
    return float(ssim_map(a, b, params).mean())


def mean_ssim_grad(a, b, params: SSIMParams = DEFAULT_PARAMS) -> tuple[float, np.ndarray]:
    """Mean SSIM over the last two axes (averaged over leading axes) and its
    gradient with respect to ``a``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check(a, b, params)
    s, mu_a, mu_b, a1, a2, b1, b2 = _terms(a, b, params)
    w = 1.0 / s.size
    d_mu = w * s * (2 * mu_b / a1 - 2 * mu_b / a2 - 2 * mu_a / b1 + 2 * mu_a / b2)
    d_eaa = -w * s / b2
    d_eab = w * 2 * s / a2
    sh = a.shape
    grad = (_filter_adjoint(d_mu, sh, params) + 2 * a * _filter_adjoint(d_eaa, sh, params)
            + b * _filter_adjoint(d_eab, sh, params))
    return float(s.mean()), grad
