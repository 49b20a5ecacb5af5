"""Periodic orthogonal DWT with the Symlet-4 filter bank and soft thresholding."""

from __future__ import annotations

import math

import numpy as np

from .common import FitResult

# Symlet-4 decomposition low-pass filter (standard published bank)
SYM4_DEC_LO = np.array([
    -0.07576571478927333,
    -0.02963552764599851,
    0.49761866763201545,
    0.8037387518059161,
    0.29785779560527736,
    -0.09921954357684722,
    -0.012603967262037833,
    0.0322231006040427,
])


def qmf(h: np.ndarray) -> np.ndarray:
    """High-pass partner ``g[k] = (-1)^k h[K-1-k]``."""
    K = len(h)
    return np.array([(-1) ** k * h[K - 1 - k] for k in range(K)])


SYM4_DEC_HI = qmf(SYM4_DEC_LO)


def _windows(x: np.ndarray, K: int) -> np.ndarray:
    N = len(x)
    idx = (2 * np.arange(N // 2)[:, None] + np.arange(K)[None, :]) % N
    return idx


def dwt_step(x: np.ndarray, h=SYM4_DEC_LO, g=SYM4_DEC_HI):
    x = np.asarray(x, dtype=np.float64)
    if len(x) % 2:
        raise ValueError("length must be even")
    idx = _windows(x, len(h))
    xs = x[idx]
    return xs @ h, xs @ g


def idwt_step(a: np.ndarray, d: np.ndarray, h=SYM4_DEC_LO, g=SYM4_DEC_HI) -> np.ndarray:
    """Adjoint (= inverse, the periodic transform is orthogonal) of :func:`dwt_step`."""
    N = 2 * len(a)
    idx = _windows(np.empty(N), len(h))
    out = np.zeros(N)
    np.add.at(out, idx, a[:, None] * h[None, :] + d[:, None] * g[None, :])
    return out


def default_levels(n: int) -> int:
    return max(int(math.log2(n)) - 2, 1)


def wavedec(x, levels: int | None = None) -> list:
    """``[a_J, d_J, ..., d_1]`` (coarsest first)."""
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    if n < 2 or n & (n - 1):
        raise ValueError("length must be a power of two")
    J = default_levels(n) if levels is None else levels
    if 2**J > n:
        raise ValueError("too many levels for this length")
    details = []
    a = x
    for _ in range(J):
        a, d = dwt_step(a)
        details.append(d)
    return [a] + details[::-1]


def waverec(coeffs: list) -> np.ndarray:
    a = coeffs[0]
    for d in coeffs[1:]:
        a = idwt_step(a, d)
    return a


def soft_threshold(v, t: float) -> np.ndarray:
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def mad_sigma(y) -> float:
    """Noise level from the finest detail coefficients (median absolute deviation)."""
    n = len(y)
    size = 1 << max(int(math.log2(n)), 1)
    _, d = dwt_step(_reflect_pad(np.asarray(y, dtype=np.float64), size))
    return float(np.median(np.abs(d)) / 0.6744897501960817)


def universal_threshold(sigma: float, n: int) -> float:
    return sigma * math.sqrt(2.0 * math.log(n))


def _reflect_pad(y: np.ndarray, size: int) -> np.ndarray:
    if size == len(y):
        return y
    out = y
    while len(out) < size:
        out = np.concatenate([out, out[::-1]])
    return out[:size]


def wavelet_denoise(y, threshold: float, levels: int | None = None) -> FitResult:
    """Soft-threshold the detail coefficients of the periodic sym4 DWT.

    Lengths that are not a power of two are padded by symmetric reflection
    at the right end and cropped after reconstruction.
    """
    y = np.asarray(y, dtype=np.float64)
    if threshold < 0:
        raise ValueError("threshold must be non-negative")
    n = len(y)
    size = 1 << math.ceil(math.log2(max(n, 2)))
    yp = _reflect_pad(y, size)
    J = default_levels(size) if levels is None else levels
    coeffs = wavedec(yp, J)
    kept = [coeffs[0]] + [soft_threshold(d, threshold) for d in coeffs[1:]]
    yhat = waverec(kept)[:n]
    nz = int(sum(np.count_nonzero(d) for d in kept[1:]))
    return FitResult(yhat, threshold, "wavelet", knots=nz,
                     meta={"levels": J, "padded_length": size, "wavelet": "sym4"})
