"""Small deterministic numeric kernel shared by the rest of the package.

Vectors and matrices are plain float64 numpy arrays.  What lives here is the
handful of things numpy does not give us directly: packed symmetric banded
storage with Cholesky solves, the band of a banded SPD inverse, and a
counter-based Gaussian generator whose stream depends only on the seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve_banded, cholesky_banded

_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


class FactorizationError(np.linalg.LinAlgError):
    """Raised when a banded matrix is not symmetric positive definite."""


def frobenius_norm(m) -> float:
    a = np.asarray(m, dtype=np.float64)
    return float(np.sqrt(np.sum(a * a)))


def lp_norm_p(v, p: float) -> float:
    """Return ``sum(|v_i|**p)``, i.e. the p-th power of the l_p (quasi-)norm."""
    if not p > 0:
        raise ValueError(f"p must be positive, got {p}")
    a = np.abs(np.asarray(v, dtype=np.float64))
    if p == 1:
        return float(np.sum(a))
    return float(np.sum(a**p))


@dataclass(frozen=True)
class BandedMatrix:
    """Symmetric banded matrix in lower packed-diagonal form.

    ``bands[k, i]`` holds ``A[i + k, i]`` for ``k = 0..bandwidth``; entries past
    the end of a diagonal are ignored.  This is the ``lower=True`` layout used by
    :func:`scipy.linalg.cholesky_banded`.
    """

    bands: np.ndarray

    def __post_init__(self):
        b = np.ascontiguousarray(self.bands, dtype=np.float64)
        if b.ndim != 2:
            raise ValueError("bands must be 2-D (bandwidth + 1, n)")
        object.__setattr__(self, "bands", b)

    @property
    def n(self) -> int:
        return self.bands.shape[1]

    @property
    def bandwidth(self) -> int:
        return self.bands.shape[0] - 1

    @classmethod
    def from_dense(cls, a, bandwidth: int) -> "BandedMatrix":
        a = np.asarray(a, dtype=np.float64)
        n = a.shape[0]
        bands = np.zeros((bandwidth + 1, n))
        for k in range(bandwidth + 1):
            bands[k, : n - k] = np.diagonal(a, -k)
        return cls(bands)

    def to_dense(self) -> np.ndarray:
        n = self.n
        a = np.zeros((n, n))
        for k in range(self.bandwidth + 1):
            d = self.bands[k, : n - k]
            a += np.diag(d, -k)
            if k:
                a += np.diag(d, k)
        return a

    def matvec(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        n = self.n
        out = self.bands[0] * x
        for k in range(1, self.bandwidth + 1):
            d = self.bands[k, : n - k]
            out[k:] += d * x[: n - k]
            out[: n - k] += d * x[k:]
        return out

    def cholesky(self) -> np.ndarray:
        """Lower banded Cholesky factor in the same packed layout."""
        try:
            return cholesky_banded(self.bands, lower=True)
        except np.linalg.LinAlgError as exc:
            raise FactorizationError(f"matrix is not positive definite: {exc}") from exc


def banded_cholesky_solve(a: BandedMatrix, b, factor: np.ndarray | None = None) -> np.ndarray:
    """Solve ``A x = b`` for SPD banded ``A``.

    A precomputed ``factor`` from :meth:`BandedMatrix.cholesky` can be passed to
    reuse one factorization across many right-hand sides.
    """
    b = np.asarray(b, dtype=np.float64)
    if b.shape[0] != a.n:
        raise ValueError(f"dimension mismatch: matrix is {a.n}, rhs is {b.shape[0]}")
    if factor is None:
        factor = a.cholesky()
    return cho_solve_banded((factor, True), b)


def banded_inverse_band(a: BandedMatrix, factor: np.ndarray | None = None) -> BandedMatrix:
    """Entries of ``inv(A)`` inside the band of ``A``, without forming the inverse.

    Uses the backward recurrence on the Cholesky factor ``A = L L^T``:
    ``S L = L^{-T}`` is upper triangular with diagonal ``1/L_jj``.
    """
    if factor is None:
        factor = a.cholesky()
    n, bw = a.n, a.bandwidth
    lo = factor  # lo[k, j] = L[j + k, j]
    # full[i, j - i + bw] = S[i, j] for |i - j| <= bw, kept symmetric explicitly
    s = np.zeros((n, 2 * bw + 1))

    def get(i, j):
        return s[i, j - i + bw]

    for j in range(n - 1, -1, -1):
        ljj = lo[0, j]
        kmax = min(bw, n - 1 - j)
        for i in range(min(j + bw, n - 1), j - 1, -1):
            acc = 1.0 / ljj if i == j else 0.0
            for k in range(1, kmax + 1):
                acc -= get(i, j + k) * lo[k, j]
            val = acc / ljj
            s[i, j - i + bw] = val
            s[j, i - j + bw] = val
    bands = np.zeros((bw + 1, n))
    for k in range(bw + 1):
        for j in range(n - k):
            bands[k, j] = get(j + k, j)
    return BandedMatrix(bands)


def _splitmix64(z: np.ndarray) -> np.ndarray:
    z = (z + _GOLDEN) & _MASK64
    z = ((z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)) & _MASK64
    z = ((z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)) & _MASK64
    return z ^ (z >> np.uint64(31))


def derive_seed(seed: int, index: int) -> int:
    """Independent child seed for task ``index`` of a run seeded with ``seed``."""
    with np.errstate(over="ignore"):
        z = _splitmix64(np.array([seed & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64))
        z = _splitmix64(z ^ np.uint64(index & 0xFFFFFFFFFFFFFFFF))
    return int(z[0])


class Rng:
    """Counter-based generator: draw ``i`` is ``splitmix64(key + i)``.

    The stream depends only on the seed, so results are reproducible across
    platforms and numpy versions.  Gaussians use Box-Muller on pairs of
    53-bit uniforms.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        with np.errstate(over="ignore"):
            self._key = _splitmix64(np.array([self.seed & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64))[0]
        self._counter = 0

    def _raw(self, count: int) -> np.ndarray:
        idx = np.arange(self._counter, self._counter + count, dtype=np.uint64)
        self._counter += count
        with np.errstate(over="ignore"):
            return _splitmix64((idx * _GOLDEN + self._key) & _MASK64)

    def uniform(self, n: int) -> np.ndarray:
        """``n`` uniforms in the open interval (0, 1)."""
        bits = self._raw(n) >> np.uint64(11)
        return (bits.astype(np.float64) + 0.5) * (1.0 / 9007199254740992.0)

    def normal(self, shape) -> np.ndarray:
        shape = (shape,) if np.isscalar(shape) else tuple(shape)
        n = int(np.prod(shape, dtype=np.int64))
        half = (n + 1) // 2
        u = self.uniform(2 * half)
        r = np.sqrt(-2.0 * np.log(u[:half]))
        theta = 2.0 * np.pi * u[half:]
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        return z.reshape(shape)

    def spawn(self, index: int) -> "Rng":
        return Rng(derive_seed(self.seed, index))


def gaussian_sample(rng: Rng, n: int, sigma: float) -> np.ndarray:
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        rng._raw(2 * ((n + 1) // 2))  # keep the stream position independent of sigma
        return np.zeros(n)
    return sigma * rng.normal(n)
