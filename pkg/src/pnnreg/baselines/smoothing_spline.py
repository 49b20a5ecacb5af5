"""Natural cubic smoothing spline in Reinsch form.

Minimizes ``(1/n) sum (y_i - g(x_i))^2 + lam * int g''(t)^2 dt``.  With
``alpha = n * lam`` the second-derivative values ``gamma`` at the interior
knots solve the pentadiagonal SPD system ``(R + alpha Q^T Q) gamma = Q^T y``
and the fitted values are ``g = y - alpha Q gamma``.
"""

from __future__ import annotations

import numpy as np

from ..numkern import BandedMatrix, banded_cholesky_solve, banded_inverse_band
from .common import FitResult


def _reinsch_parts(x: np.ndarray):
    h = np.diff(x)
    n = len(x)
    # Q is n x (n-2): column i has 1/h_i, -(1/h_i + 1/h_{i+1}), 1/h_{i+1} at rows i, i+1, i+2
    q0 = 1.0 / h[:-1]
    q2 = 1.0 / h[1:]
    q1 = -(q0 + q2)
    r_diag = (h[:-1] + h[1:]) / 3.0
    r_off = h[1:-1] / 6.0
    return n, (q0, q1, q2), r_diag, r_off


def _q_matvec(q, gamma, n):
    q0, q1, q2 = q
    out = np.zeros(n)
    out[:-2] += q0 * gamma
    out[1:-1] += q1 * gamma
    out[2:] += q2 * gamma
    return out


def _qt_matvec(q, y):
    q0, q1, q2 = q
    return q0 * y[:-2] + q1 * y[1:-1] + q2 * y[2:]


def _system(q, r_diag, r_off, alpha):
    q0, q1, q2 = q
    m = len(q0)
    bands = np.zeros((3, m))
    # (Q^T Q)_{ij} = sum_r Q_{ri} Q_{rj}; columns i and i+1 overlap on rows i+1, i+2
    bands[0] = r_diag + alpha * (q0**2 + q1**2 + q2**2)
    bands[1, :m - 1] = r_off + alpha * (q1[:-1] * q0[1:] + q2[:-1] * q1[1:])
    bands[2, :m - 2] = alpha * q2[:-2] * q0[2:]
    return BandedMatrix(bands)


def smoothing_spline(y, x_grid, lam: float, exact_dof: bool = True) -> FitResult:
    """Fit a natural cubic smoothing spline; ``dof`` is the exact smoother trace."""
    y = np.asarray(y, dtype=np.float64)
    x = np.asarray(x_grid, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError("x and y lengths differ")
    if np.any(np.diff(x) <= 0):
        raise ValueError("x_grid must be strictly increasing (no duplicates)")
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    n = len(x)
    if n < 3:
        raise ValueError("need at least 3 points")
    if lam == 0:
        return FitResult(y.copy(), 0.0, "ss", dof=float(n), meta={"alpha": 0.0})
    n, q, r_diag, r_off = _reinsch_parts(x)
    alpha = n * lam
    B = _system(q, r_diag, r_off, alpha)
    L = B.cholesky()
    gamma = banded_cholesky_solve(B, _qt_matvec(q, y), L)
    g = y - alpha * _q_matvec(q, gamma, n)
    dof = float("nan")
    if exact_dof:
        # tr S = n - alpha tr(B^-1 Q^T Q) = 2 + tr(B^-1 R), R tridiagonal
        S = banded_inverse_band(B, L).bands
        dof = 2.0 + float(np.sum(S[0] * r_diag) + 2.0 * np.sum(S[1, :len(r_off)] * r_off))
    return FitResult(g, lam, "ss", dof=dof, meta={"alpha": alpha})


def smoother_matrix(x_grid, lam: float) -> np.ndarray:
    """Dense smoother matrix (column by column); for checks on small problems."""
    x = np.asarray(x_grid, dtype=np.float64)
    n = len(x)
    return np.column_stack([smoothing_spline(e, x, lam, exact_dof=False).yhat for e in np.eye(n)])
