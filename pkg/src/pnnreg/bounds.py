"""Closed-form bound shapes for weight-decayed parallel ReLU networks.

Every ``<~`` relation is evaluated with unit constants and natural logs, so the
outputs are shapes for comparison and monotonicity checks, not certified
numeric bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction


@dataclass(frozen=True)
class RateParams:
    alpha: float
    d: int = 1
    p: float = 1.0
    L: float = math.inf
    m: int | None = None

    def __post_init__(self):
        if not self.p > 0:
            raise ValueError("p must be positive")
        if self.L < 3:
            raise ValueError("depth must be at least 3")
        bv_mode = self.d == 1 and self.p == 1 and float(self.alpha).is_integer() and self.alpha >= 1
        if bv_mode and self.m is None:
            object.__setattr__(self, "m", int(self.alpha) - 1)
        if not (self.alpha - self.d / self.p > 1 or bv_mode):
            raise ValueError("need alpha - d/p > 1 (or the bounded-variation case d = p = 1)")

    @property
    def is_bv(self) -> bool:
        return self.m is not None

    @classmethod
    def bv(cls, m: int, L: float = math.inf) -> "RateParams":
        """Bounded-variation mode: alpha = m + 1, d = p = 1."""
        return cls(alpha=m + 1, d=1, p=1.0, L=L, m=m)


def covering_subnetwork(L: int, w: int, d: int, delta: float) -> float:
    """Log sup-norm covering number of one normalized subnetwork."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if min(L, w, d) < 1:
        raise ValueError("L, w, d must be positive")
    t1 = w * w * L * math.log(2.0 ** (L + 1) * w ** (L - 1) / delta + 1.0)
    t2 = w * L * math.log(2.0 ** (L - 1) * w ** ((L - 1) / 2) * math.sqrt(d) / delta + 1.0)
    return t1 + t2


def covering_lp_combination(k: float, P: float, p: float, delta: float, c3: float = 1.0) -> float:
    """Log covering number of l_p-constrained combinations of a class of log-entropy k log(1/delta)."""
    if not 0 < p < 1:
        raise ValueError("p must lie in (0, 1)")
    if not (P > 0 and delta > 0):
        raise ValueError("P and delta must be positive")
    if delta >= c3 * P:
        return 0.0
    return k * P ** (1.0 / (1.0 - p)) * (delta / c3) ** (-p / (1.0 - p)) * math.log(c3 * P / delta)


def covering_pnn(w: int, L: int, d: int, P_prime: float, delta: float) -> float:
    """Log covering number of the constrained parallel net; independent of the subnetwork count."""
    if L < 3:
        raise ValueError("depth must be at least 3")
    if not (P_prime > 0 and delta > 0):
        raise ValueError("P' and delta must be positive")
    r = 1.0 - 2.0 / L
    return (w ** (2 + 2 / r) * L**2 * math.sqrt(d) * P_prime ** (1 / r)
            * delta ** (-(2.0 / L) / r) * math.log(w * P_prime / delta))


def mse_rate_exponent(rp: RateParams):
    """Exponent ``e`` in MSE ~ n^-e.

    Returns a :class:`fractions.Fraction` when every input is an integer (or
    infinite depth), a float otherwise.
    """
    vals = (rp.alpha, rp.d, rp.p)
    exact = all(float(v).is_integer() for v in vals) and (rp.L == math.inf or float(rp.L).is_integer())
    if exact:
        a, d, p = (Fraction(int(v)) for v in vals)
        two_l = Fraction(0) if rp.L == math.inf else Fraction(2, int(rp.L))
        s = 2 * a / d
        return s * (1 - two_l) / (s + 1 - two_l / p)
    s = 2.0 * rp.alpha / rp.d
    two_l = 0.0 if rp.L == math.inf else 2.0 / rp.L
    return s * (1 - two_l) / (s + 1 - two_l / rp.p)


def minimax_exponent(alpha: float, d: int = 1):
    return Fraction(2 * int(alpha), 2 * int(alpha) + d) if float(alpha).is_integer() else 2 * alpha / (2 * alpha + d)


def linear_minimax_exponent(m: int) -> Fraction:
    """Best exponent of linear smoothers on BV(m): (2m+1)/(2m+2)."""
    if m < 0:
        raise ValueError("m must be non-negative")
    return Fraction(2 * m + 1, 2 * m + 2)


def two_layer_rate_exponent(m: int) -> Fraction:
    """Exponent of the two-layer truncated-power net on BV(m): (2m+2)/(2m+3)."""
    if m < 0:
        raise ValueError("m must be non-negative")
    return Fraction(2 * m + 2, 2 * m + 3)


def mse_bound_extended(rp: RateParams, w: int, n: int, c6: float = 1.0) -> float:
    """``(w^{4-4/L} L^{2-4/L} / n^{1-2/L})^{s/(s+1-2/(pL))} + exp(-c6 L)`` with ``s = 2 alpha/d``."""
    if n < 1:
        raise ValueError("n must be positive")
    if rp.L == math.inf:
        raise ValueError("finite depth required")
    L = float(rp.L)
    s = 2.0 * rp.alpha / rp.d
    base = w ** (4 - 4 / L) * L ** (2 - 4 / L) / n ** (1 - 2 / L)
    return base ** (s / (s + 1 - 2 / (rp.p * L))) + math.exp(-c6 * L)


def crossover_depth(m: int, L_max: int = 100000) -> int | None:
    """Smallest L >= 3 from which the parallel-net BV(m) exponent beats the linear one.

    The exponent is increasing in L, so the first L that beats it is the crossover.
    Returns ``None`` if no L up to ``L_max`` does.
    """
    lin = linear_minimax_exponent(m)
    if mse_rate_exponent(RateParams.bv(m)) <= lin:
        return None
    lo, hi = 3, 3
    while mse_rate_exponent(RateParams.bv(m, hi)) <= lin:
        lo, hi = hi, hi * 2
        if hi > L_max:
            return None
    while lo < hi:
        mid = (lo + hi) // 2
        if mse_rate_exponent(RateParams.bv(m, mid)) > lin:
            hi = mid
        else:
            lo = mid + 1
    return lo


def rate_table(rp: RateParams, depths=range(3, 51)) -> list:
    """Rows ``(L, exponent, minimax, linear)``; ``linear`` is only defined in BV mode."""
    rows = []
    mm = minimax_exponent(rp.alpha, rp.d)
    lin = linear_minimax_exponent(rp.m) if rp.m is not None else None
    for L in depths:
        e = mse_rate_exponent(RateParams(rp.alpha, rp.d, rp.p, L, rp.m))
        rows.append((L, float(e), float(mm), None if lin is None else float(lin)))
    return rows
