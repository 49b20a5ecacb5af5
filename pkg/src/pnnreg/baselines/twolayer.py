"""Two-layer network with truncated-power activation ``max(x, 0)^m``.

    f(x) = sum_j v_j * max(w_j x + b_j, 0)^m + c(x),   deg c <= m

trained on ``(1/n) sum (f(x_i) - y_i)^2 + (lam/2) sum_j (v_j^2 + |w_j|^(2m))``
with L-BFGS (or full-batch Adam).  The polynomial part is unpenalized and eliminated
exactly at every step by least squares (variable projection).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from scipy.optimize import minimize

from ..numkern import Rng
from ..pnn import Adam
from .common import FitResult


class DivergenceError(RuntimeError):
    pass


@dataclass
class TwoLayerTruncPowNet:
    m: int
    w: np.ndarray
    b: np.ndarray
    v: np.ndarray
    poly: np.ndarray  # coefficients of c(x) in increasing degree
    meta: dict = field(default_factory=dict)

    def features(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        z = np.maximum(np.outer(x, self.w) + self.b, 0.0)
        return z**self.m if self.m != 1 else z

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return self.features(x) @ self.v + np.polynomial.polynomial.polyval(x, self.poly)

    def path_tv(self) -> float:
        """Path term ``sum |v_j| |w_j|^m`` (the m-th derivative jump sizes up to a factor m!)."""
        return float(np.sum(np.abs(self.v) * np.abs(self.w) ** self.m))

    def balance(self) -> float:
        return float(np.max(np.abs(np.abs(self.v) - np.abs(self.w) ** self.m))) if len(self.v) else 0.0

    def active(self, tol: float) -> np.ndarray:
        return np.flatnonzero(np.abs(self.v) * np.abs(self.w) ** self.m > tol)

    def knots(self, tol: float, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
        """Sorted kink locations ``-b_j / w_j`` of active units inside ``(lo, hi)``."""
        idx = self.active(tol)
        idx = idx[self.w[idx] != 0]
        t = np.sort(-self.b[idx] / self.w[idx])
        return t[(t > lo) & (t < hi)]

    def snapped_knots(self, tol: float, x_grid) -> np.ndarray:
        """Distinct grid indices nearest to the active kinks (comparable to trend-filter knots)."""
        x = np.asarray(x_grid, dtype=np.float64)
        t = self.knots(tol, x[0], x[-1])
        idx = np.clip(np.searchsorted(x, t), 1, len(x) - 1)
        idx -= (t - x[idx - 1]) < (x[idx] - t)
        return np.unique(idx)


@dataclass
class TwoLayerConfig:
    m: int = 1
    lam: float = 1e-3
    M: int = 200
    optimizer: str = "lbfgs"  # or "adam"
    lr: float = 1e-2
    epochs: int = 8000  # Adam epochs or L-BFGS iterations
    seed: int = 0
    active_tol: float = 1e-2  # relative to the largest |v_j| |w_j|^m


def _init(M: int, m: int, rng: Rng):
    # kinks on an even grid over [0, 1], unit input weights alternating in sign
    t = (np.arange(M) + 0.5) / M
    w = np.where(np.arange(M) % 2 == 0, 1.0, -1.0)
    b = -w * t
    v = 0.01 * rng.normal(M)
    return w, b, v


def _objective_grad(w, b, v, x, y, V, Vp, m, lam):
    n = len(y)
    pre = np.outer(x, w) + b
    act = np.maximum(pre, 0.0)
    phi = act**m if m != 1 else act
    r = phi @ v - y
    r -= V @ (Vp @ r)  # optimal polynomial absorbed: residual orthogonal to degree <= m
    loss = float(r @ r) / n + 0.5 * lam * float(v @ v + np.sum(np.abs(w) ** (2 * m)))
    g = 2.0 / n * r
    gv = phi.T @ g + lam * v
    dphi = (m * act ** (m - 1) if m != 1 else (pre > 0).astype(np.float64)) * v[None, :]
    gpre = g[:, None] * dphi
    gw = x @ gpre + lam * m * np.abs(w) ** (2 * m - 1) * np.sign(w)
    gb = gpre.sum(axis=0)
    return loss, gw, gb, gv


def _balance_units(w, b, v, x, m):
    """Exact descent step on the penalty that leaves the fit on ``x`` unchanged.

    Units that are off on the whole grid, or on everywhere (then they are a
    polynomial of degree m and the unpenalized part absorbs them), are zeroed.
    The rest are rescaled ``(w, b, v) -> (c w, c b, v / c^m)`` with
    ``|v| = |w|^m`` afterwards, the AM-GM minimizer of ``v^2 + w^(2m)``.
    """
    w, b, v = w.copy(), b.copy(), v.copy()
    pre = np.outer(x, w) + b
    flat = np.all(pre <= 0, axis=0) | np.all(pre > 0, axis=0) | (v == 0) | (w == 0)
    w[flat] = b[flat] = v[flat] = 0.0
    live = ~flat
    c = (np.abs(v[live]) / np.abs(w[live]) ** m) ** (1.0 / (2 * m))
    w[live] *= c
    b[live] *= c
    v[live] /= c**m
    return w, b, v


def fit_two_layer_truncpow(y, x_grid, m: int, lam: float, M: int = 200, cfg: TwoLayerConfig | None = None,
                           warm: TwoLayerTruncPowNet | None = None):
    """Returns ``(net, FitResult)``.

    L-BFGS is the default optimizer (restarted once after an exact balancing
    step); Adam runs with a cosine learning-rate decay and reports the raw
    weights.  ``meta["balance_raw"]`` is the diagnostic before any balancing.
    ``warm`` continues from an earlier fit (used along a lambda path).
    """
    cfg = cfg or TwoLayerConfig(m=m, lam=lam, M=M)
    if M < 1:
        raise ValueError("M must be at least 1")
    if m < 1:
        raise ValueError("order m must be at least 1")
    y = np.asarray(y, dtype=np.float64)
    x = np.asarray(x_grid, dtype=np.float64)
    V = np.vander(x, m + 1, increasing=True)
    Vp = np.linalg.pinv(V)
    if warm is not None:
        w, b, v = warm.w.copy(), warm.b.copy(), warm.v.copy()
    else:
        w, b, v = _init(M, m, Rng(cfg.seed))
    K = len(w)
    losses = []
    if cfg.optimizer == "lbfgs":
        def fun(p):
            out = _objective_grad(p[:K], p[K:2 * K], p[2 * K:], x, y, V, Vp, m, lam)
            if not math.isfinite(out[0]):
                raise DivergenceError(f"two-layer training diverged at iteration {len(losses)}")
            losses.append(out[0])
            return out[0], np.concatenate(out[1:])

        iters = 0
        balance_raw = math.nan
        for _ in range(2):
            # the line search stalls on ReLU kinks; an exact balancing step between
            # restarts moves along the flat rescaling directions it cannot follow
            sol = minimize(fun, np.concatenate([w, b, v]), jac=True, method="L-BFGS-B",
                           options={"maxiter": max(cfg.epochs - iters, 1), "maxcor": 20, "gtol": 1e-12,
                                    "ftol": 1e-15})
            w, b, v = sol.x[:K].copy(), sol.x[K:2 * K].copy(), sol.x[2 * K:].copy()
            iters += int(sol.nit)
            if math.isnan(balance_raw):
                balance_raw = TwoLayerTruncPowNet(m, w, b, v, np.zeros(m + 1)).balance()
            if lam > 0:
                w, b, v = _balance_units(w, b, v, x, m)
    elif cfg.optimizer == "adam":
        params = [w, b, v]
        opt = Adam(params, cfg.lr)
        for ep in range(cfg.epochs):
            loss, gw, gb, gv = _objective_grad(w, b, v, x, y, V, Vp, m, lam)
            if not math.isfinite(loss):
                raise DivergenceError(f"two-layer training diverged at epoch {ep}")
            losses.append(loss)
            opt.lr = cfg.lr * 0.5 * (1.0 + math.cos(math.pi * ep / cfg.epochs))
            opt.step(params, [gw, gb, gv])
        iters = cfg.epochs
        balance_raw = TwoLayerTruncPowNet(m, w, b, v, np.zeros(m + 1)).balance()
    else:
        raise ValueError(f"unknown optimizer {cfg.optimizer!r}")
    phi = np.maximum(np.outer(x, w) + b, 0.0) ** m
    poly = Vp @ (y - phi @ v)
    net = TwoLayerTruncPowNet(m, w, b, v, poly, meta={"losses": losses})
    yhat = net(x)
    strength = np.abs(v) * np.abs(w) ** m
    tol = cfg.active_tol * float(strength.max()) if strength.size and strength.max() > 0 else math.inf
    knots = net.snapped_knots(tol, x)
    final = _objective_grad(w, b, v, x, y, V, Vp, m, lam)[0]
    res = FitResult(yhat, lam, f"nn2_m{m}", knots=len(knots),
                    meta={"balance": net.balance(), "vmax": float(np.max(np.abs(v))), "tv": net.path_tv(),
                          "objective": final, "iterations": iters, "active": len(net.active(tol)),
                          "balance_raw": balance_raw})
    return net, res


def two_layer_path(y, x_grid, m: int, lams, cfg: TwoLayerConfig | None = None) -> list:
    """Fits along ``lams`` from the smallest value up, each warm-started from the previous one.
    Results come back in the order of ``lams``."""
    cfg = cfg or TwoLayerConfig(m=m)
    order = np.argsort(lams)
    out = [None] * len(lams)
    net = None
    for i in order:
        c = TwoLayerConfig(**{**cfg.__dict__, "m": m, "lam": float(lams[i])})
        net, res = fit_two_layer_truncpow(y, x_grid, m, float(lams[i]), c.M, c, warm=net)
        out[i] = (net, res)
    return out
