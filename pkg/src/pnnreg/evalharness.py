"""Synthetic regression problems, the fitting methods behind the experiments,
the degrees-of-freedom estimator and the repeat/tuning-grid driver."""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import isotonic_regression

from .baselines.common import FitResult
from .baselines.smoothing_spline import smoothing_spline
from .baselines.trend_filter import TrendFilterSpec, trend_filter
from .baselines.twolayer import TwoLayerConfig, two_layer_path
from .baselines.wavelet import wavelet_denoise
from .numkern import Rng, derive_seed, gaussian_sample
from .pnn import TrainConfig, active_subnetworks, forward, init_parallel_net, train
from .splinenet import bspline_eval


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- problems

def doppler(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.sin(4.0 / (x + 0.01)) + 1.5


# (order, shift, width): term M_m((x - shift) / width)
VARY_BUMPS = (
    (1, 0.0, 0.01), (1, 0.02, 0.02), (1, 0.06, 0.03), (1, 0.12, 0.04),
    (3, 0.2, 0.02), (3, 0.28, 0.04), (3, 0.44, 0.06), (3, 0.68, 0.08),
)


def vary(x) -> np.ndarray:
    """Sum of eight scaled cardinal B-spline bumps: four linear, then four cubic."""
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    for m, s, h in VARY_BUMPS:
        out += bspline_eval(m, (x - s) / h)
    return out


def piecewise_polynomial(breaks, coeffs):
    """Callable equal to ``polyval(coeffs[i], x - breaks[i])`` on ``[breaks[i], breaks[i+1])``.

    ``coeffs[i]`` lists increasing-degree coefficients; ``breaks`` starts at 0
    and has one more entry than ``coeffs``.
    """
    breaks = np.asarray(breaks, dtype=np.float64)
    if len(breaks) != len(coeffs) + 1 or np.any(np.diff(breaks) <= 0):
        raise ValueError("need increasing breaks, one more than pieces")

    def f(x):
        x = np.asarray(x, dtype=np.float64)
        idx = np.clip(np.searchsorted(breaks, x, side="right") - 1, 0, len(coeffs) - 1)
        out = np.empty_like(x)
        for i, c in enumerate(coeffs):
            sel = idx == i
            out[sel] = np.polynomial.polynomial.polyval(x[sel] - breaks[i], c)
        return out

    return f


def piecewise_cubic(x) -> np.ndarray:
    """Cubic spline with knots at 0.25, 0.55 and 0.8 (jumps in the third derivative)."""
    x = np.asarray(x, dtype=np.float64)
    tp = lambda t: np.maximum(x - t, 0.0) ** 3
    return 10.0 * (x**3 - 2.5 * tp(0.25) + 3.0 * tp(0.55) - 4.0 * tp(0.8)) - 0.5 * x


@dataclass
class RegressionProblem:
    """Fixed uniform design with Gaussian noise around a known truth."""

    x: np.ndarray
    truth: object
    sigma: float
    seed: int = 0
    name: str = "custom"
    y_fixed: np.ndarray | None = None  # observed data with unknown truth (CSV input)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        if self.x.ndim != 1 or len(self.x) < 2:
            raise ValueError("need a 1-D grid with at least two points")
        if np.any(np.diff(self.x) <= 0):
            raise ValueError("grid must be sorted and unique")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")

    @property
    def n(self) -> int:
        return len(self.x)

    @property
    def f0(self) -> np.ndarray:
        if self.truth is None:
            return np.full(self.n, np.nan)
        return np.asarray(self.truth(self.x), dtype=np.float64)

    def noise_seed(self, repeat: int) -> int:
        return derive_seed(self.seed, repeat)

    def sample(self, repeat: int = 0) -> np.ndarray:
        if self.y_fixed is not None:
            return np.array(self.y_fixed, dtype=np.float64)
        return self.f0 + gaussian_sample(Rng(self.noise_seed(repeat)), self.n, self.sigma)


def _grid(n: int) -> np.ndarray:
    if n < 2:
        raise ValueError("n must be at least 2")
    return np.linspace(0.0, 1.0, n)


def gen_doppler(n: int = 1000, sigma: float = 0.4, seed: int = 0) -> RegressionProblem:
    return RegressionProblem(_grid(n), doppler, sigma, seed, "doppler")


def gen_vary(n: int = 1000, sigma: float = 0.1, seed: int = 0) -> RegressionProblem:
    return RegressionProblem(_grid(n), vary, sigma, seed, "vary")


def gen_piecewise(n: int = 256, sigma: float = 0.05, seed: int = 0, truth=None) -> RegressionProblem:
    return RegressionProblem(_grid(n), truth or piecewise_cubic, sigma, seed, "piecewise")


def gen_constant(n: int = 256, sigma: float = 0.1, seed: int = 0, level: float = 0.0) -> RegressionProblem:
    return RegressionProblem(_grid(n), lambda x: np.full(np.shape(x), float(level)), sigma, seed, "constant")


def load_csv_problem(path, sigma: float | None = None) -> RegressionProblem:
    """Columns ``x,y`` and optionally ``truth``; sigma defaults to a MAD estimate."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or "x" not in rows[0] or "y" not in rows[0]:
        raise ConfigError(f"{path}: need columns x and y")
    x = np.array([float(r["x"]) for r in rows])
    y = np.array([float(r["y"]) for r in rows])
    order = np.argsort(x)
    x, y = x[order], y[order]
    truth = None
    if "truth" in rows[0]:
        t = np.array([float(r["truth"]) for r in rows])[order]
        truth = _table_truth(x, t)
    if sigma is None:
        sigma = float(np.median(np.abs(np.diff(y))) / (0.6744897501960817 * math.sqrt(2.0)))
    return RegressionProblem(x, truth, sigma, 0, str(path), y_fixed=y)


def _table_truth(xs, ts):
    def f(x):
        return np.interp(x, xs, ts)
    return f


def mse_vs_truth(yhat, problem: RegressionProblem) -> float:
    yhat = np.asarray(yhat, dtype=np.float64)
    if yhat.shape != (problem.n,):
        raise ValueError("prediction length does not match the problem")
    return float(np.mean((yhat - problem.f0) ** 2))


# ---------------------------------------------------------------- degrees of freedom

def dof_single(y, yhat, f0, sigma: float) -> float:
    """One-realization estimate ``(1/2s^2)[|y0-yh|^2 - |y-yh|^2 + |y-ybar0|^2 - |y0-ybar0|^2]``."""
    if not sigma > 0:
        raise ValueError("degrees of freedom need sigma > 0")
    y, yhat, f0 = (np.asarray(a, dtype=np.float64) for a in (y, yhat, f0))
    ybar = float(np.mean(f0))
    val = (np.sum((f0 - yhat) ** 2) - np.sum((y - yhat) ** 2)
           + np.sum((y - ybar) ** 2) - np.sum((f0 - ybar) ** 2))
    return float(val / (2.0 * sigma**2))


def dof_estimate(fitter, problem: RegressionProblem, repeats: int = 10) -> float:
    """Average of :func:`dof_single` over ``repeats`` fresh noise draws.

    ``fitter(y) -> yhat`` is called once per repeat.
    """
    if repeats < 2:
        raise ValueError("need at least two repeats")
    if not problem.sigma > 0:
        raise ValueError("degrees of freedom need sigma > 0")
    f0 = problem.f0
    vals = []
    for r in range(repeats):
        y = problem.sample(r)
        yhat = fitter(y)
        yhat = yhat.yhat if isinstance(yhat, FitResult) else np.asarray(yhat, dtype=np.float64)
        vals.append(dof_single(y, yhat, f0, problem.sigma))
    return float(np.mean(vals))


def isotonic_smooth(values, increasing: bool = False) -> np.ndarray:
    """Monotone least-squares fit of a dof curve (reporting only)."""
    v = np.asarray(values, dtype=np.float64)
    return isotonic_regression(v, increasing=increasing).x


# ---------------------------------------------------------------- methods

@dataclass
class PNNSettings:
    L: int = 10
    w: int = 10
    M: int = 200
    lr: float = 1e-3
    epochs: int = 1000
    path_epochs: int = 200
    layerwise: bool = False
    pretrain_epochs: int = 200
    dtype: str = "float32"
    decay_tail: float = 0.3


@dataclass
class ExperimentConfig:
    problem: str = "vary"
    n: int | None = None
    sigma: float | None = None
    methods: list = field(default_factory=list)
    grids: dict = field(default_factory=dict)
    repeats: int = 10
    seed: int = 0
    tf_order: int = 3
    nn2_order: int = 1
    nn2_M: int = 200
    nn2_iters: int = 4000
    pnn: PNNSettings = field(default_factory=PNNSettings)
    name: str = "experiment"
    threads: int = 1

    def validate(self):
        if not self.methods:
            raise ConfigError("no methods configured")
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r} (known: {', '.join(sorted(METHODS))})")
            if m in GRIDDED and not self.grids.get(m):
                raise ConfigError(f"empty tuning grid for method {m!r}")
        if self.repeats < 1:
            raise ConfigError("repeats must be at least 1")


def _fit_tf(problem, y, grid, seed, cfg):
    out, warm = [None] * len(grid), None
    for i in np.argsort(grid)[::-1]:  # large lambda first: sparse solutions warm-start well
        res = trend_filter(y, TrendFilterSpec(m=cfg.tf_order, lam=float(grid[i])), warm=warm)
        out[i] = res
        warm = res
    return out


def _fit_ss(problem, y, grid, seed, cfg):
    return [smoothing_spline(y, problem.x, float(lam)) for lam in grid]


def _fit_wavelet(problem, y, grid, seed, cfg):
    return [wavelet_denoise(y, float(t)) for t in grid]


def _fit_pnn(problem, y, grid, seed, cfg):
    """Warm-started lambda path: full schedule at the smallest lambda, then
    ``path_epochs`` more at each larger value."""
    s = cfg.pnn
    net = init_parallel_net(s.M, 1, s.w, s.L, Rng(seed))
    out = [None] * len(grid)
    first = True
    for i in np.argsort(grid):
        tc = TrainConfig(lam=float(grid[i]), lr=s.lr, epochs=s.epochs if first else s.path_epochs,
                         seed=seed, layerwise=s.layerwise and first, pretrain_epochs=s.pretrain_epochs,
                         dtype=s.dtype, decay_tail=s.decay_tail)
        net, losses = train(net, problem.x, y, tc)
        first = False
        yhat = forward(net, problem.x)
        act = active_subnetworks(net, problem.x, ys=y)
        out[i] = FitResult(yhat, float(grid[i]), "pnn", knots=len(act),
                           meta={"final_loss": losses[-1], "net": net})
    return out


def _fit_nn2(problem, y, grid, seed, cfg):
    tc = TwoLayerConfig(m=cfg.nn2_order, M=cfg.nn2_M, epochs=cfg.nn2_iters, seed=seed)
    return [res for _, res in two_layer_path(y, problem.x, cfg.nn2_order, list(grid), tc)]


def _fit_zero(problem, y, grid, seed, cfg):
    return [FitResult(np.full(problem.n, float(np.mean(problem.f0))), 0.0, "zero", knots=0)]


def _fit_identity(problem, y, grid, seed, cfg):
    return [FitResult(np.array(y), 0.0, "identity", knots=problem.n)]


METHODS = {"tf": _fit_tf, "ss": _fit_ss, "wavelet": _fit_wavelet, "pnn": _fit_pnn, "nn2": _fit_nn2,
           "zero": _fit_zero, "identity": _fit_identity}
GRIDDED = {"tf", "ss", "wavelet", "pnn", "nn2"}


def make_problem(cfg: ExperimentConfig) -> RegressionProblem:
    kw = {k: v for k, v in (("n", cfg.n), ("sigma", cfg.sigma)) if v is not None}
    if cfg.problem == "vary":
        return gen_vary(seed=cfg.seed, **kw)
    if cfg.problem == "doppler":
        return gen_doppler(seed=cfg.seed, **kw)
    if cfg.problem == "piecewise":
        return gen_piecewise(seed=cfg.seed, **kw)
    if cfg.problem == "constant":
        return gen_constant(seed=cfg.seed, **kw)
    if cfg.problem.startswith("csv:"):
        return load_csv_problem(cfg.problem[4:], cfg.sigma)
    raise ConfigError(f"unknown problem {cfg.problem!r}")


# ---------------------------------------------------------------- driver

ROW_HEADER = ["method", "tuning", "repeat", "mse", "dof", "active", "seed"]
AGG_HEADER = ["method", "tuning", "mse_mean", "mse_lo", "mse_hi", "dof_mean"]


@dataclass
class ExperimentResult:
    rows: list
    aggregate: list
    fits: dict = field(default_factory=dict)  # (method, tuning, repeat) -> FitResult, when kept

    def rows_csv(self) -> str:
        return _to_csv(ROW_HEADER, self.rows)

    def aggregate_csv(self) -> str:
        return _to_csv(AGG_HEADER, self.aggregate)

    def best(self, method: str) -> tuple:
        """(tuning, mse_mean) with the smallest mean MSE for ``method``."""
        cand = [(a[2], a[1]) for a in self.aggregate if a[0] == method and math.isfinite(a[2])]
        if not cand:
            raise KeyError(method)
        mse, tun = min(cand)
        return tun, mse


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _to_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def wald_band(values, z: float = 1.959963984540054) -> tuple:
    """Mean and the normal-approximation 95% interval ``mean +- z sd / sqrt(R)``."""
    v = np.asarray(values, dtype=np.float64)
    mean = float(np.mean(v))
    if len(v) < 2:
        return mean, mean, mean
    half = z * float(np.std(v, ddof=1)) / math.sqrt(len(v))
    return mean, mean - half, mean + half


def _method_seed(noise_seed: int, method: str) -> int:
    return derive_seed(noise_seed, sum(ord(c) * 131**i for i, c in enumerate(method)) % (1 << 31))


def run_experiment(cfg: ExperimentConfig, problem: RegressionProblem | None = None,
                   keep_fits: bool = False, progress=None) -> ExperimentResult:
    """Fits every method on every repeat; noise draws are shared across methods."""
    cfg.validate()
    problem = problem or make_problem(cfg)
    f0 = problem.f0
    has_truth = problem.truth is not None
    repeats = 1 if problem.y_fixed is not None else cfg.repeats

    def one_repeat(r):
        y = problem.sample(r)
        ns = problem.noise_seed(r)
        out = []
        for m in cfg.methods:
            grid = list(cfg.grids.get(m, [0.0])) if m in GRIDDED else [0.0]
            fits = METHODS[m](problem, y, np.asarray(grid, dtype=np.float64), _method_seed(ns, m), cfg)
            for tun, fit in zip(grid, fits):
                mse = mse_vs_truth(fit.yhat, problem) if has_truth else math.nan
                dof = dof_single(y, fit.yhat, f0, problem.sigma) if has_truth and problem.sigma > 0 else math.nan
                out.append((m, float(tun), r, mse, dof, int(fit.knots), ns, fit))
            if progress:
                progress(f"repeat {r} method {m} done")
        return out

    if cfg.threads > 1:
        with ThreadPoolExecutor(cfg.threads) as ex:
            per = list(ex.map(one_repeat, range(repeats)))
    else:
        per = [one_repeat(r) for r in range(repeats)]
    rows, fits = [], {}
    for block in per:
        for m, tun, r, mse, dof, act, ns, fit in block:
            rows.append([m, tun, r, mse, dof, act, ns])
            if keep_fits:
                fits[(m, tun, r)] = fit
    agg = []
    for m in cfg.methods:
        grid = list(cfg.grids.get(m, [0.0])) if m in GRIDDED else [0.0]
        for tun in grid:
            sel = [row for row in rows if row[0] == m and row[1] == float(tun)]
            mean, lo, hi = wald_band([row[3] for row in sel])
            agg.append([m, float(tun), mean, lo, hi, float(np.mean([row[4] for row in sel]))])
    return ExperimentResult(rows, agg, fits)
