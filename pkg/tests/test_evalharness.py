import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pnnreg.baselines import smoothing_spline
from pnnreg.evalharness import (AGG_HEADER, ROW_HEADER, ConfigError, ExperimentConfig, RegressionProblem, doppler,
                                dof_estimate, dof_single, gen_constant, gen_doppler, gen_piecewise, gen_vary,
                                isotonic_smooth, load_csv_problem, mse_vs_truth, piecewise_polynomial,
                                run_experiment, vary, wald_band)


def cubic_bspline(t):
    # piecewise closed form of the centered-at-2 cubic B-spline on [0, 4]
    if t < 0 or t >= 4:
        return 0.0
    if t < 1:
        return t**3 / 6
    if t < 2:
        return (-3 * t**3 + 12 * t**2 - 12 * t + 4) / 6
    if t < 3:
        return (3 * t**3 - 24 * t**2 + 60 * t - 44) / 6
    return (4 - t) ** 3 / 6


def hat(t):
    return max(0.0, 1.0 - abs(t - 1.0))


def test_doppler_examples():
    x0 = 4 / (2 * math.pi) - 0.01
    assert doppler(x0) == pytest.approx(1.5, abs=1e-12)
    v = doppler(np.linspace(0, 1, 10001))
    assert v.min() >= 0.5 and v.max() <= 2.5
    prob = gen_doppler()
    assert prob.n == 1000 and prob.sigma == 0.4


def test_vary_examples():
    bumps = [(1, 0.0, 0.01), (1, 0.02, 0.02), (1, 0.06, 0.03), (1, 0.12, 0.04),
             (3, 0.2, 0.02), (3, 0.28, 0.04), (3, 0.44, 0.06), (3, 0.68, 0.08)]

    def direct(x):
        return sum((hat if m == 1 else cubic_bspline)((x - s) / h) for m, s, h in bumps)

    assert vary(0.01) == pytest.approx(direct(0.01), abs=1e-12)
    assert vary(0.01) >= 1.0
    assert vary(0.99) == pytest.approx(cubic_bspline((0.99 - 0.68) / 0.08), abs=1e-12)
    xs = np.linspace(0, 1, 777)
    np.testing.assert_allclose(vary(xs), [direct(x) for x in xs], atol=1e-12)
    prob = gen_vary()
    assert prob.n == 1000 and prob.sigma == 0.1


def test_problem_validation_and_sampling():
    with pytest.raises(ValueError):
        RegressionProblem(np.array([0.0, 0.0, 1.0]), vary, 0.1)
    with pytest.raises(ValueError):
        gen_vary(1)
    prob = gen_vary(100, seed=3)
    np.testing.assert_array_equal(prob.sample(2), prob.sample(2))
    assert not np.array_equal(prob.sample(1), prob.sample(2))
    pw = piecewise_polynomial([0, 0.5, 1], [[0.0, 1.0], [0.5, 0.0, 2.0]])
    np.testing.assert_allclose(pw(np.array([0.25, 0.75])), [0.25, 0.5 + 2 * 0.0625])
    with pytest.raises(ValueError):
        piecewise_polynomial([0, 1], [[1.0], [2.0]])
    assert gen_piecewise().n == 256
    np.testing.assert_array_equal(gen_constant(10, level=2.0).f0, 2.0)


def test_mse_vs_truth():
    prob = gen_vary(200)
    assert mse_vs_truth(prob.f0, prob) == 0.0
    assert mse_vs_truth(prob.f0 + 0.3, prob) == pytest.approx(0.09)
    vals = [mse_vs_truth(prob.sample(r), prob) for r in range(50)]
    assert np.mean(vals) == pytest.approx(0.01, rel=0.1)
    with pytest.raises(ValueError):
        mse_vs_truth(np.zeros(3), prob)


def test_dof_examples():
    prob = gen_vary(256)
    zero = dof_estimate(lambda y: np.full(prob.n, prob.f0.mean()), prob, 10)
    assert abs(zero) <= 0.5
    ident = dof_estimate(lambda y: y, prob, 10)
    assert ident == pytest.approx(prob.n, rel=0.05)
    with pytest.raises(ValueError):
        dof_estimate(lambda y: y, gen_vary(50, sigma=0.0), 5)
    with pytest.raises(ValueError):
        dof_estimate(lambda y: y, prob, 1)


@pytest.mark.parametrize("lam", [1e-10, 1e-9, 1e-8])
def test_dof_matches_trace_for_spline(lam):
    prob = gen_constant(256, 0.1)
    est = dof_estimate(lambda y: smoothing_spline(y, prob.x, lam), prob, 20)
    exact = smoothing_spline(prob.f0, prob.x, lam).dof
    assert est == pytest.approx(exact, rel=0.1)


@given(st.integers(0, 2**20), st.floats(-5, 5))
def test_dof_constant_shift_invariance(seed, c):
    rng = np.random.default_rng(seed)
    f0, y, yhat = rng.normal(size=(3, 40))
    a = dof_single(y, yhat, f0, 0.3)
    b = dof_single(y + c, yhat + c, f0 + c, 0.3)
    assert b == pytest.approx(a, rel=1e-9, abs=1e-9)


def test_wald_band_shrinks():
    rng = np.random.default_rng(0)
    v = rng.normal(size=4000)
    _, lo1, hi1 = wald_band(v[:100])
    _, lo2, hi2 = wald_band(v[:400])
    assert (hi1 - lo1) / (hi2 - lo2) == pytest.approx(2.0, rel=0.15)
    assert wald_band([1.0]) == (1.0, 1.0, 1.0)


def test_isotonic_smooth():
    out = isotonic_smooth([5.0, 6.0, 3.0, 3.5, 1.0])
    assert np.all(np.diff(out) <= 0)
    np.testing.assert_allclose(out, [5.5, 5.5, 3.25, 3.25, 1.0])


def test_row_accounting():
    cfg = ExperimentConfig(problem="vary", n=128, methods=["ss"], grids={"ss": [1e-6, 1e-5, 1e-4]}, repeats=2)
    res = run_experiment(cfg)
    assert len(res.rows) == 6 and len(res.aggregate) == 3
    assert res.rows_csv().splitlines()[0] == ",".join(ROW_HEADER)
    assert res.aggregate_csv().splitlines()[0] == ",".join(AGG_HEADER)
    tun, mse = res.best("ss")
    assert tun in (1e-6, 1e-5, 1e-4) and mse > 0


def test_tf_dof_nonincreasing_in_lambda():
    grid = list(10.0 ** np.arange(-4, 3))
    cfg = ExperimentConfig(problem="vary", n=200, methods=["tf"], grids={"tf": grid}, repeats=2, tf_order=1)
    res = run_experiment(cfg)
    dofs = [a[5] for a in res.aggregate]
    assert all(b <= a + 1 for a, b in zip(dofs, dofs[1:]))


def test_unknown_method_and_empty_grid():
    with pytest.raises(ConfigError):
        run_experiment(ExperimentConfig(methods=["nope"]))
    with pytest.raises(ConfigError):
        run_experiment(ExperimentConfig(methods=["tf"], grids={}))


def test_threads_do_not_change_results():
    base = dict(problem="vary", n=128, methods=["ss", "wavelet"], grids={"ss": [1e-5], "wavelet": [0.2]},
                repeats=3)
    a = run_experiment(ExperimentConfig(**base))
    b = run_experiment(ExperimentConfig(**base, threads=3))
    assert a.rows_csv() == b.rows_csv()


def test_small_pnn_method_runs():
    cfg = ExperimentConfig(problem="vary", n=64, methods=["pnn"], grids={"pnn": [1e-5, 1e-4]}, repeats=1)
    cfg.pnn.M, cfg.pnn.L, cfg.pnn.w, cfg.pnn.epochs, cfg.pnn.path_epochs = 8, 3, 4, 30, 10
    res = run_experiment(cfg, keep_fits=True)
    assert len(res.rows) == 2
    assert all(math.isfinite(r[3]) for r in res.rows)
    assert ("pnn", 1e-5, 0) in res.fits


def test_csv_problem(tmp_path):
    path = tmp_path / "data.csv"
    x = np.linspace(0, 1, 50)
    rows = ["x,y,truth"] + [f"{a},{np.sin(a) + 0.01 * (-1) ** i},{np.sin(a)}" for i, a in enumerate(x.tolist())]
    path.write_text("\n".join(rows) + "\n")
    prob = load_csv_problem(path)
    assert prob.n == 50 and prob.sigma > 0
    np.testing.assert_allclose(prob.f0, np.sin(x))
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n")
    with pytest.raises(ConfigError):
        load_csv_problem(bad)
