import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pnnreg.besov import (SparseApprox, SplineDecomposition, assemble_approx_net, dual_functional,
                          greedy_sparse_approx, level_shifts, lp_power_bound, quasi_interpolant, refine,
                          sequence_norm, weighted_lp_coefficient_norm)
from pnnreg.evalharness import vary
from pnnreg.pnn import forward, to_constrained_form
from pnnreg.splinenet import SplineAtom, bspline_eval, build_bspline_net, evaluate_parallel

GRID = np.linspace(0.0, 1.0, 2048)


def test_reproduces_single_hat():
    dec = quasi_interpolant(lambda x: bspline_eval(1, x), 1, 0)
    atoms = dec.atoms()
    assert len(atoms) == 1 and atoms[0].coeff == pytest.approx(1.0, abs=1e-12) and atoms[0].s == (0.0,)
    assert dec.meta["residual_sup"] <= 1e-10


def test_constant_function_coefficients():
    dec = quasi_interpolant(lambda x: np.ones_like(x), 1, 4)
    np.testing.assert_allclose(dec.levels[0], 1.0, atol=1e-12)
    for lev in dec.levels[1:]:
        np.testing.assert_allclose(lev, 0.0, atol=1e-12)
    assert dec.meta["residual_sup"] <= 1e-10


def test_vary_cubic_level_six_residual():
    dec = quasi_interpolant(vary, 3, 6)
    assert dec.meta["residual_sup"] <= 1e-2


@pytest.mark.parametrize("m", [1, 2, 3, 4])
def test_dual_functional_reproduces_level_splines(m):
    # any spline on the level-k grid is returned exactly by the level-k quasi-interpolant
    rng = np.random.default_rng(m)
    k = 3
    coeffs = rng.normal(size=len(level_shifts(m, k)))

    def g(x):
        x = np.asarray(x, dtype=np.float64)
        return sum(c * bspline_eval(m, 2.0**k * x - i) for i, c in zip(level_shifts(m, k), coeffs))

    dec = quasi_interpolant(g, m, k)
    assert dec.meta["residual_sup"] <= 1e-10
    t, lam = dual_functional(m)
    assert lam.sum() == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("m", [1, 2, 3])
def test_refine_two_scale(m):
    rng = np.random.default_rng(0)
    c = rng.normal(size=len(level_shifts(m, 2)))
    fine = refine(c, m, 3)
    x = np.linspace(0, 1, 333)
    coarse_val = sum(ci * bspline_eval(m, 4 * x - i) for i, ci in zip(level_shifts(m, 2), c))
    fine_val = sum(ci * bspline_eval(m, 8 * x - i) for i, ci in zip(level_shifts(m, 3), fine))
    np.testing.assert_allclose(fine_val, coarse_val, atol=1e-12)


@given(st.integers(0, 2**20))
def test_quasi_interpolant_linear(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=4), rng.normal(size=4)

    def f(x):
        return a[0] * np.sin(a[1] * 5 * x) + a[2] * x**3 + a[3]

    def g(x):
        return b[0] * np.cos(b[1] * 3 * x) + b[2] * np.abs(x - 0.4) + b[3]

    qf, qg = quasi_interpolant(f, 2, 4), quasi_interpolant(g, 2, 4)
    qs = quasi_interpolant(lambda x: f(x) + g(x), 2, 4)
    for s, u, v in zip(qs.levels, qf.levels, qg.levels):
        np.testing.assert_allclose(s, u + v, rtol=1e-12, atol=1e-12)


def test_sequence_norm_examples():
    single = SplineDecomposition(1, [np.array([1.0])])
    for alpha in [0.5, 2.0, 3.0]:
        assert sequence_norm(single, alpha, 1.0) == 1.0
    two = SplineDecomposition(1, [np.array([1.0]), np.array([0.5, 0.5])])
    assert sequence_norm(two, 2.0, 1.0) == pytest.approx(2.0)
    assert sequence_norm(SplineDecomposition(1, []), 2.0, 1.0) == 0.0
    with pytest.raises(ValueError):
        sequence_norm(two, 2.0, 0.5)


_SIN_DEC = quasi_interpolant(lambda x: np.sin(7 * x), 2, 4)


@given(st.floats(1e-3, 10) | st.floats(-10, -1e-3) | st.just(0.0), st.floats(1.0, 3.0),
       st.sampled_from([1.0, 2.0, math.inf]))
def test_sequence_norm_homogeneous(c, p, q):
    dec = _SIN_DEC
    scaled = SplineDecomposition(2, [c * lev for lev in dec.levels])
    assert sequence_norm(scaled, 2.5, p, q) == pytest.approx(abs(c) * sequence_norm(dec, 2.5, p, q),
                                                             rel=1e-12)


def test_greedy_trivial_cases():
    dec = quasi_interpolant(lambda x: np.sin(5 * x), 2, 3)
    everything = greedy_sparse_approx(dec, 10**6)
    np.testing.assert_allclose(everything(GRID), dec(GRID), atol=1e-12)
    single = SplineDecomposition(1, [np.array([0.0, 2.0])])
    one = greedy_sparse_approx(single, 1)
    assert len(one) == 1 and one.atoms[0].coeff == 2.0
    with pytest.raises(ValueError):
        greedy_sparse_approx(dec, 0)


@pytest.fixture(scope="module")
def vary_dec():
    return quasi_interpolant(vary, 3, 10)


def test_greedy_vary_rate(vary_dec):
    budgets = [16, 32, 64, 128]
    errs = [greedy_sparse_approx(vary_dec, B, truth=vary).target_error for B in budgets]
    assert all(b <= a for a, b in zip(errs, errs[1:]))
    assert np.polyfit(np.log(budgets), np.log(errs), 1)[0] <= -1.0


def test_greedy_monotone_in_budget(vary_dec):
    errs = [greedy_sparse_approx(vary_dec, B, truth=vary).target_error for B in range(8, 200, 7)]
    assert all(b <= a + 1e-12 for a, b in zip(errs, errs[1:]))


def test_greedy_respects_budget(vary_dec):
    for B in [1, 5, 40, 300]:
        assert len(greedy_sparse_approx(vary_dec, B)) <= B


def test_weighted_norm_examples():
    assert weighted_lp_coefficient_norm(SparseApprox([SplineAtom(3, 0, 0.0, 1.0)], 1), 1.0) == 1.0
    assert weighted_lp_coefficient_norm(SparseApprox([SplineAtom(3, 3, 0.0, 1.0)], 1), 1.0) == 8.0


def test_weighted_norm_band_vary(vary_dec):
    norms = [weighted_lp_coefficient_norm(greedy_sparse_approx(vary_dec, B), 1.0) for B in [16, 32, 64, 128]]
    assert max(norms) <= 2.0 * min(norms)


def test_sparse_csv_round_trip(vary_dec, tmp_path):
    approx = greedy_sparse_approx(vary_dec, 20)
    path = tmp_path / "atoms.csv"
    approx.save_csv(path)
    text = path.read_text()
    assert text.splitlines()[0] == "m,k,s,coeff"
    back = SparseApprox.from_csv(text)
    assert back.atoms == approx.atoms


def test_assemble_single_hat():
    approx = SparseApprox([SplineAtom(1, 0, 0.0, 1.0)], 1)
    net = assemble_approx_net(approx, 1e-2)
    nets, a = build_bspline_net(1, 0, 0.0, 1, 1e-2)
    x = np.linspace(-0.5, 2.5, 301)
    np.testing.assert_allclose(forward(net, x), evaluate_parallel(nets, a, x), atol=1e-12)


def test_assemble_disjoint_pair():
    approx = SparseApprox([SplineAtom(3, 3, 0.0, 1.0), SplineAtom(3, 3, 0.6, -1.0)], 2)
    eps = 1e-2
    net = assemble_approx_net(approx, eps)
    x = np.linspace(0, 1.2, 1201)
    out = forward(net, x)
    gap = (x > 0.5) & (x < 0.6)
    assert np.all(np.abs(out[gap]) <= 1e-12)
    assert np.max(np.abs(out - approx(x))) <= eps


def test_assemble_vary(vary_dec):
    approx = greedy_sparse_approx(vary_dec, 64)
    eps = 1e-3
    net = assemble_approx_net(approx, eps)
    total = sum(abs(a.coeff) for a in approx.atoms)
    assert np.max(np.abs(forward(net, GRID) - approx(GRID))) <= eps * total
    assert net.meta["budget_2_over_L"] > 0


def test_assemble_constrained_round_trip(vary_dec):
    approx = greedy_sparse_approx(vary_dec, 12)
    unit = SparseApprox([SplineAtom(a.m, a.k, a.s, 1.0) for a in approx.atoms], len(approx))
    cf = to_constrained_form(assemble_approx_net(approx, 1e-2))
    cf_unit = to_constrained_form(assemble_approx_net(unit, 1e-2))
    owners = np.array(assemble_approx_net(unit, 1e-2).meta["owners"])
    expected = cf_unit.coeffs * np.array([abs(approx.atoms[i].coeff) for i in owners])
    np.testing.assert_allclose(cf.coeffs, expected, rtol=1e-6)


def test_lp_power_bound_examples():
    lhs, rhs = lp_power_bound(np.full(7, -0.3), 0.4, 0.8)
    assert lhs == pytest.approx(rhs, rel=1e-12)
    with pytest.raises(ValueError):
        lp_power_bound([1.0], 0.5, 0.5)


@given(st.lists(st.floats(-100, 100), min_size=1, max_size=50),
       st.floats(0.05, 0.95), st.floats(0.05, 1.0))
def test_lp_power_bound_holds(a, r, p):
    p_prime = r * p
    lhs, rhs = lp_power_bound(a, p_prime, p)
    assert lhs <= rhs * (1 + 1e-12) + 1e-300
