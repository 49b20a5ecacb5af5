import numpy as np
import pytest

from pnnreg.baselines import TwoLayerConfig, fit_two_layer_truncpow, two_layer_path
from pnnreg.baselines.twolayer import _objective_grad, _balance_units


@pytest.fixture(scope="module")
def kink_data():
    x = np.linspace(0, 1, 100)
    rng = np.random.default_rng(0)
    f0 = 2 * np.maximum(x - 0.4, 0)
    return x, f0, f0 + 0.1 * rng.normal(size=100)


def cfg(m=1, lam=0.0, **kw):
    return TwoLayerConfig(m=m, lam=lam, M=40, epochs=3000, **kw)


def test_unpenalized_fit_beats_noise_level(kink_data):
    x, _, y = kink_data
    _, res = fit_two_layer_truncpow(y, x, 1, 0.0, 40, cfg())
    assert np.mean((res.yhat - y) ** 2) <= 0.1**2


@pytest.mark.parametrize("m", [1, 2, 3])
def test_large_lambda_gives_polynomial(kink_data, m):
    x, _, y = kink_data
    net, res = fit_two_layer_truncpow(y, x, m, 10.0, 40, cfg(m, 10.0))
    assert np.max(np.abs(net.v)) <= 1e-6
    poly = np.polyval(np.polyfit(x, y, m), x)
    np.testing.assert_allclose(res.yhat, poly, atol=1e-5)
    assert res.knots == 0


@pytest.mark.parametrize("m,lam", [(1, 1e-4), (1, 1e-3), (2, 1e-4), (3, 1e-5)])
def test_balance_at_convergence(kink_data, m, lam):
    x, _, y = kink_data
    net, res = fit_two_layer_truncpow(y, x, m, lam, 40, cfg(m, lam))
    assert res.meta["balance"] <= 1e-2 * max(res.meta["vmax"], 1e-300)
    assert res.meta["tv"] == pytest.approx(np.sum(np.abs(net.v) * np.abs(net.w) ** m))


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    x = np.linspace(0, 1, 30)
    y = np.sin(5 * x)
    V = np.vander(x, 3, increasing=True)
    Vp = np.linalg.pinv(V)
    w, b, v = rng.normal(size=5), rng.normal(size=5) * 0.3, rng.normal(size=5)
    m, lam = 2, 0.1
    _, gw, gb, gv = _objective_grad(w, b, v, x, y, V, Vp, m, lam)
    h = 1e-6
    for arr, g in ((w, gw), (b, gb), (v, gv)):
        for i in range(5):
            old = arr[i]
            arr[i] = old + h
            up = _objective_grad(w, b, v, x, y, V, Vp, m, lam)[0]
            arr[i] = old - h
            down = _objective_grad(w, b, v, x, y, V, Vp, m, lam)[0]
            arr[i] = old
            assert (up - down) / (2 * h) == pytest.approx(g[i], rel=1e-5, abs=1e-8)


@pytest.mark.parametrize("m", [1, 2])
def test_balancing_step_keeps_fit_and_lowers_penalty(m):
    rng = np.random.default_rng(2)
    x = np.linspace(0, 1, 50)
    w, b, v = rng.normal(size=8), rng.normal(size=8), rng.normal(size=8)
    w2, b2, v2 = _balance_units(w, b, v, x, m)
    V = np.vander(x, m + 1, increasing=True)
    Vp = np.linalg.pinv(V)
    y = np.cos(3 * x)
    before = _objective_grad(w, b, v, x, y, V, Vp, m, 0.0)[0]
    after = _objective_grad(w2, b2, v2, x, y, V, Vp, m, 0.0)[0]
    assert after == pytest.approx(before, rel=1e-10, abs=1e-14)
    assert np.sum(v2**2 + np.abs(w2) ** (2 * m)) <= np.sum(v**2 + np.abs(w) ** (2 * m))


def test_adam_option_and_errors(kink_data):
    x, _, y = kink_data
    _, res = fit_two_layer_truncpow(y, x, 1, 1e-3, 40, cfg(1, 1e-3, optimizer="adam", lr=1e-2))
    assert np.mean((res.yhat - y) ** 2) <= 0.02
    with pytest.raises(ValueError):
        fit_two_layer_truncpow(y, x, 1, 1e-3, 40, cfg(1, 1e-3, optimizer="sgd"))
    with pytest.raises(ValueError):
        fit_two_layer_truncpow(y, x, 0, 1e-3, 40)
    with pytest.raises(ValueError):
        fit_two_layer_truncpow(y, x, 1, 1e-3, 0)


def test_path_knots_nonincreasing(kink_data):
    x, _, y = kink_data
    lams = [1e-1, 1e-2, 1e-3, 1e-4]
    out = two_layer_path(y, x, 1, lams, cfg())
    knots = [res.knots for _, res in out]
    assert all(b <= a + 1 for a, b in zip(knots[::-1], knots[::-1][1:]))
    assert [res.tuning for _, res in out] == lams
