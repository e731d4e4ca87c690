import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tourncp.models import (DataPoint, Dataset, LinearModel, OneStepConfig, SimConfig,
                            fit_ols_pinv, generate_trial, loo_coefficients, loo_fit,
                            one_step_update)


def test_dataset_views():
    X = np.arange(6.0).reshape(3, 2)
    d = Dataset(X, [1.0, 2.0, 3.0])
    assert d.n == 3 and d.p == 2
    assert d[1].y == 2.0
    dropped = d.drop(1)
    np.testing.assert_array_equal(dropped.y, [1.0, 3.0])
    aug = d.augment(DataPoint([9.0, 9.0], 4.0))
    assert aug.n == 4 and aug[3].y == 4.0
    with pytest.raises(IndexError):
        d.drop(3)
    with pytest.raises(ValueError):
        Dataset(X, [1.0, 2.0])
    with pytest.raises(ValueError):
        d.X[0, 0] = 5.0


def test_ols_examples():
    b = fit_ols_pinv(Dataset(np.eye(3), [1.0, 2.0, 3.0])).beta
    np.testing.assert_allclose(b, [1, 2, 3], atol=1e-12)
    b = fit_ols_pinv(Dataset([[1.0, 1.0]], [2.0])).beta
    np.testing.assert_allclose(b, [1, 1], atol=1e-12)


def test_ols_matches_normal_equations(rng):
    X = rng.standard_normal((50, 10))
    y = rng.standard_normal(50)
    b = fit_ols_pinv(Dataset(X, y)).beta
    np.testing.assert_allclose(b, np.linalg.solve(X.T @ X, X.T @ y), atol=1e-8)


def test_ols_errors():
    with pytest.raises(ValueError):
        fit_ols_pinv(Dataset.empty(3))
    with pytest.raises(ValueError):
        fit_ols_pinv(Dataset([[np.nan]], [1.0]))


def test_ols_underdetermined_min_norm(rng):
    X = rng.standard_normal((5, 12))
    y = rng.standard_normal(5)
    b = fit_ols_pinv(Dataset(X, y)).beta
    np.testing.assert_allclose(X @ b, y, atol=1e-9)
    np.testing.assert_allclose(b, np.linalg.pinv(X) @ y, atol=1e-9)


def test_ols_minimizes_residual(rng):
    X = rng.standard_normal((40, 6))
    y = rng.standard_normal(40)
    b = fit_ols_pinv(Dataset(X, y)).beta
    base = np.linalg.norm(y - X @ b)
    r = y - X @ b
    assert np.linalg.norm(X.T @ r) <= 1e-8 * np.linalg.norm(y) * np.sqrt(40)
    for _ in range(100):
        u = rng.standard_normal(6)
        u *= 1e-3 / np.linalg.norm(u)
        assert np.linalg.norm(y - X @ (b + u)) >= base


def test_loo_fit(rng):
    X = rng.standard_normal((12, 4))
    y = rng.standard_normal(12)
    d = Dataset(X, y)
    betas = loo_coefficients(d)
    for i in range(d.n):
        np.testing.assert_allclose(loo_fit(d, i).beta, fit_ols_pinv(d.drop(i)).beta,
                                   atol=1e-10)
        np.testing.assert_allclose(betas[i], loo_fit(d, i).beta, atol=1e-12)
    twin = Dataset([[1.0, 2.0], [1.0, 2.0]], [3.0, 3.0])
    np.testing.assert_allclose(loo_fit(twin, 0).beta, fit_ols_pinv(twin.drop(0)).beta)
    # dropping row 0 leaves a rank-deficient design
    deficient = Dataset([[1.0, 0.0], [0.0, 1.0], [0.0, 2.0]], [1.0, 1.0, 2.0])
    assert np.all(np.isfinite(loo_fit(deficient, 0).beta))
    with pytest.raises(IndexError):
        loo_fit(d, 12)


def test_one_step_examples():
    base = LinearModel(np.array([0.0]))
    out = one_step_update(base, 10, DataPoint([1.0], 1.0), OneStepConfig(10.0))
    assert out.beta[0] == pytest.approx(1.0)
    theta = np.array([0.5, -1.0])
    m = LinearModel(theta)
    x = np.array([2.0, 1.0])
    same = one_step_update(m, 5, DataPoint(x, x @ theta), OneStepConfig(10.0))
    np.testing.assert_array_equal(same.beta, theta)
    tiny = one_step_update(m, 5, DataPoint(x, 7.0), OneStepConfig(1e-12))
    np.testing.assert_allclose(tiny.beta, theta, atol=1e-9)
    with pytest.raises(ValueError):
        one_step_update(m, 5, (), OneStepConfig())
    with pytest.raises(ValueError):
        one_step_update(m, 5, (DataPoint(x, 1.0),) * 3, OneStepConfig())
    with pytest.raises(ValueError):
        OneStepConfig(0.0)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_one_step_two_point_symmetry(seed):
    rng = np.random.default_rng(seed)
    m = LinearModel(rng.standard_normal(4))
    a = DataPoint(rng.standard_normal(4), rng.standard_normal())
    b = DataPoint(rng.standard_normal(4), rng.standard_normal())
    cfg = OneStepConfig(10.0)
    ab = one_step_update(m, 12, (a, b), cfg).beta
    ba = one_step_update(m, 12, (b, a), cfg).beta
    np.testing.assert_allclose(ab, ba, rtol=0, atol=1e-12)
    expected = m.beta + 10.0 / 12 * (a.x * (a.y - a.x @ m.beta) + b.x * (b.y - b.x @ m.beta))
    np.testing.assert_allclose(ab, expected, atol=1e-12)


def test_one_step_test_score_closed_form():
    rng = np.random.default_rng(8)
    for _ in range(100):
        n, p = 15, 4
        X = rng.standard_normal((n, p))
        d = Dataset(X, rng.standard_normal(n))
        beta = fit_ols_pinv(d).beta
        x, y = rng.standard_normal(p), rng.standard_normal() * 3
        model = one_step_update(fit_ols_pinv(d), n + 1, DataPoint(x, y), OneStepConfig(10.0))
        kappa = 10.0 / (n + 1) * x @ x
        direct = abs(y - x @ model.beta)
        assert direct == pytest.approx(abs(1 - kappa) * abs(y - x @ beta), abs=1e-9)


def test_generate_trial():
    cfg = SimConfig(n=30, p=5, master_seed=4)
    t1, t2 = generate_trial(cfg, 3), generate_trial(cfg, 3)
    np.testing.assert_array_equal(t1.data.X, t2.data.X)
    np.testing.assert_array_equal(t1.data.y, t2.data.y)
    assert t1.test.y == t2.test.y
    assert generate_trial(cfg, 4).test.y != t1.test.y
    for t in range(10):
        assert np.linalg.norm(generate_trial(cfg, t).beta_star) == pytest.approx(
            np.sqrt(10), abs=1e-12)
    quiet = SimConfig(n=10, p=1, noise_sd=0.0)
    tr = generate_trial(quiet, 0)
    np.testing.assert_allclose(tr.data.y, tr.data.X[:, 0] * tr.beta_star[0], atol=1e-14)


def test_sim_config_validation():
    for bad in (dict(n=1), dict(p=0), dict(trials=0), dict(noise_sd=-1), dict(alpha=1.0)):
        with pytest.raises(ValueError):
            SimConfig(**bad)
