import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fosindy.dynamics import ForcingSpec, NoiseSpec, simulate, steady_state_window
from fosindy.errors import ConfigError, EmptyModelError, InsufficientDataError
from fosindy.library import build_library
from fosindy.regression import (
    _Standardized,
    cross_validate,
    default_lambda_grid,
    lambda_max,
    lasso_fit,
    stlsq_fit,
)
from fosindy.signals import CandidateFrequencies, finite_difference


def sparse_problem(m=500, seed=0):
    rng = np.random.default_rng(seed)
    theta = np.column_stack([np.ones(m), rng.normal(size=(m, 8))])
    xi = np.zeros((9, 2))
    xi[2, 0], xi[5, 0] = 3.0, -2.0
    xi[0, 1], xi[3, 1] = 0.5, 1.5
    return theta, theta @ xi, xi


def farm_truth(farm, lib):
    """Coefficients of the small-signal model in a degree-1 library with one 0.71 Hz sin/cos pair."""
    r = farm.r
    xi = np.zeros((lib.p, 2 * r))
    xi[1 : 1 + 2 * r, :] = farm.state_matrix().T
    xi[lib.column_index(lib.terms[1 + 2 * r]), r] = 0.5  # sin(0.71 Hz) drives turbine 1
    return xi


@pytest.fixture(scope="module")
def exact_system(farm):
    # load noise keeps the states persistently excited; targets are generated exactly from the model
    traj = simulate(farm, [ForcingSpec.sinusoid(0, 0.71, 0.5)], NoiseSpec(load_sigma=0.02, rng_seed=0), 0.01, 120.0)
    ms = finite_difference(steady_state_window(traj, 20.0))
    lib = build_library(ms, CandidateFrequencies((0.71,), (frozenset({"omega_1"}),)), 1)
    xi = farm_truth(farm, lib)
    return lib.theta, lib.theta @ xi, xi


def restricted_oracle(theta, y, support):
    out = np.zeros(support.shape)
    for k in range(y.shape[1]):
        s = support[:, k]
        out[s, k] = np.linalg.lstsq(theta[:, s], y[:, k], rcond=None)[0]
    return out


# ---------------------------------------------------------------- lasso

def test_lasso_zero_penalty_is_least_squares():
    rng = np.random.default_rng(1)
    theta = np.column_stack([np.ones(6), rng.normal(size=(6, 5))])
    y = rng.normal(size=(6, 1))
    fit = lasso_fit(theta, y, 0.0, tol=1e-14, max_iter=1_000_000)
    assert np.allclose(fit.xi[:, 0], np.linalg.solve(theta, y[:, 0]), atol=1e-8)


def test_lasso_single_true_column():
    rng = np.random.default_rng(2)
    theta = rng.normal(size=(300, 8))  # no constant column, so nothing absorbs the shrinkage
    fit = lasso_fit(theta, 3 * theta[:, 5], 1e-6)
    nz = np.flatnonzero(fit.xi[:, 0])
    assert list(nz) == [5]
    assert fit.xi[5, 0] == pytest.approx(3.0, rel=1e-5)


def test_lasso_lambda_max_kkt():
    theta, y, _ = sparse_problem()
    lmax = lambda_max(theta, y)
    st_ = _Standardized(theta)
    manual = np.abs(st_.Z.T @ (y - y.mean(0))).max(axis=0) / theta.shape[0]
    assert np.allclose(lmax, manual)
    above = lasso_fit(theta, y, lmax * (1 + 1e-9))
    assert np.all(above.xi[1:] == 0)
    assert np.allclose(above.xi[0], y.mean(0))
    below = lasso_fit(theta, y, lmax * 0.99)
    assert np.all((below.xi[1:] != 0).sum(axis=0) >= 1)


def test_lasso_objective_monotone():
    theta, y, _ = sparse_problem(seed=3)
    y = y + np.random.default_rng(3).normal(scale=0.5, size=y.shape)
    fit = lasso_fit(theta, y, 0.05, trace=True)
    for tr in fit.objective_trace:
        assert np.all(np.diff(tr) <= 1e-15 * np.abs(tr[:-1]).max())


def test_lasso_support_shrinks_along_path():
    theta, y, _ = sparse_problem(seed=4)
    y = y + np.random.default_rng(4).normal(scale=0.3, size=y.shape)
    grid = default_lambda_grid(theta, y, 20)
    counts = np.array([(lasso_fit(theta, y, grid[i], tol=1e-12).xi[1:] != 0).sum(axis=0) for i in range(20)])
    assert np.all(np.diff(counts, axis=0) >= 0)


def test_destandardization_matches_internal_prediction():
    theta, y, _ = sparse_problem(seed=5)
    theta = theta * np.array([1, 1e-3, 10, 1, 5, 0.2, 1, 100, 1])
    fit = lasso_fit(theta, y, 0.01)
    st_ = _Standardized(theta)
    beta = np.vstack([np.zeros((1, 2)), fit.xi[1:, :] * st_.sd[1:, None]])
    internal = st_.Z @ beta + y.mean(0)
    assert np.allclose(theta @ fit.xi, internal, rtol=0, atol=1e-10)


def test_lasso_weights_equal_resampling():
    theta, y, _ = sparse_problem(seed=6)
    y = y + np.random.default_rng(6).normal(scale=0.2, size=y.shape)
    idx = np.random.default_rng(7).integers(0, theta.shape[0], theta.shape[0])
    w = np.bincount(idx, minlength=theta.shape[0]).astype(float)
    a = lasso_fit(theta, y, 0.02, tol=1e-13, weights=w)
    b = lasso_fit(theta[idx], y[idx], 0.02, tol=1e-13)
    assert np.allclose(a.xi, b.xi, atol=1e-9)


@settings(max_examples=25, deadline=None)
@given(e=st.integers(-8, 8), seed=st.integers(0, 100))
def test_lasso_column_scale_invariance(e, seed):
    rng = np.random.default_rng(seed)
    theta = np.column_stack([np.ones(120), rng.normal(size=(120, 4))])
    y = theta @ np.array([0.2, 1.0, 0.0, -0.5, 0.0]) + 0.1 * rng.normal(size=120)
    scaled = theta.copy()
    scaled[:, 2] *= 2.0**e
    a = lasso_fit(theta, y, 0.05, tol=1e-13)
    b = lasso_fit(scaled, y, 0.05, tol=1e-13)
    assert np.array_equal(a.support, b.support)
    assert np.allclose(a.xi[2], b.xi[2] * 2.0**e, atol=1e-9)


def test_lasso_rejects_bad_input():
    theta, y, _ = sparse_problem()
    bad = theta.copy()
    bad[3, 2] = np.nan
    with pytest.raises(ConfigError):
        lasso_fit(bad, y, 0.1)
    with pytest.raises(ConfigError):
        lasso_fit(theta, y, -1.0)
    with pytest.raises(ConfigError):
        lasso_fit(theta, y, 0.1, tol=0)
    with pytest.raises(ConfigError):
        lasso_fit(theta, y[:-1], 0.1)


def test_lasso_nonconvergence_is_flagged():
    theta, y, _ = sparse_problem()
    with pytest.warns(RuntimeWarning):
        fit = lasso_fit(theta, y, 1e-6, tol=1e-15, max_iter=2)
    assert not fit.converged.all()
    assert np.all(fit.n_iter == 2)


# ---------------------------------------------------------------- stlsq

def test_stlsq_zero_threshold_is_least_squares():
    theta, y, _ = sparse_problem(seed=8)
    y = y + np.random.default_rng(8).normal(size=y.shape)
    fit = stlsq_fit(theta, y, 0.0)
    assert np.allclose(fit.xi, np.linalg.lstsq(theta, y, rcond=None)[0], atol=1e-10)


def test_stlsq_recovers_exact_system(exact_system):
    theta, y, xi = exact_system
    fit = stlsq_fit(theta, y, 0.05)
    assert np.array_equal(fit.support, xi != 0)
    assert np.abs(fit.xi - xi).max() < 1e-6


def test_lasso_recovers_exact_system(exact_system):
    theta, y, xi = exact_system
    fit = lasso_fit(theta, y, 1e-10 * lambda_max(theta, y), tol=1e-12)
    assert np.array_equal(fit.support, xi != 0)
    oracle = restricted_oracle(theta, y, xi != 0)
    assert np.abs(fit.xi - oracle).max() < 1e-6


def test_stlsq_threshold_too_large():
    theta, y, _ = sparse_problem()
    with pytest.raises(EmptyModelError):
        stlsq_fit(theta, y, 10.0)


def test_stlsq_rank_deficient_library():
    theta, y, _ = sparse_problem()
    dup = np.column_stack([theta, theta[:, 2]])
    fit = stlsq_fit(dup, y, 0.05)
    assert np.allclose(dup @ fit.xi, y, atol=1e-8)


# ---------------------------------------------------------------- cross-validation

def test_cv_noise_free_plateau():
    theta, y, xi = sparse_problem()
    cv = cross_validate(theta, y, n_lambda=30, min_ratio=1e-6)
    k = np.arange(2)
    assert np.all(cv.mse_mean[cv.chosen_index, k] < 1e-8)
    fit = lasso_fit(theta, y, cv.chosen)
    assert np.array_equal(fit.support[1:], xi[1:] != 0)
    assert np.all(np.diff(cv.lambda_grid, axis=0) < 0)


def test_cv_insufficient_rows():
    rng = np.random.default_rng(0)
    with pytest.raises(InsufficientDataError):
        cross_validate(rng.normal(size=(19, 3)), rng.normal(size=(19, 1)), folds=2)


def test_cv_single_lambda():
    theta, y, _ = sparse_problem()
    cv = cross_validate(theta, y, lambda_grid=[0.1])
    assert cv.lambda_grid.shape == (1, 2)
    assert np.all(cv.chosen == 0.1) and np.all(cv.chosen_index == 0)
    assert np.all(cv.mse_mean >= 0) and cv.folds == 5


def test_cv_one_se_rule():
    theta, y, _ = sparse_problem(seed=9)
    y = y + np.random.default_rng(9).normal(scale=0.5, size=y.shape)
    cv = cross_validate(theta, y)
    for k in range(2):
        best = np.argmin(cv.mse_mean[:, k])
        ok = cv.mse_mean[:, k] <= cv.mse_mean[best, k] + cv.mse_se[best, k]
        assert cv.chosen_index[k] == np.flatnonzero(ok).min()


def test_cv_grid_validation():
    theta, y, _ = sparse_problem()
    with pytest.raises(ConfigError):
        cross_validate(theta, y, lambda_grid=[])
    with pytest.raises(ConfigError):
        cross_validate(theta, y, folds=1)
