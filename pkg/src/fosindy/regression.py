"""Sparse regression of state derivatives onto a feature library.

Two solvers share one output type:

* :func:`lasso_fit` -- cyclic coordinate descent on standardized features,
  objective ``(1/2m)||y - Z b||^2 + lam ||b||_1`` with the constant column
  unpenalized (handled by centering).
* :func:`stlsq_fit` -- sequentially thresholded least squares.

Both accept per-row ``weights``; integer bootstrap counts make a weighted fit
identical to fitting the resampled rows.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numba
import numpy as np
import scipy.linalg

from .errors import ConfigError, EmptyModelError, InsufficientDataError

log = logging.getLogger(__name__)

SNAP = 1e-10


@dataclass(eq=False)
class SparseCoefficients:
    xi: np.ndarray
    lambda_used: np.ndarray
    scaling: np.ndarray
    converged: np.ndarray = None
    n_iter: np.ndarray = None
    objective_trace: list = field(default_factory=list)

    @property
    def support(self) -> np.ndarray:
        return self.xi != 0


@dataclass(eq=False)
class CvReport:
    lambda_grid: np.ndarray  # (n_lambda, n_targets), each column strictly decreasing
    mse_mean: np.ndarray
    mse_se: np.ndarray
    chosen: np.ndarray
    chosen_index: np.ndarray
    folds: int


@numba.njit(cache=True, nogil=True)
def _cd_gram(G, c, yy, lam, penalized, beta, tol, max_iter, trace):
    p = beta.size
    gb = G @ beta
    n_iter = 0
    converged = False
    while n_iter < max_iter:
        n_iter += 1
        max_delta = 0.0
        for j in range(p):
            gjj = G[j, j]
            old = beta[j]
            if gjj <= 0.0:
                new = 0.0
            else:
                rho = c[j] - gb[j] + gjj * old
                if penalized[j]:
                    if rho > lam:
                        new = (rho - lam) / gjj
                    elif rho < -lam:
                        new = (rho + lam) / gjj
                    else:
                        new = 0.0
                else:
                    new = rho / gjj
            d = new - old
            if d != 0.0:
                beta[j] = new
                for i in range(p):
                    gb[i] += G[i, j] * d
                if abs(d) > max_delta:
                    max_delta = abs(d)
        obj = 0.5 * yy
        for j in range(p):
            obj += 0.5 * beta[j] * gb[j] - c[j] * beta[j]
            if penalized[j]:
                obj += lam * abs(beta[j])
        trace[n_iter - 1] = obj
        if max_delta < tol:
            converged = True
            break
    return n_iter, converged


class _Standardized:
    """Weighted standardization of a library plus its Gram matrix."""

    def __init__(self, theta, weights=None):
        theta = np.asarray(theta, dtype=float)
        m, p = theta.shape
        w = np.ones(m) if weights is None else np.asarray(weights, dtype=float)
        if w.shape != (m,) or np.any(w < 0) or not w.sum() > 0:
            raise ConfigError("weights must be nonnegative with a positive sum, one per row")
        self.theta = theta
        self.w = w
        self.wsum = w.sum()
        ptp = np.ptp(theta, axis=0)
        const = np.flatnonzero((ptp == 0) & (theta[0] != 0))
        self.intercept_col = int(const[0]) if const.size else None
        if self.intercept_col is not None:
            self.mu = (w @ theta) / self.wsum
        else:
            self.mu = np.zeros(p)
        centered = theta - self.mu
        sd = np.sqrt((w @ centered**2) / self.wsum)
        active = sd > 0
        if self.intercept_col is not None:
            active &= ptp > 0
        self.active = active
        self.sd = np.where(active, sd, 1.0)
        self.Z = np.where(active, centered / self.sd, 0.0)
        self.G = np.ascontiguousarray((self.Z * w[:, None]).T @ self.Z / self.wsum)
        self.penalized = active.copy()

    def target_moments(self, targets):
        y = np.asarray(targets, dtype=float)
        if self.intercept_col is not None:
            ybar = (self.w @ y) / self.wsum
        else:
            ybar = np.zeros(y.shape[1])
        yc = y - ybar
        c = (self.Z * self.w[:, None]).T @ yc / self.wsum
        yy = (self.w @ yc**2) / self.wsum
        return ybar, np.ascontiguousarray(c), yy

    def destandardize(self, beta, ybar):
        """Map standardized coefficients (p,) to original units, intercept folded into the constant column."""
        coef = np.where(self.active, beta / self.sd, 0.0)
        if self.intercept_col is not None:
            intercept = ybar - coef @ self.mu
            coef[self.intercept_col] = intercept / self.theta[0, self.intercept_col]
        coef[np.abs(coef) < SNAP] = 0.0
        return coef


def _check_inputs(theta, targets):
    theta = np.asarray(theta, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if targets.ndim == 1:
        targets = targets[:, None]
    if theta.ndim != 2 or theta.shape[0] != targets.shape[0]:
        raise ConfigError(f"row counts differ: theta {theta.shape}, targets {targets.shape}")
    if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(targets))):
        raise ConfigError("theta and targets must be finite")
    return theta, targets


def lambda_max(theta, targets, weights=None) -> np.ndarray:
    """Smallest penalty that zeroes every penalized coefficient, per target."""
    theta, targets = _check_inputs(theta, targets)
    st = _Standardized(theta, weights)
    _, c, _ = st.target_moments(targets)
    c = np.abs(c[st.penalized])
    return c.max(axis=0) if c.size else np.zeros(targets.shape[1])


def _lasso_standardized(st, targets, lam, tol, max_iter, warm=None, trace=False):
    ybar, c, yy = st.target_moments(targets)
    n_t = targets.shape[1]
    betas = np.zeros((st.theta.shape[1], n_t)) if warm is None else warm.copy()
    converged = np.zeros(n_t, dtype=bool)
    n_iter = np.zeros(n_t, dtype=int)
    traces = []
    buf = np.empty(max_iter)
    for k in range(n_t):
        b = np.ascontiguousarray(betas[:, k])
        n_iter[k], converged[k] = _cd_gram(st.G, c[:, k].copy(), yy[k], lam[k], st.penalized, b, tol, max_iter, buf)
        betas[:, k] = b
        if trace:
            traces.append(buf[: n_iter[k]].copy())
    return betas, ybar, converged, n_iter, traces


def lasso_fit(theta, targets, lam, tol=1e-10, max_iter=100_000, weights=None, trace=False) -> SparseCoefficients:
    """LASSO by cyclic coordinate descent.

    Parameters
    ----------
    theta : (m, p) array
    targets : (m, T) array
    lam : float or (T,) array
        Penalty on the standardized scale.
    tol : float
        Stop when the largest standardized coefficient change in a sweep is below ``tol``.
    max_iter : int
        Sweep budget; hitting it is reported through ``converged`` and a warning.
    weights : (m,) array, optional
        Row weights (bootstrap counts).
    trace : bool
        Record the objective after every sweep.
    """
    theta, targets = _check_inputs(theta, targets)
    if not tol > 0:
        raise ConfigError(f"tol must be > 0, got {tol}")
    lam = np.broadcast_to(np.asarray(lam, dtype=float), (targets.shape[1],)).copy()
    if np.any(~np.isfinite(lam)) or np.any(lam < 0):
        raise ConfigError("lambda must be finite and >= 0")
    st = _Standardized(theta, weights)
    betas, ybar, converged, n_iter, traces = _lasso_standardized(st, targets, lam, tol, max_iter, trace=trace)
    if not converged.all():
        warnings.warn(f"lasso did not converge within {max_iter} sweeps", RuntimeWarning, stacklevel=2)
    xi = np.column_stack([st.destandardize(betas[:, k], ybar[k]) for k in range(targets.shape[1])])
    return SparseCoefficients(xi, lam, st.sd.copy(), converged, n_iter, traces)


def _ls_solve(a, b):
    """Least squares via QR; column-pivoted QR when ``a`` is rank deficient."""
    if a.shape[1] == 0:
        return np.zeros(0)
    q, r = np.linalg.qr(a)
    d = np.abs(np.diag(r))
    if a.shape[0] >= a.shape[1] and d.min() > 1e-10 * d.max():
        return scipy.linalg.solve_triangular(r, q.T @ b)
    return scipy.linalg.lstsq(a, b, lapack_driver="gelsy")[0]


def stlsq_fit(theta, targets, threshold=0.05, max_sweeps=20, weights=None) -> SparseCoefficients:
    """Sequentially thresholded least squares on the raw (unscaled) coefficients."""
    theta, targets = _check_inputs(theta, targets)
    if not threshold >= 0:
        raise ConfigError(f"threshold must be >= 0, got {threshold}")
    m, p = theta.shape
    w = np.ones(m) if weights is None else np.asarray(weights, dtype=float)
    sw = np.sqrt(w)
    a = theta * sw[:, None]
    xi = np.zeros((p, targets.shape[1]))
    converged = np.zeros(targets.shape[1], dtype=bool)
    n_iter = np.zeros(targets.shape[1], dtype=int)
    for k in range(targets.shape[1]):
        b = targets[:, k] * sw
        support = np.ones(p, dtype=bool)
        coef = np.zeros(p)
        for sweep in range(1, max_sweeps + 1):
            coef = np.zeros(p)
            coef[support] = _ls_solve(a[:, support], b)
            keep = support & (np.abs(coef) >= threshold)
            n_iter[k] = sweep
            if not keep.any():
                raise EmptyModelError(f"threshold {threshold} eliminated every term for target {k}")
            if np.array_equal(keep, support):
                converged[k] = True
                break
            support = keep
        else:
            coef = np.zeros(p)
            coef[support] = _ls_solve(a[:, support], b)
        coef[~support] = 0.0
        xi[:, k] = coef
    scaling = np.sqrt((w @ (theta - (w @ theta) / w.sum()) ** 2) / w.sum())
    return SparseCoefficients(xi, np.full(targets.shape[1], float(threshold)), scaling, converged, n_iter)


def default_lambda_grid(theta, targets, n_lambda=20, min_ratio=1e-4, weights=None) -> np.ndarray:
    """``n_lambda`` log-spaced penalties from lambda_max down to ``min_ratio * lambda_max``, per target."""
    lmax = lambda_max(theta, targets, weights)
    lmax = np.where(lmax > 0, lmax, 1e-12)
    ratios = np.logspace(0.0, np.log10(min_ratio), n_lambda)
    return ratios[:, None] * lmax[None, :]


def cross_validate(
    theta, targets, lambda_grid=None, folds=5, seed=0, n_lambda=20, min_ratio=1e-4, tol=1e-8, max_iter=20_000
) -> CvReport:
    """Blocked k-fold cross-validation of the LASSO penalty.

    Folds are contiguous time blocks.  The chosen penalty is the largest one
    whose mean validation MSE is within one standard error of the minimum.
    ``seed`` is accepted for interface symmetry; blocked folds
    involve no randomness.
    """
    theta, targets = _check_inputs(theta, targets)
    m, n_t = targets.shape
    if folds < 2:
        raise ConfigError(f"folds must be >= 2, got {folds}")
    if m < folds * 10:
        raise InsufficientDataError(f"{m} rows cannot form {folds} folds of at least 10 rows")
    if lambda_grid is None:
        grid = default_lambda_grid(theta, targets, n_lambda, min_ratio)
    else:
        g = np.asarray(lambda_grid, dtype=float)
        if g.size == 0:
            raise ConfigError("lambda grid is empty")
        if g.ndim == 1:
            g = np.unique(g)[::-1]
            grid = np.repeat(g[:, None], n_t, axis=1)
        else:
            grid = g
        if np.any(grid < 0) or np.any(np.diff(grid, axis=0) >= 0):
            raise ConfigError("lambda grid must be nonnegative and strictly decreasing")
    n_l = grid.shape[0]
    bounds = np.linspace(0, m, folds + 1).astype(int)
    mse = np.zeros((n_l, n_t, folds))
    for f in range(folds):
        val = np.zeros(m, dtype=bool)
        val[bounds[f] : bounds[f + 1]] = True
        st = _Standardized(theta, (~val).astype(float))
        warm = None
        for i in range(n_l):
            betas, ybar, _, _, _ = _lasso_standardized(st, targets, grid[i], tol, max_iter, warm=warm)
            warm = betas
            xi = np.column_stack([st.destandardize(betas[:, k], ybar[k]) for k in range(n_t)])
            resid = targets[val] - theta[val] @ xi
            mse[i, :, f] = np.mean(resid**2, axis=0)
    mean = mse.mean(axis=2)
    se = mse.std(axis=2, ddof=1) / np.sqrt(folds)
    chosen_index = np.zeros(n_t, dtype=int)
    for k in range(n_t):
        best = int(np.argmin(mean[:, k]))
        ok = np.flatnonzero(mean[:, k] <= mean[best, k] + se[best, k])
        chosen_index[k] = int(ok.min())
    chosen = grid[chosen_index, np.arange(n_t)]
    return CvReport(grid, mean, se, chosen, chosen_index, folds)
