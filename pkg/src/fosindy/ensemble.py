"""Bootstrap ensembles of sparse fits (E-SINDy) and their aggregation."""

from __future__ import annotations

import logging
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, EnsembleFailedError, FoLocateError
from .library import FeatureLibrary
from .regression import CvReport, _ls_solve, cross_validate, lasso_fit, stlsq_fit
from .signals import MeasurementSet

log = logging.getLogger(__name__)

AGGREGATIONS = ("median_inclusion", "best_by_cv")
SOLVERS = ("lasso", "stlsq")


@dataclass(frozen=True)
class EnsembleConfig:
    """Bootstrap and solver settings.

    ``lam=None`` selects the LASSO penalty per target by blocked
    cross-validation on the full data before bootstrapping.  ``refit``
    re-solves ordinary least squares on each LASSO support so the surviving
    coefficients are not shrunk.  ``bootstrap=False`` fits every model on the
    original rows (useful only with ``n_models=1``).
    """

    n_models: int = 100
    sample_fraction: float = 1.0
    p_min: float = 0.6
    aggregation: str = "median_inclusion"
    solver: str = "lasso"
    lam: float | None = None
    refit: bool = True
    folds: int = 5
    n_lambda: int = 20
    lambda_min_ratio: float = 1e-4
    threshold: float = 0.05
    tol: float = 1e-8
    max_iter: int = 20_000
    bootstrap: bool = True
    rng_seed: int = 0
    n_threads: int | None = None

    def __post_init__(self):
        if int(self.n_models) != self.n_models or self.n_models < 1:
            raise ConfigError(f"n_models must be a positive integer, got {self.n_models}")
        if not 0 < self.sample_fraction <= 1:
            raise ConfigError(f"sample_fraction must lie in (0, 1], got {self.sample_fraction}")
        if not 0 <= self.p_min <= 1:
            raise ConfigError(f"p_min must lie in [0, 1], got {self.p_min}")
        if self.aggregation not in AGGREGATIONS:
            raise ConfigError(f"aggregation must be one of {AGGREGATIONS}, got {self.aggregation!r}")
        if self.solver not in SOLVERS:
            raise ConfigError(f"solver must be one of {SOLVERS}, got {self.solver!r}")
        if self.lam is not None and not self.lam >= 0:
            raise ConfigError(f"lam must be >= 0, got {self.lam}")
        if not self.threshold >= 0:
            raise ConfigError(f"threshold must be >= 0, got {self.threshold}")
        if self.folds < 2:
            raise ConfigError(f"folds must be >= 2, got {self.folds}")


@dataclass(eq=False)
class EnsembleModel:
    coefficient_samples: np.ndarray  # (n_models, p, T); NaN slices for failed fits
    inclusion_prob: np.ndarray
    aggregated_xi: np.ndarray
    terms: tuple
    term_names: list[str]
    target_names: list[str]
    freqs: tuple[float, ...]
    model_mse: np.ndarray
    lambda_used: np.ndarray
    failures: dict = field(default_factory=dict)
    cv: CvReport | None = None
    config: EnsembleConfig | None = None

    @property
    def ok(self) -> np.ndarray:
        return np.array([k not in self.failures for k in range(self.coefficient_samples.shape[0])])


def target_names(r: int) -> list[str]:
    return [f"d_delta_{i + 1}" for i in range(r)] + [f"d_omega_{i + 1}" for i in range(r)]


def resolve_threads(n_threads=None) -> int:
    """Worker count: explicit value, else ``FO_LOCATE_THREADS`` (0 = auto)."""
    if n_threads is None:
        try:
            n_threads = int(os.environ.get("FO_LOCATE_THREADS", "0"))
        except ValueError:
            n_threads = 0
    if n_threads <= 0:
        n_threads = os.cpu_count() or 1
    return max(1, n_threads)


def _refit_support(theta, targets, xi, weights):
    sw = np.sqrt(weights)
    a = theta * sw[:, None]
    out = np.zeros_like(xi)
    for k in range(targets.shape[1]):
        s = xi[:, k] != 0
        if s.any():
            out[s, k] = _ls_solve(a[:, s], targets[:, k] * sw)
    return out


def _fit_once(theta, targets, weights, cfg: EnsembleConfig, lam):
    if cfg.solver == "stlsq":
        return stlsq_fit(theta, targets, cfg.threshold, weights=weights).xi
    fit = lasso_fit(theta, targets, lam, tol=cfg.tol, max_iter=cfg.max_iter, weights=weights)
    if cfg.refit:
        return _refit_support(theta, targets, fit.xi, weights)
    return fit.xi


def _model_rng(seed: int, k: int) -> np.random.Generator:
    # counter-derived stream: independent of the order in which models are fitted
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(k,)))


def bootstrap_weights(m: int, k: int, cfg: EnsembleConfig) -> np.ndarray:
    if not cfg.bootstrap:
        return np.ones(m)
    n_draw = math.ceil(cfg.sample_fraction * m)
    idx = _model_rng(cfg.rng_seed, k).integers(0, m, size=n_draw)
    return np.bincount(idx, minlength=m).astype(float)


def aggregate_median_inclusion(samples: np.ndarray, p_min: float):
    """Inclusion probabilities and the thresholded median over models where an entry is nonzero."""
    nz = samples != 0
    incl = nz.mean(axis=0)
    masked = np.where(nz, samples, np.nan)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)  # all-NaN slices
        med = np.nanmedian(masked, axis=0)
    agg = np.where((incl >= p_min) & nz.any(axis=0), med, 0.0)
    return incl, np.nan_to_num(agg, nan=0.0)


def fit_ensemble(lib: FeatureLibrary, ms: MeasurementSet, cfg: EnsembleConfig | None = None) -> EnsembleModel:
    """Fit ``cfg.n_models`` sparse models on bootstrap resamples of the rows of (theta, Xdot).

    Each model's rows are drawn with replacement from a counter-derived RNG
    stream, so the result does not depend on thread scheduling.  Failed fits
    are recorded and skipped; more than half failing is an error.
    """
    cfg = cfg or EnsembleConfig()
    theta, targets = lib.theta, ms.Xdot
    if theta.shape[0] != targets.shape[0]:
        raise ConfigError(f"library has {theta.shape[0]} rows but measurements have {targets.shape[0]}")
    m, p = theta.shape
    n_t = targets.shape[1]

    cv = None
    lam = None
    if cfg.solver == "lasso":
        if cfg.lam is None:
            cv = cross_validate(
                theta, targets, folds=cfg.folds, n_lambda=cfg.n_lambda, min_ratio=cfg.lambda_min_ratio,
                tol=cfg.tol, max_iter=cfg.max_iter,
            )
            lam = cv.chosen
        else:
            lam = np.full(n_t, float(cfg.lam))
    else:
        lam = np.full(n_t, float(cfg.threshold))

    def job(k):
        w = bootstrap_weights(m, k, cfg)
        try:
            xi = _fit_once(theta, targets, w, cfg, lam)
        except (FoLocateError, np.linalg.LinAlgError, ValueError) as exc:
            return k, None, float("nan"), f"{type(exc).__name__}: {exc}"
        oob = w == 0
        if oob.any():
            mse = float(np.mean((targets[oob] - theta[oob] @ xi) ** 2))
        else:
            mse = float("nan")
        return k, xi, mse, None

    samples = np.full((cfg.n_models, p, n_t), np.nan)
    mse = np.full(cfg.n_models, np.nan)
    failures = {}
    workers = min(resolve_threads(cfg.n_threads), cfg.n_models)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, range(cfg.n_models)))
    else:
        results = [job(k) for k in range(cfg.n_models)]
    for k, xi, err, fail in results:
        if fail is not None:
            failures[k] = fail
            log.warning("bootstrap model %d failed: %s", k, fail)
            continue
        samples[k] = xi
        mse[k] = err
    if len(failures) * 2 > cfg.n_models:
        raise EnsembleFailedError(f"{len(failures)} of {cfg.n_models} bootstrap fits failed")

    good = np.array([k not in failures for k in range(cfg.n_models)])
    incl, agg = aggregate_median_inclusion(samples[good], cfg.p_min)
    if cfg.aggregation == "best_by_cv":
        scores = np.where(good & np.isfinite(mse), mse, np.inf)
        if np.all(np.isinf(scores)):
            raise EnsembleFailedError("best_by_cv needs out-of-bag rows; every bootstrap covered all rows")
        agg = samples[int(np.argmin(scores))].copy()

    return EnsembleModel(
        coefficient_samples=samples,
        inclusion_prob=incl,
        aggregated_xi=agg,
        terms=lib.terms,
        term_names=lib.names,
        target_names=target_names(n_t // 2),
        freqs=tuple(lib.freqs.freqs),
        model_mse=mse,
        lambda_used=np.asarray(lam, dtype=float),
        failures=failures,
        cv=cv,
        config=cfg,
    )


def predict_derivatives(model: EnsembleModel, lib: FeatureLibrary) -> np.ndarray:
    if lib.theta.shape[1] != model.aggregated_xi.shape[0]:
        raise ConfigError(
            f"library has {lib.theta.shape[1]} columns but the model has {model.aggregated_xi.shape[0]} rows"
        )
    return lib.theta @ model.aggregated_xi
