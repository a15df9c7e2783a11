"""Forecast-quality metrics: calibration error, NRMSE, and R^2.

All three operate on a stack of predictive draws (T, m_pred, K) against
observations (T, K). Point forecasts are predictive means. Calibration error
follows the credible-interval convention: for each component, the median over
100 equally spaced levels alpha of |empirical coverage - alpha|, averaged
over components.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dgfm
from .dgfm import ForecastModel, NetworkSpec
from .smc import ParticleEnsemble
from .streams import stream

_ALPHA_GRID = (np.arange(1, 101) - 0.5) / 100.0


@dataclass
class MetricsReport:
    calibration_error: float
    nrmse: float
    r2: float
    episode_index: int
    evaluation_range: tuple[int, int]


def calibration_error(draws: np.ndarray, observations: np.ndarray) -> float:
    draws = np.asarray(draws, dtype=np.float64)
    observations = np.asarray(observations, dtype=np.float64)
    if draws.ndim != 3 or draws.shape[1] < 2:
        raise ValueError("draws must be (T, m_pred, K) with m_pred >= 2")
    if len(draws) < 2:
        raise ValueError("need at least 2 records")
    lo_q = (1.0 - _ALPHA_GRID) / 2.0
    hi_q = (1.0 + _ALPHA_GRID) / 2.0
    errors = []
    for i in range(draws.shape[2]):
        qs = np.quantile(draws[:, :, i], np.concatenate([lo_q, hi_q]), axis=1)
        lo, hi = qs[:100], qs[100:]                          # (100, T)
        covered = (observations[None, :, i] >= lo) & (observations[None, :, i] <= hi)
        alpha_star = covered.mean(axis=1)
        errors.append(np.median(np.abs(alpha_star - _ALPHA_GRID)))
    return float(np.mean(errors))


def nrmse(point_forecasts: np.ndarray, observations: np.ndarray) -> float:
    """Per-component RMSE / observed range, averaged over components."""
    yhat = np.atleast_2d(np.asarray(point_forecasts, dtype=np.float64).T).T
    y = np.atleast_2d(np.asarray(observations, dtype=np.float64).T).T
    if yhat.shape != y.shape:
        raise ValueError("forecast/observation shape mismatch")
    rng_ = y.max(axis=0) - y.min(axis=0)
    if np.any(rng_ == 0.0):
        raise ValueError("observations are constant in some component (zero range)")
    rmse = np.sqrt(np.mean((yhat - y) ** 2, axis=0))
    return float(np.mean(rmse / rng_))


def r2(point_forecasts: np.ndarray, observations: np.ndarray) -> float:
    """1 - SSE/SST with sums pooled over components (per-component means)."""
    yhat = np.atleast_2d(np.asarray(point_forecasts, dtype=np.float64).T).T
    y = np.atleast_2d(np.asarray(observations, dtype=np.float64).T).T
    if yhat.shape != y.shape:
        raise ValueError("forecast/observation shape mismatch")
    sst = float(((y - y.mean(axis=0)) ** 2).sum())
    if sst == 0.0:
        raise ValueError("observations have zero variance")
    sse = float(((y - yhat) ** 2).sum())
    return 1.0 - sse / sst


def metrics_from_draws(draws: np.ndarray, observations: np.ndarray,
                       episode_index: int = 0,
                       evaluation_range: tuple[int, int] = (0, 0)) -> MetricsReport:
    point = np.asarray(draws).mean(axis=1)
    return MetricsReport(
        calibration_error=calibration_error(draws, observations),
        nrmse=nrmse(point, observations),
        r2=r2(point, observations),
        episode_index=episode_index,
        evaluation_range=evaluation_range,
    )


def posterior_predictive_draws(ensemble: ParticleEnsemble, spec: NetworkSpec,
                               observations: np.ndarray, t_lo: int, t_hi: int,
                               m_pred: int, seed) -> np.ndarray:
    """(T, m_pred, K) posterior-predictive samples for t in [t_lo, t_hi].

    Each draw picks a particle by weight, then one forecast with fresh noise.
    Draws are grouped by particle so each particle's forecasts run as one batch.
    seed may be an int or a key tuple.
    """
    if m_pred < 2:
        raise ValueError("m_pred must be >= 2")
    k = spec.window
    if t_lo < k:
        raise ValueError(f"evaluation range must start at index >= window ({k})")
    indices = np.arange(t_lo, t_hi + 1)
    T = len(indices)
    key = seed if isinstance(seed, tuple) else (seed,)
    rng = stream(*key, 0)
    choice = rng.choice(len(ensemble.particles), size=T * m_pred, p=ensemble.weights)
    noise = rng.standard_normal((T * m_pred, spec.noise_dim))
    histories = np.stack([observations[t - k:t] for t in indices])      # (T, k, K)
    hist_b = np.repeat(histories, m_pred, axis=0)
    draws = np.empty((T * m_pred, spec.obs_dim))
    for pid in np.unique(choice):
        rows = np.flatnonzero(choice == pid)
        model = ForecastModel(spec, ensemble.particles[pid])
        draws[rows] = dgfm.forecast_batch(model, hist_b[rows], noise[rows])
    return draws.reshape(T, m_pred, spec.obs_dim)


def evaluate_posterior(ensemble: ParticleEnsemble, spec: NetworkSpec,
                       observations: np.ndarray, t_lo: int, t_hi: int,
                       m_pred: int, seed) -> MetricsReport:
    draws = posterior_predictive_draws(ensemble, spec, observations, t_lo, t_hi,
                                       m_pred, seed)
    obs = np.asarray(observations)[t_lo:t_hi + 1]
    return metrics_from_draws(draws, obs, ensemble.episode_index, (t_lo, t_hi))
