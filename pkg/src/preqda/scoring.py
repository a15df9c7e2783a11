"""Energy score, its unbiased Monte Carlo estimator, and the cumulative
one-step-ahead (prequential) loss with its pathwise stochastic gradient.

The estimator for an ensemble x_1..x_m against observation y is

    (2/m) sum_j ||x_j - y||^beta  -  (1/(m(m-1))) sum_{j != k} ||x_j - x_k||^beta,

an unbiased estimate of the population energy score. Gradients w.r.t. the
network parameters use the pathwise identity: the noise draws are held fixed
and the estimator is differentiated through the forecast network by the tape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dgfm
from .autodiff import NonFiniteValueError, forward_backward
from .dgfm import ForecastModel, NetworkSpec
from .streams import stream


@dataclass(frozen=True)
class ScoreConfig:
    beta: float = 1.0
    m: int = 10
    gamma: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.beta < 2.0:
            raise ValueError("beta must lie in (0, 2)")
        if self.m < 2:
            raise ValueError("m must be >= 2")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")


def energy_score_estimate(samples: np.ndarray, y: np.ndarray, beta: float = 1.0) -> float:
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim == 1:
        samples = samples[:, None]
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    m = samples.shape[0]
    if m < 2:
        raise ValueError("energy score estimator needs m >= 2 samples")
    if not (np.all(np.isfinite(samples)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite input to energy_score_estimate")
    t1 = np.linalg.norm(samples - y[None, :], axis=1) ** beta
    d = np.linalg.norm(samples[:, None, :] - samples[None, :, :], axis=2) ** beta
    return float(2.0 / m * t1.sum() - d.sum() / (m * (m - 1)))


def _batch_scores(out: np.ndarray, y: np.ndarray, n: int, m: int, beta: float) -> np.ndarray:
    """Per-index energy scores for a flattened (n*m, d) forecast batch."""
    x = out.reshape(n, m, -1)
    t1 = np.linalg.norm(x - y[:, None, :], axis=2)
    d = np.linalg.norm(x[:, :, None, :] - x[:, None, :, :], axis=3)
    if beta != 1.0:
        t1 = t1 ** beta
        d = np.where(d > 0.0, d, 0.0) ** beta
    return 2.0 / m * t1.sum(axis=1) - d.sum(axis=(1, 2)) / (m * (m - 1))


def _frozen_noise(noise_key: tuple[int, ...], t: int, m: int, noise_dim: int) -> np.ndarray:
    return stream(*noise_key, t).standard_normal((m, noise_dim))


def _assemble_batch(spec: NetworkSpec, observations: np.ndarray, indices, m: int,
                    noise_key: tuple[int, ...]):
    k = spec.window
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size and indices.min() < k:
        raise ValueError(f"indices must be >= window ({k})")
    if indices.size and indices.max() >= len(observations):
        raise ValueError("index beyond end of series")
    histories = np.stack([observations[t - k:t] for t in indices])
    hist_b = np.repeat(histories, m, axis=0)
    noise = np.concatenate([_frozen_noise(noise_key, int(t), m, spec.noise_dim)
                            for t in indices])
    y = observations[indices]
    return hist_b, noise, y


def scores_at_indices(model: ForecastModel, observations: np.ndarray, indices,
                      cfg: ScoreConfig, noise_key: tuple[int, ...]) -> np.ndarray:
    """Energy-score estimates at the given time indices with frozen noise."""
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size == 0:
        return np.zeros(0)
    hist_b, noise, y = _assemble_batch(model.spec, observations, indices, cfg.m, noise_key)
    out = dgfm.forecast_batch(model, hist_b, noise)
    return _batch_scores(out, y, indices.size, cfg.m, cfg.beta)


def prequential_loss(model: ForecastModel, observations: np.ndarray,
                     t_lo: int, t_hi: int, cfg: ScoreConfig,
                     noise_key: tuple[int, ...]) -> float:
    """gamma * sum of per-index scores over the inclusive range [t_lo, t_hi]."""
    if t_lo > t_hi:
        return 0.0
    indices = np.arange(t_lo, t_hi + 1)
    return cfg.gamma * float(scores_at_indices(model, observations, indices, cfg, noise_key).sum())


def loss_gradient(model: ForecastModel, observations: np.ndarray, indices,
                  weights, cfg: ScoreConfig,
                  noise_key: tuple[int, ...]) -> tuple[float, np.ndarray]:
    """Weighted pathwise gradient of the score sum: (value, d value / d params).

    value = gamma * sum_i weights[i] * score(t_i); the same frozen noise keys
    as scores_at_indices are used, so the gradient differentiates exactly the
    quantity that reweighting sees.
    """
    indices = np.asarray(indices, dtype=np.int64)
    weights = np.asarray(weights, dtype=np.float64)
    if indices.size == 0 or not np.any(weights):
        return 0.0, np.zeros_like(model.params)
    spec, m = model.spec, cfg.m
    hist_b, noise, y = _assemble_batch(spec, observations, indices, m, noise_key)
    n = indices.size
    y_b = np.repeat(y, m, axis=0)
    w1 = np.repeat(weights, m) * (cfg.gamma * 2.0 / m)
    jj, kk = np.triu_indices(m, 1)
    base = np.arange(n)[:, None] * m
    idx_a = (base + jj[None, :]).ravel()
    idx_b = (base + kk[None, :]).ravel()
    w2 = np.repeat(weights, jj.size) * (-cfg.gamma * 2.0 / (m * (m - 1)))

    def program(tape, theta):
        out = dgfm.tape_forecast(tape, theta, spec, hist_b, noise)
        term1 = (out - tape.constant(y_b)).row_norm().abs_power(cfg.beta).weighted_sum(w1)
        diffs = out.gather_rows(idx_a) - out.gather_rows(idx_b)
        term2 = diffs.row_norm().abs_power(cfg.beta).weighted_sum(w2)
        return term1 + term2

    try:
        value, grad = forward_backward(program, model.params)
    except NonFiniteValueError:
        _locate_bad_index(model, observations, indices, weights, cfg, noise_key)
        raise
    if not np.all(np.isfinite(grad)):
        _locate_bad_index(model, observations, indices, weights, cfg, noise_key)
        raise NonFiniteValueError("non-finite gradient entry (no single index identified)")
    return value, grad


def _locate_bad_index(model, observations, indices, weights, cfg, noise_key):
    for t, w in zip(indices, weights):
        try:
            _, g = loss_gradient(model, observations, np.asarray([t]), np.asarray([w]),
                                 cfg, noise_key)
        except NonFiniteValueError:
            raise NonFiniteValueError(f"non-finite gradient at time index {int(t)}") from None
        if not np.all(np.isfinite(g)):
            raise NonFiniteValueError(f"non-finite gradient at time index {int(t)}")


class EnergyScoreLoss:
    """Loss-model adapter binding a network spec and an observation series.

    Implements the interface the SMC sampler drives: per-particle episode
    losses and a weighted stochastic gradient, both under frozen noise keys.
    """

    def __init__(self, spec: NetworkSpec, observations: np.ndarray, cfg: ScoreConfig):
        self.spec = spec
        self.observations = np.asarray(observations, dtype=np.float64)
        self.cfg = cfg
        self.dim = dgfm.param_count(spec)

    def losses(self, thetas: np.ndarray, indices, noise_key) -> np.ndarray:
        out = np.empty(len(thetas))
        for i, theta in enumerate(thetas):
            model = ForecastModel(self.spec, theta)
            out[i] = self.cfg.gamma * scores_at_indices(
                model, self.observations, indices, self.cfg, noise_key).sum()
        return out

    def gradient(self, theta: np.ndarray, indices, weights, noise_key) -> np.ndarray:
        model = ForecastModel(self.spec, theta)
        _, grad = loss_gradient(model, self.observations, indices, weights,
                                self.cfg, noise_key)
        return grad
