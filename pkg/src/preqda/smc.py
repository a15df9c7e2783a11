"""Episodic waste-free SMC over network parameters.

After each episode of tau observations, the particle ensemble is moved from
the previous cumulative-loss posterior to the new one through a geometric
bridge whose temperatures are chosen adaptively so the conditional effective
sample size stays at a fixed threshold. At every temperature step, M starting
particles are resampled and each is run through a P-step gradient-kernel
chain; all M*P visited states are pooled as the new, equally weighted
ensemble (N = M*P).

The loss model supplies per-particle episode losses and weighted stochastic
gradients; both are evaluated under frozen noise keys so that, within one
weighting step, all particles see identical noise (common random numbers).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterator, Protocol

import numpy as np

from .kernel import KernelConfig, run_chain
from .streams import stream

# sub-key tags keeping the per-purpose streams disjoint
_TAG_NOISE, _TAG_RESAMPLE, _TAG_CHAIN, _TAG_GRAD, _TAG_INIT = 0, 1, 2, 3, 4


@dataclass(frozen=True)
class PriorSpec:
    family: str = "gaussian"       # "gaussian" or "student_t"
    dof: int = 3
    dim: int = 1

    def __post_init__(self):
        if self.family not in ("gaussian", "student_t"):
            raise ValueError(f"unknown prior family: {self.family}")
        if self.family == "student_t" and self.dof not in (3, 5):
            raise ValueError("student_t prior supports dof 3 or 5")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")


def prior_sample(spec: PriorSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    if spec.family == "gaussian":
        return rng.standard_normal((n, spec.dim))
    return rng.standard_t(spec.dof, size=(n, spec.dim))


def prior_logpdf(spec: PriorSpec, theta: np.ndarray) -> float:
    theta = np.asarray(theta, dtype=np.float64)
    if spec.family == "gaussian":
        return float(-0.5 * theta @ theta - 0.5 * theta.size * math.log(2 * math.pi))
    nu = spec.dof
    const = (math.lgamma((nu + 1) / 2) - math.lgamma(nu / 2)
             - 0.5 * math.log(nu * math.pi))
    return float(theta.size * const
                 - (nu + 1) / 2 * np.log1p(theta * theta / nu).sum())


def prior_grad_neglogpdf(spec: PriorSpec, theta: np.ndarray) -> np.ndarray:
    """Gradient of -log prior, the prior's contribution to the potential."""
    if spec.family == "gaussian":
        return theta
    nu = spec.dof
    return (nu + 1) * theta / (nu + theta * theta)


@dataclass
class ParticleEnsemble:
    particles: np.ndarray      # (N, p)
    log_weights: np.ndarray    # (N,), normalized: logsumexp == 0
    episode_index: int = 0

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    @staticmethod
    def equal_weighted(particles: np.ndarray, episode_index: int = 0) -> "ParticleEnsemble":
        n = len(particles)
        return ParticleEnsemble(particles, np.full(n, -math.log(n)), episode_index)


@dataclass
class TemperingRecord:
    alphas: list[float] = field(default_factory=list)
    cess_values: list[float] = field(default_factory=list)


@dataclass(frozen=True)
class SMCConfig:
    n_particles: int = 150
    n_chains: int = 30
    chain_len: int = 5
    tau: int = 100
    cess_threshold: float = 75.0
    prior: PriorSpec = PriorSpec(family="gaussian", dim=1)
    kernel: KernelConfig = KernelConfig()
    grad_batch: int = 100

    def __post_init__(self):
        if self.n_particles != self.n_chains * self.chain_len:
            raise ValueError("n_particles must equal n_chains * chain_len")
        if not 0 < self.cess_threshold <= self.n_particles:
            raise ValueError("cess_threshold must lie in (0, N]")
        if self.tau < 1 or self.grad_batch < 1:
            raise ValueError("tau and grad_batch must be >= 1")


class LossModel(Protocol):
    dim: int

    def losses(self, thetas: np.ndarray, indices, noise_key) -> np.ndarray: ...

    def gradient(self, theta: np.ndarray, indices, weights, noise_key) -> np.ndarray: ...


def _logsumexp(x: np.ndarray) -> float:
    hi = np.max(x)
    if not np.isfinite(hi):
        return float(hi)
    return float(hi + np.log(np.exp(x - hi).sum()))


def ess(log_weights: np.ndarray) -> float:
    lw = np.asarray(log_weights, dtype=np.float64)
    norm = _logsumexp(lw)
    if not np.isfinite(norm):
        raise ValueError("all weights vanish")
    w = np.exp(lw - norm)
    return float(1.0 / np.sum(w * w))

def cess(norm_weights: np.ndarray, incr_log_weights: np.ndarray) -> float:
    """N * (sum W v)^2 / (sum W v^2) with v the shifted incremental weights."""
    W = np.asarray(norm_weights, dtype=np.float64)
    v = np.exp(incr_log_weights - np.max(incr_log_weights))
    num = float(W @ v) ** 2
    den = float(W @ (v * v))
    return len(W) * num / den


def find_next_temperature(norm_weights: np.ndarray, episode_losses: np.ndarray,
                          alpha_prev: float, threshold: float,
                          tol: float = 1e-6) -> float:
    """Largest alpha in (alpha_prev, 1] keeping the CESS at the threshold."""
    if alpha_prev >= 1.0:
        raise ValueError("alpha_prev must be < 1")
    losses = np.asarray(episode_losses, dtype=np.float64)
    if not np.all(np.isfinite(losses)):
        raise ValueError("non-finite episode losses")

    def cess_at(alpha: float) -> float:
        return cess(norm_weights, -(alpha - alpha_prev) * losses)

    if cess_at(1.0) >= threshold:
        return 1.0
    lo, hi = alpha_prev, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if cess_at(mid) >= threshold:
            lo = mid
        else:
            hi = mid
    return min(1.0, max(lo, alpha_prev + tol))


def reweight(ensemble: ParticleEnsemble, episode_losses: np.ndarray,
             delta_alpha: float, gamma: float = 1.0) -> tuple[ParticleEnsemble, float]:
    """Apply the tempered-potential increment; returns (ensemble, log-normalizer)."""
    if delta_alpha < 0:
        raise ValueError("delta_alpha must be >= 0")
    lw = ensemble.log_weights - gamma * delta_alpha * np.asarray(episode_losses)
    norm = _logsumexp(lw)
    if not np.isfinite(norm):
        raise ValueError("all particle weights vanished in reweight")
    return ParticleEnsemble(ensemble.particles, lw - norm, ensemble.episode_index), norm


def systematic_resample(weights: np.ndarray, count: int,
                        rng: np.random.Generator) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    w = w / w.sum()
    positions = (rng.uniform() + np.arange(count)) / count
    cum = np.cumsum(w)
    cum[-1] = 1.0
    return np.searchsorted(cum, positions, side="right").clip(0, len(w) - 1)


def wastefree_move(ensemble: ParticleEnsemble, grad_potential: Callable,
                   n_chains: int, chain_len: int, kernel_cfg: KernelConfig,
                   key: tuple[int, ...]) -> ParticleEnsemble:
    """Resample n_chains starters, run each chain, pool all visited states.

    grad_potential(theta, key) -> gradient of the tempered potential; the key
    makes each call's subsampling/noise reproducible. The pooled ensemble has
    n_chains * chain_len equally weighted particles.
    """
    starts = systematic_resample(ensemble.weights, n_chains, stream(*key, _TAG_RESAMPLE))
    pooled = np.empty((n_chains * chain_len, ensemble.particles.shape[1]))
    for c in range(n_chains):
        counter = iter(range(10 ** 9))

        def oracle(theta, _c=c, _counter=counter):
            return grad_potential(theta, (*key, _TAG_GRAD, _c, next(_counter)))

        try:
            visited = run_chain(ensemble.particles[starts[c]], oracle,
                                chain_len - 1, kernel_cfg, stream(*key, _TAG_CHAIN, c))
        except FloatingPointError as exc:
            raise FloatingPointError(f"waste-free move failed in chain {c}: {exc}") from exc
        pooled[c * chain_len:(c + 1) * chain_len] = visited
    return ParticleEnsemble.equal_weighted(pooled, ensemble.episode_index)


@dataclass
class EpisodeResult:
    episode_index: int
    ensemble: ParticleEnsemble
    record: TemperingRecord


def initial_ensemble(cfg: SMCConfig, seed: int) -> ParticleEnsemble:
    particles = prior_sample(cfg.prior, cfg.n_particles, stream(seed, 0, _TAG_INIT))
    return ParticleEnsemble.equal_weighted(particles, episode_index=0)


def run_assimilation(cfg: SMCConfig, loss: LossModel, train_len: int, seed: int,
                     window: int = 0,
                     start: ParticleEnsemble | None = None,
                     n_episodes: int | None = None) -> Iterator[EpisodeResult]:
    """Yield one EpisodeResult per assimilated episode.

    Episode e (1-based) covers observation indices [(e-1)*tau, e*tau); indices
    below `window` carry no scoreable forecast and are skipped. Passing a
    checkpointed ensemble as `start` resumes after its episode_index; the
    keyed streams make the continuation identical to an uninterrupted run.
    """
    if cfg.prior.dim != loss.dim:
        raise ValueError("prior dimension must match the loss model's parameter count")
    ensemble = start if start is not None else initial_ensemble(cfg, seed)
    total_episodes = train_len // cfg.tau
    if n_episodes is not None:
        total_episodes = min(total_episodes, ensemble.episode_index + n_episodes)
    for e in range(ensemble.episode_index + 1, total_episodes + 1):
        episode_indices = np.arange(max((e - 1) * cfg.tau, window), e * cfg.tau)
        hist_indices = np.arange(window, (e - 1) * cfg.tau)
        t_scale = float(max(1, len(hist_indices) + len(episode_indices)))
        kernel_cfg = replace(cfg.kernel, T_scale=t_scale)
        record = TemperingRecord()
        alpha = 0.0
        step = 0
        while alpha < 1.0:
            noise_key = (seed, e, step, _TAG_NOISE)
            delta_losses = loss.losses(ensemble.particles, episode_indices, noise_key)
            if not np.all(np.isfinite(delta_losses)):
                raise FloatingPointError(
                    f"non-finite episode loss in episode {e}, tempering step {step}")
            alpha_new = find_next_temperature(ensemble.weights, delta_losses,
                                              alpha, cfg.cess_threshold)
            record.alphas.append(alpha_new)
            record.cess_values.append(
                cess(ensemble.weights, -(alpha_new - alpha) * delta_losses))
            ensemble, _ = reweight(ensemble, delta_losses, alpha_new - alpha)

            def grad_potential(theta, key, _alpha=alpha_new, _e=e):
                return _tempered_gradient(theta, key, cfg, loss, hist_indices,
                                          episode_indices, _alpha)

            ensemble = wastefree_move(ensemble, grad_potential, cfg.n_chains,
                                      cfg.chain_len, kernel_cfg, (seed, e, step))
            alpha = alpha_new
            step += 1
        ensemble.episode_index = e
        yield EpisodeResult(e, ensemble, record)


def _tempered_gradient(theta, key, cfg: SMCConfig, loss: LossModel,
                       hist_indices, episode_indices, alpha: float) -> np.ndarray:
    """Stochastic gradient of -log prior + L_history + alpha * L_episode.

    The history term is estimated by uniform subsampling of grad_batch past
    indices scaled back to the full history length.
    """
    grad = prior_grad_neglogpdf(cfg.prior, theta)
    indices = np.asarray(episode_indices)
    weights = np.full(len(indices), alpha)
    if len(hist_indices) > 0:
        batch = min(cfg.grad_batch, len(hist_indices))
        sub = stream(*key, 0).choice(hist_indices, size=batch, replace=False)
        indices = np.concatenate([sub, indices])
        weights = np.concatenate([np.full(batch, len(hist_indices) / batch), weights])
    if len(indices):
        grad = grad + loss.gradient(theta, indices, weights, (*key, 1))
    return grad
