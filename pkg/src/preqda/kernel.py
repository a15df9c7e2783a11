"""Preconditioned, thermostat-augmented stochastic-gradient kernel.

One step performs, in order: an RMSprop-style update of the squared-gradient
average v and the preconditioner g = 1/sqrt(lambda + sqrt(v)); a half drift of
theta; a thermostat update; momentum dissipation, gradient+noise kick (the
noise scale uses the previous step's preconditioner), and a second
dissipation; a second thermostat update; and the closing half drift. There is
no accept-reject correction: every proposal is kept.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class KernelConfig:
    eta: float = 1e-6
    sigma: float = 0.99
    lam: float = 1e-8
    alpha0: float = 1e-2
    T_scale: float = 1.0

    def __post_init__(self):
        if self.eta <= 0 or self.lam <= 0:
            raise ValueError("eta and lam must be positive")
        if not 0.0 < self.sigma < 1.0:
            raise ValueError("sigma must lie in (0, 1)")
        if self.T_scale <= 0:
            raise ValueError("T_scale must be positive")


@dataclass
class KernelState:
    theta: np.ndarray
    u: np.ndarray
    alpha: np.ndarray
    v: np.ndarray
    g_prev: np.ndarray


def kernel_init(theta: np.ndarray, cfg: KernelConfig,
                rng: np.random.Generator) -> KernelState:
    theta = np.asarray(theta, dtype=np.float64)
    p = theta.size
    u = np.sqrt(cfg.eta) * rng.standard_normal(p)
    return KernelState(
        theta=theta.copy(),
        u=u,
        alpha=np.full(p, cfg.alpha0),
        v=np.zeros(p),
        g_prev=np.full(p, 1.0 / np.sqrt(cfg.lam)),
    )


def kernel_step(state: KernelState, grad: np.ndarray, cfg: KernelConfig,
                rng: np.random.Generator) -> KernelState:
    grad = np.asarray(grad, dtype=np.float64)
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError("non-finite gradient passed to kernel_step")
    eta = cfg.eta
    v = cfg.sigma * state.v + (1.0 - cfg.sigma) / cfg.T_scale ** 2 * grad * grad
    g = 1.0 / np.sqrt(cfg.lam + np.sqrt(v))
    theta = state.theta + 0.5 * g * state.u
    alpha = state.alpha + 0.5 * (state.u * state.u - eta)
    u = np.exp(-alpha / 2.0) * state.u
    zeta = rng.standard_normal(u.size)
    u = u - eta * g * grad + np.sqrt(2.0 * state.g_prev * eta ** 1.5) * zeta
    u = np.exp(-alpha / 2.0) * u
    alpha = alpha + 0.5 * (u * u - eta)
    theta = theta + 0.5 * g * u
    new = KernelState(theta=theta, u=u, alpha=alpha, v=v, g_prev=g)
    for name, arr in (("theta", theta), ("u", u), ("alpha", alpha)):
        if not np.all(np.isfinite(arr)):
            bad = int(np.flatnonzero(~np.isfinite(arr))[0])
            raise FloatingPointError(f"non-finite {name}[{bad}] after kernel step")
    return new


def run_chain(theta_start: np.ndarray, grad_oracle, steps: int, cfg: KernelConfig,
              rng: np.random.Generator) -> np.ndarray:
    """Run `steps` kernel updates; return the start plus every visited theta.

    grad_oracle(theta) must return the stochastic gradient of the potential.
    Output shape: (steps + 1, p).
    """
    if steps < 0:
        raise ValueError("steps must be >= 0")
    state = kernel_init(theta_start, cfg, rng)
    visited = np.empty((steps + 1, state.theta.size))
    visited[0] = state.theta
    for s in range(steps):
        try:
            grad = grad_oracle(state.theta)
            state = kernel_step(state, grad, cfg, rng)
        except FloatingPointError as exc:
            raise FloatingPointError(f"kernel chain failed at step {s + 1}: {exc}") from exc
        visited[s + 1] = state.theta
    return visited
