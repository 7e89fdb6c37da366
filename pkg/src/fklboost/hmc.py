"""Hamiltonian Monte Carlo with dual-averaging step-size adaptation (baseline sampler)."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError

logger = logging.getLogger(__name__)

# dual-averaging constants (Hoffman & Gelman defaults)
DA_GAMMA = 0.05
DA_T0 = 10.0
DA_KAPPA = 0.75


@dataclass
class HmcConfig:
    step_size: float = 1.0
    leapfrog_steps: int = 10
    burn_in: int = 1000
    adapt_steps: int = 800
    n_samples: int = 2000
    n_chains: int = 1
    init_sigma: float = 0.01
    target_accept: float = 0.75
    adapt: bool = True
    jitter: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        for name in ("leapfrog_steps", "burn_in", "adapt_steps", "n_samples", "n_chains"):
            if int(getattr(self, name)) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not 0 <= self.jitter < 1:
            raise ValueError("jitter must lie in [0, 1)")
        if not 0 < self.target_accept < 1:
            raise ValueError("target_accept must lie in (0, 1)")


@dataclass
class HmcInfo:
    step_sizes: list = field(default_factory=list)
    burn_in_accept: list = field(default_factory=list)
    sample_accept: list = field(default_factory=list)


def leapfrog(theta, rho, step: float, L: int, grad):
    """``L`` leapfrog steps with identity mass matrix.

    On a non-finite intermediate the integration stops and the returned
    arrays contain non-finite values, which callers treat as a rejection.
    """
    theta = np.array(theta, dtype=float)
    rho = np.array(rho, dtype=float)
    if L == 0:
        return theta, rho
    with np.errstate(all="ignore"):
        rho = rho + 0.5 * step * grad(theta)
        for i in range(L):
            theta = theta + step * rho
            g = grad(theta)
            if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(g))):
                return theta, np.full_like(rho, np.nan)
            rho = rho + (step if i < L - 1 else 0.5 * step) * g
    return theta, rho


def hamiltonian(log_density, theta, rho) -> float:
    return float(-log_density(theta) + 0.5 * np.dot(rho, rho))


def _transition(target, theta, lp, step, L, rng, jitter=0.0):
    rho0 = rng.standard_normal(theta.size)
    if jitter:
        # randomized step length breaks periodic trajectories
        step = step * rng.uniform(1.0 - jitter, 1.0 + jitter)
    th, rho = leapfrog(theta, rho0, step, L, target.grad_log_density)
    if not (np.all(np.isfinite(th)) and np.all(np.isfinite(rho))):
        return theta, lp, 0.0
    with np.errstate(all="ignore"):
        lp_new = float(target.log_density(th))
        log_acc = lp_new - 0.5 * rho @ rho - lp + 0.5 * rho0 @ rho0
    if not np.isfinite(log_acc):
        return theta, lp, 0.0
    acc = float(min(1.0, np.exp(min(log_acc, 0.0))))
    if rng.random() < acc:
        return th, lp_new, acc
    return theta, lp, acc


def _chain(target, cfg: HmcConfig, rng, info: HmcInfo) -> np.ndarray:
    d = target.dim
    theta = cfg.init_sigma * rng.standard_normal(d)
    lp = float(target.log_density(theta))
    step = cfg.step_size
    mu = np.log(10.0 * cfg.step_size)
    h_bar, log_eps_bar = 0.0, 0.0
    n_adapt = min(cfg.adapt_steps, cfg.burn_in) if cfg.adapt else 0
    acc_sum = 0.0
    for t in range(1, cfg.burn_in + 1):
        theta, lp, acc = _transition(target, theta, lp, step, cfg.leapfrog_steps, rng, cfg.jitter)
        acc_sum += acc
        if t <= n_adapt:
            eta = 1.0 / (t + DA_T0)
            h_bar = (1.0 - eta) * h_bar + eta * (cfg.target_accept - acc)
            log_eps = mu - np.sqrt(t) / DA_GAMMA * h_bar
            w = t ** (-DA_KAPPA)
            log_eps_bar = w * log_eps + (1.0 - w) * log_eps_bar
            step = float(np.exp(log_eps))
            if t == n_adapt:
                step = float(np.exp(log_eps_bar))
    if cfg.burn_in:
        rate = acc_sum / cfg.burn_in
        info.burn_in_accept.append(rate)
        if rate < 0.01:
            raise NumericalError(f"HMC acceptance rate {rate:.4f} over burn-in is below 0.01 (step size {step:.3g})")
    info.step_sizes.append(step)
    out = np.empty((cfg.n_samples, d))
    acc_sum = 0.0
    for i in range(cfg.n_samples):
        theta, lp, acc = _transition(target, theta, lp, step, cfg.leapfrog_steps, rng, cfg.jitter)
        acc_sum += acc
        out[i] = theta
    info.sample_accept.append(acc_sum / max(cfg.n_samples, 1))
    return out


def hmc_sample(target, cfg: HmcConfig, return_info: bool = False):
    """Draws of shape ``(n_chains, n_samples, d)``; chains use independent seed streams."""
    info = HmcInfo()
    streams = np.random.SeedSequence(cfg.seed).spawn(cfg.n_chains)
    draws = np.stack([_chain(target, cfg, np.random.default_rng(ss), info) for ss in streams]) \
        if cfg.n_chains else np.empty((0, cfg.n_samples, target.dim))
    logger.info("hmc step sizes %s, acceptance %s", info.step_sizes, info.sample_accept)
    return (draws, info) if return_info else draws


def mc_standard_error(samples, batches_per_chain: int = 20) -> np.ndarray:
    """Batch-means standard error of the pooled mean, per coordinate.

    ``samples`` has shape ``(n_chains, n_samples, d)``; trailing draws that
    do not fill a batch are dropped.
    """
    samples = np.asarray(samples, dtype=float)
    c, n, d = samples.shape
    b = n // batches_per_chain
    if b < 1:
        raise ValueError("not enough draws for the requested number of batches")
    means = samples[:, : b * batches_per_chain].reshape(c, batches_per_chain, b, d).mean(axis=2).reshape(-1, d)
    return means.std(axis=0, ddof=1) / np.sqrt(means.shape[0])


def write_samples_csv(path, samples) -> None:
    """One row per draw: ``chain, draw, theta_0, ..., theta_{d-1}``."""
    samples = np.asarray(samples)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["chain", "draw"] + [f"theta_{j}" for j in range(samples.shape[-1])])
        for c, chain in enumerate(samples):
            for i, row in enumerate(chain):
                w.writerow([c, i] + [repr(float(v)) for v in row])
