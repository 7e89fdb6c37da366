"""Unnormalized target log-densities with analytic gradients.

Every target evaluates on a single point of shape ``(d,)`` or a batch of
shape ``(n, d)``; the return value drops the trailing axis accordingly.
Targets are immutable after construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

LOG_2PI = np.log(2.0 * np.pi)

GMM20_SEED = 20200611


class Target:
    """Base class: subclasses implement ``_log_density`` and ``_grad`` on 2-D input."""

    dim: int

    def _log_density(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _grad(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _as_batch(self, theta):
        x = np.asarray(theta, dtype=float)
        single = x.ndim == 1
        x = np.atleast_2d(x)
        if x.shape[-1] != self.dim:
            raise ValueError(f"expected points of dimension {self.dim}, got {x.shape[-1]}")
        if not np.all(np.isfinite(x)):
            raise ValueError("target evaluated at a non-finite point")
        return x, single

    def log_density(self, theta):
        x, single = self._as_batch(theta)
        out = self._log_density(x)
        return out[0] if single else out

    def grad_log_density(self, theta):
        x, single = self._as_batch(theta)
        out = self._grad(x)
        return out[0] if single else out

    def __call__(self, theta):
        return self.log_density(theta)


class CauchyTarget(Target):
    """Standard Cauchy in one dimension (normalized)."""

    dim = 1

    def _log_density(self, x):
        t = x[:, 0]
        return -np.log(np.pi) - np.log1p(t * t)

    def _grad(self, x):
        return -2.0 * x / (1.0 + x * x)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_cauchy((n, 1))


def cauchy_log_density(theta) -> float:
    return float(CauchyTarget().log_density(np.atleast_1d(theta)))


class GaussianTarget(Target):
    """Axis-aligned Gaussian; mostly a test fixture with exact moments."""

    def __init__(self, mean, std):
        self.mean = np.atleast_1d(np.asarray(mean, dtype=float))
        self.std = np.broadcast_to(np.asarray(std, dtype=float), self.mean.shape).copy()
        if np.any(self.std <= 0):
            raise ValueError("std must be positive")
        self.dim = self.mean.size
        self._norm = -0.5 * self.dim * LOG_2PI - np.sum(np.log(self.std))

    def _log_density(self, x):
        z = (x - self.mean) / self.std
        return self._norm - 0.5 * np.sum(z * z, axis=1)

    def _grad(self, x):
        return -(x - self.mean) / self.std**2

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.mean + self.std * rng.standard_normal((n, self.dim))


class GaussianMixtureTarget(Target):
    """Mixture of axis-aligned Gaussians, evaluated by log-sum-exp.

    Args:
        means: component means, shape ``(k, d)``.
        stds: per-component std, shape ``(k,)`` (isotropic) or ``(k, d)``.
        weights: simplex vector of length ``k``.
    """

    def __init__(self, means, stds, weights):
        self.means = np.atleast_2d(np.asarray(means, dtype=float))
        k, d = self.means.shape
        stds = np.asarray(stds, dtype=float)
        if stds.ndim <= 1:
            stds = np.broadcast_to(stds.reshape(-1, 1) if stds.ndim == 1 else stds, (k, d))
        self.stds = np.array(stds, dtype=float)
        self.weights = np.asarray(weights, dtype=float)
        if self.weights.shape != (k,):
            raise ValueError("weights must have one entry per component")
        if abs(self.weights.sum() - 1.0) > 1e-12 or np.any(self.weights < 0):
            raise ValueError("weights must lie on the simplex")
        if np.any(self.stds <= 0):
            raise ValueError("component scales must be positive")
        self.dim = d
        with np.errstate(divide="ignore"):
            self._log_w = np.log(self.weights)
        self._norm = -0.5 * d * LOG_2PI - np.sum(np.log(self.stds), axis=1)

    def _component_logs(self, x):
        z = (x[:, None, :] - self.means[None]) / self.stds[None]
        return self._log_w + self._norm - 0.5 * np.sum(z * z, axis=2), z

    def _log_density(self, x):
        logs, _ = self._component_logs(x)
        return logsumexp(logs, axis=1)

    def _grad(self, x):
        logs, z = self._component_logs(x)
        resp = np.exp(logs - logsumexp(logs, axis=1, keepdims=True))
        return -np.einsum("nk,nkd->nd", resp, z / self.stds[None])

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        idx = rng.choice(len(self.weights), size=n, p=self.weights)
        return self.means[idx] + self.stds[idx] * rng.standard_normal((n, self.dim))

    @property
    def true_mean(self) -> np.ndarray:
        return self.weights @ self.means

    @property
    def true_cov_diag(self) -> np.ndarray:
        second = self.weights @ (self.stds**2 + self.means**2)
        return second - self.true_mean**2


@dataclass(frozen=True)
class Gmm20Spec:
    means: np.ndarray
    scale: float
    weights: np.ndarray
    seed: int

    def __post_init__(self):
        if self.means.shape != (20, 2):
            raise ValueError("GMM-20 needs 20 two-dimensional means")
        if abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must sum to one")
        if self.scale <= 0:
            raise ValueError("scale must be positive")


def make_gmm20_spec(seed: int = GMM20_SEED, scale: float = 1.0, box: float = 10.0) -> Gmm20Spec:
    """20 means uniform on ``[0, box]^2``, shared isotropic scale, equal weights."""
    rng = np.random.default_rng(seed)
    means = rng.uniform(0.0, box, size=(20, 2))
    return Gmm20Spec(means=means, scale=float(scale), weights=np.full(20, 1.0 / 20), seed=seed)


def gmm20_target(spec: Gmm20Spec | None = None) -> GaussianMixtureTarget:
    spec = spec or make_gmm20_spec()
    return GaussianMixtureTarget(spec.means, np.full(20, spec.scale), spec.weights)


def gmm20_log_density(theta, spec: Gmm20Spec | None = None):
    return gmm20_target(spec).log_density(theta)


def bimodal_target(separation: float = 4.0, weights=(0.5, 0.5)) -> GaussianMixtureTarget:
    """Two unit Gaussians at ``-separation`` and ``+separation`` in 1-D."""
    return GaussianMixtureTarget([[-separation], [separation]], [1.0, 1.0], np.asarray(weights))


class ShiftedTarget(Target):
    """Adds a constant to another target's log-density."""

    def __init__(self, base: Target, shift: float):
        self.base = base
        self.shift = float(shift)
        self.dim = base.dim

    def _log_density(self, x):
        return self.base._log_density(x) + self.shift

    def _grad(self, x):
        return self.base._grad(x)
