"""Bayesian linear regression targets and CSV dataset handling.

Parameter layouts (bias is the last feature column, all ones):

* Gaussian prior: ``theta = (w[0..D), log alpha, log tau)``
* heavy-tailed prior: ``theta = (w[0..D), log tau)``
* conjugate (alpha, tau fixed): ``theta = w``
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve
from scipy.special import gammaln

from .errors import ConfigError
from .targets import LOG_2PI, Target

logger = logging.getLogger(__name__)

GAMMA_SHAPE = 1.0
GAMMA_RATE = 0.1
LOG_CLAMP = 30.0
HEAVY_NU = 2.0


@dataclass(frozen=True)
class BlrDataset:
    """Standardized features with an appended bias column, and targets.

    ``y_scale`` is the train-split std of the raw targets; predictive
    densities are reported on the raw scale by subtracting ``log(y_scale)``.
    """

    X: np.ndarray
    y: np.ndarray
    y_scale: float = 1.0

    def __post_init__(self):
        if self.X.ndim != 2 or self.y.ndim != 1 or self.X.shape[0] != self.y.shape[0]:
            raise ValueError("X must be (N, D) and y must be (N,)")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.y))):
            raise ValueError("dataset contains NaN or Inf")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def n_weights(self) -> int:
        return self.X.shape[1]


def read_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a header-first CSV; the last column is the response."""
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise ConfigError(f"cannot open dataset {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ConfigError(f"{path}: empty file") from None
        if len(header) < 2:
            raise ConfigError(f"{path}: need at least one feature column and a response")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ConfigError(f"{path}: row {lineno} has {len(row)} columns, expected {len(header)}")
            vals = []
            for col, cell in zip(header, row):
                try:
                    v = float(cell)
                except ValueError:
                    raise ConfigError(f"{path}: row {lineno}, column {col!r}: cannot parse {cell!r}") from None
                if not np.isfinite(v):
                    raise ConfigError(f"{path}: row {lineno}, column {col!r}: non-finite value")
                vals.append(v)
            rows.append(vals)
    if not rows:
        raise ConfigError(f"{path}: no data rows")
    data = np.asarray(rows)
    return data[:, :-1], data[:, -1]


def split_indices(n: int, seed: int, test_fraction: float = 0.1) -> tuple[np.ndarray, np.ndarray]:
    perm = np.random.default_rng(seed).permutation(n)
    n_test = max(1, int(round(test_fraction * n)))
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


def standardize_split(X, y, train_idx, test_idx) -> tuple[BlrDataset, BlrDataset]:
    """z-score using train statistics, then append the bias column to both splits."""
    Xtr, ytr = X[train_idx], y[train_idx]
    mx = Xtr.mean(axis=0)
    sx = Xtr.std(axis=0)
    sx[sx == 0] = 1.0
    my, sy = ytr.mean(), ytr.std()
    if sy == 0:
        sy = 1.0

    def build(idx):
        Z = (X[idx] - mx) / sx
        Z = np.hstack([Z, np.ones((len(idx), 1))])
        return BlrDataset(Z, (y[idx] - my) / sy, float(sy))

    return build(train_idx), build(test_idx)


def load_dataset(path) -> BlrDataset:
    """Whole file, standardized on itself (no split)."""
    X, y = read_csv(path)
    idx = np.arange(len(y))
    return standardize_split(X, y, idx, idx)[0]


def synthetic_linear(n: int = 200, d: int = 5, noise: float = 0.5, seed: int = 0):
    """Raw (X, y, w_true) from ``y = X w + b + noise * N(0, 1)``."""
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    w = rng.standard_normal(d + 1)
    y = X @ w[:-1] + w[-1] + noise * rng.standard_normal(n)
    return X, y, w


def raw_dataset(X, y) -> BlrDataset:
    """Append the bias column without standardizing."""
    X = np.asarray(X, dtype=float)
    return BlrDataset(np.hstack([X, np.ones((X.shape[0], 1))]), np.asarray(y, dtype=float))


def log_gamma_density(x, log_x, shape=GAMMA_SHAPE, rate=GAMMA_RATE):
    return shape * np.log(rate) - gammaln(shape) + (shape - 1.0) * log_x - rate * x


class _BlrBase(Target):
    def __init__(self, data: BlrDataset):
        self.data = data
        X, y = data.X, data.y
        self._xtx = X.T @ X
        self._xty = X.T @ y
        self._yty = float(y @ y)
        self._n = X.shape[0]
        self._D = X.shape[1]

    def _lik(self, w, tau, log_tau):
        # sum of squared residuals via sufficient statistics
        xtxw = w @ self._xtx
        sse = self._yty - 2.0 * (w @ self._xty) + np.sum(w * xtxw, axis=1)
        sse = np.maximum(sse, 0.0)
        ll = 0.5 * self._n * (log_tau - LOG_2PI) - 0.5 * tau * sse
        grad_w = tau[:, None] * (self._xty - xtxw)
        return ll, grad_w, sse

    @staticmethod
    def _clamp(xi):
        clamped = np.clip(xi, -LOG_CLAMP, LOG_CLAMP)
        if np.any(clamped != xi):
            logger.debug("log-hyperparameter clamped to [-%g, %g]", LOG_CLAMP, LOG_CLAMP)
        return clamped

    def predictive_logpdf(self, X, y, thetas) -> np.ndarray:
        """``log p(y_n | x_n, theta_s)`` on the raw y scale, shape ``(S, N)``."""
        thetas = np.atleast_2d(thetas)
        w, tau, log_tau = self._unpack_noise(thetas)
        mu = w @ np.asarray(X).T
        r = np.asarray(y)[None, :] - mu
        out = 0.5 * (log_tau[:, None] - LOG_2PI) - 0.5 * tau[:, None] * r * r
        return out - np.log(self.data.y_scale)

    def _unpack_noise(self, thetas):
        raise NotImplementedError


class BlrGaussianTarget(_BlrBase):
    """Gaussian prior on weights with Gamma hyperpriors on precision alpha and noise precision tau."""

    def __init__(self, data: BlrDataset, shape=GAMMA_SHAPE, rate=GAMMA_RATE):
        super().__init__(data)
        self.shape, self.rate = shape, rate
        self.dim = self._D + 2

    def _unpack_noise(self, thetas):
        log_tau = self._clamp(thetas[:, -1])
        return thetas[:, : self._D], np.exp(log_tau), log_tau

    def _parts(self, x):
        D = self._D
        w = x[:, :D]
        xa, xt = self._clamp(x[:, D]), self._clamp(x[:, D + 1])
        alpha, tau = np.exp(xa), np.exp(xt)
        ll, gw_lik, sse = self._lik(w, tau, xt)
        ww = np.sum(w * w, axis=1)
        lp_w = 0.5 * D * (xa - LOG_2PI) - 0.5 * alpha * ww
        hyper = (log_gamma_density(alpha, xa, self.shape, self.rate) + xa
                 + log_gamma_density(tau, xt, self.shape, self.rate) + xt)
        return ll + lp_w + hyper, w, alpha, tau, ww, gw_lik, sse, xa, xt

    def _log_density(self, x):
        return self._parts(x)[0]

    def _grad(self, x):
        _, w, alpha, tau, ww, gw_lik, sse, xa, xt = self._parts(x)
        D = self._D
        g = np.empty_like(x)
        g[:, :D] = gw_lik - alpha[:, None] * w
        g[:, D] = 0.5 * D - 0.5 * alpha * ww + self.shape - self.rate * alpha
        g[:, D + 1] = 0.5 * self._n - 0.5 * tau * sse + self.shape - self.rate * tau
        # zero gradient where the clamp is active
        g[:, D] *= np.abs(x[:, D]) <= LOG_CLAMP
        g[:, D + 1] *= np.abs(x[:, D + 1]) <= LOG_CLAMP
        return g


def heavy_tail_matrix(n: int, seed: int) -> tuple[np.ndarray, int]:
    """Draw ``A`` with i.i.d. N(0,1) entries; bump the seed until ``A^T A`` factorizes."""
    for s in range(seed, seed + 100):
        A = np.random.default_rng(s).standard_normal((n, n))
        try:
            np.linalg.cholesky(A.T @ A)
        except np.linalg.LinAlgError:
            continue
        return A, s
    raise RuntimeError("could not draw a well-conditioned scale matrix")


class BlrHeavyTailTarget(_BlrBase):
    """Multivariate Student-t (nu=2) prior on weights with scale ``A^T A``; Gamma prior on tau."""

    def __init__(self, data: BlrDataset, A=None, seed: int = 0, nu: float = HEAVY_NU,
                 shape=GAMMA_SHAPE, rate=GAMMA_RATE):
        super().__init__(data)
        if A is None:
            A, seed = heavy_tail_matrix(self._D, seed)
        self.A = np.asarray(A, dtype=float)
        self.seed = seed
        self.nu, self.shape, self.rate = float(nu), shape, rate
        self.dim = self._D + 1
        self._chol = np.linalg.cholesky(self.A.T @ self.A)
        logdet = 2.0 * np.sum(np.log(np.diag(self._chol)))
        D, nu = self._D, self.nu
        self._t_const = (gammaln(0.5 * (nu + D)) - gammaln(0.5 * nu)
                         - 0.5 * D * np.log(nu * np.pi) - 0.5 * logdet)

    def _unpack_noise(self, thetas):
        log_tau = self._clamp(thetas[:, -1])
        return thetas[:, : self._D], np.exp(log_tau), log_tau

    def _solve(self, w):
        return cho_solve((self._chol, True), w.T).T

    def t_log_prior(self, w):
        w = np.atleast_2d(w)
        maha = np.sum(w * self._solve(w), axis=1)
        return self._t_const - 0.5 * (self.nu + self._D) * np.log1p(maha / self.nu)

    def _log_density(self, x):
        D = self._D
        w, xt = x[:, :D], self._clamp(x[:, D])
        tau = np.exp(xt)
        ll, _, _ = self._lik(w, tau, xt)
        return ll + self.t_log_prior(w) + log_gamma_density(tau, xt, self.shape, self.rate) + xt

    def _grad(self, x):
        D = self._D
        w, xt = x[:, :D], self._clamp(x[:, D])
        tau = np.exp(xt)
        _, gw_lik, sse = self._lik(w, tau, xt)
        sw = self._solve(w)
        maha = np.sum(w * sw, axis=1)
        g = np.empty_like(x)
        g[:, :D] = gw_lik - ((self.nu + D) / (self.nu + maha))[:, None] * sw
        g[:, D] = (0.5 * self._n - 0.5 * tau * sse + self.shape - self.rate * tau) * (np.abs(x[:, D]) <= LOG_CLAMP)
        return g


class BlrConjugateTarget(_BlrBase):
    """Weights only, with prior precision ``alpha`` and noise precision ``tau`` held fixed.

    The posterior is Gaussian and available in closed form, which makes this
    the ground-truth fixture for the samplers and the predictive evaluator.
    """

    def __init__(self, data: BlrDataset, alpha: float = 1.0, tau: float = 1.0):
        super().__init__(data)
        self.alpha, self.tau = float(alpha), float(tau)
        self.dim = self._D
        prec = self.tau * self._xtx + self.alpha * np.eye(self._D)
        self.post_cov = np.linalg.inv(prec)
        self.post_cov = 0.5 * (self.post_cov + self.post_cov.T)
        self.post_mean = np.linalg.solve(prec, self.tau * self._xty)

    def _unpack_noise(self, thetas):
        n = thetas.shape[0]
        return thetas, np.full(n, self.tau), np.full(n, np.log(self.tau))

    def _log_density(self, x):
        n = x.shape[0]
        ll, _, _ = self._lik(x, np.full(n, self.tau), np.full(n, np.log(self.tau)))
        return ll + 0.5 * self._D * (np.log(self.alpha) - LOG_2PI) - 0.5 * self.alpha * np.sum(x * x, axis=1)

    def _grad(self, x):
        n = x.shape[0]
        _, gw, _ = self._lik(x, np.full(n, self.tau), np.full(n, np.log(self.tau)))
        return gw - self.alpha * x

    def predictive_closed_form(self, X, y) -> np.ndarray:
        """Exact ``log p(y | x, D)`` per test point on the raw y scale."""
        X = np.asarray(X)
        mu = X @ self.post_mean
        var = 1.0 / self.tau + np.einsum("nd,de,ne->n", X, self.post_cov, X)
        r = np.asarray(y) - mu
        return -0.5 * (LOG_2PI + np.log(var)) - 0.5 * r * r / var - np.log(self.data.y_scale)


def blr_log_posterior(theta, target: BlrGaussianTarget):
    return target.log_density(theta)


def blr_heavy_log_posterior(theta, target: BlrHeavyTailTarget):
    return target.log_density(theta)
