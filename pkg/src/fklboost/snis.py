"""Self-normalized importance weights and forward-KL estimators."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .mixture import Component, WeightedBatch

LOG_EPS_RESIDUAL = -10.0


@dataclass(frozen=True)
class FklEstimate:
    value: float
    ess: float
    max_log_ratio: float


def _log_ratios(log_p, log_q):
    log_p = np.asarray(log_p, dtype=float)
    log_q = np.asarray(log_q, dtype=float)
    if log_p.shape != log_q.shape:
        raise ValueError("log_p and log_q must have equal length")
    if log_p.size == 0:
        raise ValueError("need at least one sample")
    return log_p - log_q


def stable_normalized_weights(log_p, log_q) -> np.ndarray:
    """Self-normalized weights ``p/q`` with the max log-ratio subtracted before exponentiating."""
    d = _log_ratios(log_p, log_q)
    e = np.exp(d - d.max())
    return e / e.sum()


def log_normalizer(log_p, log_q) -> float:
    """SNIS estimate of ``log Z`` for an unnormalized ``p``: ``log mean(p/q)``."""
    d = _log_ratios(log_p, log_q)
    return float(logsumexp(d) - np.log(d.size))


def ess(weights) -> float:
    w = np.asarray(weights, dtype=float)
    return float(1.0 / np.sum(w * w))


def score_batch(batch: WeightedBatch, target) -> WeightedBatch:
    """Fill ``log_p`` and ``norm_weights`` in place and return the batch."""
    batch.log_p = np.asarray(target.log_density(batch.points), dtype=float)
    batch.norm_weights = stable_normalized_weights(batch.log_p, batch.log_q)
    return batch


def _require(batch: WeightedBatch):
    if not batch.complete:
        raise ValueError("batch has not been scored against a target")


def snis_fkl(batch: WeightedBatch) -> FklEstimate:
    """``sum_s w_s log(p_s/q_s) - log Z_hat``.

    Subtracting the SNIS normalizer makes the estimate independent of any
    additive constant in ``log p``; for a normalized target it is
    asymptotically the same quantity.
    """
    _require(batch)
    d = batch.log_p - batch.log_q
    w = batch.norm_weights
    value = float(np.sum(w * d) - log_normalizer(batch.log_p, batch.log_q))
    return FklEstimate(value=value, ess=min(max(ess(w), 1.0), float(len(w))), max_log_ratio=float(d.max()))


def log_mixture_with_new(log_q_prev, log_f, gamma: float) -> np.ndarray:
    """``log(gamma f + (1 - gamma) q_prev)`` by two-term log-sum-exp."""
    if gamma == 0.0:
        return np.asarray(log_q_prev, dtype=float)
    if gamma == 1.0:
        return np.asarray(log_f, dtype=float)
    return np.logaddexp(np.log(gamma) + log_f, np.log1p(-gamma) + log_q_prev)


def snis_boost_objective(batch: WeightedBatch, f: Component, gamma: float) -> float:
    """SNIS forward KL of ``gamma f + (1 - gamma) q_prev`` using a batch drawn from ``q_prev``."""
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    _require(batch)
    log_m = log_mixture_with_new(batch.log_q, f.log_pdf(batch.points), gamma)
    return float(np.sum(batch.norm_weights * (batch.log_p - log_m)) - log_normalizer(batch.log_p, batch.log_q))


def snis_expectation(f_values, weights):
    f = np.asarray(f_values, dtype=float)
    w = np.asarray(weights, dtype=float)
    return np.tensordot(w, f, axes=(0, 0))


def stabilized_log_residual(log_p, log_q, log_eps: float = LOG_EPS_RESIDUAL):
    """``log(p + eps) - log(q + eps)``; biased, meant for diagnostics and initialization."""
    return np.logaddexp(log_p, log_eps) - np.logaddexp(log_q, log_eps)
