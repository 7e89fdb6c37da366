"""ADAM, simplex projection, and analytic gradients of the boosting objectives.

Parameters of a component are ``(mean, root_scale)``; the new-component
mixture weight is optimized through a logit. Density ratios are always
formed as ``exp(log a - log b)``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit, log_expit, logsumexp

from .mixture import Component, MixtureProposal, WeightedBatch
from .snis import log_normalizer, stable_normalized_weights


@dataclass(frozen=True)
class AdamState:
    params: np.ndarray
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float | np.ndarray = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def init(cls, params, lr=1e-3, **kw) -> AdamState:
        p = np.array(params, dtype=float)
        return cls(p, np.zeros_like(p), np.zeros_like(p), 0, lr, **kw)


def adam_step(state: AdamState, grad) -> AdamState:
    g = np.asarray(grad, dtype=float)
    if g.shape != state.params.shape:
        raise ValueError(f"gradient shape {g.shape} does not match parameters {state.params.shape}")
    bad = np.flatnonzero(~np.isfinite(g))
    if bad.size:
        raise FloatingPointError(f"non-finite gradient at index {int(bad[0])}")
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * g
    v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    mhat = m / (1.0 - state.beta1**t)
    vhat = v / (1.0 - state.beta2**t)
    params = state.params - state.lr * mhat / (np.sqrt(vhat) + state.eps)
    return replace(state, params=params, m=m, v=v, t=t)


@dataclass(frozen=True)
class GradientBundle:
    d_mean: np.ndarray
    d_root_scale: np.ndarray
    d_gamma_logit: float = 0.0

    def flat(self, with_gamma: bool = True) -> np.ndarray:
        parts = [self.d_mean, self.d_root_scale]
        if with_gamma:
            parts.append([self.d_gamma_logit])
        return np.concatenate(parts)


def pack(f: Component) -> np.ndarray:
    return np.concatenate([f.mean, f.root_scale])


def unpack(vec, like: Component) -> Component:
    d = like.dim
    return Component(vec[:d], vec[d : 2 * d], like.kind, like.nu)


def finite_diff_grad(fn, theta, h: float = 1e-5, relative: bool = False) -> np.ndarray:
    """Central differences; with ``relative`` the step is ``h * max(1, |theta_i|)``."""
    theta = np.array(theta, dtype=float)
    g = np.empty_like(theta)
    for i in range(theta.size):
        hi = h * max(1.0, abs(theta[i])) if relative else h
        tp, tm = theta.copy(), theta.copy()
        tp[i] += hi
        tm[i] -= hi
        g[i] = (fn(tp) - fn(tm)) / (2.0 * hi)
    return g


def project_simplex(v) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort and threshold)."""
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValueError("cannot project a non-finite vector")
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / idx > 0)[0][-1]
    thresh = css[rho] / (rho + 1.0)
    w = np.maximum(v - thresh, 0.0)
    return w / w.sum()


def _boost_terms(batch: WeightedBatch, f: Component, gamma_logit: float):
    log_g = log_expit(gamma_logit)
    log_1mg = log_expit(-gamma_logit)
    log_f = f.log_pdf(batch.points)
    a = log_g + log_f
    b = log_1mg + batch.log_q
    log_m = np.logaddexp(a, b)
    return log_m, np.exp(a - log_m), np.exp(b - log_m)


def boost_objective_value_and_grad(batch: WeightedBatch, f: Component, gamma_logit: float):
    """Objective of :func:`fklboost.snis.snis_boost_objective` and its gradient in one pass."""
    w = batch.norm_weights
    log_m, a, b = _boost_terms(batch, f, gamma_logit)
    value = float(np.sum(w * (batch.log_p - log_m)) - log_normalizer(batch.log_p, batch.log_q))
    dmu, ds = f.score_params(batch.points)
    wa = (w * a)[:, None]
    g = expit(gamma_logit)
    d_gl = -float(np.sum(w * ((1.0 - g) * a - g * b)))
    return value, GradientBundle(-np.sum(wa * dmu, axis=0), -np.sum(wa * ds, axis=0), d_gl)


def boost_objective_grad(batch: WeightedBatch, f: Component, gamma_logit: float) -> GradientBundle:
    return boost_objective_value_and_grad(batch, f, gamma_logit)[1]


def reparam(f: Component, eps) -> np.ndarray:
    return f.mean + f.std * eps


def rkl_objective_and_grad(target, f: Component, eps) -> tuple[float, GradientBundle]:
    """Reparametrized Monte Carlo estimate of ``KL(f || p)`` up to ``log Z``, with its gradient."""
    eps = np.atleast_2d(eps)
    theta = reparam(f, eps)
    value = float(np.mean(f.log_pdf(theta) - target.log_density(theta)))
    gp = target.grad_log_density(theta)
    sgn = np.sign(f.root_scale)
    s = sgn * f.std
    d_mean = -gp.mean(axis=0)
    d_rs = -1.0 / s - np.mean(gp * eps, axis=0) * sgn
    return value, GradientBundle(d_mean, d_rs)


def selfsample_fkl_grad(target, f: Component, eps) -> tuple[float, GradientBundle]:
    """SNIS forward KL with samples drawn from ``f`` itself, differentiated through the weights."""
    eps = np.atleast_2d(eps)
    theta = reparam(f, eps)
    l = target.log_density(theta) - f.log_pdf(theta)
    w = stable_normalized_weights(l, np.zeros_like(l))
    jl = float(np.sum(w * l))
    value = jl - float(logsumexp(l) - np.log(l.size))
    gp = target.grad_log_density(theta)
    sgn = np.sign(f.root_scale)
    s = sgn * f.std
    c = (w * (l - jl))[:, None]
    d_mean = np.sum(c * gp, axis=0)
    d_rs = np.sum(c * (gp * eps * sgn + 1.0 / s), axis=0)
    return value, GradientBundle(d_mean, d_rs)


def _mixture_logs(q: MixtureProposal, points, comp_logs=None):
    if comp_logs is None:
        comp_logs = q.component_log_pdfs(points)
    with np.errstate(divide="ignore"):
        log_q = logsumexp(comp_logs + np.log(q.weights)[:, None], axis=0)
    return comp_logs, log_q


def fkl_weight_objective(q: MixtureProposal, batch: WeightedBatch, comp_logs=None) -> float:
    """SNIS forward KL of ``q`` (at its current weights) on a batch drawn earlier.

    ``batch.norm_weights`` are the importance weights against the
    distribution the batch was drawn from and stay fixed; only the
    log-ratio is re-evaluated under the new mixture weights.
    """
    _, log_q = _mixture_logs(q, batch.points, comp_logs)
    return float(np.sum(batch.norm_weights * (batch.log_p - log_q)) - log_normalizer(batch.log_p, batch.log_q))


def weight_grad_fkl(q: MixtureProposal, batch: WeightedBatch, comp_logs=None) -> np.ndarray:
    """SNIS estimate of ``-E_p[f_i / q]`` for every component."""
    comp_logs, log_q = _mixture_logs(q, batch.points, comp_logs)
    return -np.sum(batch.norm_weights[None, :] * np.exp(comp_logs - log_q[None, :]), axis=1)


def log_weight_grad_fkl(q: MixtureProposal, batch: WeightedBatch, comp_logs=None) -> np.ndarray:
    """``log E_p[f_i / q]`` per component (the negated FKL weight gradient, in log space)."""
    comp_logs, log_q = _mixture_logs(q, batch.points, comp_logs)
    with np.errstate(divide="ignore"):
        lw = np.log(batch.norm_weights)
    return logsumexp(lw[None, :] + comp_logs - log_q[None, :], axis=1)


def rkl_weight_objective(q: MixtureProposal, target, draws) -> float:
    """``sum_i lambda_i mean_s[log q - log p](theta_is)`` on fixed per-component draws."""
    return float(sum(lam * np.mean(q.log_pdf(x) - target.log_density(x))
                     for lam, x in zip(q.weights, draws) if lam > 0))


def weight_grad_rkl(q: MixtureProposal, target, draws) -> np.ndarray:
    """``E_{f_i}[log q - log p]`` per component, one draw set per component."""
    return np.array([np.mean(q.log_pdf(x) - target.log_density(x)) for x in draws])


def rkl_boost_objective_and_grad(target, q_prev: MixtureProposal, f: Component, gamma_logit: float,
                                 eps_f, prev_points) -> tuple[float, GradientBundle]:
    """Reverse KL of ``gamma f + (1 - gamma) q_prev`` with reparametrized draws from ``f``.

    ``prev_points`` are draws from ``q_prev`` (they do not depend on the
    parameters being optimized).
    """
    eps_f = np.atleast_2d(eps_f)
    g = float(expit(gamma_logit))
    lg, l1g = log_expit(gamma_logit), log_expit(-gamma_logit)
    th_f = reparam(f, eps_f)
    th_q = np.atleast_2d(prev_points)

    def parts(th):
        lf = f.log_pdf(th)
        lq = q_prev.log_pdf(th)
        lm = np.logaddexp(lg + lf, l1g + lq)
        return lf, lq, lm, target.log_density(th)

    lf_f, lq_f, lm_f, lp_f = parts(th_f)
    lf_q, lq_q, lm_q, lp_q = parts(th_q)
    h_f = lm_f - lp_f
    h_q = lm_q - lp_q
    value = g * float(np.mean(h_f)) + (1.0 - g) * float(np.mean(h_q))

    # responsibilities of the new component inside the mixture
    r_f = np.exp(lg + lf_f - lm_f)
    r_q = np.exp(lg + lf_q - lm_q)

    # pathwise term through the reparametrized draws from f
    grad_x_m = (r_f[:, None] * f.grad_x(th_f) + (1.0 - r_f)[:, None] * q_prev.grad_x(th_f))
    gx = grad_x_m - target.grad_log_density(th_f)
    sgn = np.sign(f.root_scale)
    d_mean = g * gx.mean(axis=0)
    d_rs = g * np.mean(gx * eps_f, axis=0) * sgn

    # direct dependence of log q_new on (mean, root_scale)
    dmu_f, ds_f = f.score_params(th_f)
    dmu_q, ds_q = f.score_params(th_q)
    d_mean = d_mean + g * np.mean(r_f[:, None] * dmu_f, axis=0) + (1.0 - g) * np.mean(r_q[:, None] * dmu_q, axis=0)
    d_rs = d_rs + g * np.mean(r_f[:, None] * ds_f, axis=0) + (1.0 - g) * np.mean(r_q[:, None] * ds_q, axis=0)

    # d/dgamma, then chain rule through the logit
    ratio_f = np.exp(lf_f - lm_f) - np.exp(lq_f - lm_f)
    ratio_q = np.exp(lf_q - lm_q) - np.exp(lq_q - lm_q)
    d_g = (np.mean(h_f) - np.mean(h_q)) + g * np.mean(ratio_f) + (1.0 - g) * np.mean(ratio_q)
    return value, GradientBundle(d_mean, d_rs, float(d_g * g * (1.0 - g)))
