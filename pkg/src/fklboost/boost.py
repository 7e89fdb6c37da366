"""Greedy mixture construction: VI initialization, component fitting, weight correction."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy.special import expit, logit

from .errors import NumericalError
from .mixture import Component, MixtureProposal, add_component, as_rng, sample
from .optimize import (
    AdamState,
    adam_step,
    boost_objective_value_and_grad,
    fkl_weight_objective,
    pack,
    project_simplex,
    rkl_boost_objective_and_grad,
    rkl_objective_and_grad,
    rkl_weight_objective,
    selfsample_fkl_grad,
    unpack,
    log_weight_grad_fkl,
    weight_grad_rkl,
)
from .snis import LOG_EPS_RESIDUAL, score_batch, snis_fkl

logger = logging.getLogger(__name__)

GAMMA_FLOOR = 1e-3


@dataclass
class BoostConfig:
    K: int = 3
    steps_per_component: int = 400
    samples_per_batch: int = 100
    lr_mean: float = 0.01
    lr_scale: float = 0.01
    lr_gamma: float = 0.01
    lr_weights: float = 0.1
    lr_init: float | None = None
    init_sigma: float = 0.001
    init_heuristic_steps: int = 400
    init_heuristic_lr: float = 0.1
    init_starts: int = 16
    rkl_warmstart_steps: int = 100
    component_kind: str = "gaussian"
    nu: float | None = None
    weight_steps: int = 100
    weight_samples: int = 1000
    divergence: str = "fkl"
    first: str = "rkl"
    seed: int = 0

    def __post_init__(self):
        for name in ("K", "steps_per_component", "samples_per_batch", "weight_samples", "init_starts"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("init_heuristic_steps", "rkl_warmstart_steps", "weight_steps"):
            if int(getattr(self, name)) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("lr_mean", "lr_scale", "lr_gamma", "lr_weights", "init_sigma", "init_heuristic_lr"):
            if not float(getattr(self, name)) > 0:
                raise ValueError(f"{name} must be positive")
        if self.lr_init is not None and not self.lr_init > 0:
            raise ValueError("lr_init must be positive")
        if self.component_kind not in ("gaussian", "student_t"):
            raise ValueError(f"component_kind must be gaussian or student_t, got {self.component_kind!r}")
        if self.component_kind == "student_t" and not (self.nu and self.nu > 0):
            raise ValueError("student_t components need nu > 0")
        if self.divergence not in ("fkl", "rkl"):
            raise ValueError(f"divergence must be fkl or rkl, got {self.divergence!r}")
        if self.first not in ("fkl", "rkl"):
            raise ValueError(f"first must be fkl or rkl, got {self.first!r}")

    @classmethod
    def for_method(cls, method: str, K: int | None = None, **overrides) -> BoostConfig:
        """Config for one of ``rkl-vi``, ``fkl-vi``, ``rkl-vb``, ``fkl-vb``."""
        method = method.replace("_", "-")
        if method == "rkl-vi":
            kw = dict(K=1, first="rkl", divergence="rkl")
        elif method == "fkl-vi":
            kw = dict(K=1, first="fkl", divergence="fkl")
        elif method == "rkl-vb":
            kw = dict(K=K or 3, first="rkl", divergence="rkl")
        elif method == "fkl-vb":
            kw = dict(K=K or 3, first="rkl", divergence="fkl")
        else:
            raise ValueError(f"unknown method {method!r}")
        kw.update(overrides)
        return cls(**kw)

    @classmethod
    def field_names(cls) -> set[str]:
        return {f.name for f in fields(cls)}


def _draws(cfg: BoostConfig, n, d, rng):
    if cfg.component_kind == "gaussian":
        return rng.standard_normal((n, d))
    return rng.standard_t(cfg.nu, (n, d))


def _lr_vector(cfg: BoostConfig, d: int, with_gamma: bool, first: bool = False) -> np.ndarray:
    if first and cfg.lr_init is not None:
        return np.full(2 * d, cfg.lr_init)
    parts = [np.full(d, cfg.lr_mean), np.full(d, cfg.lr_scale)]
    if with_gamma:
        parts.append([cfg.lr_gamma])
    return np.concatenate(parts)


def _initial_component(cfg: BoostConfig, d: int, rng) -> Component:
    return Component(np.zeros(d), cfg.init_sigma * rng.standard_normal(d), cfg.component_kind, cfg.nu)


def _check(value, what, step):
    if not np.isfinite(value):
        raise NumericalError(f"{what}: non-finite objective at step {step}")


def _run_vi(target, f: Component, cfg: BoostConfig, steps: int, rng, objective, what, first=False) -> Component:
    d = f.dim
    state = AdamState.init(pack(f), lr=_lr_vector(cfg, d, False, first))
    for t in range(steps):
        f = unpack(state.params, f)
        val, gb = objective(target, f, _draws(cfg, cfg.samples_per_batch, d, rng))
        _check(val, what, t)
        try:
            state = adam_step(state, gb.flat(False))
        except FloatingPointError as exc:
            raise NumericalError(f"{what}: {exc} at step {t}") from exc
    return unpack(state.params, f)


def fit_rkl_vi(target, cfg: BoostConfig, rng=None) -> Component:
    """Single component minimizing the reparametrized reverse KL.

    Uses ``cfg.lr_init`` for every parameter when it is set.
    """
    rng = as_rng(cfg.seed if rng is None else rng)
    f = _initial_component(cfg, target.dim, rng)
    return _run_vi(target, f, cfg, cfg.steps_per_component, rng, rkl_objective_and_grad, "rkl_vi", first=True)


def fit_fkl_vi(target, cfg: BoostConfig, rng=None) -> Component:
    """Reverse-KL warm start (at ``cfg.lr_init`` if set), then self-sampled forward-KL refinement."""
    rng = as_rng(cfg.seed if rng is None else rng)
    f = _initial_component(cfg, target.dim, rng)
    f = _run_vi(target, f, cfg, cfg.rkl_warmstart_steps, rng, rkl_objective_and_grad, "fkl_vi warm start", first=True)
    return _run_vi(target, f, cfg, cfg.steps_per_component, rng, selfsample_fkl_grad, "fkl_vi")


def _residual_and_grad(target, q_prev: MixtureProposal, x):
    lp = target.log_density(x)
    lq = q_prev.log_pdf(x)
    r = np.logaddexp(lp, LOG_EPS_RESIDUAL) - np.logaddexp(lq, LOG_EPS_RESIDUAL)
    gp = expit(lp - LOG_EPS_RESIDUAL)[:, None] * target.grad_log_density(x)
    gq = expit(lq - LOG_EPS_RESIDUAL)[:, None] * q_prev.grad_x(x)
    g = gp - gq
    # differences below rounding of the two terms carry no direction
    g[np.abs(g) <= 1e-13 * (np.abs(gp) + np.abs(gq))] = 0.0
    return r, g


def init_new_component(target, q_prev: MixtureProposal, cfg: BoostConfig, rng=None) -> np.ndarray:
    """Approximate the mode of the eps-stabilized log residual ``log p - log q_prev``.

    ``cfg.init_starts`` trajectories start from independent draws of
    ``q_prev`` and take ``init_heuristic_steps`` sign-normalized ADAM ascent
    steps each (run side by side). A trajectory that turns non-finite is
    dropped. The endpoint with the largest residual is returned, which
    guards against local maxima and against starts that drift onto the flat
    region where both densities fall below eps.
    """
    rng = as_rng(cfg.seed if rng is None else rng)
    x0 = q_prev.sample_points(cfg.init_starts, rng)
    state = AdamState.init(x0, lr=cfg.init_heuristic_lr, eps=1e-30)
    alive = np.ones(len(x0), dtype=bool)
    with np.errstate(all="ignore"):
        for _ in range(cfg.init_heuristic_steps):
            x = np.where(alive[:, None], state.params, x0)
            r, g = _residual_and_grad(target, q_prev, x)
            bad = ~(np.isfinite(r) & np.all(np.isfinite(g), axis=1))
            alive &= ~bad
            g[~alive] = 0.0
            state = adam_step(state, -g)
            alive &= np.all(np.isfinite(state.params), axis=1)
        if not alive.any():
            return q_prev.sample_points(1, rng)[0]
        x = np.where(alive[:, None], state.params, x0)
        r, _ = _residual_and_grad(target, q_prev, x)
    r = np.where(alive & np.isfinite(r), r, -np.inf)
    return x[int(np.argmax(r))].copy()


def _new_scale(q_prev: MixtureProposal, cfg: BoostConfig, rng) -> np.ndarray:
    base = sum(lam * c.std for lam, c in zip(q_prev.weights, q_prev.components))
    return base + cfg.init_sigma * rng.standard_normal(q_prev.dim)


@dataclass
class ComponentFit:
    component: Component
    gamma: float
    objective: float
    baseline: float
    batch_ess: float
    accepted: bool


def fit_fkl_component(target, q_prev: MixtureProposal, cfg: BoostConfig, rng=None) -> ComponentFit:
    """Fit a new component and its weight against one batch drawn from ``q_prev``.

    The fixed-batch objective is unbounded below (a component collapsing onto
    one heavily weighted draw drives it to minus infinity), so iterates are
    scored on a second, held-out batch from ``q_prev`` and the best one is
    kept. The component is flagged as not accepted, and given the floor
    weight, when no iterate improves on ``q_prev`` out of sample.
    """
    rng = as_rng(cfg.seed if rng is None else rng)
    d = q_prev.dim
    batch = score_batch(sample(q_prev, cfg.samples_per_batch, rng), target)
    holdout = score_batch(sample(q_prev, cfg.samples_per_batch, rng), target)
    est = snis_fkl(batch)
    if est.ess < 2:
        logger.warning("component batch has ESS %.3f < 2", est.ess)
    baseline = snis_fkl(holdout).value
    mean0 = init_new_component(target, q_prev, cfg, rng)
    f = Component(mean0, _new_scale(q_prev, cfg, rng), cfg.component_kind, cfg.nu)
    state = AdamState.init(np.append(pack(f), 0.0), lr=_lr_vector(cfg, d, True))
    best = (np.inf, f, 0.5)
    for t in range(cfg.steps_per_component + 1):
        f = unpack(state.params[:-1], f)
        gl = state.params[-1]
        val, gb = boost_objective_value_and_grad(batch, f, gl)
        _check(val, "fkl component", t)
        held = boost_objective_value_and_grad(holdout, f, gl)[0]
        if held < best[0]:
            best = (held, f, float(expit(gl)))
        if t == cfg.steps_per_component:
            break
        state = adam_step(state, gb.flat())
    held, f, gamma = best
    accepted = held < baseline
    if not accepted:
        gamma = GAMMA_FLOOR
    gamma = float(np.clip(gamma, GAMMA_FLOOR, 1.0 - GAMMA_FLOOR))
    return ComponentFit(f, gamma, held, baseline, est.ess, bool(accepted))


def fit_rkl_component(target, q_prev: MixtureProposal, cfg: BoostConfig, rng=None) -> ComponentFit:
    """Reverse-KL counterpart of :func:`fit_fkl_component` (the variational boosting baseline)."""
    rng = as_rng(cfg.seed if rng is None else rng)
    d = q_prev.dim
    mean0 = init_new_component(target, q_prev, cfg, rng)
    f = Component(mean0, _new_scale(q_prev, cfg, rng), cfg.component_kind, cfg.nu)
    state = AdamState.init(np.append(pack(f), 0.0), lr=_lr_vector(cfg, d, True))
    S = cfg.samples_per_batch
    val = np.nan
    for t in range(cfg.steps_per_component):
        f = unpack(state.params[:-1], f)
        val, gb = rkl_boost_objective_and_grad(
            target, q_prev, f, state.params[-1], _draws(cfg, S, d, rng), q_prev.sample_points(S, rng))
        _check(val, "rkl component", t)
        state = adam_step(state, gb.flat())
    f = unpack(state.params[:-1], f)
    gamma = float(np.clip(expit(state.params[-1]), GAMMA_FLOOR, 1.0 - GAMMA_FLOOR))
    return ComponentFit(f, gamma, float(val), np.nan, np.nan, True)


def _projected_descent(lam, objective, gradient, lr, steps):
    trace = [objective(lam)]
    for _ in range(steps):
        g = gradient(lam)
        step = lr
        while step > 1e-12:
            cand = project_simplex(lam - step * g)
            val = objective(cand)
            if val <= trace[-1]:
                break
            step *= 0.5
        else:
            break
        lam = cand
        trace.append(val)
        if np.allclose(g - g.mean(), 0.0, atol=1e-14):
            break
    return lam, trace


def fully_corrective_weights(target, q: MixtureProposal, cfg: BoostConfig, rng=None, divergence=None):
    """Re-optimize all mixture weights on the simplex by projected gradient descent.

    Returns ``(proposal, objective_trace)``; the trace is non-increasing by
    construction (backtracking halves the step on any increase).
    """
    rng = as_rng(cfg.seed if rng is None else rng)
    divergence = divergence or cfg.divergence
    if q.k < 2:
        return q, []
    comps = q.components

    def with_weights(lam):
        return MixtureProposal(comps, lam)

    if divergence == "fkl":
        batch = score_batch(sample(q, cfg.weight_samples, rng), target)
        comp_logs = q.component_log_pdfs(batch.points)

        def objective(lam):
            return fkl_weight_objective(with_weights(lam), batch, comp_logs)

        def gradient(lam):
            # ratios f_i / q of a zero-weight component can overflow; only the
            # direction matters under backtracking, so cap the largest entry at 1
            lg = log_weight_grad_fkl(with_weights(lam), batch, comp_logs)
            return -np.exp(lg - max(lg.max(), 0.0))
    else:
        draws = [c.mean + c.std * c.standard_draws((cfg.samples_per_batch, q.dim), rng) for c in comps]

        def objective(lam):
            return rkl_weight_objective(with_weights(lam), target, draws)

        def gradient(lam):
            return weight_grad_rkl(with_weights(lam), target, draws)

    lam, trace = _projected_descent(q.weights.copy(), objective, gradient, cfg.lr_weights, cfg.weight_steps)
    return with_weights(lam), trace


@dataclass
class IterationRecord:
    iteration: int
    snis_fkl: float
    ess: float
    gamma: float
    weights: list
    wallclock_ms: float
    exact_fkl: float | None = None
    accepted: bool = True
    objective_decrease: float | None = None
    weight_trace: list = field(default_factory=list)


@dataclass
class FitReport:
    records: list
    proposal: MixtureProposal
    config: dict = field(default_factory=dict)

    def proposal_at(self, k: int) -> MixtureProposal:
        """Mixture after iteration ``k`` (1-based)."""
        return MixtureProposal(self.proposal.components[:k], self.records[k - 1].weights)

    def to_dict(self, wallclock: bool = True) -> dict:
        recs = [asdict(r) for r in self.records]
        if not wallclock:
            for r in recs:
                r.pop("wallclock_ms")
        return {"config": self.config, "records": recs, "proposal": self.proposal.to_dict()}

    def to_json(self, wallclock: bool = True) -> str:
        return json.dumps(self.to_dict(wallclock), indent=2, allow_nan=False, default=_json_default)


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def _diagnose(target, q, n, rng):
    est = snis_fkl(score_batch(sample(q, n, rng), target))
    return est.value, est.ess


def _finite_or_none(x):
    return float(x) if x is not None and np.isfinite(x) else None


def boost(target, cfg: BoostConfig, exact_fkl=None) -> tuple[MixtureProposal, FitReport]:
    """Run ``cfg.K`` boosting iterations.

    Iteration 1 is reverse-KL VI, or forward-KL VI when ``K == 1`` and
    ``cfg.first == "fkl"``. Later iterations fit one component against a
    batch from the current mixture, append it, and re-optimize the weights.
    ``exact_fkl``, if given, maps a proposal to an oracle divergence that is
    stored in each record.
    """
    # fitting consumes the same stream as a standalone VI fit; diagnostics use a child stream
    rng = np.random.default_rng(cfg.seed)
    diag_rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(1)[0])
    records = []

    def record(it, q, gamma, start, accepted=True, decrease=None, trace=()):
        value, e = _diagnose(target, q, cfg.weight_samples, diag_rng)
        records.append(IterationRecord(
            iteration=it, snis_fkl=float(value), ess=float(e), gamma=float(gamma),
            weights=q.weights.tolist(), wallclock_ms=1e3 * (time.perf_counter() - start),
            exact_fkl=_finite_or_none(exact_fkl(q)) if exact_fkl else None,
            accepted=bool(accepted), objective_decrease=_finite_or_none(decrease),
            weight_trace=[float(v) for v in trace]))

    start = time.perf_counter()
    if cfg.K == 1 and cfg.first == "fkl":
        f = fit_fkl_vi(target, cfg, rng)
    else:
        f = fit_rkl_vi(target, cfg, rng)
    q = MixtureProposal.single(f)
    record(1, q, 1.0, start)

    fit_component = fit_fkl_component if cfg.divergence == "fkl" else fit_rkl_component
    for it in range(2, cfg.K + 1):
        start = time.perf_counter()
        fit = fit_component(target, q, cfg, rng)
        q = add_component(q, fit.component, fit.gamma)
        q, trace = fully_corrective_weights(target, q, cfg, rng)
        logger.info("iteration %d: gamma=%.4f accepted=%s", it, fit.gamma, fit.accepted)
        record(it, q, fit.gamma, start, fit.accepted, fit.baseline - fit.objective, trace)
    report = FitReport(records, q, asdict(cfg))
    return q, report


def gamma_logit(gamma: float) -> float:
    return float(logit(gamma))
