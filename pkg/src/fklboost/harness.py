"""Oracles, metrics and the experiment suites (Cauchy, GMM-20, Bayesian linear regression)."""

from __future__ import annotations

import logging
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import trapezoid
from scipy.special import logsumexp

from .blr import (
    BlrConjugateTarget,
    BlrGaussianTarget,
    BlrHeavyTailTarget,
    read_csv,
    split_indices,
    standardize_split,
)
from .boost import BoostConfig, boost
from .hmc import HmcConfig, hmc_sample
from .io import atomic_write_csv, atomic_write_json
from .mixture import MixtureProposal, as_rng, sample
from .snis import score_batch, stabilized_log_residual
from .targets import CauchyTarget, gmm20_target, make_gmm20_spec

logger = logging.getLogger(__name__)

CAUCHY_GRID = (-200.0, 200.0, 2_000_001)
# a Cauchy puts about 3.2e-3 of its mass outside [-200, 200]
CAUCHY_MAX_TAIL_MASS = 0.01
GMM20_GRID_BOX = (-2.0, 12.0)
GMM20_GRID_N = 200


EXPERIMENT_DEFAULTS = {
    "cauchy": dict(K=3, steps_per_component=1000, lr_mean=0.1, lr_scale=0.1, init_sigma=0.01),
    "gmm20": dict(K=10, steps_per_component=1000, lr_mean=0.1, lr_scale=0.1, init_sigma=0.01),
    # posterior standard deviations are around 1e-2 while the means are O(1): the first
    # (reverse-KL) fit travels at the larger rate, later stages resolve at the smaller one
    "blr": dict(K=3, steps_per_component=1000, rkl_warmstart_steps=1000, lr_init=0.01, lr_mean=0.001,
                lr_scale=0.001, init_sigma=0.01),
}


def experiment_config(name: str = "cauchy", **overrides) -> BoostConfig:
    """Boosting settings used by one experiment suite (all inside the tuned grids)."""
    kw = dict(EXPERIMENT_DEFAULTS[name])
    kw.update(overrides)
    return BoostConfig(**kw)


# oracles and metrics ---------------------------------------------------------

def _logp_1d(target_logp, x):
    return np.asarray(target_logp(x[:, None]), dtype=float).reshape(-1)


def exact_fkl_quadrature_1d(target_logp, q: MixtureProposal, grid=CAUCHY_GRID, max_tail_mass: float = 1e-4) -> float:
    """Trapezoid rule for ``int p (log p - log q)`` over ``[lo, hi]`` with ``n`` points.

    ``target_logp`` must be a normalized 1-D log-density accepting an
    ``(n, 1)`` array. Raises ``ValueError`` when more than ``max_tail_mass``
    of ``p`` lies outside the grid.
    """
    if q.dim != 1:
        raise ValueError("quadrature oracle is 1-D only")
    lo, hi, n = grid
    x = np.linspace(lo, hi, int(n))
    lp = _logp_1d(target_logp, x)
    p = np.exp(lp)
    tail = 1.0 - trapezoid(p, x)
    if tail > max_tail_mass:
        raise ValueError(f"tail mass {tail:.3g} outside [{lo}, {hi}] exceeds {max_tail_mass:g}; widen the grid")
    lq = q.log_pdf(x[:, None])
    integrand = np.where(p > 0, p * (lp - lq), 0.0)
    return float(trapezoid(integrand, x))


def exact_fkl_mc(p_sampler, p_logpdf, q: MixtureProposal, S: int, rng=None) -> float:
    """Plain Monte Carlo ``mean[log p - log q]`` over exact draws from ``p``."""
    x = p_sampler(S, as_rng(rng))
    return float(np.mean(np.asarray(p_logpdf(x)) - q.log_pdf(x)))


def moment_mse(q: MixtureProposal, target, true_mean, true_cov_diag, S: int, rng=None, reps: int = 1) -> float:
    """Summed squared error of SNIS estimates of the mean and the marginal variances.

    With ``reps > 1`` the squared error is averaged over independent batches
    of size ``S``, which estimates the expected (mean) squared error.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    rng = as_rng(rng)
    total = 0.0
    for _ in range(reps):
        batch = score_batch(sample(q, S, rng), target)
        w = batch.norm_weights
        m = w @ batch.points
        v = w @ (batch.points - m) ** 2
        total += float(np.sum((m - true_mean) ** 2) + np.sum((v - true_cov_diag) ** 2))
    return total / reps


def posterior_predictive_logprob(X, y, samples, norm_weights, model) -> float:
    """Mean over test points of ``log sum_s w_s p(y | x, theta_s)``.

    ``norm_weights=None`` means uniform weights (direct averaging over draws).
    """
    samples = np.atleast_2d(samples)
    ll = model.predictive_logpdf(np.atleast_2d(X), np.atleast_1d(y), samples)
    if norm_weights is None:
        lw = np.full(samples.shape[0], -np.log(samples.shape[0]))
    else:
        with np.errstate(divide="ignore"):
            lw = np.log(np.asarray(norm_weights, dtype=float))
    return float(np.mean(logsumexp(ll + lw[:, None], axis=0)))


def residual_grid(target, q: MixtureProposal, box=GMM20_GRID_BOX, n: int = GMM20_GRID_N) -> np.ndarray:
    """``n x n`` stabilized log-residual on a square grid (rows index the second coordinate)."""
    t = np.linspace(box[0], box[1], n)
    xx, yy = np.meshgrid(t, t)
    pts = np.column_stack([xx.ravel(), yy.ravel()])
    r = stabilized_log_residual(target.log_density(pts), q.log_pdf(pts))
    return r.reshape(n, n)


# results ---------------------------------------------------------------------

@dataclass
class ExperimentResult:
    method: str
    values: list = field(default_factory=list)

    @property
    def n_splits(self) -> int:
        return len(self.values)

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))

    @property
    def stderr(self) -> float:
        n = len(self.values)
        if n < 2:
            return 0.0
        return float(np.std(self.values, ddof=1) / np.sqrt(n))

    def to_dict(self) -> dict:
        return {"mean": self.mean, "stderr": self.stderr, "n_splits": self.n_splits}


@dataclass(frozen=True)
class CurveRow:
    method: str
    k: int
    seed: int
    metric: str
    value: float


@dataclass(frozen=True)
class ResultRow:
    method: str
    split: int
    metric: str
    value: float


def write_curve_csv(path, rows) -> None:
    atomic_write_csv(path, ["method", "k", "seed", "metric", "value"],
                     [(r.method, r.k, r.seed, r.metric, r.value) for r in rows])


def write_results_csv(path, rows) -> None:
    atomic_write_csv(path, ["method", "split", "metric", "value"],
                     [(r.method, r.split, r.metric, r.value) for r in rows])


def aggregate(rows, metric: str = "pred_logprob") -> dict:
    out = {}
    for r in rows:
        if r.metric == metric:
            out.setdefault(r.method, ExperimentResult(r.method)).values.append(r.value)
    return {m: res.to_dict() for m, res in out.items()}


def write_aggregate_json(path, rows, metric: str = "pred_logprob") -> None:
    atomic_write_json(path, aggregate(rows, metric))


def median_curve(rows, method: str, metric: str) -> dict:
    """``{k: median over seeds}`` for one method and metric."""
    ks = {}
    for r in rows:
        if r.method == method and r.metric == metric:
            ks.setdefault(r.k, []).append(r.value)
    return {k: float(np.median(v)) for k, v in sorted(ks.items())}


def _pmap(fn, items, jobs: int = 1):
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


# Cauchy -----------------------------------------------------------------------

def _cauchy_run(args):
    method, seed, cfg, grid, tail = args
    target = CauchyTarget()
    run_cfg = BoostConfig.for_method(method, K=cfg.K, **_without(cfg, "K", "first", "divergence", "seed"), seed=seed)
    _, report = boost(target, run_cfg,
                      exact_fkl=lambda q: exact_fkl_quadrature_1d(target.log_density, q, grid, tail))
    return [CurveRow(method, r.iteration, seed, "quadrature_fkl", r.exact_fkl) for r in report.records]


def _without(cfg: BoostConfig, *names) -> dict:
    return {k: v for k, v in vars(cfg).items() if k not in names}


def run_cauchy_experiment(cfg: BoostConfig | None = None, seeds=range(10), methods=("fkl-vb", "rkl-vb"),
                          grid=CAUCHY_GRID, max_tail_mass: float = CAUCHY_MAX_TAIL_MASS, jobs: int = 1):
    """Quadrature FKL of the boosted proposal after each iteration, per method and seed."""
    cfg = cfg or experiment_config("cauchy")
    tasks = [(m, int(s), cfg, grid, max_tail_mass) for m in methods for s in seeds]
    return [row for rows in _pmap(_cauchy_run, tasks, jobs) for row in rows]


# GMM-20 -----------------------------------------------------------------------

def _gmm20_run(args):
    method, seed, cfg, n_exact, n_moment, moment_reps, grid_n, keep_grids = args
    target = gmm20_target()
    run_cfg = BoostConfig.for_method(method, K=cfg.K, **_without(cfg, "K", "first", "divergence", "seed"), seed=seed)
    _, report = boost(target, run_cfg)
    rng = np.random.default_rng([seed, 20])
    rows, grids = [], {}
    for r in report.records:
        q = report.proposal_at(r.iteration)
        rows.append(CurveRow(method, r.iteration, seed, "exact_fkl", exact_fkl_mc(target.sample, target.log_density, q, n_exact, rng)))
        rows.append(CurveRow(method, r.iteration, seed, "moment_mse",
                             moment_mse(q, target, target.true_mean, target.true_cov_diag, n_moment, rng, moment_reps)))
        g = residual_grid(target, q, n=grid_n)
        rows.append(CurveRow(method, r.iteration, seed, "max_log_residual", float(g.max())))
        if keep_grids:
            grids[(method, seed, r.iteration)] = g
    return rows, grids


def run_gmm20_experiment(cfg: BoostConfig | None = None, seeds=range(5), methods=("fkl-vb",), n_exact: int = 20000,
                         n_moment: int = 2000, moment_reps: int = 20, grid_n: int = GMM20_GRID_N,
                         keep_grids: bool = False, jobs: int = 1):
    """Per-iteration exact-sample FKL, moment MSE and maximum grid residual.

    Returns ``(rows, grids)``; ``grids`` maps ``(method, seed, k)`` to the
    residual grid when ``keep_grids`` is set.
    """
    cfg = cfg or experiment_config("gmm20")
    tasks = [(m, int(s), cfg, n_exact, n_moment, moment_reps, grid_n, keep_grids) for m in methods for s in seeds]
    rows, grids = [], {}
    for r, g in _pmap(_gmm20_run, tasks, jobs):
        rows.extend(r)
        grids.update(g)
    return rows, grids


def write_residual_grids(directory, grids) -> list:
    import os

    paths = []
    for (method, seed, k), g in sorted(grids.items()):
        path = os.path.join(directory, f"residual_{method}_seed{seed}_k{k}.csv")
        atomic_write_csv(path, [f"c{j}" for j in range(g.shape[1])], g.tolist())
        paths.append(path)
    return paths


# Bayesian linear regression -------------------------------------------------------

_METHOD_RE = re.compile(r"^(rkl|fkl)_(vi|vb_(\d+))$")


def parse_method(tag: str):
    """``fkl_vb_3`` -> ``("fkl-vb", 3)``; ``rkl_vi`` -> ``("rkl-vi", 1)``; ``hmc`` -> ``("hmc", 0)``."""
    tag = tag.replace("-", "_")
    if tag == "hmc":
        return "hmc", 0
    m = _METHOD_RE.match(tag)
    if not m:
        raise ValueError(f"unknown method tag {tag!r}")
    if m.group(2) == "vi":
        return f"{m.group(1)}-vi", 1
    k = int(m.group(3))
    if k < 1:
        raise ValueError(f"component count in {tag!r} must be >= 1")
    return f"{m.group(1)}-vb", k


DEFAULT_BLR_METHODS = ("hmc", "rkl_vi", "rkl_vb_2", "rkl_vb_3", "fkl_vi", "fkl_vb_2", "fkl_vb_3")


def make_blr_target(train, prior: str, seed: int = 0, alpha: float = 1.0, tau: float = 1.0):
    if prior == "gaussian":
        return BlrGaussianTarget(train)
    if prior == "heavy":
        return BlrHeavyTailTarget(train, seed=seed)
    if prior == "conjugate":
        return BlrConjugateTarget(train, alpha=alpha, tau=tau)
    raise ValueError(f"unknown prior {prior!r}")


@dataclass(frozen=True)
class BlrSettings:
    prior: str = "gaussian"
    n_samples: int = 6000
    weighting: str = "is"
    alpha: float = 1.0
    tau: float = 1.0
    test_fraction: float = 0.1


def _blr_split(args):
    X, y, split, split_seed, methods, cfg, hmc_cfg, st = args
    tr, te = split_indices(len(y), split_seed, st.test_fraction)
    train, test = standardize_split(X, y, tr, te)
    target = make_blr_target(train, st.prior, split_seed, st.alpha, st.tau)
    rng = np.random.default_rng([split_seed, 1])
    rows = []
    if st.prior == "conjugate":
        rows.append(ResultRow("closed_form", split, "pred_logprob",
                              float(np.mean(target.predictive_closed_form(test.X, test.y)))))
    runs = {}
    for tag in methods:
        base, k = parse_method(tag)
        if base == "hmc":
            hc = replace(hmc_cfg, seed=split_seed)
            draws = hmc_sample(target, hc).reshape(-1, target.dim)
            value = posterior_predictive_logprob(test.X, test.y, draws, None, target)
            rows.append(ResultRow(tag, split, "pred_logprob", value))
            continue
        key = base if base.endswith("vb") else tag
        need = max(k, cfg.K if base.endswith("vb") else 1)
        if key not in runs or runs[key].proposal.k < k:
            run_cfg = BoostConfig.for_method(base, K=need, **_without(cfg, "K", "first", "divergence", "seed"),
                                             seed=split_seed)
            runs[key] = boost(target, run_cfg)[1]
        q = runs[key].proposal_at(k)
        batch = score_batch(sample(q, st.n_samples, rng), target)
        weights = batch.norm_weights if st.weighting == "is" else None
        rows.append(ResultRow(tag, split, "pred_logprob",
                              posterior_predictive_logprob(test.X, test.y, batch.points, weights, target)))
    return rows


def run_blr_experiment(dataset, prior: str = "gaussian", methods=DEFAULT_BLR_METHODS, n_splits: int = 20,
                       cfg: BoostConfig | None = None, hmc_cfg: HmcConfig | None = None, seed: int = 0,
                       n_samples: int = 6000, weighting: str = "is", alpha: float = 1.0, tau: float = 1.0,
                       jobs: int = 1):
    """Mean test predictive log probability per method and split.

    ``dataset`` is a CSV path or a raw ``(X, y)`` pair; split ``i`` uses seed
    ``seed + i`` for the 90/10 partition and for every fit on that split.
    Returns a list of :class:`ResultRow`.
    """
    if prior not in ("gaussian", "heavy", "conjugate"):
        raise ValueError(f"unknown prior {prior!r}")
    if weighting not in ("is", "uniform"):
        raise ValueError(f"weighting must be is or uniform, got {weighting!r}")
    for m in methods:
        parse_method(m)
    X, y = read_csv(dataset) if isinstance(dataset, (str, bytes)) or hasattr(dataset, "__fspath__") else dataset
    X, y = np.asarray(X, dtype=float), np.asarray(y, dtype=float)
    cfg = cfg or experiment_config("blr")
    hmc_cfg = hmc_cfg or HmcConfig(n_samples=2000, n_chains=3)
    st = BlrSettings(prior, n_samples, weighting, alpha, tau)
    tasks = [(X, y, i, seed + i, tuple(methods), cfg, hmc_cfg, st) for i in range(n_splits)]
    return [row for rows in _pmap(_blr_split, tasks, jobs) for row in rows]


def gmm20_true_moments(spec=None):
    spec = spec or make_gmm20_spec()
    t = gmm20_target(spec)
    return t.true_mean, t.true_cov_diag
