import json

import numpy as np
import pytest

from conftest import gauss
from fklboost.boost import (
    BoostConfig,
    boost,
    fit_fkl_component,
    fit_fkl_vi,
    fit_rkl_vi,
    fully_corrective_weights,
    init_new_component,
)
from fklboost.errors import NumericalError
from fklboost.harness import exact_fkl_quadrature_1d, experiment_config, median_curve, run_cauchy_experiment
from fklboost.mixture import Component, MixtureProposal, add_component
from fklboost.targets import CauchyTarget, GaussianMixtureTarget, GaussianTarget, Target, bimodal_target

VI = dict(steps_per_component=1000, lr_mean=0.1, lr_scale=0.1, init_sigma=0.01)
COMPONENT = dict(steps_per_component=400, lr_mean=0.1, lr_scale=0.1, lr_gamma=0.1)
BIMODAL_GRID = (-40.0, 40.0, 200_001)


class NanTarget(Target):
    dim = 1

    def _log_density(self, x):
        return np.full(x.shape[0], np.nan)

    def _grad(self, x):
        return np.full_like(x, np.nan)


def test_config_validation():
    with pytest.raises(ValueError, match="K"):
        BoostConfig(K=0)
    with pytest.raises(ValueError, match="lr_mean"):
        BoostConfig(lr_mean=-1.0)
    with pytest.raises(ValueError, match="divergence"):
        BoostConfig(divergence="hellinger")
    with pytest.raises(ValueError):
        BoostConfig(component_kind="student_t")
    with pytest.raises(ValueError):
        BoostConfig.for_method("mcmc")
    assert BoostConfig.for_method("fkl_vb", K=4).K == 4
    assert BoostConfig.for_method("rkl-vi").divergence == "rkl"


# single-component fits ------------------------------------------------------------

def test_rkl_vi_recovers_gaussian():
    f = fit_rkl_vi(GaussianTarget([3.0], [1.0]), BoostConfig(**VI))
    assert abs(f.mean[0] - 3.0) < 0.1
    assert abs(f.std[0] - 1.0) < 0.1


def test_rkl_vi_recovers_diagonal_scales():
    f = fit_rkl_vi(GaussianTarget([0.0, 0.0], [1.0, 2.0]), BoostConfig(**VI))
    np.testing.assert_allclose(f.std, [1.0, 2.0], rtol=0.15)


def test_rkl_vi_seeks_one_mode():
    f = fit_rkl_vi(bimodal_target(), BoostConfig(**VI, seed=1))
    assert abs(abs(f.mean[0]) - 4.0) < 0.5


def test_fkl_vi_recovers_gaussian_mean():
    f = fit_fkl_vi(GaussianTarget([3.0], [1.0]), BoostConfig(**VI))
    assert abs(f.mean[0] - 3.0) < 0.1


MASS_COVERING_XFAIL = (
    "the reverse-KL warm start converges onto one region and self-sampled forward-KL refinement cannot see "
    "mass its own draws never reach, so with a converged reverse-KL fit the two scales coincide (bimodal) "
    "or differ only by noise (Cauchy) at in-grid batch sizes")


@pytest.mark.xfail(strict=True, reason=MASS_COVERING_XFAIL)
@pytest.mark.parametrize("target", [bimodal_target(), CauchyTarget()], ids=["bimodal", "cauchy"])
def test_fkl_vi_covers_more_mass_than_rkl_vi(target):
    for seed in range(5):
        cfg = BoostConfig(**VI, seed=seed)
        assert fit_fkl_vi(target, cfg).std[0] > fit_rkl_vi(target, cfg).std[0]


def test_fkl_vi_wider_on_cauchy_with_large_batches():
    fkl, rkl = [], []
    for seed in range(5):
        cfg = BoostConfig(**VI, samples_per_batch=1000, seed=seed)
        fkl.append(fit_fkl_vi(CauchyTarget(), cfg).std[0])
        rkl.append(fit_rkl_vi(CauchyTarget(), cfg).std[0])
    assert np.median(fkl) > np.median(rkl)


def test_non_finite_objective_reports_step():
    with pytest.raises(NumericalError, match="step 0"):
        fit_rkl_vi(NanTarget(), BoostConfig(**VI))


# residual-mode initializer ------------------------------------------------------------

def test_initializer_finds_uncovered_mode():
    q_prev = MixtureProposal.single(gauss(-4, 1))
    hits = sum(abs(init_new_component(bimodal_target(), q_prev, BoostConfig(), np.random.default_rng(s))[0] - 4.0) < 1.0
               for s in range(10))
    assert hits >= 8


def test_initializer_stays_in_bulk_when_residual_is_flat():
    q_prev = MixtureProposal.single(gauss([1.0, -1.0], [1.0, 2.0]))
    target = GaussianTarget([1.0, -1.0], [1.0, 2.0])
    for s in range(5):
        x = init_new_component(target, q_prev, BoostConfig(), np.random.default_rng(s))
        assert np.all(np.abs(x - q_prev.components[0].mean) < 3 * q_prev.components[0].std)


def test_initializer_unimodal_target():
    q_prev = MixtureProposal.single(gauss(0, 5))
    x = init_new_component(GaussianTarget([2.0], [1.0]), q_prev, BoostConfig(), np.random.default_rng(0))
    assert abs(x[0] - 2.0) < 0.5


# component fitting ------------------------------------------------------------------------

def test_component_unneeded_when_target_is_q_prev():
    q_prev = MixtureProposal.single(gauss(1, 2))
    target = GaussianTarget([1.0], [2.0])
    gammas = [fit_fkl_component(target, q_prev, BoostConfig(**COMPONENT), np.random.default_rng(s)).gamma
              for s in range(10)]
    assert np.median(gammas) < 0.1


def test_component_covers_second_mode():
    target = bimodal_target()
    q_prev = MixtureProposal.single(gauss(-4, 3))
    before = exact_fkl_quadrature_1d(target.log_density, q_prev, BIMODAL_GRID)
    cfg = BoostConfig(**COMPONENT, samples_per_batch=200)
    for s in range(3):
        fit = fit_fkl_component(target, q_prev, cfg, np.random.default_rng(s))
        assert fit.accepted and fit.objective < fit.baseline
        q2 = add_component(q_prev, fit.component, fit.gamma)
        assert exact_fkl_quadrature_1d(target.log_density, q2, BIMODAL_GRID) < before
        assert abs(fit.component.mean[0] - 4.0) < 1.5


def test_batch_estimate_error_shrinks_with_sample_size():
    # the component fit starts from the SNIS estimate of q_prev on its batch; see how that tracks the truth
    target = CauchyTarget()
    q_prev = MixtureProposal.single(gauss(0, 5))
    exact = exact_fkl_quadrature_1d(target.log_density, q_prev, max_tail_mass=0.01)
    errs = {}
    for S in (25, 200):
        cfg = BoostConfig(**{**COMPONENT, "samples_per_batch": S, "steps_per_component": 1})
        errs[S] = np.median([abs(fit_fkl_component(target, q_prev, cfg, np.random.default_rng(s)).baseline - exact)
                             for s in range(30)])
    assert errs[200] <= errs[25]


# fully-corrective weights ------------------------------------------------------------------

def _two_mode():
    target = GaussianMixtureTarget([[-3.0], [3.0]], [1.0, 1.0], [0.7, 0.3])
    q = MixtureProposal((gauss(-3, 1), gauss(3, 1)), [0.5, 0.5])
    return target, q


def test_fully_corrective_recovers_weights():
    target, q = _two_mode()
    q2, trace = fully_corrective_weights(target, q, BoostConfig(), np.random.default_rng(0))
    np.testing.assert_allclose(q2.weights, [0.7, 0.3], atol=0.05)
    assert all(b <= a for a, b in zip(trace, trace[1:]))


def test_fully_corrective_identical_components():
    c = gauss(0, 1)
    q = MixtureProposal((c, c), [0.4, 0.6])
    _, trace = fully_corrective_weights(CauchyTarget(), q, BoostConfig(), np.random.default_rng(0))
    assert np.ptp(trace) < 1e-8


def test_fully_corrective_rkl_non_increasing():
    target, q = _two_mode()
    q2, trace = fully_corrective_weights(target, q, BoostConfig(), np.random.default_rng(0), divergence="rkl")
    assert all(b <= a for a, b in zip(trace, trace[1:]))
    assert abs(q2.weights.sum() - 1.0) <= 1e-12


# full runs -------------------------------------------------------------------------------------

def test_k1_reduces_to_vi():
    target = GaussianTarget([1.0], [2.0])
    cfg = BoostConfig.for_method("rkl-vi", **VI, seed=3)
    q, report = boost(target, cfg)
    f = fit_rkl_vi(target, cfg)
    np.testing.assert_array_equal(q.components[0].mean, f.mean)
    np.testing.assert_array_equal(q.components[0].root_scale, f.root_scale)
    cfg = BoostConfig.for_method("fkl-vi", **VI, seed=3)
    q, _ = boost(target, cfg)
    np.testing.assert_array_equal(q.components[0].mean, fit_fkl_vi(target, cfg).mean)
    assert len(report.records) == 1


def test_boost_report_and_invariants():
    cfg = experiment_config("cauchy", K=3, steps_per_component=300, seed=1)
    q, report = boost(bimodal_target(), cfg)
    assert q.k == 3 and len(report.records) == 3
    for r in report.records:
        qk = report.proposal_at(r.iteration)
        assert qk.k == r.iteration
        assert abs(qk.weights.sum() - 1.0) <= 1e-12 and np.all(qk.weights >= 0)
        assert all(b <= a for a, b in zip(r.weight_trace, r.weight_trace[1:]))
    doc = json.loads(report.to_json())
    assert len(doc["records"]) == 3


def test_boost_bit_reproducible():
    cfg = experiment_config("cauchy", K=3, steps_per_component=200, seed=7)
    q1, r1 = boost(CauchyTarget(), cfg)
    q2, r2 = boost(CauchyTarget(), cfg)
    assert q1.to_json() == q2.to_json()
    assert r1.to_json(wallclock=False) == r2.to_json(wallclock=False)


def test_boost_student_t_components():
    cfg = experiment_config("cauchy", K=2, steps_per_component=200, component_kind="student_t", nu=3.0)
    q, _ = boost(CauchyTarget(), cfg)
    assert all(c.kind == "student_t" for c in q.components)


@pytest.mark.slow
def test_cauchy_boosting_improves_most_seeds():
    rows = run_cauchy_experiment(experiment_config("cauchy", K=5), seeds=range(10), methods=("fkl-vb",))
    v = {(r.seed, r.k): r.value for r in rows}
    assert sum(v[(s, 3)] < v[(s, 1)] for s in range(10)) >= 8
    curve = median_curve(rows, "fkl-vb", "quadrature_fkl")
    assert all(curve[k + 1] <= curve[k] for k in range(1, 5)), curve


def test_component_requires_finite_objective():
    q_prev = MixtureProposal.single(Component(np.array([0.0]), np.array([1.0])))
    with pytest.raises((NumericalError, ValueError)):
        fit_fkl_component(NanTarget(), q_prev, BoostConfig(**COMPONENT))
