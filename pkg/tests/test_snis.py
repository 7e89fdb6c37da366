import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import gauss
from fklboost.mixture import MixtureProposal, WeightedBatch, sample
from fklboost.snis import (
    ess,
    log_mixture_with_new,
    score_batch,
    snis_boost_objective,
    snis_expectation,
    snis_fkl,
    stabilized_log_residual,
    stable_normalized_weights,
)
from fklboost.targets import CauchyTarget, GaussianTarget, ShiftedTarget

# log(e^-100 + e^-10) - log(2 e^-10), evaluated at 50 digits and rounded to double
RESIDUAL_AT_M100_M10 = -0.6931471805599453

GAUSS_KL = 0.5 * np.log(2.0) + 0.25 - 0.5


def _gauss_batch(S, seed, target=None):
    q = MixtureProposal.single(gauss(0, np.sqrt(2.0)))
    return score_batch(sample(q, S, seed), target or GaussianTarget([0.0], [1.0]))


def test_equal_logs_give_uniform_weights():
    lp = np.linspace(-3, 3, 7)
    w = stable_normalized_weights(lp, lp)
    assert np.all(w == 1.0 / 7)


def test_weights_large_ratio_no_overflow():
    w = stable_normalized_weights(np.array([1000.0, 0.0]), np.zeros(2))
    assert np.all(np.isfinite(w))
    np.testing.assert_array_equal(w, [1.0, 0.0])


def test_weights_errors():
    with pytest.raises(ValueError):
        stable_normalized_weights(np.array([]), np.array([]))
    with pytest.raises(ValueError):
        stable_normalized_weights(np.zeros(3), np.zeros(2))


@settings(max_examples=100, deadline=None)
@given(arrays(float, st.integers(1, 50), elements=st.floats(-1e150, 1e150)),
       st.floats(-1e6, 1e6))
def test_weights_on_simplex_and_shift_invariant(lp, c):
    lq = np.zeros_like(lp)
    w = stable_normalized_weights(lp, lq)
    assert np.all(np.isfinite(w)) and np.all(w >= 0)
    assert abs(w.sum() - 1.0) <= 1e-12
    if np.ptp(lp) < 1e3:
        w2 = stable_normalized_weights(lp + c, lq)
        np.testing.assert_allclose(w2, w, rtol=1e-6, atol=1e-12)


def test_self_fkl_zero():
    q = MixtureProposal.single(gauss([1.0, 2.0], [0.5, 3.0]))
    res = snis_fkl(score_batch(sample(q, 1000, 0), GaussianTarget([1.0, 2.0], [0.5, 3.0])))
    assert abs(res.value) < 1e-12
    assert res.ess == pytest.approx(1000)


def test_gaussian_kl_value():
    assert snis_fkl(_gauss_batch(100_000, 0)).value == pytest.approx(0.0965736, abs=0.01)


def test_fkl_invariant_to_target_constant():
    base = _gauss_batch(10_000, 1)
    ref = snis_fkl(base).value
    for c in (-1e6, -123.4, 0.5, 1e3, 1e6):
        shifted = score_batch(WeightedBatch(base.points, base.log_q), ShiftedTarget(GaussianTarget([0.0], [1.0]), c))
        # floating-point rounding of log p + c is the only source of difference
        assert snis_fkl(shifted).value == pytest.approx(ref, abs=1e-8)


def test_unscored_batch_rejected():
    q = MixtureProposal.single(gauss(0, 1))
    with pytest.raises(ValueError):
        snis_fkl(sample(q, 10, 0))


def test_ess_bounds():
    res = snis_fkl(score_batch(sample(MixtureProposal.single(gauss(0, 1)), 500, 0), CauchyTarget()))
    assert 1.0 <= res.ess <= 500


def test_boost_objective_gamma_zero():
    b = _gauss_batch(500, 2)
    assert snis_boost_objective(b, gauss(3, 1), 0.0) == snis_fkl(b).value


def test_boost_objective_constant_when_f_equals_q():
    b = _gauss_batch(500, 3)
    f = gauss(0, np.sqrt(2.0))
    vals = [snis_boost_objective(b, f, g) for g in (0.0, 0.1, 0.5, 0.9, 1.0)]
    np.testing.assert_allclose(vals, vals[0], atol=1e-12)


def test_boost_objective_brute_force():
    rng = np.random.default_rng(4)
    q = MixtureProposal.single(gauss(0.5, 1.5))
    b = score_batch(sample(q, 5, rng), CauchyTarget())
    f, g = gauss(-1.0, 0.7), 0.3
    x = b.points[:, 0]
    p = 1.0 / (np.pi * (1 + x * x))
    qv = np.exp(-0.5 * ((x - 0.5) / 1.5) ** 2) / (1.5 * np.sqrt(2 * np.pi))
    fv = np.exp(-0.5 * ((x + 1.0) / 0.7) ** 2) / (0.7 * np.sqrt(2 * np.pi))
    w = (p / qv) / np.sum(p / qv)
    expected = np.sum(w * np.log(p / (g * fv + (1 - g) * qv))) - np.log(np.mean(p / qv))
    assert snis_boost_objective(b, f, g) == pytest.approx(expected, rel=1e-12)


def test_boost_objective_gamma_range():
    b = _gauss_batch(10, 0)
    with pytest.raises(ValueError):
        snis_boost_objective(b, gauss(0, 1), 1.5)
    with pytest.raises(ValueError):
        snis_boost_objective(b, gauss(0, 1), -0.1)


def test_log_mixture_with_new_endpoints():
    a, b = np.array([-1.0, -5.0]), np.array([-3.0, -2.0])
    np.testing.assert_array_equal(log_mixture_with_new(a, b, 0.0), a)
    np.testing.assert_array_equal(log_mixture_with_new(a, b, 1.0), b)
    np.testing.assert_allclose(log_mixture_with_new(a, b, 0.25), np.log(0.25 * np.exp(b) + 0.75 * np.exp(a)))


def test_expectation_examples():
    f = np.array([1.0, 2.0, 3.0])
    assert snis_expectation(f, np.full(3, 1 / 3)) == pytest.approx(2.0)
    assert snis_expectation(f, np.array([0.0, 1.0, 0.0])) == 2.0
    assert snis_expectation(f, np.array([0.5, 0.25, 0.25])) == pytest.approx(1.75)
    vec = snis_expectation(np.array([[1.0, 0.0], [0.0, 1.0]]), np.array([0.25, 0.75]))
    np.testing.assert_allclose(vec, [0.25, 0.75])


def test_ess_examples():
    assert ess(np.full(8, 1 / 8)) == pytest.approx(8)
    assert ess(np.array([0.0, 1.0, 0.0])) == 1.0
    assert ess(np.array([0.5, 0.25, 0.25])) == pytest.approx(2.6667, abs=1e-4)


def test_stabilized_residual_examples():
    assert stabilized_log_residual(-3.0, -3.0) == 0.0
    assert stabilized_log_residual(-100.0, -10.0) == pytest.approx(RESIDUAL_AT_M100_M10, abs=1e-15)


@given(st.floats(-200, 200), st.floats(0.001, 50), st.floats(-200, 200))
def test_stabilized_residual_monotone(lp, delta, lq):
    assert stabilized_log_residual(lp + delta, lq) >= stabilized_log_residual(lp, lq)


def test_error_shrinks_with_sample_size():
    errs = []
    for S in (100, 1000, 10_000, 100_000):
        errs.append(np.median([abs(snis_fkl(_gauss_batch(S, seed)).value - GAUSS_KL) for seed in range(20)]))
    assert all(b <= a for a, b in zip(errs, errs[1:])), errs
