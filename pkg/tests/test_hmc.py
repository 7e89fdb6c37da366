import csv

import numpy as np
import pytest
from scipy import stats

from fklboost.blr import BlrConjugateTarget, raw_dataset, synthetic_linear
from fklboost.errors import NumericalError
from fklboost.hmc import HmcConfig, hamiltonian, hmc_sample, leapfrog, mc_standard_error, write_samples_csv
from fklboost.targets import GaussianMixtureTarget, GaussianTarget


def test_leapfrog_reversible():
    t = GaussianMixtureTarget([[0.0, 1.0], [2.0, -1.0]], [1.0, 0.5], [0.4, 0.6])
    rng = np.random.default_rng(0)
    for _ in range(5):
        th0, rho0 = rng.normal(size=2), rng.normal(size=2)
        th1, rho1 = leapfrog(th0, rho0, 0.05, 20, t.grad_log_density)
        th2, rho2 = leapfrog(th1, -rho1, 0.05, 20, t.grad_log_density)
        assert np.max(np.abs(th2 - th0)) < 1e-8
        assert np.max(np.abs(rho2 + rho0)) < 1e-8


def test_leapfrog_energy_drift():
    t = GaussianTarget(np.zeros(3), np.ones(3))
    th0, rho0 = np.array([0.5, -1.0, 2.0]), np.array([1.0, 0.3, -0.7])
    th, rho = leapfrog(th0, rho0, 1e-3, 10, t.grad_log_density)
    assert abs(hamiltonian(t.log_density, th, rho) - hamiltonian(t.log_density, th0, rho0)) < 1e-4


def test_leapfrog_zero_steps_is_identity():
    th0, rho0 = np.array([1.0, 2.0]), np.array([-0.5, 0.5])
    th, rho = leapfrog(th0, rho0, 0.1, 0, lambda x: -x)
    np.testing.assert_array_equal(th, th0)
    np.testing.assert_array_equal(rho, rho0)


def test_leapfrog_non_finite_signals_rejection():
    _, rho = leapfrog(np.array([1.0]), np.array([1.0]), 0.1, 5, lambda x: np.full_like(x, np.inf))
    assert not np.all(np.isfinite(rho))


def test_config_validation():
    with pytest.raises(ValueError):
        HmcConfig(step_size=0.0)
    with pytest.raises(ValueError):
        HmcConfig(target_accept=1.5)
    with pytest.raises(ValueError):
        HmcConfig(n_samples=-1)


def test_standard_gaussian_moments():
    draws = hmc_sample(GaussianTarget(np.zeros(5), np.ones(5)), HmcConfig(n_samples=2000, seed=1))
    assert draws.shape == (1, 2000, 5)
    x = draws[0]
    assert np.all(np.abs(x.mean(axis=0)) < 0.1)
    assert np.all(np.abs(x.var(axis=0) - 1.0) < 0.15)


def test_tiny_step_accepts_everything():
    t = GaussianMixtureTarget([[0.0], [3.0]], [1.0, 0.5], [0.5, 0.5])
    cfg = HmcConfig(step_size=1e-6, adapt=False, burn_in=0, n_samples=50, jitter=0.0)
    _, info = hmc_sample(t, cfg, return_info=True)
    assert info.sample_accept[0] > 0.999


def test_ks_against_exact_draws():
    draws = hmc_sample(GaussianTarget([0.0], [1.0]), HmcConfig(n_samples=25_000, seed=2))[0, ::5, 0]
    exact = np.random.default_rng(3).standard_normal(5000)
    assert stats.ks_2samp(draws, exact).statistic < 0.05


def test_conjugate_blr_mean():
    X, y, _ = synthetic_linear(n=200, d=5, seed=0)
    t = BlrConjugateTarget(raw_dataset(X, y), alpha=1.0, tau=4.0)
    draws = hmc_sample(t, HmcConfig(n_samples=2000, n_chains=3, seed=0))
    se = mc_standard_error(draws)
    z = (draws.reshape(-1, t.dim).mean(axis=0) - t.post_mean) / se
    assert np.all(np.abs(z) < 3), z


def test_chains_agree_and_differ():
    t = GaussianTarget([1.0, -2.0], [1.0, 3.0])
    draws = hmc_sample(t, HmcConfig(n_samples=2000, n_chains=2, seed=4))
    assert not np.array_equal(draws[0], draws[1])
    m = draws.mean(axis=1)
    se = np.stack([mc_standard_error(draws[i:i + 1]) for i in range(2)])
    assert np.all(np.abs(m[0] - m[1]) < 3 * np.sqrt(se[0] ** 2 + se[1] ** 2))


def test_reproducible():
    t = GaussianTarget([0.0], [1.0])
    cfg = HmcConfig(n_samples=200, burn_in=100, adapt_steps=80, n_chains=2, seed=9)
    np.testing.assert_array_equal(hmc_sample(t, cfg), hmc_sample(t, cfg))


def test_low_acceptance_aborts():
    t = GaussianTarget(np.zeros(2), np.ones(2))
    with pytest.raises(NumericalError, match="acceptance"):
        hmc_sample(t, HmcConfig(step_size=50.0, adapt=False, burn_in=200, n_samples=10, jitter=0.0))


def test_standard_error_of_iid_draws():
    x = np.random.default_rng(0).standard_normal((2, 4000, 1))
    se = mc_standard_error(x)
    assert se[0] == pytest.approx(1 / np.sqrt(8000), rel=0.4)
    with pytest.raises(ValueError):
        mc_standard_error(np.zeros((1, 5, 1)))


def test_write_samples_csv(tmp_path):
    draws = np.random.default_rng(0).normal(size=(2, 3, 2))
    p = tmp_path / "s.csv"
    write_samples_csv(p, draws)
    rows = list(csv.reader(open(p)))
    assert rows[0] == ["chain", "draw", "theta_0", "theta_1"]
    assert len(rows) == 7
    assert float(rows[4][3]) == draws[1, 0, 1]
