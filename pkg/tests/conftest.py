import numpy as np
import pytest

from fklboost.mixture import Component, MixtureProposal


def rel_err(a, b) -> float:
    """``||a - b|| / ||b||`` with a tiny floor on the denominator."""
    a = np.ravel(np.asarray(a, dtype=float))
    b = np.ravel(np.asarray(b, dtype=float))
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12))


def gauss(mean, std) -> Component:
    return Component(np.atleast_1d(np.asarray(mean, dtype=float)), np.atleast_1d(np.asarray(std, dtype=float)))


def random_mixture(rng, d: int, k: int, spread: float = 2.0) -> MixtureProposal:
    comps = [gauss(rng.normal(0, spread, d), rng.uniform(0.5, 2.0, d)) for _ in range(k)]
    return MixtureProposal(comps, rng.dirichlet(np.ones(k)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
