import numpy as np
import pytest

from flowpost.baselines import MhConfig, mh_sample, rejection_abc
from flowpost.errors import ConfigurationError
from flowpost.tasks import get_task


def std_normal(x):
    return -0.5 * float(x @ x)


def test_mh_recovers_a_gaussian():
    res = mh_sample(std_normal, [3.0, -3.0], MhConfig(steps=60_000, burn_in=2000, proposal_std=2.4))
    assert np.allclose(res.draws.mean(axis=0), 0, atol=0.06)
    assert np.allclose(res.draws.var(axis=0), 1, atol=0.08)
    assert 0.15 < res.acceptance_rate < 0.6


def test_tiny_proposals_are_almost_always_accepted():
    res = mh_sample(std_normal, [0.0], MhConfig(steps=2000, burn_in=0, proposal_std=1e-8))
    assert res.acceptance_rate > 0.999


def test_thinning_and_burn_in():
    res = mh_sample(std_normal, [0.0], MhConfig(steps=1000, burn_in=100, thin=3))
    assert res.draws.shape == (300, 1)


def test_mh_is_seeded():
    cfg = MhConfig(steps=500, burn_in=0, seed=7)
    assert np.array_equal(mh_sample(std_normal, [0.0], cfg).draws,
                          mh_sample(std_normal, [0.0], cfg).draws)


def test_mh_errors():
    with pytest.raises(ValueError):
        mh_sample(lambda x: -np.inf, [0.0], MhConfig(steps=10, burn_in=0))
    with pytest.raises(ConfigurationError):
        MhConfig(steps=10, burn_in=10).validate()
    with pytest.raises(ConfigurationError):
        MhConfig(proposal_std=0).validate()


def test_abc_acceptance_is_monotone_in_eps():
    task = get_task("gaussian_linear")
    _, y = task.observe(np.random.default_rng(0))
    rates = [rejection_abc(task, y, eps, 5000, np.random.default_rng(1)).acceptance_rate
             for eps in (6.0, 4.0, 3.0, 2.0)]
    assert all(a >= b for a, b in zip(rates, rates[1:]))


def test_abc_no_acceptances_is_empty(caplog):
    task = get_task("gaussian_linear")
    res = rejection_abc(task, np.full(10, 50.0), 0.01, 200, np.random.default_rng(0))
    assert res.theta.shape == (0, 10) and res.acceptance_rate == 0
    assert "no acceptances" in caplog.text
    with pytest.raises(ConfigurationError):
        rejection_abc(task, np.zeros(10), 0.0, 10, np.random.default_rng(0))
