import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from flowpost.cfm import (ArchConfig, JointDataset, ScalerStats, TrainConfig, cfm_loss_and_grads,
                          couple_y, default_arch, fit_scaler, interpolate, sample_source,
                          spherical_uniform, target_velocity, train)
from flowpost.errors import ConfigurationError, ShapeError
from flowpost.experiments import fd_check
from flowpost.field import make_field
from flowpost.tasks import funnel_task


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (20, 3), elements=st.floats(-1e3, 1e3)))
def test_scaler_round_trip(x):
    stats_ = fit_scaler(x) if np.all(x.std(axis=0) > 1e-6) else ScalerStats.identity(3)
    assert np.allclose(stats_.invert(stats_.apply(x)), x, rtol=1e-10, atol=1e-9)


def test_scaler_standardizes_and_floors_constant_columns():
    x = np.column_stack([np.arange(10.0), np.full(10, 5.0)])
    with pytest.warns(RuntimeWarning):
        s = fit_scaler(x)
    z = s.apply(x)
    assert z[:, 0].mean() == pytest.approx(0) and z[:, 0].std() == pytest.approx(1)
    assert np.all(np.isfinite(z)) and s.std[1] == 1e-8


def test_spherical_uniform_radius_law():
    z = spherical_uniform(20000, 3, np.random.default_rng(0))
    r = np.linalg.norm(z, axis=1)
    assert stats.kstest(r, "uniform").statistic < 0.015
    u = z / r[:, None]
    assert np.allclose(u.mean(axis=0), 0, atol=0.03)


def test_sources_have_block_structure():
    rng = np.random.default_rng(1)
    x = sample_source("spherical_uniform", 500, 2, 3, rng)
    assert x.shape == (500, 5)
    assert np.all(np.linalg.norm(x[:, :2], axis=1) <= 1)
    assert np.all(np.linalg.norm(x[:, 2:], axis=1) <= 1)
    with pytest.raises(ConfigurationError):
        sample_source("laplace", 2, 1, 1, rng)


def test_interpolation_endpoints_and_target():
    rng = np.random.default_rng(2)
    x0, x1 = rng.standard_normal((4, 3)), rng.standard_normal((4, 3))
    assert np.array_equal(interpolate(x0, x1, np.zeros(4)), x0)
    assert np.array_equal(interpolate(x0, x1, np.ones(4)), x1)
    assert np.array_equal(target_velocity(x0, x1), x1 - x0)
    with pytest.raises(ConfigurationError):
        target_velocity(x0, x1, dsigma=0.1)


def test_sorted_coupling_in_one_dimension():
    rng = np.random.default_rng(3)
    y0, y1 = rng.standard_normal((50, 1)), rng.standard_normal((50, 1))
    out = couple_y(y0, y1)
    assert np.array_equal(np.sort(out, axis=0), np.sort(y0, axis=0))
    order = np.argsort(y1[:, 0])
    assert np.all(np.diff(out[order, 0]) >= 0)


def test_ot_coupling_is_optimal_on_small_batches():
    rng = np.random.default_rng(4)
    y0, y1 = rng.standard_normal((6, 2)), rng.standard_normal((6, 2))
    out = couple_y(y0, y1)
    best = min(np.sum((y0[list(p)] - y1) ** 2) for p in itertools.permutations(range(6)))
    assert np.sum((out - y1) ** 2) == pytest.approx(best)


@pytest.mark.parametrize("kind", ["plain", "monotone"])
@pytest.mark.parametrize("coupling", ["ot_y", "independent"])
def test_loss_gradients_match_finite_differences(kind, coupling):
    field = make_field(2, 2, kind, hidden=(12, 12), picnn_hidden=(8, 8), context_hidden=(8,),
                       seed=1)
    x1 = np.random.default_rng(0).standard_normal((7, 4))

    def loss():
        return cfm_loss_and_grads(field, x1, np.random.default_rng(9), coupling=coupling)[0]

    _, g = cfm_loss_and_grads(field, x1, np.random.default_rng(9), coupling=coupling)
    assert fd_check(loss, field.parameters(), g) < 1e-6


def test_config_validation():
    with pytest.raises(ConfigurationError):
        TrainConfig(source="cauchy").validate()
    with pytest.raises(ConfigurationError):
        TrainConfig(coupling="sinkhorn").validate()
    with pytest.raises(ConfigurationError):
        TrainConfig(batch=64).validate(num_rows=10)
    with pytest.raises(ConfigurationError):
        TrainConfig(sigma=-1).validate()
    with pytest.raises(ConfigurationError):
        TrainConfig(theta_scale=0.0).validate()
    with pytest.raises(ConfigurationError):
        TrainConfig(lr_schedule="step").validate()


def test_dataset_checks():
    with pytest.raises(ShapeError):
        JointDataset(np.zeros((3, 1)), np.zeros((4, 1)))
    with pytest.raises(ConfigurationError):
        JointDataset(np.array([[np.nan]]), np.zeros((1, 1)))


def test_default_arch_widens_with_n():
    assert default_arch(8).hidden == (64,) * 4
    assert default_arch(16).hidden == (128,) * 4


def test_training_reduces_loss(small_funnel):
    _, hist = small_funnel
    assert hist[-50:].mean() < hist[:50].mean()


def test_training_is_deterministic_given_seed():
    ds = funnel_task().simulate_joint(300, seed=1)
    cfg = TrainConfig(steps=20, batch=32, seed=5)
    a, _ = train(ds, ArchConfig(hidden=(8,)), cfg)
    b, _ = train(ds, ArchConfig(hidden=(8,)), cfg)
    assert all(np.array_equal(p, q) for p, q in zip(a.field.parameters(), b.field.parameters()))


def test_arch_dict_round_trip():
    arch = ArchConfig(kind="monotone", hidden=(3, 4))
    assert ArchConfig.from_dict(arch.to_dict()) == arch
