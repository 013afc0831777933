import numpy as np
import pytest

from flowpost.cfm import ArchConfig, ScalerStats, TrainConfig, VelocityModel, train
from flowpost.field import make_field
from flowpost.tasks import funnel_task, gaussian_conjugate_task


def identity_model(n=2, d=2, source="spherical_uniform"):
    """A model whose theta-flow is the identity (g == 0, f == 0)."""
    field = make_field(n, d, "plain", hidden=(8, 8), seed=0)
    for net in (field.f_net, field.g_net):
        net.weights[-1][:] = 0.0
        net.biases[-1][:] = 0.0
    return VelocityModel(field, ScalerStats.identity(n + d), source, ArchConfig(), TrainConfig())


@pytest.fixture
def identity():
    return identity_model()


@pytest.fixture(scope="session")
def small_monotone():
    """A briefly trained monotone conjugate model (not accurate, just real)."""
    task = gaussian_conjugate_task(n=4)
    ds = task.simulate_joint(1000, seed=0)
    arch = ArchConfig(kind="monotone", picnn_hidden=(16, 16), context_hidden=(16,))
    model, _ = train(ds, arch, TrainConfig(steps=300, batch=128, seed=0,
                                           source="spherical_uniform"))
    return model, task


@pytest.fixture(scope="session")
def small_funnel():
    ds = funnel_task().simulate_joint(2000, seed=0)
    model, hist = train(ds, ArchConfig(hidden=(32, 32)), TrainConfig(steps=400, batch=128))
    return model, hist


_CRITERIA = []


@pytest.fixture
def record_criterion():
    """Keep criterion results so the terminal summary can list them together."""
    return _CRITERIA.append


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for r in sorted(_CRITERIA, key=lambda r: int(r.key[1:])):
        terminalreporter.write_line(r.line())
    passed = sum(r.passed for r in _CRITERIA)
    terminalreporter.write_line(f"{passed}/{len(_CRITERIA)} criteria passed")
