"""Minibatch conditional flow matching on the joint (y, theta) space."""
from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass, field as dc_field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from .errors import ConfigurationError, ShapeError, TrainingDivergedError
from .field import BlockTriangularField, make_field, picnn_param_grads
from .nn import adam_init, adam_step, mlp_backward, mlp_forward_cached

log = logging.getLogger(__name__)

SOURCES = ("gaussian", "spherical_uniform")
COUPLINGS = ("ot_y", "independent")
LR_SCHEDULES = ("constant", "cosine")


@dataclass
class TrainConfig:
    steps: int = 20000
    lr: float = 1e-3
    batch: int = 256
    sigma: float = 0.0
    source: str = "gaussian"
    standardize: bool = True
    weight_decay: float = 0.0
    seed: int = 0
    eval_every: int = 1000
    coupling: str = "ot_y"
    lr_schedule: str = "constant"
    theta_scale: float = 1.0

    def validate(self, num_rows=None):
        if self.steps < 1 or self.batch < 1:
            raise ConfigurationError("steps and batch must be positive")
        if self.sigma < 0:
            raise ConfigurationError("sigma must be nonnegative")
        if self.source not in SOURCES:
            raise ConfigurationError(f"unknown source {self.source!r}")
        if self.coupling not in COUPLINGS:
            raise ConfigurationError(f"unknown coupling {self.coupling!r}")
        if not self.theta_scale > 0:
            raise ConfigurationError("theta_scale must be positive")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ConfigurationError(f"unknown lr schedule {self.lr_schedule!r}")
        if num_rows is not None and self.batch > num_rows:
            raise ConfigurationError(f"batch {self.batch} exceeds dataset size {num_rows}")


@dataclass
class ArchConfig:
    kind: str = "plain"
    hidden: tuple = (64, 64, 64, 64)
    activation: str = "elu"
    picnn_hidden: tuple = (64, 64, 64)
    context_hidden: tuple = (64, 64)
    alpha: float = 1e-2
    alpha_trainable: bool = False

    def to_dict(self):
        out = asdict(self)
        for k in ("hidden", "picnn_hidden", "context_hidden"):
            out[k] = list(out[k])
        return out

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for k in ("hidden", "picnn_hidden", "context_hidden"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


# ---------------------------------------------------------------------------
# data and standardization


@dataclass
class JointDataset:
    y: np.ndarray
    theta: np.ndarray
    task: str = ""
    seed: int = 0
    meta: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        self.y = np.atleast_2d(np.asarray(self.y, dtype=float))
        self.theta = np.atleast_2d(np.asarray(self.theta, dtype=float))
        if self.y.shape[0] != self.theta.shape[0]:
            raise ShapeError("y and theta row counts differ")
        if not (np.all(np.isfinite(self.y)) and np.all(np.isfinite(self.theta))):
            raise ConfigurationError("dataset contains non-finite entries")

    @property
    def n(self):
        return self.y.shape[1]

    @property
    def d(self):
        return self.theta.shape[1]

    def __len__(self):
        return self.y.shape[0]

    @property
    def data(self):
        return np.hstack([self.y, self.theta])


@dataclass
class ScalerStats:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def identity(cls, dim):
        return cls(np.zeros(dim), np.ones(dim))

    def apply(self, x):
        return (np.asarray(x, dtype=float) - self.mean) / self.std

    def invert(self, x):
        return np.asarray(x, dtype=float) * self.std + self.mean


STD_FLOOR = 1e-8


def fit_scaler(dataset):
    x = dataset.data if isinstance(dataset, JointDataset) else np.asarray(dataset, float)
    if x.shape[0] < 2:
        raise ConfigurationError("need at least two rows to fit a scaler")
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    if np.any(std < STD_FLOOR):
        warnings.warn("constant column in dataset; std floored", RuntimeWarning)
        std = np.maximum(std, STD_FLOOR)
    return ScalerStats(mean, std)


def apply_scaler(stats, x):
    return stats.apply(x)


def invert_scaler(stats, x):
    return stats.invert(x)


# ---------------------------------------------------------------------------
# source, paths, targets


def spherical_uniform(num, dim, rng):
    """``r * phi`` with ``r ~ U(0, 1)`` and ``phi`` uniform on the unit sphere."""
    z = rng.standard_normal((num, dim))
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return rng.uniform(size=(num, 1)) * z / norms


def sample_source(source, num, n, d, rng):
    """Draw ``num`` joint source rows of width ``n + d``.

    In spherical mode the y- and theta-blocks are independent spherical
    uniforms of their own dimension.
    """
    if source == "gaussian":
        return rng.standard_normal((num, n + d))
    if source == "spherical_uniform":
        return np.hstack([spherical_uniform(num, n, rng), spherical_uniform(num, d, rng)])
    raise ConfigurationError(f"unknown source {source!r}")


def sample_theta_source(source, num, d, rng):
    """The theta-block of the source alone."""
    if source == "gaussian":
        return rng.standard_normal((num, d))
    if source == "spherical_uniform":
        return spherical_uniform(num, d, rng)
    raise ConfigurationError(f"unknown source {source!r}")


def couple_y(y0, y1):
    """Reorder source rows ``y0`` to a minibatch optimal-transport match of ``y1``.

    With squared-Euclidean cost; in one dimension this is the sorted
    (monotone) matching. Straight y-paths under this pairing rarely cross,
    so ``y_t`` nearly determines ``y_1`` and the y-velocity needs no theta.
    """
    if y0.shape[1] == 1:
        out = np.empty_like(y0)
        out[np.argsort(y1[:, 0], kind="stable")] = np.sort(y0, axis=0)
        return out
    _, cols = linear_sum_assignment(cdist(y1, y0, "sqeuclidean"))
    return y0[cols]


def interpolate(x0, x1, t, sigma=0.0, rng=None):
    t = np.asarray(t, dtype=float).reshape(-1, 1) if np.ndim(t) else float(t)
    xt = (1.0 - t) * x0 + t * x1
    if sigma > 0:
        xt = xt + sigma * rng.standard_normal(np.shape(xt))
    return xt


def target_velocity(x0, x1, xt=None, t=None, sigma=0.0, dsigma=0.0):
    """Conditional velocity ``(sigma'/sigma)(x - mu_t) + mu_t'``.

    Only constant noise schedules are supported, so the first term vanishes.
    """
    if dsigma != 0.0:
        raise ConfigurationError("time-varying sigma schedules are not supported")
    return np.asarray(x1, dtype=float) - np.asarray(x0, dtype=float)


# ---------------------------------------------------------------------------
# loss


def cfm_loss_and_grads(field: BlockTriangularField, x1, rng, sigma=0.0,
                       source="gaussian", coupling="ot_y", theta_scale=1.0):
    """Monte Carlo CFM loss on a minibatch and its parameter gradients.

    ``x1`` holds (already standardized) joint rows. Returns ``(loss, grads)``
    with ``grads`` aligned to ``field.parameters()``. ``coupling="ot_y"``
    pairs the y-block of the source with the data by minibatch OT while the
    theta-block stays independent; ``"independent"`` pairs at random. The
    theta-block of the source is multiplied by ``theta_scale``.
    """
    x1 = np.asarray(x1, dtype=float)
    B = x1.shape[0]
    n, d = field.n, field.d
    x0 = sample_source(source, B, n, d, rng)
    x0[:, n:] *= theta_scale
    if coupling == "ot_y":
        x0[:, :n] = couple_y(x0[:, :n], x1[:, :n])
    elif coupling != "independent":
        raise ConfigurationError(f"unknown coupling {coupling!r}")
    t = rng.uniform(size=B)
    xt = interpolate(x0, x1, t, sigma, rng)
    v = target_velocity(x0, x1)
    yt = np.concatenate([xt[:, :n], t[:, None]], axis=1)
    theta_t = xt[:, n:]

    vy, f_cache = mlp_forward_cached(field.f_net, yt)
    res_y = vy - v[:, :n]
    f_grads, _ = mlp_backward(field.f_net, yt, 2.0 * res_y / B, cache=f_cache)

    if field.kind == "plain":
        gin = np.concatenate([xt, t[:, None]], axis=1)
        vth, g_cache = mlp_forward_cached(field.g_net, gin)
        res_th = vth - v[:, n:]
        g_grads, _ = mlp_backward(field.g_net, gin, 2.0 * res_th / B, cache=g_cache)
        g_grads = g_grads.arrays()
    else:
        box = {}

        def upstream(g):
            box["res"] = g - v[:, n:]
            return 2.0 * box["res"] / B

        g_grads = picnn_param_grads(field.g_net, xt[:, :n], theta_t, t, upstream)
        res_th = box["res"]

    loss = (np.sum(res_y**2) + np.sum(res_th**2)) / B
    if not np.isfinite(loss):
        per_row = np.sum(res_y**2, 1) + np.sum(res_th**2, 1)
        bad = int(np.flatnonzero(~np.isfinite(per_row))[0])
        raise TrainingDivergedError(-1, f"batch row {bad}, t={t[bad]:.4f}")
    return float(loss), f_grads.arrays() + list(g_grads)


# ---------------------------------------------------------------------------
# model and training


@dataclass
class VelocityModel:
    field: BlockTriangularField
    scaler: ScalerStats
    source: str
    arch: ArchConfig
    config: TrainConfig

    @property
    def n(self):
        return self.field.n

    @property
    def d(self):
        return self.field.d

    @property
    def theta_scale(self):
        """Radius of the theta-source in standardized units. Reference points
        ``u`` (unit ball or standard normal) enter the flow as ``theta_scale * u``."""
        return self.config.theta_scale

    def scale_y(self, y):
        n = self.n
        return (np.asarray(y, dtype=float) - self.scaler.mean[:n]) / self.scaler.std[:n]

    def unscale_y(self, y):
        n = self.n
        return np.asarray(y, dtype=float) * self.scaler.std[:n] + self.scaler.mean[:n]

    def scale_theta(self, theta):
        n = self.n
        return (np.asarray(theta, dtype=float) - self.scaler.mean[n:]) / self.scaler.std[n:]

    def unscale_theta(self, theta):
        n = self.n
        return np.asarray(theta, dtype=float) * self.scaler.std[n:] + self.scaler.mean[n:]


def default_arch(n, kind="plain"):
    """Four hidden layers of width 64, widened proportionally once n > 8."""
    width = 64 * max(1, int(np.ceil(n / 8)))
    return ArchConfig(kind=kind, hidden=(width,) * 4)


def train(dataset: JointDataset, arch: ArchConfig | None = None,
          config: TrainConfig | None = None, callback=None):
    """Fit a block-triangular field by CFM.

    Minibatches are drawn with replacement and fresh source noise is drawn
    every step. Returns ``(model, loss_history)``.
    """
    config = config or TrainConfig()
    arch = arch or default_arch(dataset.n)
    if len(dataset) == 0:
        raise ConfigurationError("empty dataset")
    config.validate(len(dataset))
    rng = np.random.default_rng(config.seed)
    scaler = fit_scaler(dataset) if config.standardize else ScalerStats.identity(
        dataset.n + dataset.d)
    x = scaler.apply(dataset.data)
    field = make_field(
        dataset.n, dataset.d, arch.kind, arch.hidden, arch.activation,
        arch.picnn_hidden, arch.context_hidden, arch.alpha, arch.alpha_trainable,
        seed=config.seed,
    )
    params = field.parameters()
    opt = adam_init(params, lr=config.lr, weight_decay=config.weight_decay)
    history = np.empty(config.steps)
    N = len(dataset)
    for step in range(config.steps):
        if config.lr_schedule == "cosine":
            opt.lr = 0.5 * config.lr * (1.0 + np.cos(np.pi * step / config.steps))
        idx = rng.integers(0, N, size=config.batch)
        try:
            loss, grads = cfm_loss_and_grads(field, x[idx], rng, config.sigma,
                                             config.source, config.coupling,
                                             config.theta_scale)
        except TrainingDivergedError as err:
            raise TrainingDivergedError(step, str(err)) from None
        adam_step(params, grads, opt)
        if arch.kind == "monotone" and arch.alpha_trainable:
            np.maximum(field.g_net.alpha, 0.0, out=field.g_net.alpha)
        history[step] = loss
        if config.eval_every and (step + 1) % config.eval_every == 0:
            log.info("step %d  loss %.5f", step + 1,
                     history[max(0, step + 1 - config.eval_every):step + 1].mean())
            if callback is not None:
                callback(step + 1, history[:step + 1])
    model = VelocityModel(field, scaler, config.source, arch, config)
    return model, history
