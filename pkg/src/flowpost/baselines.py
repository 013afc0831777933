"""Reference samplers: random-walk Metropolis-Hastings and rejection ABC."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError

log = logging.getLogger(__name__)


@dataclass
class MhConfig:
    steps: int = 100_000
    burn_in: int = 1000
    thin: int = 1
    proposal_std: float = 1.0
    seed: int = 0

    def validate(self):
        if not 0 <= self.burn_in < self.steps:
            raise ConfigurationError("need 0 <= burn_in < steps")
        if self.thin < 1:
            raise ConfigurationError("thin must be >= 1")
        if not self.proposal_std > 0:
            raise ConfigurationError("proposal_std must be positive")
        return self


@dataclass
class MhResult:
    draws: np.ndarray
    acceptance_rate: float


def mh_sample(log_density, init, config: MhConfig):
    """Symmetric Gaussian random-walk Metropolis-Hastings.

    ``log_density`` maps a 1-D parameter vector to an (unnormalized) log
    density. Returns post-burn-in draws, thinned, and the acceptance rate
    over the whole chain.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    x = np.array(init, dtype=float).reshape(-1)
    lp = float(log_density(x))
    if not math.isfinite(lp):
        raise ValueError(f"log density is not finite at the initial point {x}")
    d = x.size
    steps = int(config.steps)
    noise = config.proposal_std * rng.standard_normal((steps, d))
    log_u = np.log(rng.uniform(size=steps))
    chain = np.empty((steps, d))
    accepted = 0
    for i in range(steps):
        prop = x + noise[i]
        lp_prop = float(log_density(prop))
        if lp_prop - lp >= log_u[i]:
            x, lp = prop, lp_prop
            accepted += 1
        chain[i] = x
    draws = chain[config.burn_in::config.thin]
    return MhResult(draws, accepted / steps)


@dataclass
class AbcResult:
    theta: np.ndarray
    acceptance_rate: float
    distances: np.ndarray


def rejection_abc(task, y_star, eps, budget, rng, scale=None):
    """Accept prior draws whose simulated data fall within ``eps`` of ``y_star``.

    Distances are Euclidean on standardized data: each coordinate is divided
    by ``scale`` (defaults to the per-coordinate std of the simulated batch).
    """
    if not eps > 0:
        raise ConfigurationError("eps must be positive")
    theta = task.prior_sample(int(budget), rng)
    y = task.simulate(theta, rng)
    if scale is None:
        scale = y.std(axis=0)
        scale = np.where(scale > 0, scale, 1.0)
    dist = np.linalg.norm((y - np.asarray(y_star, dtype=float)) / scale, axis=1)
    keep = dist <= eps
    if not keep.any():
        log.warning("rejection ABC: no acceptances within budget %d at eps=%g", budget, eps)
    return AbcResult(theta[keep], float(keep.mean()), dist)
