"""Simulators, priors and ground-truth posteriors for the benchmark tasks.

Every task exposes a prior sampler and a vectorized simulator; tasks with a
tractable posterior additionally expose an unnormalized log-posterior (for
Metropolis-Hastings oracles) and/or an exact posterior sampler.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import logsumexp

from .cfm import JointDataset
from .errors import ConfigurationError


@dataclass
class TaskSpec:
    name: str
    n: int
    d: int
    prior_sample: Callable  # (num, rng) -> (num, d)
    simulate: Callable  # (theta (num, d), rng) -> (num, n)
    log_posterior: Optional[Callable] = None  # (theta (m, d), y (n,)) -> (m,)
    posterior_sample: Optional[Callable] = None  # (y, num, rng) -> (num, d)
    prior_name: str = ""
    meta: dict = field(default_factory=dict)

    def simulate_joint(self, num, rng=None, seed=0):
        rng = np.random.default_rng(seed) if rng is None else rng
        theta = self.prior_sample(int(num), rng)
        y = self.simulate(theta, rng)
        if y.shape != (int(num), self.n):
            raise AssertionError(f"{self.name}: simulator returned shape {y.shape}")
        return JointDataset(y, theta, task=self.name, seed=seed,
                            meta={"prior": self.prior_name, **self.meta})

    def observe(self, rng):
        """One ground-truth ``(theta, y)`` pair from prior and simulator."""
        theta = self.prior_sample(1, rng)
        return theta[0], self.simulate(theta, rng)[0]


# ---------------------------------------------------------------------------
# Neal's funnel: nu ~ N(0, 3^2), x | nu ~ N(0, e^nu)


def funnel_simulate(num, rng):
    nu = 3.0 * rng.standard_normal((num, 1))
    x = np.exp(0.5 * nu) * rng.standard_normal((num, 1))
    return JointDataset(x, nu, task="funnel")


def funnel_log_posterior(nu, x):
    """Unnormalized ``log p(nu | x)``: the prior term plus the N(0, e^nu)
    log-density of x (which contributes ``-nu/2 - e^-nu x^2 / 2``)."""
    nu = np.asarray(nu, dtype=float)
    return -(nu**2) / 18.0 - 0.5 * np.exp(-nu) * x**2 - 0.5 * nu


def funnel_task():
    def prior(num, rng):
        return 3.0 * rng.standard_normal((num, 1))

    def sim(theta, rng):
        return np.exp(0.5 * theta) * rng.standard_normal(theta.shape)

    def logpost(theta, y):
        return funnel_log_posterior(np.asarray(theta)[..., 0], float(np.ravel(y)[0]))

    return TaskSpec("funnel", 1, 1, prior, sim, logpost, prior_name="normal")


# ---------------------------------------------------------------------------
# Gaussian conjugate (normal / scaled-inverse-chi-squared)


def conjugate_update(x, mu0, kappa, nu0, sigma0_sq):
    """Posterior hyperparameters ``(mu_n, kappa_n, nu_n, sigma_n^2)``."""
    x = np.asarray(x, dtype=float).ravel()
    n = x.size
    if n == 0:
        return mu0, kappa, nu0, sigma0_sq
    xbar = x.mean()
    ss = np.sum((x - xbar) ** 2)
    kappa_n = kappa + n
    mu_n = (kappa * mu0 + n * xbar) / kappa_n
    nu_n = nu0 + n
    s2n = (nu0 * sigma0_sq + ss + kappa * n / kappa_n * (xbar - mu0) ** 2) / nu_n
    return mu_n, kappa_n, nu_n, s2n


def _nix_sample(num, rng, mu, kappa, nu, s2):
    var = nu * s2 / rng.chisquare(nu, size=num)
    m = mu + np.sqrt(var / kappa) * rng.standard_normal(num)
    return m, var


def gaussian_conjugate_task(n=8, mu0=0.0, kappa=1.0, nu0=4.0, sigma0_sq=1.0,
                            param="log_var"):
    """``x_j | mu, s2 ~ N(mu, s2)``, ``mu | s2 ~ N(mu0, s2/kappa)``,
    ``nu0 sigma0^2 / s2 ~ chi^2(nu0)``.

    ``param`` picks the theta coordinates: ``(mu, log s2)`` (default) or
    ``(mu, s2)``; the log-posterior includes the matching Jacobian.
    """
    if kappa <= 0 or nu0 <= 0 or sigma0_sq <= 0:
        raise ConfigurationError("conjugate hyperparameters must be positive")
    if param not in ("log_var", "var"):
        raise ConfigurationError(f"unknown parameterization {param!r}")
    log_coords = param == "log_var"

    def pack(m, var):
        return np.column_stack([m, np.log(var) if log_coords else var])

    def prior(num, rng):
        return pack(*_nix_sample(num, rng, mu0, kappa, nu0, sigma0_sq))

    def sim(theta, rng):
        var = np.exp(theta[:, 1]) if log_coords else theta[:, 1]
        z = rng.standard_normal((theta.shape[0], n))
        return theta[:, :1] + np.sqrt(var)[:, None] * z

    def post_params(y):
        return conjugate_update(y, mu0, kappa, nu0, sigma0_sq)

    def post_sample(y, num, rng):
        return pack(*_nix_sample(num, rng, *post_params(y)))

    def logpost(theta, y):
        theta = np.atleast_2d(theta)
        m = theta[:, 0]
        if log_coords:
            lv = theta[:, 1]
            var = np.exp(lv)
        else:
            var = theta[:, 1]
            bad = var <= 0
            var = np.where(bad, 1.0, var)
            lv = np.log(var)
        x = np.asarray(y, dtype=float).ravel()
        out = (-(0.5 * nu0 + 1.0) * lv - 0.5 * nu0 * sigma0_sq / var
               - 0.5 * lv - 0.5 * kappa * (m - mu0) ** 2 / var
               - 0.5 * x.size * lv
               - 0.5 * np.sum((x[None, :] - m[:, None]) ** 2, axis=1) / var)
        if log_coords:
            out = out + lv
        else:
            out = np.where(bad, -np.inf, out)
        return out

    spec = TaskSpec("conjugate", n, 2, prior, sim, logpost, post_sample,
                    prior_name="normal-inv-chi2",
                    meta={"param": param, "mu0": mu0, "kappa": kappa, "nu0": nu0,
                          "sigma0_sq": sigma0_sq})
    spec.posterior_params = post_params
    return spec


# ---------------------------------------------------------------------------
# SIR epidemic with seven summary statistics

SIR_I0 = 1e-3
SIR_DAYS = 300
SIR_DT = 0.5
SIR_SUMMARIES = ("peak_I", "t_peak", "mean_S", "mean_I", "mean_R", "corr_SI", "corr_IR")


def sir_trajectory(beta, gamma, i0=SIR_I0, days=SIR_DAYS, dt=SIR_DT):
    """RK4 solution on normalized compartments, sampled at integer days.

    Vectorized over parameter arrays; returns ``(S, I, R)`` each of shape
    ``(num, days + 1)``.
    """
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    gamma = np.atleast_1d(np.asarray(gamma, dtype=float))
    state = np.stack([np.full_like(beta, 1.0 - i0), np.full_like(beta, i0),
                      np.zeros_like(beta)])

    def rhs(x):
        inf = beta * x[0] * x[1]
        rec = gamma * x[1]
        return np.stack([-inf, inf - rec, rec])

    per_day = int(round(1.0 / dt))
    out = np.empty((3, beta.size, days + 1))
    out[:, :, 0] = state
    for day in range(1, days + 1):
        for _ in range(per_day):
            k1 = rhs(state)
            k2 = rhs(state + 0.5 * dt * k1)
            k3 = rhs(state + 0.5 * dt * k2)
            k4 = rhs(state + dt * k3)
            state = state + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        out[:, :, day] = state
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite SIR trajectory")
    return out[0], out[1], out[2]


def _pearson_rows(a, b):
    a = a - a.mean(axis=1, keepdims=True)
    b = b - b.mean(axis=1, keepdims=True)
    den = np.sqrt(np.sum(a * a, axis=1) * np.sum(b * b, axis=1))
    const = den <= 1e-300
    if np.any(const):
        warnings.warn("constant SIR series; correlation set to 0", RuntimeWarning)
    return np.where(const, 0.0, np.sum(a * b, axis=1) / np.where(const, 1.0, den))


def sir_summaries(S, I, R):
    peak = I.max(axis=1)
    t_peak = I.argmax(axis=1).astype(float)
    return np.column_stack([peak, t_peak, S.mean(axis=1), I.mean(axis=1), R.mean(axis=1),
                            _pearson_rows(S, I), _pearson_rows(I, R)])


def sir_simulate(beta, gamma):
    """Seven summaries ``[peak_I, t_peak, S_bar, I_bar, R_bar, corr(S,I), corr(I,R)]``."""
    return sir_summaries(*sir_trajectory(beta, gamma))


SIR_PRIORS = ("lognormal", "uniform", "gamma")


def sir_task(prior="lognormal"):
    if prior == "lognormal":
        def prior_fn(num, rng):
            return np.column_stack([np.exp(rng.normal(np.log(0.4), 0.5, num)),
                                    np.exp(rng.normal(np.log(1 / 8), 0.2, num))])
    elif prior == "uniform":
        def prior_fn(num, rng):
            return np.column_stack([rng.uniform(0.2, 0.8, num), rng.uniform(0.05, 0.5, num)])
    elif prior == "gamma":
        def prior_fn(num, rng):
            return np.column_stack([rng.gamma(2.0, 0.2, num), rng.gamma(2.0, 0.1, num)])
    else:
        raise ConfigurationError(f"unknown SIR prior {prior!r}; expected one of {SIR_PRIORS}")

    def sim(theta, rng):
        return sir_simulate(theta[:, 0], theta[:, 1])

    return TaskSpec("sir", 7, 2, prior_fn, sim, prior_name=prior,
                    meta={"summaries": list(SIR_SUMMARIES)})


# ---------------------------------------------------------------------------
# SBI benchmark tasks


def _uniform_box(lo, hi, d):
    def prior(num, rng):
        return rng.uniform(lo, hi, size=(num, d))

    def inside(theta):
        return np.all((theta >= lo) & (theta <= hi), axis=1)

    return prior, inside


def _gaussian_linear():
    d = 10

    def prior(num, rng):
        return np.sqrt(0.1) * rng.standard_normal((num, d))

    def sim(theta, rng):
        return theta + np.sqrt(0.1) * rng.standard_normal(theta.shape)

    def logpost(theta, y):
        theta = np.atleast_2d(theta)
        return -5.0 * np.sum(theta**2, axis=1) - 5.0 * np.sum((y - theta) ** 2, axis=1)

    def post(y, num, rng):
        return 0.5 * np.asarray(y)[None, :] + np.sqrt(0.05) * rng.standard_normal((num, d))

    return TaskSpec("gaussian_linear", d, d, prior, sim, logpost, post, prior_name="normal")


def _gaussian_mixture():
    prior, inside = _uniform_box(-10.0, 10.0, 2)

    def sim(theta, rng):
        scale = np.where(rng.uniform(size=(theta.shape[0], 1)) < 0.5, 1.0, 0.1)
        return theta + scale * rng.standard_normal(theta.shape)

    def logpost(theta, y):
        theta = np.atleast_2d(theta)
        sq = np.sum((y - theta) ** 2, axis=1)
        comp = np.stack([-0.5 * sq, -0.5 * sq / 0.01 - 2.0 * np.log(0.1)])
        out = logsumexp(comp, axis=0) + np.log(0.5)
        return np.where(inside(theta), out, -np.inf)

    return TaskSpec("gaussian_mixture", 2, 2, prior, sim, logpost, prior_name="uniform")


def _two_moons():
    prior, inside = _uniform_box(-1.0, 1.0, 2)

    def offset(theta):
        return np.column_stack([-np.abs(theta[:, 0] + theta[:, 1]) / np.sqrt(2.0),
                                (-theta[:, 0] + theta[:, 1]) / np.sqrt(2.0)])

    def sim(theta, rng):
        num = theta.shape[0]
        a = rng.uniform(-np.pi / 2, np.pi / 2, num)
        r = rng.normal(0.1, 0.01, num)
        p = np.column_stack([r * np.cos(a) + 0.25, r * np.sin(a)])
        return p + offset(theta)

    def logpost(theta, y):
        theta = np.atleast_2d(theta)
        q = y[None, :] - offset(theta) - np.array([0.25, 0.0])
        r = np.linalg.norm(q, axis=1)
        ok = (q[:, 0] > 0) & inside(theta)
        rs = np.where(r > 0, r, 1.0)
        ll = -0.5 * ((r - 0.1) / 0.01) ** 2 - np.log(0.01 * np.sqrt(2 * np.pi)) - np.log(np.pi * rs)
        return np.where(ok, ll, -np.inf)

    return TaskSpec("two_moons", 2, 2, prior, sim, logpost, prior_name="uniform")


def _slcp_moments(theta):
    m = theta[:, :2]
    s1 = theta[:, 2] ** 2
    s2 = theta[:, 3] ** 2
    rho = np.tanh(theta[:, 4])
    return m, s1, s2, rho


def _slcp():
    prior, inside = _uniform_box(-3.0, 3.0, 5)

    def sim(theta, rng):
        m, s1, s2, rho = _slcp_moments(theta)
        num = theta.shape[0]
        z = rng.standard_normal((num, 4, 2))
        x1 = m[:, None, 0] + s1[:, None] * z[:, :, 0]
        x2 = m[:, None, 1] + s2[:, None] * (rho[:, None] * z[:, :, 0]
                                            + np.sqrt(1 - rho[:, None] ** 2) * z[:, :, 1])
        return np.stack([x1, x2], axis=2).reshape(num, 8)

    def logpost(theta, y):
        theta = np.atleast_2d(theta)
        m, s1, s2, rho = _slcp_moments(theta)
        pts = np.asarray(y, dtype=float).reshape(4, 2)
        d1 = (pts[None, :, 0] - m[:, None, 0]) / np.where(s1 > 0, s1, 1.0)[:, None]
        d2 = (pts[None, :, 1] - m[:, None, 1]) / np.where(s2 > 0, s2, 1.0)[:, None]
        om = 1.0 - rho**2
        quad = (d1**2 - 2 * rho[:, None] * d1 * d2 + d2**2) / om[:, None]
        with np.errstate(divide="ignore"):
            logdet = np.log(s1**2) + np.log(s2**2) + np.log(om)
        ll = -0.5 * np.sum(quad, axis=1) - 2.0 * logdet - 4.0 * np.log(2 * np.pi)
        ok = inside(theta) & (s1 > 0) & (s2 > 0) & np.isfinite(ll)
        return np.where(ok, ll, -np.inf)

    return TaskSpec("slcp", 8, 5, prior, sim, logpost, prior_name="uniform")


SBI_TASKS = {
    "gaussian_linear": _gaussian_linear,
    "gaussian_mixture": _gaussian_mixture,
    "two_moons": _two_moons,
    "slcp": _slcp,
}


def sbi_task(name):
    try:
        return SBI_TASKS[name]()
    except KeyError:
        raise ConfigurationError(f"unknown SBI task {name!r}") from None


TASK_NAMES = ("funnel", "conjugate", "sir", *SBI_TASKS)


def get_task(name, prior=None, n=None):
    """Look up a task by name (the CLI entry point)."""
    if name == "funnel":
        return funnel_task()
    if name == "conjugate":
        return gaussian_conjugate_task(n=8 if n is None else int(n))
    if name == "sir":
        return sir_task(prior or "lognormal")
    if name in SBI_TASKS:
        return sbi_task(name)
    raise ConfigurationError(f"unknown task {name!r}; expected one of {TASK_NAMES}")
