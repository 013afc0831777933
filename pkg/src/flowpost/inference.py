"""Credible sets, nesting checks, coverage and rank calibration.

A tau-level credible set is the image of the radius-tau ball under the
learned conditional map; its boundary is the image of the radius-tau
sphere. With a spherical-uniform source the ball holds probability tau.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .errors import ConfigurationError
from .ode import OdeConfig, compute_rank, conditioning_contexts, push_theta
from .cfm import sample_theta_source

FIG_TAUS = (0.5, 0.6, 0.7, 0.8, 0.9, 0.95)


@dataclass
class CredibleSet:
    tau: float
    y_star: np.ndarray
    boundary: np.ndarray  # (m, d), original units
    rule: str = "hull2d"
    _hull: object = field(default=None, repr=False)

    def hull(self):
        if self._hull is None:
            pts = np.unique(np.round(self.boundary, 12), axis=0)
            if pts.shape[0] < 3:
                raise ValueError("degenerate hull: fewer than 3 distinct boundary points")
            try:
                self._hull = ConvexHull(pts)
            except QhullError as err:
                raise ValueError(f"degenerate hull: {err}") from None
        return self._hull


def sphere_directions(d, m, rng=None):
    """Unit directions: equispaced angles for d = 2, random otherwise."""
    if d == 1:
        return np.array([[-1.0], [1.0]])
    if d == 2:
        ang = 2.0 * np.pi * np.arange(m) / m
        return np.column_stack([np.cos(ang), np.sin(ang)])
    rng = np.random.default_rng(0) if rng is None else rng
    z = rng.standard_normal((m, d))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def _check_tau(tau):
    if not 0.0 < tau <= 1.0:
        raise ConfigurationError(f"tau must lie in (0, 1], got {tau}")


def credible_boundary(model, y_star, tau, m=2000, config: OdeConfig | None = None,
                      rng=None, contexts=None, rule=None):
    """Boundary point cloud of the tau-level credible set at ``y_star``."""
    _check_tau(tau)
    if m < 8:
        raise ConfigurationError("need at least 8 boundary points")
    config = config or OdeConfig()
    if contexts is None:
        contexts = conditioning_contexts(model, y_star, config)
    dirs = sphere_directions(model.d, m, rng)
    pts = push_theta(model, y_star, tau * dirs, config, contexts=contexts)
    rule = rule or ("hull2d" if model.d == 2 else "rank")
    return CredibleSet(float(tau), np.asarray(y_star, dtype=float).ravel(), pts, rule)


def contains(cset: CredibleSet, theta, model=None, config: OdeConfig | None = None,
             contexts=None, tol=1e-12):
    """Membership of each row of ``theta`` in the credible set."""
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    if cset.rule == "hull2d":
        eq = cset.hull().equations
        return np.all(theta @ eq[:, :-1].T + eq[:, -1] <= tol, axis=1)
    if cset.rule == "rank":
        if model is None:
            raise ConfigurationError("rank membership needs the model")
        r = compute_rank(model, cset.y_star, theta, config, contexts=contexts).rank
        return r <= cset.tau
    raise ConfigurationError(f"unknown membership rule {cset.rule!r}")


def nested_sets(model, y_star, taus=FIG_TAUS, m=2000, config: OdeConfig | None = None):
    config = config or OdeConfig()
    ctx = conditioning_contexts(model, y_star, config)
    return [credible_boundary(model, y_star, t, m, config, contexts=ctx)
            for t in sorted(taus)]


def count_crossings(sets, model=None, config: OdeConfig | None = None):
    """Boundary points of each set that fall outside the next larger set."""
    sets = sorted(sets, key=lambda s: s.tau)
    bad = 0
    for inner, outer in zip(sets[:-1], sets[1:]):
        bad += int(np.sum(~contains(outer, inner.boundary, model, config)))
    return bad


def coverage_experiment(model, task, taus=FIG_TAUS, reps=100, n_boundary=2000,
                        n_mass=2000, rng=None, config: OdeConfig | None = None):
    """Posterior mass of flow draws inside each estimated credible set.

    Each rep draws a fresh observation from the task. Returns an array with
    columns ``(rep, tau, coverage)``.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    config = config or OdeConfig()
    rows = []
    for rep in range(reps):
        _, y = task.observe(rng)
        ctx = conditioning_contexts(model, y, config)
        theta0 = sample_theta_source(model.source, n_mass, model.d, rng)
        draws = push_theta(model, y, theta0, config, contexts=ctx)
        ranks = None
        for tau in taus:
            cs = credible_boundary(model, y, tau, n_boundary, config, rng, contexts=ctx)
            if cs.rule == "rank":
                if ranks is None:
                    ranks = compute_rank(model, y, draws, config, contexts=ctx).rank
                inside = ranks <= tau
            else:
                inside = contains(cs, draws)
            rows.append((rep, tau, float(inside.mean())))
    return np.array(rows)


def coverage_summary(table):
    """Median ``|coverage - tau|`` per tau, as a dict."""
    out = {}
    for tau in np.unique(table[:, 1]):
        sel = table[:, 1] == tau
        out[float(tau)] = float(np.median(np.abs(table[sel, 2] - tau)))
    return out


def coverage_is_monotone(table):
    """True when coverage is non-decreasing in tau within every rep."""
    for rep in np.unique(table[:, 0]):
        sub = table[table[:, 0] == rep]
        sub = sub[np.argsort(sub[:, 1])]
        if np.any(np.diff(sub[:, 2]) < 0):
            return False
    return True


def rank_pvalue_check(model, task, alphas=(0.05, 0.1, 0.2), n=1000, rng=None,
                      n_obs=10, config: OdeConfig | None = None):
    """Frequency of ``rank > 1 - alpha`` for draws from the model's own
    posterior and from the task's exact posterior.

    Returns rows ``(alpha, freq_self, freq_oracle)`` pooled over ``n_obs``
    observations; ``freq_oracle`` is NaN when the task has no exact sampler.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    config = config or OdeConfig()
    self_r, oracle_r = [], []
    for _ in range(n_obs):
        _, y = task.observe(rng)
        ctx = conditioning_contexts(model, y, config)
        theta0 = sample_theta_source(model.source, n, model.d, rng)
        own = push_theta(model, y, theta0, config, contexts=ctx)
        self_r.append(compute_rank(model, y, own, config, contexts=ctx).rank)
        if task.posterior_sample is not None:
            ref = task.posterior_sample(y, n, rng)
            oracle_r.append(compute_rank(model, y, ref, config, contexts=ctx).rank)
    self_r = np.concatenate(self_r)
    oracle_r = np.concatenate(oracle_r) if oracle_r else None
    rows = []
    for a in alphas:
        fs = float(np.mean(self_r > 1.0 - a))
        fo = float(np.mean(oracle_r > 1.0 - a)) if oracle_r is not None else float("nan")
        rows.append((a, fs, fo))
    return np.array(rows)
