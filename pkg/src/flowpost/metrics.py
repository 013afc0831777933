"""Sample-based distances between distributions and point sets."""
from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import expit

from .errors import ShapeError
from .nn import adam_init, adam_step, init_mlp, mlp_backward, mlp_forward_cached


@dataclass
class MetricReport:
    metric: str
    value: float
    config: dict = field(default_factory=dict)
    seed: int = 0

    def to_dict(self):
        return asdict(self)


def _columns(x):
    x = np.asarray(x, dtype=float)
    return x.reshape(-1, 1) if x.ndim == 1 else x


def _match_sizes(a, b, rng):
    if a.shape[0] > b.shape[0]:
        a = a[rng.choice(a.shape[0], b.shape[0], replace=False)]
    elif b.shape[0] > a.shape[0]:
        b = b[rng.choice(b.shape[0], a.shape[0], replace=False)]
    return a, b


def w2_1d(a, b, seed=0):
    """Exact W2 between two equal-size 1-D empirical measures.

    The larger sample is subsampled (without replacement) to match.
    """
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("w2_1d needs non-empty samples")
    a, b = _match_sizes(a, b, np.random.default_rng(seed))
    return float(np.sqrt(np.mean((np.sort(a) - np.sort(b)) ** 2)))


def sliced_w2(a, b, K=100, seed=0):
    """Root-mean-square of exact 1-D W2 over ``K`` random directions."""
    a, b = _columns(a), _columns(b)
    if a.shape[1] != b.shape[1]:
        raise ShapeError("sliced_w2: dimension mismatch")
    if K < 1:
        raise ValueError("K must be >= 1")
    if a.shape[1] == 1:
        return w2_1d(a, b, seed)
    rng = np.random.default_rng(seed)
    a, b = _match_sizes(a, b, rng)
    u = rng.standard_normal((a.shape[1], K))
    u /= np.linalg.norm(u, axis=0, keepdims=True)
    pa = np.sort(a @ u, axis=0)
    pb = np.sort(b @ u, axis=0)
    return float(np.sqrt(np.mean((pa - pb) ** 2)))


def c2st(a, b, folds=5, seed=0, steps=2000, lr=1e-3, batch=128):
    """Classifier two-sample test accuracy.

    A two-hidden-layer MLP (width 10 x dim) is trained with cross-entropy on
    each of ``folds`` training splits; the mean held-out accuracy is returned.
    Inputs are z-scored with the pooled mean and std.
    """
    a, b = _columns(a), _columns(b)
    if a.shape[1] != b.shape[1]:
        raise ShapeError("c2st: dimension mismatch")
    x = np.vstack([a, b])
    labels = np.r_[np.zeros(a.shape[0]), np.ones(b.shape[0])]
    std = x.std(axis=0)
    if np.any(std == 0):
        warnings.warn("c2st: degenerate (constant) input column", RuntimeWarning)
        std = np.where(std == 0, 1.0, std)
    x = (x - x.mean(axis=0)) / std
    rng = np.random.default_rng(seed)
    perm = rng.permutation(x.shape[0])
    splits = np.array_split(perm, folds)
    dim = x.shape[1]
    accs = []
    for k in range(folds):
        test = splits[k]
        tr = np.concatenate([splits[j] for j in range(folds) if j != k])
        net = init_mlp([dim, 10 * dim, 10 * dim, 1], "relu", rng=rng)
        params = net.arrays()
        opt = adam_init(params, lr=lr)
        xt, yt = x[tr], labels[tr]
        for _ in range(steps):
            idx = rng.integers(0, xt.shape[0], size=min(batch, xt.shape[0]))
            logits, cache = mlp_forward_cached(net, xt[idx])
            p = expit(logits[:, 0])
            up = ((p - yt[idx]) / idx.size)[:, None]
            grads, _ = mlp_backward(net, xt[idx], up, cache=cache)
            adam_step(params, grads.arrays(), opt)
        logits, _ = mlp_forward_cached(net, x[test])
        accs.append(np.mean((logits[:, 0] > 0) == (labels[test] == 1)))
    return float(np.mean(accs))


def _directed_hausdorff(A, B, chunk=2048):
    worst = 0.0
    for i in range(0, A.shape[0], chunk):
        worst = max(worst, float(cdist(A[i:i + chunk], B).min(axis=1).max()))
    return worst


def hausdorff(A, B):
    """``max(sup_a inf_b |a-b|, sup_b inf_a |a-b|)`` for finite point sets."""
    A, B = _columns(A), _columns(B)
    if A.shape[0] == 0 or B.shape[0] == 0:
        raise ValueError("hausdorff needs non-empty point sets")
    if A.shape[1] != B.shape[1]:
        raise ShapeError("hausdorff: dimension mismatch")
    return max(_directed_hausdorff(A, B), _directed_hausdorff(B, A))
