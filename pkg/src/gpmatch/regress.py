"""Regressors from query features to embedded support coordinates.

Three constructions are provided, all conditioning on the same support set
(support features paired with embedded support coordinates):

* `GPRegressor`: exact GP posterior.  The mean is K_qs (K_ss + j I)^-1 E_s
  and the variance is the diagonal of K_qq - K_qs (K_ss + j I)^-1 K_sq,
  with one factorization shared across all output columns (output
  dimensions are modelled as uncorrelated).
* `KernelSmoother`: kernel-weighted average of support targets
  (cross-attention with an explicit kernel).
* `NearestNeighbour`: target of the best-matching support feature.

All three follow the fit/predict estimator convention.
"""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from .kernel import KernelSpec, gram, regularized_solve
from .validation import as_feature_matrix

__all__ = [
    "SupportSet",
    "GPPosterior",
    "RegressorOutput",
    "GPRegressor",
    "KernelSmoother",
    "NearestNeighbour",
    "gp_posterior",
    "kernel_smoother",
    "nearest_neighbour",
    "attach_variance_neighbourhood",
]


@dataclass(frozen=True)
class SupportSet:
    """Conditioning set: N feature vectors paired with N embedded targets."""

    features: np.ndarray
    targets: np.ndarray
    grid_shape: tuple | None = None

    def __post_init__(self):
        f = as_feature_matrix(self.features, "support features")
        t = np.asarray(self.targets, dtype=np.float64)
        if t.ndim == 1:
            t = t[:, None]
        if f.shape[0] == 0:
            raise ValueError("support set must contain at least one point")
        if t.shape[0] != f.shape[0]:
            raise ValueError(f"{f.shape[0]} features but {t.shape[0]} targets")
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "targets", t)


@dataclass(frozen=True)
class GPPosterior:
    """Posterior mean per query (Q, D) and per-query scalar variance (Q,)."""

    mean: np.ndarray
    variance: np.ndarray
    grid_shape: tuple | None = None


@dataclass(frozen=True)
class RegressorOutput:
    """Predicted embedding per query, with optional variance channels."""

    embedding: np.ndarray
    variance: np.ndarray | None = None
    variance_neighbourhood: np.ndarray | None = None
    grid_shape: tuple | None = None


class GPRegressor(BaseEstimator, RegressorMixin):
    """Exact GP posterior over embedded coordinates."""

    def __init__(self, kind="exp_cos_sim", tau=0.2, epsilon=1e-6, length=0.1, jitter=1e-4):
        self.kind = kind
        self.tau = tau
        self.epsilon = epsilon
        self.length = length
        self.jitter = jitter

    def _spec(self):
        return KernelSpec(self.kind, self.tau, self.epsilon, self.length)

    def fit(self, X, y):
        self.support_ = SupportSet(X, y)
        return self

    def predict(self, X, return_variance=False):
        post = gp_posterior(self.support_, X, self._spec(), jitter=self.jitter)
        if return_variance:
            return post.mean, post.variance
        return post.mean


class KernelSmoother(BaseEstimator, RegressorMixin):
    """Normalized kernel-weighted average of support targets."""

    def __init__(self, kind="exp_cos_sim", tau=0.2, epsilon=1e-6, length=0.1):
        self.kind = kind
        self.tau = tau
        self.epsilon = epsilon
        self.length = length

    def fit(self, X, y):
        self.support_ = SupportSet(X, y)
        return self

    def predict(self, X):
        spec = KernelSpec(self.kind, self.tau, self.epsilon, self.length)
        return kernel_smoother(self.support_, X, spec).embedding


class NearestNeighbour(BaseEstimator, RegressorMixin):
    """Piecewise-constant regressor: target of the closest support feature."""

    def __init__(self, metric="cosine"):
        self.metric = metric

    def fit(self, X, y):
        self.support_ = SupportSet(X, y)
        return self

    def predict(self, X):
        return nearest_neighbour(self.support_, X, self.metric).embedding


def gp_posterior(support, query, spec, jitter=1e-4, grid_shape=None):
    """Exact GP posterior mean and variance at the query features.

    One symmetric factorization of K_ss + jitter I is shared by the mean
    (all D target columns) and the variance.  Tiny negative variances from
    roundoff are clamped to zero.
    """
    Q = as_feature_matrix(query, "query")
    if Q.shape[1] != support.features.shape[1]:
        raise ValueError(
            f"query feature dimension {Q.shape[1]} != support dimension {support.features.shape[1]}"
        )
    K_ss = gram(spec, support.features, support.features).values
    K_qs = gram(spec, Q, support.features).values
    d = support.targets.shape[1]

    rhs = np.concatenate([support.targets, K_qs.T], axis=1)
    solved = regularized_solve(K_ss, rhs, jitter).solution
    mean = K_qs @ solved[:, :d]
    variance = _self_kernel(spec, Q) - np.einsum("qs,sq->q", K_qs, solved[:, d:])
    variance = np.where(variance > 0, variance, 0.0)
    return GPPosterior(mean, variance, grid_shape=grid_shape)


def _self_kernel(spec, Q):
    """k(q, q) for each row of Q."""
    if spec.kind == "squared_exponential":
        return np.ones(Q.shape[0])
    nq = np.einsum("ij,ij->i", Q, Q)
    return np.exp(nq / (spec.tau * np.sqrt(nq * nq + spec.epsilon)))


def kernel_smoother(support, query, spec):
    """Cross-attention construction: weights k(q, s) normalized over s.

    Both kernels are strictly positive, so the denominator never vanishes
    and every output lies in the convex hull of the support targets.
    """
    Q = as_feature_matrix(query, "query")
    W = gram(spec, Q, support.features).values
    denom = W.sum(axis=1, keepdims=True)
    mean = (W @ support.targets) / denom
    return RegressorOutput(embedding=mean)


def nearest_neighbour(support, query, metric="cosine"):
    """Assign each query the target of its best support feature.

    Ties are broken by the lowest support index.
    """
    if metric not in ("cosine", "euclidean"):
        raise ValueError(f"unknown metric {metric!r}")
    Q = as_feature_matrix(query, "query")
    S = support.features
    if metric == "cosine":
        qn = np.linalg.norm(Q, axis=1, keepdims=True)
        sn = np.linalg.norm(S, axis=1, keepdims=True)
        sim = (Q / np.where(qn > 0, qn, 1.0)) @ (S / np.where(sn > 0, sn, 1.0)).T
        idx = sim.argmax(axis=1)  # argmax returns the first (lowest) index on ties
    else:
        d2 = (
            np.einsum("ij,ij->i", Q, Q)[:, None]
            + np.einsum("ij,ij->i", S, S)[None, :]
            - 2.0 * (Q @ S.T)
        )
        idx = d2.argmin(axis=1)
    return RegressorOutput(embedding=support.targets[idx])


def attach_variance_neighbourhood(post, k=5):
    """Concatenate each grid point's k x k variance neighbourhood to the mean.

    The posterior must carry a grid shape.  Borders are edge-replicated and
    each window is flattened row-major.
    """
    if k < 1 or k % 2 == 0:
        raise ValueError(f"neighbourhood size must be odd and positive, got {k}")
    if post.grid_shape is None:
        raise ValueError("posterior has no grid shape; variance neighbourhood needs a grid")
    h, w = post.grid_shape
    var = post.variance.reshape(h, w)
    half = k // 2
    padded = np.pad(var, half, mode="edge")
    windows = np.lib.stride_tricks.sliding_window_view(padded, (k, k))
    stack = windows.reshape(h * w, k * k)
    return RegressorOutput(
        embedding=post.mean,
        variance=post.variance,
        variance_neighbourhood=stack,
        grid_shape=post.grid_shape,
    )
