"""Feature-space kernels, Gram matrices and regularized symmetric solves.

Two kernels are provided: an exponential cosine-similarity kernel

    k(x, y) = exp( <x, y> / (tau * sqrt(<x, x> <y, y> + eps)) )

with fixed temperature tau, and a squared-exponential kernel
exp(-||x - y||^2 / length^2) used by the 1-D toy example.
"""

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .exceptions import NumericalFailure
from .validation import as_feature_matrix

__all__ = ["KernelSpec", "GramMatrix", "SolveResult", "eval_kernel", "gram", "regularized_solve"]

KERNEL_KINDS = ("exp_cos_sim", "squared_exponential")


@dataclass(frozen=True)
class KernelSpec:
    """Kernel choice plus its fixed hyperparameters."""

    kind: str = "exp_cos_sim"
    tau: float = 0.2
    epsilon: float = 1e-6
    length: float = 0.1

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}, expected one of {KERNEL_KINDS}")
        if self.kind == "exp_cos_sim" and not (0.05 <= self.tau <= 1.0):
            raise ValueError(f"tau must lie in [0.05, 1.0], got {self.tau}")
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.kind == "squared_exponential" and self.length <= 0:
            raise ValueError(f"length must be positive, got {self.length}")


@dataclass(frozen=True)
class GramMatrix:
    """Dense kernel matrix between two feature sets."""

    values: np.ndarray
    spec: KernelSpec

    @property
    def rows(self):
        return self.values.shape[0]

    @property
    def cols(self):
        return self.values.shape[1]

    def __array__(self, dtype=None):
        return np.asarray(self.values, dtype=dtype)


@dataclass(frozen=True)
class SolveResult:
    """Solution of (K + jitter I) Z = B, with the jitter actually used."""

    solution: np.ndarray
    jitter: float
    fallback: bool = False


def _kernel_values(spec, X, Y):
    if spec.kind == "exp_cos_sim":
        inner = X @ Y.T
        nx = np.einsum("ij,ij->i", X, X)
        ny = np.einsum("ij,ij->i", Y, Y)
        denom = np.sqrt(np.outer(nx, ny) + spec.epsilon)
        return np.exp(inner / (spec.tau * denom))
    # squared exponential
    d2 = np.maximum(
        np.einsum("ij,ij->i", X, X)[:, None] + np.einsum("ij,ij->i", Y, Y)[None, :] - 2.0 * (X @ Y.T),
        0.0,
    )
    return np.exp(-d2 / spec.length**2)


def eval_kernel(spec, x, y):
    """Evaluate the kernel on a single pair of feature vectors.

    Routed through the same vectorized path as `gram`, so a Gram entry
    equals the scalar evaluation bit for bit.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ValueError(f"feature dimensions differ: {x.shape} vs {y.shape}")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise ValueError("kernel inputs must be finite")
    return float(_kernel_values(spec, x[None, :], y[None, :])[0, 0])


def gram(spec, X, Y):
    """Gram matrix with entry (i, j) = k(X_i, Y_j).

    Empty inputs yield a valid zero-dimension matrix.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.size == 0 or Y.size == 0:
        n = X.shape[0] if X.ndim == 2 else 0
        m = Y.shape[0] if Y.ndim == 2 else 0
        return GramMatrix(np.zeros((n, m)), spec)
    X = as_feature_matrix(X, "X")
    Y = as_feature_matrix(Y, "Y")
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"feature dimensions differ: {X.shape[1]} vs {Y.shape[1]}")
    return GramMatrix(_kernel_values(spec, X, Y), spec)


def regularized_solve(K, B, jitter=0.0):
    """Solve (K + jitter I) Z = B by Cholesky, escalating jitter on failure.

    The jitter is multiplied by 10 up to four times if the factorization
    fails; if it still fails, a least-squares solve is used and the result
    is flagged as a fallback.  Raises NumericalFailure only when even the
    fallback produces non-finite values.
    """
    Kv = np.asarray(K, dtype=np.float64)
    if Kv.ndim != 2 or Kv.shape[0] != Kv.shape[1]:
        raise ValueError(f"K must be square, got shape {Kv.shape}")
    B = np.asarray(B, dtype=np.float64)
    rhs = B if B.ndim == 2 else B[:, None]
    if rhs.shape[0] != Kv.shape[0]:
        raise ValueError(f"right-hand side has {rhs.shape[0]} rows, K has {Kv.shape[0]}")
    if Kv.size and np.abs(Kv - Kv.T).max() > 1e-8:
        raise ValueError("K must be symmetric to 1e-8")

    n = Kv.shape[0]
    eye = np.eye(n)
    j = float(jitter)
    for attempt in range(5):
        try:
            cf = scipy.linalg.cho_factor(Kv + j * eye, lower=True, check_finite=False)
            Z = scipy.linalg.cho_solve(cf, rhs, check_finite=False)
            if np.isfinite(Z).all():
                out = Z if B.ndim == 2 else Z[:, 0]
                return SolveResult(out, j, False)
        except scipy.linalg.LinAlgError:
            pass
        # escalate; a zero starting jitter needs a nonzero foothold
        j = j * 10.0 if j > 0 else 1e-12 * max(1.0, float(np.trace(Kv)) / max(n, 1))

    Z, *_ = np.linalg.lstsq(Kv + j * eye, rhs, rcond=None)
    if not np.isfinite(Z).all():
        raise NumericalFailure("regularized solve failed", jitter=j)
    warnings.warn(f"Cholesky failed; used least-squares fallback with jitter {j:g}", RuntimeWarning)
    out = Z if B.ndim == 2 else Z[:, 0]
    return SolveResult(out, j, True)
