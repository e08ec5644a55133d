"""Scalar and array primitives shared by the solvers.

Besides the divergences and kernel constructors this module defines the two
arithmetic domains the message-passing code runs in: plain linear arithmetic,
and log-domain arithmetic where products become sums and matrix-vector
products become row-wise log-sum-exp.
"""

from __future__ import annotations

import numpy as np
from scipy.special import logsumexp, xlogy

from .errors import (
    EpsilonNonPositive,
    InfeasibleProblem,
    InvalidInput,
    MassMismatch,
    NumericalUnderflow,
    ShapeMismatch,
)


def as_vector(x, name="vector") -> np.ndarray:
    v = np.asarray(x, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise ShapeMismatch(f"{name} must be a nonempty 1-D array, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise InvalidInput(f"{name} has non-finite entries")
    if np.any(v < 0):
        raise InvalidInput(f"{name} has negative entries")
    return v


def kl_divergence(p, q) -> float:
    """Normalized KL divergence ``sum(p log(p/q) - p + q)``.

    Returns ``inf`` when ``p`` puts mass where ``q`` is zero.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ShapeMismatch(f"shapes differ: {p.shape} vs {q.shape}")
    if np.any((q == 0) & (p > 0)):
        return float("inf")
    pos = p > 0
    val = np.sum(p[pos] * np.log(p[pos] / q[pos])) - p.sum() + q.sum()
    return float(max(val, 0.0)) if abs(val) < 1e-300 else float(val)


def neg_entropy(p) -> float:
    """``H(p) = sum(p log p - p + 1)``, i.e. ``kl_divergence(p, 1)``."""
    p = np.asarray(p, dtype=float)
    return float(np.sum(xlogy(p, p) - p + 1.0))


def shannon_entropy(p) -> float:
    """Entropy of ``p`` normalized to a probability vector, in nats."""
    p = np.asarray(p, dtype=float).ravel()
    p = p / p.sum()
    return float(-np.sum(xlogy(p, p)))


def gibbs_kernel(C, epsilon: float) -> np.ndarray:
    if not epsilon > 0:
        raise EpsilonNonPositive(f"epsilon must be positive, got {epsilon!r}")
    return np.exp(-np.asarray(C, dtype=float) / epsilon)


def euclidean_cost(grid) -> np.ndarray:
    """Pairwise Euclidean distances between the rows of ``grid``.

    A 1-D input is read as points on a line.
    """
    x = np.asarray(grid, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    diff = x[:, None, :] - x[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def check_mass_balance(marginals, rel_tol: float = 1e-6):
    """Verify that all marginals carry the same mass.

    Returns the marginals normalized to unit mass together with the common
    mass (the mean of the individual masses).
    """
    vecs = [as_vector(m, "marginal") for m in marginals]
    if not vecs:
        raise InvalidInput("need at least one marginal")
    masses = np.array([v.sum() for v in vecs])
    if np.any(masses <= 0):
        raise MassMismatch("every marginal needs positive total mass")
    lo, hi = int(np.argmin(masses)), int(np.argmax(masses))
    if masses[hi] - masses[lo] > rel_tol * masses[hi]:
        raise MassMismatch(
            f"marginal masses differ: #{lo} has {masses[lo]:.12g}, #{hi} has {masses[hi]:.12g}"
        )
    return [v / m for v, m in zip(vecs, masses)], float(masses.mean())


def safe_divide(num, den) -> np.ndarray:
    """Elementwise ``num / den`` with ``0 / 0 = 0``; ``x / 0`` stays ``inf``."""
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    out = np.zeros(np.broadcast(num, den).shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        np.divide(num, den, out=out, where=(num != 0))
    return out


class LinearDomain:
    """Arithmetic on plain nonnegative arrays."""

    is_log = False
    name = "linear"

    @staticmethod
    def kernel(log_kernel: np.ndarray) -> np.ndarray:
        return np.exp(log_kernel)

    @staticmethod
    def from_linear(x):
        return np.asarray(x, dtype=float)

    @staticmethod
    def to_linear(x):
        return x

    @staticmethod
    def ones(n: int) -> np.ndarray:
        return np.ones(n)

    @staticmethod
    def mul(a, b):
        return a * b

    @staticmethod
    def div(num, den):
        return safe_divide(num, den)

    @staticmethod
    def matvec(K, x):
        return K @ x

    @staticmethod
    def rmatvec(K, x):
        return K.T @ x

    @staticmethod
    def outer_scale(left, K, right):
        return left[:, None] * K * right[None, :]

    @staticmethod
    def matmul(A, B):
        return A @ B

    @staticmethod
    def total(x) -> float:
        return float(np.sum(x))

    @staticmethod
    def check(x, what="message", allow_zero=False):
        if not np.all(np.isfinite(x)):
            raise NumericalUnderflow(f"{what} overflowed in the linear domain")
        if not allow_zero and not np.all(x > 0):
            raise NumericalUnderflow(f"{what} underflowed to zero in the linear domain")
        return x


class LogDomain:
    """Arithmetic on logarithms; ``-inf`` encodes an exact zero."""

    is_log = True
    name = "log"

    @staticmethod
    def kernel(log_kernel: np.ndarray) -> np.ndarray:
        return log_kernel

    @staticmethod
    def from_linear(x):
        with np.errstate(divide="ignore"):
            return np.log(np.asarray(x, dtype=float))

    @staticmethod
    def to_linear(x):
        return np.exp(x)

    @staticmethod
    def ones(n: int) -> np.ndarray:
        return np.zeros(n)

    @staticmethod
    def mul(a, b):
        return a + b

    @staticmethod
    def div(num, den):
        num = np.asarray(num, dtype=float)
        den = np.asarray(den, dtype=float)
        out = np.full(np.broadcast(num, den).shape, -np.inf)
        with np.errstate(invalid="ignore"):
            np.subtract(num, den, out=out, where=np.isfinite(num))
        return out

    @staticmethod
    def matvec(K, x):
        with np.errstate(divide="ignore"):
            return logsumexp(K + x[None, :], axis=1)

    @staticmethod
    def rmatvec(K, x):
        with np.errstate(divide="ignore"):
            return logsumexp(K + x[:, None], axis=0)

    @staticmethod
    def outer_scale(left, K, right):
        return left[:, None] + K + right[None, :]

    @staticmethod
    def matmul(A, B):
        with np.errstate(divide="ignore"):
            return logsumexp(A[:, :, None] + B[None, :, :], axis=1)

    @staticmethod
    def total(x) -> float:
        with np.errstate(divide="ignore"):
            return float(np.exp(logsumexp(x)))

    @staticmethod
    def check(x, what="message", allow_zero=False):
        if np.any(np.isnan(x)) or np.any(x == np.inf):
            raise InfeasibleProblem(f"{what} is infeasible: positive mass on a zero-probability state")
        return x


def domain(log: bool):
    return LogDomain if log else LinearDomain
