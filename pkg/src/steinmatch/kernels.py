"""Positive-definite kernels and explicit feature banks.

All kernels share a small vectorized interface over point sets
``X`` of shape ``(n, d)`` and ``Y`` of shape ``(m, d)``:

* ``matrix(X, Y)``      -> ``(n, m)``, entries k(x_i, y_j)
* ``grad_x(X, Y)``      -> ``(n, m, d)``, gradient in the first argument
* ``grad_trace(X, Y)``  -> ``(n, m)``, sum_i d^2 k / dx_i dy_i
* ``grad_x_sum(X, Y)``  -> ``(m, d)``, sum_j grad_x k(x_j, y), the SVGD repulsion

Feature kernels additionally expose ``features`` and ``feature_grads``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._utils import as_points, as_vector, make_rng, sq_dists
from .exceptions import ArgumentError, DegenerateInputError

SQRT2 = np.sqrt(2.0)


def _pair(X, Y):
    X = as_points(X, name="X")
    Y = as_points(Y, X.shape[1], name="Y")
    return X, Y


# ---------------------------------------------------------------------------
# Feature banks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LinearFeatures:
    """phi(x) = (x_1, ..., x_d, 1)."""

    dim: int

    @property
    def size(self):
        return self.dim + 1

    def features(self, X):
        X = as_points(X, self.dim)
        return np.hstack([X, np.ones((X.shape[0], 1))])

    def feature_grads(self, X):
        """Shape ``(n, m, d)``: gradient of each feature at each point."""
        X = as_points(X, self.dim)
        G = np.zeros((X.shape[0], self.size, self.dim))
        G[:, np.arange(self.dim), np.arange(self.dim)] = 1.0
        return G


@dataclass(frozen=True, eq=False)
class RandomCosineFeatures:
    """phi_l(x) = sqrt(2 / m) cos(w_l^T x / h + b_l).

    The 1/sqrt(m) factor makes sum_l phi_l(x) phi_l(y) the Monte Carlo
    estimate of the RBF kernel with bandwidth ``h``.

    Attributes:
        directions: Shape ``(m, d)``.
        offsets: Shape ``(m,)``, each in [0, 2 pi).
        bandwidth: Positive scale ``h``.
    """

    directions: np.ndarray
    offsets: np.ndarray
    bandwidth: float

    def __post_init__(self):
        W = np.atleast_2d(np.asarray(self.directions, dtype=float))
        b = np.asarray(self.offsets, dtype=float).reshape(-1)
        if W.shape[0] != b.shape[0] or W.shape[0] < 1:
            raise ArgumentError("directions and offsets must describe m >= 1 features")
        if not np.all(np.isfinite(W)):
            raise ArgumentError("directions must be finite")
        if np.any(b < 0) or np.any(b >= 2 * np.pi):
            raise ArgumentError("offsets must lie in [0, 2 pi)")
        if not self.bandwidth > 0:
            raise ArgumentError(f"bandwidth must be positive, got {self.bandwidth}")
        W.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "directions", W)
        object.__setattr__(self, "offsets", b)
        object.__setattr__(self, "bandwidth", float(self.bandwidth))

    @property
    def dim(self):
        return self.directions.shape[1]

    @property
    def size(self):
        return self.directions.shape[0]

    def with_bandwidth(self, h):
        """Same random draws, new bandwidth."""
        return RandomCosineFeatures(self.directions, self.offsets, h)

    def _phase(self, X):
        return X @ self.directions.T / self.bandwidth + self.offsets

    def features(self, X):
        X = as_points(X, self.dim)
        return SQRT2 / np.sqrt(self.size) * np.cos(self._phase(X))

    def feature_grads(self, X):
        X = as_points(X, self.dim)
        coef = -SQRT2 / np.sqrt(self.size) * np.sin(self._phase(X)) / self.bandwidth
        return coef[:, :, None] * self.directions[None, :, :]


FeatureBank = LinearFeatures | RandomCosineFeatures


def feature_eval(bank: FeatureBank, x) -> np.ndarray:
    x = as_vector(x, bank.dim)
    return bank.features(x[None, :])[0]


def feature_grad(bank: FeatureBank, x) -> np.ndarray:
    """Jacobian of the feature vector, shape ``(m, d)``."""
    x = as_vector(x, bank.dim)
    return bank.feature_grads(x[None, :])[0]


def make_random_cosine_bank(d, m, h, seed) -> RandomCosineFeatures:
    """Draw w ~ N(0, I_d) and offsets ~ Unif[0, 2 pi); fixed thereafter."""
    if int(m) < 1 or int(d) < 1:
        raise ArgumentError(f"need d >= 1 and m >= 1, got d={d}, m={m}")
    rng = make_rng(seed)
    W = rng.standard_normal((int(m), int(d)))
    b = rng.uniform(0.0, 2 * np.pi, size=int(m))
    return RandomCosineFeatures(W, b, h)


# ---------------------------------------------------------------------------
# Kernels
# ---------------------------------------------------------------------------


class _Kernel:
    def __call__(self, x, y):
        return kernel_eval(self, x, y)

    def grad_x_sum(self, X, Y):
        return self.grad_x(X, Y).sum(axis=0)

    def with_bandwidth(self, h):
        return self


@dataclass(frozen=True)
class Rbf(_Kernel):
    """k(x, y) = exp(-|x - y|^2 / (2 h^2))."""

    bandwidth: float

    def __post_init__(self):
        if not (np.isfinite(self.bandwidth) and self.bandwidth > 0):
            raise ArgumentError(f"bandwidth must be positive, got {self.bandwidth}")

    def with_bandwidth(self, h):
        return Rbf(float(h))

    def matrix(self, X, Y):
        X, Y = _pair(X, Y)
        return np.exp(-sq_dists(X, Y) / (2 * self.bandwidth**2))

    def grad_x(self, X, Y):
        X, Y = _pair(X, Y)
        K = self.matrix(X, Y)
        diff = X[:, None, :] - Y[None, :, :]
        return -diff * (K / self.bandwidth**2)[:, :, None]

    def grad_x_sum(self, X, Y):
        X, Y = _pair(X, Y)
        K = self.matrix(X, Y)
        # sum_j -(x_j - y) k_j / h^2
        return (Y * K.sum(axis=0)[:, None] - K.T @ X) / self.bandwidth**2

    def grad_trace(self, X, Y):
        X, Y = _pair(X, Y)
        h2 = self.bandwidth**2
        D = sq_dists(X, Y)
        return (X.shape[1] / h2 - D / h2**2) * np.exp(-D / (2 * h2))


class _FeatureKernel(_Kernel):
    """Kernel given by k(x, y) = sum_l phi_l(x) phi_l(y)."""

    dim: int

    def matrix(self, X, Y):
        X, Y = _pair(X, Y)
        return self.features(X) @ self.features(Y).T

    def grad_x(self, X, Y):
        X, Y = _pair(X, Y)
        return np.einsum("nld,ml->nmd", self.feature_grads(X), self.features(Y))

    def grad_x_sum(self, X, Y):
        X, Y = _pair(X, Y)
        return self.features(Y) @ self.feature_grads(X).sum(axis=0)

    def grad_trace(self, X, Y):
        X, Y = _pair(X, Y)
        return np.einsum("nld,mld->nm", self.feature_grads(X), self.feature_grads(Y))


@dataclass(frozen=True)
class Linear(_FeatureKernel):
    """k(x, y) = x^T y + 1.

    The dimension is inferred from the inputs; ``dim`` is only needed when
    the kernel is used as a feature bank (rank checks, feature-form KSD).
    """

    dim: int | None = None

    def bank(self, d=None):
        d = d if d is not None else self.dim
        if d is None:
            raise ArgumentError("Linear kernel needs a dimension to build its features")
        return LinearFeatures(int(d))

    def features(self, X):
        X = np.asarray(X, dtype=float)
        return self.bank(X.shape[-1] if self.dim is None else None).features(X)

    def feature_grads(self, X):
        X = np.asarray(X, dtype=float)
        return self.bank(X.shape[-1] if self.dim is None else None).feature_grads(X)

    def matrix(self, X, Y):
        X, Y = _pair(X, Y)
        return X @ Y.T + 1.0

    def grad_x(self, X, Y):
        X, Y = _pair(X, Y)
        return np.broadcast_to(Y[None, :, :], (X.shape[0],) + Y.shape).copy()

    def grad_x_sum(self, X, Y):
        X, Y = _pair(X, Y)
        return X.shape[0] * Y

    def grad_trace(self, X, Y):
        X, Y = _pair(X, Y)
        return np.full((X.shape[0], Y.shape[0]), float(X.shape[1]))


@dataclass(frozen=True)
class FeatureKernel(_FeatureKernel):
    """k(x, y) = sum_l phi_l(x) phi_l(y) for an explicit bank."""

    bank: FeatureBank

    @property
    def dim(self):
        return self.bank.dim

    def with_bandwidth(self, h):
        if isinstance(self.bank, RandomCosineFeatures):
            return FeatureKernel(self.bank.with_bandwidth(h))
        return self

    def features(self, X):
        return self.bank.features(X)

    def feature_grads(self, X):
        return self.bank.feature_grads(X)


@dataclass(frozen=True)
class LinearPlusRandom(_FeatureKernel):
    """k(x, y) = alpha (1 + x^T y) + beta sum_l phi(x, w_l) phi(y, w_l).

    ``phi(x, w) = sqrt(2) cos(w_1^T x / h + w_0)`` is the unnormalized cosine
    feature; since the bank stores features scaled by 1/sqrt(m), the random
    block is weighted by ``beta * m``.
    """

    alpha: float
    beta: float
    bank: RandomCosineFeatures

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise ArgumentError("alpha and beta must be positive")

    @property
    def dim(self):
        return self.bank.dim

    @property
    def size(self):
        return self.dim + 1 + self.bank.size

    def with_bandwidth(self, h):
        return LinearPlusRandom(self.alpha, self.beta, self.bank.with_bandwidth(h))

    def _scales(self):
        return np.sqrt(self.alpha), np.sqrt(self.beta * self.bank.size)

    def features(self, X):
        X = as_points(X, self.dim)
        a, b = self._scales()
        lin = LinearFeatures(self.dim).features(X)
        return np.hstack([a * lin, b * self.bank.features(X)])

    def feature_grads(self, X):
        X = as_points(X, self.dim)
        a, b = self._scales()
        lin = LinearFeatures(self.dim).feature_grads(X)
        return np.concatenate([a * lin, b * self.bank.feature_grads(X)], axis=1)


KernelSpec = Rbf | Linear | FeatureKernel | LinearPlusRandom


def feature_bank_of(k, d=None):
    """The explicit features behind a kernel, or None for Rbf."""
    if isinstance(k, Rbf):
        return None
    if isinstance(k, Linear):
        return k.bank(d)
    return k


def kernel_eval(k: KernelSpec, x, y) -> float:
    x = as_vector(x, name="x")
    y = as_vector(y, x.shape[0], name="y")
    return float(k.matrix(x[None, :], y[None, :])[0, 0])


def kernel_grad_x(k: KernelSpec, x, y) -> np.ndarray:
    x = as_vector(x, name="x")
    y = as_vector(y, x.shape[0], name="y")
    return k.grad_x(x[None, :], y[None, :])[0, 0]


def median_bandwidth(X) -> float:
    """Median-trick bandwidth.

    Returns h with h^2 = med / (2 log(n + 1)), where ``med`` is the lower
    median of the pairwise squared distances, so that
    exp(-|x - y|^2 / (2 h^2)) = exp(-log(n + 1) |x - y|^2 / med).
    """
    X = as_points(X)
    n = X.shape[0]
    if n < 2:
        raise DegenerateInputError("median bandwidth needs at least two particles")
    iu = np.triu_indices(n, k=1)
    d2 = np.sort(sq_dists(X, X)[iu])
    med = d2[(d2.size - 1) // 2]
    if med <= 0:
        raise DegenerateInputError("median pairwise distance is zero")
    return float(np.sqrt(med / (2.0 * np.log(n + 1))))


def make_linear_plus_random(d, n, h, seed) -> KernelSpec:
    """Composite kernel whose total feature count equals the particle count ``n``.

    Falls back to the plain linear kernel when n <= d + 1.
    """
    d, n = int(d), int(n)
    if n < 1 or d < 1:
        raise ArgumentError(f"need d >= 1 and n >= 1, got d={d}, n={n}")
    if n <= d + 1:
        return Linear(d)
    m = n - d - 1
    return LinearPlusRandom(1.0 / (d + 1), 1.0 / m, make_random_cosine_bank(d, m, h, seed))
