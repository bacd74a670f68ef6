"""Target distributions defined through their score functions.

Every target exposes ``dim``, ``score``, an unnormalized ``log_density``,
an exact sampler and exact first/second moments. All methods accept either
a single point of shape ``(d,)`` or a batch of shape ``(n, d)``.
"""

from __future__ import annotations

import itertools
from typing import NamedTuple, Optional

import numpy as np
from scipy.optimize import bisect
from scipy.special import log_softmax, logsumexp

from ._utils import as_points, as_vector, make_rng
from .exceptions import ArgumentError, UnsupportedError

MAX_HIDDEN = 20


class Moments(NamedTuple):
    mean: np.ndarray
    second_moment_diag: np.ndarray
    covariance: Optional[np.ndarray]


def _batched(method):
    """Let a method written for (n, d) arrays also accept one (d,) point."""

    def wrapper(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        X = as_points(x[None, :] if single else x, self.dim, name="x")
        out = method(self, X)
        return out[0] if single else out

    wrapper.__name__ = method.__name__
    wrapper.__doc__ = method.__doc__
    return wrapper


class GaussianTarget:
    """Multivariate normal N(mean, covariance).

    Args:
        mean: Mean vector, shape ``(d,)``.
        covariance: Symmetric positive-definite matrix, shape ``(d, d)``.
    """

    def __init__(self, mean, covariance):
        mean = as_vector(mean, name="mean")
        cov = np.atleast_2d(np.asarray(covariance, dtype=float))
        d = mean.shape[0]
        if cov.shape != (d, d):
            raise ArgumentError(f"covariance must be ({d}, {d}), got {cov.shape}")
        if not np.all(np.isfinite(cov)):
            raise ArgumentError("covariance contains non-finite entries")
        scale = max(np.abs(cov).max(), 1.0)
        if np.abs(cov - cov.T).max() > 1e-12 * scale:
            raise ArgumentError("covariance is not symmetric")
        cov = 0.5 * (cov + cov.T)
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise ArgumentError("covariance is not positive definite") from exc
        eye = np.eye(d)
        precision = np.linalg.solve(cov, eye)
        precision = 0.5 * (precision + precision.T)
        self.mean = mean
        self.covariance = cov
        self.precision = precision
        self.cholesky = chol
        self.dim = d

    @classmethod
    def standard(cls, d):
        return cls(np.zeros(d), np.eye(d))

    @_batched
    def score(self, X):
        return (self.mean - X) @ self.precision

    @_batched
    def log_density(self, X):
        diff = X - self.mean
        return -0.5 * np.einsum("ni,ij,nj->n", diff, self.precision, diff)

    def sample(self, n, seed):
        rng = make_rng(seed)
        z = rng.standard_normal((n, self.dim))
        return self.mean + z @ self.cholesky.T

    def moments(self):
        return Moments(
            self.mean.copy(),
            np.diag(self.covariance) + self.mean**2,
            self.covariance.copy(),
        )


class GmmTarget:
    """Mixture of unit-covariance Gaussians, sum_k w_k N(mu_k, I).

    Args:
        weights: Mixture weights, shape ``(K,)``; must sum to one.
        means: Component means, shape ``(K, d)``.
    """

    def __init__(self, weights, means):
        weights = as_vector(weights, name="weights")
        means = as_points(means, name="means")
        if means.shape[0] != weights.shape[0]:
            raise ArgumentError("weights and means disagree on the number of components")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ArgumentError("weights must be nonnegative and sum to 1")
        self.weights = weights
        self.means = means
        self.dim = means.shape[1]
        with np.errstate(divide="ignore"):
            self._log_weights = np.log(weights)

    def _component_logits(self, X):
        diff = X[:, None, :] - self.means[None, :, :]
        return self._log_weights - 0.5 * np.einsum("nkd,nkd->nk", diff, diff)

    def responsibilities(self, x):
        X = np.atleast_2d(np.asarray(x, dtype=float))
        return np.exp(log_softmax(self._component_logits(X), axis=1))

    @_batched
    def score(self, X):
        r = np.exp(log_softmax(self._component_logits(X), axis=1))
        return r @ self.means - X

    @_batched
    def log_density(self, X):
        return logsumexp(self._component_logits(X), axis=1)

    def sample(self, n, seed):
        rng = make_rng(seed)
        comp = rng.choice(len(self.weights), size=n, p=self.weights)
        return self.means[comp] + rng.standard_normal((n, self.dim))

    def moments(self):
        mean = self.weights @ self.means
        second = 1.0 + self.weights @ self.means**2
        centered = self.means - mean
        cov = np.eye(self.dim) + (self.weights[:, None] * centered).T @ centered
        return Moments(mean, second, cov)


class RbmTarget:
    """Gaussian-Bernoulli RBM marginalized over hidden units h in {-1, +1}^d'.

    The joint is p(x, h) proportional to
    exp(x^T W h + b^T x + c^T h - |x|^2 / 2), so the marginal over x is a
    mixture of 2^d' unit-covariance Gaussians centred at W h + b.

    Args:
        W: Coupling matrix, shape ``(d, d')``.
        visible_bias: Shape ``(d,)``.
        hidden_bias: Shape ``(d',)``.
    """

    def __init__(self, W, visible_bias, hidden_bias):
        W = np.atleast_2d(np.asarray(W, dtype=float))
        b = as_vector(visible_bias, name="visible_bias")
        c = as_vector(hidden_bias, name="hidden_bias")
        if W.shape != (b.shape[0], c.shape[0]):
            raise ArgumentError(f"W must be ({b.shape[0]}, {c.shape[0]}), got {W.shape}")
        if not np.all(np.isfinite(W)):
            raise ArgumentError("W contains non-finite entries")
        self.W = W
        self.visible_bias = b
        self.hidden_bias = c
        self.dim = b.shape[0]
        self.n_hidden = c.shape[0]

    @_batched
    def score(self, X):
        return self.visible_bias - X + np.tanh(X @ self.W + self.hidden_bias) @ self.W.T

    @_batched
    def log_density(self, X):
        z = X @ self.W + self.hidden_bias
        log_cosh = np.logaddexp(z, -z) - np.log(2.0)
        return X @ self.visible_bias - 0.5 * np.sum(X**2, axis=1) + log_cosh.sum(axis=1)

    def components(self):
        """All hidden configurations with their mixture weights and means.

        Returns:
            (weights, means) with shapes ``(2^d',)`` and ``(2^d', d)``.
        """
        if self.n_hidden > MAX_HIDDEN:
            raise UnsupportedError(
                f"exact enumeration needs d' <= {MAX_HIDDEN}, got d'={self.n_hidden}"
            )
        H = np.array(list(itertools.product((-1.0, 1.0), repeat=self.n_hidden)))
        if self.n_hidden == 0:
            H = np.zeros((1, 0))
        means = H @ self.W.T + self.visible_bias
        logits = H @ self.hidden_bias + 0.5 * np.sum(means**2, axis=1)
        return np.exp(log_softmax(logits)), means

    def sample(self, n, seed):
        weights, means = self.components()
        rng = make_rng(seed)
        comp = rng.choice(len(weights), size=n, p=weights)
        return means[comp] + rng.standard_normal((n, self.dim))

    def moments(self):
        weights, means = self.components()
        return GmmTarget(weights / weights.sum(), means).moments()


TargetModel = GaussianTarget | GmmTarget | RbmTarget


def score(target: TargetModel, x) -> np.ndarray:
    """Score function grad log p(x) for one point or a batch."""
    return target.score(x)


def sample_exact(target: TargetModel, n: int, seed: int) -> np.ndarray:
    """Draw ``n`` i.i.d. samples; bit-identical for a fixed seed."""
    if int(n) < 1:
        raise ArgumentError(f"n must be positive, got {n}")
    return target.sample(int(n), seed)


def exact_moments(target: TargetModel) -> Moments:
    return target.moments()


def make_random_nonspherical_gaussian(d, condition_number, seed, alpha_tol=1e-12):
    """Random N(mu, I + a L L^T) whose covariance has a prescribed condition number.

    ``mu`` is uniform on [-3, 3]^d and ``L`` has standard normal entries.
    The scale ``a`` is found by bisection.
    """
    d = int(d)
    if d < 1:
        raise ArgumentError(f"d must be >= 1, got {d}")
    if not condition_number >= 1.0:
        raise ArgumentError(f"condition_number must be >= 1, got {condition_number}")
    rng = make_rng(seed)
    mean = rng.uniform(-3.0, 3.0, size=d)
    if condition_number == 1.0:
        return GaussianTarget(mean, np.eye(d))
    if d == 1:
        raise ArgumentError("a 1-dimensional covariance always has condition number 1")
    L = rng.standard_normal((d, d))
    gram = L @ L.T
    lam = np.linalg.eigvalsh(gram)
    lo_eig, hi_eig = lam[0], lam[-1]

    def excess(a):
        return (1.0 + a * hi_eig) / (1.0 + a * lo_eig) - condition_number

    upper = 1.0
    while excess(upper) < 0:
        upper *= 2.0
        if upper > 1e300:
            raise ArgumentError("requested condition number is not reachable for this draw")
    a = bisect(excess, 0.0, upper, xtol=alpha_tol, rtol=4 * np.finfo(float).eps, maxiter=2000)
    cov = np.eye(d) + a * gram
    return GaussianTarget(mean, 0.5 * (cov + cov.T))


def make_random_gmm(d, n_components, alpha, seed):
    """Equal-weight mixture sum_k N(alpha * mu_k, I) with mu_k uniform on [0, 1]^d."""
    if int(n_components) < 1:
        raise ArgumentError("n_components must be positive")
    rng = make_rng(seed)
    mu = rng.uniform(0.0, 1.0, size=(int(n_components), int(d)))
    weights = np.full(int(n_components), 1.0 / int(n_components))
    return GmmTarget(weights, alpha * mu)


def make_random_rbm(d, n_hidden, seed, coupling=0.1):
    """RBM with b, c ~ N(0, I) and coupling entries drawn from {-coupling, +coupling}."""
    rng = make_rng(seed)
    b = rng.standard_normal(int(d))
    c = rng.standard_normal(int(n_hidden))
    W = coupling * rng.choice((-1.0, 1.0), size=(int(d), int(n_hidden)))
    return RbmTarget(W, b, c)
