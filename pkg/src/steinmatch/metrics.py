"""Discrepancies, moment errors and the Gaussian Stein-equation solver."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._utils import as_points, as_vector, sq_dists
from .exceptions import ArgumentError, ConsistencyError
from .kernels import KernelSpec, Rbf, median_bandwidth
from .targets import GaussianTarget

_BLOCK = 1 << 21


@dataclass(frozen=True)
class QuadraticFunction:
    """f(x) = x^T A x + b^T x + c."""

    A: np.ndarray
    b: np.ndarray
    c: float

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = as_vector(self.b, name="b")
        if A.shape != (b.shape[0], b.shape[0]):
            raise ArgumentError(f"A must be ({b.shape[0]}, {b.shape[0]}), got {A.shape}")
        if not (np.all(np.isfinite(A)) and np.isfinite(self.c)):
            raise ArgumentError("quadratic coefficients must be finite")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", float(self.c))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.einsum("...i,ij,...j->...", x, self.A, x) + x @ self.b + self.c


@dataclass(frozen=True)
class SteinEquationSolution:
    """Linear field F(x) = G x + g and offset b* with f = T_p^T F + b*.

    ``coefficients`` has one row per linear feature (x_1, ..., x_d, 1): row
    l < d is column l of G, the last row is g.
    """

    coefficients: np.ndarray
    offset: float

    @property
    def implied_expectation(self):
        return self.offset

    @property
    def G(self):
        return self.coefficients[:-1].T

    @property
    def g(self):
        return self.coefficients[-1]

    def field(self, x):
        return np.asarray(x, dtype=float) @ self.G.T + self.g

    def stein_value(self, target, x):
        """(T_p^T F)(x) + b*."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.sum(target.score(x) * self.field(x), axis=1) + np.trace(self.G) + self.offset


@dataclass
class MomentReport:
    mse_first: float
    mse_second: float
    est_avg_variance: float
    mmd_sq: Optional[float] = None
    ksd_sq: Optional[float] = None


def steinalized_matrix(target, k: KernelSpec, X, Y) -> np.ndarray:
    """kappa_p(x_i, y_j) for all pairs, shape ``(n, m)``.

    kappa_p(x, y) = s(x)^T s(y) k + s(x)^T grad_y k + s(y)^T grad_x k + tr(grad_x grad_y k).
    """
    X = as_points(X, target.dim)
    Y = as_points(Y, target.dim, name="Y")
    Sx, Sy = target.score(X), target.score(Y)
    K = k.matrix(X, Y)
    gx = k.grad_x(X, Y)  # grad in x_i at (x_i, y_j)
    gy = np.swapaxes(k.grad_x(Y, X), 0, 1)  # grad in y_j, by symmetry of k
    return (
        (Sx @ Sy.T) * K
        + np.einsum("id,ijd->ij", Sx, gy)
        + np.einsum("jd,ijd->ij", Sy, gx)
        + k.grad_trace(X, Y)
    )


def steinalized_kernel(target, k: KernelSpec, x, y) -> float:
    x = as_vector(x, target.dim)
    y = as_vector(y, target.dim, name="y")
    return float(steinalized_matrix(target, k, x[None, :], y[None, :])[0, 0])


def _rbf_steinalized_sum(target, h, X):
    # closed form without the (n, n, d) gradient tensor
    S = target.score(X)
    n, d = X.shape
    h2 = h * h
    total = scale = 0.0
    sx = np.sum(S * X, axis=1)
    rows = max(1, _BLOCK // n)
    for i in range(0, n, rows):
        Xi, Si, sxi = X[i : i + rows], S[i : i + rows], sx[i : i + rows]
        D = sq_dists(Xi, X)
        K = np.exp(-D / (2 * h2))
        # s(x)^T grad_y k = s(x)^T (x - y) k / h^2 ; s(y)^T grad_x k = -s(y)^T (x - y) k / h^2
        cross = (sxi[:, None] - Si @ X.T) - (Xi @ S.T - sx[None, :])
        kappa = K * ((Si @ S.T) + cross / h2 + d / h2 - D / h2**2)
        total += kappa.sum()
        scale += np.abs(kappa).sum()
    return total, scale


def ksd_squared(target, k: KernelSpec, X, *, block=None) -> float:
    """V-statistic (1/n^2) sum_ij kappa_p(x_i, x_j)."""
    X = as_points(X, target.dim)
    n = X.shape[0]
    if isinstance(k, Rbf):
        total, scale = _rbf_steinalized_sum(target, k.bandwidth, X)
    else:
        rows = block or max(1, _BLOCK // (n * target.dim))
        total = scale = 0.0
        for i in range(0, n, rows):
            kappa = steinalized_matrix(target, k, X[i : i + rows], X)
            total += kappa.sum()
            scale += np.abs(kappa).sum()
    return _clamp(total / n**2, scale / n**2)


def _clamp(value, scale):
    """Round-off below zero is clamped; anything larger signals a bug."""
    if value >= 0:
        return float(value)
    if value >= -max(1e-12, 1e-9 * scale):
        return 0.0
    raise ConsistencyError(f"kernelized Stein discrepancy came out negative: {value:.3e}")


def stein_feature_means(target, bank, X) -> np.ndarray:
    """(1/n) sum_i T_p phi_l(x_i) for every feature, shape ``(m, d)``."""
    X = as_points(X, target.dim)
    S = target.score(X)
    return (bank.features(X).T @ S + bank.feature_grads(X).sum(axis=0)) / X.shape[0]


def ksd_squared_features(target, bank, X) -> float:
    """Feature-wise KSD^2: sum_l |(1/n) sum_i T_p phi_l(x_i)|^2.

    The 1/m normalization lives inside the bank's feature scaling, so this
    equals ``ksd_squared`` for the matching feature kernel.
    """
    G = stein_feature_means(target, bank, X)
    return float(np.sum(G**2))


def mmd_squared(X, Y, k: KernelSpec | None = None) -> float:
    """V-statistic mean(K_XX) - 2 mean(K_XY) + mean(K_YY).

    Defaults to an Rbf kernel with the median bandwidth of the joint set.
    """
    X = as_points(X, name="X")
    Y = as_points(Y, X.shape[1], name="Y")
    if k is None:
        k = Rbf(median_bandwidth(np.vstack([X, Y])))
    if X.shape == Y.shape and np.array_equal(X, Y):
        return 0.0
    return float(k.matrix(X, X).mean() - 2.0 * k.matrix(X, Y).mean() + k.matrix(Y, Y).mean())


def moment_report(X, target) -> MomentReport:
    """Per-dimension moment errors of the particles against exact moments."""
    X = as_points(X, target.dim)
    mom = target.moments()
    mean = X.mean(axis=0)
    second = np.mean(X**2, axis=0)
    return MomentReport(
        mse_first=float(np.mean((mean - mom.mean) ** 2)),
        mse_second=float(np.mean((second - mom.second_moment_diag) ** 2)),
        est_avg_variance=float(np.mean(X.var(axis=0))),
    )


def solve_stein_equation_gaussian(p: GaussianTarget, f: QuadraticFunction) -> SteinEquationSolution:
    """Solve x^T A x + b^T x + c = s(x)^T (G x + g) + tr(G) + b* for a Gaussian p.

    With s(x) = Q (mu - x), matching coefficients gives
    quadratic:  -sym(Q G) = sym(A),
    linear:     G^T Q mu - Q g = b,
    constant:   mu^T Q g + tr(G) + b* = c.
    Taking Q G symmetric picks the solution G = -Sigma sym(A); the
    coefficient equations are then solved as linear systems in Q.
    """
    if not isinstance(p, GaussianTarget):
        raise ArgumentError("the closed-form Stein equation solver needs a Gaussian target")
    d = p.dim
    if f.b.shape[0] != d:
        raise ArgumentError(f"quadratic has dimension {f.b.shape[0]}, target has {d}")
    Q, mu = p.precision, p.mean
    if np.linalg.cond(Q) > 1e14:
        raise ArgumentError("covariance is numerically singular")
    A = 0.5 * (f.A + f.A.T)
    G = np.linalg.solve(-Q, A)
    g = np.linalg.solve(Q, G.T @ Q @ mu - f.b)
    offset = f.c - mu @ Q @ g - np.trace(G)
    coefficients = np.vstack([G.T, g[None, :]])
    return SteinEquationSolution(coefficients, float(offset))
