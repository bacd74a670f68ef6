"""Stein variational gradient descent on a fixed set of particles."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional, Union

import numpy as np

from ._utils import as_points
from .exceptions import (
    ArgumentError,
    DegenerateInputError,
    DivergenceError,
    NumericOverflowError,
)
from .kernels import (
    FeatureKernel,
    KernelSpec,
    LinearPlusRandom,
    RandomCosineFeatures,
    Rbf,
    feature_bank_of,
    median_bandwidth,
)

logger = logging.getLogger(__name__)

DIVERGENCE_THRESHOLD = 1e6


@dataclass(frozen=True)
class Fixed:
    pass


@dataclass(frozen=True)
class AdaGrad:
    """Per-coordinate adaptive step.

    a <- momentum * a + (1 - momentum) * g^2;  step = eps * g / (fudge + sqrt(a)).
    """

    fudge: float = 1e-6
    momentum: float = 0.9

    def __post_init__(self):
        if not self.fudge > 0:
            raise ArgumentError("fudge must be positive")
        if not 0 <= self.momentum < 1:
            raise ArgumentError("momentum must lie in [0, 1)")


@dataclass(frozen=True)
class SvgdConfig:
    """Run settings.

    Attributes:
        step_size: Base step ``eps``.
        max_iters: Upper bound on the number of updates.
        residual_tol: Stop once ``fixed_point_residual`` falls to this value.
        scheduler: ``Fixed()`` or ``AdaGrad(...)``.
        seed: Used only when particles must be initialized by the caller helpers.
        adapt_bandwidth: Re-run the median trick during iteration; every
            iteration for Rbf and every ``feature_rebandwidth_every``
            iterations for random-cosine banks (directions stay fixed).
        rank_tol: Relative singular-value threshold of the rank check.
    """

    step_size: float = 0.05
    max_iters: int = 5000
    residual_tol: float = 1e-7
    scheduler: Union[Fixed, AdaGrad] = field(default_factory=AdaGrad)
    seed: int = 0
    adapt_bandwidth: bool = False
    feature_rebandwidth_every: int = 50
    rank_tol: float = 1e-10

    def __post_init__(self):
        if not self.step_size > 0:
            raise ArgumentError("step_size must be positive")
        if self.max_iters < 0:
            raise ArgumentError("max_iters must be nonnegative")
        if not self.residual_tol >= 0:
            raise ArgumentError("residual_tol must be nonnegative")


@dataclass
class RunReport:
    iterations_run: int
    final_residual: float
    residual_trace: list
    converged: bool
    rank_ok: Optional[bool]
    wall_time: float
    numeric_rank: Optional[int] = None
    rank_feasible: Optional[bool] = None
    kernel: Optional[KernelSpec] = None


class RankCheck(NamedTuple):
    ok: bool
    numeric_rank: int
    feasible: bool


def initial_particles(n, d, seed, scale=2.0):
    """Overdispersed start: i.i.d. N(0, scale^2 I)."""
    rng = np.random.default_rng(int(seed) & ((1 << 64) - 1))
    return scale * rng.standard_normal((int(n), int(d)))


def _velocity(target, k, X, Y):
    S = target.score(X)
    if isinstance(k, (FeatureKernel, LinearPlusRandom)):
        # (1/n) phi(y)^T sum_j [phi(x_j) s_j^T + grad phi(x_j)]: O(n m d), no Gram matrix
        G = k.features(X).T @ S + k.feature_grads(X).sum(axis=0)
        return k.features(Y) @ G / X.shape[0]
    return (k.matrix(X, Y).T @ S + k.grad_x_sum(X, Y)) / X.shape[0]


def velocity_field(target, k: KernelSpec, X, y) -> np.ndarray:
    """Stein velocity (1/n) sum_j [score(x_j) k(x_j, y) + grad_{x_j} k(x_j, y)].

    ``y`` may be a single point ``(d,)`` or a batch ``(m, d)``.
    """
    X = as_points(X, target.dim)
    y = np.asarray(y, dtype=float)
    single = y.ndim == 1
    Y = as_points(y[None, :] if single else y, target.dim, name="y")
    V = _velocity(target, k, X, Y)
    return V[0] if single else V


def fixed_point_residual(target, k: KernelSpec, X) -> float:
    """Max over particles of the infinity-norm of the velocity field."""
    X = as_points(X, target.dim)
    return float(np.abs(_velocity(target, k, X, X)).max())


def _apply(X, delta):
    bad = ~np.all(np.isfinite(delta), axis=1)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise NumericOverflowError(f"non-finite update for particle {i}", index=i)
    return X + delta


def svgd_step(target, k: KernelSpec, X, step: float) -> np.ndarray:
    """One simultaneous update of all particles from their pre-step positions."""
    if not step >= 0:
        raise ArgumentError(f"step must be nonnegative, got {step}")
    X = as_points(X, target.dim)
    V = _velocity(target, k, X, X)
    return _apply(X, step * V)


def rank_condition(bank, X, rel_tol: float = 1e-10) -> RankCheck:
    """Check rank(Phi) >= m for the (m x n) feature-by-particle matrix.

    When m > n the condition is infeasible: ``ok`` is False and
    ``feasible`` is False.
    """
    X = as_points(X, bank.dim)
    Phi = bank.features(X).T
    m, n = Phi.shape
    sv = np.linalg.svd(Phi, compute_uv=False)
    rank = int(np.sum(sv >= rel_tol * sv[0])) if sv[0] > 0 else 0
    feasible = m <= n
    return RankCheck(feasible and rank >= m, rank, feasible)


def _has_random_bank(k):
    return isinstance(k, LinearPlusRandom) or (
        isinstance(k, FeatureKernel) and isinstance(k.bank, RandomCosineFeatures)
    )


def run(target, k: KernelSpec, X0, cfg: SvgdConfig = SvgdConfig(), *, divergence_threshold=None):
    """Iterate SVGD until the residual drops to ``cfg.residual_tol``.

    Returns:
        ``(X, report)``. ``report.kernel`` holds the kernel in force at the
        end of the run (its bandwidth may have been re-estimated).

    Raises:
        DivergenceError: if the residual exceeds ``divergence_threshold``
            (default 1e6).
    """
    limit = DIVERGENCE_THRESHOLD if divergence_threshold is None else divergence_threshold
    start = time.perf_counter()
    X = as_points(X0, target.dim, name="X0").copy()
    adaptive = isinstance(cfg.scheduler, AdaGrad)
    acc = np.zeros_like(X)
    trace = []

    def rebandwidth(kern, it):
        if not cfg.adapt_bandwidth or X.shape[0] < 2:
            return kern
        if isinstance(kern, Rbf) or (
            _has_random_bank(kern) and it % cfg.feature_rebandwidth_every == 0
        ):
            try:
                return kern.with_bandwidth(median_bandwidth(X))
            except DegenerateInputError:  # collapsed particles keep the old bandwidth
                return kern
        return kern

    k_cur = k
    it = 0
    k_cur = rebandwidth(k_cur, it)
    V = _velocity(target, k_cur, X, X)
    residual = float(np.abs(V).max())
    while residual > cfg.residual_tol and it < cfg.max_iters:
        if adaptive:
            sch = cfg.scheduler
            acc = sch.momentum * acc + (1.0 - sch.momentum) * V**2
            delta = cfg.step_size * V / (sch.fudge + np.sqrt(acc))
        else:
            delta = cfg.step_size * V
        X = _apply(X, delta)
        it += 1
        k_cur = rebandwidth(k_cur, it)
        V = _velocity(target, k_cur, X, X)
        residual = float(np.abs(V).max())
        trace.append(residual)
        if not np.isfinite(residual) or residual > limit:
            raise DivergenceError(
                f"residual {residual:.3g} exceeded {limit:g} at iteration {it}",
                trace,
            )

    report = RunReport(
        iterations_run=it,
        final_residual=residual,
        residual_trace=trace,
        converged=residual <= cfg.residual_tol,
        rank_ok=None,
        wall_time=time.perf_counter() - start,
        kernel=k_cur,
    )
    bank = feature_bank_of(k_cur, target.dim)
    if bank is not None:
        check = rank_condition(bank, X, cfg.rank_tol)
        report.rank_ok = check.ok
        report.numeric_rank = check.numeric_rank
        report.rank_feasible = check.feasible
    logger.debug("svgd run: %d iterations, residual %.3e", it, residual)
    return X, report


def run_polished(
    target,
    k: KernelSpec,
    X0,
    cfg: SvgdConfig = SvgdConfig(),
    *,
    warmup_iters=500,
    polish_step=None,
    min_polish_step=1e-6,
):
    """Adaptive warm-up followed by plain fixed-step polishing.

    The AdaGrad phase moves overdispersed particles into the basin of a
    fixed point but stalls at a residual of order ``step_size``; fixed
    steps then converge geometrically. A polish attempt that lets the
    residual grow tenfold is rolled back and retried with half the step.
    The total number of updates never exceeds ``cfg.max_iters``.
    """
    start = time.perf_counter()
    budget = cfg.max_iters
    trace = []
    X = as_points(X0, target.dim, name="X0")
    report = None
    if isinstance(cfg.scheduler, AdaGrad) and budget > 0:
        warm = replace(cfg, max_iters=min(warmup_iters, budget))
        X, report = run(target, k, X, warm)
        budget -= report.iterations_run
        trace += report.residual_trace
        k = report.kernel
    step = cfg.step_size if polish_step is None else polish_step
    while True:
        fixed = replace(cfg, scheduler=Fixed(), step_size=step, max_iters=budget)
        residual = fixed_point_residual(target, k, X) if report is None else report.final_residual
        try:
            X_new, rep = run(target, k, X, fixed, divergence_threshold=max(10 * residual, 1e-300))
        except DivergenceError as exc:
            budget -= len(exc.trace)
            trace += exc.trace
            step /= 2
            if step < min_polish_step or budget <= 0:
                break
            continue
        X, report = X_new, rep
        trace += rep.residual_trace
        k = rep.kernel
        budget -= rep.iterations_run
        break
    if report is None or report.iterations_run == 0 and trace:
        X, report = run(target, k, X, replace(cfg, scheduler=Fixed(), max_iters=0))
    report.iterations_run = len(trace)
    report.residual_trace = trace
    report.wall_time = time.perf_counter() - start
    return X, report
