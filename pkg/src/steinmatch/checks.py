"""Fast built-in invariant checks behind ``steinmatch check``."""

import numpy as np

from .kernels import (
    FeatureKernel,
    Linear,
    Rbf,
    make_linear_plus_random,
    make_random_cosine_bank,
)
from .metrics import (
    QuadraticFunction,
    ksd_squared,
    ksd_squared_features,
    solve_stein_equation_gaussian,
)
from .svgd import Fixed, SvgdConfig, run
from .targets import (
    GaussianTarget,
    make_random_gmm,
    make_random_nonspherical_gaussian,
    make_random_rbm,
    sample_exact,
)


def _fd_grad(f, x, eps=1e-5):
    E = np.eye(x.size) * eps
    return np.array([(f(x + e) - f(x - e)) / (2 * eps) for e in E])


def _rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1.0)


def check_scores(rng):
    worst = 0.0
    for t in (make_random_nonspherical_gaussian(3, 5.0, 1), make_random_gmm(3, 4, 2.0, 2), make_random_rbm(3, 3, 3)):
        for x in rng.standard_normal((20, 3)):
            worst = max(worst, _rel(t.score(x), _fd_grad(t.log_density, x)))
    return worst <= 1e-5, f"max rel err {worst:.2e}"


def check_kernel_gradients(rng):
    worst = 0.0
    kernels = [Rbf(0.8), Linear(), FeatureKernel(make_random_cosine_bank(3, 16, 1.2, 0)), make_linear_plus_random(3, 10, 1.0, 1)]
    for k in kernels:
        for x, y in rng.standard_normal((20, 2, 3)):
            fd = _fd_grad(lambda z: k(z, y), x)
            an = k.grad_x(x[None], y[None])[0, 0]
            worst = max(worst, _rel(an, fd))
    return worst <= 1e-5, f"max rel err {worst:.2e}"


def check_feature_ksd(rng):
    t = make_random_gmm(2, 3, 1.0, 4)
    k = make_linear_plus_random(2, 12, 0.9, 5)
    X = rng.standard_normal((12, 2))
    a, b = ksd_squared(t, k, X), ksd_squared_features(t, k, X)
    err = abs(a - b) / max(abs(b), 1e-300)
    return err <= 1e-10, f"rel diff {err:.2e}"


def check_stein_equation(rng):
    p = make_random_nonspherical_gaussian(3, 4.0, 6)
    f = QuadraticFunction(rng.standard_normal((3, 3)), rng.standard_normal(3), float(rng.standard_normal()))
    sol = solve_stein_equation_gaussian(p, f)
    A = 0.5 * (f.A + f.A.T)
    expected = np.trace(A @ p.covariance) + p.mean @ A @ p.mean + f.b @ p.mean + f.c
    X = rng.standard_normal((50, 3))
    recon = np.abs(f(X) - sol.stein_value(p, X)).max()
    err = abs(sol.implied_expectation - expected)
    return err <= 1e-8 and recon <= 1e-8, f"expectation err {err:.1e}, reconstruction {recon:.1e}"


def check_linear_exactness(rng):
    t = GaussianTarget.standard(1)
    X, rep = run(t, Linear(), np.array([[-0.5], [2.0]]), SvgdConfig(step_size=0.05, max_iters=20000, residual_tol=1e-10, scheduler=Fixed()))
    err = np.abs(np.sort(np.abs(X.ravel())) - 1.0).mean()
    return rep.converged and err <= 1e-8, f"residual {rep.final_residual:.1e}, |x| err {err:.1e}"


def check_sampler_determinism(rng):
    t = make_random_rbm(4, 3, 7)
    same = sample_exact(t, 100, 42).tobytes() == sample_exact(t, 100, 42).tobytes()
    return same, "bit-identical" if same else "outputs differ"


CHECKS = [
    ("score matches finite differences", check_scores),
    ("kernel gradients match finite differences", check_kernel_gradients),
    ("feature-form KSD equals kernel form", check_feature_ksd),
    ("Gaussian Stein equation solver", check_stein_equation),
    ("linear-kernel SVGD reaches {-1, +1} on N(0, 1)", check_linear_exactness),
    ("exact samplers are deterministic", check_sampler_determinism),
]


def run_checks(seed=0):
    out = []
    for name, fn in CHECKS:
        ok, detail = fn(np.random.default_rng(seed))
        out.append((name, bool(ok), detail))
    return out
