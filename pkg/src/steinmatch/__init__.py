"""Stein variational gradient descent with interchangeable kernels and moment-matching diagnostics."""

from .exceptions import (
    ArgumentError,
    ConfigError,
    ConsistencyError,
    DegenerateInputError,
    DivergenceError,
    NumericOverflowError,
    SteinMatchError,
    UnsupportedError,
)
from .kernels import (
    FeatureKernel,
    Linear,
    LinearFeatures,
    LinearPlusRandom,
    RandomCosineFeatures,
    Rbf,
    feature_eval,
    kernel_eval,
    kernel_grad_x,
    make_linear_plus_random,
    make_random_cosine_bank,
    median_bandwidth,
)
from .metrics import (
    MomentReport,
    QuadraticFunction,
    SteinEquationSolution,
    ksd_squared,
    ksd_squared_features,
    mmd_squared,
    moment_report,
    solve_stein_equation_gaussian,
    steinalized_kernel,
)
from .svgd import (
    AdaGrad,
    Fixed,
    RunReport,
    SvgdConfig,
    fixed_point_residual,
    rank_condition,
    run,
    run_polished,
    svgd_step,
    velocity_field,
)
from .targets import (
    GaussianTarget,
    GmmTarget,
    RbmTarget,
    exact_moments,
    make_random_gmm,
    make_random_nonspherical_gaussian,
    make_random_rbm,
    sample_exact,
    score,
)

__version__ = "0.1.0"
