"""Fractional Brownian motion via its Volterra representation: kernels,
samplers, analytic bounds, path statistics and an experiment harness."""

__version__ = "0.1.0"

from .kernel import (  # noqa: E402
    HurstParameter,
    QuadratureConfig,
    QuadratureError,
    TimeGrid,
    covariance,
    covariance_matrix,
    estimate_kernel_constant,
    increment_covariance,
    kernel_constant,
    kernel_eval,
    kernel_l2_inner,
    kernel_upper_bound,
)
from .sampler import (  # noqa: E402
    CoefficientMatrix,
    Ensemble,
    PathSample,
    SeedSpec,
    build_coefficient_matrix,
    cameron_martin_inner,
    malliavin_derivative,
    sample_ensemble,
    sample_path_cholesky,
    sample_path_volterra,
)

__all__ = [
    "__version__",
    "HurstParameter",
    "QuadratureConfig",
    "QuadratureError",
    "TimeGrid",
    "covariance",
    "covariance_matrix",
    "estimate_kernel_constant",
    "increment_covariance",
    "kernel_constant",
    "kernel_eval",
    "kernel_l2_inner",
    "kernel_upper_bound",
    "CoefficientMatrix",
    "Ensemble",
    "PathSample",
    "SeedSpec",
    "build_coefficient_matrix",
    "cameron_martin_inner",
    "malliavin_derivative",
    "sample_ensemble",
    "sample_path_cholesky",
    "sample_path_volterra",
]
