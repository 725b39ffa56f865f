"""Gaussian process covariance kernels constrained by linear PDEs.

Kernels whose sample paths solve the 3D wave equation are built from two
initial-condition kernels through double sphere averages; constraints are
checked numerically against bump test functions.
"""

__version__ = "0.1.0"

from .errors import (
    CholeskyFailure,
    ConfigError,
    InvalidResolution,
    MissingCoefficientDerivative,
    NumericFailure,
    SingularGram,
    UnsupportedDerivative,
    WaveGPError,
)
from .gpr import (
    ObservationSet,
    Posterior,
    fit_posterior,
    posterior_cov,
    posterior_mean,
    posterior_std,
    posterior_var,
    read_observations,
    sample_posterior,
    sample_prior,
)
from .kernels import (
    KernelSpec,
    cross_hessian_kernel,
    cross_matrix,
    eval_kernel,
    gram_matrix,
    grad1_kernel,
    grad2_kernel,
    std_function,
)
from .sphere import SphereRule, build_sphere_rule, gauss_legendre, integrate_double_sphere, integrate_sphere
from .verify import (
    BumpTestFunction,
    Coefficient,
    GaussianFieldSampler,
    MonteCarloStats,
    OperatorSpec,
    PathwiseWaveSampler,
    QuadRule,
    ResidualReport,
    Term,
    apply_adjoint,
    box_rule,
    dalembertian,
    make_bump_bank,
    make_rule,
    monte_carlo_pathwise,
    parse_terms,
    polar_rule,
    residual,
    residual_report,
    residual_second_moment,
    transport2d,
    verify_kernel_constraint,
)
from .wave import (
    WaveFieldSample,
    WaveModel,
    kirchhoff_propagate,
    ku_wave,
    kv_wave,
    kw,
    kw_matrix,
    sample_wave_field,
)
