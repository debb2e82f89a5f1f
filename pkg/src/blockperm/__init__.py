"""Permutation tests for complete block designs.

A tilted likelihood-ratio statistic (the convex conjugate of the
within-block permutation CGF), its admissible polytope, saddlepoint tail
approximations, exact and Monte Carlo permutation p-values, and the
simulation harnesses for the accuracy and power studies.
"""

from ._backend import BACKEND_NAME
from .cgf import TiltPoint, kappa_eval, restricted_kappa
from .design import (
    BlockDesign,
    PermutationSet,
    SortedDesign,
    enumerate_pi,
    load_csv,
    make_design,
    reduced_means,
    sort_design,
)
from .errors import (
    BlockPermError,
    CapacityError,
    DegenerateDesignError,
    DomainError,
    LevelSetEscapesDomainError,
    NearBoundaryError,
    NumericalDegeneracyError,
    ValidationError,
)
from .numerics import (
    RngStream,
    chi_sq_survival,
    f_survival,
    sphere_area,
    sphere_sample,
    sqrt_and_det,
    sym_eigen,
)
from .permtest import (
    PermutationTestResult,
    TailTable,
    TailTableConfig,
    exact_pvalue,
    f_statistic,
    mc_pvalue,
    observed_lambda,
    tail_table,
    u_to_f,
)
from .simulate import (
    AccuracyResult,
    ErrorModel,
    PowerResult,
    UnconditionalResult,
    accuracy_experiment,
    default_effect_grid,
    effect_vector,
    gen_design,
    power_experiment,
    saddlepoint_pvalues,
    unconditional_accuracy,
)
from .statistic import (
    DomainLocation,
    Face,
    SaddlepointSolution,
    classify,
    lambda_at,
    lambda_boundary,
    ray_boundary_radius,
    solve,
)
from .tail import (
    DesignTailModel,
    QuadraticModel,
    RadialSolution,
    TailApproximation,
    approximate_tail,
    big_g,
    delta,
    radial_root,
    sphere_rule,
    tail_bn,
    tail_constant,
    tail_lr,
)

__version__ = "0.1.0"


def backend_name() -> str:
    """Which kernel is active: 'compiled' or 'python'."""
    return BACKEND_NAME
