"""Multi-material topology optimization of PDE coefficients.

A finite-difference library for optimal control problems whose coefficient
must take values from a prescribed finite set: a pointwise multi-material
penalty with piecewise affine convex envelope, its regularized single-valued
resolvent map, exact-derivative semismooth Newton solvers for two model
problems (coefficient in the potential term, coefficient in the diffusion
term with local smoothing), and a continuation driver that tracks the
regularization parameter to machine scale.
"""

from .grid import (
    Grid2D,
    ScalarField,
    SparseOperator,
    GridMismatch,
    NonPositiveCoefficient,
    SingularSystem,
    l2_norm,
    l2_inner,
    gradient_centered,
    assemble_neumann_helmholtz,
    solve_neumann_helmholtz,
    assemble_dirichlet_diffusion,
    solve_dirichlet_diffusion,
    gradient_pairing,
    smoothing_apply,
    smoothing_adjoint,
    Smoothing,
    sparse_solve,
)
from .penalty import (
    MultibangConfig,
    TransitionBands,
    Single,
    Interval,
    ConfigError,
    validate_config,
    g0_eval,
    envelope_eval,
    subgrad_gstar,
    transition_bands,
    prox_point,
    prox_newton_deriv,
    apply_prox_field,
    inactive_indicator_field,
    oracle_prox,
    l1_h_eval,
    l1_hstar_eval,
    l1_subdiff_hstar,
)

from .potential import (
    PotentialProblem,
    NewtonIterate,
    tracking_gradient_check,
)
from .diffusion import DiffusionProblem, trilinear_A
from .driver import (
    ContinuationSettings,
    RunReport,
    LevelRecord,
    NonFiniteResidual,
    newton_step,
    line_search,
    solve_fixed_gamma,
    continuation,
    report_to_text,
)
from .experiments import (
    Metrics,
    ExperimentConfig,
    ZeroReference,
    reference_coefficient,
    build_potential_reference,
    build_diffusion_reference,
    compute_metrics,
    threshold_postprocess,
    subdifferential_select,
    run_experiment,
    run_sweep,
)

__version__ = "0.1.0"

