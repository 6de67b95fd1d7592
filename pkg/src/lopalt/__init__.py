"""Adaptive block-sparse regularization under linear transforms.

Core pieces: matrix-free operators (:mod:`lopalt.linops`), proximal maps
(:mod:`lopalt.prox`), the primal-dual solver and TV baseline
(:mod:`lopalt.solver`), test signals and metrics (:mod:`lopalt.signals`) and
the experiment CLI (:mod:`lopalt.cli`).
"""

from .exceptions import (
    DimensionError,
    DivergenceError,
    FormatError,
    InvertibilityError,
    ParameterError,
)
from .linops import (
    BlockDiagonalOperator,
    Diff1D,
    Diff2D,
    IdentityOperator,
    LinearOperator,
    MatrixOperator,
    ScaledOperator,
    StackedConstraintOperator,
    estimate_operator_norm,
    make_diff_1d,
    make_diff_2d,
    operator_norm,
    sigma_difference,
)
from .prox import (
    phi,
    project_l1_ball,
    prox_absolute_loss,
    prox_perspective,
    prox_perspective_vector,
    prox_quadratic_loss,
    soft_threshold,
    varphi,
)
from .signals import (
    BlockPartition,
    add_awgn,
    cantor_function,
    cantor_signal,
    extract_blocks,
    salt_and_pepper,
    snr,
)
from .solver import (
    LopAltProblem,
    Loss,
    SolveReport,
    SolverParams,
    SolverState,
    check_convergence_condition,
    default_params,
    denoising_problem,
    derive_step_params,
    evaluate_penalty,
    lv_iterate,
    reduce_invertible,
    solve,
    solve_lop,
    taut_string_tv_1d,
    tv_solve,
)

__version__ = "0.1.0"
