"""Rank-one doubly-nonnegative reformulations of assignment-type problems,
solved by a proximal difference-of-convex method with splitting-based inner
conic subproblems.
"""

from .dca import (
    STATUS_INNER_FAILURE,
    STATUS_MAX_ITERS,
    STATUS_STATIONARY,
    DcaConfig,
    DcaOutcome,
    DcaState,
    bisect_rho,
    initial_point,
    run_dca,
)
from .errors import (
    ExtractionError,
    ModelError,
    ParseError,
    RankDnnError,
    SolverError,
)
from .extract import (
    RoundedSolution,
    compute_gap,
    extract_permutation,
    qap_objective,
    round_solution,
    round_stqp,
    round_to_permutation,
    round_tripartition,
    stqp_objective,
    tripartition_objective,
)
from .inner import (
    DualCertificate,
    InnerConfig,
    InnerResult,
    SplittingState,
    solve_subproblem,
)
from .io import (
    InstanceFile,
    SolutionFile,
    bundled_pairs,
    format_instance,
    format_solution,
    generate_random,
    generate_random_stqp,
    generate_random_tripartition,
    load_instance,
    load_solution,
    parse_instance,
    parse_solution,
    validate_pair,
)
from .linalg import (
    AffineMap,
    SpectralDecomposition,
    SymMatrix,
    eig,
    project_affine,
    project_nonneg,
    project_psd,
)
from .model import (
    KIND_QAP,
    KIND_STQP,
    KIND_TRIPARTITION,
    TOL_RANK,
    ConicProblem,
    QapInstance,
    StqpInstance,
    TriPartInstance,
    build_qap,
    build_stqp,
    build_tripartition,
    lift_solution,
    partition_matrix,
    permutation_matrix,
    rank_one_factor,
    shift_to_nonnegative,
)
from .oracle import (
    qap_brute_force,
    stqp_brute_force,
    tripartition_brute_force,
)
from .penalty import (
    PenaltyParams,
    default_sigma,
    penalty_objective,
    spectral_subgradient,
)

__version__ = "0.1.0"

__all__ = [
    "AffineMap",
    "ConicProblem",
    "DcaConfig",
    "DcaOutcome",
    "DcaState",
    "DualCertificate",
    "ExtractionError",
    "InnerConfig",
    "InnerResult",
    "InstanceFile",
    "KIND_QAP",
    "KIND_STQP",
    "KIND_TRIPARTITION",
    "ModelError",
    "ParseError",
    "PenaltyParams",
    "QapInstance",
    "RankDnnError",
    "RoundedSolution",
    "SolutionFile",
    "SolverError",
    "SpectralDecomposition",
    "SplittingState",
    "StqpInstance",
    "SymMatrix",
    "STATUS_INNER_FAILURE",
    "STATUS_MAX_ITERS",
    "STATUS_STATIONARY",
    "TOL_RANK",
    "TriPartInstance",
    "bisect_rho",
    "build_qap",
    "build_stqp",
    "build_tripartition",
    "bundled_pairs",
    "compute_gap",
    "default_sigma",
    "eig",
    "extract_permutation",
    "format_instance",
    "format_solution",
    "generate_random",
    "generate_random_stqp",
    "generate_random_tripartition",
    "initial_point",
    "lift_solution",
    "load_instance",
    "load_solution",
    "parse_instance",
    "parse_solution",
    "partition_matrix",
    "permutation_matrix",
    "penalty_objective",
    "project_affine",
    "project_nonneg",
    "project_psd",
    "qap_brute_force",
    "qap_objective",
    "rank_one_factor",
    "round_solution",
    "round_stqp",
    "round_to_permutation",
    "round_tripartition",
    "run_dca",
    "shift_to_nonnegative",
    "solve_subproblem",
    "spectral_subgradient",
    "stqp_brute_force",
    "stqp_objective",
    "tripartition_brute_force",
    "tripartition_objective",
    "validate_pair",
    "__version__",
]
