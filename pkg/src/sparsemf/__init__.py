"""Sparse matrix factorization by variational Bayes with automatic
tuning of the Laplace-prior scale via the zero point of its normalization
factor, plus the experiment harness used to benchmark it."""

from ._kernels import DEFAULT_BACKEND, HAVE_COMPILED
from .generate import GroundTruth, ObservationMatrix, observe, sample_ground_truth
from .linalg import erf, erfc, spd_inverse
from .metrics import (
    Alignment,
    MetricsReport,
    align_and_rmse_a,
    brute_force_alignment,
    evaluate,
    rmse_b,
    rmse_v,
    sparsity_b,
)
from .solver import (
    FactorState,
    RunTrace,
    SolverConfig,
    Termination,
    TraceRecord,
    init_state,
    run,
    state_from_factors,
)

__version__ = "0.1.0"

__all__ = [
    "Alignment",
    "DEFAULT_BACKEND",
    "FactorState",
    "GroundTruth",
    "HAVE_COMPILED",
    "MetricsReport",
    "ObservationMatrix",
    "RunTrace",
    "SolverConfig",
    "Termination",
    "TraceRecord",
    "align_and_rmse_a",
    "brute_force_alignment",
    "erf",
    "erfc",
    "evaluate",
    "init_state",
    "observe",
    "rmse_b",
    "rmse_v",
    "run",
    "sample_ground_truth",
    "sparsity_b",
    "spd_inverse",
    "state_from_factors",
]
