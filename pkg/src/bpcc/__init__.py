"""Batch-processing coded computing for heterogeneous distributed
matrix-vector multiplication.

Workers return partial coded results batch by batch instead of one final
block, and loads are sized to each worker's shifted-exponential latency
profile so the master can decode as early as possible. The package
bundles the load allocators and their closed-form bounds, dense and
fountain row codecs, a Monte-Carlo simulator, a TCP master/worker
runtime, and estimation of latency parameters from measurements.
"""

from .allocation import (
    Allocation,
    InfeasibleTaskError,
    allocate,
    bpcc_allocate,
    default_batch_counts,
    expected_results,
    hcmm_allocate,
    l_hat,
    load_balanced_allocate,
    tau_bounds,
    uniform_allocate,
)
from .coding import (
    CodedTask,
    DecodeFailure,
    IncrementalDecoder,
    InsufficientRedundancyError,
    PartialResult,
    decode,
    encode_dense,
    encode_identity,
    encode_lt,
    partition,
    recovery_threshold,
    robust_soliton,
)
from .model import (
    EstimationError,
    TimingSample,
    WorkerProfile,
    batch_cdf,
    expected_batch_time,
    fit_shift_and_rate,
    sample_completion_times,
)
from .numerics import (
    NumericFailure,
    RootSolveConfig,
    exp_integral_01,
    lambert_w_branch_minus1,
    solve_lambda,
    sup_lambda,
)
from .sim import (
    Scenario,
    SimSummary,
    StragglerPolicy,
    TrialRecord,
    compare_schemes,
    monte_carlo,
    run_trial,
    sensitivity,
    sweep_p,
)

__version__ = "0.1.0"

__all__ = [
    "Allocation",
    "CodedTask",
    "DecodeFailure",
    "EstimationError",
    "IncrementalDecoder",
    "InfeasibleTaskError",
    "InsufficientRedundancyError",
    "NumericFailure",
    "PartialResult",
    "RootSolveConfig",
    "Scenario",
    "SimSummary",
    "StragglerPolicy",
    "TimingSample",
    "TrialRecord",
    "WorkerProfile",
    "allocate",
    "batch_cdf",
    "bpcc_allocate",
    "compare_schemes",
    "decode",
    "default_batch_counts",
    "encode_dense",
    "encode_identity",
    "encode_lt",
    "exp_integral_01",
    "expected_batch_time",
    "expected_results",
    "fit_shift_and_rate",
    "hcmm_allocate",
    "l_hat",
    "lambert_w_branch_minus1",
    "load_balanced_allocate",
    "monte_carlo",
    "partition",
    "recovery_threshold",
    "robust_soliton",
    "run_trial",
    "sample_completion_times",
    "sensitivity",
    "solve_lambda",
    "sup_lambda",
    "sweep_p",
    "tau_bounds",
    "uniform_allocate",
]
