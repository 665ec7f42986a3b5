"""Contextual bandits with cross-learning when the context distribution is
unknown: the paired-epoch learner, known-distribution and per-context
baselines, auction and sleeping-bandit environments, and a simulation
harness with a verification suite."""

from .accumulator import (
    AFFINE,
    CONSTANT,
    TABULAR,
    AccumulatorError,
    AffineAccumulator,
    AffineLoss,
    ConstantAccumulator,
    ConstantLoss,
    SnapshotHandle,
    TabularAccumulator,
    TabularLoss,
    make_accumulator,
    snapshot,
)
from .baselines import KnownNuLearner, KnownNuOracle, PerContextExp3, known_nu_rate
from .envs import (
    AuctionEnv,
    EnvError,
    RegretTracker,
    SleepingEnv,
    TabularEnv,
    auction_loss,
    hindsight_regret,
    subset_to_mask,
)
from .harness import (
    ConfigError,
    RunResult,
    checkpoint_schedule,
    fit_scaling,
    load_results_csv,
    run_experiment,
    run_single,
    scaling_report,
    write_csv,
)
from .learner import (
    CrossLearner,
    LearnerObserver,
    OutOfOrderError,
    ParamError,
    Params,
    RoundRecord,
    bernoulli_param,
    calibrated_params,
    estimate_weight,
    select_sampling_distribution,
    tune_parameters,
    with_overrides,
)
from .simplex import (
    ActiveSet,
    ProbVector,
    RngStream,
    SimplexError,
    ftrl_distribution,
    ftrl_weights,
    sample,
    sample_index,
)
from .verify import (
    audit_run,
    audit_summary,
    inverse_mean_bound_check,
    inverse_moment_tail_sum,
    lemma_suite,
    run_verify,
)

__version__ = "0.1.0"

__all__ = [
    "AFFINE",
    "CONSTANT",
    "TABULAR",
    "AccumulatorError",
    "ActiveSet",
    "AffineAccumulator",
    "AffineLoss",
    "AuctionEnv",
    "ConfigError",
    "ConstantAccumulator",
    "ConstantLoss",
    "CrossLearner",
    "EnvError",
    "KnownNuLearner",
    "KnownNuOracle",
    "LearnerObserver",
    "OutOfOrderError",
    "ParamError",
    "Params",
    "PerContextExp3",
    "ProbVector",
    "RegretTracker",
    "RngStream",
    "RoundRecord",
    "RunResult",
    "SimplexError",
    "SleepingEnv",
    "SnapshotHandle",
    "TabularAccumulator",
    "TabularEnv",
    "TabularLoss",
    "auction_loss",
    "audit_run",
    "audit_summary",
    "bernoulli_param",
    "calibrated_params",
    "checkpoint_schedule",
    "estimate_weight",
    "fit_scaling",
    "ftrl_distribution",
    "ftrl_weights",
    "hindsight_regret",
    "inverse_mean_bound_check",
    "inverse_moment_tail_sum",
    "known_nu_rate",
    "lemma_suite",
    "load_results_csv",
    "make_accumulator",
    "run_experiment",
    "run_single",
    "run_verify",
    "sample",
    "sample_index",
    "scaling_report",
    "select_sampling_distribution",
    "snapshot",
    "subset_to_mask",
    "tune_parameters",
    "with_overrides",
    "write_csv",
]
