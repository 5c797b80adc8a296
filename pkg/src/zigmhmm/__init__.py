"""Mixture of hidden Markov models with zero-inflated gamma emissions."""
from .em import EmConfig, FitResult, e_step, fit, initialize, m_step, run_em
from .emissions import (
    ZigParams,
    weighted_gamma_mle,
    weighted_zero_fraction,
    zig_log_density,
    zig_mean,
    zig_sample,
)
from .estimator import MixtureZigHMM
from .exceptions import (
    DegenerateFitError,
    EstimationError,
    ParseError,
    ReducibleChainError,
    ZeroLikelihoodError,
    ZigHmmError,
)
from .inference import (
    backward,
    decode_subject,
    forward,
    posteriors,
    total_loglik,
    viterbi,
)
from .markov import (
    mixing_time_bound,
    sample_chain,
    second_eigenvalue,
    second_eigenvalue_modulus,
    stationary_distribution,
)
from .params import MixtureHmmParams, parameter_count
from .selection import (
    adjusted_rand_index,
    aligned_parameter_mse,
    bic,
    icl,
    marginal_cutoffs,
    mean_time_per_state,
    select_components,
)
from .sequences import (
    RawSeries,
    SegmentedSubject,
    parse_long_csv,
    segment_on_missing,
    validate_gap_assumption,
    write_long_csv,
)
from .simulate import ScenarioSpec, scenario_params

__version__ = "0.1.0"
