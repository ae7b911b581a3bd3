"""Synthetic data, metrics and Monte Carlo protocols."""

from .data import (
    SUCCESS_NMSE,
    GenSpec,
    Instance,
    add_noise,
    gen_sensing_matrix,
    gen_signal,
    gen_unknown_partition_signal,
    make_instance,
    nmse,
    oracle_ls,
    trial_seed,
)
from .protocols import (
    PROTOCOLS,
    AlgoSpec,
    NoiseSetting,
    TrialRecord,
    phase_cells,
    run_algorithm,
    run_correlation_sweep,
    run_noise_sweep,
    run_phase_transition,
    run_unknown_partition,
    summarize,
    transition_curve,
)
