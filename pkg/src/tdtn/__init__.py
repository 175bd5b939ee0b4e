"""Exponential inter-contact models and single-copy routing for delay-tolerant networks."""

from .rate_model import (
    DelayQuery,
    PathDelay,
    RateMatrix,
    SpraySolution,
    Unreachable,
    med_path,
    one_sw_delay,
    one_sw_star,
    one_sw_subset_delay,
    rates_from_table,
    spray_decomposition,
    wait_delay,
)
from .replay_sim import SimulationReport, StrategyConfig, replay, run_strategies
from .stat_fit import (
    Classification,
    aggregate_tail,
    classify_pair,
    csvm_statistic,
    fit_exponential,
    fit_gamma_rates,
    fit_powerlaw_tail,
    pareto_tail,
)
from .synth_gen import GammaRates, SynthSpec, generate_trace, sample_rates
from .trace_core import (
    ContactTrace,
    InterContactTable,
    eligible_pairs,
    extract_intercontacts,
    filter_ping_pong,
    ingest_contact_trace,
    sessions_to_contacts,
)

__version__ = "0.1.0"
