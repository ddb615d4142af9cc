"""Spanner diffusion Stein discrepancy: sample quality measurement against an
unnormalized target density."""
from .core import (
    ConfigError,
    DiffusionSpec,
    IngestionError,
    LikelihoodTerms,
    SteinbenchError,
    SteinWitness,
    TargetModel,
    WeightedSample,
    empirical_sample,
    load_sample,
    save_sample,
)
from .metrics import TrendFit, coupled_upper_bound, fit_rate, wasserstein_1d
from .operators import OperatorData, apply_operator, drift_general, langevin, mean_zero_check
from .samplers import ChainConfig, SamplerError, iid_chain, mala_chain, pseudo_huber_metric, sgrld_chain
from .spanner import SpannerGraph, build_greedy_spanner, verify_spanner
from .steinlp import SolverError, build_coordinate_lp, solve_lp, spanner_stein_discrepancy

__version__ = "0.1.0"
