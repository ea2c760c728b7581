"""Differentially private best subset selection via the exponential mechanism."""

__version__ = "0.1.0"

from .dataset import (BoundsReport, ConfigError, Dataset, GenConfig, RegularityParams,
                      SRCEstimate, SyntheticData, estimate_src, generate_synthetic,
                      load_dataset, save_dataset, validate_bounds)
from .subset_score import (ModelState, PrivacyParams, ScoreCache, Scorer, ScoreResult,
                           SolverStatus, as_model, constrained_rss, ols_rss,
                           recommended_K, score, sensitivity_bound)
from .exp_mechanism import (AuditReport, EnumerationCapError, ExactDistribution,
                            approx_dp_delta, dp_ratio_audit, enumerate_models,
                            exact_distribution, exact_sample, max_log_ratio)
from .mh_sampler import (ChainConfig, ChainTrace, StepRecord, acceptance_log_ratio,
                         make_rng, propose_double_swap, run_chain, run_parallel_chains, step)
from .diagnostics import (MarginReport, MixingReport, TransitionMatrix,
                          build_transition_matrix, check_assumption_4_1,
                          check_margin_condition, empirical_tv_vs_exact, f_score,
                          identifiability_margin, measure_mixing, mixing_bound_theorem,
                          spectral_gap)

__all__ = [
    "BoundsReport", "ConfigError", "Dataset", "GenConfig", "RegularityParams",
    "SRCEstimate", "SyntheticData", "estimate_src", "generate_synthetic", "load_dataset",
    "save_dataset", "validate_bounds", "ModelState", "PrivacyParams", "ScoreCache",
    "Scorer", "ScoreResult", "SolverStatus", "as_model", "constrained_rss", "ols_rss",
    "recommended_K", "score", "sensitivity_bound", "AuditReport", "EnumerationCapError",
    "ExactDistribution", "approx_dp_delta", "dp_ratio_audit", "enumerate_models",
    "exact_distribution", "exact_sample", "max_log_ratio", "ChainConfig", "ChainTrace",
    "StepRecord", "acceptance_log_ratio", "make_rng", "propose_double_swap", "run_chain",
    "run_parallel_chains", "step", "MarginReport", "MixingReport", "TransitionMatrix",
    "build_transition_matrix", "check_assumption_4_1", "check_margin_condition",
    "empirical_tv_vs_exact", "f_score", "identifiability_margin", "measure_mixing",
    "mixing_bound_theorem", "spectral_gap",
]
