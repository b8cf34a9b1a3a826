"""Experiment configuration, orchestration and the command line interface."""
from .config import ConfigError, ExperimentConfig, load_config
from .experiment import ComparisonReport, DeltaPnlUndefined, delta_pnl, evaluate_policy, run_experiment
from .policies import PolicyHandle, actor_policy, closed_form_policy, twap_policy

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "load_config",
    "ComparisonReport",
    "DeltaPnlUndefined",
    "delta_pnl",
    "evaluate_policy",
    "run_experiment",
    "PolicyHandle",
    "actor_policy",
    "closed_form_policy",
    "twap_policy",
]
