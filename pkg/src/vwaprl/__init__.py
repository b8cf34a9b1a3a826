"""Reinforcement-learning laboratory for VWAP-tracking optimal execution."""
from .closed_form import ClosedForm, GaussianPolicySpec
from .model_core import (
    Environment,
    EpisodeAborted,
    MarketNoise,
    MarketParams,
    MarketState,
    PenaltyParams,
    RngStreams,
    TimeGrid,
    Trajectory,
    draw_market_noise,
)

__version__ = "0.1.0"
