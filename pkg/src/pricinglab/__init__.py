"""Repeated Bertrand and logit pricing games between learning algorithms.

Stage-game payoffs, Stackelberg and dominance computations, a zoo of pricing
algorithms, a repeated-game simulator with regret accounting, and the
experiments that tie them together.
"""

from .equilibrium import (
    PreconditionError,
    StageSolution,
    cce_feasibility,
    follower_tie_band,
    iterated_dominance,
    stackelberg_grid_search,
    stackelberg_stage,
    tie_break_perturbation,
)
from .learners import (
    AlgorithmConfig,
    BlumMansour,
    ConfigError,
    FTPL,
    Hedge,
    PricingAlgorithm,
    Scripted,
    Static,
    ThreatLeader,
    Uniform,
    make_algorithm,
)
from .lp import LinearProgram, LPResult, solve_lp
from .simulator import InvalidPlay, Transcript, audit, run
from .stage_game import DomainError, MarketModel, PriceGrid, best_response_set, payoff_matrices

__version__ = "0.1.0"

__all__ = [
    "AlgorithmConfig", "BlumMansour", "ConfigError", "DomainError", "FTPL", "Hedge", "InvalidPlay",
    "LPResult", "LinearProgram", "MarketModel", "PreconditionError", "PriceGrid", "PricingAlgorithm",
    "Scripted", "StageSolution", "Static", "ThreatLeader", "Transcript", "Uniform", "audit",
    "best_response_set", "cce_feasibility", "follower_tie_band", "iterated_dominance", "make_algorithm",
    "payoff_matrices", "run", "solve_lp", "stackelberg_grid_search", "stackelberg_stage",
    "tie_break_perturbation",
]
