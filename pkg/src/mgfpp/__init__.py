"""Two-timescale fictitious play in single-controller Markov games."""

from .dynamics import (LearnerState, RunConfig, StepSchedule, fp_step, run,
                       validate_schedule)
from .game import MarkovGame, classify, induce_mdp, load_game, save_game, validate_game

__all__ = [
    "LearnerState", "MarkovGame", "RunConfig", "StepSchedule", "classify", "fp_step",
    "induce_mdp", "load_game", "run", "save_game", "validate_game", "validate_schedule",
]
__version__ = "0.1.0"
