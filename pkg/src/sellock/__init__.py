"""Locking diagnostics and critique-shaped policy gradients for interactive belief tracking."""

from .agent import AgentParams, init_deficient, init_random, init_zero, rollout
from .belief import UNKNOWN, bayes_update, potential, uniform
from .critique import CritiqueTrack, margin_coeffs, weighted_accuracy
from .diagnostics import capabilities, escape_bound, exact_I_th, projected_drift
from .envs import EnvFamily, HypothesisConfig, PrefConfig, make_env, make_family
from .errors import (
    ConfigError,
    InconsistentObservationError,
    NumericError,
    SizeError,
    UndefinedStatisticError,
    UsageError,
)
from .trainers import TrainConfig, train

__version__ = "0.1.0"
