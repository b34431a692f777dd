"""Continual maze navigation with diversity exploration and self-correction."""

from ._core import (
    Action,
    AgentState,
    ConfigError,
    EnvParams,
    LoadError,
    MazeEnv,
    NumericError,
    Rng,
    RunConfig,
    StepResult,
    Trainer,
    UsageError,
    Vec2,
    checkpoint_resave_identical,
    env_check,
    evaluate,
    nsd,
)

__all__ = [
    "Action",
    "AgentState",
    "ConfigError",
    "EnvParams",
    "LoadError",
    "MazeEnv",
    "NumericError",
    "Rng",
    "RunConfig",
    "StepResult",
    "Trainer",
    "UsageError",
    "Vec2",
    "checkpoint_resave_identical",
    "env_check",
    "evaluate",
    "nsd",
]
