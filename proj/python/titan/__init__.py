"""Source-free domain adaptive detection on synthetic data."""

from ._titan import (
    InputError,
    NumericError,
    auc,
    commands,
    config_keys,
    covering_bound,
    default_config,
    detection_variance,
    epsilon_allocation,
    epsilon_chain,
    generate,
    partition,
    run,
    solve_assignment,
)

__all__ = [
    "InputError",
    "NumericError",
    "auc",
    "commands",
    "config_keys",
    "covering_bound",
    "default_config",
    "detection_variance",
    "epsilon_allocation",
    "epsilon_chain",
    "generate",
    "partition",
    "run",
    "solve_assignment",
]
