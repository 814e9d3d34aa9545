# SPDX-License-Identifier: Apache-2.0
"""Python access to the link-context learning library."""

from lcl._core import (
    ConfigError,
    DependencyError,
    Error,
    NumericalError,
    Rng,
    RunConfig,
    UniverseConfig,
    create_universe,
    gen,
    hard_negative_probability,
    load_checkpoint_info,
    read_report,
    report,
    sample_hard_negative_rank,
    shot_probabilities,
    train,
    evaluate,
    ablate,
)

__all__ = [
    "ConfigError",
    "DependencyError",
    "Error",
    "NumericalError",
    "Rng",
    "RunConfig",
    "UniverseConfig",
    "ablate",
    "create_universe",
    "evaluate",
    "gen",
    "hard_negative_probability",
    "load_checkpoint_info",
    "read_report",
    "report",
    "sample_hard_negative_rank",
    "shot_probabilities",
    "train",
]
