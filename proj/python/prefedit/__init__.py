# Copyright 2026 The prefedit Authors
# SPDX-License-Identifier: Apache-2.0
"""Python access to the prefedit core."""

from ._prefedit import (
    NumericError,
    ValidationError,
    fractional_ranks,
    leaderboard,
    level_of,
    mos_from_z,
    overall_score,
    pairwise_loss,
    plcc,
    process_rankings,
    process_scores,
    sample_xt,
    srcc,
)

__all__ = [
    "NumericError",
    "ValidationError",
    "fractional_ranks",
    "leaderboard",
    "level_of",
    "mos_from_z",
    "overall_score",
    "pairwise_loss",
    "plcc",
    "process_rankings",
    "process_scores",
    "sample_xt",
    "srcc",
]
