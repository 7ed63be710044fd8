# Copyright (c) 2026, The cptkit Authors
# SPDX-License-Identifier: Apache-2.0

"""Continued-pretraining data planning toolkit."""

from ._core import (
    CptkitError,
    LrSchedule,
    NgramModel,
    add_qa,
    cosine,
    epochs,
    knn,
    load_ngram,
    lr_at,
    lr_curve,
    normalize,
    quartile_filter,
    run,
    switch_token,
    train_ngram,
    wsd,
)

__all__ = [
    "CptkitError",
    "LrSchedule",
    "NgramModel",
    "add_qa",
    "cosine",
    "epochs",
    "knn",
    "load_ngram",
    "lr_at",
    "lr_curve",
    "normalize",
    "quartile_filter",
    "run",
    "switch_token",
    "train_ngram",
    "wsd",
]
