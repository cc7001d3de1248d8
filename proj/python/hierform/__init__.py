# Copyright 2026 The hierform Authors
# SPDX-License-Identifier: Apache-2.0

from ._core import (
    HierformError,
    Model,
    cce,
    cosine_lr,
    flops,
    gradcheck,
    load_features,
    majority_vote,
    metrics,
    msa_flops,
    plan,
    run_cli,
    save_features,
    smsa_flops,
)

__all__ = [
    "HierformError",
    "Model",
    "cce",
    "cosine_lr",
    "flops",
    "gradcheck",
    "load_features",
    "majority_vote",
    "metrics",
    "msa_flops",
    "plan",
    "run_cli",
    "save_features",
    "smsa_flops",
]
__version__ = "0.1.0"
