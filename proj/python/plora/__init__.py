# SPDX-License-Identifier: Apache-2.0
"""Point-cloud transformer fine-tuning with low-rank adapters and
multi-scale token-selection prompts."""

from ._plora import (  # noqa: F401
    ContractError,
    DimensionError,
    RangeError,
    audit,
    checkpoint_info,
    farthest_point_sampling,
    gelu,
    k_nearest_neighbors,
    layer_norm,
    mask_loss,
    matmul,
    sigmoid,
    softmax,
    topk_indices,
)

__all__ = [
    "ContractError",
    "DimensionError",
    "RangeError",
    "audit",
    "checkpoint_info",
    "farthest_point_sampling",
    "gelu",
    "k_nearest_neighbors",
    "layer_norm",
    "mask_loss",
    "matmul",
    "sigmoid",
    "softmax",
    "topk_indices",
]
