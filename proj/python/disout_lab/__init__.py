"""Feature-map distortion regularizer: surrogate objective, gradients, masks
and file-based training runs. Arrays are float64 numpy arrays."""

from ._core import (
    ConfigError,
    DimensionError,
    DisoutError,
    FormatError,
    InputError,
    IoError,
    NumericError,
    block_mask,
    config_snapshot,
    element_mask,
    exact_grad_conv,
    exact_grad_fc,
    gradcheck,
    mask_stats,
    ramp_p,
    read_metrics,
    surrogate_conv,
    surrogate_fc,
    train,
)

__all__ = [
    "ConfigError",
    "DimensionError",
    "DisoutError",
    "FormatError",
    "InputError",
    "IoError",
    "NumericError",
    "block_mask",
    "config_snapshot",
    "element_mask",
    "exact_grad_conv",
    "exact_grad_fc",
    "gradcheck",
    "mask_stats",
    "ramp_p",
    "read_metrics",
    "surrogate_conv",
    "surrogate_fc",
    "train",
]
