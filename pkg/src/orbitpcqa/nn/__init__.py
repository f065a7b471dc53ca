"""Dense tensor ops, the 3D residual regression network, Adam, and gradcheck."""

from .ops import (
    DegenerateBatch,
    LengthMismatch,
    ShapeMismatch,
    batchnorm3d_backward,
    batchnorm3d_forward,
    conv3d_backward,
    conv3d_forward,
    global_avg_pool,
    global_avg_pool_backward,
    linear_backward,
    linear_forward,
    mse_loss,
    relu_backward,
    relu_forward,
)
from .network import (
    BadParamsFile,
    ConfigMismatch,
    NetworkConfig,
    init_params,
    load_params,
    network_backward,
    network_forward,
    save_params,
    trainable_names,
)
from .optim import AdamState, adam_step
from .gradcheck import gradient_check

__all__ = [
    "AdamState",
    "BadParamsFile",
    "ConfigMismatch",
    "DegenerateBatch",
    "LengthMismatch",
    "NetworkConfig",
    "ShapeMismatch",
    "adam_step",
    "batchnorm3d_backward",
    "batchnorm3d_forward",
    "conv3d_backward",
    "conv3d_forward",
    "global_avg_pool",
    "global_avg_pool_backward",
    "gradient_check",
    "init_params",
    "linear_backward",
    "linear_forward",
    "load_params",
    "mse_loss",
    "network_backward",
    "network_forward",
    "relu_backward",
    "relu_forward",
    "save_params",
    "trainable_names",
]
