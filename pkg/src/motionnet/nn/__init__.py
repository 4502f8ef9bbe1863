"""float64 numpy autodiff core: tensor graph, layers-as-functions, Adam,
checkpoint container, finite-difference gradient checking."""
from .tensor import (
    ShapeError,
    Tensor,
    Parameter,
    no_grad,
    grad_enabled,
    custom_op,
    backward,
    add,
    sub,
    mul,
    scale,
    tsum,
    tmean,
    reshape,
    cumsum,
    relu,
    concat_channels,
    conv2d,
    linear_lift,
    conv_temporal,
    temporal_max_pool,
    upsample2x,
    batch_norm2d,
)
from .optim import Adam
from .checkpoint import CheckpointError, fnv1a64, save_checkpoint, load_checkpoint
from .gradcheck import fd_gradcheck

__all__ = [
    "ShapeError",
    "Tensor",
    "Parameter",
    "no_grad",
    "grad_enabled",
    "custom_op",
    "backward",
    "add",
    "sub",
    "mul",
    "scale",
    "tsum",
    "tmean",
    "reshape",
    "cumsum",
    "relu",
    "concat_channels",
    "conv2d",
    "linear_lift",
    "conv_temporal",
    "temporal_max_pool",
    "upsample2x",
    "batch_norm2d",
    "Adam",
    "CheckpointError",
    "fnv1a64",
    "save_checkpoint",
    "load_checkpoint",
    "fd_gradcheck",
]
