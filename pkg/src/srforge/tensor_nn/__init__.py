"""Minimal reverse-mode tensor core: autodiff primitives, nn ops,
Adam with the warmup schedule, and checkpoint serialization."""

from .autodiff import (
    Tensor,
    broadcast_to,
    concatenate,
    embedding,
    grad_enabled,
    matmul,
    max_along,
    no_grad,
    relu,
    reshape,
    swapaxes,
    take,
    tensor_mean,
    tensor_sum,
    unbroadcast,
)
from .checkpoint import (
    CheckpointFormatError,
    FLAG_ADAM_STATE,
    load_checkpoint,
    save_checkpoint,
)
from .ops import (
    LAYER_NORM_EPS,
    cross_entropy_label_smoothed,
    dropout,
    layer_norm,
    linear,
    multi_head_attention,
    sinusoidal_positional_encoding,
    softmax,
)
from .optim import ParameterStore, ScheduleConfig, adam_step, init_uniform, noam_lr

__all__ = [
    "Tensor",
    "broadcast_to",
    "concatenate",
    "embedding",
    "grad_enabled",
    "matmul",
    "max_along",
    "no_grad",
    "relu",
    "reshape",
    "swapaxes",
    "take",
    "tensor_mean",
    "tensor_sum",
    "unbroadcast",
    "CheckpointFormatError",
    "FLAG_ADAM_STATE",
    "load_checkpoint",
    "save_checkpoint",
    "LAYER_NORM_EPS",
    "cross_entropy_label_smoothed",
    "dropout",
    "layer_norm",
    "linear",
    "multi_head_attention",
    "sinusoidal_positional_encoding",
    "softmax",
    "ParameterStore",
    "ScheduleConfig",
    "adam_step",
    "init_uniform",
    "noam_lr",
]
