"""Minimal differentiable array engine used by the forecasting model."""
from .nn import conv2d, linear, lstm_cell_step, maxpool2d, softmax
from .optim import Adam, adam_step, staircase_lr
from .params import (
    CheckpointError,
    ParamStore,
    dumps_checkpoint,
    load_checkpoint,
    loads_checkpoint,
    save_checkpoint,
    uniform_fan_in,
)
from .tensor import (
    DTYPE,
    GraphError,
    Tensor,
    as_tensor,
    backward,
    concat,
    exp,
    log,
    logcosh,
    mean,
    no_grad,
    relu,
    scatter_rows,
    sigmoid,
    square,
    sum_,
    tanh,
    where,
)

__all__ = [
    "Adam", "CheckpointError", "DTYPE", "GraphError", "ParamStore", "Tensor", "adam_step", "as_tensor",
    "backward", "concat", "conv2d", "dumps_checkpoint", "exp", "linear", "load_checkpoint", "loads_checkpoint",
    "log", "logcosh", "lstm_cell_step", "maxpool2d", "mean", "no_grad", "relu", "save_checkpoint", "scatter_rows",
    "sigmoid", "softmax", "square", "staircase_lr", "sum_", "tanh", "uniform_fan_in", "where",
]
