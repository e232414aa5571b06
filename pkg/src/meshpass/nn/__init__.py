"""Dense tensor math with reverse-mode gradients, MLPs, normalizers, Adam."""

from .autodiff import (
    NonFiniteError,
    SparseOp,
    Tensor,
    add,
    backward,
    concat,
    grad,
    layer_norm,
    matmul,
    mean_sq,
    mul,
    relu,
    spmm,
    sub,
    sum_all,
    take_rows,
    value,
)
from .checkpoint import CheckpointError, load_blocks, save_blocks
from .layers import Mlp, Normalizer, mlp_apply
from .optim import Adam, adam_step

__all__ = [
    "Adam",
    "CheckpointError",
    "Mlp",
    "NonFiniteError",
    "Normalizer",
    "SparseOp",
    "Tensor",
    "adam_step",
    "add",
    "backward",
    "concat",
    "grad",
    "layer_norm",
    "load_blocks",
    "matmul",
    "mean_sq",
    "mlp_apply",
    "mul",
    "relu",
    "save_blocks",
    "spmm",
    "sub",
    "sum_all",
    "take_rows",
    "value",
]
