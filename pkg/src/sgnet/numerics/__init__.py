from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import grad_check
from .tensor import (
    Parameter,
    Tensor,
    add,
    as_tensor,
    concat,
    cross_entropy,
    embedding,
    gelu,
    getitem,
    layer_norm,
    log_softmax,
    masked_softmax_rows,
    matmul,
    mean,
    mul,
    reshape,
    softmax_rows,
    sub,
    swap_last,
    transpose,
    tsum,
)

__all__ = [
    "Parameter", "Tensor", "add", "as_tensor", "concat", "cross_entropy", "embedding", "gelu",
    "getitem", "grad_check", "layer_norm", "load_checkpoint", "log_softmax", "masked_softmax_rows",
    "matmul", "mean", "mul", "reshape", "save_checkpoint", "softmax_rows", "sub", "swap_last",
    "transpose", "tsum",
]
