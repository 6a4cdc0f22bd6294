"""Dense float64 substrate: tape, primitives, init, gradient checking."""

import numpy as np

from .gradcheck import ContractError, GradCheckReport, grad_check, relative_error
from .ops import (
    add,
    gelu,
    index,
    layer_norm,
    matmul,
    mean_pool_rows,
    mul,
    row_softmax,
    scale,
    softmax_pair,
    sub,
    sum_squares,
    total,
    transpose,
)
from .tape import DimensionError, ParamTensor, Tape, Tensor, active_tape, as_tensor


def token_matrix(data) -> Tensor:
    """Validate and wrap an L x d array of finite values."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionError(f"a token matrix must be L x d with L, d >= 1, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("token matrix has non-finite entries")
    return Tensor(arr)


def glorot(name: str, fan_in: int, fan_out: int, rng: np.random.Generator, shape=None) -> ParamTensor:
    """Uniform init on [-a, a] with a = sqrt(6 / (fan_in + fan_out))."""
    a = np.sqrt(6.0 / (fan_in + fan_out))
    shape = (fan_in, fan_out) if shape is None else shape
    return ParamTensor(name, rng.uniform(-a, a, size=shape))


__all__ = [
    "ContractError", "DimensionError", "GradCheckReport", "ParamTensor", "Tape", "Tensor",
    "active_tape", "add", "as_tensor", "gelu", "glorot", "grad_check", "index", "layer_norm",
    "matmul", "mean_pool_rows", "mul", "relative_error", "row_softmax", "scale", "softmax_pair",
    "sub", "sum_squares", "token_matrix", "total", "transpose",
]
