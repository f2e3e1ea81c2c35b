"""Dense tensor primitives with explicit forward/backward contracts."""

from . import backend
from .gradcheck import GradcheckResult, gradcheck
from .ops import (
    as_tensor,
    attention_block_sums,
    attention_scalar_tokens,
    attention_scalar_tokens_backward,
    cross_entropy,
    cross_entropy_backward,
    dropout_backward,
    dropout_forward,
    layernorm_backward,
    layernorm_forward,
    linear_backward,
    linear_forward,
    matmul,
    relu,
    relu_backward,
    require_finite,
    softmax_rows,
    softmax_rows_backward,
)

__all__ = [
    "GradcheckResult",
    "as_tensor",
    "attention_block_sums",
    "attention_scalar_tokens",
    "attention_scalar_tokens_backward",
    "backend",
    "cross_entropy",
    "cross_entropy_backward",
    "dropout_backward",
    "dropout_forward",
    "gradcheck",
    "layernorm_backward",
    "layernorm_forward",
    "linear_backward",
    "linear_forward",
    "matmul",
    "relu",
    "relu_backward",
    "require_finite",
    "softmax_rows",
    "softmax_rows_backward",
]
