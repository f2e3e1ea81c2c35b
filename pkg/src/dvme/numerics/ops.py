"""Differentiable layer primitives.

Every op takes and returns C-contiguous float32 or float64 arrays (float64 is
the gradient-check mode) and has an explicit backward with the exact reverse
of its forward. Reductions run in a fixed order so results are reproducible.
"""

import numpy as np

from ..errors import NumericError, ParameterError, ShapeMismatchError
from . import backend

FLOAT_DTYPES = (np.float32, np.float64)


def as_tensor(data, dtype=np.float32):
    """C-contiguous float array of the requested dtype."""
    return np.ascontiguousarray(data, dtype=dtype)


def require_finite(name, array):
    """Explicit NaN/Inf detection; raises NumericError naming the tensor."""
    if not np.isfinite(array).all():
        raise NumericError(f"non-finite values in {name}")


def _check_float(name, array):
    if array.dtype.type not in FLOAT_DTYPES:
        raise ParameterError(f"{name} must be float32 or float64, got {array.dtype}")


def matmul(a, b):
    """Matrix product with deterministic k-ascending accumulation."""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeMismatchError(f"matmul needs 2-D operands, got {a.shape} x {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatchError(f"inner dimensions disagree: {a.shape} x {b.shape}")
    _check_float("a", a)
    if a.dtype != b.dtype:
        raise ParameterError(f"dtype mismatch: {a.dtype} vs {b.dtype}")
    return backend.active().matmul(np.ascontiguousarray(a), np.ascontiguousarray(b))


def linear_forward(x, w, b):
    """y = x @ w + b, bias broadcast over rows."""
    if w.ndim != 2 or b.shape != (w.shape[1],):
        raise ShapeMismatchError(f"bias shape {b.shape} does not match weight {w.shape}")
    return matmul(x, w) + b


def linear_backward(x, w, dy):
    """dx = dy @ w.T, dw = x.T @ dy, db = column sums of dy."""
    dx = matmul(dy, np.ascontiguousarray(w.T))
    dw = matmul(np.ascontiguousarray(x.T), dy)
    db = dy.sum(axis=0)
    return dx, dw, db


def softmax_rows(x):
    """Row-stabilized softmax over the last axis."""
    if x.shape[-1] < 1:
        raise ShapeMismatchError("softmax over an empty axis")
    shifted = x - x.max(axis=-1, keepdims=True)
    np.exp(shifted, out=shifted)
    shifted /= shifted.sum(axis=-1, keepdims=True)
    return shifted


def softmax_rows_backward(y, dy):
    """dx = y * (dy - <y, dy>) per row, from the saved forward output y."""
    dot = (y * dy).sum(axis=-1, keepdims=True)
    return y * (dy - dot)


def layernorm_forward(x, gamma, beta, eps=1e-5):
    """Per-row normalization to mean 0 / variance 1, then affine.

    Returns (y, (xhat, inv_std)); the cache feeds layernorm_backward.
    """
    if eps <= 0:
        raise ParameterError("layernorm eps must be positive")
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.dtype))
    xhat = centered * inv_std
    return gamma * xhat + beta, (xhat, inv_std)


def layernorm_backward(cache, gamma, dy):
    xhat, inv_std = cache
    dbeta = dy.sum(axis=0)
    dgamma = (dy * xhat).sum(axis=0)
    dxhat = dy * gamma
    dx = inv_std * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dgamma, dbeta


def relu(x):
    return np.maximum(x, np.asarray(0, dtype=x.dtype))


def relu_backward(x, dy):
    return np.where(x > 0, dy, np.asarray(0, dtype=dy.dtype))


def dropout_forward(x, p, train, rng=None):
    """Inverted dropout; eval mode is the identity (same object, bit-for-bit).

    Returns (y, scale) where scale is the saved mask/(1-p) factor, or None in
    eval mode.
    """
    if not 0 <= p < 1:
        raise ParameterError(f"dropout probability must be in [0, 1), got {p}")
    if not train or p == 0:
        return x, None
    if rng is None:
        raise ParameterError("train-mode dropout needs an rng stream")
    keep = rng.random(x.shape) >= p
    scale = keep.astype(x.dtype) / np.asarray(1 - p, dtype=x.dtype)
    return x * scale, scale


def dropout_backward(scale, dy):
    """Reuses the saved forward mask; scale is None in eval mode."""
    if scale is None:
        return dy
    return dy * scale


def cross_entropy(logits, labels):
    """Mean over the batch of -log softmax(logits)[label].

    Returns (loss, probs); probs is the cached softmax for the backward pass.
    """
    labels = np.asarray(labels)
    n, num_classes = logits.shape
    if labels.shape != (n,):
        raise ShapeMismatchError(f"labels shape {labels.shape} does not match batch {n}")
    if labels.min() < 0 or labels.max() >= num_classes:
        raise ParameterError(f"labels must lie in [0, {num_classes})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    loss = -logp[np.arange(n), labels].mean()
    return float(loss), np.exp(logp)


def cross_entropy_backward(probs, labels):
    """dlogits = (softmax - onehot) / batch."""
    labels = np.asarray(labels)
    dlogits = probs.copy()
    dlogits[np.arange(len(labels)), labels] -= 1
    dlogits /= np.asarray(len(labels), dtype=probs.dtype)
    return dlogits


def attention_scalar_tokens(q, k, v):
    """Softmax attention over scalar tokens (dim-1 heads, scale 1)."""
    _check_float("q", q)
    if not (q.shape == k.shape == v.shape) or q.ndim != 2:
        raise ShapeMismatchError("q, k, v must share a (batch, tokens) shape")
    return backend.active().attn_forward(q, k, v)


def attention_scalar_tokens_backward(q, k, v, dctx):
    return backend.active().attn_backward(q, k, v, dctx)


def attention_block_sums(q, k, nblocks):
    """Attention-mass sums over an nblocks x nblocks grid of token spans."""
    if q.shape[1] % nblocks != 0:
        raise ShapeMismatchError(
            f"{q.shape[1]} tokens not divisible into {nblocks} blocks"
        )
    return backend.active().attn_block_sums(q, k, nblocks)
