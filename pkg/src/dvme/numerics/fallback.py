"""Pure-numpy kernels, the fallback when the compiled extension is absent.

matmul accumulates over the inner dimension in ascending order with separate
rounded multiply and add, so the result is bit-identical to both a naive
triple loop and the compiled kernel. The attention kernels share their math
with the compiled versions but use numpy's own reduction order, so across
backends they agree only to rounding.
"""

import numpy as np


def matmul(a, b):
    m, kk = a.shape
    n = b.shape[1]
    out = np.zeros((m, n), dtype=a.dtype)
    # One rank-1 update per k keeps the k-ascending accumulation order.
    for k in range(kk):
        out += a[:, k, None] * b[None, k, :]
    return out


def _row_softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    np.exp(shifted, out=shifted)
    shifted /= shifted.sum(axis=-1, keepdims=True)
    return shifted


def attn_forward(q, k, v):
    """Scalar-token attention: ctx[b,i] = sum_j softmax_j(q[b,i]*k[b,j]) v[b,j]."""
    ctx = np.empty_like(q)
    for b in range(q.shape[0]):
        probs = _row_softmax(np.outer(q[b], k[b]))
        ctx[b] = probs @ v[b]
    return ctx


def attn_backward(q, k, v, dctx):
    dq = np.empty_like(q)
    dk = np.empty_like(k)
    dv = np.empty_like(v)
    for b in range(q.shape[0]):
        probs = _row_softmax(np.outer(q[b], k[b]))
        dprobs = np.outer(dctx[b], v[b])
        # Softmax Jacobian per row: dl = p * (dp - <p, dp>)
        dot = (probs * dprobs).sum(axis=1, keepdims=True)
        dlogits = probs * (dprobs - dot)
        dq[b] = dlogits @ k[b]
        dk[b] = dlogits.T @ q[b]
        dv[b] = probs.T @ dctx[b]
    return dq, dk, dv


def attn_block_sums(q, k, nblocks):
    """Per-sample sums of the attention matrix over a nblocks x nblocks grid."""
    batch, n = q.shape
    block = n // nblocks
    out = np.empty((batch, nblocks, nblocks), dtype=q.dtype)
    for b in range(batch):
        probs = _row_softmax(np.outer(q[b], k[b]))
        folded = probs.reshape(nblocks, block, nblocks, block)
        out[b] = folded.sum(axis=(1, 3))
    return out
