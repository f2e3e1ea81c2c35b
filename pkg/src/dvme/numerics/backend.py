"""Kernel backend registry.

The compiled extension is preferred when importable; DVME_BACKEND=fallback or
DVME_BACKEND=compiled forces a choice. Both backends expose the same four
kernels over C-contiguous float32/float64 arrays.
"""

import contextlib
import os

import numpy as np

from . import fallback as _fb


class Backend:
    def __init__(self, name, matmul, attn_forward, attn_backward, attn_block_sums):
        self.name = name
        self.matmul = matmul
        self.attn_forward = attn_forward
        self.attn_backward = attn_backward
        self.attn_block_sums = attn_block_sums

    def __repr__(self):
        return f"Backend({self.name!r})"


def _wrap_compiled(kernels):
    def matmul(a, b):
        out = np.empty((a.shape[0], b.shape[1]), dtype=a.dtype)
        kernels.matmul(a, b, out)
        return out

    def attn_forward(q, k, v):
        ctx = np.empty_like(q)
        kernels.attn_forward(q, k, v, ctx)
        return ctx

    def attn_backward(q, k, v, dctx):
        dq = np.empty_like(q)
        dk = np.empty_like(k)
        dv = np.empty_like(v)
        kernels.attn_backward(q, k, v, dctx, dq, dk, dv)
        return dq, dk, dv

    def attn_block_sums(q, k, nblocks):
        out = np.empty((q.shape[0], nblocks, nblocks), dtype=q.dtype)
        kernels.attn_block_sums(q, k, nblocks, out)
        return out

    return Backend("compiled", matmul, attn_forward, attn_backward, attn_block_sums)


FALLBACK = Backend(
    "fallback", _fb.matmul, _fb.attn_forward, _fb.attn_backward, _fb.attn_block_sums
)

try:
    from . import _kernels

    COMPILED = _wrap_compiled(_kernels)
except ImportError:
    COMPILED = None

_BY_NAME = {"fallback": FALLBACK}
if COMPILED is not None:
    _BY_NAME["compiled"] = COMPILED


def _default():
    forced = os.environ.get("DVME_BACKEND")
    if forced:
        if forced not in _BY_NAME:
            raise ImportError(
                f"DVME_BACKEND={forced!r} requested but only "
                f"{sorted(_BY_NAME)} are available"
            )
        return _BY_NAME[forced]
    return COMPILED if COMPILED is not None else FALLBACK


_active = _default()


def active():
    """The backend all numerics ops dispatch to."""
    return _active


def available():
    return dict(_BY_NAME)


@contextlib.contextmanager
def use(name):
    """Temporarily switch backends (used by tests and the benchmark)."""
    global _active
    previous = _active
    _active = _BY_NAME[name]
    try:
        yield _active
    finally:
        _active = previous
