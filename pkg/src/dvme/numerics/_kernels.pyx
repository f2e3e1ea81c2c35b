# Compiled kernels: order-exact matmul and fused scalar-token attention.
#
# matmul keeps the k-ascending accumulation of the fallback (and of a naive
# triple loop); the build disables FP contraction so multiply and add round
# separately. The attention kernels stream one query row at a time, never
# materializing the N x N probability matrix. Because every logit is the
# scalar product q_i * k_j, the stabilizing row maximum is q_i * k_max (or
# q_i * k_min when q_i < 0): rounding is monotone, so this equals the
# elementwise maximum bit-for-bit while skipping an O(N^2) pass.

import numpy as np

from libc.math cimport exp, expf

ctypedef fused floating:
    float
    double


cdef inline floating _exp(floating x) noexcept nogil:
    if floating is float:
        return expf(x)
    else:
        return exp(x)


def matmul(floating[:, ::1] a, floating[:, ::1] b, floating[:, ::1] out):
    cdef Py_ssize_t m = a.shape[0]
    cdef Py_ssize_t kk = a.shape[1]
    cdef Py_ssize_t n = b.shape[1]
    cdef Py_ssize_t i, k, j
    cdef floating aik
    with nogil:
        for i in range(m):
            for j in range(n):
                out[i, j] = 0
            for k in range(kk):
                aik = a[i, k]
                for j in range(n):
                    out[i, j] = out[i, j] + aik * b[k, j]


cdef inline floating _row_max(floating qi, floating k_lo, floating k_hi) noexcept nogil:
    if qi >= 0:
        return qi * k_hi
    return qi * k_lo


def attn_forward(floating[:, ::1] q, floating[:, ::1] k, floating[:, ::1] v,
                 floating[:, ::1] ctx):
    cdef Py_ssize_t batch = q.shape[0]
    cdef Py_ssize_t n = q.shape[1]
    cdef Py_ssize_t b, i, j
    cdef floating qi, m, e, z, s, k_lo, k_hi
    with nogil:
        for b in range(batch):
            k_lo = k[b, 0]
            k_hi = k[b, 0]
            for j in range(1, n):
                if k[b, j] < k_lo:
                    k_lo = k[b, j]
                elif k[b, j] > k_hi:
                    k_hi = k[b, j]
            for i in range(n):
                qi = q[b, i]
                m = _row_max(qi, k_lo, k_hi)
                z = 0
                s = 0
                for j in range(n):
                    e = _exp(qi * k[b, j] - m)
                    z = z + e
                    s = s + e * v[b, j]
                ctx[b, i] = s / z


def attn_backward(floating[:, ::1] q, floating[:, ::1] k, floating[:, ::1] v,
                  floating[:, ::1] dctx,
                  floating[:, ::1] dq, floating[:, ::1] dk, floating[:, ::1] dv):
    cdef Py_ssize_t batch = q.shape[0]
    cdef Py_ssize_t n = q.shape[1]
    cdef Py_ssize_t b, i, j
    cdef floating qi, g, m, e, z, s, ci, dot, p, dl, dqi, k_lo, k_hi
    scratch = np.empty(n, dtype=np.asarray(q).dtype)
    cdef floating[::1] row = scratch
    with nogil:
        for b in range(batch):
            k_lo = k[b, 0]
            k_hi = k[b, 0]
            for j in range(1, n):
                if k[b, j] < k_lo:
                    k_lo = k[b, j]
                elif k[b, j] > k_hi:
                    k_hi = k[b, j]
            for j in range(n):
                dk[b, j] = 0
                dv[b, j] = 0
            for i in range(n):
                qi = q[b, i]
                g = dctx[b, i]
                m = _row_max(qi, k_lo, k_hi)
                z = 0
                s = 0
                for j in range(n):
                    e = _exp(qi * k[b, j] - m)
                    row[j] = e
                    z = z + e
                    s = s + e * v[b, j]
                ci = s / z
                # Row softmax backward: <p, dp> with dp_j = g * v_j is g * ctx_i.
                dot = g * ci
                dqi = 0
                for j in range(n):
                    p = row[j] / z
                    dl = p * (g * v[b, j] - dot)
                    dqi = dqi + dl * k[b, j]
                    dk[b, j] = dk[b, j] + dl * qi
                    dv[b, j] = dv[b, j] + p * g
                dq[b, i] = dqi


def attn_block_sums(floating[:, ::1] q, floating[:, ::1] k,
                    Py_ssize_t nblocks, floating[:, :, ::1] out):
    cdef Py_ssize_t batch = q.shape[0]
    cdef Py_ssize_t n = q.shape[1]
    cdef Py_ssize_t block = n // nblocks
    cdef Py_ssize_t b, i, j, bi, bj
    cdef floating qi, m, e, z, k_lo, k_hi
    cdef floating[64] acc
    if nblocks > 64:
        raise ValueError("at most 64 blocks supported")
    with nogil:
        for b in range(batch):
            k_lo = k[b, 0]
            k_hi = k[b, 0]
            for j in range(1, n):
                if k[b, j] < k_lo:
                    k_lo = k[b, j]
                elif k[b, j] > k_hi:
                    k_hi = k[b, j]
            for bi in range(nblocks):
                for bj in range(nblocks):
                    out[b, bi, bj] = 0
            for i in range(n):
                qi = q[b, i]
                m = _row_max(qi, k_lo, k_hi)
                z = 0
                for bj in range(nblocks):
                    acc[bj] = 0
                for j in range(n):
                    e = _exp(qi * k[b, j] - m)
                    z = z + e
                    acc[j // block] = acc[j // block] + e
                bi = i // block
                for bj in range(nblocks):
                    out[b, bi, bj] = out[b, bi, bj] + acc[bj] / z
