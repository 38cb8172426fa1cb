"""Pure-numpy fallback for the compiled kernels in ``_core.pyx``.

Same signatures and semantics; the ``threads`` argument is accepted and
ignored (numpy ufuncs here are single-threaded).
"""

import numpy as np


def spmm(indptr, indices, weights, dense, out, threads):
    out[:] = 0.0
    n = indptr.shape[0] - 1
    for i in range(n):
        lo, hi = indptr[i], indptr[i + 1]
        if hi > lo:
            out[i] = weights[lo:hi] @ dense[indices[lo:hi]]
    return None


def exp_out(s, out, threads):
    np.exp(s, out=out)
    return None


def exp_rows_shift(s, shift, out, threads):
    np.subtract(s, shift[:, None], out=out)
    np.exp(out, out=out)
    return None


def exp_cols_shift(s, shift, out, threads):
    np.subtract(s, shift[None, :], out=out)
    np.exp(out, out=out)
    return None


def mul_rows(e, a, alpha, out, threads):
    np.multiply(e, (alpha * a)[:, None], out=out)
    return None


def mul_cols(e, b, alpha, out, threads):
    np.multiply(e, (alpha * b)[None, :], out=out)
    return None


def outer_sum_mul(e, a, b, alpha, out, threads):
    np.add(a[:, None], b[None, :], out=out)
    np.multiply(out, e, out=out)
    if alpha != 1.0:
        out *= alpha
    return None
