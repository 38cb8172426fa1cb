"""Kernel backend selection: compiled extension if available, numpy fallback
otherwise.

Set ``AMCGRAPH_PURE_PYTHON=1`` to force the fallback. The active backend
name is exposed as ``BACKEND`` ("compiled" or "python").
"""

import os
import threading

import numpy as np

from . import _core_py

if os.environ.get("AMCGRAPH_PURE_PYTHON", "") not in ("", "0"):
    _impl = _core_py
    BACKEND = "python"
else:
    try:
        from . import _core as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        _impl = _core_py
        BACKEND = "python"

# module-global thread count for kernel calls; 1 = fully serial.
_num_threads = 1


def set_num_threads(n: int) -> None:
    global _num_threads
    _num_threads = max(1, int(n))


def get_num_threads() -> int:
    return _num_threads


def backend_info() -> dict:
    return {"backend": BACKEND, "threads": _num_threads}


def spmm(indptr, indices, weights, dense, out=None):
    """CSR (weights over indptr/indices) times dense, row-deterministic."""
    n = indptr.shape[0] - 1
    if out is None:
        out = np.empty((n, dense.shape[1]), dtype=np.float64)
    _impl.spmm(indptr, indices, weights, np.ascontiguousarray(dense), out,
               _num_threads)
    return out


def exp_out(s, out):
    _impl.exp_out(s, out, _num_threads)
    return out


def exp_rows_shift(s, shift, out):
    _impl.exp_rows_shift(s, shift, out, _num_threads)
    return out


def exp_cols_shift(s, shift, out):
    _impl.exp_cols_shift(s, shift, out, _num_threads)
    return out


def mul_rows(e, a, alpha, out):
    _impl.mul_rows(e, a, alpha, out, _num_threads)
    return out


def mul_cols(e, b, alpha, out):
    _impl.mul_cols(e, b, alpha, out, _num_threads)
    return out


def outer_sum_mul(e, a, b, alpha, out):
    _impl.outer_sum_mul(e, a, b, alpha, out, _num_threads)
    return out


class ArrayPool:
    """Reusable float64 scratch buffers keyed by shape.

    Large loss workspaces (N x N) would otherwise be re-mmapped every
    epoch; reuse keeps them page-resident. Thread-safe.
    """

    def __init__(self):
        self._free: dict[tuple, list] = {}
        self._lock = threading.Lock()

    def take(self, shape) -> np.ndarray:
        shape = tuple(int(s) for s in shape)
        with self._lock:
            bucket = self._free.get(shape)
            if bucket:
                return bucket.pop()
        return np.empty(shape, dtype=np.float64)

    def give(self, arr: np.ndarray) -> None:
        with self._lock:
            self._free.setdefault(arr.shape, []).append(arr)
