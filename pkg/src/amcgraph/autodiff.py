"""Minimal reverse-mode autodiff over dense float64 matrices.

Everything on a Tape is a 2-D array; scalars are 1x1. Construction order
is topological order, so backward is a single reverse sweep. Sparse
adjacency operands are constants of the graph, never differentiated.
"""

from __future__ import annotations

import numpy as np


class LossDomainError(ArithmeticError):
    """A value left the domain the loss is defined on (e.g. log of a
    non-positive number)."""


class Expr:
    __slots__ = ("idx", "value", "requires_grad", "needs_grad", "op",
                 "inputs", "tape", "_push", "_fwd", "_release")

    def __init__(self, tape, value, requires_grad, op, inputs):
        self.tape = tape
        self.value = value
        self.requires_grad = requires_grad
        self.needs_grad = requires_grad or any(i.needs_grad for i in inputs)
        self.op = op
        self.inputs = inputs
        self._push = None
        self._fwd = None
        self._release = None
        self.idx = len(tape.nodes)
        tape.nodes.append(self)

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Expr#{self.idx}({self.op}, shape={self.value.shape})"


def _as_matrix(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(1, -1)
    elif a.ndim != 2:
        raise ValueError(f"expected at most 2-D, got shape {a.shape}")
    return np.ascontiguousarray(a)


class Tape:
    """Recorded computation: Exprs in topological order plus gradient
    storage keyed by node index."""

    def __init__(self, pool=None):
        self.nodes: list[Expr] = []
        self.grads: dict[int, np.ndarray] = {}
        self._owned: set[int] = set()
        self.pool = pool

    def constant(self, value) -> Expr:
        return Expr(self, _as_matrix(value), False, "const", ())

    def param(self, value) -> Expr:
        return Expr(self, _as_matrix(value), True, "param", ())

    def _acc(self, node: Expr, g: np.ndarray, own: bool) -> None:
        if not node.needs_grad:
            return
        cur = self.grads.get(node.idx)
        if cur is None:
            self.grads[node.idx] = g
            if own:
                self._owned.add(node.idx)
        elif node.idx in self._owned:
            cur += g
        else:
            self.grads[node.idx] = cur + g
            self._owned.add(node.idx)

    def backward(self, root: Expr) -> None:
        """Populate gradients of every needs_grad node reachable from a
        scalar root."""
        if root.value.size != 1:
            raise ValueError(f"backward root must be scalar, got {root.shape}")
        self.grads.clear()
        self._owned.clear()
        self.grads[root.idx] = np.ones((1, 1))
        for node in reversed(self.nodes[: root.idx + 1]):
            if node._push is None:
                continue
            g = self.grads.get(node.idx)
            if g is None:
                continue
            node._push(g)

    def grad(self, node: Expr) -> np.ndarray | None:
        return self.grads.get(node.idx)

    def recompute(self) -> None:
        """Re-run every recorded forward in order (purity check support)."""
        for node in self.nodes:
            if node._fwd is not None:
                node.value = node._fwd()

    def release(self) -> None:
        """Return pooled scratch buffers; call once the tape is done."""
        for node in self.nodes:
            if node._release is not None:
                node._release()
                node._release = None


def custom_op(tape, value, inputs, push, fwd, name) -> Expr:
    """Register an operation with caller-supplied forward/backward.

    push(g, acc): distribute upstream gradient g via acc(expr, grad, own);
    fwd(): recompute and return the value from current input values.
    """
    out = Expr(tape, value, False, name, tuple(inputs))
    out._push = lambda g: push(g, tape._acc)
    out._fwd = fwd
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    out = g
    if shape[0] == 1 and g.shape[0] != 1:
        out = out.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        out = out.sum(axis=1, keepdims=True)
    return out


def _check_same_shape(a, b, op):
    if a.value.shape != b.value.shape:
        raise ValueError(f"{op}: shape mismatch {a.value.shape} vs {b.value.shape}")


def matmul(a: Expr, b: Expr) -> Expr:
    if a.value.shape[1] != b.value.shape[0]:
        raise ValueError(f"matmul: {a.value.shape} @ {b.value.shape}")

    def push(g, acc):
        acc(a, g @ b.value.T, True)
        acc(b, a.value.T @ g, True)

    return custom_op(a.tape, a.value @ b.value, (a, b), push,
                     lambda: a.value @ b.value, "matmul")


def sparse_matmul(adj, h: Expr) -> Expr:
    """adj @ h with a fixed sparse operator (CSR with .T); no gradient
    flows to the graph structure."""
    from .graphdata import spmm as _spmm

    def push(g, acc):
        acc(h, _spmm(adj.T, g), True)

    return custom_op(h.tape, _spmm(adj, h.value), (h,), push,
                     lambda: _spmm(adj, h.value), "sparse_matmul")


def add(a: Expr, b: Expr) -> Expr:
    _check_same_shape(a, b, "add")

    def push(g, acc):
        acc(a, g, False)
        acc(b, g, False)

    return custom_op(a.tape, a.value + b.value, (a, b), push,
                     lambda: a.value + b.value, "add")


def add_row_bias(a: Expr, bias: Expr) -> Expr:
    if bias.value.shape != (1, a.value.shape[1]):
        raise ValueError(
            f"add_row_bias: bias {bias.value.shape} vs rows of {a.value.shape}")

    def push(g, acc):
        acc(a, g, False)
        acc(bias, g.sum(axis=0, keepdims=True), True)

    return custom_op(a.tape, a.value + bias.value, (a, bias), push,
                     lambda: a.value + bias.value, "add_row_bias")


def scale(a: Expr, c: float) -> Expr:
    c = float(c)

    def push(g, acc):
        acc(a, g * c, True)

    return custom_op(a.tape, a.value * c, (a,), push,
                     lambda: a.value * c, "scale")


def mul(a: Expr, b: Expr) -> Expr:
    """Elementwise product; b may broadcast along either axis."""

    def push(g, acc):
        acc(a, _unbroadcast(g * b.value, a.value.shape), True)
        acc(b, _unbroadcast(g * a.value, b.value.shape), True)

    return custom_op(a.tape, a.value * b.value, (a, b), push,
                     lambda: a.value * b.value, "mul")


def relu(a: Expr) -> Expr:
    value = np.maximum(a.value, 0.0)

    def push(g, acc):
        acc(a, g * (a.value > 0), True)

    return custom_op(a.tape, value, (a,), push,
                     lambda: np.maximum(a.value, 0.0), "relu")


def prelu(a: Expr, slope: Expr) -> Expr:
    """max(x,0) + slope*min(x,0) with a learned scalar slope (1x1)."""
    if slope.value.shape != (1, 1):
        raise ValueError("prelu: slope must be 1x1")

    def fwd():
        s = slope.value[0, 0]
        return np.where(a.value > 0, a.value, s * a.value)

    def push(g, acc):
        s = slope.value[0, 0]
        acc(a, g * np.where(a.value > 0, 1.0, s), True)
        neg = np.minimum(a.value, 0.0)
        acc(slope, np.array([[np.sum(g * neg)]]), True)

    return custom_op(a.tape, fwd(), (a, slope), push, fwd, "prelu")


def tanh(a: Expr) -> Expr:
    value = np.tanh(a.value)

    def push(g, acc):
        acc(a, g * (1.0 - value * value), True)

    return custom_op(a.tape, value, (a,), push,
                     lambda: np.tanh(a.value), "tanh")


def exp(a: Expr) -> Expr:
    value = np.exp(a.value)

    def push(g, acc):
        acc(a, g * value, True)

    return custom_op(a.tape, value, (a,), push,
                     lambda: np.exp(a.value), "exp")


def log(a: Expr) -> Expr:
    if np.any(a.value <= 0.0):
        raise LossDomainError("log of non-positive value")

    def push(g, acc):
        acc(a, g / a.value, True)

    return custom_op(a.tape, np.log(a.value), (a,), push,
                     lambda: np.log(a.value), "log")


def row_softmax(a: Expr) -> Expr:
    def fwd():
        e = np.exp(a.value - a.value.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)

    value = fwd()

    def push(g, acc):
        acc(a, value * (g - (g * value).sum(axis=1, keepdims=True)), True)

    return custom_op(a.tape, value, (a,), push, fwd, "row_softmax")


def row_l2_normalize(a: Expr) -> Expr:
    """Rows scaled to unit L2 norm; all-zero rows stay zero."""

    def parts():
        norms = np.sqrt((a.value * a.value).sum(axis=1, keepdims=True))
        safe = np.where(norms > 0.0, norms, 1.0)
        return a.value / safe, safe, norms > 0.0

    value, safe, nonzero = parts()

    def push(g, acc):
        da = (g - value * (value * g).sum(axis=1, keepdims=True)) / safe
        da *= nonzero
        acc(a, da, True)

    return custom_op(a.tape, value, (a,), push,
                     lambda: parts()[0], "row_l2_normalize")


def transpose_dot(x: Expr, y: Expr) -> Expr:
    """Similarity matrix x @ y^T."""
    if x.value.shape[1] != y.value.shape[1]:
        raise ValueError(f"transpose_dot: {x.value.shape} vs {y.value.shape}")

    def push(g, acc):
        acc(x, g @ y.value, True)
        acc(y, g.T @ x.value, True)

    return custom_op(x.tape, x.value @ y.value.T, (x, y), push,
                     lambda: x.value @ y.value.T, "transpose_dot")


def mean_all(a: Expr) -> Expr:
    size = a.value.size

    def push(g, acc):
        acc(a, np.full(a.value.shape, g[0, 0] / size), True)

    return custom_op(a.tape, np.array([[a.value.mean()]]), (a,), push,
                     lambda: np.array([[a.value.mean()]]), "mean_all")


def _concat(parts: list[Expr], axis: int, name: str) -> Expr:
    if not parts:
        raise ValueError(f"{name}: nothing to concatenate")
    sizes = [p.value.shape[axis] for p in parts]
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    def fwd():
        return np.concatenate([p.value for p in parts], axis=axis)

    def push(g, acc):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            piece = g[:, lo:hi] if axis == 1 else g[lo:hi, :]
            acc(p, piece, False)

    return custom_op(parts[0].tape, fwd(), tuple(parts), push, fwd, name)


def concat_cols(parts: list[Expr]) -> Expr:
    return _concat(parts, 1, "concat_cols")


def concat_rows(parts: list[Expr]) -> Expr:
    return _concat(parts, 0, "concat_rows")


def finite_diff_check(f, params: dict, eps: float = 1e-4) -> float:
    """Max relative error between analytic gradients and central
    differences.

    f(params) must deterministically return (loss_value, grads) where
    grads maps the same keys to arrays shaped like params[key]. Relative
    error is |analytic - central| / max(1, |central|), maximized over
    every parameter entry.
    """
    _, grads = f(params)
    worst = 0.0
    for name, theta in params.items():
        if theta.dtype != np.float64:
            raise TypeError(f"parameter {name} must be float64")
        g_analytic = np.asarray(grads[name], dtype=np.float64).reshape(theta.shape)
        if not np.all(np.isfinite(g_analytic)):
            raise ArithmeticError(f"non-finite analytic gradient for {name}")
        for idx in np.ndindex(theta.shape):
            keep = theta[idx]
            theta[idx] = keep + eps
            up, _ = f(params)
            theta[idx] = keep - eps
            dn, _ = f(params)
            theta[idx] = keep
            if not (np.isfinite(up) and np.isfinite(dn)):
                raise ArithmeticError(f"non-finite loss while perturbing {name}")
            central = (up - dn) / (2.0 * eps)
            err = abs(g_analytic[idx] - central) / max(1.0, abs(central))
            worst = max(worst, err)
    return worst
