"""Adaptive multi-layer contrastive objective.

Per layer k, both views' projections are compared with a temperature
softmax loss whose negatives are all other nodes in the opposite view
plus all other nodes in the same view:

    l(u_i, v_i) = -log exp(s_uv[i,i]/t) / (sum_j exp(s_uv[i,j]/t)
                  + sum_{j!=i} exp(s_uu[i,j]/t))
    L_k = (1/2N) sum_i [l(u_i, v_i) + l(v_i, u_i)]

Layer losses are fused with per-node attention over layers (softmax of a
small tanh MLP on the projections) into the total training loss.

The pairwise loss is one fused tape primitive: composing it from
elementwise nodes would materialize ~8 NxN intermediates per layer. It
runs full-matrix when 3-4 NxN buffers fit the memory budget, otherwise
in row blocks (``block_rows`` knob); both paths are log-sum-exp
stabilized and agree to summation noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import kernels
from .autodiff import Expr, LossDomainError, Tape, custom_op

SIMILARITIES = ("cosine", "dot")
LAYER_MODES = ("multi", "last_only")
ALPHA_MODES = ("layer_mean", "per_node")

# shift-free exp is safe below this bound; above it, per-row max shifts
_SHIFT_FREE_LIMIT = 50.0
# "auto" block policy: full-matrix mode while 4 NxN f64 buffers stay under this
_FULL_MODE_BYTES = 2 << 30
_DEFAULT_BLOCK_ROWS = 2048


@dataclass
class LossConfig:
    tau: float
    similarity: str = "cosine"
    layer_mode: str = "multi"
    alpha_mode: str = "layer_mean"
    block_rows: int = 0   # 0 = auto

    def validate(self) -> None:
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.similarity not in SIMILARITIES:
            raise ValueError(f"similarity must be one of {SIMILARITIES}")
        if self.layer_mode not in LAYER_MODES:
            raise ValueError(f"layer_mode must be one of {LAYER_MODES}")
        if self.alpha_mode not in ALPHA_MODES:
            raise ValueError(f"alpha_mode must be one of {ALPHA_MODES}")
        if self.block_rows < 0:
            raise ValueError("block_rows must be >= 0")


@dataclass
class AttentionParams:
    """Shapes of the per-layer attention transform; the arrays live in
    ModelParams (attn_q: d x 1 per layer, attn_w: d x d per layer,
    attn_bias: 1 x d shared)."""

    num_layers: int
    dim: int


def _take(pool, shape):
    return pool.take(shape) if pool is not None else np.empty(shape)


def _give(pool, arrays):
    if pool is not None:
        for a in arrays:
            pool.give(a)


def _pair_loss_full(u: np.ndarray, v: np.ndarray, tau: float, pool):
    """Full-matrix forward. Returns (loss, backward_fn, scratch arrays)."""
    n = u.shape[0]
    inv_tau = 1.0 / tau
    s_uv = _take(pool, (n, n))
    s_uu = _take(pool, (n, n))
    s_vv = _take(pool, (n, n))
    np.matmul(u, v.T, out=s_uv)
    np.matmul(u, u.T, out=s_uu)
    np.matmul(v, v.T, out=s_vv)
    for s in (s_uv, s_uu, s_vv):
        s *= inv_tau
    pos = s_uv.diagonal().copy()

    peak = max(abs(float(s_uv.max())), abs(float(s_uv.min())),
               abs(float(s_uu.max())), abs(float(s_vv.max())))
    shift_free = peak < _SHIFT_FREE_LIMIT

    if shift_free:
        # exp in place: one matrix per similarity serves both directions
        e_uv = kernels.exp_out(s_uv, s_uv)
        e_uu = kernels.exp_out(s_uu, s_uu)
        e_vv = kernels.exp_out(s_vv, s_vv)
        np.fill_diagonal(e_uu, 0.0)
        np.fill_diagonal(e_vv, 0.0)
        d_u = e_uv.sum(axis=1) + e_uu.sum(axis=1)
        d_v = e_uv.sum(axis=0) + e_vv.sum(axis=1)
        den_u = np.log(d_u)
        den_v = np.log(d_v)
        scratch = [s_uv, s_uu, s_vv]

        def backward(g: float):
            c = g / (2.0 * n)
            r = c / d_u
            s_ = c / d_v
            a = _take(pool, (n, n))
            kernels.outer_sum_mul(e_uv, r, s_, 1.0, a)
            a.flat[:: n + 1] -= g / n
            du = (a @ v) * inv_tau
            dv = (a.T @ u) * inv_tau
            kernels.outer_sum_mul(e_uu, r, r, 1.0, a)
            du += (a @ u) * inv_tau
            kernels.outer_sum_mul(e_vv, s_, s_, 1.0, a)
            dv += (a @ v) * inv_tau
            _give(pool, [a])
            return du, dv
    else:
        # per-row shifts; the two directions need separately shifted copies
        e_uv_u = _take(pool, (n, n))
        e_uv_v = _take(pool, (n, n))
        m_u = np.maximum(s_uv.max(axis=1), _offdiag_max(s_uu))
        m_v = np.maximum(s_uv.max(axis=0), _offdiag_max(s_vv))
        kernels.exp_rows_shift(s_uv, m_u, e_uv_u)
        kernels.exp_cols_shift(s_uv, m_v, e_uv_v)
        e_uu = kernels.exp_rows_shift(s_uu, m_u, s_uu)
        e_vv = kernels.exp_rows_shift(s_vv, m_v, s_vv)
        np.fill_diagonal(e_uu, 0.0)
        np.fill_diagonal(e_vv, 0.0)
        d_u = e_uv_u.sum(axis=1) + e_uu.sum(axis=1)
        d_v = e_uv_v.sum(axis=0) + e_vv.sum(axis=1)
        den_u = m_u + np.log(d_u)
        den_v = m_v + np.log(d_v)
        scratch = [s_uv, s_uu, s_vv, e_uv_u, e_uv_v]

        def backward(g: float):
            c = g / (2.0 * n)
            r = c / d_u
            s_ = c / d_v
            a = _take(pool, (n, n))
            b = _take(pool, (n, n))
            kernels.mul_rows(e_uv_u, r, 1.0, a)
            kernels.mul_cols(e_uv_v, s_, 1.0, b)
            a += b
            a.flat[:: n + 1] -= g / n
            du = (a @ v) * inv_tau
            dv = (a.T @ u) * inv_tau
            kernels.mul_rows(e_uu, r, 1.0, a)
            np.add(a, a.T, out=b)
            du += (b @ u) * inv_tau
            kernels.mul_rows(e_vv, s_, 1.0, a)
            np.add(a, a.T, out=b)
            dv += (b @ v) * inv_tau
            _give(pool, [a, b])
            return du, dv

    loss = float(np.mean(0.5 * (den_u + den_v) - pos))
    if not (np.isfinite(loss) and np.all(np.isfinite(den_u))
            and np.all(np.isfinite(den_v))):
        raise LossDomainError("non-finite contrastive loss")
    return loss, backward, scratch


def _offdiag_max(s: np.ndarray) -> np.ndarray:
    """Row max ignoring the diagonal (N >= 2); for N == 1 returns -inf."""
    n = s.shape[0]
    if n == 1:
        return np.full(1, -np.inf)
    diag = s.diagonal().copy()
    s.flat[:: n + 1] = -np.inf
    out = s.max(axis=1)
    s.flat[:: n + 1] = diag
    return out


def _direction_pass(x: np.ndarray, y: np.ndarray, inv_tau: float, rows: int):
    """Blocked denominators for one direction: per node i, the log-sum-exp
    of x_i . y_j over all j joined with x_i . x_j over j != i. Also
    returns the positive diagonal x_i . y_i."""
    n = x.shape[0]
    m = np.full(n, -np.inf)
    d = np.zeros(n)
    pos = np.empty(n)
    for lo in range(0, n, rows):
        hi = min(lo + rows, n)
        s_xy = (x[lo:hi] @ y.T) * inv_tau
        s_xx = (x[lo:hi] @ x.T) * inv_tau
        pos[lo:hi] = s_xy[np.arange(hi - lo), np.arange(lo, hi)]
        s_xx[np.arange(hi - lo), np.arange(lo, hi)] = -np.inf
        m_blk = np.maximum(s_xy.max(axis=1), s_xx.max(axis=1))
        e_xy = np.exp(s_xy - m_blk[:, None])
        s_xx -= m_blk[:, None]
        np.exp(s_xx, out=s_xx)
        s_xx[np.arange(hi - lo), np.arange(lo, hi)] = 0.0
        d[lo:hi] = e_xy.sum(axis=1) + s_xx.sum(axis=1)
        m[lo:hi] = m_blk
    return m + np.log(d), pos


def _pair_loss_blocked(u: np.ndarray, v: np.ndarray, tau: float, rows: int):
    """Row-blocked forward: O(rows x N) scratch, similarities recomputed
    in backward."""
    n = u.shape[0]
    inv_tau = 1.0 / tau
    den_u, pos = _direction_pass(u, v, inv_tau, rows)
    den_v, _ = _direction_pass(v, u, inv_tau, rows)
    loss = float(np.mean(0.5 * (den_u + den_v) - pos))
    if not (np.isfinite(loss) and np.all(np.isfinite(den_u))
            and np.all(np.isfinite(den_v))):
        raise LossDomainError("non-finite contrastive loss")

    def backward(g: float):
        c = g / (2.0 * n)
        du = np.zeros_like(u)
        dv = np.zeros_like(v)
        for lo in range(0, n, rows):
            hi = min(lo + rows, n)
            idx = np.arange(hi - lo)
            # inter-view block of dS_uv (both directions) + positive diag
            a = (u[lo:hi] @ v.T) * inv_tau
            a = c * (np.exp(a - den_u[lo:hi, None]) + np.exp(a - den_v[None, :]))
            a[idx, np.arange(lo, hi)] -= g / n
            du[lo:hi] += (a @ v) * inv_tau
            dv += (a.T @ u[lo:hi]) * inv_tau
            # intra-view u
            p = (u[lo:hi] @ u.T) * inv_tau
            p = c * np.exp(p - den_u[lo:hi, None])
            p[idx, np.arange(lo, hi)] = 0.0
            du[lo:hi] += (p @ u) * inv_tau
            du += (p.T @ u[lo:hi]) * inv_tau
            # intra-view v
            q = (v[lo:hi] @ v.T) * inv_tau
            q = c * np.exp(q - den_v[lo:hi, None])
            q[idx, np.arange(lo, hi)] = 0.0
            dv[lo:hi] += (q @ v) * inv_tau
            dv += (q.T @ v[lo:hi]) * inv_tau
        return du, dv

    return loss, backward, []


def ntxent_pair(u: Expr, v: Expr, tau: float, block_rows: int = 0,
                pool=None) -> Expr:
    """Fused tape primitive for the symmetric pairwise loss of one layer.

    u, v: N x d projections, already normalized in cosine mode.
    """
    if u.value.shape != v.value.shape:
        raise ValueError(f"view shapes differ: {u.value.shape} vs {v.value.shape}")
    n = u.value.shape[0]
    full = block_rows == 0 and 4 * n * n * 8 <= _FULL_MODE_BYTES
    rows = block_rows if block_rows > 0 else _DEFAULT_BLOCK_ROWS

    def run(mode_full: bool):
        if mode_full:
            return _pair_loss_full(u.value, v.value, tau, pool)
        return _pair_loss_blocked(u.value, v.value, tau, rows)

    loss, backward, scratch = run(full)
    out = None

    def push(g, acc):
        du, dv = backward(float(g[0, 0]))
        acc(u, du, True)
        acc(v, dv, True)

    out = custom_op(u.tape, np.array([[loss]]), (u, v), push,
                    lambda: np.array([[run(full)[0]]]), "ntxent_pair")
    if scratch and pool is not None:
        def release(arrays=scratch):
            _give(pool, arrays)
        out._release = release
    return out


def layer_loss(zu: Expr, zv: Expr, cfg: LossConfig, pool=None) -> Expr:
    """Symmetric contrastive loss of one layer's projections."""
    cfg.validate()
    if not (np.all(np.isfinite(zu.value)) and np.all(np.isfinite(zv.value))):
        raise LossDomainError("non-finite projection entering the loss")
    if cfg.similarity == "cosine":
        zu = ad.row_l2_normalize(zu)
        zv = ad.row_l2_normalize(zv)
    return ntxent_pair(zu, zv, cfg.tau, cfg.block_rows, pool)


def attention_weights(zs: list[Expr], bound: dict[str, Expr],
                      tape: Tape) -> Expr:
    """Per-node softmax weights over layers:
    w_k(i) = q_k . tanh(W_k z_k(i) + b), alpha = softmax_k(w_k)."""
    m = len(zs)
    if not all(f"attn.{k}.q" in bound for k in range(m)):
        raise ValueError(f"attention parameters missing for {m} layers")
    cols = []
    for k, z in enumerate(zs):
        t = ad.tanh(ad.add_row_bias(ad.transpose_dot(z, bound[f"attn.{k}.w"]),
                                    bound["attn.bias"]))
        cols.append(ad.matmul(t, bound[f"attn.{k}.q"]))
    return ad.row_softmax(ad.concat_cols(cols))


def total_loss(layer_losses: list[Expr], alpha: Expr, cfg: LossConfig,
               tape: Tape) -> Expr:
    """Attention-weighted sum of the per-layer losses.

    layer_mean: sum_k mean_i(alpha[i,k]) * L_k (default);
    per_node:   mean_i sum_k alpha[i,k] * L_k.
    """
    if len(layer_losses) != alpha.value.shape[1]:
        raise ValueError(
            f"{len(layer_losses)} layer losses vs {alpha.value.shape[1]} "
            "attention columns")
    lvec = ad.concat_rows(layer_losses)
    if cfg.alpha_mode == "per_node":
        return ad.mean_all(ad.matmul(alpha, lvec))
    n = alpha.value.shape[0]
    ones = tape.constant(np.full((1, n), 1.0 / n))
    return ad.matmul(ad.matmul(ones, alpha), lvec)
