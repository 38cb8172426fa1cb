"""Two-stage graph encoder (target stage then auxiliary stage), per-layer
projection heads, attention parameters, parameter init and the model
binary format.

Layer rule: h' = act(adj @ h @ W). The target stage runs on the view's
target adjacency from the masked features; its final output, masked by
the view's auxiliary mask, feeds the auxiliary stage on the independently
dropped auxiliary adjacency. All M = l1 + l2 per-layer embeddings are
kept for the multi-layer loss; downstream consumers use the target
stage's final output only.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .augment import GraphView
from .graphdata import Dataset, SparseGraph, normalize_adjacency

ACTIVATIONS = ("relu", "prelu")

MODEL_MAGIC = b"AMCG"
MODEL_VERSION = 1


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


@dataclass
class ModelParams:
    """All trainable arrays plus the architecture scalars needed to rebuild
    the forward pass."""

    feature_dim: int
    hidden_dim: int
    activation: str
    target_weights: list = field(default_factory=list)
    aux_weights: list = field(default_factory=list)
    target_slopes: list = field(default_factory=list)   # (1,1) each; prelu only
    aux_slopes: list = field(default_factory=list)
    head_w1: dict = field(default_factory=dict)         # layer k -> d x d
    head_w2: dict = field(default_factory=dict)
    attn_q: list = field(default_factory=list)          # empty in last_only mode
    attn_w: list = field(default_factory=list)
    attn_bias: np.ndarray | None = None                 # (1, d) shared over layers

    @property
    def l1(self) -> int:
        return len(self.target_weights)

    @property
    def l2(self) -> int:
        return len(self.aux_weights)

    @property
    def num_layers(self) -> int:
        return self.l1 + self.l2

    def named_parameters(self):
        """(name, array) pairs in canonical order."""
        for i, w in enumerate(self.target_weights):
            yield f"target.{i}.weight", w
        for i, s in enumerate(self.target_slopes):
            yield f"target.{i}.slope", s
        for i, w in enumerate(self.aux_weights):
            yield f"aux.{i}.weight", w
        for i, s in enumerate(self.aux_slopes):
            yield f"aux.{i}.slope", s
        for k in range(self.num_layers):
            yield f"head.{k}.w1", self.head_w1[k]
            yield f"head.{k}.w2", self.head_w2[k]
        for k, q in enumerate(self.attn_q):
            yield f"attn.{k}.q", q
        for k, w in enumerate(self.attn_w):
            yield f"attn.{k}.w", w
        if self.attn_bias is not None:
            yield "attn.bias", self.attn_bias


def init_params(feature_dim: int, hidden_dim: int, l1: int, l2: int,
                activation: str, rng: np.random.Generator,
                with_attention: bool = True) -> ModelParams:
    if l1 < 1:
        raise ValueError("target stage needs at least one layer")
    if l2 < 0:
        raise ValueError("auxiliary layer count cannot be negative")
    if activation not in ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}")
    mp = ModelParams(feature_dim, hidden_dim, activation)
    dims = [feature_dim] + [hidden_dim] * l1
    for i in range(l1):
        mp.target_weights.append(glorot(rng, dims[i], dims[i + 1]))
    for _ in range(l2):
        mp.aux_weights.append(glorot(rng, hidden_dim, hidden_dim))
    if activation == "prelu":
        mp.target_slopes = [np.full((1, 1), 0.25) for _ in range(l1)]
        mp.aux_slopes = [np.full((1, 1), 0.25) for _ in range(l2)]
    m = l1 + l2
    for _ in range(m):
        mp.head_w1.append(glorot(rng, hidden_dim, hidden_dim))
        mp.head_w2.append(glorot(rng, hidden_dim, hidden_dim))
    if with_attention:
        for _ in range(m):
            mp.attn_q.append(glorot(rng, hidden_dim, 1))
            mp.attn_w.append(glorot(rng, hidden_dim, hidden_dim))
        mp.attn_bias = np.zeros((1, hidden_dim))
    return mp


def bind_params(tape: ad.Tape, mp: ModelParams) -> dict[str, ad.Expr]:
    """Create one parameter leaf per trainable array on the tape."""
    return {name: tape.param(arr) for name, arr in mp.named_parameters()}


def _activate(pre: ad.Expr, mp: ModelParams, bound, stage: str, i: int) -> ad.Expr:
    if mp.activation == "relu":
        return ad.relu(pre)
    return ad.prelu(pre, bound[f"{stage}.{i}.slope"])


def gcn_layer(adj, h: ad.Expr, w: ad.Expr, act="relu", slope: ad.Expr | None = None) -> ad.Expr:
    """One propagation step act(adj @ h @ w)."""
    pre = ad.sparse_matmul(adj, ad.matmul(h, w))
    if act == "relu":
        return ad.relu(pre)
    if act == "prelu":
        if slope is None:
            raise ValueError("prelu needs a slope parameter")
        return ad.prelu(pre, slope)
    raise ValueError(f"unknown activation {act!r}")


def encode(view: GraphView, mp: ModelParams, bound: dict[str, ad.Expr],
           tape: ad.Tape) -> list[ad.Expr]:
    """All M per-layer embeddings of one view."""
    h = tape.constant(view.masked_features)
    hs: list[ad.Expr] = []
    for i in range(mp.l1):
        pre = ad.sparse_matmul(view.adj_target,
                               ad.matmul(h, bound[f"target.{i}.weight"]))
        h = _activate(pre, mp, bound, "target", i)
        hs.append(h)
    if mp.l2 > 0:
        if not np.all(view.aux_mask == 1.0):
            h = ad.mul(h, tape.constant(view.aux_mask.reshape(1, -1)))
        for i in range(mp.l2):
            pre = ad.sparse_matmul(view.adj_aux,
                                   ad.matmul(h, bound[f"aux.{i}.weight"]))
            h = _activate(pre, mp, bound, "aux", i)
            hs.append(h)
    return hs


def project(hs: list[ad.Expr], mp: ModelParams, bound: dict[str, ad.Expr],
            layers: list[int] | None = None) -> dict[int, ad.Expr]:
    """Two-layer heads z_k = relu(h_k @ W1_k) @ W2_k for the requested
    layer indices (default: all)."""
    if layers is None:
        layers = list(range(len(hs)))
    zs = {}
    for k in layers:
        if k >= mp.num_layers:
            raise ValueError(f"no projection head for layer {k}")
        zs[k] = ad.matmul(ad.relu(ad.matmul(hs[k], bound[f"head.{k}.w1"])),
                          bound[f"head.{k}.w2"])
    return zs


def mean_aggregator(g: SparseGraph):
    """Row-stochastic neighbor-mean operator; isolated nodes aggregate to
    the zero vector."""
    from .graphdata import CsrOperator

    deg = g.degrees().astype(np.float64)
    inv = np.zeros_like(deg)
    nz = deg > 0
    inv[nz] = 1.0 / deg[nz]
    rows = np.repeat(np.arange(g.num_nodes), np.diff(g.row_offsets))
    return CsrOperator.build(g.num_nodes, g.row_offsets, g.col_indices,
                             inv[rows])


def sage_layer(g: SparseGraph, h: ad.Expr, w: ad.Expr, act: str = "relu",
               slope: ad.Expr | None = None) -> ad.Expr:
    """Mean-aggregation inductive layer:
    act(concat(h_v, mean_{u in N(v)} h_u) @ w)."""
    h_n = ad.sparse_matmul(mean_aggregator(g), h)
    pre = ad.matmul(ad.concat_cols([h, h_n]), w)
    if act == "relu":
        return ad.relu(pre)
    if act == "prelu":
        if slope is None:
            raise ValueError("prelu needs a slope parameter")
        return ad.prelu(pre, slope)
    raise ValueError(f"unknown activation {act!r}")


def embed_nodes(d: Dataset, mp: ModelParams) -> np.ndarray:
    """Final representation h^{l1}: target-stage output on the unaugmented
    normalized graph, no masking, forward only."""
    if d.features.shape[1] != mp.feature_dim:
        raise ValueError(
            f"model expects {mp.feature_dim} features, dataset has "
            f"{d.features.shape[1]}")
    adj = normalize_adjacency(d.graph)
    tape = ad.Tape()
    h = tape.constant(d.features)
    for i in range(mp.l1):
        w = tape.constant(mp.target_weights[i])
        pre = ad.sparse_matmul(adj, ad.matmul(h, w))
        if mp.activation == "relu":
            h = ad.relu(pre)
        else:
            h = ad.prelu(pre, tape.constant(mp.target_slopes[i]))
    return h.value


def _write_tensor(f, arr: np.ndarray) -> None:
    f.write(struct.pack("<I", arr.ndim))
    for dim in arr.shape:
        f.write(struct.pack("<Q", dim))
    f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_tensor(f) -> np.ndarray:
    (rank,) = struct.unpack("<I", f.read(4))
    dims = [struct.unpack("<Q", f.read(8))[0] for _ in range(rank)]
    count = int(np.prod(dims)) if dims else 1
    data = np.frombuffer(f.read(8 * count), dtype="<f8")
    return data.reshape(dims).astype(np.float64)


def save_model(path, mp: ModelParams) -> None:
    """Binary container: magic, version, name manifest, then tensors
    (rank, dims, row-major little-endian float64)."""
    act_code = ACTIVATIONS.index(mp.activation)
    meta = np.array([mp.l1, mp.l2, mp.feature_dim, mp.hidden_dim, act_code],
                    dtype=np.float64)
    entries = [("meta", meta)] + list(mp.named_parameters())
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(struct.pack("<I", MODEL_VERSION))
        f.write(struct.pack("<I", len(entries)))
        for name, _ in entries:
            raw = name.encode("utf-8")
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
        for _, arr in entries:
            _write_tensor(f, np.atleast_1d(arr))


def load_model(path) -> ModelParams:
    with open(path, "rb") as f:
        if f.read(4) != MODEL_MAGIC:
            raise ValueError(f"{path}: not a model file (bad magic)")
        (version,) = struct.unpack("<I", f.read(4))
        if version != MODEL_VERSION:
            raise ValueError(f"{path}: unsupported format version {version}")
        (count,) = struct.unpack("<I", f.read(4))
        names = []
        for _ in range(count):
            (ln,) = struct.unpack("<I", f.read(4))
            names.append(f.read(ln).decode("utf-8"))
        tensors = {name: _read_tensor(f) for name in names}
    meta = tensors.pop("meta")
    l1, l2, feature_dim, hidden_dim, act_code = (int(x) for x in meta)
    mp = ModelParams(feature_dim, hidden_dim, ACTIVATIONS[act_code])
    mp.target_weights = [tensors[f"target.{i}.weight"] for i in range(l1)]
    mp.aux_weights = [tensors[f"aux.{i}.weight"] for i in range(l2)]
    if mp.activation == "prelu":
        mp.target_slopes = [tensors[f"target.{i}.slope"].reshape(1, 1)
                            for i in range(l1)]
        mp.aux_slopes = [tensors[f"aux.{i}.slope"].reshape(1, 1)
                         for i in range(l2)]
    m = l1 + l2
    mp.head_w1 = [tensors[f"head.{k}.w1"] for k in range(m)]
    mp.head_w2 = [tensors[f"head.{k}.w2"] for k in range(m)]
    if "attn.bias" in tensors:
        mp.attn_q = [tensors[f"attn.{k}.q"] for k in range(m)]
        mp.attn_w = [tensors[f"attn.{k}.w"] for k in range(m)]
        mp.attn_bias = tensors["attn.bias"].reshape(1, -1)
    return mp
