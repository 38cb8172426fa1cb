"""Stochastic view generation: undirected edge dropping and shared-mask
attribute masking.

Randomness discipline: generate_views splits its SeedSequence into eight
child streams in a fixed order (view 1 then view 2; within a view:
target edges, auxiliary edges, feature mask, auxiliary mask), so toggling
any one probability never perturbs the other draws.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graphdata import Dataset, NormalizedAdjacency, SparseGraph, normalize_adjacency


@dataclass
class AugmentConfig:
    """Edge-drop (r) and attribute-mask (a) probabilities for the target
    (p_*) and auxiliary (q_*) stages of the two views."""

    p_r1: float = 0.0
    p_r2: float = 0.0
    q_r1: float = 0.0
    q_r2: float = 0.0
    p_a1: float = 0.0
    p_a2: float = 0.0
    q_a1: float = 0.0
    q_a2: float = 0.0

    def validate(self) -> None:
        for name, value in vars(self).items():
            if not (0.0 <= value <= 1.0):
                raise ValueError(f"augment.{name} must be in [0,1], got {value}")


@dataclass
class GraphView:
    """One augmented view: normalized adjacencies for both encoder stages,
    masked input features, and the mask applied to the auxiliary input."""

    adj_target: NormalizedAdjacency
    adj_aux: NormalizedAdjacency
    masked_features: np.ndarray
    feature_mask: np.ndarray   # {0,1}^F, shared by every node row
    aux_mask: np.ndarray       # {0,1}^hidden, applied to the aux stage input


def drop_edges(g: SparseGraph, rho: float, rng: np.random.Generator) -> SparseGraph:
    """Keep each undirected edge with probability 1-rho (both directions
    dropped together); node count unchanged."""
    if not (0.0 <= rho <= 1.0):
        raise ValueError(f"edge drop probability must be in [0,1], got {rho}")
    u, v = g.undirected_pairs()
    if rho == 0.0:
        return SparseGraph(g.num_nodes, g.row_offsets.copy(),
                           g.col_indices.copy(), g.edge_count)
    keep = rng.random(u.size) >= rho
    return SparseGraph.from_edges(g.num_nodes, u[keep], v[keep])


def mask_features(x: np.ndarray, p: float,
                  rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Zero a Bernoulli(p)-selected set of feature dimensions, the same
    set for every node. Returns (masked matrix, mask vector)."""
    if not (0.0 <= p <= 1.0):
        raise ValueError(f"mask probability must be in [0,1], got {p}")
    mask = (rng.random(x.shape[1]) >= p).astype(np.float64)
    return x * mask[None, :], mask


def _bernoulli_mask(dim: int, p: float, rng: np.random.Generator) -> np.ndarray:
    return (rng.random(dim) >= p).astype(np.float64)


def generate_views(d: Dataset, cfg: AugmentConfig, seed_seq: np.random.SeedSequence,
                   aux_dim: int) -> tuple[GraphView, GraphView]:
    """Build the two views. aux_dim is the hidden width the auxiliary-stage
    mask applies to (the target encoder's output dimension)."""
    cfg.validate()
    streams = [np.random.default_rng(s) for s in seed_seq.spawn(8)]
    views = []
    for view_idx, (pr, qr, pa, qa) in enumerate(
            [(cfg.p_r1, cfg.q_r1, cfg.p_a1, cfg.q_a1),
             (cfg.p_r2, cfg.q_r2, cfg.p_a2, cfg.q_a2)]):
        base = 4 * view_idx
        adj_target = normalize_adjacency(drop_edges(d.graph, pr, streams[base]))
        adj_aux = normalize_adjacency(drop_edges(d.graph, qr, streams[base + 1]))
        masked, fmask = mask_features(d.features, pa, streams[base + 2])
        aux_mask = _bernoulli_mask(aux_dim, qa, streams[base + 3])
        views.append(GraphView(adj_target, adj_aux, masked, fmask, aux_mask))
    return views[0], views[1]
