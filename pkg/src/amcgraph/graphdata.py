"""Graph and dataset data model: CSR graphs, file ingestion, symmetric
degree normalization, sparse-dense products.

Dataset directory layout (all UTF-8, LF or trailing-newline-optional):

    graph.edges    one undirected edge per line, "u v", 0-based; '#' comments
    features.txt   N lines of F space-separated reals
    labels.txt     N lines, one integer per node (-1 = unlabeled)
    split.txt      N lines, one of train|val|test|none
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels

SPLIT_TAGS = ("train", "val", "test", "none")


class DatasetError(ValueError):
    """Malformed dataset file; message carries file name and line number."""

    def __init__(self, message, file=None, line=None):
        loc = ""
        if file is not None:
            loc = f"{file}:" if line is None else f"{file}:{line}: "
        super().__init__(f"{loc}{message}")
        self.file = file
        self.line = line


@dataclass
class SparseGraph:
    """Undirected graph in CSR form; both directions of every edge stored,
    no self-loops, no duplicates."""

    num_nodes: int
    row_offsets: np.ndarray   # int64, length N+1
    col_indices: np.ndarray   # int64, length 2*edge_count
    edge_count: int           # undirected pair count

    @classmethod
    def from_edges(cls, num_nodes: int, u, v) -> "SparseGraph":
        """Build from parallel endpoint arrays; symmetrizes, deduplicates
        and drops self-loops."""
        u = np.asarray(u, dtype=np.int64)
        v = np.asarray(v, dtype=np.int64)
        keep = u != v
        u, v = u[keep], v[keep]
        lo = np.minimum(u, v)
        hi = np.maximum(u, v)
        if lo.size:
            pair_ids = np.unique(lo * np.int64(num_nodes) + hi)
            lo = pair_ids // num_nodes
            hi = pair_ids % num_nodes
        rows = np.concatenate([lo, hi])
        cols = np.concatenate([hi, lo])
        order = np.lexsort((cols, rows))
        rows, cols = rows[order], cols[order]
        offsets = np.zeros(num_nodes + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=num_nodes), out=offsets[1:])
        return cls(num_nodes, offsets, cols, int(lo.size))

    def undirected_pairs(self) -> tuple[np.ndarray, np.ndarray]:
        """Each undirected edge once, as (u, v) with u < v."""
        rows = np.repeat(np.arange(self.num_nodes, dtype=np.int64),
                         np.diff(self.row_offsets))
        upper = rows < self.col_indices
        return rows[upper], self.col_indices[upper]

    def degrees(self) -> np.ndarray:
        return np.diff(self.row_offsets)

    def validate(self) -> None:
        n = self.num_nodes
        if self.row_offsets.shape != (n + 1,) or self.row_offsets[0] != 0:
            raise ValueError("bad row_offsets")
        if np.any(np.diff(self.row_offsets) < 0):
            raise ValueError("row_offsets not nondecreasing")
        if self.col_indices.size:
            if self.col_indices.min() < 0 or self.col_indices.max() >= n:
                raise ValueError("col_indices out of range")
        if self.col_indices.size != 2 * self.edge_count:
            raise ValueError("col_indices length != 2*edge_count")
        rows = np.repeat(np.arange(n, dtype=np.int64),
                         np.diff(self.row_offsets))
        if np.any(rows == self.col_indices):
            raise ValueError("self-loop stored")
        # per-row sorted and unique columns
        for i in range(n):
            cols = self.col_indices[self.row_offsets[i]:self.row_offsets[i + 1]]
            if cols.size > 1 and np.any(np.diff(cols) <= 0):
                raise ValueError(f"row {i} has unsorted or duplicate columns")
        # symmetry: (i,j) present iff (j,i) present
        fwd = set(zip(rows.tolist(), self.col_indices.tolist()))
        if any((j, i) not in fwd for (i, j) in fwd):
            raise ValueError("adjacency not symmetric")


class CsrOperator:
    """General square CSR operator with an explicitly built transpose
    (needed when the weights are not symmetric, e.g. neighbor means)."""

    def __init__(self, num_nodes, row_offsets, col_indices, weights,
                 transpose=None):
        self.num_nodes = num_nodes
        self.row_offsets = row_offsets
        self.col_indices = col_indices
        self.weights = weights
        self._transpose = transpose

    @classmethod
    def build(cls, num_nodes, row_offsets, col_indices, weights):
        op = cls(num_nodes, row_offsets, col_indices, weights)
        rows = np.repeat(np.arange(num_nodes, dtype=np.int64),
                         np.diff(row_offsets))
        order = np.argsort(col_indices, kind="stable")
        t_offsets = np.zeros(num_nodes + 1, dtype=np.int64)
        np.cumsum(np.bincount(col_indices, minlength=num_nodes),
                  out=t_offsets[1:])
        op._transpose = cls(num_nodes, t_offsets, rows[order], weights[order],
                            transpose=op)
        return op

    @property
    def T(self) -> "CsrOperator":
        return self._transpose


@dataclass
class NormalizedAdjacency:
    """D^-1/2 (A+I) D^-1/2 in CSR form. Symmetric, so it is its own
    transpose for backward products."""

    num_nodes: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    weights: np.ndarray

    @property
    def T(self) -> "NormalizedAdjacency":
        return self

    def to_dense(self) -> np.ndarray:
        n = self.num_nodes
        out = np.zeros((n, n))
        rows = np.repeat(np.arange(n), np.diff(self.row_offsets))
        out[rows, self.col_indices] = self.weights
        return out


def normalize_adjacency(g: SparseGraph) -> NormalizedAdjacency:
    """Add one self-loop per node and scale entry (i,j) by
    1/sqrt(d~_i * d~_j), d~ = degree + 1."""
    n = g.num_nodes
    deg = g.degrees() + 1.0
    inv_sqrt = 1.0 / np.sqrt(deg)
    rows = np.repeat(np.arange(n, dtype=np.int64), np.diff(g.row_offsets))
    rows = np.concatenate([rows, np.arange(n, dtype=np.int64)])
    cols = np.concatenate([g.col_indices, np.arange(n, dtype=np.int64)])
    order = np.lexsort((cols, rows))
    rows, cols = rows[order], cols[order]
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=n), out=offsets[1:])
    weights = inv_sqrt[rows] * inv_sqrt[cols]
    return NormalizedAdjacency(n, offsets, cols, weights)


def spmm(adj, dense: np.ndarray, out=None) -> np.ndarray:
    """Sparse-dense product adj @ dense with deterministic per-row
    summation order."""
    if dense.shape[0] != adj.num_nodes:
        raise ValueError(
            f"dense has {dense.shape[0]} rows, adjacency expects {adj.num_nodes}")
    return kernels.spmm(adj.row_offsets, adj.col_indices, adj.weights,
                        dense, out=out)


@dataclass
class Dataset:
    graph: SparseGraph
    features: np.ndarray        # N x F float64
    labels: np.ndarray          # int64, -1 = unlabeled
    split: np.ndarray           # int8 codes indexing SPLIT_TAGS
    num_classes: int
    dropped_self_loops: int = 0
    source_dir: str | None = field(default=None, compare=False)

    def split_mask(self, tag: str) -> np.ndarray:
        return self.split == SPLIT_TAGS.index(tag)

    def __eq__(self, other):
        return (isinstance(other, Dataset)
                and self.num_classes == other.num_classes
                and self.graph.num_nodes == other.graph.num_nodes
                and self.graph.edge_count == other.graph.edge_count
                and np.array_equal(self.graph.row_offsets, other.graph.row_offsets)
                and np.array_equal(self.graph.col_indices, other.graph.col_indices)
                and np.array_equal(self.features, other.features)
                and np.array_equal(self.labels, other.labels)
                and np.array_equal(self.split, other.split))


def _read_lines(path: Path) -> list[str]:
    if not path.is_file():
        raise DatasetError("missing file", file=path.name)
    return path.read_text(encoding="utf-8").splitlines()


def load_dataset(directory) -> Dataset:
    """Load and validate a dataset directory (see module docstring for the
    file formats)."""
    directory = Path(directory)
    edge_lines = _read_lines(directory / "graph.edges")
    feat_lines = _read_lines(directory / "features.txt")
    label_lines = _read_lines(directory / "labels.txt")
    split_lines = _read_lines(directory / "split.txt")

    n = len(feat_lines)
    if n == 0:
        raise DatasetError("no feature rows", file="features.txt")

    us, vs = [], []
    self_loops = 0
    for ln, raw in enumerate(edge_lines, start=1):
        text = raw.split("#", 1)[0].strip()
        if not text:
            continue
        parts = text.split()
        if len(parts) != 2:
            raise DatasetError(f"expected 'u v', got {raw!r}",
                               file="graph.edges", line=ln)
        try:
            u, v = int(parts[0]), int(parts[1])
        except ValueError:
            raise DatasetError(f"non-integer endpoint in {raw!r}",
                               file="graph.edges", line=ln) from None
        if u < 0 or u >= n or v < 0 or v >= n:
            raise DatasetError(f"node index out of range: {max(u, v)} >= {n}",
                               file="graph.edges", line=ln)
        if u == v:
            self_loops += 1
            continue
        us.append(u)
        vs.append(v)
    if self_loops:
        print(f"warning: graph.edges: stripped {self_loops} self-loop(s); "
              "normalization re-adds exactly one per node", file=sys.stderr)
    graph = SparseGraph.from_edges(n, us, vs)

    first = feat_lines[0].split()
    f_dim = len(first)
    features = np.empty((n, f_dim), dtype=np.float64)
    for ln, raw in enumerate(feat_lines, start=1):
        parts = raw.split()
        if len(parts) != f_dim:
            raise DatasetError(
                f"ragged feature row: {len(parts)} values, expected {f_dim}",
                file="features.txt", line=ln)
        try:
            features[ln - 1] = [float(p) for p in parts]
        except ValueError:
            raise DatasetError("non-numeric feature value",
                               file="features.txt", line=ln) from None

    if len(label_lines) != n:
        raise DatasetError(f"{len(label_lines)} labels for {n} nodes",
                           file="labels.txt")
    labels = np.empty(n, dtype=np.int64)
    for ln, raw in enumerate(label_lines, start=1):
        try:
            labels[ln - 1] = int(raw.strip())
        except ValueError:
            raise DatasetError(f"non-integer label {raw!r}",
                               file="labels.txt", line=ln) from None
    if labels.min(initial=0) < -1:
        bad = int(np.argmax(labels < -1)) + 1
        raise DatasetError("label below -1", file="labels.txt", line=bad)
    num_classes = int(labels.max(initial=-1)) + 1
    if num_classes == 0:
        raise DatasetError("all nodes unlabeled", file="labels.txt")

    if len(split_lines) != n:
        raise DatasetError(f"{len(split_lines)} split tags for {n} nodes",
                           file="split.txt")
    split = np.empty(n, dtype=np.int8)
    for ln, raw in enumerate(split_lines, start=1):
        tag = raw.strip()
        if tag not in SPLIT_TAGS:
            raise DatasetError(f"unknown split tag {tag!r}",
                               file="split.txt", line=ln)
        split[ln - 1] = SPLIT_TAGS.index(tag)

    return Dataset(graph, features, labels, split, num_classes,
                   dropped_self_loops=self_loops, source_dir=str(directory))


def save_dataset(d: Dataset, directory) -> None:
    """Write a Dataset back out in the canonical directory format; floats
    use shortest round-trip formatting so load(save(d)) == d bitwise."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    u, v = d.graph.undirected_pairs()
    with open(directory / "graph.edges", "w", encoding="utf-8") as f:
        for a, b in zip(u.tolist(), v.tolist()):
            f.write(f"{a} {b}\n")
    with open(directory / "features.txt", "w", encoding="utf-8") as f:
        for row in d.features:
            f.write(" ".join(repr(x) for x in row.tolist()) + "\n")
    with open(directory / "labels.txt", "w", encoding="utf-8") as f:
        f.writelines(f"{x}\n" for x in d.labels.tolist())
    with open(directory / "split.txt", "w", encoding="utf-8") as f:
        f.writelines(f"{SPLIT_TAGS[x]}\n" for x in d.split.tolist())
