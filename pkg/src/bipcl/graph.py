"""Distance-weighted item co-occurrence graph and propagation over it."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .numerics import SparseRowMatrix, Tensor, spmm


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class CoGraphConfig:
    delta: int = 5
    depth: int = 2
    symmetric: bool = True

    def __post_init__(self):
        if self.delta < 1:
            raise ValueError("delta must be >= 1")
        if self.depth < 1:
            raise ValueError("depth must be >= 1")


@dataclass
class CoGraph:
    matrix: SparseRowMatrix
    normalized: bool
    delta: int = 0

    @property
    def n_items(self) -> int:
        return self.matrix.n_rows


def cooccurrence_counts(sequences: Sequence[Sequence[int]], n_items: int, delta: int, symmetric: bool = True) -> sp.csr_matrix:
    """Raw accumulated weights sum over pairs p<q of max(0, delta - (q - p)), diagonal excluded."""
    rows, cols, vals = [], [], []
    for s in sequences:
        s = np.asarray(s, dtype=np.int64)
        for dist in range(1, min(delta, len(s))):
            w = float(delta - dist)
            a, b = s[:-dist], s[dist:]
            rows.append(a)
            cols.append(b)
            vals.append(np.full(len(a), w))
            if symmetric:
                rows.append(b)
                cols.append(a)
                vals.append(np.full(len(a), w))
    if rows:
        r, c, v = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
    else:
        r = c = np.zeros(0, dtype=np.int64)
        v = np.zeros(0)
    m = sp.coo_matrix((v, (r, c)), shape=(n_items, n_items)).tocsr()
    m.sum_duplicates()
    return m


def build_cograph(sequences: Sequence[Sequence[int]], n_items: int, config: CoGraphConfig = CoGraphConfig(), normalize: bool = True) -> CoGraph:
    if not sequences or all(len(s) == 0 for s in sequences):
        raise GraphError("cannot build a co-occurrence graph from an empty training set")
    m = cooccurrence_counts(sequences, n_items, config.delta, config.symmetric).tolil()
    # self-connections are overwritten, not accumulated
    m.setdiag(1.0)
    raw = SparseRowMatrix.from_scipy(m.tocsr())
    if normalize:
        return CoGraph(raw.row_normalized(), True, config.delta)
    return CoGraph(raw, False, config.delta)


def propagate(graph: CoGraph, e, depth: int) -> Tensor:
    """Return A^depth @ e (final step only, no per-layer transform)."""
    if not graph.normalized:
        raise GraphError("propagate needs a row-normalized graph")
    if depth < 1:
        raise ValueError("depth must be >= 1")
    r = e
    for _ in range(depth):
        r = spmm(graph.matrix, r)
    return r


def perturb_graph_edges(graph: CoGraph, drop_rate: float, rng: np.random.Generator) -> CoGraph:
    """Drop each off-diagonal edge with probability ``drop_rate`` and renormalize rows."""
    if not 0.0 <= drop_rate < 1.0:
        raise ValueError("drop_rate must lie in [0, 1)")
    m = graph.matrix
    diag = m.row_ids() == m.col_indices
    keep = diag | (rng.random(m.nnz) >= drop_rate)
    rows = m.row_ids()[keep]
    kept = SparseRowMatrix(
        m.n_rows,
        m.n_cols,
        np.concatenate([[0], np.cumsum(np.bincount(rows, minlength=m.n_rows))]),
        m.col_indices[keep],
        m.weights[keep],
    )
    return CoGraph(kept.row_normalized() if graph.normalized else kept, graph.normalized, graph.delta)


_GRAPH_MAGIC = b"BIPCLGRF"


def dump_graph(graph: CoGraph, path) -> None:
    """Little-endian: magic, |V| u64, nnz u64, delta u32, normalized u8, then CSR arrays."""
    m = graph.matrix
    with open(path, "wb") as fh:
        fh.write(_GRAPH_MAGIC)
        fh.write(struct.pack("<QQIB", m.n_rows, m.nnz, graph.delta, int(graph.normalized)))
        fh.write(m.row_offsets.astype("<i8").tobytes())
        fh.write(m.col_indices.astype("<i8").tobytes())
        fh.write(m.weights.astype("<f8").tobytes())


def load_graph(path) -> CoGraph:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != _GRAPH_MAGIC:
        raise GraphError(f"{path}: not a graph dump")
    n, nnz, delta, normed = struct.unpack_from("<QQIB", blob, 8)
    pos = 8 + struct.calcsize("<QQIB")
    offsets = np.frombuffer(blob, "<i8", n + 1, pos)
    pos += 8 * (n + 1)
    cols = np.frombuffer(blob, "<i8", nnz, pos)
    pos += 8 * nnz
    weights = np.frombuffer(blob, "<f8", nnz, pos)
    return CoGraph(SparseRowMatrix(n, n, offsets, cols, weights), bool(normed), delta)
