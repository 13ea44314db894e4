"""Undirected communication graphs and their Metropolis mixing matrices."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.sparse.csgraph import connected_components

MAX_CONNECT_RETRIES = 100


class TopologyError(ValueError):
    pass


class GraphKind(str, Enum):
    RING = "ring"
    STAR = "star"
    RANDOM = "random"
    COMPLETE = "complete"
    EDGE_LIST = "edges"


@dataclass(frozen=True)
class GraphSpec:
    kind: GraphKind
    n: int
    edge_probability: float | None = None
    explicit_edges: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "kind", GraphKind(self.kind))
        object.__setattr__(self, "explicit_edges", tuple(tuple(e) for e in self.explicit_edges))
        if self.n < 1:
            raise TopologyError(f"graph needs n >= 1, got {self.n}")
        if self.kind is GraphKind.RING and self.n < 3:
            raise TopologyError(f"ring needs n >= 3, got {self.n}")
        if self.kind is GraphKind.STAR and self.n < 2:
            raise TopologyError(f"star needs n >= 2, got {self.n}")
        p = self.edge_probability
        if p is not None and not 0.0 < p <= 1.0:
            raise TopologyError(f"edge_probability must lie in (0, 1], got {p}")
        seen = set()
        for i, j in self.explicit_edges:
            if i == j:
                raise TopologyError(f"self-loop at node {i}")
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise TopologyError(f"edge ({i}, {j}) references a node outside 0..{self.n - 1}")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise TopologyError(f"duplicate edge ({i}, {j})")
            seen.add(key)

    @property
    def resolved_edge_probability(self) -> float:
        """Default ``2 ln(n) / n`` (capped at 1) when unset."""
        if self.edge_probability is not None:
            return self.edge_probability
        if self.n < 2:
            return 1.0
        return min(1.0, 2.0 * math.log(self.n) / self.n)


@dataclass(frozen=True)
class MixingGraph:
    n: int
    weights: np.ndarray
    degrees: np.ndarray
    sigma2: float
    edges: tuple[tuple[int, int], ...] = field(default=())

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    def neighbors(self, i: int) -> np.ndarray:
        row = self.weights[i].copy()
        row[i] = 0.0
        return np.flatnonzero(row > 0)

    def degree_histogram(self) -> dict[int, int]:
        values, counts = np.unique(self.degrees, return_counts=True)
        return {int(v): int(c) for v, c in zip(values, counts)}


def _adjacency_from_edges(n, edges):
    adj = np.zeros((n, n), dtype=bool)
    for i, j in edges:
        adj[i, j] = adj[j, i] = True
    return adj


def _is_connected(adj):
    if adj.shape[0] <= 1:
        return True
    n_components, _ = connected_components(adj, directed=False)
    return n_components == 1


def _edges_from_adjacency(adj):
    rows, cols = np.nonzero(np.triu(adj, 1))
    return tuple((int(i), int(j)) for i, j in zip(rows, cols))


def _adjacency(spec: GraphSpec, rng: np.random.Generator) -> np.ndarray:
    n = spec.n
    if spec.kind is GraphKind.RING:
        return _adjacency_from_edges(n, [(i, (i + 1) % n) for i in range(n)])
    if spec.kind is GraphKind.STAR:
        # hub is node 0
        return _adjacency_from_edges(n, [(0, i) for i in range(1, n)])
    if spec.kind is GraphKind.COMPLETE:
        return ~np.eye(n, dtype=bool)
    if spec.kind is GraphKind.EDGE_LIST:
        adj = _adjacency_from_edges(n, spec.explicit_edges)
        if not _is_connected(adj):
            raise TopologyError("edge list describes a disconnected graph")
        return adj

    p = spec.resolved_edge_probability
    for _ in range(MAX_CONNECT_RETRIES):
        upper = np.triu(rng.random((n, n)) < p, 1)
        adj = upper | upper.T
        if _is_connected(adj):
            return adj
    raise TopologyError(
        f"G(n={n}, p={p:g}) stayed disconnected after {MAX_CONNECT_RETRIES} retries"
    )


def metropolis_weights(adj: np.ndarray) -> np.ndarray:
    """Metropolis mixing matrix ``a_ij = 1 / (1 + max(d_i, d_j))`` on edges.

    The diagonal absorbs the remainder so rows sum to one.
    """
    adj = np.asarray(adj, dtype=bool)
    deg = adj.sum(axis=1)
    W = np.where(adj, 1.0 / (1.0 + np.maximum.outer(deg, deg)), 0.0)
    np.fill_diagonal(W, 0.0)
    np.fill_diagonal(W, 1.0 - W.sum(axis=1))
    # each off-diagonal entry in row i is <= 1/(1+d_i), so the diagonal cannot go negative
    assert (np.diag(W) >= -1e-15).all()
    return W


def second_singular_value(W) -> float:
    """Second-largest singular value of a square matrix.

    Symmetric inputs go through ``eigvalsh`` (singular values are the absolute
    eigenvalues); anything else falls back to a full SVD.
    """
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise TopologyError(f"expected a square matrix, got shape {W.shape}")
    if W.shape[0] < 2:
        return 0.0
    if np.allclose(W, W.T, rtol=0.0, atol=1e-12):
        s = np.sort(np.abs(np.linalg.eigvalsh(W)))[::-1]
    else:
        s = np.linalg.svd(W, compute_uv=False)
    return float(s[1])


def build_graph(spec: GraphSpec, seed: int = 0) -> MixingGraph:
    rng = np.random.default_rng(seed)
    adj = _adjacency(spec, rng)
    W = metropolis_weights(adj)
    return MixingGraph(
        n=spec.n,
        weights=W,
        degrees=adj.sum(axis=1).astype(int),
        sigma2=second_singular_value(W),
        edges=_edges_from_adjacency(adj),
    )


def consensus_projection(X) -> np.ndarray:
    """Deviation of every row from the row average, ``(I - 11^T/n) X``."""
    X = np.asarray(X, dtype=float)
    return X - X.mean(axis=0, keepdims=True)
