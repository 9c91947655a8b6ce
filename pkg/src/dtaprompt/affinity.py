"""Bipartite drug-target affinity graph with positive/negative subgraphs.

Node order is all drugs first, then all targets. Only training pairs
become edges; drugs and targets that appear only in the test split are
registered as isolated nodes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .autograd import SparseMatrix, Tensor, matmul, relu, spmm
from .errors import DataError, ModelConfigError


def normalize_adjacency(edges: Iterable[tuple[int, int]], n_nodes: int) -> SparseMatrix:
    """D^-1/2 (A + I) D^-1/2 for a binary symmetric A built from ``edges``."""
    pairs = set()
    for i, j in edges:
        if i == j:
            continue
        pairs.add((i, j))
        pairs.add((j, i))
    for i in range(n_nodes):
        pairs.add((i, i))
    deg = np.zeros(n_nodes)
    for i, _ in pairs:
        deg[i] += 1.0
    rows = np.fromiter((p[0] for p in pairs), dtype=np.int64, count=len(pairs))
    cols = np.fromiter((p[1] for p in pairs), dtype=np.int64, count=len(pairs))
    vals = 1.0 / np.sqrt(deg[rows] * deg[cols])
    return SparseMatrix(n_nodes, n_nodes, rows, cols, vals)


@dataclass
class AffinityGraph:
    drug_ids: list[str]
    target_ids: list[str]
    pos_edges: list[tuple[int, int, float]]
    neg_edges: list[tuple[int, int, float]]
    threshold: float
    adj_pos: SparseMatrix = field(init=False)
    adj_neg: SparseMatrix = field(init=False)
    node_embed: Tensor | None = None

    def __post_init__(self):
        self.drug_index = {d: i for i, d in enumerate(self.drug_ids)}
        self.target_index = {t: i for i, t in enumerate(self.target_ids)}
        nd = len(self.drug_ids)
        self.adj_pos = normalize_adjacency([(d, nd + t) for d, t, _ in self.pos_edges], self.n_nodes)
        self.adj_neg = normalize_adjacency([(d, nd + t) for d, t, _ in self.neg_edges], self.n_nodes)

    @property
    def n_drugs(self) -> int:
        return len(self.drug_ids)

    @property
    def n_nodes(self) -> int:
        return len(self.drug_ids) + len(self.target_ids)

    def drug_node(self, drug_id: str) -> int | None:
        k = self.drug_index.get(drug_id)
        return None if k is None else k

    def target_node(self, target_id: str) -> int | None:
        k = self.target_index.get(target_id)
        return None if k is None else self.n_drugs + k

    def init_embeddings(self, rng: np.random.Generator, dim: int = 128, scale: float = 0.05) -> Tensor:
        self.node_embed = Tensor(rng.uniform(-scale, scale, size=(self.n_nodes, dim)), requires_grad=True)
        return self.node_embed


def build_affinity_graph(
    samples: Iterable[tuple[str, str, float]],
    threshold: float,
    drug_ids: list[str] | None = None,
    target_ids: list[str] | None = None,
) -> AffinityGraph:
    """Edges from training triples: affinity >= threshold is positive, else negative.

    ``drug_ids``/``target_ids`` register the full node set (including
    test-only entities). Non-finite affinities are skipped.
    """
    if not math.isfinite(threshold):
        raise DataError("affinity threshold must be finite")
    samples = list(samples)
    if drug_ids is None:
        drug_ids = list(dict.fromkeys(d for d, _, _ in samples))
    if target_ids is None:
        target_ids = list(dict.fromkeys(t for _, t, _ in samples))
    didx = {d: i for i, d in enumerate(drug_ids)}
    tidx = {t: i for i, t in enumerate(target_ids)}
    seen: dict[tuple[int, int], float] = {}
    for d, t, y in samples:
        y = float(y)
        if not math.isfinite(y):
            continue
        if d not in didx or t not in tidx:
            raise DataError(f"pair ({d}, {t}) references an unregistered id")
        key = (didx[d], tidx[t])
        if key in seen and seen[key] != y:
            raise DataError(f"conflicting affinities for pair ({d}, {t}): {seen[key]} vs {y}")
        seen[key] = y
    pos = [(i, j, w) for (i, j), w in sorted(seen.items()) if w >= threshold]
    neg = [(i, j, w) for (i, j), w in sorted(seen.items()) if w < threshold]
    return AffinityGraph(list(drug_ids), list(target_ids), pos, neg, float(threshold))


def gcn2(adj: SparseMatrix, x: Tensor, w0: Tensor, w1: Tensor) -> Tensor:
    return relu(spmm(adj, matmul(relu(spmm(adj, matmul(x, w0))), w1)))


def encode_affinity(g: AffinityGraph, pos_weights, neg_weights, x: Tensor | None = None) -> tuple[Tensor, Tensor]:
    """Two-layer GCN over each polarity subgraph, sharing node embeddings.

    ``pos_weights``/``neg_weights`` are (W0, W1) pairs.
    """
    x = g.node_embed if x is None else x
    if x is None:
        raise ModelConfigError("affinity graph has no node embeddings")
    for w0, w1 in (pos_weights, neg_weights):
        if w0.shape[0] != x.shape[1] or w1.shape[0] != w0.shape[1]:
            raise ModelConfigError(f"affinity GCN weights {w0.shape}, {w1.shape} do not fit embeddings {x.shape}")
    if x.shape[0] != g.n_nodes:
        raise ModelConfigError(f"embedding table has {x.shape[0]} rows for {g.n_nodes} nodes")
    return gcn2(g.adj_pos, x, *pos_weights), gcn2(g.adj_neg, x, *neg_weights)


def lookup(g: AffinityGraph, h_pos: Tensor, h_neg: Tensor, entity_id: str, kind: str = "drug"):
    """Rows of the encoded graph for one entity; zeros and ``cold=True`` when unregistered."""
    node = g.drug_node(entity_id) if kind == "drug" else g.target_node(entity_id)
    if node is None:
        dim = h_pos.shape[1]
        return np.zeros(dim), np.zeros(dim), True
    return h_pos.data[node].copy(), h_neg.data[node].copy(), False
