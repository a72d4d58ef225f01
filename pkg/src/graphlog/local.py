"""Local-instance objectives over correlated graph and subgraph pairs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass
class LocalBatchView:
    """Embeddings of a batch and of its masked counterpart, row-aligned."""

    graph: Tensor
    graph_masked: Tensor
    nodes: Tensor
    nodes_masked: Tensor
    graph_offsets: np.ndarray

    @property
    def num_graphs(self) -> int:
        return self.graph.shape[0]


def _other_index(rng: np.random.Generator, n: int, exclude: np.ndarray) -> np.ndarray:
    """For each entry of ``exclude``, a uniform draw from range(n) without it."""
    draw = rng.integers(0, n - 1, size=exclude.shape)
    return draw + (draw >= exclude)


def graph_loss(view: LocalBatchView, rng: np.random.Generator, k_neg: int = 1) -> Tensor:
    """mean_i [ mean_k s(h_{G_j(k)}, h_{G'_i}) - s(h_{G_i}, h_{G'_i}) ] with j(k) != i."""
    n = view.num_graphs
    if n < 2:
        raise ValueError("graph_loss needs at least two graphs in the batch")
    idx = np.arange(n)
    pos = ad.cosine_rows(view.graph, view.graph_masked)
    anchors = np.tile(idx, k_neg)
    others = _other_index(rng, n, anchors)
    neg = ad.cosine_rows(ad.row_gather(view.graph, others), ad.row_gather(view.graph_masked, anchors))
    return ad.subtract(ad.mean(neg), ad.mean(pos))


def sample_node_positives(offsets: np.ndarray, nodes_per_graph: int, rng: np.random.Generator) -> np.ndarray:
    """Up to ``nodes_per_graph`` distinct node indices per graph, in graph order."""
    chosen = []
    for i in range(len(offsets) - 1):
        lo, hi = int(offsets[i]), int(offsets[i + 1])
        size = hi - lo
        take = min(size, nodes_per_graph)
        chosen.append(lo + rng.choice(size, size=take, replace=False))
    return np.concatenate(chosen)


def subgraph_negatives(anchors: np.ndarray, offsets: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """For each anchor node u, another node v != u of the same graph.

    Anchors in single-node graphs draw v from the rest of the batch instead.
    """
    owner = np.searchsorted(offsets, anchors, side="right") - 1
    lo, hi = offsets[owner], offsets[owner + 1]
    size = hi - lo
    total_nodes = int(offsets[-1])
    out = np.empty_like(anchors)
    multi = size >= 2
    if multi.any():
        draw = rng.integers(0, size[multi] - 1)
        local = anchors[multi] - lo[multi]
        out[multi] = lo[multi] + draw + (draw >= local)
    single = ~multi
    if single.any():
        if total_nodes < 2:
            raise ValueError("subgraph_loss needs at least two nodes in the batch")
        out[single] = _other_index(rng, total_nodes, anchors[single])
    return out


def subgraph_loss(view: LocalBatchView, rng: np.random.Generator, k_neg: int = 1,
                  nodes_per_graph: int = 8) -> Tensor:
    """mean_u [ mean_k s(h_{G_v(k)}, h_{G'_u}) - s(h_{G_u}, h_{G'_u}) ], v(k) != u in the same graph."""
    anchors = sample_node_positives(view.graph_offsets, nodes_per_graph, rng)
    pos = ad.cosine_rows(ad.row_gather(view.nodes, anchors), ad.row_gather(view.nodes_masked, anchors))
    rep = np.tile(anchors, k_neg)
    others = subgraph_negatives(rep, view.graph_offsets, rng)
    neg = ad.cosine_rows(ad.row_gather(view.nodes, others), ad.row_gather(view.nodes_masked, rep))
    return ad.subtract(ad.mean(neg), ad.mean(pos))


def local_loss(view: LocalBatchView, rng: np.random.Generator, k_neg: int = 1, nodes_per_graph: int = 8,
               use_graph: bool = True, use_sub: bool = True) -> Tensor:
    """L_graph + L_sub; either term may be switched off for ablations."""
    terms = []
    if use_graph:
        terms.append(graph_loss(view, rng, k_neg))
    if use_sub:
        terms.append(subgraph_loss(view, rng, k_neg, nodes_per_graph))
    if not terms:
        return Tensor(np.zeros((), dtype=ad.get_default_dtype()))
    out = terms[0]
    for t in terms[1:]:
        out = ad.add(out, t)
    return out
