"""Attributed graphs, disjoint-union batching and attribute masking."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np


class GraphError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Graph:
    """An undirected graph with categorical node and edge attributes.

    ``edges`` holds every undirected edge in both directions, shape (E, 2),
    and ``edge_attrs`` has one row per directed edge.  Attribute value
    ``vocab[slot]`` is the reserved mask index for that slot.
    """

    num_nodes: int
    edges: np.ndarray
    node_attrs: np.ndarray
    edge_attrs: np.ndarray
    node_vocab: tuple[int, ...]
    edge_vocab: tuple[int, ...]
    label: np.ndarray | None = None
    path: tuple[int, ...] | None = None
    split: str = "train"

    def __post_init__(self):
        object.__setattr__(self, "edges", np.asarray(self.edges, dtype=np.int64).reshape(-1, 2))
        object.__setattr__(self, "node_attrs", np.asarray(self.node_attrs, dtype=np.int64).reshape(self.num_nodes, len(self.node_vocab)))
        object.__setattr__(self, "edge_attrs", np.asarray(self.edge_attrs, dtype=np.int64).reshape(len(self.edges), len(self.edge_vocab)))
        object.__setattr__(self, "node_vocab", tuple(int(v) for v in self.node_vocab))
        object.__setattr__(self, "edge_vocab", tuple(int(v) for v in self.edge_vocab))
        if self.label is not None:
            object.__setattr__(self, "label", np.asarray(self.label, dtype=np.float64).reshape(-1))
        if self.path is not None:
            object.__setattr__(self, "path", tuple(int(p) for p in self.path))
        for arr in (self.edges, self.node_attrs, self.edge_attrs):
            arr.flags.writeable = False

    @classmethod
    def from_undirected(cls, num_nodes: int, pairs, node_attrs, pair_attrs, node_vocab, edge_vocab, **kw) -> "Graph":
        """Build from undirected pairs listed once; both directions are stored."""
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        pair_attrs = np.asarray(pair_attrs, dtype=np.int64).reshape(len(pairs), len(edge_vocab))
        edges = np.concatenate([pairs, pairs[:, ::-1]], axis=0)
        eattr = np.concatenate([pair_attrs, pair_attrs], axis=0)
        return cls(num_nodes, edges, node_attrs, eattr, tuple(node_vocab), tuple(edge_vocab), **kw)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def undirected_edges(self) -> tuple[np.ndarray, np.ndarray]:
        """Each undirected edge once (u < v, or u == v for self loops) with its attributes."""
        keep = self.edges[:, 0] <= self.edges[:, 1]
        return self.edges[keep], self.edge_attrs[keep]

    def validate(self) -> None:
        if self.num_nodes < 1:
            raise GraphError("graph must have at least one node")
        if len(self.edges) and (self.edges.min() < 0 or self.edges.max() >= self.num_nodes):
            raise GraphError("edge endpoint out of range")
        for slot, vocab in enumerate(self.node_vocab):
            col = self.node_attrs[:, slot]
            if len(col) and (col.min() < 0 or col.max() > vocab):
                bad = int(np.flatnonzero((col < 0) | (col > vocab))[0])
                raise GraphError(f"node {bad} slot {slot}: value {int(col[bad])} outside vocabulary of size {vocab}")
        for slot, vocab in enumerate(self.edge_vocab):
            col = self.edge_attrs[:, slot]
            if len(col) and (col.min() < 0 or col.max() > vocab):
                bad = int(np.flatnonzero((col < 0) | (col > vocab))[0])
                raise GraphError(f"edge {bad} slot {slot}: value {int(col[bad])} outside vocabulary of size {vocab}")
        fwd = {(int(u), int(v)): tuple(a) for (u, v), a in zip(self.edges, self.edge_attrs)}
        for (u, v), a in fwd.items():
            if fwd.get((v, u)) != a:
                raise GraphError(f"edge ({u}, {v}) has no symmetric counterpart with equal attributes")

    def same_as(self, other: "Graph") -> bool:
        if self.num_nodes != other.num_nodes or self.node_vocab != other.node_vocab or self.edge_vocab != other.edge_vocab:
            return False
        if not (np.array_equal(self.edges, other.edges) and np.array_equal(self.node_attrs, other.node_attrs)
                and np.array_equal(self.edge_attrs, other.edge_attrs)):
            return False
        if (self.label is None) != (other.label is None):
            return False
        if self.label is not None and not np.array_equal(self.label, other.label, equal_nan=True):
            return False
        return self.path == other.path and self.split == other.split


def mask_attributes(g: Graph, rate: float, mode: str, rng: np.random.Generator) -> Graph:
    """Copy of ``g`` with floor(rate * count) nodes or undirected edges masked.

    Every attribute slot of a chosen entity is set to the slot's mask index.
    In edge mode both directions of a chosen edge are masked together.
    """
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"mask rate must lie in [0, 1], got {rate}")
    if mode == "node":
        count = int(np.floor(rate * g.num_nodes))
        attrs = g.node_attrs.copy()
        if count:
            chosen = rng.choice(g.num_nodes, size=count, replace=False)
            attrs[chosen] = np.asarray(g.node_vocab, dtype=np.int64)
        return replace(g, node_attrs=attrs)
    if mode == "edge":
        und = np.flatnonzero(g.edges[:, 0] <= g.edges[:, 1])
        count = int(np.floor(rate * len(und)))
        attrs = g.edge_attrs.copy()
        if count:
            chosen = g.edges[und[rng.choice(len(und), size=count, replace=False)]]
            key = {(int(u), int(v)) for u, v in chosen}
            key |= {(v, u) for u, v in key}
            hit = np.fromiter(((int(u), int(v)) in key for u, v in g.edges), dtype=bool, count=len(g.edges))
            attrs[hit] = np.asarray(g.edge_vocab, dtype=np.int64)
        return replace(g, edge_attrs=attrs)
    raise ValueError(f"unknown mask mode {mode!r}")


def make_correlated_pair(g: Graph, cfg, rng: np.random.Generator) -> tuple[Graph, Graph]:
    """The graph and its masked counterpart; node indexing is shared."""
    return g, mask_attributes(g, cfg.mask_rate, cfg.mask_mode, rng)


@dataclass(frozen=True, eq=False)
class GraphBatch:
    """Disjoint union of graphs with edges reindexed into one node space."""

    node_attrs: np.ndarray
    edges: np.ndarray
    edge_attrs: np.ndarray
    graph_offsets: np.ndarray
    edge_offsets: np.ndarray
    node_vocab: tuple[int, ...]
    edge_vocab: tuple[int, ...]
    sources: tuple[Graph, ...] = field(repr=False, default=())

    @property
    def num_graphs(self) -> int:
        return len(self.graph_offsets) - 1

    @property
    def num_nodes(self) -> int:
        return int(self.graph_offsets[-1])

    @property
    def node_to_graph(self) -> np.ndarray:
        sizes = np.diff(self.graph_offsets)
        return np.repeat(np.arange(len(sizes)), sizes)


def batch(graphs: Sequence[Graph]) -> GraphBatch:
    if len(graphs) == 0:
        raise GraphError("cannot batch an empty sequence of graphs")
    node_vocab, edge_vocab = graphs[0].node_vocab, graphs[0].edge_vocab
    for g in graphs:
        if g.node_vocab != node_vocab or g.edge_vocab != edge_vocab:
            raise GraphError("graphs in a batch must share attribute vocabularies")
    sizes = np.array([g.num_nodes for g in graphs], dtype=np.int64)
    esizes = np.array([g.num_edges for g in graphs], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    eoffsets = np.concatenate([[0], np.cumsum(esizes)])
    edges = np.concatenate([g.edges + off for g, off in zip(graphs, offsets[:-1])], axis=0)
    return GraphBatch(
        node_attrs=np.concatenate([g.node_attrs for g in graphs], axis=0),
        edges=edges.reshape(-1, 2),
        edge_attrs=np.concatenate([g.edge_attrs for g in graphs], axis=0).reshape(-1, len(edge_vocab)),
        graph_offsets=offsets,
        edge_offsets=eoffsets,
        node_vocab=node_vocab,
        edge_vocab=edge_vocab,
        sources=tuple(graphs),
    )


def unbatch(b: GraphBatch) -> list[Graph]:
    out = []
    for i in range(b.num_graphs):
        n0, n1 = b.graph_offsets[i], b.graph_offsets[i + 1]
        e0, e1 = b.edge_offsets[i], b.edge_offsets[i + 1]
        src = b.sources[i] if i < len(b.sources) else None
        out.append(Graph(
            int(n1 - n0), b.edges[e0:e1] - n0, b.node_attrs[n0:n1], b.edge_attrs[e0:e1],
            b.node_vocab, b.edge_vocab,
            label=None if src is None else src.label,
            path=None if src is None else src.path,
            split="train" if src is None else src.split,
        ))
    return out
