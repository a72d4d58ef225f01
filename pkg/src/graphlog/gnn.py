"""GIN encoder with categorical attribute embeddings and mean readout."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graph import GraphBatch


class AttributeRangeError(ValueError):
    pass


@dataclass
class GinParams:
    """Embedding tables (vocab + 1 rows each, last row = mask) and per-layer MLPs."""

    node_tables: list[Tensor]
    edge_tables: list[Tensor]
    w1: list[Tensor]
    b1: list[Tensor]
    w2: list[Tensor]
    b2: list[Tensor]

    @property
    def num_layers(self) -> int:
        return len(self.w1)

    @property
    def dim(self) -> int:
        return self.w1[0].shape[0]

    @property
    def node_vocab(self) -> tuple[int, ...]:
        return tuple(t.shape[0] - 1 for t in self.node_tables)

    @property
    def edge_vocab(self) -> tuple[int, ...]:
        return tuple(t.shape[0] - 1 for t in self.edge_tables)

    def tensors(self) -> list[Tensor]:
        """All parameters in checkpoint declaration order."""
        out = list(self.node_tables) + list(self.edge_tables)
        for layer in range(self.num_layers):
            out += [self.w1[layer], self.b1[layer], self.w2[layer], self.b2[layer]]
        return out

    def copy(self) -> "GinParams":
        dup = lambda ts: [ad.parameter(t.values.copy(), name=t.name) for t in ts]
        return GinParams(dup(self.node_tables), dup(self.edge_tables), dup(self.w1), dup(self.b1), dup(self.w2), dup(self.b2))


def init_gin(node_vocab, edge_vocab, num_layers: int, dim: int, rng: np.random.Generator,
             embed_std: float = 0.02) -> GinParams:
    if num_layers < 1 or dim < 1:
        raise ValueError("GIN needs at least one layer and positive width")
    dtype = ad.get_default_dtype()
    bound = 1.0 / np.sqrt(dim)

    def table(v, name):
        return ad.parameter(rng.normal(0.0, embed_std, size=(v + 1, dim)).astype(dtype), name=name)

    def affine(shape, name):
        return ad.parameter(rng.uniform(-bound, bound, size=shape).astype(dtype), name=name)

    node_tables = [table(v, f"node_table{i}") for i, v in enumerate(node_vocab)]
    edge_tables = [table(v, f"edge_table{i}") for i, v in enumerate(edge_vocab)]
    w1, b1, w2, b2 = [], [], [], []
    for layer in range(num_layers):
        w1.append(affine((dim, dim), f"w1_{layer}"))
        b1.append(affine((dim,), f"b1_{layer}"))
        w2.append(affine((dim, dim), f"w2_{layer}"))
        b2.append(affine((dim,), f"b2_{layer}"))
    return GinParams(node_tables, edge_tables, w1, b1, w2, b2)


def _check_range(attrs: np.ndarray, tables: list[Tensor], kind: str) -> None:
    for slot, tab in enumerate(tables):
        col = attrs[:, slot]
        bad = np.flatnonzero((col < 0) | (col >= tab.shape[0]))
        if bad.size:
            i = int(bad[0])
            raise AttributeRangeError(f"{kind} {i} slot {slot}: index {int(col[i])} outside table with {tab.shape[0]} rows")


def _embed(attrs: np.ndarray, tables: list[Tensor], rows: int, dim: int) -> Tensor:
    if not tables:
        return Tensor(np.zeros((rows, dim), dtype=ad.get_default_dtype()))
    out = ad.row_gather(tables[0], attrs[:, 0])
    for slot in range(1, len(tables)):
        out = ad.add(out, ad.row_gather(tables[slot], attrs[:, slot]))
    return out


def encode(batch: GraphBatch, params: GinParams) -> tuple[Tensor, Tensor]:
    """Node embeddings (n, d) and mean-pooled graph embeddings (N, d).

    Layer l: h_v <- MLP_l(h_v + sum_{u in N(v)} (h_u + e_uv)), MLP = affine, relu, affine.
    """
    _check_range(batch.node_attrs, params.node_tables, "node")
    _check_range(batch.edge_attrs, params.edge_tables, "edge")
    n, d = batch.num_nodes, params.dim
    h = _embed(batch.node_attrs, params.node_tables, n, d)
    src, dst = batch.edges[:, 0], batch.edges[:, 1]
    has_edges = len(src) > 0
    e = _embed(batch.edge_attrs, params.edge_tables, len(src), d) if has_edges else None
    for layer in range(params.num_layers):
        agg = h
        if has_edges:
            messages = ad.add(ad.row_gather(h, src), e)
            agg = ad.add(h, ad.row_scatter_add(messages, dst, n))
        hidden = ad.relu(ad.add(ad.matmul(agg, params.w1[layer]), params.b1[layer]))
        h = ad.add(ad.matmul(hidden, params.w2[layer]), params.b2[layer])
    graph_emb = ad.segment_mean(h, batch.node_to_graph, batch.num_graphs)
    return h, graph_emb


def embed_graphs(graphs, params: GinParams, chunk: int = 256) -> np.ndarray:
    """Graph embeddings for a whole dataset without recording gradients."""
    from .graph import batch as make_batch

    out = []
    with ad.no_grad():
        for start in range(0, len(graphs), chunk):
            _, hg = encode(make_batch(graphs[start:start + chunk]), params)
            out.append(hg.values)
    return np.concatenate(out, axis=0)
