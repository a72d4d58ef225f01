"""Graph dataset files and the planted-hierarchy synthetic generator.

A dataset is a directory holding two files:

``manifest.json``
    ``{"format_version": 1, "node_vocab": [...], "edge_vocab": [...],
    "num_graphs": M, "num_tasks": T or null, "splits": {"train": a, "valid": b, "test": c}}``

``graphs.jsonl``
    one JSON object per line, keys in sorted order, no spaces::

        {"edge_attrs":[[...],...],"edges":[[u,v],...],"label":[...]|null,
         "n":5,"node_attrs":[[...],...],"path":[...]|null,"split":"train"}

    ``edges`` lists every undirected edge once; ``edge_attrs`` is aligned
    with it.  ``label`` entries are 0, 1 or null (missing).  ``path`` is the
    optional ancestor chain of class ids, top level first.

Both files are UTF-8 with ``\\n`` line endings and a trailing newline.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graph import Graph, GraphError

FORMAT_VERSION = 1
GRAPHS_FILE = "graphs.jsonl"
MANIFEST_FILE = "manifest.json"
SPLITS = ("train", "valid", "test")


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetManifest:
    node_vocab: tuple[int, ...]
    edge_vocab: tuple[int, ...]
    num_graphs: int
    num_tasks: int | None = None
    splits: tuple[tuple[str, int], ...] = ()
    format_version: int = FORMAT_VERSION

    def to_json(self) -> str:
        obj = {"format_version": self.format_version, "node_vocab": list(self.node_vocab),
               "edge_vocab": list(self.edge_vocab), "num_graphs": self.num_graphs,
               "num_tasks": self.num_tasks, "splits": dict(self.splits)}
        return json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        try:
            obj = json.loads(text)
            m = cls(tuple(obj["node_vocab"]), tuple(obj["edge_vocab"]), int(obj["num_graphs"]),
                    obj.get("num_tasks"), tuple(sorted(obj.get("splits", {}).items())),
                    int(obj["format_version"]))
        except (ValueError, KeyError, TypeError) as exc:
            raise DataError(f"malformed manifest: {exc}") from exc
        if m.format_version != FORMAT_VERSION:
            raise DataError(f"unsupported format version {m.format_version}")
        return m


def manifest_for(graphs: list[Graph]) -> DatasetManifest:
    if not graphs:
        raise DataError("a dataset needs at least one graph")
    tasks = {None if g.label is None else len(g.label) for g in graphs}
    counts = {s: sum(g.split == s for g in graphs) for s in SPLITS}
    return DatasetManifest(graphs[0].node_vocab, graphs[0].edge_vocab, len(graphs),
                           tasks.pop() if len(tasks) == 1 else None,
                           tuple(sorted((k, v) for k, v in counts.items() if v)))


def graph_to_json(g: Graph) -> str:
    pairs, pattrs = g.undirected_edges()
    label = None if g.label is None else [None if np.isnan(v) else int(v) for v in g.label]
    obj = {"n": g.num_nodes, "edges": pairs.tolist(), "node_attrs": g.node_attrs.tolist(),
           "edge_attrs": pattrs.tolist(), "label": label,
           "path": None if g.path is None else list(g.path), "split": g.split}
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def graph_from_json(line: str, manifest: DatasetManifest, lineno: int) -> Graph:
    try:
        obj = json.loads(line)
        n = int(obj["n"])
        pairs = np.asarray(obj["edges"], dtype=np.int64).reshape(-1, 2)
        pattrs = np.asarray(obj["edge_attrs"], dtype=np.int64).reshape(len(pairs), len(manifest.edge_vocab))
        node_attrs = np.asarray(obj["node_attrs"], dtype=np.int64).reshape(n, len(manifest.node_vocab))
        label = obj.get("label")
        if label is not None:
            label = np.array([np.nan if v is None else float(v) for v in label])
        split = obj.get("split", "train")
        if split not in SPLITS:
            raise ValueError(f"unknown split {split!r}")
        g = Graph.from_undirected(n, pairs, node_attrs, pattrs, manifest.node_vocab, manifest.edge_vocab,
                                  label=label, path=obj.get("path"), split=split)
    except (ValueError, KeyError, TypeError) as exc:
        raise DataError(f"line {lineno}: malformed graph record ({exc})") from exc
    _check_vocab(g, lineno)
    return g


def _check_vocab(g: Graph, lineno: int) -> None:
    # the mask index (== vocab size) never appears in stored data
    for kind, attrs, vocab in (("node", g.node_attrs, g.node_vocab), ("edge", g.edge_attrs, g.edge_vocab)):
        for slot, v in enumerate(vocab):
            col = attrs[:, slot]
            bad = np.flatnonzero((col < 0) | (col >= v))
            if bad.size:
                raise DataError(f"graph on line {lineno}: {kind} slot {slot} value {int(col[bad[0]])} "
                                f"outside vocabulary of size {v}")
    if len(g.edges) and (g.edges.min() < 0 or g.edges.max() >= g.num_nodes):
        raise DataError(f"graph on line {lineno}: edge endpoint out of range")
    if g.num_nodes < 1:
        raise DataError(f"graph on line {lineno}: no nodes")


def _resolve(path) -> tuple[Path, Path]:
    path = Path(path)
    if path.is_dir():
        return path / GRAPHS_FILE, path / MANIFEST_FILE
    return path, path.parent / MANIFEST_FILE


def save_dataset(path, graphs: list[Graph], manifest: DatasetManifest | None = None) -> DatasetManifest:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest = manifest or manifest_for(graphs)
    (path / MANIFEST_FILE).write_text(manifest.to_json(), encoding="utf-8", newline="\n")
    with open(path / GRAPHS_FILE, "w", encoding="utf-8", newline="\n") as fh:
        for g in graphs:
            fh.write(graph_to_json(g) + "\n")
    return manifest


def load_dataset(path) -> tuple[DatasetManifest, list[Graph]]:
    gpath, mpath = _resolve(path)
    if not gpath.is_file() or not mpath.is_file():
        raise DataError(f"dataset not found at {path}")
    manifest = DatasetManifest.from_json(mpath.read_text(encoding="utf-8"))
    graphs = []
    with open(gpath, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                raise DataError(f"line {lineno}: empty line")
            graphs.append(graph_from_json(line, manifest, lineno))
    if not graphs:
        raise DataError(f"{gpath} contains no graphs")
    if len(graphs) != manifest.num_graphs:
        raise DataError(f"manifest declares {manifest.num_graphs} graphs, file has {len(graphs)}")
    if manifest.num_tasks is not None:
        for i, g in enumerate(graphs, start=1):
            if g.label is None or len(g.label) != manifest.num_tasks:
                raise DataError(f"line {i}: label arity does not match {manifest.num_tasks} tasks")
    return manifest, graphs


# ---------------------------------------------------------------- synthetic data


@dataclass(frozen=True)
class SyntheticSpec:
    """Planted class hierarchy; ``branching[0]`` top-level classes, each split ``branching[1]`` ways, ..."""

    branching: tuple[int, ...] = (4, 2)
    graphs_per_leaf: int = 100
    motif_size: tuple[int, int] = (8, 12)
    edge_noise: float = 0.1
    attr_noise: float = 0.1
    palette_size: int = 3
    node_types: int = 16
    node_flags: int = 3
    edge_types: int = 4
    split_fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "branching", tuple(int(b) for b in self.branching))
        if not self.branching or any(b < 1 for b in self.branching):
            raise ValueError("branching factors must be positive")
        if self.motif_size[0] < 2 or self.motif_size[1] < self.motif_size[0]:
            raise ValueError("motif size must be at least 2 with min <= max")
        if not (0 <= self.edge_noise <= 1 and 0 <= self.attr_noise <= 1):
            raise ValueError("noise rates must lie in [0, 1]")
        if self.graphs_per_leaf < 1:
            raise ValueError("graphs_per_leaf must be positive")

    @property
    def levels(self) -> int:
        return len(self.branching)

    @property
    def num_leaves(self) -> int:
        return int(np.prod(self.branching))


def leaf_path(spec: SyntheticSpec, leaf: int) -> tuple[int, ...]:
    """Class ids of every level for a leaf, top first; ids are global per level."""
    path = []
    width = spec.num_leaves
    for b in spec.branching:
        width //= b
        path.append(leaf // width)
    return tuple(path)


def _random_tree_plus(size: int, extra: int, rng: np.random.Generator) -> list[tuple[int, int]]:
    edges = {(int(rng.integers(0, v)), v) for v in range(1, size)}
    tries = 0
    while extra > 0 and tries < 100:
        u, v = sorted(rng.choice(size, size=2, replace=False).tolist())
        tries += 1
        if (u, v) not in edges:
            edges.add((u, v))
            extra -= 1
    return sorted(edges)


def generate_synthetic(spec: SyntheticSpec = SyntheticSpec()) -> list[Graph]:
    """Graphs whose leaf class is a seed motif and whose ancestors share attribute palettes.

    Each top-level class owns ``palette_size`` node types; a leaf motif is a
    random connected graph colored from its top-level palette with a
    leaf-specific frequency profile and leaf-specific edge types.  Every
    sample copies its motif, adds round(edge_noise * |E|) random extra edges,
    resamples each node type with probability ``attr_noise`` from the whole
    vocabulary and permutes node order.  Labels are one-hot over leaves.
    """
    rng = np.random.default_rng(spec.seed)
    n_top = spec.branching[0]
    if spec.palette_size * n_top > spec.node_types:
        raise ValueError("node_types too small for disjoint top-level palettes")
    palettes = rng.permutation(spec.node_types)[: spec.palette_size * n_top].reshape(n_top, spec.palette_size)
    node_vocab = (spec.node_types, spec.node_flags)
    edge_vocab = (spec.edge_types,)
    motifs = []
    for leaf in range(spec.num_leaves):
        top = leaf_path(spec, leaf)[0]
        size = int(rng.integers(spec.motif_size[0], spec.motif_size[1] + 1))
        edges = _random_tree_plus(size, int(rng.integers(0, size // 2 + 1)), rng)
        profile = rng.dirichlet(np.full(spec.palette_size, 0.5))
        types = palettes[top][rng.choice(spec.palette_size, size=size, p=profile)]
        flags = rng.integers(0, spec.node_flags, size=size)
        etypes = rng.integers(0, spec.edge_types, size=len(edges))
        motifs.append((size, edges, np.stack([types, flags], axis=1), etypes))

    graphs = []
    order = []
    for leaf, (size, edges, nattr, etypes) in enumerate(motifs):
        for _ in range(spec.graphs_per_leaf):
            e = list(edges)
            et = list(etypes)
            present = set(edges)
            n_noise = int(round(spec.edge_noise * len(edges)))
            tries = 0
            while n_noise > 0 and tries < 50 and size > 2:
                tries += 1
                u, v = sorted(rng.choice(size, size=2, replace=False).tolist())
                if (u, v) in present:
                    continue
                present.add((u, v))
                e.append((u, v))
                et.append(int(rng.integers(0, spec.edge_types)))
                n_noise -= 1
            attrs = nattr.copy()
            flip = rng.random(size) < spec.attr_noise
            attrs[flip, 0] = rng.integers(0, spec.node_types, size=int(flip.sum()))
            perm = rng.permutation(size)
            inv = np.argsort(perm)
            attrs = attrs[perm]
            pairs = np.sort(inv[np.asarray(e, dtype=np.int64)], axis=1)
            label = np.zeros(spec.num_leaves)
            label[leaf] = 1.0
            graphs.append(Graph.from_undirected(size, pairs, attrs, np.asarray(et).reshape(-1, 1),
                                                node_vocab, edge_vocab, label=label,
                                                path=leaf_path(spec, leaf)))
            order.append(leaf)
    # stratified split per leaf class
    out = []
    fr = np.cumsum(spec.split_fractions)
    for leaf in range(spec.num_leaves):
        members = [g for g, l in zip(graphs, order) if l == leaf]
        cut = np.floor(fr * len(members)).astype(int)
        for i, g in enumerate(members):
            split = "train" if i < cut[0] else ("valid" if i < cut[1] else "test")
            out.append(Graph(g.num_nodes, g.edges, g.node_attrs, g.edge_attrs, g.node_vocab, g.edge_vocab,
                             label=g.label, path=g.path, split=split))
    shuffle = rng.permutation(len(out))
    return [out[i] for i in shuffle]


def leaf_labels(graphs: list[Graph]) -> np.ndarray:
    return np.array([g.path[-1] for g in graphs], dtype=np.int64)


def parent_labels(graphs: list[Graph]) -> np.ndarray:
    return np.array([g.path[0] for g in graphs], dtype=np.int64)
