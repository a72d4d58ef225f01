import json

import networkx as nx
import numpy as np
import pytest
from networkx.algorithms.isomorphism import categorical_edge_match, categorical_node_match

from graphlog.data import (DataError, SyntheticSpec, generate_synthetic, leaf_labels, leaf_path, load_dataset,
                           parent_labels, save_dataset)

from conftest import random_graph


def same_graph(a, b):
    assert a.num_nodes == b.num_nodes and a.split == b.split
    np.testing.assert_array_equal(a.edges, b.edges)
    np.testing.assert_array_equal(a.edge_attrs, b.edge_attrs)
    np.testing.assert_array_equal(a.node_attrs, b.node_attrs)
    np.testing.assert_array_equal(a.label, b.label)


def to_nx(g):
    G = nx.Graph()
    for i, row in enumerate(g.node_attrs):
        G.add_node(i, a=tuple(row))
    pairs, attrs = g.undirected_edges()
    for (u, v), row in zip(pairs, attrs):
        G.add_edge(int(u), int(v), a=tuple(row))
    return G


def test_round_trip_100_graphs(tmp_path):
    rng = np.random.default_rng(0)
    graphs = [random_graph(rng, label=rng.integers(0, 2, 3).astype(float), split=["train", "valid", "test"][i % 3])
              for i in range(100)]
    save_dataset(tmp_path, graphs)
    manifest, back = load_dataset(tmp_path)
    assert manifest.num_graphs == 100 and manifest.num_tasks == 3
    assert dict(manifest.splits) == {"train": 34, "valid": 33, "test": 33}
    for a, b in zip(graphs, back):
        same_graph(a, b)


def test_missing_labels_survive(tmp_path):
    rng = np.random.default_rng(1)
    g = random_graph(rng, label=np.array([1.0, np.nan]))
    save_dataset(tmp_path, [g])
    _, (back,) = load_dataset(tmp_path)
    assert back.label[0] == 1.0 and np.isnan(back.label[1])


def test_out_of_vocabulary_names_graph(tmp_path):
    rng = np.random.default_rng(2)
    save_dataset(tmp_path, [random_graph(rng) for _ in range(3)])
    lines = (tmp_path / "graphs.jsonl").read_text().splitlines()
    rec = json.loads(lines[1])
    rec["node_attrs"][0][0] = 5
    lines[1] = json.dumps(rec)
    (tmp_path / "graphs.jsonl").write_text("\n".join(lines) + "\n")
    with pytest.raises(DataError, match=r"line 2: node slot 0 value 5"):
        load_dataset(tmp_path)


def test_malformed_line_reports_number(tmp_path):
    rng = np.random.default_rng(3)
    save_dataset(tmp_path, [random_graph(rng) for _ in range(2)])
    with open(tmp_path / "graphs.jsonl", "a") as fh:
        fh.write("{not json\n")
    with pytest.raises(DataError, match="line 3"):
        load_dataset(tmp_path)


def test_empty_or_missing_file(tmp_path):
    rng = np.random.default_rng(4)
    save_dataset(tmp_path, [random_graph(rng)])
    (tmp_path / "graphs.jsonl").write_text("")
    with pytest.raises(DataError):
        load_dataset(tmp_path)
    with pytest.raises(DataError, match="not found"):
        load_dataset(tmp_path / "nope")


def test_zero_noise_classes_are_isomorphic():
    spec = SyntheticSpec(graphs_per_leaf=5, edge_noise=0.0, attr_noise=0.0, seed=3)
    graphs = generate_synthetic(spec)
    labels = leaf_labels(graphs)
    match = dict(node_match=categorical_node_match("a", None), edge_match=categorical_edge_match("a", None))
    for leaf in range(spec.num_leaves):
        members = [to_nx(g) for g, l in zip(graphs, labels) if l == leaf]
        assert all(nx.is_isomorphic(members[0], m, **match) for m in members[1:])
    # different leaves are different motifs
    firsts = [to_nx(next(g for g, l in zip(graphs, labels) if l == leaf)) for leaf in range(spec.num_leaves)]
    assert not any(nx.is_isomorphic(firsts[0], f, **match) for f in firsts[1:])


def test_default_hierarchy_arithmetic():
    spec = SyntheticSpec(graphs_per_leaf=3)
    graphs = generate_synthetic(spec)
    assert spec.num_leaves == 8 and len(set(leaf_labels(graphs))) == 8 and len(set(parent_labels(graphs))) == 4
    assert len(graphs) == 24


def test_parent_labels_consistent():
    spec = SyntheticSpec(branching=(3, 2, 2), graphs_per_leaf=2, node_types=12)
    for g in generate_synthetic(spec):
        leaf = g.path[-1]
        assert g.path == leaf_path(spec, leaf)
        assert g.path[0] == leaf // 4 and g.path[1] == leaf // 2
        assert int(np.argmax(g.label)) == leaf


def test_siblings_share_palette():
    spec = SyntheticSpec(graphs_per_leaf=4, attr_noise=0.0)
    graphs = generate_synthetic(spec)
    used = {}
    for g in graphs:
        used.setdefault(g.path[0], set()).update(g.node_attrs[:, 0].tolist())
    sets = list(used.values())
    assert all(len(s) <= spec.palette_size for s in sets)
    assert all(not (a & b) for i, a in enumerate(sets) for b in sets[i + 1:])


def test_generator_is_byte_deterministic(tmp_path):
    spec = SyntheticSpec(graphs_per_leaf=10, seed=11)
    save_dataset(tmp_path / "a", generate_synthetic(spec))
    save_dataset(tmp_path / "b", generate_synthetic(spec))
    for name in ("graphs.jsonl", "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    save_dataset(tmp_path / "c", generate_synthetic(SyntheticSpec(graphs_per_leaf=10, seed=12)))
    assert (tmp_path / "a/graphs.jsonl").read_bytes() != (tmp_path / "c/graphs.jsonl").read_bytes()


def test_motif_size_below_two_rejected():
    with pytest.raises(ValueError, match="motif size"):
        SyntheticSpec(motif_size=(1, 4))
