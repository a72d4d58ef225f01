"""Recovering a planted class hierarchy with prototypes.

Generates a small two-level synthetic set (4 parent classes, 8 leaves),
trains the encoder with the local objectives for one epoch, fits the
prototype forest, then continues with joint EM training.  At each stage it
prints how well the nearest bottom-layer prototype matches the leaf labels,
and finally writes PCA plot data to ``hierarchy_projection.csv``.

Expect the leaf NMI to fall during joint training: the energy pulls each
bottom prototype toward its parent, and on this data that merges siblings
(see "Known behaviour" in the README).

Usage: python3 demos/hierarchy_recovery.py [seed]
"""

import sys

from graphlog.config import TrainConfig
from graphlog.data import SyntheticSpec, generate_synthetic, leaf_labels, parent_labels
from graphlog.gnn import embed_graphs
from graphlog.metrics import cluster_metrics, pca_project, write_plot_csv
from graphlog.prototypes import nearest_prototype
from graphlog.trainer import Pretrainer

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
graphs = generate_synthetic(SyntheticSpec(graphs_per_leaf=40, seed=seed))
leaves, parents = leaf_labels(graphs), parent_labels(graphs)
print(f"{len(graphs)} graphs, {len(set(leaves))} leaf classes under {len(set(parents))} parents")

cfg = TrainConfig(seed=seed, hidden_dim=32, k_per_layer=(4, 8), epochs_joint=6)
tr = Pretrainer(graphs, cfg)


def report(stage):
    emb = embed_graphs(graphs, tr.params)
    bottom = nearest_prototype(emb, tr.forest.layers[-1].values)
    top = nearest_prototype(emb, tr.forest.layers[0].values)
    nmi_leaf, purity = cluster_metrics(bottom, leaves)
    nmi_top, _ = cluster_metrics(top, parents)
    print(f"{stage:<28} leaf NMI {nmi_leaf:.3f}  purity {purity:.3f}  top-layer NMI vs parents {nmi_top:.3f}")
    return emb


tr.run(until=tr.joint_start)
tr.init_prototypes()
print("forest sizes after k-means + pruning:", tr.forest.sizes())
report("after local warm-up")

for epoch in range(cfg.epochs_joint):
    tr.run(until=tr.joint_start + (epoch + 1) * tr.steps_per_epoch)
    emb = report(f"after joint epoch {epoch + 1}")

d = tr.diagnostics
print(f"last NCE loss {d.nce_loss[-1]:.4f}, last monitored batch log-likelihood {d.mb_loglik[-1]:.2f}")
print("bottom-layer usage over training:", d.usage[-1].tolist())

proj = pca_project(emb)
protos = [(l + 1, t.values) for l, t in enumerate(tr.forest.layers)]
write_plot_csv("hierarchy_projection.csv", proj, leaves, protos)
print("plot data written to hierarchy_projection.csv")
