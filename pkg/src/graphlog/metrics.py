"""Evaluation metrics and a deterministic 2-D projection for plotting."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata


def roc_auc(scores, labels) -> float | None:
    """P(score_pos > score_neg) + 0.5 P(tie) via average-rank sums.

    Returns None when only one class is present.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(scores, method="average")
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def contingency(assignments, labels) -> np.ndarray:
    _, a = np.unique(np.asarray(assignments), return_inverse=True)
    _, b = np.unique(np.asarray(labels), return_inverse=True)
    table = np.zeros((a.max() + 1, b.max() + 1), dtype=np.int64)
    np.add.at(table, (a, b), 1)
    return table


def cluster_metrics(assignments, labels) -> tuple[float, float]:
    """(NMI with arithmetic-mean normalization, purity)."""
    table = contingency(assignments, labels).astype(np.float64)
    n = table.sum()
    pa = table.sum(1) / n
    pb = table.sum(0) / n
    pab = table / n
    nz = pab > 0
    mi = float((pab[nz] * np.log(pab[nz] / np.outer(pa, pb)[nz])).sum())
    ha = float(-(pa[pa > 0] * np.log(pa[pa > 0])).sum())
    hb = float(-(pb[pb > 0] * np.log(pb[pb > 0])).sum())
    denom = 0.5 * (ha + hb)
    if denom <= 0:
        nmi = 1.0 if ha == hb else 0.0
    else:
        nmi = min(max(mi / denom, 0.0), 1.0)
    purity = float(table.max(1).sum() / n)
    return nmi, purity


@dataclass
class Projection:
    coords: np.ndarray
    components: np.ndarray
    mean: np.ndarray
    explained_variance: np.ndarray

    def transform(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) @ self.components.T


def pca_project(embeddings) -> Projection:
    """Top-2 principal components from the covariance eigendecomposition.

    Each component is sign-flipped so its largest-magnitude entry is positive.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    mu = x.mean(0)
    xc = x - mu
    cov = xc.T @ xc / max(len(x) - 1, 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order]
    k = min(2, x.shape[1])
    comps = vecs[:, :k].T.copy()
    for i in range(k):
        if comps[i, np.argmax(np.abs(comps[i]))] < 0:
            comps[i] = -comps[i]
    if k < 2:
        comps = np.vstack([comps, np.zeros((2 - k, x.shape[1]))])
        vals = np.concatenate([vals, np.zeros(2 - k)])
    return Projection(xc @ comps.T, comps, mu, np.maximum(vals[:2], 0.0))


def nearest_class_mean_accuracy(train_x, train_y, test_x, test_y) -> float:
    """Accuracy of assigning each test point to the closest training class mean."""
    train_x, test_x = np.asarray(train_x, float), np.asarray(test_x, float)
    train_y, test_y = np.asarray(train_y), np.asarray(test_y)
    classes = np.unique(train_y)
    means = np.stack([train_x[train_y == c].mean(0) for c in classes])
    d = ((test_x[:, None, :] - means[None]) ** 2).sum(-1)
    return float((classes[d.argmin(1)] == test_y).mean())


@dataclass
class MetricReport:
    task_auc: list[float | None] = field(default_factory=list)
    nmi: float | None = None
    purity: float | None = None
    accuracy: float | None = None
    config_hash: str = ""
    seed: int = 0

    @property
    def mean_auc(self) -> float | None:
        defined = [a for a in self.task_auc if a is not None]
        return float(np.mean(defined)) if defined else None

    def to_text(self) -> str:
        fmt = lambda v: "undefined" if v is None else f"{v:.6f}"
        lines = [f"config_hash = {self.config_hash}", f"seed = {self.seed}",
                 f"mean_auc = {fmt(self.mean_auc)}"]
        lines += [f"auc_task{i} = {fmt(a)}" for i, a in enumerate(self.task_auc)]
        lines += [f"accuracy = {fmt(self.accuracy)}", f"nmi = {fmt(self.nmi)}", f"purity = {fmt(self.purity)}"]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "MetricReport":
        kv = {}
        for line in text.splitlines():
            if "=" in line:
                k, v = line.split("=", 1)
                kv[k.strip()] = v.strip()
        val = lambda s: None if s in (None, "undefined") else float(s)
        aucs = []
        i = 0
        while f"auc_task{i}" in kv:
            aucs.append(val(kv[f"auc_task{i}"]))
            i += 1
        return cls(aucs, val(kv.get("nmi")), val(kv.get("purity")), val(kv.get("accuracy")),
                   kv.get("config_hash", ""), int(kv.get("seed", 0)))


def write_plot_csv(path, projection: Projection, leaf_labels, prototypes=()) -> None:
    """Rows x, y, leaf_label, is_prototype, layer; prototypes given as (layer, vectors) pairs."""
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "leaf_label", "is_prototype", "layer"])
        for (x, y), lab in zip(projection.coords, leaf_labels):
            w.writerow([f"{x:.10g}", f"{y:.10g}", "" if lab is None else int(lab), 0, ""])
        for layer, vecs in prototypes:
            for x, y in projection.transform(vecs):
                w.writerow([f"{x:.10g}", f"{y:.10g}", "", 1, layer])
