"""Independent brute-force reference implementations used by the tests."""

import itertools

import numpy as np


def best_partition_sse(points, k, min_size=1):
    """Minimum within-cluster SSE over all labelings into at most k groups.

    Groups smaller than ``min_size`` (but non-empty) are not allowed.
    """
    return best_partition(points, k, min_size)[0]


def best_partition(points, k, min_size=1):
    """(SSE, labels) of an optimal labeling; see best_partition_sse."""
    points = np.asarray(points, float)
    m = len(points)
    labels = np.array(list(itertools.product(range(k), repeat=m)), dtype=np.int64)
    onehot = labels[:, :, None] == np.arange(k)[None, None, :]          # (P, m, k)
    counts = onehot.sum(1)                                               # (P, k)
    sums = np.einsum("pmk,md->pkd", onehot, points)
    sq = (points ** 2).sum(1)
    within = (onehot * sq[None, :, None]).sum(1)                        # (P, k)
    with np.errstate(invalid="ignore", divide="ignore"):
        sse = within - np.where(counts > 0, (sums ** 2).sum(-1) / np.maximum(counts, 1), 0.0)
    sse = sse.sum(1)
    ok = np.flatnonzero(np.all((counts == 0) | (counts >= min_size), axis=1))
    i = ok[np.argmin(sse[ok])]
    return float(sse[i]), labels[i]


def pairwise_auc(scores, labels):
    """P(score_pos > score_neg) + 0.5 P(tie), counted over every pair."""
    scores, labels = np.asarray(scores, float), np.asarray(labels, bool)
    pos, neg = scores[labels], scores[~labels]
    gt = (pos[:, None] > neg[None, :]).sum()
    eq = (pos[:, None] == neg[None, :]).sum()
    return (gt + 0.5 * eq) / (len(pos) * len(neg))


def cosine(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(a @ b / (np.sqrt(a @ a) * np.sqrt(b @ b)))


def energy_scalar(h, vecs):
    f = sum(cosine(h, z) for z in vecs)
    f += sum(cosine(a, b) for a, b in zip(vecs[:-1], vecs[1:]))
    return f


def enumerate_chains(forest_layers, parents, h, temperature):
    """Every root-to-leaf chain with its exact top-down sampling probability."""
    sims = [[cosine(h, c) for c in layer] for layer in forest_layers]

    def softmax(xs):
        z = np.exp(np.asarray(xs) / temperature - np.max(xs) / temperature)
        return z / z.sum()

    out = {}
    top = softmax(sims[0])

    def walk(layer, chain, prob):
        if layer == len(forest_layers):
            out[tuple(chain)] = prob
            return
        kids = [i for i, p in enumerate(parents[layer]) if p == chain[-1]]
        p = softmax([sims[layer][i] for i in kids])
        for i, q in zip(kids, p):
            walk(layer + 1, chain + [i], prob * q)

    for i, q in enumerate(top):
        walk(1, [i], q)
    return out


def contingency_nmi(a, b):
    """NMI (arithmetic normalization) and purity straight from counts."""
    a, b = list(a), list(b)
    n = len(a)
    ca, cb = sorted(set(a)), sorted(set(b))
    table = [[sum(1 for x, y in zip(a, b) if x == i and y == j) for j in cb] for i in ca]
    mi = 0.0
    for i, row in enumerate(table):
        for j, nij in enumerate(row):
            if nij:
                pi = sum(row) / n
                pj = sum(table[r][j] for r in range(len(ca))) / n
                mi += nij / n * np.log(nij / n / (pi * pj))
    ha = -sum((sum(r) / n) * np.log(sum(r) / n) for r in table)
    hb = -sum((c / n) * np.log(c / n) for c in (sum(table[r][j] for r in range(len(ca))) for j in range(len(cb))))
    nmi = mi / ((ha + hb) / 2) if ha + hb > 0 else 1.0
    purity = sum(max(r) for r in table) / n
    return nmi, purity
