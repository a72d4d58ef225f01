"""Hierarchical prototype forest and its K-means initialization."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class ForestError(ValueError):
    pass


@dataclass
class KMeansResult:
    centers: np.ndarray
    assignment: np.ndarray
    sse_history: list[float] = field(default_factory=list)

    @property
    def sse(self) -> float:
        return self.sse_history[-1]


def _sq_dists(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d = (points * points).sum(1)[:, None] - 2.0 * points @ centers.T + (centers * centers).sum(1)[None, :]
    return np.maximum(d, 0.0)


def _sse(centers, assignment, points) -> float:
    return float(((points - centers[assignment]) ** 2).sum())


def kmeans_plus_plus(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding; stops early once every point coincides with a seed."""
    m = len(points)
    centers = [points[rng.integers(m)]]
    closest = _sq_dists(points, np.asarray(centers))[:, 0]
    while len(centers) < k:
        total = closest.sum()
        if total <= 0.0:
            break
        idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
        idx = min(idx, m - 1)
        centers.append(points[idx])
        closest = np.minimum(closest, _sq_dists(points, points[idx:idx + 1])[:, 0])
    return np.array(centers)


def _lloyd(points, centers, iters, history):
    assignment = _sq_dists(points, centers).argmin(1)
    history.append(_sse(centers, assignment, points))
    for _ in range(iters):
        new = centers.copy()
        for j in range(len(centers)):
            members = assignment == j
            if members.any():
                new[j] = points[members].mean(0)
        new_assignment = _sq_dists(points, new).argmin(1)
        centers = new
        history.append(_sse(centers, new_assignment, points))
        if np.array_equal(new_assignment, assignment):
            assignment = new_assignment
            break
        assignment = new_assignment
    return centers, assignment


def kmeans(points: np.ndarray, k: int, rng: np.random.Generator, iters: int = 100,
           restarts: int = 50, prune: bool = True) -> KMeansResult:
    """Lloyd's algorithm from k-means++ seeds with pruning of thin clusters.

    After Lloyd converges, centers with fewer than two assigned points are
    discarded, their points move to the nearest survivor and Lloyd resumes;
    this repeats until every center holds two or more points.  If no center
    survives, the single-cluster solution is returned.  The lowest-SSE result
    over ``restarts`` seedings is kept.  ``prune=False`` returns plain
    Lloyd output.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or len(points) < 2:
        raise ValueError("kmeans needs at least two points")
    if k < 1:
        raise ValueError("kmeans needs k >= 1")
    best = None
    for _ in range(max(restarts, 1)):
        res = _kmeans_once(points, k, rng, iters, prune)
        if best is None or res.sse < best.sse:
            best = res
    return best


def _kmeans_once(points, k, rng, iters, prune) -> KMeansResult:
    history: list[float] = []
    centers = kmeans_plus_plus(points, min(k, len(points)), rng)
    while True:
        centers, assignment = _lloyd(points, centers, iters, history)
        keep = np.bincount(assignment, minlength=len(centers)) >= 2
        if keep.all() or not prune:
            break
        if not keep.any():
            centers = points.mean(0, keepdims=True)
            assignment = np.zeros(len(points), dtype=np.int64)
            history.append(_sse(centers, assignment, points))
            break
        # orphans go to the nearest survivor, then Lloyd resumes
        centers = centers[keep]
    return KMeansResult(centers, assignment.astype(np.int64), history)


@dataclass
class PrototypeForest:
    """Layered prototype trees; layer 0 is the top (coarsest) layer.

    ``parents[l]`` maps each prototype of layer l to its parent in layer l-1;
    ``parents[0]`` is empty.  Only the vectors train; topology is frozen.
    """

    layers: list[Tensor]
    parents: list[np.ndarray]

    def __post_init__(self):
        self.parents = [np.asarray(p, dtype=np.int64) for p in self.parents]
        self.children = [
            [np.flatnonzero(self.parents[l + 1] == i) for i in range(self.size(l))]
            for l in range(self.depth - 1)
        ]

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def dim(self) -> int:
        return self.layers[0].shape[1]

    def size(self, layer: int) -> int:
        return self.layers[layer].shape[0]

    def sizes(self) -> list[int]:
        return [self.size(l) for l in range(self.depth)]

    def tensors(self) -> list[Tensor]:
        return list(self.layers)

    def check(self) -> None:
        """Raise ForestError unless parent and child links are mutually consistent."""
        if len(self.parents) != self.depth or len(self.parents[0]) != 0:
            raise ForestError("parent arrays do not match layer count")
        for l in range(1, self.depth):
            p = self.parents[l]
            if len(p) != self.size(l):
                raise ForestError(f"layer {l}: parent array length {len(p)} != {self.size(l)}")
            if len(p) and (p.min() < 0 or p.max() >= self.size(l - 1)):
                raise ForestError(f"layer {l}: parent index out of range")
            kids = self.children[l - 1]
            if any(len(c) == 0 for c in kids):
                raise ForestError(f"layer {l - 1}: prototype without children")
            joined = np.sort(np.concatenate(kids))
            if not np.array_equal(joined, np.arange(self.size(l))):
                raise ForestError(f"layer {l}: children lists do not partition the layer")

    def copy(self) -> "PrototypeForest":
        return PrototypeForest([ad.parameter(t.values.copy(), name=t.name) for t in self.layers],
                               [p.copy() for p in self.parents])

    def num_chains(self) -> int:
        return self.size(self.depth - 1)


def init_forest(embeddings: np.ndarray, k_per_layer, rng: np.random.Generator, iters: int = 100) -> PrototypeForest:
    """Bottom layer from K-means on embeddings; each upper layer clusters the layer below.

    ``k_per_layer`` is listed top to bottom.
    """
    k_per_layer = list(k_per_layer)
    if len(k_per_layer) < 1:
        raise ForestError("need at least one prototype layer")
    embeddings = np.asarray(embeddings, dtype=np.float64)
    if len(embeddings) < 2:
        raise ForestError("need at least two graph embeddings to initialize prototypes")
    bottom = kmeans(embeddings, k_per_layer[-1], rng, iters)
    centers = [bottom.centers]
    parents: list[np.ndarray] = []
    for k in reversed(k_per_layer[:-1]):
        below = centers[0]
        if len(below) >= 2:
            res = kmeans(below, k, rng, iters)
            upper, assign = res.centers, res.assignment
        else:
            upper, assign = below.mean(0, keepdims=True), np.zeros(len(below), dtype=np.int64)
        if len(upper) < 1:
            raise ForestError("a prototype layer collapsed to zero centers")
        centers.insert(0, upper)
        parents.insert(0, assign)
    parents.insert(0, np.zeros(0, dtype=np.int64))
    dtype = ad.get_default_dtype()
    layers = [ad.parameter(c.astype(dtype), name=f"prototypes{l}") for l, c in enumerate(centers)]
    forest = PrototypeForest(layers, parents)
    forest.check()
    return forest


def chain_vectors(forest: PrototypeForest, chain) -> list[Tensor]:
    """The prototype rows addressed by a top-down chain of indices."""
    indices = list(chain.indices if hasattr(chain, "indices") else chain)
    if len(indices) != forest.depth:
        raise ForestError(f"chain length {len(indices)} != forest depth {forest.depth}")
    for l in range(1, forest.depth):
        if forest.parents[l][indices[l]] != indices[l - 1]:
            raise ForestError(f"broken chain: prototype {indices[l]} of layer {l} is not a child of {indices[l - 1]}")
    return [ad.take_row(forest.layers[l], indices[l]) for l in range(forest.depth)]


def nearest_prototype(embeddings: np.ndarray, prototypes: np.ndarray) -> np.ndarray:
    """Index of the most cosine-similar prototype for each embedding."""
    e = embeddings / np.maximum(np.linalg.norm(embeddings, axis=1, keepdims=True), ad.EPS_NORM)
    c = prototypes / np.maximum(np.linalg.norm(prototypes, axis=1, keepdims=True), ad.EPS_NORM)
    return (e @ c.T).argmax(1)
