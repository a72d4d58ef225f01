"""Online EM over the prototype forest: chain sampling, energy and the NCE loss."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .prototypes import ForestError, PrototypeForest


@dataclass(frozen=True)
class LatentChain:
    indices: tuple[int, ...]
    log_prob: float = 0.0


def _unit_rows(x: np.ndarray) -> np.ndarray:
    return x / np.maximum(np.linalg.norm(x, axis=-1, keepdims=True), ad.EPS_NORM)


def _softmax(x: np.ndarray) -> np.ndarray:
    z = np.exp(x - x.max())
    return z / z.sum()


def layer_similarities(h: np.ndarray, forest: PrototypeForest) -> list[np.ndarray]:
    """Cosine similarity of ``h`` to every prototype, per layer."""
    hu = _unit_rows(np.asarray(h, dtype=np.float64))
    return [_unit_rows(t.values.astype(np.float64)) @ hu for t in forest.layers]


def e_step_sample(h: np.ndarray, forest: PrototypeForest, temperature: float,
                  rng: np.random.Generator, sims: list[np.ndarray] | None = None) -> LatentChain:
    """Draw a connected chain top-down.

    The top index follows softmax(s(c, h) / T) over the whole top layer; each
    lower index follows the same softmax restricted to the children of the
    index drawn above.  No gradient flows through sampling.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if sims is None:
        sims = layer_similarities(h, forest)
    candidates = np.arange(forest.size(0))
    indices, log_prob = [], 0.0
    for l in range(forest.depth):
        if l > 0:
            candidates = forest.children[l - 1][indices[-1]]
            if len(candidates) == 0:
                raise ForestError(f"prototype {indices[-1]} of layer {l - 1} has no children")
        p = _softmax(sims[l][candidates] / temperature)
        j = min(int(np.searchsorted(np.cumsum(p), rng.random() * p.sum(), side="right")), len(p) - 1)
        indices.append(int(candidates[j]))
        log_prob += float(np.log(p[j]))
    return LatentChain(tuple(indices), log_prob)


def e_step(h_batch: np.ndarray, forest: PrototypeForest, temperature: float,
           rng: np.random.Generator) -> list[LatentChain]:
    """One chain per row of ``h_batch``."""
    units = [_unit_rows(t.values.astype(np.float64)) for t in forest.layers]
    hb = _unit_rows(np.asarray(h_batch, dtype=np.float64))
    all_sims = [hb @ u.T for u in units]
    return [e_step_sample(None, forest, temperature, rng, [s[n] for s in all_sims]) for n in range(len(hb))]


def energy(h: Tensor, chain_vecs) -> Tensor:
    """f = sum_l s(h, z^l) + sum_l s(z^l, z^{l+1}) for 1-D tensors."""
    chain_vecs = list(chain_vecs)
    if not chain_vecs:
        raise ValueError("energy needs at least one prototype vector")
    out = ad.cosine_similarity(h, chain_vecs[0])
    for z in chain_vecs[1:]:
        out = ad.add(out, ad.cosine_similarity(h, z))
    for a, b in zip(chain_vecs[:-1], chain_vecs[1:]):
        out = ad.add(out, ad.cosine_similarity(a, b))
    return out


def batch_energy(h_batch: Tensor, index_by_layer: list[np.ndarray], forest: PrototypeForest) -> Tensor:
    """Energies (N,) of rows of ``h_batch`` against chains given as per-layer index arrays."""
    vecs = [ad.row_gather(forest.layers[l], idx) for l, idx in enumerate(index_by_layer)]
    out = ad.cosine_rows(h_batch, vecs[0])
    for z in vecs[1:]:
        out = ad.add(out, ad.cosine_rows(h_batch, z))
    for a, b in zip(vecs[:-1], vecs[1:]):
        out = ad.add(out, ad.cosine_rows(a, b))
    return out


def chains_to_layers(chains) -> list[np.ndarray]:
    depth = len(chains[0].indices)
    return [np.array([c.indices[l] for c in chains], dtype=np.int64) for l in range(depth)]


def substitute_negatives(chains, forest: PrototypeForest, rng: np.random.Generator) -> dict[int, list[np.ndarray]]:
    """For every layer with >= 2 prototypes, copies of the chains with that
    layer's index replaced by a uniform different prototype of the layer."""
    pos = chains_to_layers(chains)
    out = {}
    for k in range(forest.depth):
        size = forest.size(k)
        if size < 2:
            continue
        draw = rng.integers(0, size - 1, size=len(chains))
        replaced = draw + (draw >= pos[k])
        layers = [p.copy() for p in pos]
        layers[k] = replaced
        out[k] = layers
    if not out:
        raise ForestError("every prototype layer has a single prototype; no negatives can be built")
    return out


def nce_global_loss(h_batch: Tensor, chains, forest: PrototypeForest, rng: np.random.Generator,
                    reduction: str = "mean") -> Tensor:
    """-(1/N) sum_n [ f(h_n, z_n) - agg_k f(h_n, z_n with layer k substituted) ].

    ``reduction`` picks how the per-layer negatives are combined: "mean"
    averages over usable layers, "sum" adds them.
    """
    if len(chains) != h_batch.shape[0]:
        raise ValueError("one chain per graph embedding is required")
    negatives = substitute_negatives(chains, forest, rng)
    f_pos = batch_energy(h_batch, chains_to_layers(chains), forest)
    neg_terms = [batch_energy(h_batch, layers, forest) for _, layers in sorted(negatives.items())]
    f_neg = neg_terms[0]
    for t in neg_terms[1:]:
        f_neg = ad.add(f_neg, t)
    if reduction == "mean":
        f_neg = ad.scale(f_neg, 1.0 / len(neg_terms))
    elif reduction != "sum":
        raise ValueError(f"unknown reduction {reduction!r}")
    return ad.scale(ad.mean(ad.subtract(f_pos, f_neg)), -1.0)


def monitored_mb_loglik(h_batch: np.ndarray, chains, forest: PrototypeForest) -> float:
    """Unnormalized mini-batch log-likelihood: sum_n f(h_n, z_n), no gradients."""
    with ad.no_grad():
        f = batch_energy(Tensor(np.asarray(h_batch, dtype=ad.get_default_dtype())), chains_to_layers(chains), forest)
    return float(f.values.sum())


@dataclass
class EmDiagnostics:
    nce_loss: list[float] = field(default_factory=list)
    mean_energy: list[float] = field(default_factory=list)
    mb_loglik: list[float] = field(default_factory=list)
    batch_sizes: list[int] = field(default_factory=list)
    usage: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_forest(cls, forest: PrototypeForest) -> "EmDiagnostics":
        return cls(usage=[np.zeros(s, dtype=np.int64) for s in forest.sizes()])

    def record(self, nce: float, chains, loglik: float) -> None:
        n = len(chains)
        self.nce_loss.append(float(nce))
        self.mb_loglik.append(float(loglik))
        self.mean_energy.append(float(loglik) / n)
        self.batch_sizes.append(n)
        for c in chains:
            for l, i in enumerate(c.indices):
                self.usage[l][i] += 1

    @property
    def running_loglik(self) -> float:
        """Running estimate of Q~/N: mean energy of all positives seen so far."""
        if not self.batch_sizes:
            return float("nan")
        return float(np.sum(self.mb_loglik) / np.sum(self.batch_sizes))
