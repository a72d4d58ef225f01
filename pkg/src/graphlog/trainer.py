"""Pre-training loop (local warm-up, prototype init, joint EM) and fine-tuning."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .checkpoint import Checkpoint
from .config import TrainConfig
from .em import EmDiagnostics, e_step, monitored_mb_loglik, nce_global_loss
from .gnn import GinParams, embed_graphs, encode, init_gin
from .graph import Graph, batch, mask_attributes
from .local import LocalBatchView, local_loss
from .metrics import MetricReport, roc_auc
from .optim import Adam, lr_schedule
from .prototypes import PrototypeForest, init_forest

log = logging.getLogger(__name__)

METRIC_FIELDS = ("step", "loss_local", "loss_global", "monitored_mb_loglik", "lr")

# purposes for independent random substreams
_INIT, _EPOCH, _STEP, _FOREST, _HEAD, _FT_EPOCH = range(6)


def substream(seed: int, purpose: int, *ids: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), purpose, *map(int, ids)])


def apply_numerics(cfg: TrainConfig) -> None:
    ad.set_default_dtype(np.float32 if cfg.dtype == "float32" else np.float64)
    ad.set_strict(cfg.strict_numerics)


def epoch_batches(num_graphs: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """ceil(M / N) batches without replacement; a trailing singleton joins the previous batch."""
    perm = rng.permutation(num_graphs)
    chunks = [perm[i:i + batch_size] for i in range(0, num_graphs, batch_size)]
    if len(chunks) > 1 and len(chunks[-1]) == 1:
        last = chunks.pop()
        chunks[-1] = np.concatenate([chunks[-1], last])
    return chunks


class Pretrainer:
    """Step-wise driver for the full pre-training schedule.

    Global step t runs batch ``t mod steps_per_epoch`` of epoch
    ``t // steps_per_epoch``.  All randomness comes from substreams keyed on
    (seed, purpose, epoch or step), so a run resumed from a checkpoint replays
    the same draws as an uninterrupted one.
    """

    def __init__(self, graphs: list[Graph], cfg: TrainConfig, metrics_path=None):
        if len(graphs) < 2:
            raise ValueError("pre-training needs at least two graphs")
        apply_numerics(cfg)
        self.graphs = list(graphs)
        self.cfg = cfg
        g0 = self.graphs[0]
        self.params = init_gin(g0.node_vocab, g0.edge_vocab, cfg.num_layers, cfg.hidden_dim,
                               substream(cfg.seed, _INIT), cfg.embed_std)
        self.forest: PrototypeForest | None = None
        self.opt = Adam(self.params.tensors(), lr=cfg.lr)
        self.step = 0
        self.diagnostics: EmDiagnostics | None = None
        self.metrics_path = Path(metrics_path) if metrics_path else None
        self.local_terms = cfg.use_graph or cfg.use_sub
        self._epoch_cache: tuple[int, list[np.ndarray]] | None = None

    @property
    def steps_per_epoch(self) -> int:
        return len(epoch_batches(len(self.graphs), self.cfg.batch_size, np.random.default_rng(0)))

    @property
    def local_epochs(self) -> int:
        return self.cfg.epochs_local if self.local_terms else 0

    @property
    def total_steps(self) -> int:
        return (self.local_epochs + self.cfg.epochs_joint) * self.steps_per_epoch

    @property
    def joint_start(self) -> int:
        return self.local_epochs * self.steps_per_epoch

    def _batches(self, epoch: int) -> list[np.ndarray]:
        if self._epoch_cache is None or self._epoch_cache[0] != epoch:
            rng = substream(self.cfg.seed, _EPOCH, epoch)
            self._epoch_cache = (epoch, epoch_batches(len(self.graphs), self.cfg.batch_size, rng))
        return self._epoch_cache[1]

    def init_prototypes(self) -> None:
        """Embed the clean dataset and build the forest; the optimizer restarts over theta and C."""
        emb = embed_graphs(self.graphs, self.params)
        self.forest = init_forest(emb, self.cfg.k_per_layer, substream(self.cfg.seed, _FOREST),
                                  self.cfg.kmeans_iters)
        self.diagnostics = EmDiagnostics.for_forest(self.forest)
        self.opt = Adam(self.params.tensors() + self.forest.tensors(), lr=self.cfg.lr)

    def run(self, until: int | None = None) -> "Pretrainer":
        end = self.total_steps if until is None else min(until, self.total_steps)
        while self.step < end:
            self.train_step()
        if self.forest is None and self.step >= self.joint_start and end == self.total_steps:
            self.init_prototypes()
        return self

    def train_step(self) -> dict:
        cfg = self.cfg
        t = self.step
        if t >= self.joint_start and self.forest is None:
            self.init_prototypes()
        joint = t >= self.joint_start
        epoch, pos = divmod(t, self.steps_per_epoch)
        idx = self._batches(epoch)[pos]
        rng = substream(cfg.seed, _STEP, t)
        graphs = [self.graphs[i] for i in idx]
        masked = [mask_attributes(g, cfg.mask_rate, cfg.mask_mode, rng) for g in graphs]
        clean_b, masked_b = batch(graphs), batch(masked)

        self.opt.zero_grad()
        nodes, hg = encode(clean_b, self.params)
        nodes_m, hg_m = encode(masked_b, self.params)
        view = LocalBatchView(hg, hg_m, nodes, nodes_m, clean_b.graph_offsets)
        l_local = local_loss(view, rng, cfg.k_neg, cfg.nodes_per_graph, cfg.use_graph, cfg.use_sub)
        row = {"step": t, "loss_local": l_local.item(), "loss_global": float("nan"),
               "monitored_mb_loglik": float("nan"), "lr": self.opt.lr}

        l_global = None
        if joint and cfg.use_global:
            h_e = hg if cfg.estep_input == "clean" else hg_m
            # E-step with the parameters of the previous cycle
            chains = e_step(h_e.values, self.forest, cfg.temperature, rng)
            l_global = nce_global_loss(h_e, chains, self.forest, rng, cfg.nce_reduction)
            loglik = monitored_mb_loglik(h_e.values, chains, self.forest)
            self.diagnostics.record(l_global.item(), chains, loglik)
            row["loss_global"] = l_global.item()
            row["monitored_mb_loglik"] = loglik

        if l_local.requires_grad:
            ad.backward(l_local, retain_tape=l_global is not None)
        if self.forest is not None:
            for c in self.forest.layers:
                if np.any(c.grad != 0):
                    raise AssertionError("prototype gradient from the local objective must be zero")
        if l_global is not None:
            ad.backward(l_global)
        ad.current_tape().clear()
        self.opt.step()
        self.step += 1
        self._log(row)
        return row

    def _log(self, row: dict) -> None:
        if self.metrics_path is None:
            return
        new = not self.metrics_path.exists()
        with open(self.metrics_path, "a", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            if new:
                w.writerow(METRIC_FIELDS)
            w.writerow([row["step"]] + [repr(float(row[k])) for k in METRIC_FIELDS[1:]])

    # ------------------------------------------------------------ checkpoints

    def checkpoint(self) -> Checkpoint:
        state = {"step": self.step, "num_graphs": len(self.graphs)}
        if self.diagnostics is not None:
            d = self.diagnostics
            state["diagnostics"] = {
                "nce_loss": d.nce_loss, "mean_energy": d.mean_energy, "mb_loglik": d.mb_loglik,
                "batch_sizes": d.batch_sizes, "usage": [u.tolist() for u in d.usage],
            }
        return Checkpoint(self.params, self.cfg.to_text(), self.forest, self.opt.state, None, state)

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint, graphs: list[Graph], metrics_path=None) -> "Pretrainer":
        cfg = TrainConfig.from_text(ckpt.config_text)
        tr = cls(graphs, cfg, metrics_path)
        if ckpt.state.get("num_graphs", len(graphs)) != len(graphs):
            raise ValueError("checkpoint was trained on a dataset of a different size")
        tr.params = ckpt.params
        tr.forest = ckpt.forest
        tr.step = int(ckpt.state.get("step", 0))
        params = tr.params.tensors() + (tr.forest.tensors() if tr.forest is not None else [])
        tr.opt = Adam(params, lr=cfg.lr)
        if ckpt.adam is not None:
            tr.opt.state = ckpt.adam
        if tr.forest is not None:
            tr.diagnostics = EmDiagnostics.for_forest(tr.forest)
            saved = ckpt.state.get("diagnostics")
            if saved:
                d = tr.diagnostics
                d.nce_loss, d.mean_energy, d.mb_loglik = saved["nce_loss"], saved["mean_energy"], saved["mb_loglik"]
                d.batch_sizes = saved["batch_sizes"]
                d.usage = [np.asarray(u, dtype=np.int64) for u in saved["usage"]]
        return tr


def pretrain(graphs: list[Graph], cfg: TrainConfig, metrics_path=None) -> Checkpoint:
    """Local warm-up, prototype initialization, then joint local + global EM training."""
    return Pretrainer(graphs, cfg, metrics_path).run().checkpoint()


# ---------------------------------------------------------------- fine-tuning


@dataclass
class FinetunedModel:
    params: GinParams
    weight: Tensor
    bias: Tensor

    def scores(self, graphs: list[Graph], chunk: int = 256) -> np.ndarray:
        emb = embed_graphs(graphs, self.params, chunk)
        return emb @ self.weight.values + self.bias.values


@dataclass
class FinetuneResult:
    model: FinetunedModel
    report: MetricReport
    losses: list[float] = field(default_factory=list)


def _label_matrix(graphs: list[Graph]) -> np.ndarray:
    if any(g.label is None for g in graphs):
        raise ValueError("every graph needs a label vector for fine-tuning")
    arity = {len(g.label) for g in graphs}
    if len(arity) != 1:
        raise ValueError(f"inconsistent label arity across graphs: {sorted(arity)}")
    return np.stack([g.label for g in graphs])


def split_graphs(graphs: list[Graph]) -> tuple[list[Graph], list[Graph]]:
    """(train, evaluation) partitions; evaluation prefers the test split, then valid."""
    train = [g for g in graphs if g.split == "train"]
    test = [g for g in graphs if g.split == "test"] or [g for g in graphs if g.split == "valid"]
    if not train or not test:
        return list(graphs), list(graphs)
    return train, test


def evaluate(model: FinetunedModel, graphs: list[Graph], cfg: TrainConfig | None = None) -> MetricReport:
    y = _label_matrix(graphs)
    s = model.scores(graphs)
    aucs = []
    for task in range(y.shape[1]):
        known = ~np.isnan(y[:, task])
        auc = roc_auc(s[known, task], y[known, task])
        if auc is None:
            log.warning("task %d has a single class in the evaluation set; AUC undefined", task)
        aucs.append(auc)
    report = MetricReport(task_auc=aucs)
    onehot = np.nan_to_num(y).sum(1) == 1
    if y.shape[1] > 1 and onehot.all():
        report.accuracy = float((s.argmax(1) == y.argmax(1)).mean())
    if cfg is not None:
        report.config_hash, report.seed = cfg.digest(), cfg.seed
    return report


def finetune(source, graphs: list[Graph], cfg: TrainConfig, mode: str | None = None) -> FinetuneResult:
    """Train a linear head (and, in full mode, the encoder) with masked logistic loss.

    ``source`` is a Checkpoint or GinParams.  Trains on the train split and
    reports ROC-AUC on the test split (falling back to all graphs).
    """
    apply_numerics(cfg)
    mode = mode or cfg.ft_mode
    if mode not in ("full", "probe"):
        raise ValueError(f"unknown fine-tune mode {mode!r}")
    params = (source.params if isinstance(source, Checkpoint) else source).copy()
    train, test = split_graphs(graphs)
    y = _label_matrix(train)
    _label_matrix(test)
    weights = (~np.isnan(y)).astype(np.float64)
    targets = np.nan_to_num(y)
    d, T = params.dim, y.shape[1]
    hrng = substream(cfg.seed, _HEAD)
    bound = 1.0 / np.sqrt(d)
    W = ad.parameter(hrng.uniform(-bound, bound, size=(d, T)), name="head_w")
    b = ad.parameter(np.zeros(T), name="head_b")
    trainable = [W, b] + (params.tensors() if mode == "full" else [])
    opt = Adam(trainable, lr=cfg.ft_lr)
    frozen = Tensor(embed_graphs(train, params)) if mode == "probe" else None
    losses = []
    for epoch in range(cfg.ft_epochs):
        if cfg.ft_scheduler:
            opt.lr = lr_schedule(epoch, cfg.ft_lr, "finetune", cfg.ft_gamma, cfg.ft_step_size)
        rng = substream(cfg.seed, _FT_EPOCH, epoch)
        for idx in epoch_batches(len(train), cfg.ft_batch_size, rng):
            opt.zero_grad()
            if frozen is not None:
                h = ad.row_gather(frozen, idx)
            else:
                _, h = encode(batch([train[i] for i in idx]), params)
            logits = ad.add(ad.matmul(h, W), b)
            loss = ad.bce_with_logits(logits, targets[idx], weights[idx])
            ad.backward(loss)
            opt.step()
            losses.append(loss.item())
    model = FinetunedModel(params, W, b)
    report = evaluate(model, test, cfg)
    return FinetuneResult(model, report, losses)
