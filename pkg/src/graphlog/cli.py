"""Batch command-line interface.

Commands::

    generate  --out DIR [--spec default|small] [--seed S]
    pretrain  --data DIR --out DIR [--checkpoint CKPT]   (resume)
    finetune  --data DIR --out DIR --checkpoint CKPT [--mode full|probe]
    embed     --data DIR --out DIR --checkpoint CKPT
    project   --data DIR --out DIR --checkpoint CKPT
    eval      --data DIR --out DIR --checkpoint CKPT

Shared flags: ``--config FILE``, ``--seed``, ``--strict-numerics`` and
repeatable ``--set key=value`` overrides (applied after the config file).
Exit codes: 0 ok, 1 usage, 2 data, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import os
import shutil
import sys
import tempfile
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from .autodiff import NumericError, Tensor
from .checkpoint import Checkpoint, CheckpointError
from .config import ConfigError, TrainConfig
from .data import DataError, SyntheticSpec, generate_synthetic, leaf_labels, load_dataset, save_dataset
from .gnn import AttributeRangeError, embed_graphs
from .graph import GraphError
from .metrics import MetricReport, cluster_metrics, pca_project, write_plot_csv
from .prototypes import nearest_prototype
from .trainer import FinetunedModel, Pretrainer, apply_numerics, evaluate, finetune, split_graphs

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
CONFIG_FILE = "config.ini"
CKPT_FILE = "ckpt"

SYNTHETIC_PRESETS = {
    "default": SyntheticSpec(),
    "small": SyntheticSpec(graphs_per_leaf=12),
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="graphlog", description="Self-supervised graph embeddings with hierarchical prototypes.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, data=True, ckpt=False):
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--config", help="INI config file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--strict-numerics", action="store_true")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
        if data:
            sp.add_argument("--data", required=True, help="dataset directory")
        if ckpt:
            sp.add_argument("--checkpoint", required=True)

    g = sub.add_parser("generate", help="write the planted-hierarchy synthetic dataset")
    common(g, data=False)
    g.add_argument("--spec", default="default", choices=sorted(SYNTHETIC_PRESETS))

    pt = sub.add_parser("pretrain", help="self-supervised pre-training")
    common(pt)
    pt.add_argument("--checkpoint", help="resume from this checkpoint")

    ft = sub.add_parser("finetune", help="train a linear head on graph labels")
    common(ft, ckpt=True)
    ft.add_argument("--mode", choices=("full", "probe"))

    for name, text in (("embed", "write graph embeddings"), ("project", "write 2-D plot data"),
                       ("eval", "write a metric report")):
        common(sub.add_parser(name, help=text), ckpt=True)
    return p


def _overrides(pairs) -> dict[str, str]:
    out = {}
    for item in pairs:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def resolve_config(args, base: TrainConfig | None = None) -> TrainConfig:
    cfg = base or TrainConfig()
    if args.config:
        try:
            text = Path(args.config).read_text(encoding="utf-8")
        except OSError as exc:
            raise UsageError(f"cannot read config {args.config}: {exc.strerror}") from exc
        cfg = TrainConfig.from_text(text, base=cfg)
    cfg = cfg.with_overrides(_overrides(args.set))
    if args.seed is not None:
        cfg = cfg.with_(seed=args.seed)
    if args.strict_numerics:
        cfg = cfg.with_(strict_numerics=True)
    if getattr(args, "mode", None):
        cfg = cfg.with_(ft_mode=args.mode)
    return cfg


def _ckpt_path(path) -> Path:
    path = Path(path)
    return path / CKPT_FILE if path.is_dir() else path


def _load_ckpt(path) -> Checkpoint:
    return Checkpoint.load(_ckpt_path(path))


def _publish(tmp: Path, out: Path) -> None:
    """Move finished outputs from the staging dir into ``out``."""
    out.mkdir(parents=True, exist_ok=True)
    for f in tmp.iterdir():
        os.replace(f, out / f.name)


def _staging(out: Path):
    out.parent.mkdir(parents=True, exist_ok=True)
    return tempfile.TemporaryDirectory(prefix=".graphlog-", dir=out.parent)


def cmd_generate(args) -> None:
    spec = SYNTHETIC_PRESETS[args.spec]
    if args.config:
        parser = configparser.ConfigParser()
        parser.read_string(Path(args.config).read_text(encoding="utf-8"))
        if parser.has_section("synthetic"):
            spec = _spec_with(spec, dict(parser["synthetic"]))
    spec = _spec_with(spec, _overrides(args.set))
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    graphs = generate_synthetic(spec)
    out = Path(args.out)
    save_dataset(out, graphs)
    parser = configparser.ConfigParser()
    parser["synthetic"] = {k: ",".join(map(str, v)) if isinstance(v, tuple) else str(v)
                           for k, v in dataclasses.asdict(spec).items()}
    with open(out / CONFIG_FILE, "w") as fh:
        parser.write(fh)


def _spec_with(spec: SyntheticSpec, raw: dict[str, str]) -> SyntheticSpec:
    kinds = {f.name: f.type for f in dataclasses.fields(spec)}
    changes = {}
    for k, v in raw.items():
        if k not in kinds:
            raise ConfigError(f"unknown synthetic key {k!r}")
        t = str(kinds[k])
        try:
            if t.startswith("tuple"):
                conv = float if "float" in t else int
                changes[k] = tuple(conv(x) for x in v.split(","))
            else:
                changes[k] = float(v) if t == "float" else int(v)
        except ValueError as exc:
            raise ConfigError(f"bad value for {k}: {v!r}") from exc
    try:
        return dataclasses.replace(spec, **changes)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def cmd_pretrain(args) -> None:
    out = Path(args.out)
    if args.checkpoint:
        ckpt = _load_ckpt(args.checkpoint)
        base = TrainConfig.from_text(ckpt.config_text)
        cfg = resolve_config(args, base)
        if cfg != base:
            raise UsageError("a resumed run cannot change its configuration")
    else:
        cfg = resolve_config(args)
    _, graphs = load_dataset(args.data)
    with _staging(out) as tmp:
        tmp = Path(tmp)
        metrics = tmp / "metrics.csv"
        if args.checkpoint and (out / "metrics.csv").exists():
            shutil.copyfile(out / "metrics.csv", metrics)
        if args.checkpoint:
            tr = Pretrainer.from_checkpoint(ckpt, graphs, metrics)
        else:
            tr = Pretrainer(graphs, cfg, metrics)
        tr.run()
        tr.checkpoint().save(tmp / CKPT_FILE)
        (tmp / CONFIG_FILE).write_text(cfg.to_text())
        _publish(tmp, out)


def _model_from(ckpt: Checkpoint) -> FinetunedModel | None:
    if ckpt.head is None:
        return None
    return FinetunedModel(ckpt.params, Tensor(ckpt.head[0]), Tensor(ckpt.head[1]))


def cmd_finetune(args) -> None:
    _, graphs = load_dataset(args.data)
    ckpt = _load_ckpt(args.checkpoint)
    cfg = resolve_config(args, TrainConfig.from_text(ckpt.config_text))
    result = finetune(ckpt, graphs, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    m = result.model
    tuned = Checkpoint(m.params, cfg.to_text(), ckpt.forest, None, (m.weight.values, m.bias.values),
                       {"finetune_losses": result.losses[-1:]})
    tuned.save(out / CKPT_FILE)
    (out / CONFIG_FILE).write_text(cfg.to_text())
    (out / "report.txt").write_text(result.report.to_text())


def _prepare(args):
    _, graphs = load_dataset(args.data)
    ckpt = _load_ckpt(args.checkpoint)
    cfg = resolve_config(args, TrainConfig.from_text(ckpt.config_text))
    apply_numerics(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / CONFIG_FILE).write_text(cfg.to_text())
    return graphs, ckpt, cfg, out


def cmd_embed(args) -> None:
    graphs, ckpt, _, out = _prepare(args)
    np.save(out / "embeddings.npy", embed_graphs(graphs, ckpt.params))


def _labels_or_none(graphs):
    if all(g.path for g in graphs):
        return leaf_labels(graphs)
    return None


def cmd_project(args) -> None:
    graphs, ckpt, _, out = _prepare(args)
    emb = embed_graphs(graphs, ckpt.params)
    proj = pca_project(emb)
    labels = _labels_or_none(graphs)
    labels = [None] * len(graphs) if labels is None else labels
    protos = [] if ckpt.forest is None else [(l + 1, t.values) for l, t in enumerate(ckpt.forest.layers)]
    write_plot_csv(out / "projection.csv", proj, labels, protos)


def cmd_eval(args) -> None:
    graphs, ckpt, _, out = _prepare(args)
    # the hash identifies the checkpoint's own training config, not eval-time overrides
    trained = TrainConfig.from_text(ckpt.config_text)
    model = _model_from(ckpt)
    if model is not None:
        report = evaluate(model, split_graphs(graphs)[1], trained)
    else:
        report = MetricReport(config_hash=trained.digest(), seed=trained.seed)
    labels = _labels_or_none(graphs)
    if ckpt.forest is not None and labels is not None:
        assign = nearest_prototype(embed_graphs(graphs, ckpt.params), ckpt.forest.layers[-1].values)
        report.nmi, report.purity = cluster_metrics(assign, labels)
    (out / "report.txt").write_text(report.to_text())


COMMANDS = {"generate": cmd_generate, "pretrain": cmd_pretrain, "finetune": cmd_finetune,
            "embed": cmd_embed, "project": cmd_project, "eval": cmd_eval}


def _thread_limit():
    raw = os.environ.get("GRAPHLOG_THREADS")
    if not raw:
        return nullcontext()
    try:
        n = int(raw)
    except ValueError as exc:
        raise UsageError(f"GRAPHLOG_THREADS must be an integer, got {raw!r}") from exc
    if n < 1:
        raise UsageError("GRAPHLOG_THREADS must be positive")
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        with _thread_limit():
            COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"graphlog: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, GraphError, AttributeRangeError, CheckpointError) as exc:
        print(f"graphlog: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as exc:
        print(f"graphlog: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"graphlog: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def main() -> None:
    sys.exit(run())
