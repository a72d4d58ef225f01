import numpy as np
import pytest

from graphlog.checkpoint import Checkpoint
from graphlog.cli import run
from graphlog.config import TrainConfig
from graphlog.metrics import MetricReport

FAST = ["--set", "hidden_dim=8", "--set", "num_layers=1", "--set", "epochs_joint=1", "--set", "k_per_layer=2,4",
        "--set", "batch_size=32", "--set", "ft_epochs=1"]


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data, run1 = root / "data", root / "run1"
    assert run(["generate", "--spec", "small", "--out", str(data), "--set", "graphs_per_leaf=6"]) == 0
    assert run(["pretrain", "--data", str(data), "--out", str(run1), "--seed", "2"] + FAST) == 0
    return root, data, run1


def test_pretrain_outputs(pipeline):
    _, data, run1 = pipeline
    assert {p.name for p in run1.iterdir()} == {"ckpt", "config.ini", "metrics.csv"}
    assert (data / "config.ini").exists() and (data / "graphs.jsonl").exists()
    cfg = TrainConfig.from_text((run1 / "config.ini").read_text())
    assert cfg.seed == 2 and cfg.k_per_layer == (2, 4)


def test_rerun_with_written_config_is_identical(pipeline, tmp_path):
    _, data, run1 = pipeline
    assert run(["pretrain", "--data", str(data), "--out", str(tmp_path), "--config", str(run1 / "config.ini")]) == 0
    assert (tmp_path / "ckpt").read_bytes() == (run1 / "ckpt").read_bytes()
    assert (tmp_path / "metrics.csv").read_bytes() == (run1 / "metrics.csv").read_bytes()


def test_eval_hash_matches_run(pipeline, tmp_path):
    _, data, run1 = pipeline
    assert run(["eval", "--checkpoint", str(run1 / "ckpt"), "--data", str(data), "--out", str(tmp_path)]) == 0
    report = MetricReport.from_text((tmp_path / "report.txt").read_text())
    assert report.config_hash == TrainConfig.from_text((run1 / "config.ini").read_text()).digest()
    assert report.nmi is not None and 0 <= report.nmi <= 1


def test_downstream_commands(pipeline, tmp_path):
    _, data, run1 = pipeline
    ck = str(run1 / "ckpt")
    assert run(["embed", "--checkpoint", ck, "--data", str(data), "--out", str(tmp_path / "e")]) == 0
    emb = np.load(tmp_path / "e" / "embeddings.npy")
    assert emb.shape == (48, 8)
    assert run(["project", "--checkpoint", ck, "--data", str(data), "--out", str(tmp_path / "p")]) == 0
    rows = (tmp_path / "p" / "projection.csv").read_text().splitlines()
    assert len(rows) == 1 + 48 + 2 + 4
    assert run(["finetune", "--checkpoint", ck, "--data", str(data), "--out", str(tmp_path / "f"),
                "--mode", "probe"]) == 0
    tuned = Checkpoint.load(tmp_path / "f" / "ckpt")
    assert tuned.head[0].shape == (8, 8)
    assert TrainConfig.from_text((tmp_path / "f" / "config.ini").read_text()).ft_mode == "probe"
    assert run(["eval", "--checkpoint", str(tmp_path / "f"), "--data", str(data), "--out", str(tmp_path / "v")]) == 0
    report = MetricReport.from_text((tmp_path / "v" / "report.txt").read_text())
    assert len(report.task_auc) == 8 and report.accuracy is not None


def test_resume_through_cli(pipeline, tmp_path):
    _, data, run1 = pipeline
    # a run that stops after the warm-up epoch, then resumes with the joint epoch
    part = tmp_path / "part"
    assert run(["pretrain", "--data", str(data), "--out", str(part), "--seed", "2"] + FAST
               + ["--set", "epochs_joint=0"]) == 0
    assert run(["pretrain", "--data", str(data), "--out", str(part), "--checkpoint", str(part / "ckpt"),
                "--set", "epochs_joint=1"]) == 1  # configuration may not change on resume
    assert run(["pretrain", "--data", str(data), "--out", str(tmp_path / "r"),
                "--checkpoint", str(run1 / "ckpt")]) == 0
    assert (tmp_path / "r" / "ckpt").read_bytes() == (run1 / "ckpt").read_bytes()


def test_missing_data_exit_2_without_outputs(tmp_path, capsys):
    out = tmp_path / "run"
    assert run(["pretrain", "--data", str(tmp_path / "missing"), "--out", str(out)]) == 2
    assert not out.exists()
    assert list(tmp_path.iterdir()) == []
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and "data error" in err[0]


def test_usage_errors_exit_1(tmp_path):
    assert run(["pretrain", "--data", "x"]) == 1
    assert run(["bogus"]) == 1
    assert run(["generate", "--out", str(tmp_path), "--unknown-flag"]) == 1
    assert run(["generate", "--out", str(tmp_path), "--set", "no_such_key=1"]) == 1
    assert run(["pretrain", "--data", "x", "--out", str(tmp_path), "--set", "mask_rate=2"]) == 1


def test_bad_checkpoint_exit_2(pipeline, tmp_path):
    _, data, _ = pipeline
    (tmp_path / "junk").write_bytes(b"nope")
    assert run(["embed", "--checkpoint", str(tmp_path / "junk"), "--data", str(data), "--out", str(tmp_path / "o")]) == 2


def test_strict_numerics_exit_3(pipeline, tmp_path):
    _, data, run1 = pipeline
    ck = Checkpoint.load(run1 / "ckpt")
    ck.params.w1[0].values[0, 0] = np.inf
    ck.save(tmp_path / "bad")
    args = ["embed", "--checkpoint", str(tmp_path / "bad"), "--data", str(data), "--out", str(tmp_path / "o")]
    assert run(args + ["--strict-numerics"]) == 3


def test_thread_cap_env(pipeline, tmp_path, monkeypatch):
    _, data, run1 = pipeline
    monkeypatch.setenv("GRAPHLOG_THREADS", "1")
    assert run(["embed", "--checkpoint", str(run1 / "ckpt"), "--data", str(data), "--out", str(tmp_path)]) == 0
    monkeypatch.setenv("GRAPHLOG_THREADS", "zero")
    assert run(["embed", "--checkpoint", str(run1 / "ckpt"), "--data", str(data), "--out", str(tmp_path)]) == 1
