import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from graphlog.metrics import (MetricReport, cluster_metrics, nearest_class_mean_accuracy, pca_project, roc_auc,
                              write_plot_csv)

from oracles import contingency_nmi, pairwise_auc


def test_auc_examples():
    assert roc_auc([0.9, 0.1], [1, 0]) == 1.0
    assert roc_auc([0.3] * 6, [1, 0, 1, 0, 0, 1]) == 0.5
    assert roc_auc([1.0, 2.0], [1, 1]) is None


def test_auc_matches_pairwise_oracle():
    rng = np.random.default_rng(0)
    s = rng.normal(size=200).round(1)  # rounding forces ties
    y = rng.integers(0, 2, size=200)
    assert roc_auc(s, y) == pairwise_auc(s, y)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(-5, 5), min_size=4, max_size=30), st.integers(0, 2**31 - 1))
def test_auc_monotone_invariance(scores, seed):
    y = np.random.default_rng(seed).integers(0, 2, size=len(scores))
    y[0], y[1] = 0, 1
    s = np.array(scores, float)
    assert roc_auc(s, y) == roc_auc(np.exp(s / 3) * 2 - 7, y) == pairwise_auc(s, y)


def test_cluster_metric_examples():
    lab = np.repeat(np.arange(4), 5)
    assert cluster_metrics(lab, lab) == (1.0, 1.0)
    nmi, purity = cluster_metrics(np.zeros(20), lab)
    assert nmi == 0.0 and purity == 0.25


def test_cluster_metrics_match_contingency_oracle():
    rng = np.random.default_rng(1)
    for _ in range(20):
        a, b = rng.integers(0, 4, 20), rng.integers(0, 3, 20)
        nmi, purity = cluster_metrics(a, b)
        want_nmi, want_purity = contingency_nmi(a, b)
        assert nmi == pytest.approx(want_nmi, abs=1e-12) and purity == pytest.approx(want_purity, abs=1e-12)
        assert 0 <= nmi <= 1 and purity >= 1 / 3


def test_pca_on_centered_2d_preserves_distances():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(30, 2)) * [3.0, 1.0]
    x -= x.mean(0)
    c = pca_project(x).coords
    d = lambda z: np.linalg.norm(z[:, None] - z[None], axis=-1)
    assert np.abs(d(c) - d(x)).max() < 1e-9


def test_pca_rank_one():
    rng = np.random.default_rng(3)
    x = np.outer(rng.normal(size=40), rng.normal(size=6)) + 2.0
    p = pca_project(x)
    assert p.coords[:, 1].var() < 1e-10 and p.explained_variance[1] < 1e-10


def test_pca_first_variance_matches_power_iteration():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(50, 5))
    xc = x - x.mean(0)
    cov = xc.T @ xc / 49
    v = np.ones(5)
    for _ in range(5000):
        v = cov @ v
        v /= np.linalg.norm(v)
    p = pca_project(x)
    assert p.explained_variance[0] == pytest.approx(v @ cov @ v, abs=1e-8)
    assert p.components[0, np.argmax(np.abs(p.components[0]))] > 0
    np.testing.assert_array_equal(p.coords, pca_project(x).coords)


def test_nearest_class_mean():
    x = np.array([[0.0], [0.2], [5.0], [5.2]])
    y = np.array([0, 0, 1, 1])
    assert nearest_class_mean_accuracy(x, y, [[0.1], [4.0], [2.4]], [0, 1, 1]) == pytest.approx(2 / 3)


def test_report_round_trip_skips_undefined():
    r = MetricReport([0.8, None, 0.6], nmi=0.5, purity=0.75, config_hash="abc", seed=3)
    assert r.mean_auc == pytest.approx(0.7)
    back = MetricReport.from_text(r.to_text())
    assert back.task_auc == [0.8, None, 0.6] and back.config_hash == "abc" and back.nmi == 0.5


def test_plot_csv(tmp_path):
    x = np.random.default_rng(5).normal(size=(6, 3))
    p = pca_project(x)
    write_plot_csv(tmp_path / "p.csv", p, [0, 0, 1, 1, None, 2], [(1, x[:2])])
    rows = (tmp_path / "p.csv").read_text().splitlines()
    assert rows[0] == "x,y,leaf_label,is_prototype,layer" and len(rows) == 9
    assert rows[-1].endswith(",1,1") and rows[5].split(",")[2:] == ["", "0", ""]
