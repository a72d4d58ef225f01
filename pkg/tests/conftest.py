import numpy as np
import pytest

from graphlog import autodiff as ad
from graphlog.graph import Graph

ACCEPTANCE_LINES: list[str] = []


def report(line: str) -> None:
    """Record a pass/fail line for the acceptance summary."""
    print(line)
    ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(autouse=True)
def _numerics():
    ad.set_default_dtype(np.float64)
    ad.set_strict(False)
    ad.current_tape().clear()
    yield
    ad.set_default_dtype(np.float64)
    ad.set_strict(False)
    ad.current_tape().clear()


def random_graph(rng, n=None, node_vocab=(5, 3), edge_vocab=(4,), p=0.35, **kw) -> Graph:
    n = int(rng.integers(1, 9)) if n is None else n
    pairs = [(u, v) for u in range(n) for v in range(u + 1, n) if rng.random() < p]
    nattr = np.stack([rng.integers(0, v, size=n) for v in node_vocab], axis=1)
    eattr = np.stack([rng.integers(0, v, size=len(pairs)) for v in edge_vocab], axis=1) if pairs else \
        np.zeros((0, len(edge_vocab)), dtype=np.int64)
    return Graph.from_undirected(n, np.asarray(pairs, dtype=np.int64).reshape(-1, 2), nattr, eattr,
                                 node_vocab, edge_vocab, **kw)


def numeric_grad(f, arr: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. every entry of ``arr`` (mutated in place)."""
    out = np.zeros_like(arr, dtype=np.float64)
    flat, g = arr.reshape(-1), out.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + step
        hi = f()
        flat[i] = old - step
        lo = f()
        flat[i] = old
        g[i] = (hi - lo) / (2 * step)
    return out


def rel_error(analytic, numeric, floor: float = 1e-6) -> float:
    """Largest elementwise |a - n| / max(|a|, |n|, floor)."""
    a, n = np.asarray(analytic, float), np.asarray(numeric, float)
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor), initial=0.0))
