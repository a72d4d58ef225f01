import numpy as np
import pytest

from graphlog import autodiff as ad
from graphlog.autodiff import NumericError, ShapeError, Tensor

from conftest import numeric_grad, rel_error


def P(x):
    return ad.parameter(np.array(x, dtype=np.float64))


def test_matmul_identity():
    out = ad.matmul(Tensor(np.eye(2)), Tensor([[3.0, 4.0], [5.0, 6.0]]))
    np.testing.assert_array_equal(out.values, [[3, 4], [5, 6]])


def test_softmax_uniform_and_positive():
    np.testing.assert_allclose(ad.softmax(Tensor([0.0, 0.0, 0.0])).values, [1 / 3] * 3, atol=1e-15)
    rng = np.random.default_rng(0)
    for _ in range(50):
        s = ad.softmax(Tensor(rng.normal(size=7) * 30)).values
        assert abs(s.sum() - 1) < 1e-12 and (s > 0).all()


def test_mean_rows():
    np.testing.assert_array_equal(ad.mean_rows(Tensor([[1.0, 0.0], [0.0, 1.0]])).values, [0.5, 0.5])


def test_dot_gradient():
    w = P([1.0, 2.0])
    ad.backward(ad.total(ad.multiply(w, w)))
    np.testing.assert_allclose(w.grad, [2.0, 4.0])
    num = numeric_grad(lambda: float((w.values * w.values).sum()), w.values)
    np.testing.assert_allclose(num, [2.0, 4.0], atol=1e-8)


def test_constant_loss_leaves_grads_zero():
    w = P([1.0, 2.0])
    ad.backward(Tensor(5.0))
    assert np.all(w.grad == 0.0)


def test_cosine_gradient_at_aligned_vectors():
    w = P([1.0, 0.0])
    v = Tensor([1.0, 0.0])
    ad.backward(ad.cosine_similarity(w, v))
    assert abs(w.grad @ w.values) <= 1e-12
    assert np.linalg.norm(w.grad) <= 1e-12
    num = numeric_grad(lambda: ad.cosine_similarity(Tensor(w.values), v).item(), w.values)
    assert np.abs(num).max() < 1e-6


@pytest.mark.parametrize("a,b,expected", [
    ([1, 0], [1, 0], 1.0),
    ([1, 0], [0, 1], 0.0),
    ([1, 1], [1, 0], 0.70710678),
])
def test_cosine_values(a, b, expected):
    got = ad.cosine_similarity(Tensor(np.array(a, float)), Tensor(np.array(b, float))).item()
    # scalar oracle
    a, b = np.array(a, float), np.array(b, float)
    assert got == pytest.approx(a @ b / np.sqrt((a @ a) * (b @ b)), abs=1e-15)
    assert got == pytest.approx(expected, abs=1e-8)


def test_cosine_clamps_zero_vectors():
    before = ad.diagnostics["cosine_clamped"]
    out = ad.cosine_similarity(Tensor([0.0, 0.0]), Tensor([1.0, 0.0]))
    assert out.item() == 0.0 and np.isfinite(out.item())
    assert ad.diagnostics["cosine_clamped"] == before + 1


def test_shape_errors_name_operation():
    with pytest.raises(ShapeError, match="matmul"):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(ShapeError, match="add"):
        ad.add(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2))))
    with pytest.raises(ShapeError):
        ad.backward(P([1.0, 2.0]))


def test_strict_mode_rejects_non_finite():
    x = Tensor([1.0, np.nan])
    ad.relu(x)  # lenient by default
    with ad.strict_numerics():
        with pytest.raises(NumericError):
            ad.relu(x)
    assert not ad.is_strict()


def test_no_grad_records_nothing():
    w = P([1.0, 2.0])
    with ad.no_grad():
        y = ad.total(ad.multiply(w, w))
    assert not y.requires_grad
    assert len(ad.current_tape()) == 0


def test_zero_grad_exact():
    w = P(np.ones(3))
    ad.backward(ad.total(ad.scale(w, 3.0)))
    w.zero_grad()
    assert np.all(w.grad == 0.0) and w.grad.shape == w.shape


def test_tape_order_and_retain():
    w = P([0.5, -1.0])
    a = ad.exp(w)
    b = ad.total(a)
    tape = ad.current_tape()
    ops = [n.op for n in tape.nodes]
    assert ops.index("exp") < ops.index("sum")
    ad.backward(b, retain_tape=True)
    assert len(tape) == 2
    first = w.grad.copy()
    ad.backward(b)
    np.testing.assert_allclose(w.grad, 2 * first)
    assert len(tape) == 0


def test_float32_selectable():
    ad.set_default_dtype(np.float32)
    t = Tensor([1.0, 2.0])
    assert t.values.dtype == np.float32
    ad.set_default_dtype(np.float64)


def _random_ops(rng):
    """Scalar-valued compositions exercising each differentiable op."""
    A = P(rng.normal(size=(4, 3)))
    B = P(rng.normal(size=(3, 5)))
    C = P(rng.normal(size=(4, 3)))
    v = P(rng.normal(size=3))
    u = P(rng.normal(size=4))
    idx = rng.integers(0, 4, size=6)
    seg = np.sort(rng.integers(0, 3, size=4))
    seg[0], seg[-1] = 0, 2
    targets = (rng.random((4, 3)) < 0.5).astype(float)
    weights = (rng.random((4, 3)) < 0.8).astype(float)
    cases = {
        "add": (lambda: ad.total(ad.multiply(ad.add(A, C), C)), [A, C]),
        "add_row": (lambda: ad.total(ad.multiply(ad.add(A, v), A)), [A, v]),
        "subtract": (lambda: ad.total(ad.multiply(ad.subtract(A, C), A)), [A, C]),
        "scale_exp": (lambda: ad.total(ad.exp(ad.scale(A, 0.3))), [A]),
        "log": (lambda: ad.total(ad.log(ad.add(ad.multiply(A, A), Tensor(np.ones((4, 3)))))), [A]),
        "relu": (lambda: ad.total(ad.multiply(ad.relu(A), C)), [A, C]),
        "sigmoid": (lambda: ad.total(ad.sigmoid(A)), [A]),
        "matmul": (lambda: ad.total(ad.multiply(ad.matmul(A, B), ad.matmul(C, B))), [A, B, C]),
        "row_gather": (lambda: ad.total(ad.multiply(ad.row_gather(A, idx), ad.row_gather(C, idx))), [A, C]),
        "scatter_add": (lambda: ad.total(ad.exp(ad.row_scatter_add(A, idx[:4], 5))), [A]),
        "segment_mean": (lambda: ad.total(ad.exp(ad.segment_mean(A, seg, 3))), [A]),
        "concat": (lambda: ad.total(ad.exp(ad.concat_rows([A, C]))), [A, C]),
        "sum_mean_rows": (lambda: ad.total(ad.multiply(ad.sum_rows(A), ad.mean_rows(C))), [A, C]),
        "mean": (lambda: ad.mean(ad.multiply(A, A)), [A]),
        "norm": (lambda: ad.total(ad.l2_norm_rows(A)), [A]),
        "dot_rows": (lambda: ad.total(ad.multiply(ad.dot_rows(A, C), u)), [A, C, u]),
        "softmax": (lambda: ad.total(ad.multiply(ad.softmax(u), ad.softmax(u))), [u]),
        "cosine_rows": (lambda: ad.total(ad.multiply(ad.cosine_rows(A, C), u)), [A, C, u]),
        "cosine_vec": (lambda: ad.cosine_similarity(v, ad.take_row(A, 2)), [A, v]),
        "pick": (lambda: ad.total(ad.exp(ad.pick(u, idx))), [u]),
        "bce": (lambda: ad.bce_with_logits(A, targets, weights), [A]),
    }
    return cases


@pytest.mark.parametrize("block", range(4))
def test_gradients_match_finite_differences(block):
    # 25 random trials per block, 100 in total
    for trial in range(25):
        _check_trial(np.random.default_rng(1000 * block + trial))


def _check_trial(rng):
    for name, (build, params) in _random_ops(rng).items():
        loss = build()
        for p in params:
            p.zero_grad()
        ad.backward(loss)
        for p in params:
            def f():
                with ad.no_grad():
                    return build().item()
            num = numeric_grad(f, p.values)
            err = rel_error(p.grad, num)
            assert err < 1e-4, (name, err)


def test_cosine_exact_for_identical_and_bounded():
    rng = np.random.default_rng(5)
    a = rng.normal(size=(500, 7))
    assert np.all(ad.cosine_rows(Tensor(a), Tensor(a)).values == 1.0)
    near = a + 1e-9 * rng.normal(size=a.shape)
    c = ad.cosine_rows(Tensor(a), Tensor(near * 3.0)).values
    assert np.all(np.abs(c) <= 1.0)
