"""Autodiff engine tests: hand-computed oracles plus finite-difference checks."""

import math

import numpy as np
import pytest

import kdlab.autodiff as ad
from kdlab.autodiff import Tensor, backward, grad_check


def tensor(data, grad=True):
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=grad)


class TestMatmul:
    def test_identity(self):
        x = tensor([[1.0, 2.0], [3.0, 4.0]])
        eye = tensor(np.eye(2), grad=False)
        out = ad.matmul(eye, x)
        np.testing.assert_array_equal(out.data, x.data)

    def test_hand_product(self):
        # [[1,2],[3,4]] @ [[1],[1]] = [[3],[7]]
        a = tensor([[1.0, 2.0], [3.0, 4.0]])
        b = tensor([[1.0], [1.0]])
        np.testing.assert_array_equal(ad.matmul(a, b).data, [[3.0], [7.0]])

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            ad.matmul(tensor([[1.0, 2.0]]), tensor([[1.0, 2.0]]))

    def test_grad_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        a = tensor(rng.normal(size=(3, 4)))
        b = tensor(rng.normal(size=(4, 2)))
        assert grad_check(lambda t: ad.sum_all(ad.matmul(t, b)), a) < 1e-4
        assert grad_check(lambda t: ad.sum_all(ad.matmul(a, t)), b) < 1e-4

    def test_batched_grad(self):
        rng = np.random.default_rng(8)
        a = tensor(rng.normal(size=(2, 3, 4)))
        b = tensor(rng.normal(size=(2, 4, 3)))
        assert grad_check(lambda t: ad.mean_all(ad.matmul(t, b)), a) < 1e-4

    def test_vector_matrix(self):
        v = tensor([1.0, 2.0, 3.0])
        w = tensor([[1.0], [1.0], [1.0]])
        out = ad.matmul(v, w)
        assert out.shape == (1,)
        assert out.data[0] == 6.0
        assert grad_check(lambda t: ad.sum_all(ad.matmul(t, w)), v) < 1e-6


class TestSoftmax:
    def test_uniform(self):
        out = ad.softmax(tensor([0.0, 0.0, 0.0]))
        np.testing.assert_allclose(out.data, [1 / 3] * 3, atol=1e-15)

    def test_hand_value(self):
        # softmax([0, ln 3]) = [1/4, 3/4]
        out = ad.softmax(tensor([0.0, math.log(3.0)]))
        np.testing.assert_allclose(out.data, [0.25, 0.75], atol=1e-12)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            x = tensor(rng.normal(scale=10.0, size=(4, 6)))
            out = ad.softmax(x)
            assert np.all(out.data >= 0.0)
            np.testing.assert_allclose(out.data.sum(axis=-1), 1.0, atol=1e-12)

    def test_grad(self):
        rng = np.random.default_rng(2)
        x = tensor(rng.normal(size=(3, 4)))
        w = tensor(rng.normal(size=(3, 4)), grad=False)
        assert grad_check(lambda t: ad.sum_all(ad.mul(ad.softmax(t), w)), x) < 1e-4


class TestLayerNorm:
    def test_constant_row_is_zero(self):
        x = tensor([[5.0, 5.0, 5.0, 5.0]])
        gamma = tensor(np.ones(4))
        beta = tensor(np.zeros(4))
        out = ad.layer_norm(x, gamma, beta)
        np.testing.assert_array_equal(out.data, np.zeros((1, 4)))

    def test_two_point_row(self):
        # [1, 3]: mean 2, population var 1 -> normalized [-1, 1] (up to eps)
        out = ad.layer_norm(tensor([[1.0, 3.0]]), tensor(np.ones(2)), tensor(np.zeros(2)), eps=0.0)
        np.testing.assert_allclose(out.data, [[-1.0, 1.0]], atol=1e-12)

    def test_grad(self):
        rng = np.random.default_rng(3)
        x = tensor(rng.normal(size=(3, 5)))
        gamma = tensor(rng.normal(size=5))
        beta = tensor(rng.normal(size=5))
        w = tensor(rng.normal(size=(3, 5)), grad=False)

        def f(t):
            return ad.sum_all(ad.mul(ad.layer_norm(x, gamma, beta), w))

        assert grad_check(lambda t: ad.sum_all(ad.mul(ad.layer_norm(t, gamma, beta), w)), x) < 1e-4
        assert grad_check(f, gamma) < 1e-4
        assert grad_check(f, beta) < 1e-4


class TestGelu:
    def test_zero(self):
        assert ad.gelu(tensor([0.0])).data[0] == 0.0

    def test_saturation(self):
        out = ad.gelu(tensor([-10.0, 10.0]))
        assert abs(out.data[0]) < 1e-6
        assert abs(out.data[1] - 10.0) < 1e-6

    def test_grad(self):
        rng = np.random.default_rng(4)
        x = tensor(rng.normal(size=(2, 7)))
        assert grad_check(lambda t: ad.sum_all(ad.gelu(t)), x) < 1e-4


class TestMse:
    def test_identical_is_zero(self):
        x = tensor([[1.0, 2.0], [3.0, 4.0]])
        assert ad.mse(x, x.detach()).item() == 0.0

    def test_hand_value(self):
        assert ad.mse(tensor([0.0, 2.0]), tensor([0.0, 0.0])).item() == 2.0

    def test_symmetric(self):
        rng = np.random.default_rng(5)
        a = tensor(rng.normal(size=(3, 3)))
        b = tensor(rng.normal(size=(3, 3)))
        assert ad.mse(a, b).item() == ad.mse(b, a).item()

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            ad.mse(tensor([1.0, 2.0]), tensor([[1.0, 2.0]]))

    def test_grad_both_sides(self):
        rng = np.random.default_rng(6)
        a = tensor(rng.normal(size=(2, 3)))
        b = tensor(rng.normal(size=(2, 3)))
        assert grad_check(lambda t: ad.mse(t, b), a) < 1e-6
        assert grad_check(lambda t: ad.mse(a, t), b) < 1e-6


class TestCrossEntropy:
    def test_uniform_logits(self):
        out = ad.cross_entropy(tensor([[0.0, 0.0, 0.0]]), [1])
        assert abs(out.item() - math.log(3.0)) < 1e-12

    def test_saturated_logit(self):
        out = ad.cross_entropy(tensor([[1000.0, 0.0, 0.0]]), [0])
        assert out.item() < 1e-12

    def test_out_of_range_target(self):
        with pytest.raises(ValueError):
            ad.cross_entropy(tensor([[0.0, 1.0]]), [2])

    def test_grad_rows_sum_to_zero(self):
        rng = np.random.default_rng(7)
        x = tensor(rng.normal(size=(4, 5)))
        loss = ad.cross_entropy(x, [0, 1, 2, 3])
        backward(loss)
        np.testing.assert_allclose(x.grad.sum(axis=-1), 0.0, atol=1e-12)

    def test_grad(self):
        rng = np.random.default_rng(8)
        x = tensor(rng.normal(size=(3, 4)))
        assert grad_check(lambda t: ad.cross_entropy(t, [1, 0, 3]), x) < 1e-6

    def test_1d_logits(self):
        out = ad.cross_entropy(tensor([0.0, 0.0]), [0])
        assert abs(out.item() - math.log(2.0)) < 1e-12


class TestBackward:
    def test_sum_gives_ones(self):
        x = tensor([[1.0, 2.0], [3.0, 4.0]])
        backward(ad.sum_all(x))
        np.testing.assert_array_equal(x.grad, np.ones((2, 2)))

    def test_mse_against_zero(self):
        # d/dx mean((x-0)^2) = 2x for a single element
        x = tensor([3.0])
        backward(ad.mse(x, tensor([0.0], grad=False)))
        np.testing.assert_allclose(x.grad, [6.0])

    def test_accumulation_doubles(self):
        x = tensor([1.0, 2.0, 3.0])
        loss = ad.sum_all(x)
        backward(loss)
        first = x.grad.copy()
        backward(loss)
        np.testing.assert_array_equal(x.grad, 2.0 * first)

    def test_non_scalar_rejected(self):
        with pytest.raises(ValueError):
            backward(tensor([1.0, 2.0]))

    def test_zero_grad(self):
        x = tensor([1.0])
        backward(ad.sum_all(x))
        x.zero_grad()
        assert x.grad is None

    def test_shared_subexpression_counted_once(self):
        # loss = sum(y) + sum(y) with y = 2x: dloss/dx = 4
        x = tensor([1.0])
        y = ad.scale(x, 2.0)
        backward(ad.add(ad.sum_all(y), ad.sum_all(y)))
        np.testing.assert_allclose(x.grad, [4.0])

    def test_frozen_inputs_get_no_grad(self):
        x = tensor([1.0, 2.0], grad=False)
        y = tensor([3.0, 4.0])
        backward(ad.sum_all(ad.mul(x, y)))
        assert x.grad is None
        np.testing.assert_array_equal(y.grad, x.data)

    def test_deterministic_gradients(self):
        def build(seed):
            rng = np.random.default_rng(seed)
            x = tensor(rng.normal(size=(4, 4)))
            w = tensor(rng.normal(size=(4, 4)))
            loss = ad.mse(ad.gelu(ad.matmul(ad.softmax(x), w)), tensor(np.zeros((4, 4)), grad=False))
            backward(loss)
            return x.grad.copy(), w.grad.copy()

        gx1, gw1 = build(11)
        gx2, gw2 = build(11)
        assert np.array_equal(gx1, gx2) and np.array_equal(gw1, gw2)


class TestGradCheck:
    def test_square(self):
        x = tensor([2.0])
        assert grad_check(lambda t: ad.mse(t, tensor([0.0], grad=False)), x) < 1e-6

    def test_linear_nearly_exact(self):
        x = tensor([1.0, -2.0, 3.0])
        assert grad_check(lambda t: ad.sum_all(ad.scale(t, 3.0)), x) < 1e-9


def _aux(rng, shape):
    return Tensor(rng.normal(size=shape))


# Each entry builds a pure scalar closure for one primitive; the auxiliary
# tensors are frozen per trial so finite differences see a fixed function.
OPS = {
    "add": lambda shape, rng: (lambda t, a=_aux(rng, shape): ad.sum_all(ad.add(t, a))),
    "bias-add": lambda shape, rng: (
        lambda t, a=_aux(rng, (3, shape[0])): ad.mean_all(ad.add(a, ad.first_row(ad.transpose_last2(t))))),
    "mul": lambda shape, rng: (lambda t, a=_aux(rng, shape): ad.sum_all(ad.mul(t, a))),
    "scale": lambda shape, rng: (lambda t: ad.sum_all(ad.scale(t, 1.7))),
    "matmul": lambda shape, rng: (
        lambda t, a=_aux(rng, (shape[-1], 3)): ad.sum_all(ad.matmul(t, a))),
    "softmax": lambda shape, rng: (
        lambda t, a=_aux(rng, shape): ad.sum_all(ad.mul(ad.softmax(t), a))),
    "gelu": lambda shape, rng: (lambda t: ad.sum_all(ad.gelu(t))),
    "layer_norm": lambda shape, rng: (
        lambda t, g=Tensor(np.ones(shape[-1])), b=Tensor(np.zeros(shape[-1])), a=_aux(rng, shape):
        ad.sum_all(ad.mul(ad.layer_norm(t, g, b), a))),
    "mse": lambda shape, rng: (lambda t, a=_aux(rng, shape): ad.mse(t, a)),
    "mean": lambda shape, rng: (lambda t: ad.mean_all(t)),
    "transpose": lambda shape, rng: (
        lambda t, a=_aux(rng, shape[::-1]): ad.sum_all(ad.mul(ad.transpose_last2(t), a))),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_randomized_grad_checks(name):
    # >= 100 seeded trials per primitive on small random tensors.
    failures = []
    for trial in range(100):
        rng = np.random.default_rng(1000 + trial)
        shape = tuple(int(s) for s in rng.integers(1, 5, size=2))
        x = tensor(rng.normal(size=shape))
        f = OPS[name](shape, rng)
        err = grad_check(f, x)
        if err >= 1e-4:
            failures.append((trial, err))
    assert not failures, f"{name}: {failures[:3]}"


def test_embedding_gather_and_scatter_grad():
    table = tensor(np.arange(12.0).reshape(4, 3))
    out = ad.embedding(table, [1, 1, 3])
    np.testing.assert_array_equal(out.data, table.data[[1, 1, 3]])
    backward(ad.sum_all(out))
    expected = np.zeros((4, 3))
    expected[1] = 2.0
    expected[3] = 1.0
    np.testing.assert_array_equal(table.grad, expected)
    with pytest.raises(ValueError):
        ad.embedding(table, [4])


def test_split_merge_heads_roundtrip():
    rng = np.random.default_rng(9)
    x = tensor(rng.normal(size=(5, 8)))
    heads = ad.split_heads(x, 2)
    assert heads.shape == (2, 5, 4)
    merged = ad.merge_heads(heads)
    np.testing.assert_array_equal(merged.data, x.data)
    w = Tensor(rng.normal(size=(5, 8)))
    assert grad_check(lambda t: ad.sum_all(ad.mul(ad.merge_heads(ad.split_heads(t, 2)), w)), x) < 1e-6


def test_take_rows_and_first_row():
    rng = np.random.default_rng(10)
    x = tensor(rng.normal(size=(6, 3)))
    rows = ad.take_rows(x, [0, 2, 2])
    np.testing.assert_array_equal(rows.data, x.data[[0, 2, 2]])
    assert grad_check(lambda t: ad.sum_all(ad.take_rows(t, [0, 2, 2])), x) < 1e-6
    first = ad.first_row(x)
    np.testing.assert_array_equal(first.data, x.data[0])


def test_dropout_semantics():
    rng_state = np.random.default_rng(0)
    x = tensor(np.ones((100, 10)))
    out = ad.dropout(x, 0.5, rng_state)
    kept = out.data != 0.0
    assert 0.3 < kept.mean() < 0.7
    np.testing.assert_allclose(out.data[kept], 2.0)
    assert ad.dropout(x, 0.0, None) is x
