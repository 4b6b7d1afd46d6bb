"""Gradient-tape unit tests: every primitive against central finite differences."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dynsplat import autodiff as ad
from dynsplat.autodiff import Tape, Tensor

H = 1e-5


def central_diff(fn, x, h=H):
    """Independent finite-difference oracle, elementwise over x."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = grad.reshape(-1)
    for i in range(x.size):
        xp = x.copy().reshape(-1)
        xm = x.copy().reshape(-1)
        xp[i] += h
        xm[i] -= h
        flat[i] = (fn(xp.reshape(x.shape)) - fn(xm.reshape(x.shape))) / (2 * h)
    return grad


def autodiff_grad(op, x, *extra):
    with Tape() as tape:
        t = Tensor(x, requires_grad=True)
        out = op(t, *extra)
        loss = out.sum()
    tape.backward(loss)
    return t.grad


def rel_err(a, b):
    denom = np.maximum(np.abs(a) + np.abs(b), 1e-10)
    return np.max(np.abs(a - b) / denom)


class TestElementwise:
    def test_sigmoid_at_zero(self):
        assert ad.sigmoid(Tensor(0.0)).item() == pytest.approx(0.5, abs=0)

    def test_add_values(self):
        out = ad.elementwise("add", Tensor([1.0, 2.0]), Tensor([3.0, 4.0]))
        np.testing.assert_array_equal(out.values, [4.0, 6.0])

    def test_sigmoid_grad_matches_fd_at_zero(self):
        g = autodiff_grad(ad.sigmoid, np.array([0.0]))
        fd = central_diff(lambda x: ad.sigmoid(Tensor(x)).values.sum(), np.array([0.0]))
        assert abs(g[0] - 0.25) < 1e-12
        assert abs(g[0] - fd[0]) < 1e-8

    def test_shape_mismatch_raises(self):
        with pytest.raises(ValueError):
            ad.elementwise("add", Tensor(np.zeros(3)), Tensor(np.zeros(4)))

    def test_unknown_kind_raises(self):
        with pytest.raises(ValueError):
            ad.elementwise("fma", Tensor(1.0), Tensor(2.0))

    @pytest.mark.parametrize("kind", ["add", "sub", "mul", "div"])
    def test_binary_grads_match_fd(self, kind):
        rng = np.random.default_rng(hash(kind) % 2**32)
        a = rng.uniform(-2, 2, size=(3, 4))
        b = rng.uniform(0.5, 2, size=(3, 4))  # away from zero for div

        def f(x):
            return ad.elementwise(kind, Tensor(x), Tensor(b)).values.sum()

        grad = autodiff_grad(lambda t: ad.elementwise(kind, t, Tensor(b)), a)
        assert rel_err(grad, central_diff(f, a)) < 1e-5

    @pytest.mark.parametrize("kind", ["exp", "sigmoid", "tanh", "relu", "abs"])
    def test_unary_grads_match_fd(self, kind):
        rng = np.random.default_rng(hash(kind) % 2**32)
        a = rng.uniform(-2, 2, size=(5,))
        a = a[np.abs(a) > 1e-3]  # keep clear of relu/abs kinks

        def f(x):
            return ad.elementwise(kind, Tensor(x)).values.sum()

        grad = autodiff_grad(lambda t: ad.elementwise(kind, t), a)
        assert rel_err(grad, central_diff(f, a)) < 1e-5

    @pytest.mark.parametrize("op,domain", [
        (ad.log, (0.5, 2.0)),
        (ad.sqrt, (0.5, 2.0)),
        (lambda t: ad.power(t, 3.0), (-2.0, 2.0)),
        (lambda t: ad.clip(t, -1.0, 1.0), (-2.0, 2.0)),
    ])
    def test_other_unary_grads(self, op, domain):
        rng = np.random.default_rng(11)
        a = rng.uniform(*domain, size=(6,))

        def f(x):
            with Tape():
                return op(Tensor(x)).values.sum()

        grad = autodiff_grad(op, a)
        assert rel_err(grad, central_diff(f, a)) < 1e-5

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.floats(-2, 2), min_size=1, max_size=8))
    def test_property_sigmoid_grad(self, vals):
        a = np.asarray(vals)
        grad = autodiff_grad(ad.sigmoid, a)
        fd = central_diff(lambda x: ad.sigmoid(Tensor(x)).values.sum(), a)
        assert rel_err(grad, fd) < 1e-5

    def test_broadcast_grad_trailing(self):
        rng = np.random.default_rng(3)
        a = rng.uniform(-1, 1, (4, 3))
        b = rng.uniform(0.5, 1.5, (3,))
        with Tape() as tape:
            ta, tb = Tensor(a, requires_grad=True), Tensor(b, requires_grad=True)
            loss = (ta * tb).sum()
        tape.backward(loss)
        np.testing.assert_allclose(ta.grad, np.broadcast_to(b, a.shape))
        np.testing.assert_allclose(tb.grad, a.sum(axis=0))

    def test_broadcast_grad_outer(self):
        rng = np.random.default_rng(4)
        a = rng.uniform(-1, 1, (4, 1))
        b = rng.uniform(-1, 1, (1, 5))
        with Tape() as tape:
            ta, tb = Tensor(a, requires_grad=True), Tensor(b, requires_grad=True)
            loss = (ta * tb).sum()
        tape.backward(loss)
        np.testing.assert_allclose(ta.grad, np.full((4, 1), b.sum()))
        np.testing.assert_allclose(tb.grad, np.full((1, 5), a.sum()))


class TestMatmul:
    def test_identity(self):
        m = np.array([[1.0, 2.0], [3.0, 4.0]])
        out = ad.matmul(Tensor(np.eye(2)), Tensor(m))
        np.testing.assert_array_equal(out.values, m)

    def test_row_times_column(self):
        out = ad.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
        np.testing.assert_array_equal(out.values, [[11.0]])

    def test_inner_mismatch_raises(self):
        with pytest.raises(ValueError):
            ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))

    def test_grad_matches_fd(self):
        rng = np.random.default_rng(5)
        a = rng.uniform(-2, 2, (3, 4))
        b = rng.uniform(-2, 2, (4, 2))

        def f(x):
            return (np.asarray(x) @ b).sum()

        grad = autodiff_grad(lambda t: ad.matmul(t, Tensor(b)), a)
        assert rel_err(grad, central_diff(f, a)) < 1e-6

        with Tape() as tape:
            tb = Tensor(b, requires_grad=True)
            loss = ad.matmul(Tensor(a), tb).sum()
        tape.backward(loss)
        fd_b = central_diff(lambda x: (a @ x).sum(), b)
        assert rel_err(tb.grad, fd_b) < 1e-6


class TestStopGradient:
    def test_forward_identity_bit_exact(self):
        x = np.array([1.5, -2.25, 0.1])
        out = ad.stop_gradient(Tensor(x))
        assert np.array_equal(out.values, x)

    def test_grad_is_zero(self):
        with Tape() as tape:
            x = Tensor([1.0, 2.0], requires_grad=True)
            loss = ad.stop_gradient(x).sum() + 0.0 * x.sum()
        tape.backward(loss)
        np.testing.assert_array_equal(x.grad, np.zeros(2))

    def test_mixed_path_keeps_analytic_sigmoid_grad(self):
        # d/dx [sg(sigmoid(x)) + sigmoid(x)] == sigmoid'(x) exactly
        x0 = np.array([0.3, -1.2, 2.0])
        with Tape() as tape:
            x = Tensor(x0, requires_grad=True)
            s = ad.sigmoid(x)
            loss = (ad.stop_gradient(s) + s).sum()
        tape.backward(loss)
        np.testing.assert_array_equal(x.grad, s.values * (1 - s.values))
        np.testing.assert_allclose(x.grad, 1 / (1 + np.exp(-x0)) * (1 - 1 / (1 + np.exp(-x0))),
                                   rtol=1e-14)


class TestBackward:
    def test_sum_grad_ones(self):
        with Tape() as tape:
            x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
            loss = x.sum()
        tape.backward(loss)
        np.testing.assert_array_equal(x.grad, np.ones(3))

    def test_square_grad(self):
        with Tape() as tape:
            x = Tensor([3.0], requires_grad=True)
            loss = (x * x).sum()
        tape.backward(loss)
        np.testing.assert_array_equal(x.grad, [6.0])

    def test_non_scalar_loss_raises(self):
        with Tape() as tape:
            x = Tensor([1.0, 2.0], requires_grad=True)
            y = x * 2.0
        with pytest.raises(ValueError):
            tape.backward(y)

    def test_grad_accumulates_across_uses(self):
        with Tape() as tape:
            x = Tensor([2.0], requires_grad=True)
            loss = (x * 3.0 + x * x).sum()
        tape.backward(loss)
        np.testing.assert_array_equal(x.grad, [3.0 + 4.0])


class TestStructure:
    def test_take_scatter_grad(self):
        with Tape() as tape:
            x = Tensor(np.arange(6.0).reshape(3, 2), requires_grad=True)
            idx = np.array([0, 2, 2])
            loss = x[idx].sum()
        tape.backward(loss)
        np.testing.assert_array_equal(x.grad, [[1, 1], [0, 0], [2, 2]])

    def test_concat_and_stack_grads(self):
        with Tape() as tape:
            a = Tensor([1.0, 2.0], requires_grad=True)
            b = Tensor([3.0], requires_grad=True)
            loss = ad.concat([a, b]).sum() + ad.stack([a, a]).sum()
        tape.backward(loss)
        np.testing.assert_array_equal(a.grad, [3.0, 3.0])
        np.testing.assert_array_equal(b.grad, [1.0])

    def test_reshape_transpose_grads(self):
        rng = np.random.default_rng(6)
        a = rng.normal(size=(2, 6))
        with Tape() as tape:
            t = Tensor(a, requires_grad=True)
            loss = (ad.transpose(ad.reshape(t, (3, 4))) * Tensor(np.arange(12.0).reshape(4, 3))).sum()
        tape.backward(loss)
        expected = np.arange(12.0).reshape(4, 3).T.reshape(2, 6)
        np.testing.assert_array_equal(t.grad, expected)

    def test_exclusive_cumprod_forward(self):
        x = np.array([[2.0, 3.0], [4.0, 5.0], [0.5, 1.0]])
        out = ad.exclusive_cumprod(Tensor(x), axis=0)
        np.testing.assert_allclose(out.values, [[1, 1], [2, 3], [8, 15]])

    def test_exclusive_cumprod_grad_matches_fd(self):
        rng = np.random.default_rng(7)
        x = rng.uniform(0.3, 1.5, size=(5, 2))

        def f(v):
            vals = np.cumprod(v, axis=0)
            shifted = np.roll(vals, 1, axis=0)
            shifted[0, :] = 1.0
            return (shifted * np.arange(1.0, 11.0).reshape(5, 2)).sum()

        with Tape() as tape:
            t = Tensor(x, requires_grad=True)
            loss = (ad.exclusive_cumprod(t, axis=0)
                    * Tensor(np.arange(1.0, 11.0).reshape(5, 2))).sum()
        tape.backward(loss)
        assert rel_err(t.grad, central_diff(f, x)) < 1e-6

    def test_mean_and_axis_sum_grads(self):
        rng = np.random.default_rng(8)
        a = rng.normal(size=(3, 4))
        with Tape() as tape:
            t = Tensor(a, requires_grad=True)
            loss = t.mean() + t.sum(axis=0).sum() * 0.5
        tape.backward(loss)
        np.testing.assert_allclose(t.grad, 1.0 / 12 + 0.5)


class TestDeterminism:
    def test_repeated_forward_bit_exact(self):
        rng = np.random.default_rng(9)
        a = rng.normal(size=(10, 10))
        b = rng.normal(size=(10, 10))

        def run():
            with Tape():
                return ad.matmul(ad.sigmoid(Tensor(a)), ad.tanh(Tensor(b))).values

        first = run()
        for _ in range(3):
            assert np.array_equal(run(), first)

    def test_backward_bit_exact(self):
        rng = np.random.default_rng(10)
        a = rng.normal(size=(6, 6))

        def run():
            with Tape() as tape:
                t = Tensor(a, requires_grad=True)
                loss = ad.sigmoid(ad.matmul(t, t)).sum()
            tape.backward(loss)
            return t.grad

        first = run()
        assert np.array_equal(run(), first)


class TestStraightThrough:
    def test_forward_uses_hard_values(self):
        soft = ad.sigmoid(Tensor([0.2], requires_grad=True))
        out = ad.straight_through(np.array([1.0]), soft)
        assert out.values[0] == 1.0

    def test_grad_passes_to_soft(self):
        with Tape() as tape:
            x = Tensor([0.2], requires_grad=True)
            s = ad.sigmoid(x)
            out = ad.straight_through(np.array([1.0]), s)
            loss = (out * 3.0).sum()
        tape.backward(loss)
        s_val = 1 / (1 + np.exp(-0.2))
        np.testing.assert_allclose(x.grad, 3.0 * s_val * (1 - s_val), rtol=0, atol=0)
