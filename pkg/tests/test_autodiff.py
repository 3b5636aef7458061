import numpy as np
import pytest

from d4d import autodiff as ad
from d4d.autodiff import Tensor, backward, conv2d, elementwise, grad_check, no_grad, reduce_loss
from d4d.errors import ParameterError, ShapeError


def conv2d_reference(x, w, b=None, stride=1, padding=1):
    """Naive quadruple-loop cross-correlation with scalar accumulation."""
    n_batch, c_in, h, wdt = x.shape
    c_out, _, kh, kw = w.shape
    hp, wp = h + 2 * padding, wdt + 2 * padding
    xp = np.zeros((n_batch, c_in, hp, wp), dtype=x.dtype)
    xp[:, :, padding : padding + h, padding : padding + wdt] = x
    h_out = (hp - kh) // stride + 1
    w_out = (wp - kw) // stride + 1
    out = np.zeros((n_batch, c_out, h_out, w_out), dtype=x.dtype)
    for n in range(n_batch):
        for o in range(c_out):
            for i in range(h_out):
                for j in range(w_out):
                    acc = 0.0
                    for ci in range(c_in):
                        for u in range(kh):
                            for v in range(kw):
                                acc += xp[n, ci, i * stride + u, j * stride + v] * w[o, ci, u, v]
                    out[n, o, i, j] = acc + (0.0 if b is None else b[o])
    return out


class TestConv2d:
    def test_zero_input_gives_zero_output(self):
        x = Tensor(np.zeros((1, 1, 3, 3)))
        k = Tensor(np.random.default_rng(0).standard_normal((2, 1, 3, 3)))
        out = conv2d(x, k, Tensor(np.zeros(2)), padding=1)
        assert np.all(out.data == 0.0)

    def test_identity_kernel(self):
        rng = np.random.default_rng(1)
        x = Tensor(rng.standard_normal((1, 1, 4, 5)))
        k = Tensor(np.ones((1, 1, 1, 1)))
        out = conv2d(x, k, Tensor(np.zeros(1)), stride=1, padding=0)
        assert np.array_equal(out.data, x.data)

    def test_two_by_two_all_ones(self):
        x = Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
        k = Tensor(np.ones((1, 1, 2, 2)))
        out = conv2d(x, k, padding=0)
        assert out.data.shape == (1, 1, 1, 1)
        assert out.item() == 10.0

    @pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 1), (2, 0)])
    def test_matches_reference_exactly(self, stride, padding):
        rng = np.random.default_rng(42 + stride * 10 + padding)
        for _ in range(5):
            x = rng.standard_normal((2, 3, 8, 8))
            w = rng.standard_normal((4, 3, 3, 3))
            b = rng.standard_normal(4)
            got = conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, padding=padding)
            expected = conv2d_reference(x, w, b, stride=stride, padding=padding)
            assert np.array_equal(got.data, expected)

    def test_output_geometry(self):
        x = Tensor(np.zeros((1, 2, 9, 7)))
        w = Tensor(np.zeros((5, 2, 3, 3)))
        out = conv2d(x, w, stride=2, padding=1)
        assert out.shape == (1, 5, (9 + 2 - 3) // 2 + 1, (7 + 2 - 3) // 2 + 1)

    def test_shape_errors(self):
        with pytest.raises(ShapeError):
            conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((3, 5, 3, 3))))
        with pytest.raises(ShapeError):
            conv2d(Tensor(np.zeros((4, 4))), Tensor(np.zeros((1, 1, 3, 3))))
        with pytest.raises(ShapeError):
            conv2d(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 5, 5))), padding=0)
        with pytest.raises(ParameterError):
            conv2d(Tensor(np.zeros((1, 1, 4, 4))), Tensor(np.zeros((1, 1, 3, 3))), stride=0)


class TestElementwise:
    def test_relu_definition(self):
        assert elementwise("relu", Tensor(np.array(-1.0))).item() == 0.0
        assert elementwise("relu", Tensor(np.array(2.0))).item() == 2.0

    def test_sigmoid_symmetry(self):
        assert elementwise("sigmoid", Tensor(np.array(0.0))).item() == 0.5

    def test_silu_at_one(self):
        # 1 * sigmoid(1), computed independently
        expected = 1.0 / (1.0 + np.exp(-1.0))
        assert abs(elementwise("silu", Tensor(np.array(1.0))).item() - expected) < 1e-12
        assert abs(expected - 0.731059) < 1e-6

    def test_binary_ops(self):
        a = Tensor(np.array([1.0, 2.0]))
        b = Tensor(np.array([3.0, 5.0]))
        assert np.array_equal(elementwise("add", a, b).data, [4.0, 7.0])
        assert np.array_equal(elementwise("sub", a, b).data, [-2.0, -3.0])
        assert np.array_equal(elementwise("mul", a, b).data, [3.0, 10.0])
        assert np.array_equal(elementwise("scale", a, 2.0).data, [2.0, 4.0])

    def test_scalar_broadcast(self):
        a = Tensor(np.ones((2, 3)))
        out = elementwise("add", a, Tensor(np.array(1.0)))
        assert np.all(out.data == 2.0)

    def test_incompatible_shapes(self):
        with pytest.raises(ShapeError):
            elementwise("add", Tensor(np.ones((2, 3))), Tensor(np.ones((4,))))

    def test_dispatch_errors(self):
        with pytest.raises(ParameterError):
            elementwise("add", Tensor(np.ones(2)))
        with pytest.raises(ParameterError):
            elementwise("relu", Tensor(np.ones(2)), Tensor(np.ones(2)))
        with pytest.raises(ParameterError):
            elementwise("scale", Tensor(np.ones(2)), np.ones(2))
        with pytest.raises(ParameterError):
            elementwise("nope", Tensor(np.ones(2)))


class TestReduceLoss:
    def test_zero_residual(self):
        x = Tensor(np.array([0.3, -1.2, 4.0]))
        assert reduce_loss("l1", x, x).item() == 0.0
        assert reduce_loss("l2", x, x).item() == 0.0

    def test_hand_values(self):
        pred = Tensor(np.array([1.0, 3.0]))
        target = Tensor(np.array([2.0, 1.0]))
        assert reduce_loss("l1", pred, target).item() == pytest.approx(1.5, abs=1e-15)
        assert reduce_loss("l2", pred, target).item() == pytest.approx(2.5, abs=1e-15)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            reduce_loss("l1", Tensor(np.zeros(2)), Tensor(np.zeros(3)))

    def test_unknown_kind(self):
        with pytest.raises(ParameterError):
            reduce_loss("huber", Tensor(np.zeros(2)), Tensor(np.zeros(2)))


class TestBackward:
    def test_sum_gradient_is_ones(self):
        x = Tensor(np.random.default_rng(0).standard_normal((3, 4)), requires_grad=True)
        backward(ad.tensor_sum(x))
        assert np.array_equal(x.grad, np.ones((3, 4)))

    def test_mean_of_squares(self):
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        loss = ad.tensor_mean(ad.mul(x, x))
        backward(loss)
        assert np.allclose(x.grad, [1.0, 2.0], atol=1e-15)

    def test_constant_loss_leaves_zero_grads(self):
        x = Tensor(np.ones(3), requires_grad=True)
        loss = ad.tensor_sum(Tensor(np.array([5.0])))
        backward(loss)
        assert np.all(x.grad == 0.0)

    def test_non_scalar_rejected(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ShapeError):
            backward(ad.mul(x, 2.0))

    def test_accumulation_without_reset(self):
        x = Tensor(np.ones(2), requires_grad=True)
        for _ in range(3):
            backward(ad.tensor_sum(ad.mul(x, 2.0)))
        assert np.array_equal(x.grad, [6.0, 6.0])

    def test_diamond_graph(self):
        # loss = sum(x*x + x*x): grad = 4x
        x = Tensor(np.array([1.0, -2.0]), requires_grad=True)
        y = ad.mul(x, x)
        backward(ad.tensor_sum(ad.add(y, y)))
        assert np.allclose(x.grad, [4.0, -8.0], atol=1e-15)

    def test_bit_identical_across_runs(self):
        def run():
            rng = np.random.default_rng(7)
            x = Tensor(rng.standard_normal((2, 3, 8, 8)), requires_grad=True)
            w = Tensor(rng.standard_normal((4, 3, 3, 3)), requires_grad=True)
            t = rng.standard_normal((2, 4, 8, 8))
            loss = reduce_loss("l2", conv2d(x, w, padding=1), Tensor(t))
            backward(loss)
            return x.grad.copy(), w.grad.copy()

        gx1, gw1 = run()
        gx2, gw2 = run()
        assert np.array_equal(gx1, gx2)
        assert np.array_equal(gw1, gw2)


class TestGradCheck:
    def test_linear_function_exact(self):
        x = Tensor(np.random.default_rng(0).standard_normal(5), requires_grad=True)
        err = grad_check(ad.tensor_sum, x, eps=1e-5)
        assert err < 1e-9

    def test_l2_of_conv(self):
        rng = np.random.default_rng(3)
        x = Tensor(rng.standard_normal((1, 2, 5, 5)), requires_grad=True)
        w = Tensor(rng.standard_normal((3, 2, 3, 3)))
        target = Tensor(rng.standard_normal((1, 3, 5, 5)))

        def f(t):
            return reduce_loss("l2", conv2d(t, w, padding=1), target)

        assert grad_check(f, x, eps=1e-5) < 1e-6

    def test_l1_away_from_kinks(self):
        rng = np.random.default_rng(4)
        x = Tensor(rng.uniform(0.5, 1.5, size=(6,)), requires_grad=True)
        target = Tensor(np.full(6, -1.0))  # residuals strictly positive

        def f(t):
            return reduce_loss("l1", t, target)

        assert grad_check(f, x, eps=1e-5) < 1e-6

    def test_non_scalar_function_rejected(self):
        x = Tensor(np.ones(2), requires_grad=True)
        with pytest.raises(ShapeError):
            grad_check(lambda t: ad.mul(t, 2.0), x)


class TestOpGradients:
    """Every differentiable op passes finite-difference checks (64-bit)."""

    @pytest.mark.parametrize(
        "name,f",
        [
            ("add", lambda x, other: ad.tensor_sum(ad.mul(ad.add(x, other), x))),
            ("sub", lambda x, other: ad.tensor_sum(ad.mul(ad.sub(x, other), x))),
            ("mul", lambda x, other: ad.tensor_sum(ad.mul(x, other))),
            ("sigmoid", lambda x, other: ad.tensor_sum(ad.sigmoid(x))),
            ("silu", lambda x, other: ad.tensor_sum(ad.silu(x))),
            ("mean", lambda x, other: ad.tensor_mean(ad.mul(x, x))),
            ("reshape", lambda x, other: ad.tensor_sum(ad.mul(ad.reshape(x, (8,)), ad.reshape(x, (8,))))),
        ],
    )
    def test_elementwise_grads(self, name, f):
        rng = np.random.default_rng(abs(hash(name)) % 2**32)
        x = Tensor(rng.standard_normal((2, 4)), requires_grad=True)
        other = Tensor(rng.standard_normal((2, 4)))
        assert grad_check(lambda t: f(t, other), x, eps=1e-6) <= 1e-5

    def test_relu_away_from_kink(self):
        rng = np.random.default_rng(11)
        data = rng.standard_normal((3, 3))
        data[np.abs(data) < 0.1] = 0.5  # keep clear of the kink
        x = Tensor(data, requires_grad=True)
        assert grad_check(lambda t: ad.tensor_sum(ad.relu(t)), x, eps=1e-6) <= 1e-5

    def test_broadcast_add_grad(self):
        rng = np.random.default_rng(12)
        b = Tensor(rng.standard_normal((1, 3, 1, 1)), requires_grad=True)
        x = Tensor(rng.standard_normal((2, 3, 4, 4)))

        def f(t):
            return ad.tensor_sum(ad.mul(ad.add(x, t), ad.add(x, t)))

        assert grad_check(f, b, eps=1e-6) <= 1e-5

    def test_matmul_grads(self):
        rng = np.random.default_rng(13)
        a = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
        b = Tensor(rng.standard_normal((4, 2)))
        assert grad_check(lambda t: ad.tensor_sum(ad.matmul(t, b)), a, eps=1e-6) <= 1e-5
        b2 = Tensor(rng.standard_normal((4, 2)), requires_grad=True)
        a2 = Tensor(rng.standard_normal((3, 4)))
        assert (
            grad_check(lambda t: ad.tensor_sum(ad.mul(ad.matmul(a2, t), ad.matmul(a2, t))), b2, eps=1e-6)
            <= 1e-5
        )

    def test_concat_grads(self):
        rng = np.random.default_rng(14)
        a = Tensor(rng.standard_normal((1, 2, 3, 3)), requires_grad=True)
        b = Tensor(rng.standard_normal((1, 3, 3, 3)))

        def f(t):
            c = ad.concat([t, b], axis=1)
            return ad.tensor_sum(ad.mul(c, c))

        assert grad_check(f, a, eps=1e-6) <= 1e-5

    def test_upsample_grads(self):
        rng = np.random.default_rng(15)
        x = Tensor(rng.standard_normal((1, 2, 3, 2)), requires_grad=True)

        def f(t):
            u = ad.upsample2(t)
            return ad.tensor_sum(ad.mul(u, u))

        assert grad_check(f, x, eps=1e-6) <= 1e-5

    def test_conv_weight_and_bias_grads(self):
        rng = np.random.default_rng(16)
        x = Tensor(rng.standard_normal((2, 2, 5, 5)))
        w = Tensor(rng.standard_normal((3, 2, 3, 3)), requires_grad=True)
        b = Tensor(rng.standard_normal(3), requires_grad=True)
        target = Tensor(rng.standard_normal((2, 3, 3, 3)))

        def f_w(t):
            return reduce_loss("l2", conv2d(x, t, b, stride=2, padding=1), target)

        def f_b(t):
            return reduce_loss("l2", conv2d(x, w, t, stride=2, padding=1), target)

        assert grad_check(f_w, w, eps=1e-6) <= 1e-5
        assert grad_check(f_b, b, eps=1e-6) <= 1e-5


class TestNoGrad:
    def test_no_tape_recorded(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with no_grad():
            y = ad.mul(x, 2.0)
        assert not y.requires_grad
        assert y._parents == ()

    def test_nesting_restores_state(self):
        with no_grad():
            with no_grad():
                pass
            x = Tensor(np.ones(2), requires_grad=True)
            y = ad.mul(x, 2.0)
            assert not y.requires_grad
        y2 = ad.mul(Tensor(np.ones(2), requires_grad=True), 2.0)
        assert y2.requires_grad
