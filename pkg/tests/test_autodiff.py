import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tpa import autodiff as ad
from tpa.autodiff import Tape, Tensor
from tpa.gradcheck import grad_check


def naive_conv(x, k, padding, dilation):
    """Nested-loop reference: out[t, o] = sum_i sum_c x[t + off_i, c] * k[i, c, o]."""
    L, cin = x.shape
    K, _, cout = k.shape
    span = (K - 1) * dilation
    left = span // 2 if padding == "same" else span
    out = np.zeros((L, cout))
    for t in range(L):
        for i in range(K):
            src = t - left + i * dilation
            if 0 <= src < L:
                for c in range(cin):
                    for o in range(cout):
                        out[t, o] += x[src, c] * k[i, c, o]
    return out


class TestElementwise:
    def test_add(self):
        np.testing.assert_array_equal(ad.elementwise("add", [1, 2], [3, 4]).data, [4, 6])

    def test_mul_by_zeros_gives_zero_grad(self):
        h = Tensor([1.0, -2.0, 3.0], requires_grad=True)
        with Tape() as tape:
            out = ad.mul(h, np.zeros(3))
            tape.backward(ad.sum(out))
        np.testing.assert_array_equal(out.data, 0.0)
        np.testing.assert_array_equal(h.grad, 0.0)

    def test_exp_zero(self):
        assert ad.elementwise("exp", [0.0]).data[0] == 1.0

    def test_scale_and_sigmoid(self):
        assert ad.elementwise("scale", [2.0], 3.0).data[0] == 6.0
        assert ad.elementwise("sigmoid", [0.0]).data[0] == 0.5

    def test_shape_mismatch(self):
        with pytest.raises(ad.ShapeError):
            ad.add(np.ones(3), np.ones(4))

    def test_scalar_broadcast(self):
        x = Tensor(np.ones((2, 3)), requires_grad=True)
        s = Tensor(2.0, requires_grad=True)
        with Tape() as tape:
            tape.backward(ad.sum(ad.mul(x, s)))
        assert s.grad == pytest.approx(6.0)
        np.testing.assert_array_equal(x.grad, 2.0)

    def test_log_non_positive(self):
        with pytest.raises(ValueError):
            ad.log(Tensor([1.0, 0.0]))

    def test_unknown_op(self):
        with pytest.raises(ValueError):
            ad.elementwise("tanh", [1.0])


class TestLinear:
    W = np.array([[1.0, 2.0], [3.0, 4.0]])

    def test_identity_input(self):
        np.testing.assert_array_equal(ad.linear(np.eye(2), self.W, np.zeros(2)).data, self.W)

    def test_hand_matmul(self):
        # [1,1] @ W = [4, 6]; + [1,1]
        np.testing.assert_array_equal(ad.linear([[1.0, 1.0]], self.W, [1.0, 1.0]).data, [[5.0, 7.0]])

    def test_zero_case_bias_grad_is_column_sums(self):
        b = Tensor(np.zeros(2), requires_grad=True)
        W = Tensor(self.W, requires_grad=True)
        upstream = np.array([[1.0, 2.0], [3.0, 5.0], [-1.0, 0.5]])
        with Tape() as tape:
            y = ad.linear(np.zeros((3, 2)), W, b)
            tape.backward(ad.sum(ad.mul(y, upstream)))
        np.testing.assert_array_equal(y.data, 0.0)
        np.testing.assert_array_equal(b.grad, upstream.sum(axis=0))

    def test_dimension_mismatch(self):
        with pytest.raises(ad.ShapeError):
            ad.linear(np.ones((1, 3)), self.W)


class TestConv1d:
    def test_ones_kernel(self):
        out = ad.conv1d(np.ones((4, 1)), np.ones((3, 1, 1)), padding="same")
        np.testing.assert_array_equal(out.data[:, 0], [2, 3, 3, 2])

    def test_delta_kernel_is_identity(self):
        x = np.random.default_rng(0).standard_normal((7, 3))
        k = np.zeros((3, 3, 3))
        k[1] = np.eye(3)
        np.testing.assert_array_equal(ad.conv1d(x, k).data, x)

    @pytest.mark.parametrize("padding,dilation", [("same", 1), ("same", 2), ("causal", 1), ("causal", 3)])
    def test_matches_nested_loops(self, padding, dilation):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((9, 2))
        k = rng.standard_normal((3, 2, 4))
        np.testing.assert_allclose(ad.conv1d(x, k, padding=padding, dilation=dilation).data,
                                   naive_conv(x, k, padding, dilation), atol=1e-12)

    def test_causal_output0_ignores_future(self):
        rng = np.random.default_rng(2)
        x = Tensor(rng.standard_normal((6, 2)), requires_grad=True)
        k = rng.standard_normal((3, 2, 2))
        with Tape() as tape:
            out = ad.conv1d(x, k, padding="causal", dilation=2)
            tape.backward(ad.sum(ad.take(out, 0)))
        np.testing.assert_array_equal(x.grad[1:], 0.0)

    def test_batched_equals_per_sample(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((4, 8, 3))
        k = rng.standard_normal((5, 3, 2))
        batched = ad.conv1d(x, k).data
        for i in range(4):
            np.testing.assert_allclose(batched[i], ad.conv1d(x[i], k).data, atol=1e-12)

    def test_errors(self):
        with pytest.raises(ValueError):
            ad.conv1d(np.ones((4, 1)), np.ones((2, 1, 1)), padding="same")
        with pytest.raises(ValueError):
            ad.conv1d(np.ones((4, 1)), np.ones((3, 1, 1)), dilation=0)
        with pytest.raises(ad.ShapeError):
            ad.conv1d(np.ones((4, 1)), np.ones((3, 2, 1)))


class TestReduce:
    def test_mean_identical_rows(self):
        np.testing.assert_array_equal(ad.reduce(np.tile([1.0, 2.0], (5, 1)), "mean").data, [1.0, 2.0])

    def test_max_routes_grad_to_argmax(self):
        x = Tensor([[1.0], [3.0], [2.0]], requires_grad=True)
        with Tape() as tape:
            out = ad.reduce(x, "max")
            tape.backward(ad.sum(out))
        assert out.data[0] == 3.0
        np.testing.assert_array_equal(x.grad[:, 0], [0, 1, 0])

    def test_max_tie_goes_to_first(self):
        x = Tensor([[2.0], [5.0], [5.0]], requires_grad=True)
        with Tape() as tape:
            tape.backward(ad.sum(ad.reduce(x, "max")))
        np.testing.assert_array_equal(x.grad[:, 0], [0, 1, 0])

    def test_mean_value_and_grad(self):
        x = Tensor([[2.0], [4.0]], requires_grad=True)
        with Tape() as tape:
            out = ad.reduce(x, "mean")
            tape.backward(ad.sum(out))
        assert out.data[0] == 3.0
        np.testing.assert_array_equal(x.grad[:, 0], [0.5, 0.5])

    def test_empty_axis(self):
        with pytest.raises(ad.ShapeError):
            ad.reduce(np.zeros((0, 3)), "mean")


class TestCosine:
    def test_identity(self):
        assert ad.cosine_similarity([1.0, 2.0, -1.0], [1.0, 2.0, -1.0]).item() == pytest.approx(1.0, abs=1e-15)

    def test_orthogonal(self):
        assert ad.cosine_similarity([1.0, 0.0], [0.0, 3.0]).item() == 0.0

    def test_hand_value(self):
        assert ad.cosine_similarity([1.0, 0.0], [1.0, 1.0]).item() == pytest.approx(1 / np.sqrt(2), abs=1e-15)

    def test_zero_vector_is_guarded(self):
        assert ad.cosine_similarity([0.0, 0.0], [1.0, 1.0]).item() == 0.0

    @settings(max_examples=200, deadline=None)
    @given(arrays(np.float64, 5, elements=st.floats(-1e6, 1e6)),
           arrays(np.float64, 5, elements=st.floats(-1e6, 1e6)))
    def test_bounded(self, a, b):
        c = ad.cosine_similarity(a, b).item()
        assert -1 - 1e-12 <= c <= 1 + 1e-12


class TestBackward:
    def test_sum_grad_is_ones(self):
        x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        with Tape() as tape:
            tape.backward(ad.sum(x))
        np.testing.assert_array_equal(x.grad, np.ones((2, 3)))

    def test_mean_square(self):
        x = Tensor([3.0], requires_grad=True)
        with Tape() as tape:
            tape.backward(ad.mean(ad.square(x)))
        assert x.grad[0] == 6.0

    def test_unreachable_grad_stays_zero(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        w = Tensor([3.0], requires_grad=True)
        with Tape() as tape:
            tape.backward(ad.sum(ad.mul(w, w)))
        np.testing.assert_array_equal(x.grad, 0.0)
        assert w.grad[0] == 6.0

    def test_twice_without_reset(self):
        x = Tensor([1.0], requires_grad=True)
        with Tape() as tape:
            loss = ad.sum(ad.square(x))
            tape.backward(loss)
            with pytest.raises(ad.TapeError):
                tape.backward(loss)
            tape.reset()

    def test_non_scalar_loss(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with Tape() as tape:
            with pytest.raises(ad.ShapeError):
                tape.backward(ad.square(x))

    def test_reused_tensor_accumulates(self):
        x = Tensor([2.0], requires_grad=True)
        with Tape() as tape:
            y = ad.mul(x, x)
            tape.backward(ad.sum(ad.add(y, x)))
        assert x.grad[0] == 5.0

    def test_tensor_backward_method_and_operators(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        loss = ad.sum((x * 3.0 - 1.0) / 2.0)
        loss.backward()
        np.testing.assert_array_equal(x.grad, [1.5, 1.5])

    def test_no_grad_records_nothing(self):
        x = Tensor([1.0], requires_grad=True)
        with ad.no_grad():
            y = ad.square(x)
        assert not y.requires_grad


class TestGradCheck:
    def test_square_is_exact(self):
        res = grad_check(lambda x: ad.sum(ad.square(x)), np.array([3.0]), tol=1e-8)
        assert res.passed and res.max_rel_error < 1e-8

    def test_linear_relu_mean_chain(self):
        rng = np.random.default_rng(0)
        W = rng.standard_normal((4, 3))
        b = rng.standard_normal(3)
        res = grad_check(lambda x: ad.mean(ad.relu(ad.linear(x, W, b))), rng.standard_normal((5, 4)), tol=1e-4)
        assert res.passed

    def test_relu_kink_is_excluded(self):
        res = grad_check(lambda x: ad.sum(ad.relu(x)), np.array([0.0, 1.0, -1.0]))
        assert res.excluded == 1 and np.isnan(res.errors[0]) and res.passed

    def test_detects_wrong_gradient(self):
        def bad(x):
            # forward is x^2 but gradient claims 3x
            return ad._make("bad", np.sum(x.data ** 2), (x,), lambda g: (g * 3 * x.data,))
        assert not grad_check(bad, np.array([1.0, 2.0])).passed

    def test_non_finite(self):
        with pytest.raises(FloatingPointError):
            grad_check(lambda x: ad.sum(ad.scale(x, np.inf)), np.array([1.0]))


@pytest.mark.parametrize("seed", range(10))
def test_every_registered_op_passes(seed):
    from tpa.checks import op_cases
    for name, f, x in op_cases(seed):
        res = grad_check(f, x, tol=1e-4)
        assert res.passed, (name, res.max_rel_error)


def test_forward_bit_identical_on_repeat():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((3, 10, 4))
    k = rng.standard_normal((3, 4, 6))
    a = ad.reduce(ad.relu(ad.conv1d(x, k)), "max").data
    b = ad.reduce(ad.relu(ad.conv1d(x, k)), "max").data
    assert a.tobytes() == b.tobytes()


def test_chain_rule_whole_chain():
    """Whole-chain AD against whole-chain central differences."""
    rng = np.random.default_rng(7)
    W = rng.standard_normal((3, 4))
    P = rng.standard_normal((2, 4))

    def f(x):
        h = ad.reduce(ad.sigmoid(ad.conv1d(x, W.reshape(1, 3, 4))), "mean")
        s = ad.cosine_similarity(ad.reshape(h, (1, 4)), P)
        return ad.sum(ad.log_softmax(ad.scale(s, 5.0)))

    assert grad_check(f, rng.standard_normal((6, 3)), tol=1e-6).passed
