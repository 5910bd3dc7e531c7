import math

import mpmath
import numpy as np
import pytest

from pearl.tensor import (
    Adam,
    DimensionError,
    GraphError,
    Tensor,
    bilinear,
    concat,
    grad_check,
    softmax_cross_entropy,
)

from graphgen import random_graph_fn


class TestMatmul:
    def test_identity(self):
        a = np.array([[2.0, -1.0], [0.5, 3.0]])
        out = Tensor(np.eye(2)) @ Tensor(a)
        assert np.array_equal(out.data, a)

    def test_hand_product(self):
        out = Tensor([[1.0, 2.0], [3.0, 4.0]]) @ Tensor([[5.0, 6.0], [7.0, 8.0]])
        assert np.array_equal(out.data, [[19.0, 22.0], [43.0, 50.0]])

    def test_against_triple_loop_oracle(self):
        rng = np.random.default_rng(7)
        a = rng.standard_normal((7, 5))
        b = rng.standard_normal((5, 3))
        expected = np.zeros((7, 3))
        for i in range(7):
            for j in range(3):
                for k in range(5):
                    expected[i, j] += a[i, k] * b[k, j]
        out = Tensor(a) @ Tensor(b)
        assert np.max(np.abs(out.data - expected)) < 1e-12

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
            Tensor(np.zeros((2, 3))) @ Tensor(np.zeros((2, 3)))


class TestSoftmaxCrossEntropy:
    def test_uniform_logits_is_ln_classes(self):
        loss = softmax_cross_entropy(Tensor(np.zeros((3, 4))), np.array([0, 1, 2]))
        assert abs(loss.item() - math.log(4)) < 1e-12

    def test_saturated_margin(self):
        logits = np.zeros((2, 5))
        logits[0, 3] = 1000.0
        logits[1, 0] = 1000.0
        loss = softmax_cross_entropy(Tensor(logits), np.array([3, 0]))
        assert loss.item() < 1e-6

    def test_against_arbitrary_precision_oracle(self):
        rng = np.random.default_rng(11)
        logits = rng.standard_normal((8, 6)) * 3.0
        targets = rng.integers(0, 6, size=8)
        with mpmath.workdps(50):
            total = mpmath.mpf(0)
            for row, t in zip(logits, targets):
                denom = mpmath.fsum(mpmath.e ** mpmath.mpf(v) for v in row)
                total += -mpmath.log(mpmath.e ** mpmath.mpf(row[t]) / denom)
            expected = float(total / 8)
        loss = softmax_cross_entropy(Tensor(logits), targets)
        assert abs(loss.item() - expected) < 1e-10

    def test_out_of_range_target(self):
        with pytest.raises(IndexError):
            softmax_cross_entropy(Tensor(np.zeros((2, 3))), np.array([0, 3]))

    def test_nonnegative_on_random_logits(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            logits = rng.standard_normal((4, 5)) * rng.uniform(0.1, 10)
            targets = rng.integers(0, 5, size=4)
            assert softmax_cross_entropy(Tensor(logits), targets).item() >= 0.0


class TestBackward:
    def test_sum_of_squares_gradient(self):
        x = Tensor([[1.0, 2.0, 3.0]], requires_grad=True)
        (x * x).sum().backward()
        assert np.array_equal(x.grad, [[2.0, 4.0, 6.0]])

    def test_disconnected_parameter_gets_no_gradient(self):
        x = Tensor([[1.0, 2.0]], requires_grad=True)
        unused = Tensor([[5.0, 5.0]], requires_grad=True)
        (x * x).sum().backward()
        assert unused.grad is None  # Adam treats None as a zero gradient

    def test_non_scalar_loss_rejected(self):
        x = Tensor(np.ones((2, 2)), requires_grad=True)
        with pytest.raises(GraphError):
            (x * x).backward()

    def test_mlp_cross_entropy_matches_finite_differences(self):
        rng = np.random.default_rng(5)
        w1 = Tensor(rng.standard_normal((4, 6)) * 0.5, requires_grad=True)
        b1 = Tensor(rng.standard_normal(6) * 0.1, requires_grad=True)
        w2 = Tensor(rng.standard_normal((6, 3)) * 0.5, requires_grad=True)
        b2 = Tensor(rng.standard_normal(3) * 0.1, requires_grad=True)
        x = rng.standard_normal((5, 4))
        targets = rng.integers(0, 3, size=5)

        def loss_fn(w1_, b1_, w2_, b2_):
            hidden = (Tensor(x) @ w1_ + b1_).tanh()
            return softmax_cross_entropy(hidden @ w2_ + b2_, targets)

        assert grad_check(loss_fn, [w1, b1, w2, b2], h=1e-5) < 1e-4

    def test_backward_deterministic(self):
        rng = np.random.default_rng(9)
        data = rng.standard_normal((3, 3))

        def run():
            x = Tensor(data.copy(), requires_grad=True)
            ((x @ x).tanh() * x).sum().backward()
            return x.grad.copy()

        assert np.array_equal(run(), run())


class TestAdam:
    def test_zero_gradients_leave_parameters_unchanged(self):
        p = Tensor([[1.0, -2.0]], requires_grad=True)
        before = p.data.copy()
        opt = Adam([p], lr=0.5)
        for _ in range(25):
            p.grad = np.zeros_like(p.data)
            opt.step()
        assert np.array_equal(p.data, before)
        assert opt.step_count == 25

    def test_first_step_matches_hand_evaluation(self):
        p = Tensor(np.array(1.0), requires_grad=True)
        p.grad = np.array(0.5)
        opt = Adam([p], lr=0.1)
        opt.step()
        # m=0.05, v=0.00025; bias-corrected m_hat=0.5, v_hat=0.25
        expected = 1.0 - 0.1 * 0.5 / (math.sqrt(0.25) + 1e-8)
        assert abs(float(p.data) - expected) < 1e-12

    def test_converges_on_quadratic(self):
        x = Tensor(np.array(0.0), requires_grad=True)
        opt = Adam([x], lr=0.05)
        for _ in range(500):
            diff = x - 3.0
            loss = diff * diff
            opt.zero_grad()
            loss.backward()
            opt.step()
        assert abs(float(x.data) - 3.0) < 1e-3

    def test_gradient_shape_mismatch(self):
        p = Tensor(np.zeros((2, 2)), requires_grad=True)
        p.grad = np.zeros(3)
        with pytest.raises(DimensionError):
            Adam([p]).step()


class TestGradCheck:
    def test_linear_function_is_nearly_exact(self):
        w = Tensor([[1.5, -2.0], [0.5, 3.0]], requires_grad=True)
        coeff = np.array([[2.0, -1.0], [4.0, 0.5]])
        err = grad_check(lambda w_: (w_ * Tensor(coeff)).sum(), [w])
        assert err < 1e-10

    def test_gru_cell_gradient(self):
        rng = np.random.default_rng(17)
        latent = 4
        params = {
            name: Tensor(rng.standard_normal((latent, latent)) * 0.4, requires_grad=True)
            for name in ("w_xr", "w_hr", "w_xz", "w_hz", "w_xn", "w_hn")
        }
        biases = {
            name: Tensor(rng.standard_normal(latent) * 0.1, requires_grad=True)
            for name in ("b_r", "b_z", "b_nx", "b_nh")
        }
        x = rng.standard_normal((3, latent))
        h0 = rng.standard_normal((3, latent)) * 0.5

        def loss_fn(w_xr, w_hr, w_xz, w_hz, w_xn, w_hn, b_r, b_z, b_nx, b_nh):
            xt, ht = Tensor(x), Tensor(h0)
            r = (xt @ w_xr + ht @ w_hr + b_r).sigmoid()
            u = (xt @ w_xz + ht @ w_hz + b_z).sigmoid()
            n = (xt @ w_xn + r * (ht @ w_hn + b_nh) + b_nx).tanh()
            return ((1.0 - u) * n + u * ht).mean()

        err = grad_check(loss_fn, list(params.values()) + list(biases.values()))
        assert err < 1e-4

    def test_doubled_gradient_is_flagged(self):
        x = Tensor([[1.0, 2.0]], requires_grad=True)

        def sabotaged(x_):
            out = Tensor((x_.data * x_.data).sum(), _parents=(x_,), _op="bad")
            out.requires_grad = True

            def backward():
                x_._accumulate(out.grad * 4.0 * x_.data)  # true gradient is 2x

            out._backward = backward
            return out

        err = grad_check(sabotaged, [x])
        assert 0.4 < err <= 1.01  # off by a factor of two: flagged loudly

    def test_concat_slice_transpose_bilinear(self):
        rng = np.random.default_rng(23)
        a = Tensor(rng.standard_normal((3, 2)), requires_grad=True)
        b = Tensor(rng.standard_normal((3, 2)), requires_grad=True)
        u = Tensor(rng.standard_normal((1, 2)), requires_grad=True)
        v = Tensor(rng.standard_normal((3, 1)), requires_grad=True)

        def loss_fn(a_, b_, u_, v_):
            stacked = concat([a_, b_], axis=0)[1:4, :]
            return (bilinear(u_, stacked.T, v_) * 0.5).sum() + stacked.mean()

        assert grad_check(loss_fn, [a, b, u, v]) < 1e-6


class TestRandomizedGraphs:
    @pytest.mark.parametrize("seed", range(20))
    def test_random_graph_gradients(self, seed):
        fn, params = random_graph_fn(seed)
        assert grad_check(fn, params, h=1e-5) < 1e-4
