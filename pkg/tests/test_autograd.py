"""Finite-difference checks for every differentiable op.

All checks run in float64 (the tape propagates leaf dtype) so the
central-difference oracle is accurate enough for a 1e-6 relative bound.
"""

import numpy as np
import pytest

from onetfwi import autograd as ag

TOL = 1e-6


def check(build, arrays, eps=1e-6, tol=TOL):
    """build(*tensors) must return a scalar Tensor.

    Compares the tape gradient of each input against central differences;
    asserts the relative error bound for all of them.
    """
    leaves = [ag.Tensor(a, requires_grad=True) for a in arrays]
    build(*leaves).backward()
    for a, leaf in zip(arrays, leaves):
        fd = ag.numeric_gradient(
            lambda: build(*[ag.Tensor(x) for x in arrays]).item(), a, eps
        )
        assert leaf.grad is not None
        assert leaf.grad.dtype == np.float64
        err = ag.relative_error(leaf.grad, fd)
        assert err < tol, f"gradient mismatch: rel err {err:.3e}"


def test_numeric_gradient_sanity(rng):
    x = rng.standard_normal(12)
    g = ag.numeric_gradient(lambda: float((x**3).sum()), x)
    np.testing.assert_allclose(g, 3 * x**2, rtol=1e-7)


class TestElementwiseAndShape:
    def test_add_broadcast(self, rng):
        a = rng.standard_normal((3, 4))
        b = rng.standard_normal(4)
        check(lambda x, y: ag.tensor_sum(ag.mul(ag.add(x, y), ag.add(x, y))), [a, b])

    def test_mul_broadcast_both_sides(self, rng):
        a = rng.standard_normal((3, 1))
        b = rng.standard_normal((1, 5))
        check(lambda x, y: ag.tensor_sum(ag.mul(x, y)), [a, b])

    def test_operator_sugar(self, rng):
        a = rng.standard_normal((2, 3))
        b = rng.standard_normal((2, 3))
        check(lambda x, y: ((x - y) * (-x) + 0.5 * y).sum(), [a, b])

    def test_matmul(self, rng):
        a = rng.standard_normal((4, 3))
        b = rng.standard_normal((3, 5))
        check(lambda x, y: ag.tensor_sum(ag.mul(ag.matmul(x, y), 0.3)), [a, b])

    def test_transpose2d(self, rng):
        a = rng.standard_normal((3, 4))
        w = rng.standard_normal((3, 4))
        check(lambda x: ag.tensor_sum(ag.mul(ag.transpose2d(x), w.T)), [a])

    def test_reshape(self, rng):
        a = rng.standard_normal((2, 6))
        w = rng.standard_normal((3, 4))
        check(lambda x: ag.tensor_sum(ag.mul(ag.reshape(x, (3, 4)), w)), [a])

    def test_concat_middle_axis(self, rng):
        parts = [rng.standard_normal((2, k, 3)) for k in (1, 2, 4)]
        w = rng.standard_normal((2, 7, 3))
        check(lambda *ts: ag.tensor_sum(ag.mul(ag.concat(ts, axis=1), w)), parts)

    def test_crop2d(self, rng):
        a = rng.standard_normal((2, 3, 6, 7))
        w = rng.standard_normal((2, 3, 4, 5))
        check(lambda x: ag.tensor_sum(ag.mul(ag.crop2d(x, 1, 2, 4, 5), w)), [a])

    def test_crop2d_out_of_bounds(self):
        a = ag.Tensor(np.zeros((1, 1, 4, 4)))
        with pytest.raises(ValueError):
            ag.crop2d(a, 2, 0, 3, 4)

    def test_sum_gradient_is_ones(self, rng):
        a = ag.Tensor(rng.standard_normal((3, 3)), requires_grad=True)
        ag.tensor_sum(a).backward()
        np.testing.assert_array_equal(a.grad, np.ones((3, 3)))


class TestActivationsAndLoss:
    def test_relu(self, rng):
        # keep values away from the kink so FD is well defined
        a = rng.standard_normal((4, 5))
        a = np.where(np.abs(a) < 0.05, 0.5, a)
        check(lambda x: ag.tensor_sum(ag.relu(x)), [a])

    def test_leaky_relu(self, rng):
        a = rng.standard_normal((4, 5))
        a = np.where(np.abs(a) < 0.05, -0.5, a)
        w = rng.standard_normal((4, 5))
        check(lambda x: ag.tensor_sum(ag.mul(ag.leaky_relu(x, 0.01), w)), [a])

    def test_leaky_relu_negative_slope_value(self):
        out = ag.leaky_relu(ag.Tensor(np.array([-2.0, 3.0])), 0.01)
        np.testing.assert_allclose(out.data, [-0.02, 3.0])

    def test_sigmoid(self, rng):
        a = rng.standard_normal((3, 4)) * 3
        check(lambda x: ag.tensor_sum(ag.sigmoid(x)), [a])

    def test_sigmoid_extreme_inputs_stay_finite(self):
        out = ag.sigmoid(ag.Tensor(np.array([-500.0, 0.0, 500.0])))
        assert np.all(np.isfinite(out.data))
        assert out.data[0] >= 0.0 and out.data[2] <= 1.0
        assert out.data[1] == 0.5

    def test_mse_loss_both_inputs(self, rng):
        p = rng.standard_normal((4, 6))
        t = rng.standard_normal((4, 6))
        check(lambda x, y: ag.mse_loss(x, y), [p, t])

    def test_mse_loss_value(self):
        p = ag.Tensor(np.array([1.0, 2.0]))
        t = ag.Tensor(np.array([0.0, 4.0]))
        assert ag.mse_loss(p, t).item() == pytest.approx(2.5)


class TestConvFamily:
    def test_conv2d_gradients(self, rng):
        x = rng.standard_normal((2, 2, 5, 6))
        k = rng.standard_normal((3, 2, 3, 3))
        b = rng.standard_normal(3)
        check(
            lambda xx, kk, bb: ag.tensor_sum(
                ag.conv2d(xx, kk, bb, stride=(1, 2), padding=(1, 1))
            ),
            [x, k, b],
        )

    def test_conv2d_stride_two_no_padding(self, rng):
        x = rng.standard_normal((1, 2, 7, 9))
        k = rng.standard_normal((2, 2, 3, 5))
        check(lambda xx, kk: ag.tensor_sum(ag.conv2d(xx, kk, stride=2)), [x, k])

    def test_conv2d_output_shape_halving(self):
        # the branch encoder relies on (5, 9) kernels at stride 2
        x = ag.Tensor(np.zeros((1, 1, 70, 1000), dtype=np.float32))
        k = ag.Tensor(np.zeros((1, 1, 5, 9), dtype=np.float32))
        assert ag.conv2d(x, k, stride=2).shape == (1, 1, 33, 496)

    def test_conv2d_shape_errors(self):
        x = ag.Tensor(np.zeros((1, 2, 8, 8)))
        with pytest.raises(ValueError, match="channel mismatch"):
            ag.conv2d(x, ag.Tensor(np.zeros((1, 3, 3, 3))))
        with pytest.raises(ValueError, match="smaller than kernel"):
            ag.conv2d(x, ag.Tensor(np.zeros((1, 2, 9, 3))))

    def test_conv2d_matches_direct_sum(self, rng):
        x = rng.standard_normal((1, 1, 4, 4))
        k = rng.standard_normal((1, 1, 2, 2))
        out = ag.conv2d(ag.Tensor(x), ag.Tensor(k)).data
        want = np.zeros((3, 3))
        for i in range(3):
            for j in range(3):
                want[i, j] = (x[0, 0, i:i + 2, j:j + 2] * k[0, 0]).sum()
        np.testing.assert_allclose(out[0, 0], want, rtol=1e-12)

    def test_conv2d_transpose_gradients(self, rng):
        x = rng.standard_normal((2, 3, 4, 3))
        k = rng.standard_normal((3, 2, 3, 3))
        b = rng.standard_normal(2)
        check(
            lambda xx, kk, bb: ag.tensor_sum(
                ag.conv2d_transpose(xx, kk, bb, stride=(2, 2))
            ),
            [x, k, b],
        )

    def test_conv2d_transpose_output_shape_doubling(self):
        x = ag.Tensor(np.zeros((1, 16, 1, 55), dtype=np.float32))
        k = ag.Tensor(np.zeros((16, 8, 5, 9), dtype=np.float32))
        assert ag.conv2d_transpose(x, k, stride=2).shape == (1, 8, 5, 117)

    def test_conv2d_transpose_channel_mismatch(self):
        x = ag.Tensor(np.zeros((1, 2, 4, 4)))
        with pytest.raises(ValueError, match="channel mismatch"):
            ag.conv2d_transpose(x, ag.Tensor(np.zeros((3, 1, 3, 3))))

    def test_conv_and_transpose_are_adjoint(self, rng):
        # <conv(x), y> == <x, conv_T(y)> for a shared kernel
        k = rng.standard_normal((4, 2, 3, 3))
        x = rng.standard_normal((2, 2, 9, 11))
        y = rng.standard_normal((2, 4, 4, 5))
        cx = ag.conv2d(ag.Tensor(x), ag.Tensor(k), stride=2).data
        cty = ag.conv2d_transpose(ag.Tensor(y), ag.Tensor(k), stride=2).data
        lhs = float((cx * y).sum())
        rhs = float((x * cty).sum())
        assert abs(lhs - rhs) < 1e-10 * max(abs(lhs), 1.0)

    def test_avg_pool2d_gradients(self, rng):
        x = rng.standard_normal((2, 3, 4, 8))
        w = rng.standard_normal((2, 3, 2, 2))
        check(
            lambda xx: ag.tensor_sum(ag.mul(ag.avg_pool2d(xx, (2, 4)), w)), [x]
        )

    def test_avg_pool2d_requires_exact_tiling(self):
        with pytest.raises(ValueError, match="tile"):
            ag.avg_pool2d(ag.Tensor(np.zeros((1, 1, 5, 4))), (2, 2))

    def test_dense_gradients(self, rng):
        x = rng.standard_normal((3, 4))
        w = rng.standard_normal((4, 2))
        b = rng.standard_normal(2)
        check(lambda xx, ww, bb: ag.tensor_sum(ag.dense(xx, ww, bb)), [x, w, b])


class TestGraphMechanics:
    def test_reused_tensor_accumulates(self, rng):
        x = rng.standard_normal(6)
        check(lambda t: (t * t + t).sum(), [x])

    def test_diamond_graph(self, rng):
        x = rng.standard_normal(5)
        def build(t):
            u = t * 2.0
            v = ag.sigmoid(t)
            return (u * v).sum()
        check(build, [x])

    def test_backward_needs_scalar(self):
        t = ag.Tensor(np.zeros(3), requires_grad=True)
        with pytest.raises(ValueError, match="scalar"):
            (t * 1.0).backward()

    def test_no_grad_blocks_tape(self):
        x = ag.Tensor(np.ones(3), requires_grad=True)
        with ag.no_grad():
            y = (x * 2.0).sum()
        assert y._backward_fn is None
        assert not y.requires_grad

    def test_detach_cuts_graph(self):
        x = ag.Tensor(np.ones(3), requires_grad=True)
        y = (x * 2.0).detach()
        (y * 1.0).sum().backward()
        assert x.grad is None

    def test_constant_leaves_get_no_grad(self):
        x = ag.Tensor(np.ones(3))
        (x * 3.0).sum().backward()
        assert x.grad is None

    def test_dtype_propagation(self):
        f32 = ag.conv2d(
            ag.Tensor(np.zeros((1, 1, 4, 4), np.float32)),
            ag.Tensor(np.zeros((1, 1, 2, 2), np.float32)),
        )
        f64 = ag.conv2d(
            ag.Tensor(np.zeros((1, 1, 4, 4), np.float64)),
            ag.Tensor(np.zeros((1, 1, 2, 2), np.float64)),
        )
        assert f32.dtype == np.float32
        assert f64.dtype == np.float64


class TestAdam:
    def test_single_step_matches_hand_update(self):
        p = ag.Parameter(np.array([1.0, -2.0]), "w", dtype=np.float64)
        opt = ag.Adam([p], lr=0.1, weight_decay=0.05)
        (p * p).sum().backward()
        g = np.array([2.0, -4.0]) + 2 * 0.05 * np.array([1.0, -2.0])
        m = 0.1 * g
        v = 0.001 * g * g
        mhat = m / 0.1
        vhat = v / 0.001
        want = np.array([1.0, -2.0]) - 0.1 * mhat / (np.sqrt(vhat) + 1e-8)
        opt.step()
        np.testing.assert_allclose(p.data, want, rtol=1e-12)

    def test_quadratic_convergence(self):
        p = ag.Parameter(np.array([5.0, -3.0]), "w", dtype=np.float64)
        opt = ag.Adam([p], lr=0.2)
        for _ in range(400):
            opt.zero_grad()
            (p * p).sum().backward()
            opt.step()
        assert float(np.abs(p.data).max()) < 1e-3

    def test_duplicate_parameter_names_rejected(self):
        a = ag.Parameter(np.zeros(2), "w")
        b = ag.Parameter(np.zeros(3), "w")
        with pytest.raises(ValueError, match="duplicate"):
            ag.Adam([a, b])

    def test_zero_grad_skips_update(self):
        p = ag.Parameter(np.array([1.0]), "w")
        before = p.data.copy()
        ag.Adam([p], lr=0.5).step()
        np.testing.assert_array_equal(p.data, before)
