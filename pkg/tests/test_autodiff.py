import numpy as np

from vidmark.autodiff import (Tensor, add, clip, concat, conv3d, div, getitem,
                              linear_selfadjoint, matmul, mse, mul, no_grad,
                              relu, resize3d, sandwich, sigmoid, sin, sqrt,
                              straight_through, sub, take_frames, tmean, tsum,
                              warp_bilinear)
from conftest import fd_gradient_check


def scalar_fd(f, x, eps=1e-6):
    g = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        fp = f().item()
        flat[i] = old - eps
        fm = f().item()
        flat[i] = old
        gf[i] = (fp - fm) / (2 * eps)
    return g


class TestElementwise:
    def test_add_mul_broadcast_grads(self, rng):
        a = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
        b = Tensor(rng.standard_normal((1, 4)), requires_grad=True)
        out = tsum(mul(add(a, b), b))
        out.backward()
        assert a.grad.shape == (3, 4)
        assert b.grad.shape == (1, 4)
        # d/db sum((a+b)*b) = sum_rows(a) + 2*3*b
        expect_b = a.data.sum(axis=0, keepdims=True) + 2 * 3 * b.data
        assert np.allclose(b.grad, expect_b)

    def test_div_pow_sqrt_sin(self, rng):
        x = Tensor(rng.random((5,)) + 0.5, requires_grad=True)

        def f():
            return tsum(div(sin(x), sqrt(mul(x, x) + 1.0)))

        fd_gradient_check(f, [x], rng, n_coords=5, tol=1e-4)

    def test_relu_sigmoid_clip(self, rng):
        x = Tensor(rng.standard_normal((20,)), requires_grad=True)

        def f():
            return tsum(clip(sigmoid(relu(x)), 0.1, 0.9))

        fd_gradient_check(f, [x], rng, n_coords=6, tol=1e-3)

    def test_mul_by_scalar_and_rsub(self):
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        out = tsum(sub(3.0, mul(x, 2.0)))
        out.backward()
        assert np.allclose(x.grad, [-2.0, -2.0])


class TestStructural:
    def test_matmul_grads(self, rng):
        a = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
        b = Tensor(rng.standard_normal((4, 2)), requires_grad=True)
        proj = rng.standard_normal((3, 2))

        def f():
            return tsum(mul(matmul(a, b), proj))

        f().backward()
        assert np.allclose(a.grad, proj @ b.data.T)
        assert np.allclose(b.grad, a.data.T @ proj)

    def test_concat_splits_grad(self, rng):
        a = Tensor(rng.standard_normal((2, 3)), requires_grad=True)
        b = Tensor(rng.standard_normal((2, 5)), requires_grad=True)
        out = concat([a, b], axis=1)
        out.backward(np.arange(16, dtype=np.float64).reshape(2, 8))
        assert np.allclose(a.grad, [[0, 1, 2], [8, 9, 10]])
        assert b.grad.shape == (2, 5)

    def test_getitem_scatter(self, rng):
        x = Tensor(rng.standard_normal((4, 4)), requires_grad=True)
        out = tsum(getitem(x, (slice(1, 3), slice(None, None, -1))))
        out.backward()
        expect = np.zeros((4, 4))
        expect[1:3] = 1
        assert np.allclose(x.grad, expect)

    def test_take_frames_accumulates_duplicates(self, rng):
        x = Tensor(rng.standard_normal((1, 1, 3, 2, 2)), requires_grad=True)
        out = tsum(take_frames(x, [0, 0, 2]))
        out.backward()
        assert np.allclose(x.grad[0, 0, 0], 2.0)
        assert np.allclose(x.grad[0, 0, 1], 0.0)
        assert np.allclose(x.grad[0, 0, 2], 1.0)

    def test_diamond_residual_grad(self, rng):
        # regression: seen-on-push topo sort dropped skip-path grads
        x = Tensor(rng.standard_normal((3,)), requires_grad=True)
        y = add(x, mul(x, x))  # x + x^2
        tsum(y).backward()
        assert np.allclose(x.grad, 1 + 2 * x.data)

    def test_deep_diamond_fd(self, rng):
        x = Tensor(rng.standard_normal((1, 2, 2, 6, 6)), requires_grad=True)
        w = Tensor(rng.standard_normal((2, 2, 3, 3, 3)) * 0.3, requires_grad=True)
        tgt = rng.standard_normal((1, 2, 2, 6, 6))

        def f():
            h = relu(conv3d(x, w, (1, 1, 1), (1, 1, 1)))
            out = add(x, conv3d(h, w, (1, 1, 1), (1, 1, 1)))
            return mse(out, tgt)

        fd_gradient_check(f, [x, w], rng, n_coords=8, tol=1e-3)


class TestCustomOps:
    def test_conv3d_fd(self, rng):
        x = Tensor(rng.standard_normal((1, 2, 3, 6, 6)), requires_grad=True)
        w = Tensor(rng.standard_normal((3, 2, 1, 3, 3)) * 0.4, requires_grad=True)
        tgt = rng.standard_normal((1, 3, 2, 3, 3))

        def f():
            return mse(conv3d(x, w, (2, 2, 2), (0, 1, 1)), tgt)

        fd_gradient_check(f, [x, w], rng, n_coords=8, tol=1e-3)

    def test_resize_fd(self, rng):
        x = Tensor(rng.standard_normal((1, 1, 2, 4, 4)), requires_grad=True)
        tgt = rng.standard_normal((1, 1, 3, 6, 2))

        def f():
            return mse(resize3d(x, (3, 6, 2)), tgt)

        fd_gradient_check(f, [x], rng, n_coords=8, tol=1e-3)

    def test_warp_fd(self, rng):
        x = Tensor(rng.standard_normal((1, 1, 2, 5, 5)), requires_grad=True)
        my = rng.uniform(-1, 5, (5, 5))
        mx = rng.uniform(-1, 5, (5, 5))
        tgt = rng.standard_normal((1, 1, 2, 5, 5))

        def f():
            return mse(warp_bilinear(x, my, mx), tgt)

        fd_gradient_check(f, [x], rng, n_coords=8, tol=1e-3)

    def test_sandwich_orthonormal_roundtrip(self, rng):
        from vidmark.distort import _dct_matrix
        A = _dct_matrix(8)
        x = Tensor(rng.standard_normal((2, 1, 1, 2, 2, 8, 8)), requires_grad=True)
        y = sandwich(sandwich(x, A), A.T)
        assert np.allclose(y.data, x.data, atol=1e-10)
        tgt = rng.standard_normal(x.shape)

        def f():
            return mse(sandwich(x, A), tgt)

        fd_gradient_check(f, [x], rng, n_coords=6, tol=1e-3)

    def test_straight_through(self, rng):
        x = Tensor(rng.standard_normal((4,)), requires_grad=True)
        hard = np.round(x.data)
        out = tsum(mul(straight_through(x, hard), 2.0))
        assert np.allclose(out.data, 2 * hard.sum())
        out.backward()
        assert np.allclose(x.grad, 2.0)

    def test_linear_selfadjoint(self, rng):
        k = np.array([0.25, 0.5, 0.25])

        def blur(v):
            vp = np.pad(v, 1)
            return sum(k[m] * vp[m:m + v.shape[0]] for m in range(3))

        x = Tensor(rng.standard_normal(6), requires_grad=True)
        proj = rng.standard_normal(6)
        out = tsum(mul(linear_selfadjoint(x, blur), proj))
        out.backward()
        assert np.allclose(x.grad, blur(proj))


class TestMode:
    def test_no_grad_builds_no_graph(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with no_grad():
            y = mul(x, 2.0)
        assert not y.requires_grad
        assert y._parents == ()

    def test_constant_inputs_not_tracked(self):
        x = Tensor(np.ones(3))
        y = mul(x, 2.0)
        assert not y.requires_grad

    def test_mean_scaling(self, rng):
        x = Tensor(rng.standard_normal((2, 3, 4)), requires_grad=True)
        tmean(x, axis=(1, 2)).backward(np.ones(2))
        assert np.allclose(x.grad, 1 / 12)
