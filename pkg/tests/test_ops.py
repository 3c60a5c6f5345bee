import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from advlab import ops
from advlab.gradcheck import grad_check
from advlab.tensor import ShapeError, Tape, Tensor

RNG = np.random.default_rng(1234)


def _t(shape, scale=1.0, rng=RNG):
    return Tensor((rng.normal(size=shape) * scale).astype(np.float32))


def _weighted_sum(y, seed=0):
    """Reduce to a scalar through fixed random weights so output grads vary."""
    r = np.random.default_rng(seed).normal(size=y.shape)
    return ops.reduce_sum(ops.mul(y, Tensor(r.astype(y.dtype))))


# ---------------------------------------------------------------------------
# forward-value oracles


def test_dense_identity_weights_passthrough():
    v = _t((1, 6))
    w = Tensor(np.eye(6, dtype=np.float32))
    b = Tensor(np.zeros(6, dtype=np.float32))
    out = ops.dense(v, w, b)
    assert np.array_equal(out.data, v.data)


def test_conv2d_ones_kernel_on_constant_image():
    # 3x3 all-ones kernel, constant-1 5x5 image, padding 1 / stride 1:
    # interior counts all 9 taps, corners only 4.
    x = Tensor(np.ones((1, 5, 5, 1), dtype=np.float32))
    w = Tensor(np.ones((3, 3, 1, 1), dtype=np.float32))
    y = ops.conv2d(x, w, stride=1, padding=1).data[0, :, :, 0]
    assert y[2, 2] == 9.0
    assert y[0, 0] == 4.0 and y[0, 4] == 4.0 and y[4, 0] == 4.0 and y[4, 4] == 4.0
    assert y[0, 2] == 6.0


def test_conv2d_stride_output_shape():
    x = _t((2, 8, 8, 3))
    w = _t((3, 3, 3, 5))
    assert ops.conv2d(x, w, stride=2, padding=1).shape == (2, 4, 4, 5)
    assert ops.conv2d(x, w, stride=1, padding=1).shape == (2, 8, 8, 5)


def test_conv2d_shape_error_names_primitive():
    x = _t((1, 8, 8, 2))
    w = _t((3, 3, 3, 4))
    with pytest.raises(ShapeError, match="conv2d"):
        ops.conv2d(x, w)


def test_patchify_token_count():
    x = _t((2, 16, 16, 1))
    w = _t((64, 32))
    b = Tensor(np.zeros(32, dtype=np.float32))
    assert ops.patchify(x, w, b, patch=8).shape == (2, 4, 32)
    with pytest.raises(ShapeError, match="patchify"):
        ops.patchify(_t((2, 15, 15, 1)), w, b, patch=8)


def test_max_pool_values():
    x = np.arange(16, dtype=np.float32).reshape(1, 4, 4, 1)
    y = ops.max_pool(Tensor(x)).data[0, :, :, 0]
    assert np.array_equal(y, np.array([[5, 7], [13, 15]], dtype=np.float32))


def test_bce_matches_reference():
    z = np.array([0.0, 2.0, -3.0], dtype=np.float32)
    t = np.array([1.0, 0.0, 1.0], dtype=np.float32)
    ref = np.mean(-(t * np.log(1 / (1 + np.exp(-z))) + (1 - t) * np.log(1 - 1 / (1 + np.exp(-z)))))
    out = ops.binary_cross_entropy_with_logits(Tensor(z), t).item()
    assert out == pytest.approx(ref, rel=1e-5)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_softmax_rows_sum_to_one(seed):
    rng = np.random.default_rng(seed)
    x = Tensor((rng.normal(size=(3, 7)) * 5).astype(np.float32))
    y = ops.softmax(x).data
    assert np.all(y >= 0)
    np.testing.assert_allclose(y.sum(axis=-1), 1.0, atol=1e-6)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_layer_norm_statistics(seed):
    rng = np.random.default_rng(seed)
    d = 64
    x = Tensor((rng.normal(size=(4, d)) * 3 + 1).astype(np.float32))
    gamma = Tensor(np.ones(d, dtype=np.float32))
    beta = Tensor(np.zeros(d, dtype=np.float32))
    y = ops.layer_norm(x, gamma, beta).data
    assert np.all(np.abs(y.mean(axis=-1)) <= 1e-5)
    assert np.all(np.abs(y.var(axis=-1) - 1.0) <= 1e-4)


# ---------------------------------------------------------------------------
# finite-difference checks, one per primitive


def test_fd_relu():
    x = _t((4, 5))
    rep = grad_check(lambda t: _weighted_sum(ops.relu(t)), [x])
    assert rep.passed, rep.worst()


def test_fd_gelu():
    rep = grad_check(lambda t: _weighted_sum(ops.gelu(t)), [_t((4, 5))])
    assert rep.passed, rep.worst()


def test_fd_softmax():
    rep = grad_check(lambda t: _weighted_sum(ops.softmax(t)), [_t((3, 6))])
    assert rep.passed, rep.worst()


def test_fd_dense():
    x, w, b = _t((3, 7)), _t((7, 4)), _t((4,))
    rep = grad_check(lambda *a: _weighted_sum(ops.dense(*a)), [x, w, b])
    assert rep.passed, rep.worst()


def test_fd_layer_norm():
    x, g, b = _t((3, 8)), _t((8,)), _t((8,))
    rep = grad_check(lambda *a: _weighted_sum(ops.layer_norm(*a)), [x, g, b])
    assert rep.passed, rep.worst()


def test_fd_attention():
    q, k, v = _t((1, 2, 5, 4)), _t((1, 2, 5, 4)), _t((1, 2, 5, 4))
    rep = grad_check(
        lambda *a: _weighted_sum(ops.scaled_dot_product_attention(*a)), [q, k, v]
    )
    assert rep.passed, rep.worst()


@pytest.mark.parametrize("stride,padding", [(1, 1), (2, 0), (2, 1)])
def test_fd_conv2d(stride, padding):
    x, w, b = _t((2, 6, 6, 2)), _t((3, 3, 2, 3), scale=0.5), _t((3,))
    rep = grad_check(
        lambda *a: _weighted_sum(ops.conv2d(*a, stride=stride, padding=padding)),
        [x, w, b],
    )
    assert rep.passed, rep.worst()


def test_fd_patchify():
    x, w, b = _t((1, 8, 8, 1)), _t((16, 6), scale=0.5), _t((6,))
    rep = grad_check(lambda *a: _weighted_sum(ops.patchify(*a, patch=4)), [x, w, b])
    assert rep.passed, rep.worst()


def test_fd_global_average_pool():
    rep = grad_check(
        lambda t: _weighted_sum(ops.global_average_pool(t, axes=(1, 2))),
        [_t((2, 4, 4, 3))],
    )
    assert rep.passed, rep.worst()
    rep = grad_check(
        lambda t: _weighted_sum(ops.global_average_pool(t, axes=(1,))), [_t((2, 5, 3))]
    )
    assert rep.passed, rep.worst()


def test_fd_max_pool():
    rep = grad_check(lambda t: _weighted_sum(ops.max_pool(t)), [_t((2, 4, 4, 2))])
    assert rep.passed, rep.worst()


def test_fd_bce():
    z = _t((8,))
    t = np.random.default_rng(5).integers(0, 2, size=8).astype(np.float64)
    for reduction in ("mean", "sum"):
        rep = grad_check(
            lambda a: ops.binary_cross_entropy_with_logits(a, t, reduction=reduction),
            [z],
        )
        assert rep.passed, rep.worst()


def test_fd_add_suffix_broadcast():
    x, b = _t((3, 4, 5)), _t((5,))
    rep = grad_check(lambda *a: _weighted_sum(ops.add(*a)), [x, b])
    assert rep.passed, rep.worst()


def test_fd_mul_and_reshape():
    x, y = _t((4, 6)), _t((4, 6))
    rep = grad_check(lambda *a: _weighted_sum(ops.mul(*a)), [x, y])
    assert rep.passed, rep.worst()
    rep = grad_check(lambda t: _weighted_sum(ops.reshape(t, (8, 3))), [_t((4, 6))])
    assert rep.passed, rep.worst()


def test_fd_resize_pad():
    x = _t((2, 8, 8, 1))
    sizes = np.array([6, 7])
    offs = np.array([1, 0])
    rep = grad_check(
        lambda t: _weighted_sum(ops.resize_pad(t, sizes, sizes, offs, offs, 8)), [x]
    )
    assert rep.passed, rep.worst()


def test_fd_downscale_upscale():
    rep = grad_check(
        lambda t: _weighted_sum(ops.downscale_upscale(t, np.array([5, 6]))),
        [_t((2, 8, 8, 1))],
    )
    assert rep.passed, rep.worst()


def test_fd_gaussian_blur():
    rep = grad_check(
        lambda t: _weighted_sum(ops.gaussian_blur(t, np.array([0.8, 1.4]), radius=3)),
        [_t((2, 8, 8, 1))],
    )
    assert rep.passed, rep.worst()


# ---------------------------------------------------------------------------
# composite graphs


def test_fd_dense_relu_toy_net():
    x = _t((1, 10))
    w1, b1 = _t((10, 8)), _t((8,))
    w2, b2 = _t((8, 1)), _t((1,))

    def net(xi, wa, ba, wb, bb):
        h = ops.relu(ops.dense(xi, wa, ba))
        return ops.reduce_sum(ops.dense(h, wb, bb))

    rep = grad_check(net, [x, w1, b1, w2, b2])
    assert rep.passed, rep.worst()


def test_fd_softmax_bce_pipeline():
    x = _t((2, 6))
    t = np.random.default_rng(9).integers(0, 2, size=(2, 6)).astype(np.float64)

    def net(xi):
        return ops.binary_cross_entropy_with_logits(ops.softmax(xi), t)

    rep = grad_check(net, [x])
    assert rep.passed, rep.worst()


def test_relu_kink_coordinate_excluded():
    x = Tensor(np.array([0.0, 1.0, -1.0], dtype=np.float32))
    w = np.array([1.0, 0.5, 0.5])

    def net(t):
        return ops.reduce_sum(ops.mul(ops.relu(t), Tensor(w)))

    rep = grad_check(net, [x])
    excluded = {c.coord for c in rep.excluded}
    assert (0,) in excluded  # the coordinate sitting exactly on the kink
    assert rep.passed


def test_gradcheck_flags_nonfinite_without_crash():
    def net(t):
        sq = ops.mul(t, t)  # 1e200 ** 2 overflows even at float64
        return ops.reduce_sum(ops.mul(sq, sq))

    rep = grad_check(net, [Tensor(np.array([1e200], dtype=np.float64))])
    assert not rep.passed
    assert any(c.status == "nonfinite" for c in rep.flagged)


# ---------------------------------------------------------------------------
# kernel backend parity


def test_numba_and_numpy_kernels_agree():
    numba_impl = pytest.importorskip("advlab.kernels.numba_impl")
    from advlab.kernels import numpy_impl

    rng = np.random.default_rng(7)
    xp = rng.normal(size=(2, 9, 9, 3)).astype(np.float32)
    for s in (1, 2):
        a = numpy_impl.im2col(xp, 3, s)
        b = numba_impl.im2col(xp, 3, s)
        assert np.array_equal(a, b)
        dc = rng.normal(size=a.shape).astype(np.float32)
        np.testing.assert_allclose(
            numpy_impl.col2im_add(dc, 9, 9, s), numba_impl.col2im_add(dc, 9, 9, s), atol=1e-6
        )

    x = rng.normal(size=(2, 8, 8, 2)).astype(np.float32)
    ya, ia = numpy_impl.maxpool2x2(x)
    yb, ib = numba_impl.maxpool2x2(x)
    assert np.array_equal(ya, yb) and np.array_equal(ia, ib)

    sizes = np.array([6, 8])
    offs = np.array([1, 0])
    np.testing.assert_allclose(
        numpy_impl.resize_pad(x, 8, sizes, sizes, offs, offs),
        numba_impl.resize_pad(x, 8, sizes, sizes, offs, offs),
        atol=1e-6,
    )
    np.testing.assert_allclose(
        numpy_impl.downscale_upscale(x, sizes),
        numba_impl.downscale_upscale(x, sizes),
        atol=1e-6,
    )
    sig = np.array([0.7, 1.3])
    np.testing.assert_allclose(
        numpy_impl.gaussian_blur(x, sig, 3), numba_impl.gaussian_blur(x, sig, 3), atol=1e-6
    )
