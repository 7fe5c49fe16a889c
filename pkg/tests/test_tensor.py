import numpy as np
import pytest
from scipy.special import softmax as sp_softmax

from promptseg import tensor as T
from promptseg.errors import DimensionError
from promptseg.gradcheck import check_gradients
from promptseg.tensor import Tensor


def _param(rng, *shape, scale=1.0):
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True)


def _max_err(results):
    return max(r[4] for r in results)


def test_float64_preserved_and_float32_default():
    assert Tensor(np.zeros(2)).dtype == np.float64
    assert Tensor([1, 2]).dtype == np.float32
    assert Tensor(np.float64(3.0)).dtype == np.float64


def test_add_broadcast_backward_unbroadcasts(rng):
    a, b = _param(rng, 3, 4), _param(rng, 4)
    (a + b).sum().backward()
    assert b.grad.shape == (4,)
    np.testing.assert_allclose(b.grad, np.full(4, 3.0))


def test_matmul_shape_error_names_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(4, 5\)"):
        T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))


def test_shared_node_gradient_accumulates():
    x = Tensor(np.array([2.0]), requires_grad=True)
    y = x * x + x
    y.sum().backward()
    assert x.grad[0] == pytest.approx(5.0)


def test_no_grad_builds_no_graph():
    x = Tensor(np.ones(3), requires_grad=True)
    with T.no_grad():
        y = x * 2
    assert not y.requires_grad and not y._parents


def test_deep_chain_backward_is_iterative():
    x = Tensor(np.ones(1), requires_grad=True)
    y = x
    for _ in range(5000):
        y = y + 0.0
    y.sum().backward()
    assert x.grad[0] == 1.0


def test_softmax_matches_scipy(rng):
    x = rng.standard_normal((3, 7)) * 10
    np.testing.assert_allclose(T.softmax(Tensor(x), axis=-1).data, sp_softmax(x, axis=-1), rtol=1e-12)


def test_gelu_tanh_formula(rng):
    x = rng.standard_normal(50)
    ref = 0.5 * x * (1 + np.tanh(np.sqrt(2 / np.pi) * (x + 0.044715 * x ** 3)))
    np.testing.assert_allclose(T.gelu(Tensor(x)).data, ref, rtol=1e-12)


def test_sigmoid_and_softplus_are_overflow_safe():
    x = Tensor(np.array([-1000.0, 0.0, 1000.0]))
    with np.errstate(over="raise"):
        s = T.sigmoid(x).data
        sp = T.softplus(x).data
    np.testing.assert_allclose(s, [0.0, 0.5, 1.0])
    np.testing.assert_allclose(sp, [0.0, np.log(2), 1000.0])


def test_layer_norm_matches_formula(rng):
    x = rng.standard_normal((4, 6))
    g, b = rng.standard_normal(6), rng.standard_normal(6)
    mu, var = x.mean(-1, keepdims=True), x.var(-1, keepdims=True)
    ref = (x - mu) / np.sqrt(var + 1e-6) * g + b
    np.testing.assert_allclose(T.layer_norm(Tensor(x), Tensor(g), Tensor(b)).data, ref, rtol=1e-10)


def _conv_loop(x, w, b, stride, pad):
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho, wo = (h + 2 * pad - k) // stride + 1, (wd + 2 * pad - k) // stride + 1
    out = np.zeros((n, o, ho, wo))
    for i in range(ho):
        for j in range(wo):
            patch = xp[:, :, i * stride: i * stride + k, j * stride: j * stride + k]
            out[:, :, i, j] = np.einsum("nckl,ockl->no", patch, w)
    return out + (0 if b is None else b[None, :, None, None])


@pytest.mark.parametrize("stride,pad,k", [(1, 0, 1), (1, 1, 3), (2, 1, 3), (2, 0, 2)])
def test_conv2d_matches_direct_loop(rng, stride, pad, k):
    x = rng.standard_normal((2, 3, 9, 8))
    w = rng.standard_normal((4, 3, k, k))
    b = rng.standard_normal(4)
    got = T.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, pad=pad).data
    np.testing.assert_allclose(got, _conv_loop(x, w, b, stride, pad), rtol=1e-10, atol=1e-12)


def test_conv2d_unbatched_input(rng):
    x = rng.standard_normal((3, 6, 6))
    w = rng.standard_normal((2, 3, 3, 3))
    got = T.conv2d(Tensor(x), Tensor(w), pad=1).data
    np.testing.assert_allclose(got, _conv_loop(x[None], w, None, 1, 1)[0], rtol=1e-10)


def test_depthwise_matches_grouped_loop(rng):
    x = rng.standard_normal((2, 5, 6, 3))  # NHWC
    w = rng.standard_normal((3, 1, 3, 3))
    got = T.depthwise_conv2d(Tensor(x), Tensor(w)).data
    xc = x.transpose(0, 3, 1, 2)
    ref = np.concatenate([_conv_loop(xc[:, c:c + 1], w[c:c + 1], None, 1, 1) for c in range(3)], axis=1)
    np.testing.assert_allclose(got, ref.transpose(0, 2, 3, 1), rtol=1e-10, atol=1e-12)


def test_conv_transpose_2x2_matches_scatter(rng):
    x = rng.standard_normal((1, 3, 4, 5))
    w = rng.standard_normal((3, 2, 2, 2))
    ref = np.zeros((1, 2, 8, 10))
    for i in range(4):
        for j in range(5):
            ref[0, :, 2 * i: 2 * i + 2, 2 * j: 2 * j + 2] += np.einsum("c,cokl->okl", x[0, :, i, j], w)
    np.testing.assert_allclose(T.conv_transpose2x2(Tensor(x), Tensor(w)).data, ref, rtol=1e-10, atol=1e-12)


def _bilinear_loop(a, ho, wo):
    h, w = a.shape
    out = np.zeros((ho, wo))
    for i in range(ho):
        for j in range(wo):
            y = min(max((i + 0.5) * h / ho - 0.5, 0), h - 1)
            x = min(max((j + 0.5) * w / wo - 0.5, 0), w - 1)
            y0, x0 = int(np.floor(y)), int(np.floor(x))
            y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
            fy, fx = y - y0, x - x0
            out[i, j] = ((1 - fy) * (1 - fx) * a[y0, x0] + (1 - fy) * fx * a[y0, x1]
                         + fy * (1 - fx) * a[y1, x0] + fy * fx * a[y1, x1])
    return out


@pytest.mark.parametrize("shape,out", [((4, 4), (8, 8)), ((8, 6), (3, 5)), ((5, 7), (5, 7))])
def test_resize_bilinear_half_pixel(rng, shape, out):
    a = rng.standard_normal(shape)
    np.testing.assert_allclose(T.resize_bilinear_np(a, out), _bilinear_loop(a, *out), rtol=1e-10, atol=1e-12)


def test_batch_norm_running_stats_update(rng):
    x = rng.standard_normal((16, 3)) * 2 + 1
    rm, rv = np.zeros(3), np.ones(3)
    T.batch_norm(Tensor(x), Tensor(np.ones(3)), Tensor(np.zeros(3)), rm, rv, training=True)
    np.testing.assert_allclose(rm, 0.1 * x.mean(0))
    np.testing.assert_allclose(rv, 0.9 + 0.1 * x.var(0, ddof=1))


def test_flop_counter_counts_matmul():
    a, b = Tensor(np.ones((2, 3))), Tensor(np.ones((3, 5)))
    with T.count_flops() as fc:
        T.matmul(a, b)
    assert fc.flops == 2 * 2 * 3 * 5


def test_window_partition_rejects_non_divisible():
    with pytest.raises(DimensionError):
        T.window_partition(Tensor(np.zeros((6, 8, 2))), 4)


def test_window_partition_row_major_tiling():
    x = np.arange(16.0).reshape(4, 4, 1)
    wins = T.window_partition(Tensor(x), 2).data
    np.testing.assert_array_equal(wins[1, :, :, 0], [[2, 3], [6, 7]])


GRAD_CASES = {
    "mul_div": (lambda a, b: T.tsum(a * b / (b * b + 1.0)), [(3, 4), (3, 4)]),
    "exp_log": (lambda a: T.tsum(T.log(T.exp(a) + 1.0)), [(5,)]),
    "power": (lambda a: T.tsum((a * a + 1.0) ** 1.5), [(5,)]),
    "sigmoid": (lambda a: T.tsum(T.sigmoid(a) * a), [(6,)]),
    "softplus": (lambda a: T.tsum(T.softplus(a) * a), [(6,)]),
    "gelu": (lambda a: T.tsum(T.gelu(a) * a), [(6,)]),
    "abs": (lambda a: T.tsum(T.tabs(a + 0.05)), [(6,)]),
    "mean_axis": (lambda a: T.tsum(T.mean(a, axis=1) ** 2), [(3, 4)]),
    "reshape_transpose": (lambda a: T.tsum(T.transpose(T.reshape(a, (2, 6)), (1, 0)) * np.arange(12.0).reshape(6, 2)), [(3, 4)]),
    "getitem_basic": (lambda a: T.tsum(a[1:, ::2] ** 2), [(3, 4)]),
    "getitem_fancy": (lambda a: T.tsum(a[np.array([0, 2, 0])] ** 2), [(3, 4)]),
    "concat": (lambda a, b: T.tsum(T.concat([a, b], axis=1) ** 2), [(2, 3), (2, 2)]),
    "pad_roll": (lambda a: T.tsum(T.roll(T.pad(a, ((1, 0), (0, 2))), (1, -1), (0, 1)) * np.arange(20.0).reshape(4, 5)), [(3, 3)]),
    "matmul_batched": (lambda a, b: T.tsum(T.matmul(a, b) ** 2), [(2, 3, 4), (2, 4, 5)]),
    "linear": (lambda x, w, b: T.tsum(T.linear(x, w, b) ** 2), [(3, 4), (5, 4), (5,)]),
    "softmax": (lambda a: T.tsum(T.softmax(a, axis=-1) * np.arange(5.0)), [(3, 5)]),
    "layer_norm": (lambda x, g, b: T.tsum(T.layer_norm(x, g, b) * np.arange(6.0)), [(4, 6), (6,), (6,)]),
    "conv2d": (lambda x, w, b: T.tsum(T.conv2d(x, w, b, stride=2, pad=1) ** 2), [(1, 2, 5, 5), (3, 2, 3, 3), (3,)]),
    "depthwise": (lambda x, w, b: T.tsum(T.depthwise_conv2d(x, w, b) ** 2), [(1, 4, 4, 2), (2, 1, 3, 3), (2,)]),
    "conv_transpose": (lambda x, w, b: T.tsum(T.conv_transpose2x2(x, w, b) ** 2), [(1, 2, 3, 3), (2, 3, 2, 2), (3,)]),
    "interpolate": (lambda a: T.tsum(T.interpolate(a, (7, 5)) ** 2), [(1, 2, 4, 3)]),
    "window_roundtrip": (lambda a: T.tsum(T.window_reverse(T.window_partition(a, 2) * 2.0, 2, 4, 4) ** 2), [(4, 4, 2)]),
}


@pytest.mark.parametrize("name", sorted(GRAD_CASES))
def test_op_gradients_match_finite_differences(name):
    fn, shapes = GRAD_CASES[name]
    rng = np.random.default_rng(7)
    ts = [_param(rng, *s) for s in shapes]
    results = check_gradients(lambda: fn(*ts), ts, h=1e-5)
    assert _max_err(results) < 1e-5, name


def test_batch_norm_training_gradient():
    rng = np.random.default_rng(3)
    x, g, b = _param(rng, 6, 3), _param(rng, 3), _param(rng, 3)
    w = rng.standard_normal((6, 3))

    def f():
        return T.tsum(T.batch_norm(x, g, b, np.zeros(3), np.ones(3), training=True) * w)

    assert _max_err(check_gradients(f, [x, g, b], h=1e-5)) < 1e-5


def test_ladder_error_recovers_sharp_curvature():
    from promptseg.gradcheck import ladder_error, numerical_grad, relative_error
    arr = np.array([0.0])
    f = lambda: np.sqrt(1e-8 + (arr[0] + 1e-4) ** 2)  # kink smoothed on a 1e-4 scale
    analytic = 1e-4 / np.sqrt(2e-8)
    assert relative_error(analytic, numerical_grad(f, arr, (0,), 1e-3)) > 0.5
    assert ladder_error(f, arr, (0,), analytic) < 1e-5
