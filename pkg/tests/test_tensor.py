import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from spikefuse import tensor as tf
from spikefuse.gradcheck import grad_check
from spikefuse.losses import cross_entropy
from spikefuse.neuron import LIF, LifConfig
from spikefuse.nn import BatchNorm, Linear, Module
from spikefuse.tensor import DegenerateBatchError, ShapeError, Tensor


def leaf(x):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=True)


# -- oracles -----------------------------------------------------------------

def conv_oracle(x, w, stride, pad):
    B, C, H, W = x.shape
    O, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    Ho = (H + 2 * pad - kh) // stride + 1
    Wo = (W + 2 * pad - kw) // stride + 1
    out = np.zeros((B, O, Ho, Wo))
    for b in range(B):
        for o in range(O):
            for i in range(Ho):
                for j in range(Wo):
                    patch = xp[b, :, i * stride:i * stride + kh, j * stride:j * stride + kw]
                    out[b, o, i, j] = np.sum(patch * w[o])
    return out


def maxpool_grad_oracle(x, k, s):
    """Gradient of sum(maxpool(x)): one unit per window at its first argmax."""
    H, W = x.shape
    g = np.zeros_like(x)
    for i in range(0, H - k + 1, s):
        for j in range(0, W - k + 1, s):
            best = None
            for di in range(k):
                for dj in range(k):
                    if best is None or x[i + di, j + dj] > x[best]:
                        best = (i + di, j + dj)
            g[best] += 1.0
    return g


# -- matmul --------------------------------------------------------------------

def test_matmul_identity(rng, f64):
    x = rng.normal(size=(2, 2))
    assert np.array_equal(tf.matmul(Tensor(np.eye(2)), Tensor(x)).data, x)


def test_matmul_hand_contraction(f64):
    out = tf.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[5.0, 6.0], [7.0, 8.0]]))
    assert np.array_equal(out.data, [[19.0, 22.0], [43.0, 50.0]])


def test_matmul_shape_error_names_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        tf.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_batched_backward(rng, f64):
    a, b = leaf(rng.normal(size=(3, 2, 4))), leaf(rng.normal(size=(4, 5)))
    g = rng.normal(size=(3, 2, 5))
    (tf.matmul(a, b) * g).sum().backward()
    assert np.allclose(a.grad, g @ b.data.T)
    assert np.allclose(b.grad, np.einsum("bik,bij->kj", a.data, g))


# -- conv2d --------------------------------------------------------------------

def test_conv_zero_input(rng, f64):
    out = tf.conv2d(Tensor(np.zeros((1, 2, 5, 5))), Tensor(rng.normal(size=(3, 2, 3, 3))), Tensor(np.zeros(3)), 1, 1)
    assert np.all(out.data == 0)


def test_conv_unit_kernel_is_identity(rng, f64):
    x = rng.normal(size=(2, 1, 4, 4))
    out = tf.conv2d(Tensor(x), Tensor(np.ones((1, 1, 1, 1))))
    assert np.array_equal(out.data, x)


def test_conv_ones_window_sum(f64):
    out = tf.conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.ones((1, 1, 2, 2))))
    expected = conv_oracle(np.ones((1, 1, 3, 3)), np.ones((1, 1, 2, 2)), 1, 0)
    assert np.array_equal(expected, np.full((1, 1, 2, 2), 4.0))
    assert np.array_equal(out.data, expected)


@pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1), (2, 0)])
def test_conv_matches_sliding_window_oracle(rng, f64, stride, pad):
    x, w = rng.normal(size=(2, 3, 7, 6)), rng.normal(size=(4, 3, 3, 3))
    out = tf.conv2d(Tensor(x), Tensor(w), None, stride, pad)
    assert out.shape[2:] == ((7 + 2 * pad - 3) // stride + 1, (6 + 2 * pad - 3) // stride + 1)
    assert np.allclose(out.data, conv_oracle(x, w, stride, pad), atol=1e-12)


def test_conv_kernel_larger_than_input():
    with pytest.raises(ShapeError, match="larger"):
        tf.conv2d(Tensor(np.ones((1, 1, 2, 2))), Tensor(np.ones((1, 1, 3, 3))))


# -- maxpool -------------------------------------------------------------------

def test_maxpool_constant(f64):
    out = tf.maxpool2d(Tensor(np.full((1, 1, 4, 4), 2.5)), 2)
    assert out.shape == (1, 1, 2, 2) and np.all(out.data == 2.5)


def test_maxpool_single_window(f64):
    assert tf.maxpool2d(Tensor([[1.0, 2.0], [3.0, 4.0]]), 2).data.item() == 4.0


def test_maxpool_tie_routes_to_first_occurrence(f64):
    x = np.array([[4.0, 1.0, 0.0, 2.0], [4.0, 3.0, 2.0, 2.0]])
    t = leaf(x)
    tf.maxpool2d(t, 2).sum().backward()
    assert np.array_equal(t.grad, maxpool_grad_oracle(x, 2, 2))
    assert t.grad[0, 0] == 1 and t.grad[1, 0] == 0 and t.grad[0, 3] == 1


@pytest.mark.parametrize("k,s", [(2, 2), (3, 1), (2, 1), (3, 2)])
def test_maxpool_grad_matches_window_oracle(f64, k, s):
    x = np.random.default_rng(5).integers(0, 3, size=(6, 7)).astype(float)  # many ties
    t = leaf(x)
    tf.maxpool2d(t, k, s).sum().backward()
    assert np.array_equal(t.grad, maxpool_grad_oracle(x, k, s))


def test_maxpool_window_too_large():
    with pytest.raises(ShapeError):
        tf.maxpool2d(Tensor(np.ones((1, 1, 2, 2))), 3)


# -- batchnorm -----------------------------------------------------------------

def _bn(x, gamma=1.0, beta=0.0, training=True, axis=-1):
    d = x.shape[axis]
    rm, rv = np.zeros(d), np.ones(d)
    out = tf.batchnorm(Tensor(x), Tensor(np.full(d, gamma)), Tensor(np.full(d, beta)), rm, rv, axis, training)
    return out, rm, rv


def test_batchnorm_standardized_input_passes(rng, f64):
    x = rng.normal(size=(500, 3))
    x = (x - x.mean(0)) / x.std(0)
    out, _, _ = _bn(x)
    assert np.allclose(out.data, x, atol=1e-5)


def test_batchnorm_zero_gamma_gives_beta(rng, f64):
    out, _, _ = _bn(rng.normal(size=(6, 4)), gamma=0.0, beta=0.7)
    assert np.all(out.data == 0.7)


def test_batchnorm_hand_values(f64):
    out, rm, rv = _bn(np.array([[1.0], [2.0], [3.0]]))
    # mean 2, population variance 2/3
    expected = (np.array([1.0, 2.0, 3.0]) - 2.0) / np.sqrt(2.0 / 3.0 + 1e-5)
    assert np.allclose(out.data[:, 0], expected, atol=1e-12)
    assert np.allclose(out.data[:, 0], [-1.2247, 0.0, 1.2247], atol=1e-4)
    assert np.isclose(rm[0], 0.2) and np.isclose(rv[0], 0.9 + 0.1 * 1.0)


def test_batchnorm_folds_time_into_batch(rng, f64):
    x = rng.normal(size=(4, 3, 5, 2))  # [T,B,N,D]
    out, _, _ = _bn(x)
    flat = x.reshape(-1, 2)
    ref = (flat - flat.mean(0)) / np.sqrt(flat.var(0) + 1e-5)
    assert np.allclose(out.data.reshape(-1, 2), ref)


def test_batchnorm_channel_axis(rng, f64):
    x = rng.normal(size=(2, 3, 4, 5, 5))  # [T,B,C,H,W]
    out, _, _ = _bn(x, axis=2)
    moved = np.moveaxis(x, 2, -1).reshape(-1, 4)
    ref = (moved - moved.mean(0)) / np.sqrt(moved.var(0) + 1e-5)
    assert np.allclose(np.moveaxis(out.data, 2, -1).reshape(-1, 4), ref)


def test_batchnorm_eval_uses_running_stats(f64):
    x = np.array([[1.0], [3.0]])
    rm, rv = np.array([2.0]), np.array([4.0])
    out = tf.batchnorm(Tensor(x), Tensor(np.ones(1)), Tensor(np.zeros(1)), rm, rv, -1, False)
    assert np.allclose(out.data[:, 0], np.array([-1.0, 1.0]) / np.sqrt(4.0 + 1e-5))
    assert rm[0] == 2.0 and rv[0] == 4.0


def test_batchnorm_single_sample_train_rejected():
    with pytest.raises(DegenerateBatchError):
        _bn(np.ones((1, 3)))


# -- spike function ------------------------------------------------------------

def test_heaviside_values(f64):
    out = tf.heaviside_surrogate(Tensor([-0.3, 0.7, 0.0]), 4.0)
    assert out.data.tolist() == [0.0, 1.0, 1.0]


def test_surrogate_derivative_at_zero(f64):
    v = leaf([0.0])
    tf.heaviside_surrogate(v, 4.0).sum().backward()
    assert v.grad[0] == pytest.approx(1.0, abs=1e-15)


def test_spike_binarity_on_1000_random_tensors():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        shape = tuple(rng.integers(1, 6, size=rng.integers(1, 4)))
        v = Tensor(rng.normal(scale=rng.uniform(0.01, 100), size=shape))
        out = tf.heaviside_surrogate(v, 4.0).data
        assert np.all((out == 0.0) | (out == 1.0))


@given(hnp.arrays(np.float64, hnp.array_shapes(max_dims=3, max_side=5),
                  elements=st.floats(-1e6, 1e6, allow_nan=False)))
def test_spike_binarity_property(values):
    out = tf.heaviside_surrogate(Tensor(values), 4.0).data
    assert set(np.unique(out)) <= {0.0, 1.0}


# -- reductions and expansion --------------------------------------------------

def test_reduce_mean_ones(f64):
    out = tf.reduce_mean(Tensor(np.ones((3, 4, 5))), 1)
    assert out.shape == (3, 5) and np.all(out.data == 1.0)


def test_reduce_mean_pair(f64):
    assert tf.reduce_mean(Tensor([1.0, 3.0]), 0).item() == 2.0


def test_reduce_mean_loop_oracle(rng, f64):
    x = rng.normal(size=(3, 4))
    for axis in (0, 1):
        out = tf.reduce_mean(Tensor(x), axis).data
        expect = []
        for i in range(x.shape[1 - axis]):
            acc = 0.0
            for j in range(x.shape[axis]):
                acc += x[j, i] if axis == 0 else x[i, j]
            expect.append(acc / x.shape[axis])
        assert np.allclose(out, expect, atol=1e-12, rtol=0)


def test_reduce_mean_backward_distributes(f64):
    x = leaf(np.ones((2, 4)))
    tf.reduce_mean(x, 1).sum().backward()
    assert np.all(x.grad == 0.25)


def test_reduce_mean_bad_axis():
    with pytest.raises(ShapeError):
        tf.reduce_mean(Tensor(np.ones((2, 2))), 2)


def test_broadcast_expand_unit_extent(rng, f64):
    x = rng.normal(size=(2, 3))
    out = tf.broadcast_expand(Tensor(x), 1, 1)
    assert out.shape == (2, 1, 3) and np.array_equal(out.data[:, 0], x)


def test_broadcast_expand_scalar(f64):
    assert tf.broadcast_expand(Tensor(2.0), 0, 3).data.tolist() == [2.0, 2.0, 2.0]


def test_broadcast_expand_backward_sums(f64):
    x = leaf([1.0, 2.0])
    (tf.broadcast_expand(x, 0, 3) * Tensor(np.arange(6.0).reshape(3, 2))).sum().backward()
    assert x.grad.tolist() == [6.0, 9.0]


def test_broadcast_expand_rejects_zero_extent():
    with pytest.raises(ShapeError):
        tf.broadcast_expand(Tensor([1.0]), 0, 0)


@given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 2), st.floats(-10, 10))
def test_mean_then_expand_is_identity_on_constant_axis(a, b, axis, c):
    base = np.random.default_rng(a * 10 + b).normal(size=(a, b))
    x = np.repeat(np.expand_dims(base, axis), 3, axis=axis) + c
    out = tf.broadcast_expand(tf.reduce_mean(Tensor(x), axis), axis, 3).data
    assert np.allclose(out, x, rtol=0, atol=1e-12)


# -- backward ------------------------------------------------------------------

def test_backward_sum(f64):
    w = leaf(np.arange(5.0))
    w.sum().backward()
    assert np.array_equal(w.grad, np.ones(5))


def test_backward_square(f64):
    w = leaf([1.0, -2.0])
    (w * w).sum().backward()
    assert w.grad.tolist() == [2.0, -4.0]


def test_backward_needs_scalar():
    with pytest.raises(ShapeError):
        leaf([1.0, 2.0]).backward()


def test_backward_accumulates_until_zeroed(f64):
    w = leaf([1.0, -2.0])
    loss = (w * w).sum()
    loss.backward()
    loss.backward()
    assert w.grad.tolist() == [4.0, -8.0]
    w.zero_grad()
    loss.backward()
    assert w.grad.tolist() == [2.0, -4.0]


def test_shared_subexpression_gradient(f64):
    w = leaf([3.0])
    y = w * w
    (y + y * w).sum().backward()  # w^2 + w^3
    assert w.grad[0] == pytest.approx(2 * 3 + 3 * 9)


@settings(max_examples=50)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 10_000))
def test_backward_is_linear(a, b, seed):
    rng = np.random.default_rng(seed)
    with tf.default_dtype(np.float64):
        w = leaf(rng.normal(size=(3, 2)))
        x = Tensor(rng.normal(size=(4, 3)))

        def f():
            return (tf.sigmoid(tf.matmul(x, w)) * 2.0).sum()

        def g():
            return (tf.matmul(x, w) ** 2).mean()

        f().backward()
        gf = w.grad.copy()
        w.zero_grad()
        g().backward()
        gg = w.grad.copy()
        w.zero_grad()
        (f() * a + g() * b).backward()
        assert np.allclose(w.grad, a * gf + b * gg, rtol=0, atol=1e-12)


def test_no_grad_builds_no_graph(f64):
    w = leaf([1.0])
    with tf.no_grad():
        y = w * 2.0
    assert not y.requires_grad and y.is_leaf


def test_log_softmax_and_l2_normalize_gradients(rng, f64):
    x = leaf(rng.normal(size=(3, 4)))
    g = rng.normal(size=(3, 4))
    for op in (tf.log_softmax, tf.l2_normalize):
        x.zero_grad()
        (op(x, -1) * g).sum().backward()
        num = np.zeros_like(x.data)
        for idx in np.ndindex(x.shape):
            d = np.zeros_like(x.data)
            d[idx] = 1e-6
            num[idx] = ((op(Tensor(x.data + d), -1).data - op(Tensor(x.data - d), -1).data) * g).sum() / 2e-6
        assert np.allclose(x.grad, num, atol=1e-8)


def test_l2_normalize_zero_vector_passthrough(f64):
    x = leaf(np.zeros((1, 3)))
    out = tf.l2_normalize(x, -1)
    assert np.all(out.data == 0)
    out.sum().backward()
    assert np.all(x.grad == 1.0)


# -- finite-difference harness -------------------------------------------------

class TwoLayer(Module):
    def __init__(self):
        super().__init__()
        self.fc1 = Linear(3, 5, 0, "fc1")
        self.bn = BatchNorm(5, "bn")
        self.lif = LIF(LifConfig(mode="relaxed"))
        self.fc2 = Linear(5, 3, 0, "fc2")

    def forward(self, x):
        h = self.lif(self.bn(self.fc1(x)))  # [T,B,5]
        return tf.reduce_mean(self.fc2(h), 0)


def _two_layer_loss(model, batch):
    x, y = batch
    if x.shape[-1] != 3:
        raise ShapeError(f"expected 3 input features, got {x.shape}")
    return cross_entropy(model(Tensor(x)), y)


def test_relaxed_two_layer_net_matches_finite_differences(f64):
    model = TwoLayer()
    rng = np.random.default_rng(3)
    batch = (rng.normal(size=(3, 6, 3)) * 2.0, rng.integers(0, 3, size=6))
    report = grad_check(model, batch, _two_layer_loss)
    assert len(report.errors) == len(model.parameters())
    assert report.max_relative_error < 1e-4


def test_grad_check_empty_model():
    report = grad_check(Module(), None, lambda m, b: Tensor(0.0))
    assert report.errors == [] and report.max_relative_error == 0.0


def test_grad_check_mismatched_batch(f64):
    with pytest.raises(ShapeError):
        grad_check(TwoLayer(), (np.zeros((2, 4, 5)), np.zeros(4, dtype=int)), _two_layer_loss)


def test_grad_check_rejects_float32():
    with tf.default_dtype(np.float32):
        model = TwoLayer()
    with pytest.raises(ValueError, match="float64"):
        grad_check(model, (np.zeros((2, 4, 3)), np.zeros(4, dtype=int)), _two_layer_loss)


def test_forward_is_deterministic(rng, f64):
    model = TwoLayer()
    x = rng.normal(size=(3, 6, 3))
    a = model(Tensor(x)).data
    b = model(Tensor(x)).data
    assert np.array_equal(a, b)
