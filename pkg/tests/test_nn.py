import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sustain.errors import GeometryError, ShapeError, UsageError
from sustain.nn import (EPS_CLIP, AdamState, ParamSet, Tensor, adam_step, bce_elementwise, bce_loss,
                        check_gradients, class_weights, conv1d, conv_output_length, dense_forward,
                        finite_diff_gradient, pad1d, pool1d, relative_error)


def matmul_loops(a, b):
    n, k = a.shape
    m = b.shape[1]
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            for t in range(k):
                out[i, j] += a[i, t] * b[t, j]
    return out


# ---------------------------------------------------------------- dense
def test_dense_identity_passthrough():
    x = np.arange(6.0).reshape(2, 3)
    ps = ParamSet()
    w = ps.add("w", np.eye(3))
    b = ps.add("b", np.zeros(3))
    np.testing.assert_array_equal(dense_forward(x, w, b, "linear").data, x)


def test_dense_zero_weights_sigmoid_is_half():
    ps = ParamSet()
    out = dense_forward(np.random.default_rng(0).normal(size=(4, 5)), ps.add("w", np.zeros((5, 3))),
                        ps.add("b", np.zeros(3)), "sigmoid")
    np.testing.assert_array_equal(out.data, np.full((4, 3), 0.5))


def test_dense_matches_triple_loop():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(2, 3))
    W = rng.normal(size=(3, 4))
    b = rng.normal(size=4)
    ps = ParamSet()
    out = dense_forward(x, ps.add("w", W), ps.add("b", b))
    np.testing.assert_allclose(out.data, matmul_loops(x, W) + b, rtol=0, atol=1e-13)


def test_dense_shape_error_names_both_shapes():
    ps = ParamSet()
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 2\)"):
        dense_forward(np.zeros((2, 3)), ps.add("w", np.zeros((4, 2))))


# ---------------------------------------------------------------- conv1d
def test_conv_ones_kernel_sliding_sum():
    x = Tensor(np.array([[[1.0, 2.0, 3.0, 4.0]]]))
    out = conv1d(x, Tensor(np.ones((1, 1, 3))))
    np.testing.assert_array_equal(out.data.ravel(), [6.0, 9.0])


def test_conv_delta_kernel_shifts():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(1, 1, 10))
    k = np.zeros((1, 1, 3))
    k[0, 0, 2] = 1.0
    out = conv1d(Tensor(x), Tensor(k))
    np.testing.assert_array_equal(out.data.ravel(), x.ravel()[2:])


def test_conv_stride_equal_length_single_frame():
    x = Tensor(np.arange(8.0).reshape(1, 1, 8))
    out = conv1d(x, Tensor(np.ones((1, 1, 3))), stride=8)
    assert out.shape == (1, 1, 1)
    assert out.data.item() == 0.0 + 1.0 + 2.0


def test_conv_kernel_longer_than_input():
    with pytest.raises(GeometryError):
        conv1d(Tensor(np.zeros((1, 1, 2))), Tensor(np.zeros((1, 1, 5))), padding=1)


@settings(max_examples=40, deadline=None)
@given(frames=st.integers(1, 30), width=st.integers(1, 5), stride=st.integers(1, 4), padding=st.integers(0, 2))
def test_conv_output_length(frames, width, stride, padding):
    if frames + 2 * padding < width:
        return
    x = Tensor(np.ones((1, 2, frames)))
    out = conv1d(x, Tensor(np.ones((3, 2, width))), stride=stride, padding=padding)
    assert out.shape[-1] == (frames + 2 * padding - width) // stride + 1 == conv_output_length(
        frames, width, stride, padding)


def test_edge_padding_keeps_constant_input_constant():
    x = Tensor(np.full((1, 2, 7), 3.0))
    out = conv1d(x, Tensor(np.random.default_rng(1).normal(size=(4, 2, 3))), padding=1, padding_mode="edge")
    assert np.ptp(out.data, axis=-1).max() == 0.0


# ---------------------------------------------------------------- bce
def test_bce_half_positive_is_ln2():
    assert bce_loss(Tensor([[0.5]]), [[1.0]]).item() == pytest.approx(math.log(2), abs=1e-15)


@pytest.mark.parametrize("y", [0.0, 1.0])
def test_bce_perfect_prediction(y):
    val = bce_loss(Tensor([[y]]), [[y]]).item()
    assert 0 <= val <= -math.log(1 - EPS_CLIP) + 1e-15


def test_bce_fractional_target():
    direct = -0.3 * math.log(0.7) - 0.7 * math.log(0.3)
    val = bce_loss(Tensor([[0.7]]), [[0.3]]).item()
    assert val == pytest.approx(direct, abs=1e-14)
    assert val == pytest.approx(0.94986, abs=1e-4)


def test_bce_mean_over_classes_and_batch():
    rng = np.random.default_rng(0)
    p = rng.uniform(0.05, 0.95, size=(4, 3))
    y = rng.uniform(size=(4, 3))
    assert bce_loss(Tensor(p), y).item() == pytest.approx(bce_elementwise(p, y).mean(), abs=1e-14)


def test_bce_shape_mismatch():
    with pytest.raises(ShapeError):
        bce_loss(Tensor(np.full((2, 3), 0.5)), np.zeros((2, 2)))


def test_bce_class_weights_whole_term_and_positive_only():
    p = np.array([[0.2, 0.6]])
    y = np.array([[1.0, 0.0]])
    w = np.array([2.0, 3.0])
    pos = -y * np.log(p)
    neg = -(1 - y) * np.log(1 - p)
    assert bce_loss(Tensor(p), y, w).item() == pytest.approx(((pos + neg) * w).mean(), abs=1e-14)
    assert bce_loss(Tensor(p), y, w, positive_only=True).item() == pytest.approx((pos * w + neg).mean(), abs=1e-14)


@settings(max_examples=200, deadline=None)
@given(p1=st.floats(1e-6, 1 - 1e-6), p2=st.floats(1e-6, 1 - 1e-6), y=st.floats(0, 1))
def test_bce_convex_in_p(p1, p2, y):
    mid = bce_elementwise((p1 + p2) / 2, y)
    assert mid <= (bce_elementwise(p1, y) + bce_elementwise(p2, y)) / 2 + 1e-12


@settings(max_examples=300, deadline=None)
@given(p=st.floats(1e-6, 1 - 1e-6), y=st.sampled_from([0.0, 1.0]), ph=st.floats(0, 1), a=st.floats(0, 1))
def test_bce_affine_in_target(p, y, ph, a):
    lhs = bce_elementwise(p, a * y + (1 - a) * ph)
    rhs = a * bce_elementwise(p, y) + (1 - a) * bce_elementwise(p, ph)
    assert abs(lhs - rhs) <= 1e-12


def test_class_weights_formula():
    labels = np.array([[1, 1, 0], [1, 0, 0], [1, 0, 0], [1, 0, 1]])
    w = class_weights(labels)
    np.testing.assert_allclose(w, [1.0, 1.0 + 2.0, 1.0 + 2.0])
    assert np.all(w >= 1)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.01, 1.0), min_size=1, max_size=6))
def test_class_weights_at_least_one(priors):
    n = 1000
    labels = (np.arange(n)[:, None] < np.round(np.array(priors) * n)[None]).astype(float)
    w = class_weights(labels)
    assert np.all(w >= 1.0)
    np.testing.assert_array_equal(w[np.array(priors) * n >= n], 1.0)


# ---------------------------------------------------------------- backward
def test_backward_constant_loss_zero_grads():
    ps = ParamSet()
    a = ps.add("a", np.ones(3))
    (a * 0.0).sum().backward()
    np.testing.assert_array_equal(a.grad, 0.0)


def test_backward_square():
    ps = ParamSet()
    t = ps.add("t", 3.0)
    (t * t).backward()
    assert t.grad == 6.0


def test_backward_accumulates():
    ps = ParamSet()
    t = ps.add("t", 3.0)
    (t * t).backward()
    (t * t).backward()
    assert t.grad == 12.0


def test_backward_without_graph():
    with pytest.raises(UsageError):
        Tensor(1.0).backward()


def test_parameter_gradients_match_shapes():
    ps = ParamSet()
    ps.add("w", np.ones((2, 3)))
    ps.add("b", np.ones(3))
    for name, p in ps.items():
        assert p.grad.shape == p.shape


# ---------------------------------------------------------------- adam
def test_adam_zero_gradient_no_change():
    ps = ParamSet()
    w = ps.add("w", np.array([1.0, -2.0]))
    before = w.data.copy()
    ps.zero_grad()
    adam_step(ps, AdamState())
    np.testing.assert_array_equal(w.data, before)


@pytest.mark.parametrize("g", [0.5, -3.0, 1e-3])
def test_adam_first_step_has_lr_magnitude(g):
    ps = ParamSet()
    w = ps.add("w", 2.0)
    w.grad = np.array(g)
    adam_step(ps, AdamState(lr=0.01))
    expected = 0.01 * abs(g) / (abs(g) + 1e-8)
    assert abs(2.0 - w.data) == pytest.approx(expected, rel=1e-12)


def test_adam_frozen_param_bitwise_unchanged():
    ps = ParamSet()
    a = ps.add("attention", np.zeros((3, 3)), trainable=False)
    b = ps.add("w", np.ones(2))
    a.grad = np.ones((3, 3))
    b.grad = np.ones(2)
    st_ = AdamState()
    for _ in range(5):
        adam_step(ps, st_)
    assert a.data.tobytes() == np.zeros((3, 3)).tobytes()
    assert "attention" not in st_.m
    assert not np.array_equal(b.data, np.ones(2))


def test_adam_rejects_bad_hyperparameters():
    with pytest.raises(ValueError):
        AdamState(lr=0.0)
    with pytest.raises(ValueError):
        AdamState(beta1=1.0)


# ---------------------------------------------------------------- finite differences
def test_finite_diff_square():
    ps = ParamSet()
    t = ps.add("t", 3.0)
    g = finite_diff_gradient(lambda: t.data**2, ps, h=1e-5)
    assert g["t"] == pytest.approx(6.0, abs=1e-8)


def test_finite_diff_matches_dense_backward():
    rng = np.random.default_rng(5)
    ps = ParamSet()
    w = ps.add("w", rng.normal(size=(4, 3)))
    b = ps.add("b", rng.normal(size=3))
    x = rng.normal(size=(5, 4))
    y = rng.uniform(size=(5, 3))
    errs = check_gradients(lambda: bce_loss(dense_forward(x, w, b, "sigmoid"), y), ps)
    assert max(errs.values()) < 1e-6


def _one_layer_check(build, shape, seed=0):
    rng = np.random.default_rng(seed)
    ps = ParamSet()
    x = ps.add("x", rng.normal(size=shape))
    target = rng.uniform(size=build(x).shape)
    return check_gradients(lambda: bce_loss(build(x).sigmoid(), target), ps)["x"]


@pytest.mark.parametrize("name,build,shape", [
    ("relu", lambda x: x.relu(), (3, 4)),
    ("softmax", lambda x: x.softmax(axis=-1), (3, 5)),
    ("exp", lambda x: x.exp() * 0.1, (2, 3)),
    ("max", lambda x: x.max(axis=-1), (4, 5)),
    ("pad-zeros", lambda x: pad1d(x, 2, "zeros"), (2, 3, 5)),
    ("pad-edge", lambda x: pad1d(x, 2, "edge"), (2, 3, 5)),
    ("pool-max", lambda x: pool1d(x, 3, "max"), (2, 2, 10)),
    ("pool-avg", lambda x: pool1d(x, 3, "avg"), (2, 2, 10)),
    ("conv-stride", lambda x: conv1d(x, Tensor(np.linspace(-1, 1, 24).reshape(4, 2, 3)), stride=2, padding=1),
     (2, 2, 9)),
    ("matmul-batched", lambda x: Tensor(np.linspace(-1, 1, 9).reshape(3, 3)) @ x, (2, 3, 4)),
])
def test_layer_input_gradients(name, build, shape):
    assert _one_layer_check(build, shape) < 1e-4, name


def test_conv_parameter_gradients():
    rng = np.random.default_rng(2)
    ps = ParamSet()
    k = ps.add("k", rng.normal(size=(3, 2, 3)))
    b = ps.add("b", rng.normal(size=3))
    x = rng.normal(size=(2, 2, 8))
    y = rng.uniform(size=(2, 3, 8))
    errs = check_gradients(lambda: bce_loss(conv1d(Tensor(x), k, b, padding=1, padding_mode="edge").sigmoid(), y), ps)
    assert max(errs.values()) < 1e-4


def test_relative_error_detects_corruption():
    assert relative_error([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert relative_error([1.0, 2.0], [1.0, 2.1]) > 1e-2
