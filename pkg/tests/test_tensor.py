import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from adaptkit import tensor as T
from adaptkit.tensor import GraphError, NonFiniteError, ShapeError, Tensor


def finite_arrays(shape, lo=-3.0, hi=3.0):
    return arrays(np.float64, shape, elements=st.floats(lo, hi, allow_nan=False))


# -- forward ------------------------------------------------------------------------
def test_sigmoid_at_zero():
    assert T.sigmoid(Tensor(0.0)).item() == 0.5


def test_softmax_of_equal_logits_is_uniform():
    np.testing.assert_allclose(T.softmax(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3, rtol=0, atol=1e-15)


def test_matmul_integer_hand_case():
    a = Tensor([[1, 2, 3], [4, 5, 6]])
    b = Tensor([[1], [0], [-1]])
    # 1-3 = -2 and 4-6 = -2
    np.testing.assert_array_equal(T.matmul(a, b).data, [[-2.0], [-2.0]])


def test_log_softmax_large_logits_stay_finite():
    out = T.log_softmax(Tensor([1000.0, 0.0, -1000.0]))
    assert np.isfinite(out.data).all()
    assert out.data[0] == pytest.approx(0.0, abs=1e-12)


def test_shape_mismatch_reports_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4,\)"):
        T.add(Tensor(np.ones((2, 3))), Tensor(np.ones(4)))
    with pytest.raises(ShapeError):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_non_finite_output_is_rejected():
    with pytest.raises(NonFiniteError):
        T.exp(Tensor([1000.0]))
    with pytest.raises(NonFiniteError):
        T.div(Tensor([1.0]), Tensor([0.0]))


def test_log_clamps_at_floor():
    out = T.log(Tensor([0.0, 1.0]))
    assert out.data[0] == pytest.approx(math.log(1e-12))
    assert out.data[1] == 0.0


def test_concat_and_slice_roundtrip():
    a, b = Tensor(np.arange(6.0).reshape(2, 3)), Tensor(np.arange(3.0).reshape(1, 3))
    c = T.concat([a, b], axis=0)
    assert c.shape == (3, 3)
    np.testing.assert_array_equal(c[0:2].data, a.data)


# -- backward ------------------------------------------------------------------------
@given(finite_arrays((2, 3)))
def test_grad_of_sum_is_ones(x):
    t = Tensor(x, requires_grad=True)
    T.backward(t.sum())
    np.testing.assert_array_equal(t.grad, np.ones_like(x))


def test_sigmoid_slope_at_zero():
    w = Tensor(0.0, requires_grad=True)
    T.backward(T.sigmoid(w))
    assert w.grad == pytest.approx(0.25, abs=1e-15)


def _log_softmax_composite(v):
    # weighted sum of log-softmax entries, written without the library
    m = max(v)
    lse = m + math.log(sum(math.exp(a - m) for a in v))
    weights = (0.3, -1.2, 2.0)
    return sum(w * (a - lse) for w, a in zip(weights, v))


def test_log_softmax_composite_matches_finite_differences():
    point = [0.4, -1.1, 2.3]
    x = Tensor(point, requires_grad=True)
    T.backward((T.log_softmax(x) * np.array([0.3, -1.2, 2.0])).sum())
    eps = 1e-5
    oracle = []
    for i in range(3):
        up, dn = list(point), list(point)
        up[i] += eps
        dn[i] -= eps
        oracle.append((_log_softmax_composite(up) - _log_softmax_composite(dn)) / (2 * eps))
    np.testing.assert_allclose(x.grad, oracle, atol=1e-8)


def test_backward_twice_raises():
    x = Tensor([1.0, 2.0], requires_grad=True)
    loss = (x * x).sum()
    T.backward(loss)
    with pytest.raises(GraphError):
        T.backward(loss)


def test_backward_needs_scalar_and_graph():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ShapeError):
        T.backward(x * 2.0)
    with pytest.raises(GraphError):
        T.backward(Tensor(1.0).sum())


def test_graph_is_topological_and_visits_once():
    x = Tensor(np.ones(3), requires_grad=True)
    h = T.tanh(x)
    loss = (h * h + h).sum()
    graph = T.Graph.from_root(loss)
    pos = {id(n): i for i, n in enumerate(graph.ops)}
    assert len(pos) == len(graph.ops)
    for node in graph.ops:
        for p in node._parents:
            if id(p) in pos:
                assert pos[id(p)] < pos[id(node)]
    assert graph.leaves() == [x]


def test_shared_subexpression_accumulates():
    x = Tensor(2.0, requires_grad=True)
    y = x * x
    T.backward(y * y)  # x**4
    assert x.grad == pytest.approx(32.0)


@settings(max_examples=30, deadline=None)
@given(finite_arrays((4,)), st.floats(-2, 2), st.floats(-2, 2))
def test_backward_is_linear_in_the_loss(x, a, b):
    def grads(fn):
        t = Tensor(x, requires_grad=True)
        T.backward(fn(t))
        return t.grad

    l1 = lambda t: T.tanh(t).sum()  # noqa: E731
    l2 = lambda t: (t * t).mean()  # noqa: E731
    combo = grads(lambda t: T.scale(l1(t), a) + T.scale(l2(t), b))
    np.testing.assert_allclose(combo, a * grads(l1) + b * grads(l2), rtol=0, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(finite_arrays((2, 3)))
def test_forward_is_deterministic(x):
    f = lambda: T.log_softmax(T.affine(Tensor(x), np.eye(3), np.ones(3))).data  # noqa: E731
    assert f().tobytes() == f().tobytes()


@settings(max_examples=25, deadline=None)
@given(finite_arrays((3, 2)))
def test_grad_shape_matches_values(x):
    t = Tensor(x, requires_grad=True)
    T.backward(T.softmax(t).sum(axis=0).mean())
    assert t.grad.shape == t.shape
    assert t.data.size == int(np.prod(t.shape))


# -- grad_check ------------------------------------------------------------------------
def test_grad_check_on_square():
    assert T.grad_check(lambda t: t * t, 3.0).max_rel_error < 1e-8


@settings(max_examples=20, deadline=None)
@given(finite_arrays((3, 3), 0.2, 3.0))
def test_grad_check_log_and_div(x):
    res = T.grad_check(lambda t: (T.log(t) / (t + 1.0)).sum(), x)
    assert res.max_rel_error < 1e-6


# -- Adam ------------------------------------------------------------------------
def test_adam_zero_gradient_keeps_params():
    p = np.array([1.0, -2.0])
    new, _ = T.adam_step([p], [np.zeros(2)], None, 0.1)
    np.testing.assert_array_equal(new[0], p)


def test_adam_first_step_hand_value():
    # m = 0.1, v = 0.001 -> bias-corrected mhat = vhat = 1 -> step = 0.1 / (1 + 1e-8)
    new, states = T.adam_step([np.array(5.0)], [np.array(1.0)], None, 0.1)
    assert new[0] == pytest.approx(5.0 - 0.1 / (1.0 + 1e-8), abs=1e-15)
    assert states[0].t == 1


def test_adam_constant_gradient_decreases_monotonically():
    p, states, trace = [np.array(0.0)], None, []
    for _ in range(5):
        p, states = T.adam_step(p, [np.array(0.7)], states, 0.05)
        trace.append(float(p[0]))
    assert all(b < a for a, b in zip([0.0] + trace, trace))


def test_adam_rejects_non_finite_gradient():
    w = Tensor(np.zeros(2), requires_grad=True)
    opt = T.Adam([w], 0.1)
    with pytest.raises(NonFiniteError):
        opt.step([np.array([np.nan, 0.0])])
    np.testing.assert_array_equal(w.data, 0.0)


def test_glorot_bounds():
    w = T.glorot_uniform(np.random.default_rng(0), 30, 10)
    assert np.abs(w).max() <= math.sqrt(6 / 40)
    assert w.shape == (30, 10)
