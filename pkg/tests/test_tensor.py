import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from capsumt.tensor import (AdamState, NumericError, ShapeError, Tape, Tensor, adam_step,
                            backward, grad_check, no_record, ops)
from capsumt.nn import ParamStore, reverse_prefix_states, lstm_step
from capsumt.rng import make_rng

finite = st.floats(-3, 3, allow_nan=False, allow_infinity=False)


def arrays(shape):
    return hnp.arrays(np.float64, shape, elements=finite)


# -- forward values --------------------------------------------------------------


def test_softmax_of_equal_scores_is_uniform():
    assert np.array_equal(ops.softmax(Tensor(np.zeros(2))).data, [0.5, 0.5])


def test_identity_matmul():
    A = np.arange(12.0).reshape(3, 4)
    assert np.array_equal(ops.matmul(Tensor(np.eye(3)), Tensor(A)).data, A)


def test_sigmoid_and_tanh_at_zero():
    assert ops.sigmoid(Tensor(0.0)).item() == 0.5
    assert ops.tanh(Tensor(0.0)).item() == 0.0


def test_masked_softmax_zeroes_masked_positions():
    y = ops.softmax(Tensor(np.array([1.0, 5.0, 2.0])), mask=np.array([True, False, True])).data
    assert y[1] == 0.0
    assert y.sum() == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(ShapeError):
        ops.softmax(Tensor(np.ones(2)), mask=np.zeros(2, dtype=bool))


@settings(max_examples=200, deadline=None)
@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 6)),
                  elements=st.floats(-700, 700)))
def test_softmax_is_a_distribution(x):
    y = ops.softmax(Tensor(x), axis=-1).data
    assert np.all(y >= 0)
    assert np.allclose(y.sum(axis=-1), 1.0, atol=1e-9)


def test_shape_errors_name_op_and_shapes():
    with pytest.raises(ShapeError, match=r"matmul.*\(2, 3\).*\(2, 3\)"):
        ops.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(ShapeError, match="add"):
        ops.add(Tensor(np.ones(3)), Tensor(np.ones(4)))


def test_non_finite_output_is_a_numeric_error():
    with pytest.raises(NumericError):
        ops.exp(Tensor(np.array([1000.0])))
    with pytest.raises(NumericError):
        ops.log(Tensor(np.array([0.0])))


def test_log_floor_clamps_and_blocks_gradient():
    x = Tensor(np.array([0.0, 2.0]), requires_grad=True)
    with Tape() as tape:
        y = ops.sum(ops.log(x, floor=1e-12))
    g = backward(tape, y, [x])[x]
    assert y.item() == pytest.approx(np.log(1e-12) + np.log(2.0))
    assert g[0] == 0.0 and g[1] == pytest.approx(0.5)


# -- backward ----------------------------------------------------------------------


def test_square_gradient():
    x = Tensor(3.0, requires_grad=True)
    with Tape() as tape:
        y = ops.mul(x, x)
    assert backward(tape, y, [x])[x] == pytest.approx(6.0)


def test_sum_of_softmax_has_zero_gradient():
    z = Tensor(np.array([0.3, -1.0, 2.0]), requires_grad=True)
    with Tape() as tape:
        y = ops.sum(ops.softmax(z))
    assert np.allclose(backward(tape, y, [z])[z], 0.0, atol=1e-15)


def test_unreachable_leaf_gets_zero_gradient():
    a = Tensor(np.ones(3), requires_grad=True)
    b = Tensor(np.ones(2), requires_grad=True)
    with Tape() as tape:
        y = ops.sum(ops.square(a))
    g = backward(tape, y, [a, b])
    assert np.array_equal(g[b], np.zeros(2))


def test_backward_rejects_non_scalar_loss():
    a = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        y = ops.square(a)
    with pytest.raises(ShapeError):
        backward(tape, y, [a])


def test_leaf_loss_gradient_is_one():
    a = Tensor(np.array(2.0), requires_grad=True)
    with Tape() as tape:
        pass
    assert backward(tape, a, [a])[a] == 1.0


def test_no_record_leaves_tape_empty():
    a = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        with no_record():
            ops.square(a)
    assert len(tape) == 0


def test_shared_subexpression_accumulates():
    x = Tensor(np.array([1.5, -0.5]), requires_grad=True)
    with Tape() as tape:
        h = ops.tanh(x)
        y = ops.sum(ops.mul(h, h))
    th = np.tanh(x.data)
    assert np.allclose(backward(tape, y, [x])[x], 2 * th * (1 - th ** 2))


def test_two_layer_mlp_matches_finite_differences():
    rng = np.random.default_rng(0)
    X, W1, W2 = rng.normal(size=(4, 3)), rng.normal(size=(5, 3)), rng.normal(size=(2, 5))

    def f(W1, W2):
        h = ops.tanh(ops.matmul(Tensor(X), ops.transpose(W1)))
        return ops.mean(ops.square(ops.matmul(h, ops.transpose(W2))))

    assert grad_check(f, [W1, W2], eps=1e-5) < 1e-4


# -- per-op finite-difference property (100 draws each) ----------------------------

shape2 = st.tuples(st.integers(1, 3), st.integers(1, 4))

UNARY = {
    "tanh": ops.tanh,
    "sigmoid": ops.sigmoid,
    "exp": ops.exp,
    "neg": ops.neg,
    "square": ops.square,
    "scale": lambda a: ops.scale(a, -1.7),
    "softmax": lambda a: ops.softmax(a, axis=-1),
    "softmax0": lambda a: ops.softmax(a, axis=0),
    "log_softmax": lambda a: ops.log_softmax(a, axis=-1),
    "log": lambda a: ops.log(ops.add(ops.square(a), 0.5)),
    "sum_axis": lambda a: ops.sum(a, axis=0),
    "mean_axis": lambda a: ops.mean(a, axis=-1, keepdims=True),
    "transpose": ops.transpose,
    "reshape": lambda a: ops.reshape(a, (-1,)),
    "getitem": lambda a: a[..., :1],
    "concat": lambda a: ops.concat([a, ops.scale(a, 2.0)], axis=0),
    "stack": lambda a: ops.stack([a, ops.tanh(a)], axis=1),
    "take": lambda a: ops.take(a, np.array([0, 0, a.shape[0] - 1])),
    "embedding_bag": lambda a: ops.embedding_bag(a, np.array([0, a.shape[0] - 1, 0]),
                                                 np.array([0, 2, 3])),
}


@pytest.mark.parametrize("name", sorted(UNARY))
@settings(max_examples=100, deadline=None)
@given(data=st.data())
def test_unary_op_gradients(name, data):
    x = data.draw(arrays(data.draw(shape2)))
    weights = np.random.default_rng(0).normal(size=64)
    fn = UNARY[name]

    def f(a):
        y = fn(a)
        w = Tensor(weights[:y.size].reshape(y.shape))
        return ops.sum(ops.mul(y, w))

    assert grad_check(f, x, eps=1e-6) < 1e-4


def _away_from_kinks(a, b):
    return np.all(np.abs(a - b) > 1e-3)


BINARY = {
    "add": ops.add, "sub": ops.sub, "mul": ops.mul,
    "div": lambda a, b: ops.div(a, ops.add(ops.square(b), 1.0)),
    "minimum": ops.minimum,
    "matmul": lambda a, b: ops.matmul(a, ops.transpose(b)),
    "add_broadcast": lambda a, b: ops.add(a, b[:1]),
}


@pytest.mark.parametrize("name", sorted(BINARY))
@settings(max_examples=100, deadline=None)
@given(data=st.data())
def test_binary_op_gradients(name, data):
    shape = data.draw(shape2)
    a = data.draw(arrays(shape))
    b = data.draw(arrays(shape))
    if name == "minimum" and not _away_from_kinks(a, b):
        return
    fn = BINARY[name]

    def f(a, b):
        y = fn(a, b)
        return ops.sum(ops.mul(y, ops.tanh(y)))

    assert grad_check(f, [a, b], eps=1e-6) < 1e-4


@settings(max_examples=100, deadline=None)
@given(data=st.data())
def test_layer_norm_gradient(data):
    shape = data.draw(shape2.filter(lambda s: s[1] > 1))
    x = data.draw(arrays(shape).filter(lambda a: np.all(a.std(axis=-1) > 0.1)))
    g = data.draw(arrays((shape[1],)))
    b = data.draw(arrays((shape[1],)))
    w = np.random.default_rng(1).normal(size=shape)
    f = lambda x, g, b: ops.sum(ops.mul(ops.layer_norm(x, g, b), Tensor(w)))  # noqa: E731
    assert grad_check(f, [x, g, b], eps=1e-6) < 1e-4


@settings(max_examples=100, deadline=None)
@given(arrays((2, 3)).filter(lambda a: np.all(np.abs(a) > 1e-3)))
def test_relu_gradient(x):
    assert grad_check(lambda a: ops.sum(ops.square(ops.relu(a))), x, eps=1e-6) < 1e-4


def test_batched_matmul_gradient():
    rng = np.random.default_rng(2)
    a, b, v = rng.normal(size=(2, 3, 4)), rng.normal(size=(2, 4, 5)), rng.normal(size=5)
    f = lambda a, b, v: ops.sum(ops.tanh(ops.matmul(ops.matmul(a, b), v)))  # noqa: E731
    assert grad_check(f, [a, b, v]) < 1e-4


def test_dropout_is_identity_at_eval_and_scales_when_training():
    x = Tensor(np.ones((50, 40)))
    assert ops.dropout(x, 0.5, None, training=False) is x
    y = ops.dropout(x, 0.5, make_rng(0), training=True).data
    assert set(np.unique(y)) <= {0.0, 2.0}
    assert np.array_equal(y, ops.dropout(x, 0.5, make_rng(0), training=True).data)


# -- grad_check ----------------------------------------------------------------------


def test_grad_check_examples():
    assert grad_check(lambda x: ops.square(x), np.array(3.0), eps=1e-5) < 1e-8
    assert grad_check(lambda x: ops.sigmoid(x), np.array(0.0), eps=1e-5) < 1e-8


@pytest.mark.parametrize("eps", [1e-8, 1e-2])
def test_grad_check_rejects_eps_out_of_range(eps):
    with pytest.raises(ValueError):
        grad_check(ops.square, np.array(1.0), eps=eps)


def test_grad_check_non_finite_is_error():
    with pytest.raises(NumericError):
        grad_check(lambda x: ops.log(x), np.array(0.0))


# -- Adam ------------------------------------------------------------------------------


def _store(values):
    p = ParamStore(make_rng(0))
    t = p.add("w", np.shape(values), "zeros")
    t.data = np.array(values, dtype=float)
    return p


def test_adam_zero_gradient_keeps_params():
    p = _store([1.0, -2.0])
    adam_step(p, {"w": np.zeros(2)}, AdamState(lr=0.1))
    assert np.array_equal(p["w"].data, [1.0, -2.0])


def test_adam_first_step_moves_by_lr_times_sign():
    p = _store([1.0, -2.0, 0.5])
    g = np.array([0.3, -4.0, 1e-3])
    state = AdamState(lr=0.01)
    adam_step(p, {"w": g}, state)
    # bias-corrected m/sqrt(v) = g/|g|; the eps term shifts it by < 1e-5 relative
    expected = np.array([1.0, -2.0, 0.5]) - 0.01 * np.sign(g) / (1 + 1e-8 / np.abs(g))
    assert np.allclose(p["w"].data, expected, rtol=0, atol=1e-15)
    assert state.t == 1


def test_adam_counter_and_moment_shapes():
    p = _store(np.zeros((2, 3)))
    state = AdamState()
    for _ in range(2):
        adam_step(p, {"w": np.ones((2, 3))}, state)
    assert state.t == 2
    assert state.m["w"].shape == state.v["w"].shape == (2, 3)


def test_adam_shape_mismatch():
    with pytest.raises(ShapeError):
        adam_step(_store([1.0, 2.0]), {"w": np.ones(3)}, AdamState())


def test_adam_skips_absent_names():
    p = ParamStore(make_rng(0))
    p.add("a", (2,), "ones")
    p.add("b", (2,), "ones")
    state = AdamState(lr=0.1)
    adam_step(p, {"a": np.ones(2)}, state)
    assert np.array_equal(p["b"].data, np.ones(2))
    assert "b" not in state.m


# -- determinism and helpers ------------------------------------------------------------


def test_seeded_init_is_bit_identical():
    a = ParamStore(make_rng(7))
    b = ParamStore(make_rng(7))
    assert np.array_equal(a.add("w", (4, 5)).data, b.add("w", (4, 5)).data)


def test_reverse_prefix_states_match_explicit_backward_runs():
    rng = np.random.default_rng(3)
    H, n, T = 3, 2, 5
    Wx, Wh, b = (Tensor(rng.normal(size=s)) for s in ((4 * H, n), (4 * H, H), (4 * H,)))
    xs = Tensor(rng.normal(size=(T, n)))
    h0, c0 = Tensor(rng.normal(size=H)), Tensor(rng.normal(size=H))
    step = lambda x, h, c: lstm_step(x, h, c, Wx, Wh, b)  # noqa: E731
    Hb, Cb = reverse_prefix_states(step, xs, h0, c0)
    for t in range(T):
        h, c = h0, c0
        for j in range(t, -1, -1):
            h, c = step(xs[j], h, c)
        assert np.allclose(Hb.data[t], h.data, atol=1e-14)
        assert np.allclose(Cb.data[t], c.data, atol=1e-14)
