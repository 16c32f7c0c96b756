import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neurocoproc.diffnet import (
    GradSet,
    Layer,
    LayerSpec,
    NetParams,
    NonFiniteError,
    ShapeError,
    SquaredError,
    grad_check,
    init_net,
    init_opt,
    net_backward,
    net_forward,
    net_from_arrays,
    net_to_arrays,
    opt_step,
)


def dense(name, w, b, act="identity", **kw):
    return Layer(name, "dense", np.asarray(w, float), np.asarray(b, float), act, **kw)


def recurrent_net(seed, n_in=3, n_hidden=5, n_out=2):
    return init_net(
        [
            LayerSpec("rnn", "recurrent", n_in, n_hidden, "tanh"),
            LayerSpec("out", "dense", n_hidden, n_out, "identity"),
        ],
        seed,
    )


# --- net_forward -----------------------------------------------------------


def test_identity_layer_passes_input_through():
    net = NetParams((dense("id", np.eye(3), np.zeros(3)),))
    x = np.array([[1.0, -2.0, 0.5], [3.0, 0.0, 1.0]])
    out, _ = net_forward(net, x)
    assert np.array_equal(out, x)


def test_zero_length_sequence_returns_initial_state():
    net = recurrent_net(0)
    h0 = np.linspace(-0.5, 0.5, 5)
    out, final = net_forward(net, np.zeros((0, 3)), [h0, None])
    assert out.shape == (0, 2)
    assert np.array_equal(final[0], h0)


def test_two_layer_hand_evaluation():
    w1 = np.array([[1.0, 2.0], [-1.0, 0.5]])
    b1 = np.array([0.5, 0.0])
    w2 = np.array([[2.0, -1.0], [0.0, 3.0]])
    b2 = np.array([0.0, 1.0])
    net = NetParams((dense("h", w1, b1, "relu"), dense("o", w2, b2, "identity")))
    out, _ = net_forward(net, np.array([[1.0, 0.0]]))
    # hidden: relu([1*1+0.5, -1*1+0]) = [1.5, 0]; out: [3.0, 1.0]
    assert np.allclose(out, [[3.0, 1.0]], atol=0)


def test_recurrent_state_threads_across_steps():
    w = np.array([[1.0]])
    u = np.array([[0.5]])
    layer = Layer("r", "recurrent", w, np.zeros(1), "identity", recurrent_weights=u)
    net = NetParams((layer,))
    out, final = net_forward(net, np.array([[1.0], [0.0], [0.0]]))
    assert np.allclose(out[:, 0], [1.0, 0.5, 0.25])
    assert np.allclose(final[0], [0.25])
    # splitting the sequence and threading state gives the same result
    a, sa = net_forward(net, np.array([[1.0], [0.0]]))
    b, _ = net_forward(net, np.array([[0.0]]), sa)
    assert np.allclose(np.concatenate([a, b]), out)


def test_dimension_mismatch_names_layer():
    with pytest.raises(ShapeError, match="'second'"):
        NetParams((dense("first", np.eye(2), np.zeros(2)), dense("second", np.eye(3), np.zeros(3))))
    net = NetParams((dense("first", np.eye(2), np.zeros(2)),))
    with pytest.raises(ShapeError):
        net_forward(net, np.zeros((4, 3)))


def test_batched_matches_unbatched():
    net = recurrent_net(3)
    rng = np.random.default_rng(0)
    xs = rng.normal(size=(6, 4, 3))
    batched, _ = net_forward(net, xs)
    for b in range(4):
        single, _ = net_forward(net, xs[:, b, :])
        assert np.allclose(batched[:, b, :], single, atol=1e-14)


def test_bounded_sigmoid_respects_bounds():
    layer = dense("s", [[50.0], [-50.0]], [0.0, 0.0], "bounded_sigmoid", scale=5.0)
    out, _ = net_forward(NetParams((layer,)), np.array([[10.0], [-10.0], [0.0]]))
    assert np.all(out >= 0.0) and np.all(out <= 5.0)
    assert np.allclose(out[2], [2.5, 2.5])


# --- net_backward ----------------------------------------------------------


def test_zero_loss_gradient_gives_zero_grads():
    net = recurrent_net(1)
    x = np.random.default_rng(1).normal(size=(4, 3))
    g = net_backward(net, x, None, np.zeros((4, 2)))
    assert all(np.all(v == 0) for v in g.grads.values())


def test_linear_quadratic_closed_form():
    rng = np.random.default_rng(2)
    w = rng.normal(size=(2, 3))
    x = rng.normal(size=3)
    t = rng.normal(size=2)
    net = NetParams((dense("lin", w, np.zeros(2)),))
    out, _ = net_forward(net, x[None])
    _, dout = SquaredError(t[None])(out)
    g = net_backward(net, x[None], None, dout)
    expected = 2.0 * np.outer(w @ x - t, x)
    assert np.allclose(g.grads["lin.weights"], expected, atol=1e-12)
    assert np.allclose(g.grads["lin.bias"], 2.0 * (w @ x - t), atol=1e-12)


def test_recurrent_backward_matches_finite_differences():
    net = recurrent_net(7)
    rng = np.random.default_rng(7)
    x = rng.normal(size=(5, 3))
    loss = SquaredError(rng.normal(size=(5, 2)))
    assert grad_check(net, x, loss) < 1e-4


def test_input_and_initial_state_gradients():
    net = recurrent_net(8)
    rng = np.random.default_rng(8)
    x = rng.normal(size=(4, 3))
    h0 = rng.normal(size=5) * 0.3
    loss = SquaredError(rng.normal(size=(4, 2)))
    out, _ = net_forward(net, x, [h0, None])
    g = net_backward(net, x, [h0, None], loss(out)[1])
    eps = 1e-6
    num_x = np.zeros_like(x)
    for pos in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[pos] += eps
        xm[pos] -= eps
        num_x[pos] = (loss(net_forward(net, xp, [h0, None])[0])[0] - loss(net_forward(net, xm, [h0, None])[0])[0]) / (2 * eps)
    assert np.allclose(g.inputs, num_x, rtol=1e-6, atol=1e-8)
    num_h = np.zeros(5)
    for i in range(5):
        hp, hm = h0.copy(), h0.copy()
        hp[i] += eps
        hm[i] -= eps
        num_h[i] = (loss(net_forward(net, x, [hp, None])[0])[0] - loss(net_forward(net, x, [hm, None])[0])[0]) / (2 * eps)
    assert np.allclose(g.initial_state[0], num_h, rtol=1e-6, atol=1e-8)


def test_backward_rejects_mismatched_lengths():
    net = recurrent_net(0)
    with pytest.raises(ShapeError):
        net_backward(net, np.zeros((5, 3)), None, np.zeros((4, 2)))


# --- grad_check --------------------------------------------------------------


def three_layer_toy(seed=11):
    return init_net(
        [
            LayerSpec("a", "dense", 3, 4, "tanh"),
            LayerSpec("b", "recurrent", 4, 4, "tanh"),
            LayerSpec("c", "dense", 4, 2, "bounded_sigmoid", scale=3.0),
        ],
        seed,
    )


def test_grad_check_small_on_correct_gradients():
    net = three_layer_toy()
    rng = np.random.default_rng(11)
    x = rng.normal(size=(4, 3))
    assert grad_check(net, x, SquaredError(rng.uniform(0, 3, size=(4, 2)))) < 1e-6


def test_grad_check_detects_ten_percent_corruption():
    net = three_layer_toy()
    rng = np.random.default_rng(12)
    x = rng.normal(size=(4, 3))
    loss = SquaredError(rng.uniform(0, 3, size=(4, 2)))
    out, _ = net_forward(net, x)
    good = net_backward(net, x, None, loss(out)[1])
    bad = GradSet({k: 1.1 * v for k, v in good.grads.items()})
    # |1.1a - a| / max(|1.1a|, |a|) = 0.1 / 1.1 wherever a is well above noise
    assert grad_check(net, x, loss, analytic=bad) == pytest.approx(0.1 / 1.1, rel=1e-3)


def test_grad_check_zero_parameter_network():
    assert grad_check(NetParams(()), np.zeros((3, 0)), SquaredError(np.zeros((3, 0)))) == 0.0


def test_grad_check_reports_non_finite_parameter():
    net = NetParams((dense("x", [[1.0]], [0.0], "identity"),))

    def exploding(out):
        return float(np.sum(np.exp(1e5 * out))), np.zeros_like(out)

    with pytest.raises((NonFiniteError, FloatingPointError), match="x.weights|x.bias"):
        with np.errstate(over="ignore"):
            grad_check(net, np.array([[1.0]]), exploding)


# --- opt_step ---------------------------------------------------------------


def tiny():
    return NetParams((dense("l", [[1.0, -2.0]], [0.5]),))


def test_sgd_step():
    net = tiny()
    g = GradSet({"l.weights": np.array([[0.5, 1.0]]), "l.bias": np.array([-1.0])})
    new, state = opt_step(net, g, init_opt(net, "sgd_momentum", 0.1))
    assert np.allclose(new.layers[0].weights, [[0.95, -2.1]])
    assert np.allclose(new.layers[0].bias, [0.6])
    assert state.step_count == 1
    # purity
    assert np.array_equal(net.layers[0].weights, [[1.0, -2.0]])


def test_sgd_zero_gradient_is_noop():
    net = tiny()
    g = GradSet({"l.weights": np.zeros((1, 2)), "l.bias": np.zeros(1)})
    new, _ = opt_step(net, g, init_opt(net, "sgd_momentum", 0.1))
    assert np.array_equal(new.layers[0].weights, net.layers[0].weights)


def test_adam_first_step_is_signed_step_size():
    net = tiny()
    g = GradSet({"l.weights": np.array([[3.0, -0.2]]), "l.bias": np.array([1e-3])})
    new, _ = opt_step(net, g, init_opt(net, "adam", 0.01))
    # m_hat = g, v_hat = g^2 -> update = -lr * g / (|g| + eps)
    expected_w = np.array([[1.0, -2.0]]) - 0.01 * np.array([[3.0, -0.2]]) / (np.abs([[3.0, -0.2]]) + 1e-8)
    assert np.allclose(new.layers[0].weights, expected_w, atol=1e-12)
    assert np.allclose(new.layers[0].weights - net.layers[0].weights, [[-0.01, 0.01]], atol=1e-8)


def test_opt_step_shape_mismatch():
    net = tiny()
    g = GradSet({"l.weights": np.zeros((2, 2)), "l.bias": np.zeros(1)})
    with pytest.raises(ShapeError):
        opt_step(net, g, init_opt(net, "adam", 0.01))


def test_frozen_layer_not_updated():
    net = NetParams((dense("l", [[1.0]], [0.0], trainable=False),))
    g = GradSet({"l.weights": np.ones((1, 1)), "l.bias": np.ones(1)})
    new, _ = opt_step(net, g, init_opt(net, "adam", 0.1))
    assert np.array_equal(new.layers[0].weights, [[1.0]])


# --- properties ----------------------------------------------------------------


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000), steps=st.integers(1, 10), hidden=st.integers(1, 12))
def test_gradient_correctness_property(seed, steps, hidden):
    net = recurrent_net(seed, n_in=3, n_hidden=hidden, n_out=2)
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(steps, 3))
    assert grad_check(net, x, SquaredError(rng.normal(size=(steps, 2)))) < 1e-4


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_identity_activation_is_linear(seed, a, b):
    net = init_net(
        [
            LayerSpec("r", "recurrent", 2, 4, "identity"),
            LayerSpec("o", "dense", 4, 3, "identity"),
        ],
        seed,
    )
    # biases must be zero for strict linearity; init_net guarantees that
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=(5, 2)), rng.normal(size=(5, 2))
    lhs, _ = net_forward(net, a * x + b * y)
    rhs = a * net_forward(net, x)[0] + b * net_forward(net, y)[0]
    assert np.allclose(lhs, rhs, atol=1e-10, rtol=0)


def test_determinism_bit_identical():
    net = recurrent_net(5)
    x = np.random.default_rng(5).normal(size=(6, 3))
    g = np.ones((6, 2))
    a = net_backward(net, x, None, g)
    b = net_backward(net, x, None, g)
    assert all(np.array_equal(a.grads[k], b.grads[k]) for k in a.grads)
    assert np.array_equal(net_forward(net, x)[0], net_forward(net, x)[0])


def test_init_is_seeded_and_bounded():
    a = init_net([LayerSpec("d", "dense", 16, 4)], 3)
    b = init_net([LayerSpec("d", "dense", 16, 4)], 3)
    assert np.array_equal(a.layers[0].weights, b.layers[0].weights)
    assert np.all(np.abs(a.layers[0].weights) <= 0.25)


def test_named_array_round_trip():
    net = three_layer_toy()
    back = net_from_arrays(net_to_arrays(net, "ncp/"), "ncp/")
    assert [l.name for l in back.layers] == [l.name for l in net.layers]
    for key, arr in net.named_arrays().items():
        assert np.array_equal(back.named_arrays()[key], arr)
    assert back.layers[2].scale == 3.0
