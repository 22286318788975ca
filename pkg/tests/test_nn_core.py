import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import gradcases
from oracles import (
    lstm_cell_step,
    lstm_reference,
    naive_conv2d,
    naive_conv3d,
    rmsprop_reference,
    softmax_xent_reference,
)
from taxelgrasp.nn import (
    LSTM,
    Checkpoint,
    CheckpointError,
    Conv2D,
    Dense,
    Dropout,
    Flatten,
    MaxPool,
    Network,
    ReLU,
    RmsPropState,
    SoftmaxXent,
    Tensor,
    backward,
    rmsprop_step,
)
from taxelgrasp.nn import checkpoint as ckpt_io
from taxelgrasp.nn import functional as F


# ---------------------------------------------------------------- oracles

@pytest.mark.parametrize("seed", range(5))
def test_conv2d_matches_scalar_loops(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(2, 3, 5, 4))
    w = rng.normal(size=(4, 3, 3, 2))
    b = rng.normal(size=4)
    out = F.conv2d(Tensor(x), Tensor(w), Tensor(b)).data
    for n in range(2):
        assert np.max(np.abs(out[n] - naive_conv2d(x[n], w, b))) < 1e-10


@pytest.mark.parametrize("seed", range(3))
def test_conv3d_matches_scalar_loops(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(2, 2, 4, 4, 3))
    w = rng.normal(size=(3, 2, 2, 3, 2))
    b = rng.normal(size=3)
    out = F.conv3d(Tensor(x), Tensor(w), Tensor(b)).data
    for n in range(2):
        assert np.max(np.abs(out[n] - naive_conv3d(x[n], w, b))) < 1e-10


def test_conv_padding_equals_padded_input():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(1, 2, 3, 3))
    w = rng.normal(size=(2, 2, 3, 3))
    b = np.zeros(2)
    padded = np.pad(x[0], [(0, 0), (1, 1), (1, 1)])
    out = F.conv2d(Tensor(x), Tensor(w), Tensor(b), pad=1).data[0]
    assert out.shape == (2, 3, 3)
    assert np.allclose(out, naive_conv2d(padded, w, b), atol=1e-12)


def test_conv_with_identity_kernel_copies_input():
    x = np.arange(24.0).reshape(1, 2, 3, 4)
    w = np.zeros((2, 2, 1, 1))
    w[0, 0] = w[1, 1] = 1.0
    out = F.conv2d(Tensor(x), Tensor(w), Tensor(np.zeros(2))).data
    assert np.array_equal(out, x)


def test_conv_shape_errors_name_both_shapes():
    x = Tensor(np.zeros((1, 2, 3, 3)))
    with pytest.raises(ValueError, match=r"\(1, 2, 3, 3\).*\(1, 3, 2, 2\)"):
        F.conv2d(x, Tensor(np.zeros((1, 3, 2, 2))), Tensor(np.zeros(1)))
    with pytest.raises(ValueError, match="exceed"):
        F.conv2d(x, Tensor(np.zeros((1, 2, 4, 2))), Tensor(np.zeros(1)))
    with pytest.raises(ValueError, match="time extent"):
        F.conv3d(Tensor(np.zeros((1, 1, 2, 3, 3))), Tensor(np.zeros((1, 1, 3, 1, 1))), Tensor(np.zeros(1)))


@pytest.mark.parametrize("seed", range(5))
def test_lstm_matches_scalar_cell(seed):
    rng = np.random.default_rng(seed)
    n, t, d, h = 3, 5, 4, 3
    x = rng.normal(size=(n, t, d))
    w_in = rng.normal(scale=0.5, size=(d, 4 * h))
    w_rec = rng.normal(scale=0.5, size=(h, 4 * h))
    b = rng.normal(size=4 * h)
    out = F.lstm(Tensor(x), Tensor(w_in), Tensor(w_rec), Tensor(b)).data
    for s in range(n):
        ref = lstm_reference(x[s], w_in.tolist(), w_rec.tolist(), b.tolist())
        assert np.max(np.abs(out[s] - ref)) < 1e-10


def test_lstm_single_step_hand_values():
    # one unit, zero weights: z = b, so every gate is sigmoid/tanh of its bias
    b = np.array([0.0, 1.0, 0.0, 0.5])
    out = F.lstm(Tensor(np.zeros((1, 1, 1))), Tensor(np.zeros((1, 4))), Tensor(np.zeros((1, 4))), Tensor(b)).data
    c = 0.5 * math.tanh(0.5)
    assert abs(out[0, 0] - 0.5 * math.tanh(c)) < 1e-15
    h, _ = lstm_cell_step([0.0], [0.0], [0.0], [[0.0] * 4], [[0.0] * 4], b.tolist())
    assert abs(out[0, 0] - h[0]) < 1e-15


def test_lstm_masks_scale_inputs_and_state():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(2, 4, 3))
    w_in, w_rec, b = rng.normal(size=(3, 8)), rng.normal(size=(2, 8)), rng.normal(size=8)
    in_mask = np.array([[2.0, 0.0, 2.0], [0.0, 2.0, 2.0]])
    masked = F.lstm(Tensor(x), Tensor(w_in), Tensor(w_rec), Tensor(b), in_mask=in_mask).data
    direct = F.lstm(Tensor(x * in_mask[:, None, :]), Tensor(w_in), Tensor(w_rec), Tensor(b)).data
    assert np.allclose(masked, direct, atol=1e-14)
    ones = F.lstm(Tensor(x), Tensor(w_in), Tensor(w_rec), Tensor(b), rec_mask=np.ones((2, 2))).data
    plain = F.lstm(Tensor(x), Tensor(w_in), Tensor(w_rec), Tensor(b)).data
    assert np.array_equal(ones, plain)


@pytest.mark.parametrize("seed", range(5))
def test_softmax_xent_matches_formula(seed):
    rng = np.random.default_rng(seed)
    logits = rng.normal(scale=3.0, size=(4, 6))
    labels = rng.integers(0, 6, size=4)
    loss, probs = F.softmax_cross_entropy(Tensor(logits), labels)
    refs = [softmax_xent_reference(list(row), int(y)) for row, y in zip(logits, labels)]
    assert abs(float(loss.data) - sum(r[0] for r in refs) / 4) < 1e-10
    assert np.max(np.abs(probs - np.array([r[1] for r in refs]))) < 1e-10


def test_softmax_xent_stable_for_large_logits():
    loss, probs = F.softmax_cross_entropy(Tensor(np.array([[1000.0, 0.0, -1000.0]])), [0])
    assert float(loss.data) == pytest.approx(0.0, abs=1e-300)
    assert np.all(np.isfinite(probs))


def test_softmax_xent_rejects_bad_input():
    with pytest.raises(FloatingPointError, match="non-finite"):
        F.softmax_cross_entropy(Tensor(np.array([[np.nan, 0.0]])), [0])
    with pytest.raises(ValueError, match="labels"):
        F.softmax_cross_entropy(Tensor(np.zeros((1, 3))), [3])


def test_rmsprop_hand_values():
    w = Tensor(np.array([0.5]), requires_grad=True)
    state = RmsPropState(learning_rate=0.01, rho=0.9, epsilon=1e-8)
    rmsprop_step(state, [("w", w)], [np.array([1.0])])
    assert abs(state.accumulators["w"][0] - 0.1) < 1e-15
    assert abs(w.data[0] - (0.5 - 0.01 / (math.sqrt(0.1) + 1e-8))) < 1e-10


def test_rmsprop_matches_scalar_recurrence():
    rng = np.random.default_rng(7)
    theta0 = rng.normal(size=5)
    w = Tensor(theta0.copy(), requires_grad=True)
    state = RmsPropState(learning_rate=2e-3)
    ref = [(float(t), 0.0) for t in theta0]
    for _ in range(10):
        g = rng.normal(size=5)
        rmsprop_step(state, [("w", w)], [g])
        ref = [rmsprop_reference(t, float(gi), v, 2e-3, 0.9, 1e-8) for (t, v), gi in zip(ref, g)]
    assert np.max(np.abs(w.data - np.array([t for t, _ in ref]))) < 1e-10


def test_rmsprop_rejects_non_finite_atomically():
    a = Tensor(np.ones(2), requires_grad=True)
    b = Tensor(np.ones(2), requires_grad=True)
    state = RmsPropState()
    with pytest.raises(FloatingPointError, match="b"):
        rmsprop_step(state, [("a", a), ("b", b)], [np.ones(2), np.array([1.0, np.inf])])
    assert np.array_equal(a.data, np.ones(2)) and not state.accumulators


def test_rmsprop_validates_hyperparameters():
    for kw in ({"learning_rate": 0.0}, {"rho": 1.0}, {"epsilon": 0.0}):
        with pytest.raises(ValueError):
            RmsPropState(**kw)


# ---------------------------------------------------------------- gradients

@pytest.mark.parametrize("kind", sorted(gradcases.CASES))
def test_finite_difference_per_layer(kind):
    rng = np.random.default_rng(sorted(gradcases.CASES).index(kind))
    make = gradcases.CASES[kind]
    worst = max(gradcases.check_case(*make(rng)) for _ in range(20))
    assert worst < 1e-4


def test_dense_squared_error_gradient_is_outer_product():
    rng = np.random.default_rng(0)
    x, w, b, y = rng.normal(size=(1, 4)), rng.normal(size=(4, 3)), rng.normal(size=3), rng.normal(size=(1, 3))
    wt, bt = Tensor(w, requires_grad=True), Tensor(b, requires_grad=True)
    backward(F.squared_error(F.dense(Tensor(x), wt, bt), y))
    residual = x @ w + b - y
    assert np.allclose(wt.grad, np.outer(x[0], residual[0]), atol=1e-14)
    assert np.allclose(bt.grad, residual[0], atol=1e-14)


def test_network_gradient_matches_finite_differences():
    rng = np.random.default_rng(5)
    net = Network([Conv2D(2, (2, 2)), ReLU(), MaxPool(2), Flatten(), Dense(4), ReLU(), Dense(3), SoftmaxXent()], (2, 5, 4), seed=1)
    x = rng.normal(size=(3, 2, 5, 4))
    y = np.array([0, 2, 1])
    loss, _ = net.loss(x, y)
    net.backward(loss)
    for name, w in net.parameters():
        analytic = w.grad.copy()
        numeric = np.zeros_like(w.data)
        for idx in np.ndindex(w.shape):
            old = w.data[idx]
            w.data[idx] = old + 1e-5
            up = float(net.loss(x, y)[0].data)
            w.data[idx] = old - 1e-5
            down = float(net.loss(x, y)[0].data)
            w.data[idx] = old
            numeric[idx] = (up - down) / 2e-5
        assert np.max(np.abs(analytic - numeric)) < 1e-6, name


def test_backward_without_forward_is_an_error():
    with pytest.raises(RuntimeError):
        backward(Tensor(np.array(1.0), requires_grad=True))
    net = Network([Dense(2), SoftmaxXent()], (3,))
    with pytest.raises(RuntimeError):
        net.backward()


def test_backward_needs_scalar():
    w = Tensor(np.ones((2, 2)), requires_grad=True)
    out = F.relu(w)
    with pytest.raises(ValueError):
        backward(out)


# ---------------------------------------------------------------- dropout

def test_dropout_is_identity_at_inference():
    x = Tensor(np.arange(6.0).reshape(2, 3))
    assert F.dropout(x, 0.5, training=False) is x


def test_dropout_mask_statistics():
    rng = np.random.default_rng(0)
    mask = F.dropout_mask((200_000,), 0.3, rng)
    assert abs(np.mean(mask == 0) - 0.3) < 0.005
    assert abs(mask.mean() - 1.0) < 0.01
    assert set(np.unique(mask)) == {0.0, 1.0 / 0.7}


def test_dropout_same_seed_same_mask():
    x = Tensor(np.ones((4, 10)))
    a = F.dropout_forward(x, 0.4, True, 11).data
    b = F.dropout_forward(x, 0.4, True, 11).data
    assert np.array_equal(a, b)


@given(st.floats(min_value=1.0, max_value=1.5) | st.floats(max_value=-0.001, min_value=-1.0))
def test_dropout_rejects_rates_outside_unit_interval(rate):
    with pytest.raises(ValueError):
        Dropout(rate)


# ---------------------------------------------------------------- pooling

def test_max_pool_picks_window_maxima_and_crops():
    x = np.arange(30.0).reshape(1, 1, 5, 6)
    out = F.max_pool(Tensor(x), (2, 2)).data
    assert out.shape == (1, 1, 2, 3)
    assert np.array_equal(out[0, 0], [[7, 9, 11], [19, 21, 23]])


def test_max_pool_tie_routes_gradient_to_first():
    x = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
    backward(F.squared_error(F.max_pool(x, (2, 2)), np.zeros((1, 1, 1, 1))))
    assert np.array_equal(x.grad[0, 0], [[1.0, 0.0], [0.0, 0.0]])


# ---------------------------------------------------------------- network / checkpoint

def _small_net(seed=0):
    return Network(
        [Conv2D(3, (2, 2)), ReLU(), Dropout(0.2), Flatten(), Dense(5), ReLU(), Dense(4), SoftmaxXent()],
        (2, 4, 3),
        seed=seed,
    )


def test_network_init_is_seeded():
    a, b, c = _small_net(1), _small_net(1), _small_net(2)
    assert all(np.array_equal(u, v) for u, v in zip(a.get_weights(), b.get_weights()))
    assert not np.array_equal(a.get_weights()[0], c.get_weights()[0])


def test_lstm_forget_bias_starts_at_one():
    net = Network([LSTM(3), Dense(2), SoftmaxXent()], (4, 2))
    b = net.layers[0].weights[2].data
    assert np.array_equal(b, [0, 0, 0, 1, 1, 1, 0, 0, 0, 0, 0, 0])


def test_parameter_counts_by_formula():
    net = _small_net()
    conv = 3 * 2 * 2 * 2 + 3
    flat = 3 * 3 * 2
    assert net.param_count == conv + flat * 5 + 5 + 5 * 4 + 4
    lstm = Network([LSTM(6), Dense(2), SoftmaxXent()], (7, 5))
    assert lstm.param_count == 4 * 6 * (5 + 6 + 1) + 6 * 2 + 2


def test_network_rejects_wrong_sample_shape():
    with pytest.raises(ValueError, match="expects"):
        _small_net().forward(np.zeros((1, 2, 4, 4)))


def test_checkpoint_round_trip_is_byte_identical(tmp_path):
    net = _small_net(3)
    ckpt = Checkpoint.from_network(net, {"arch": "cnn2d1", "note": "x"})
    path = tmp_path / "a.ckpt"
    ckpt_io.write_checkpoint(ckpt, path)
    again = ckpt_io.read_checkpoint(path)
    ckpt_io.write_checkpoint(again, tmp_path / "b.ckpt")
    assert path.read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    fresh = _small_net(9)
    again.load_into(fresh)
    x = np.random.default_rng(0).normal(size=(5, 2, 4, 3))
    assert np.array_equal(fresh.predict_proba(x), net.predict_proba(x))


def test_checkpoint_rejects_truncated_and_mismatched(tmp_path):
    text = ckpt_io.dumps(Checkpoint.from_network(_small_net()))
    lines = text.splitlines()
    with pytest.raises(CheckpointError, match="line 1"):
        ckpt_io.loads("nope\n" + text)
    value_line = max(i for i, line in enumerate(lines) if line.startswith("shape ")) + 1
    lines[value_line] = "1 2"
    with pytest.raises(CheckpointError, match=f"line {value_line + 1}: 2 values for shape"):
        ckpt_io.loads("\n".join(lines) + "\n")
    other = Network([Dense(3), SoftmaxXent()], (24,))
    with pytest.raises(CheckpointError):
        ckpt_io.loads(text).load_into(other)


def test_training_step_reduces_loss():
    rng = np.random.default_rng(0)
    net = _small_net()
    x = rng.normal(size=(8, 2, 4, 3))
    y = rng.integers(0, 4, size=8)
    state = RmsPropState(learning_rate=1e-2)
    first = float(net.loss(x, y)[0].data)
    for _ in range(30):
        loss, _ = net.loss(x, y)
        net.backward(loss)
        rmsprop_step(state, net.parameters())
    assert float(net.loss(x, y)[0].data) < first


# ---------------------------------------------------------------- invariants

@settings(max_examples=15, deadline=None)
@given(
    st.integers(1, 3), st.integers(1, 3), st.integers(2, 8), st.integers(2, 8),
    st.integers(1, 3), st.integers(1, 3), st.integers(0, 2**31 - 1),
)
def test_conv2d_oracle_up_to_3x8x8(c_in, c_out, h, w, kh, kw, seed):
    rng = np.random.default_rng(seed)
    kh, kw = min(kh, h), min(kw, w)
    x = rng.normal(size=(1, c_in, h, w))
    k = rng.normal(size=(c_out, c_in, kh, kw))
    b = rng.normal(size=c_out)
    out = F.conv2d(Tensor(x), Tensor(k), Tensor(b)).data[0]
    assert out.shape == (c_out, h - kh + 1, w - kw + 1)
    assert np.max(np.abs(out - naive_conv2d(x[0], k, b))) < 1e-10


@settings(max_examples=8, deadline=None)
@given(st.integers(1, 2), st.integers(1, 5), st.integers(2, 8), st.integers(2, 8), st.integers(1, 3), st.integers(0, 2**31 - 1))
def test_conv3d_oracle_up_to_2x5x8x8(c_in, t, h, w, kt, seed):
    rng = np.random.default_rng(seed)
    kt = min(kt, t)
    x = rng.normal(size=(1, c_in, t, h, w))
    k = rng.normal(size=(2, c_in, kt, 2, 2))
    b = rng.normal(size=2)
    out = F.conv3d(Tensor(x), Tensor(k), Tensor(b)).data[0]
    assert out.shape == (2, t - kt + 1, h - 1, w - 1)
    assert np.max(np.abs(out - naive_conv3d(x[0], k, b))) < 1e-10


def test_conv_fixed_examples():
    rng = np.random.default_rng(9)
    x = rng.normal(size=(1, 2, 5, 5))
    k = rng.normal(size=(3, 2, 2, 2))
    b = rng.normal(size=3)
    assert np.max(np.abs(F.conv2d(Tensor(x), Tensor(k), Tensor(b)).data[0] - naive_conv2d(x[0], k, b))) < 1e-10
    x3 = rng.normal(size=(1, 1, 4, 6, 4))
    k3 = rng.normal(size=(2, 1, 2, 2, 2))
    b3 = rng.normal(size=2)
    assert np.max(np.abs(F.conv3d(Tensor(x3), Tensor(k3), Tensor(b3)).data[0] - naive_conv3d(x3[0], k3, b3))) < 1e-10
    zero = F.conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(k), Tensor(np.array([0.5, -1.0, 2.0]))).data
    assert np.array_equal(np.unique(zero[0, 2]), [2.0]) and np.array_equal(np.unique(zero[0, 1]), [-1.0])


def test_conv3d_identity_and_full_time_kernel():
    x = np.random.default_rng(2).normal(size=(1, 1, 4, 3, 3))
    one = np.ones((1, 1, 1, 1, 1))
    assert np.array_equal(F.conv3d(Tensor(x), Tensor(one), Tensor(np.zeros(1))).data, x)
    full = F.conv3d(Tensor(x), Tensor(np.ones((1, 1, 4, 1, 1))), Tensor(np.zeros(1))).data
    assert full.shape == (1, 1, 1, 3, 3)
    assert np.allclose(full[0, 0, 0], x[0, 0].sum(axis=0), atol=1e-14)


def test_lstm_zero_parameters_give_zero_state():
    x = np.random.default_rng(0).normal(size=(2, 6, 3))
    out = F.lstm(Tensor(x), Tensor(np.zeros((3, 8))), Tensor(np.zeros((2, 8))), Tensor(np.zeros(8))).data
    assert np.array_equal(out, np.zeros((2, 2)))


def test_lstm_rejects_empty_sequence():
    with pytest.raises(ValueError):
        F.lstm(Tensor(np.zeros((1, 0, 3))), Tensor(np.zeros((3, 8))), Tensor(np.zeros((2, 8))), Tensor(np.zeros(8)))


@given(st.lists(st.floats(-700, 700), min_size=2, max_size=12))
def test_softmax_sums_to_one(logits):
    _, probs = F.softmax_cross_entropy(Tensor(np.array([logits])), [0])
    assert abs(probs.sum() - 1.0) < 1e-12
    assert np.all(probs >= 0)


def test_softmax_equal_logits_and_limit():
    loss, probs = F.softmax_cross_entropy(Tensor(np.zeros((1, 9))), [4])
    assert np.allclose(probs, 1 / 9, atol=1e-15)
    assert abs(float(loss.data) - math.log(9)) < 1e-12
    logits = np.zeros((1, 9))
    logits[0, 2] = 50.0
    loss, probs = F.softmax_cross_entropy(Tensor(logits), [2])
    assert abs(probs[0, 2] - 1.0) < 1e-15 and 0.0 <= float(loss.data) < 1e-20


def test_dropout_rate_zero_is_identity_when_training():
    x = Tensor(np.arange(6.0).reshape(2, 3))
    assert np.array_equal(F.dropout(x, 0.0, training=True, rng=np.random.default_rng(0)).data, x.data)


def test_dropout_mean_within_three_sigma():
    out = F.dropout_forward(Tensor(np.ones(100_000)), 0.5, True, 123).data
    # each element is 0 or 2 with equal chance, so the std of the mean is 1/sqrt(n)
    assert abs(out.mean() - 1.0) < 3 / math.sqrt(100_000)


def test_unused_parameter_gets_exact_zero_gradient():
    x = Tensor(np.ones((2, 3)), requires_grad=True)
    unused = Tensor(np.ones(4), requires_grad=True)
    backward(F.squared_error(x, np.zeros((2, 3))))
    assert unused.grad is None or not unused.grad.any()
    w = Tensor(np.ones((3, 2)), requires_grad=True)
    b = Tensor(np.ones(2), requires_grad=True)
    out = F.dense(Tensor(np.zeros((1, 3))), w, b)
    backward(F.squared_error(out, np.zeros((1, 2))))
    assert np.array_equal(w.grad, np.zeros((3, 2)))


def test_rmsprop_zero_gradient_leaves_parameters():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    p.grad = np.zeros(2)
    rmsprop_step(RmsPropState(learning_rate=0.1), [("p", p)])
    assert np.array_equal(p.data, [1.0, -2.0])


def test_losses_are_bitwise_reproducible():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(6, 2, 4, 3))
    y = rng.integers(0, 4, size=6)
    runs = []
    for _ in range(2):
        net, state, losses = _small_net(3), RmsPropState(learning_rate=1e-2), []
        drop = np.random.default_rng(8)
        for _ in range(5):
            loss, _ = net.loss(x, y, training=True, rng=drop)
            losses.append(float(loss.data).hex())
            net.backward(loss)
            rmsprop_step(state, net.parameters())
        runs.append(losses)
    assert runs[0] == runs[1]
