import numpy as np
import pytest

from rla import tensor as T
from rla.errors import DimensionError
from rla.lstm import (LstmParams, LstmState, SpatialLstmParams, lstm_step, spatial_lstm_step,
                      zero_state)
from rla.tensor import GradientTape, Tensor

from oracles import lstm_cell, numeric_grad, rel_error, spatial_cell, split_lstm, split_spatial


def state(h, c):
    return LstmState(Tensor(np.atleast_2d(h)), Tensor(np.atleast_2d(c)))


def zero_lstm(D, H):
    return LstmParams(Tensor(np.zeros((4 * H, D))), Tensor(np.zeros((4 * H, H))),
                      Tensor(np.zeros(4 * H)))


def zero_spatial(D, Dc, H):
    return SpatialLstmParams(Tensor(np.zeros((5 * H, D + Dc + 2 * H))), Tensor(np.zeros(5 * H)),
                             D, Dc)


def test_zero_params_give_zero_state(rng):
    s = lstm_step(zero_lstm(3, 2), Tensor(rng.normal(size=(1, 3))), zero_state(1, 2))
    assert np.all(s.h.data == 0) and np.all(s.c.data == 0)


def test_saturated_forget_gate_carries_memory():
    p = zero_lstm(3, 2)
    p.b.data[2:4] = 50.0
    s = lstm_step(p, Tensor(np.ones((1, 3))), state([0.0, 0.0], [0.7, -1.3]))
    np.testing.assert_allclose(s.c.data, [[0.7, -1.3]], atol=1e-15)


def test_lstm_matches_scalar_oracle(rng):
    H, D = 2, 3
    W_x = [rng.uniform(-1, 1, (H, D)) for _ in range(4)]
    W_h = [rng.uniform(-1, 1, (H, H)) for _ in range(4)]
    b = [rng.uniform(-1, 1, H) for _ in range(4)]
    p = LstmParams.from_gates(W_x, W_h, b)
    x = rng.normal(size=3)
    h0, c0 = rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 2)
    got = lstm_step(p, Tensor(x[None]), state(h0, c0))
    gates = {g: (W_x[k].tolist(), W_h[k].tolist(), b[k].tolist())
             for k, g in enumerate("ifco")}
    h_ref, c_ref = lstm_cell(gates, x.tolist(), h0.tolist(), c0.tolist())
    np.testing.assert_allclose(got.h.data[0], h_ref, rtol=0, atol=1e-12)
    np.testing.assert_allclose(got.c.data[0], c_ref, rtol=0, atol=1e-12)


def test_lstm_without_input(rng):
    p = LstmParams.init(rng, 0, 3)
    assert p.W_x is None and p.input_dim == 0
    h0, c0 = rng.uniform(-1, 1, 3), rng.uniform(-1, 1, 3)
    s = lstm_step(p, None, state(h0, c0))
    h_ref, c_ref = lstm_cell(split_lstm(None, p.W_h.data, p.b.data, 3), [], h0.tolist(),
                             c0.tolist())
    np.testing.assert_allclose(s.h.data[0], h_ref, rtol=0, atol=1e-12)
    np.testing.assert_allclose(s.c.data[0], c_ref, rtol=0, atol=1e-12)
    with pytest.raises(DimensionError):
        lstm_step(p, Tensor(np.ones((1, 2))), s)


def test_lstm_init_shapes_and_forget_bias(rng):
    p = LstmParams.init(rng, 5, 4)
    assert p.W_x.shape == (16, 5) and p.W_h.shape == (16, 4) and p.b.shape == (16,)
    np.testing.assert_array_equal(p.b.data[4:8], 1.0)
    assert np.all(np.abs(p.W_x.data) <= 1 / 3)


def test_lstm_shape_errors(rng):
    p = LstmParams.init(rng, 3, 2)
    with pytest.raises(DimensionError):
        lstm_step(p, Tensor(np.ones((1, 4))), zero_state(1, 2))
    with pytest.raises(DimensionError):
        lstm_step(p, Tensor(np.ones((1, 3))), zero_state(1, 3))


def test_hidden_is_bounded(rng):
    p = LstmParams.init(rng, 3, 4)
    for v in p.tensors().values():
        v.data *= 20
    s = zero_state(5, 4)
    for _ in range(10):
        c_prev = s.c.data
        s = lstm_step(p, Tensor(rng.normal(size=(5, 3)) * 10), s)
        assert np.all(np.abs(s.h.data) <= 1)
        # |c_t| <= |c_{t-1}| + 1 since f, i in (0,1) and |tanh| <= 1
        assert np.all(np.abs(s.c.data) <= np.abs(c_prev) + 1)


def test_unrolled_chain_gradients(rng):
    p = LstmParams.init(rng, 3, 2)
    xs = [rng.normal(size=(2, 3)) for _ in range(3)]

    def loss():
        s = zero_state(2, 2)
        for x in xs:
            s = lstm_step(p, Tensor(x), s)
        return T.tsum(s.h * s.h + s.c)

    for t in p.tensors().values():
        t.requires_grad = True
    with GradientTape() as tape:
        value = loss()
    grads = tape.backward(value)
    for name, t in p.tensors().items():
        num = numeric_grad(lambda: loss().item(), t.data)
        assert rel_error(grads[t], num) < 1e-4, name


# ---------------------------------------------------------------- spatial cell


def test_spatial_zero_params(rng):
    # any patch and coarse input, zero neighbour memory
    s = spatial_lstm_step(zero_spatial(4, 4, 2), Tensor(rng.normal(size=(1, 4))),
                          Tensor(rng.normal(size=(1, 4))),
                          state(rng.normal(size=2), [0.0, 0.0]),
                          state(rng.normal(size=2), [0.0, 0.0]))
    assert np.all(s.h.data == 0)


def test_spatial_closed_forget_gates_keep_only_candidate(rng):
    H = 2
    p = zero_spatial(3, 0, H)
    p.b.data[:H] = 50.0  # input gate open
    p.b.data[H:3 * H] = -50.0  # both forget gates shut
    p.W.data[3 * H:4 * H, :3] = rng.uniform(-1, 1, (H, 3))
    x = rng.normal(size=(1, 3))
    s = spatial_lstm_step(p, Tensor(x), None, state([0.5, 0.5], [3.0, -2.0]),
                          state([0.1, 0.2], [4.0, 1.0]))
    np.testing.assert_allclose(s.c.data, np.tanh(x @ p.W.data[3 * H:4 * H, :3].T), atol=1e-12)


def random_spatial(rng, D, Dc, H):
    p = SpatialLstmParams.init(rng, D, Dc, H)
    p.W.data[:] = rng.uniform(-1, 1, p.W.shape)
    p.b.data[:] = rng.uniform(-1, 1, p.b.shape)
    return p


@pytest.mark.parametrize("literal", [False, True])
def test_spatial_matches_scalar_oracle(rng, literal):
    H, D, Dc = 2, 3, 2
    p = random_spatial(rng, D, Dc, H)
    x, xc = rng.normal(size=D), rng.normal(size=Dc)
    ha, ca, hl, cl = (rng.uniform(-1, 1, H) for _ in range(4))
    got = spatial_lstm_step(p, Tensor(x[None]), Tensor(xc[None]), state(ha, ca), state(hl, cl),
                            literal=literal)
    gates = split_spatial(p.W.data, p.b.data, H)
    inputs = np.concatenate([x, xc, ha, hl]).tolist()
    # the literal variant multiplies the left gate by the above memory
    left_c = ca if literal else cl
    h_ref, c_ref = spatial_cell(gates, inputs, (ha.tolist(), ca.tolist()),
                                (hl.tolist(), left_c.tolist()))
    np.testing.assert_allclose(got.h.data[0], h_ref, rtol=0, atol=1e-12)
    np.testing.assert_allclose(got.c.data[0], c_ref, rtol=0, atol=1e-12)


def test_spatial_reduces_to_lstm(rng):
    """Zero above-state and a shut vertical forget gate leave a plain LSTM step
    over [x, h_left]."""
    H, D = 2, 3
    p = random_spatial(rng, D, 0, H)
    p.b.data[H:2 * H] = -1e4
    p.W.data[H:2 * H] = 0.0
    x = rng.normal(size=(1, D))
    hl, cl = rng.uniform(-1, 1, (1, H)), rng.uniform(-1, 1, (1, H))
    got = spatial_lstm_step(p, Tensor(x), None, zero_state(1, H), state(hl, cl))
    # keep rows i, f_left, c, o and the columns for x and h_left
    rows = np.r_[0:H, 2 * H:5 * H]
    cols = np.r_[0:D, D + H:D + 2 * H]
    W = p.W.data[rows][:, cols]
    seq = LstmParams(Tensor(W[:, :D]), Tensor(W[:, D:]), Tensor(p.b.data[rows]))
    ref = lstm_step(seq, Tensor(x), state(hl, cl))
    # only the summation order differs
    np.testing.assert_allclose(got.h.data, ref.h.data, rtol=0, atol=1e-15)
    np.testing.assert_allclose(got.c.data, ref.c.data, rtol=0, atol=1e-15)


def test_spatial_preactivation_width(rng):
    p = SpatialLstmParams.init(rng, 4, 4, 3)
    assert p.W.shape == (15, 4 + 4 + 6)
    assert p.hidden == 3
    np.testing.assert_array_equal(p.b.data[3:9], 1.0)


def test_spatial_shape_errors(rng):
    p = SpatialLstmParams.init(rng, 4, 2, 3)
    z = zero_state(1, 3)
    with pytest.raises(DimensionError):
        spatial_lstm_step(p, Tensor(np.ones((1, 5))), Tensor(np.ones((1, 2))), z, z)
    with pytest.raises(DimensionError):
        spatial_lstm_step(p, Tensor(np.ones((1, 4))), None, z, z)
    with pytest.raises(DimensionError):
        spatial_lstm_step(p, Tensor(np.ones((1, 4))), Tensor(np.ones((1, 2))), zero_state(1, 2), z)
