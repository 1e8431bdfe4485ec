import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from blstmseg.linalg import Rng, ShapeError
from blstmseg.lstm import GATES, LstmParams, LstmState, lstm_backward, lstm_forward, lstm_step


def random_params(seed, d_in, h, peepholes=True, scale=0.5):
    rng = Rng(seed)
    p = LstmParams.zeros(d_in, h, peepholes)
    for arr in (p.W, p.R, p.b, p.p):
        arr[...] = rng.uniform(-scale, scale, arr.shape)
    if not peepholes:
        p.p[...] = 0
    return p


def oracle_step(p: LstmParams, x, c_prev, y_prev):
    """Plain-Python transliteration of the gate equations."""
    sig = lambda v: 1 / (1 + math.exp(-v))  # noqa: E731
    h = p.hidden

    def lin(gate, j):
        g = p.gate_view(gate)
        return (sum(g["W"][j][k] * x[k] for k in range(len(x)))
                + sum(g["R"][j][k] * y_prev[k] for k in range(h)) + g["b"][j])

    peep = p.use_peepholes
    z = [math.tanh(lin("z", j)) for j in range(h)]
    i = [sig(lin("i", j) + (p.p[0][j] * c_prev[j] if peep else 0)) for j in range(h)]
    f = [sig(lin("f", j) + (p.p[1][j] * c_prev[j] if peep else 0)) for j in range(h)]
    c = [i[j] * z[j] + f[j] * c_prev[j] for j in range(h)]
    o = [sig(lin("o", j) + (p.p[2][j] * c[j] if peep else 0)) for j in range(h)]
    y = [o[j] * math.tanh(c[j]) for j in range(h)]
    return c, y


def test_zero_params_give_zero_state():
    p = LstmParams.zeros(3, 2)
    state, _ = lstm_step(p, np.array([1.0, -2.0, 3.0]), LstmState.zeros(2))
    assert state.c.tolist() == [0, 0] and state.y.tolist() == [0, 0]


def test_closed_input_open_forget_keeps_cell():
    p = LstmParams.zeros(2, 3)
    p.gate_view("i")["b"][:] = -1e4  # i -> 0
    p.gate_view("f")["b"][:] = 1e4  # f -> 1
    p.gate_view("z")["W"][:] = 1.0
    prev = LstmState(np.array([0.3, -0.7, 1.2]), np.array([0.1, 0.2, 0.3]))
    state, _ = lstm_step(p, np.array([2.0, 1.0]), prev)
    assert state.c.tolist() == prev.c.tolist()


@pytest.mark.parametrize("peepholes", [False, True])
def test_step_matches_transliteration(peepholes):
    p = random_params(42, 4, 4, peepholes)
    rng = Rng(43)
    x = rng.uniform(-1, 1, 4)
    prev = LstmState(rng.uniform(-1, 1, 4), rng.uniform(-1, 1, 4))
    state, rec = lstm_step(p, x, prev)
    c, y = oracle_step(p, x, prev.c, prev.y)
    np.testing.assert_allclose(state.c, c, rtol=0, atol=1e-12)
    np.testing.assert_allclose(state.y, y, rtol=0, atol=1e-12)
    for gate in (rec.i, rec.f, rec.o):
        assert ((gate > 0) & (gate < 1)).all()


def test_forward_single_step_and_zero_params():
    p = random_params(1, 3, 2)
    x = np.array([[0.5, -0.2, 0.1]])
    ys, tape = lstm_forward(p, x)
    state, _ = lstm_step(p, x[0], LstmState.zeros(2))
    assert (ys[0] == state.y).all() and len(tape) == 1
    zs, _ = lstm_forward(LstmParams.zeros(3, 2), Rng(0).uniform(-1, 1, (5, 3)))
    assert (zs == 0).all()


def test_forward_empty_sequence():
    ys, tape = lstm_forward(LstmParams.zeros(3, 2), np.zeros((0, 3)))
    assert ys.shape == (0, 2) and len(tape) == 0
    grads, dx = lstm_backward(LstmParams.zeros(3, 2), tape, np.zeros((0, 2)))
    assert dx.shape == (0, 3) and not grads.W.any()


def test_forward_shape_errors():
    p = LstmParams.zeros(3, 2)
    with pytest.raises(ShapeError):
        lstm_forward(p, np.zeros((4, 5)))
    with pytest.raises(ShapeError):
        lstm_step(p, np.zeros(3), LstmState.zeros(3))
    _, tape = lstm_forward(p, np.zeros((4, 3)))
    with pytest.raises(ShapeError):
        lstm_backward(p, tape, np.zeros((3, 2)))


@given(st.integers(1, 8), st.integers(0, 10**6))
def test_prefix_and_causality(T, seed):
    p = random_params(seed, 3, 3)
    xs = Rng(seed + 1).uniform(-1, 1, (T, 3))
    full, tape = lstm_forward(p, xs)
    for k in range(1, T + 1):
        prefix, _ = lstm_forward(p, xs[:k])
        assert (prefix == full[:k]).all()
    # perturbing the future never touches the past
    xs2 = xs.copy()
    xs2[T // 2:] += 1.0
    ys2, _ = lstm_forward(p, xs2)
    assert (ys2[:T // 2] == full[:T // 2]).all()
    for rec in tape.records:
        assert ((rec.z > -1) & (rec.z < 1)).all()
        for gate in (rec.i, rec.f, rec.o):
            assert ((gate > 0) & (gate < 1)).all()


def test_reverse_direction_equals_forward_on_reversed_input():
    p = random_params(8, 3, 2)
    xs = Rng(9).uniform(-1, 1, (6, 3))
    rev, _ = lstm_forward(p, xs, reverse=True)
    fwd, _ = lstm_forward(p, xs[::-1])
    np.testing.assert_array_equal(rev, fwd[::-1])


def test_padding_mask_leaves_real_positions_untouched():
    p = random_params(3, 2, 3)
    xs = Rng(4).uniform(-1, 1, (5, 2))
    padded = np.concatenate([xs, Rng(5).uniform(-1, 1, (3, 2))])[:, None, :]
    mask = np.r_[np.ones(5), np.zeros(3)][:, None]
    for reverse in (False, True):
        ref, _ = lstm_forward(p, xs, reverse=reverse)
        out, _ = lstm_forward(p, padded, mask=mask, reverse=reverse)
        np.testing.assert_allclose(out[:5, 0], ref, rtol=0, atol=1e-15)
        assert (out[5:] == 0).all()


def test_determinism_bit_identical_tapes():
    p = random_params(11, 3, 3)
    xs = Rng(12).uniform(-1, 1, (7, 3))
    _, t1 = lstm_forward(p, xs)
    _, t2 = lstm_forward(p, xs)
    for a, b in zip(t1.records, t2.records):
        assert all((getattr(a, f) == getattr(b, f)).all() for f in ("z", "i", "f", "o", "c", "y"))


def loss_of(p, xs, weights):
    ys, _ = lstm_forward(p, xs)
    return float((ys * weights).sum())


@pytest.mark.parametrize("peepholes", [False, True])
@pytest.mark.parametrize("reverse", [False, True])
def test_backward_matches_finite_differences(peepholes, reverse):
    d_in, h, T = 3, 3, 5
    p = random_params(7, d_in, h, peepholes)
    xs = Rng(8).uniform(-1, 1, (T, d_in))
    weights = Rng(9).uniform(-1, 1, (T, h))

    def loss(params, inputs):
        ys, _ = lstm_forward(params, inputs, reverse=reverse)
        return float((ys * weights).sum())

    _, tape = lstm_forward(p, xs, reverse=reverse)
    grads, dxs = lstm_backward(p, tape, weights)
    eps = 1e-5
    checked = [("W", p.W, grads.W), ("R", p.R, grads.R), ("b", p.b, grads.b)]
    if peepholes:
        checked.append(("p", p.p, grads.p))
    else:
        assert not grads.p.any()
    for name, arr, g in checked + [("x", xs, dxs)]:
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + eps
            up = loss(p, xs)
            arr[idx] = orig - eps
            down = loss(p, xs)
            arr[idx] = orig
            num = (up - down) / (2 * eps)
            err = abs(num - g[idx]) / max(abs(num), abs(g[idx]), 1e-8)
            # float64 loss here (the model-level check uses the extended-precision oracle)
            assert err < 1e-6 or abs(num - g[idx]) < 1e-10, (name, idx, g[idx], num)


def test_zero_upstream_gradient():
    p = random_params(2, 3, 2)
    _, tape = lstm_forward(p, Rng(1).uniform(-1, 1, (4, 3)))
    grads, dxs = lstm_backward(p, tape, np.zeros((4, 2)))
    assert not any(a.any() for a in (grads.W, grads.R, grads.b, grads.p, dxs))


def test_single_step_input_jacobian():
    p = random_params(21, 3, 4)
    x = Rng(22).uniform(-1, 1, (1, 3))
    v = Rng(23).uniform(-1, 1, (1, 4))
    _, tape = lstm_forward(p, x)
    _, dx = lstm_backward(p, tape, v)
    eps = 1e-6
    for k in range(3):
        e = np.zeros_like(x)
        e[0, k] = eps
        jvp = (lstm_forward(p, x + e)[0] - lstm_forward(p, x - e)[0]) / (2 * eps)
        assert abs(float((jvp * v).sum()) - dx[0, k]) < 1e-9


def test_gate_views_are_views_and_order():
    p = LstmParams.zeros(2, 3, use_peepholes=True)
    p.gate_view("o")["W"][:] = 1
    assert p.W[9:].all() and not p.W[:9].any()
    names = [n for n, _ in p.arrays()]
    assert names[:3] == ["W_z", "R_z", "b_z"] and names[3:7] == ["W_i", "R_i", "b_i", "p_i"]
    assert [g for g in GATES] == ["z", "i", "f", "o"]
    assert "p_i" not in [n for n, _ in LstmParams.zeros(2, 3).arrays()]
