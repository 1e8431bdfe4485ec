"""Unidirectional LSTM layer: gate equations, forward unroll and exact BPTT.

Gate pre-activations are stored fused, in the block order z, i, f, o, so one
matrix product per step covers all four gates. ``gate_view`` exposes the
per-gate slices (they are views, writes go through).

Padding is handled with a 0/1 step mask: a masked step emits a zero output and
passes the recurrent state through untouched. A right-to-left layer therefore
starts each sentence from the zero state regardless of how much padding
follows it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import Rng, ShapeError, init_uniform, sigmoid

GATES = ("z", "i", "f", "o")
PEEPHOLE_GATES = ("i", "f", "o")


@dataclass
class LstmParams:
    W: np.ndarray  # (4h, d_in)
    R: np.ndarray  # (4h, h)
    b: np.ndarray  # (4h,)
    p: np.ndarray  # (3, h) peepholes for i, f, o
    use_peepholes: bool = False

    @property
    def hidden(self) -> int:
        return self.R.shape[1]

    @property
    def d_in(self) -> int:
        return self.W.shape[1]

    @classmethod
    def zeros(cls, d_in: int, hidden: int, use_peepholes: bool = False) -> "LstmParams":
        return cls(
            W=np.zeros((4 * hidden, d_in)),
            R=np.zeros((4 * hidden, hidden)),
            b=np.zeros(4 * hidden),
            p=np.zeros((3, hidden)),
            use_peepholes=use_peepholes,
        )

    @classmethod
    def init(cls, rng: Rng, d_in: int, hidden: int, scale: float = 0.05,
             use_peepholes: bool = False, forget_bias: float = 1.0) -> "LstmParams":
        params = cls.zeros(d_in, hidden, use_peepholes)
        params.W[:] = init_uniform(rng, 4 * hidden, d_in, scale)
        params.R[:] = init_uniform(rng, 4 * hidden, hidden, scale)
        params.gate_view("f")["b"][:] = forget_bias
        if use_peepholes:
            params.p[:] = init_uniform(rng, 3, hidden, scale)
        return params

    def gate_view(self, gate: str) -> dict[str, np.ndarray]:
        """Views of ``W_k``, ``R_k``, ``b_k`` (and ``p_k`` where it exists)."""
        k = GATES.index(gate)
        h = self.hidden
        rows = slice(k * h, (k + 1) * h)
        view = {"W": self.W[rows], "R": self.R[rows], "b": self.b[rows]}
        if gate in PEEPHOLE_GATES:
            view["p"] = self.p[PEEPHOLE_GATES.index(gate)]
        return view

    def arrays(self) -> list[tuple[str, np.ndarray]]:
        """Per-gate parameter views in serialisation order (z, i, f, o; W, R, b[, p])."""
        out = []
        for gate in GATES:
            for name, arr in self.gate_view(gate).items():
                if name == "p" and not self.use_peepholes:
                    continue
                out.append((f"{name}_{gate}", arr))
        return out

    def copy(self) -> "LstmParams":
        return LstmParams(self.W.copy(), self.R.copy(), self.b.copy(), self.p.copy(),
                          self.use_peepholes)


# gradients share the parameter layout
LstmGrads = LstmParams


@dataclass
class LstmState:
    c: np.ndarray
    y: np.ndarray

    @classmethod
    def zeros(cls, hidden: int, batch: int | None = None) -> "LstmState":
        shape = (hidden,) if batch is None else (batch, hidden)
        return cls(np.zeros(shape), np.zeros(shape))


@dataclass
class StepRecord:
    x: np.ndarray
    c_prev: np.ndarray
    y_prev: np.ndarray
    z: np.ndarray
    i: np.ndarray
    f: np.ndarray
    o: np.ndarray
    c: np.ndarray
    tanh_c: np.ndarray
    y: np.ndarray


@dataclass
class LstmTape:
    """Per-timestep records, indexed by input position (not processing order)."""

    records: list[StepRecord]
    mask: np.ndarray  # (T, B)
    reverse: bool
    batched: bool
    init: LstmState | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.records)


def _check_params(params: LstmParams) -> None:
    h = params.hidden
    if params.W.shape[0] != 4 * h or params.R.shape != (4 * h, h) or params.b.shape != (4 * h,):
        raise ShapeError(
            f"inconsistent LSTM params W{params.W.shape} R{params.R.shape} b{params.b.shape}")
    if params.p.shape != (3, h):
        raise ShapeError(f"peephole block must be (3, {h}), got {params.p.shape}")


def _step(params: LstmParams, x, c_prev, y_prev, m=None):
    h = params.hidden
    a = x @ params.W.T + y_prev @ params.R.T + params.b
    z = np.tanh(a[..., :h])
    a_i = a[..., h:2 * h]
    a_f = a[..., 2 * h:3 * h]
    a_o = a[..., 3 * h:]
    if params.use_peepholes:
        a_i = a_i + params.p[0] * c_prev
        a_f = a_f + params.p[1] * c_prev
    i = sigmoid(a_i)
    f = sigmoid(a_f)
    c_new = i * z + f * c_prev
    if params.use_peepholes:
        a_o = a_o + params.p[2] * c_new
    o = sigmoid(a_o)
    tanh_c = np.tanh(c_new)
    y_new = o * tanh_c
    rec = StepRecord(x, c_prev, y_prev, z, i, f, o, c_new, tanh_c, y_new)
    if m is None:
        return LstmState(c_new, y_new), y_new, rec
    mm = m[:, None]
    state = LstmState(mm * c_new + (1.0 - mm) * c_prev, mm * y_new + (1.0 - mm) * y_prev)
    return state, mm * y_new, rec


def lstm_step(params: LstmParams, x: np.ndarray, prev: LstmState) -> tuple[LstmState, StepRecord]:
    """One application of the gate equations.

    ``z = tanh(W_z x + R_z y' + b_z)``, ``i = sigma(W_i x + R_i y' + p_i*c' + b_i)``,
    ``f`` likewise with ``p_f``, ``c = i*z + f*c'``,
    ``o = sigma(W_o x + R_o y' + p_o*c + b_o)``, ``y = o*tanh(c)``.
    """
    _check_params(params)
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.d_in:
        raise ShapeError(f"lstm_step: input {x.shape} does not match d_in={params.d_in}")
    if prev.c.shape[-1] != params.hidden or prev.y.shape != prev.c.shape:
        raise ShapeError(f"lstm_step: state {prev.c.shape}/{prev.y.shape} vs hidden={params.hidden}")
    state, _, rec = _step(params, x, prev.c, prev.y)
    return state, rec


def lstm_forward(params: LstmParams, xs, init: LstmState | None = None,
                 mask: np.ndarray | None = None, reverse: bool = False):
    """Unroll over ``xs`` of shape (T, d_in) or (T, B, d_in).

    Returns ``(ys, tape)`` with ``ys`` shaped like ``xs`` but with ``hidden``
    features. ``reverse=True`` processes positions T-1 .. 0 while keeping
    outputs aligned to input positions. ``mask`` is (T,) or (T, B) of 0/1.
    """
    _check_params(params)
    xs = np.asarray(xs, dtype=np.float64)
    h = params.hidden
    batched = xs.ndim == 3
    if xs.ndim <= 1 or xs.shape[0] == 0:
        B = xs.shape[1] if batched else 1
        ys = np.zeros((0, B, h) if batched else (0, h))
        return ys, LstmTape([], np.zeros((0, B)), reverse, batched, init)
    if not batched:
        if xs.ndim != 2:
            raise ShapeError(f"lstm_forward: expected (T, d_in) or (T, B, d_in), got {xs.shape}")
        xs = xs[:, None, :]
    T, B, d_in = xs.shape
    if d_in != params.d_in:
        raise ShapeError(f"lstm_forward: inputs have {d_in} features, params expect {params.d_in}")
    m = np.ones((T, B)) if mask is None else np.asarray(mask, dtype=np.float64).reshape(T, B)
    if init is None:
        state = LstmState.zeros(h, B)
    else:
        state = LstmState(np.broadcast_to(init.c, (B, h)).copy(), np.broadcast_to(init.y, (B, h)).copy())
    ys = np.zeros((T, B, h))
    records: list[StepRecord | None] = [None] * T
    order = range(T - 1, -1, -1) if reverse else range(T)
    for t in order:
        state, ys[t], records[t] = _step(params, xs[t], state.c, state.y, m[t])
    tape = LstmTape(records, m, reverse, batched, init)
    return (ys if batched else ys[:, 0, :]), tape


def lstm_backward(params: LstmParams, tape: LstmTape, grad_ys) -> tuple[LstmGrads, np.ndarray]:
    """Backpropagation through time over a recorded tape.

    ``grad_ys`` is dLoss/d(outputs) with the same layout as the forward
    outputs. Returns parameter gradients (same layout as ``params``) and
    dLoss/d(inputs).
    """
    T = len(tape)
    grad_ys = np.asarray(grad_ys, dtype=np.float64)
    if grad_ys.shape[0] != T:
        raise ShapeError(f"lstm_backward: {grad_ys.shape[0]} output grads for a tape of {T} steps")
    h = params.hidden
    grads = LstmParams.zeros(params.d_in, h, params.use_peepholes)
    if T == 0:
        B = tape.mask.shape[1]
        return grads, np.zeros((0, B, params.d_in) if tape.batched else (0, params.d_in))
    if not tape.batched:
        grad_ys = grad_ys[:, None, :]
    B = tape.mask.shape[1]
    dxs = np.zeros((T, B, params.d_in))
    dy_next = np.zeros((B, h))
    dc_next = np.zeros((B, h))
    peep = params.use_peepholes
    order = range(T) if tape.reverse else range(T - 1, -1, -1)
    for t in order:
        r = tape.records[t]
        mm = tape.mask[t][:, None]
        dy = mm * (dy_next + grad_ys[t])
        da_o = dy * r.tanh_c * r.o * (1.0 - r.o)
        dc = mm * dc_next + dy * r.o * (1.0 - r.tanh_c ** 2)
        if peep:
            dc = dc + da_o * params.p[2]
        da_i = dc * r.z * r.i * (1.0 - r.i)
        da_f = dc * r.c_prev * r.f * (1.0 - r.f)
        da_z = dc * r.i * (1.0 - r.z ** 2)
        da = np.concatenate([da_z, da_i, da_f, da_o], axis=1)
        grads.W += da.T @ r.x
        grads.R += da.T @ r.y_prev
        grads.b += da.sum(axis=0)
        dxs[t] = da @ params.W
        dc_prev = dc * r.f + (1.0 - mm) * dc_next
        if peep:
            dc_prev = dc_prev + da_i * params.p[0] + da_f * params.p[1]
            grads.p[0] += (da_i * r.c_prev).sum(axis=0)
            grads.p[1] += (da_f * r.c_prev).sum(axis=0)
            grads.p[2] += (da_o * r.c).sum(axis=0)
        dy_next = da @ params.R + (1.0 - mm) * dy_next
        dc_next = dc_prev
    return grads, (dxs if tape.batched else dxs[:, 0, :])
