"""Bidirectional LSTM layers and their stacked composition.

A layer's output at position t is ``[h_fwd[t], h_bwd[t]]`` (size 2d). Between
stacked layers a (d x 2d) compression matrix maps that back to size d; the top
layer's 2d output goes straight to the tagging head, so a stack of depth L
holds L - 1 compression matrices.

Inverted dropout masks are applied to the input of every layer (the embedded
characters for layer 0, the compressed activations above that). Recurrent
connections are never dropped.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import Rng, ShapeError, init_uniform
from .lstm import LstmParams, LstmTape, lstm_backward, lstm_forward


@dataclass
class BlstmLayer:
    forward: LstmParams
    backward: LstmParams

    @classmethod
    def init(cls, rng: Rng, d_in: int, hidden: int, **kw) -> "BlstmLayer":
        return cls(LstmParams.init(rng, d_in, hidden, **kw), LstmParams.init(rng, d_in, hidden, **kw))

    @classmethod
    def zeros(cls, d_in: int, hidden: int, use_peepholes: bool = False) -> "BlstmLayer":
        return cls(LstmParams.zeros(d_in, hidden, use_peepholes),
                   LstmParams.zeros(d_in, hidden, use_peepholes))

    def copy(self) -> "BlstmLayer":
        return BlstmLayer(self.forward.copy(), self.backward.copy())


@dataclass
class BlstmTape:
    forward: LstmTape
    backward: LstmTape


@dataclass
class StackedBlstm:
    layers: list[BlstmLayer]
    compressions: list[np.ndarray]  # (d, 2d) each, len(layers) - 1

    def __post_init__(self):
        if not self.layers:
            raise ValueError("a stacked BLSTM needs at least one layer")
        if len(self.compressions) != len(self.layers) - 1:
            raise ValueError(
                f"{len(self.layers)} layers need {len(self.layers) - 1} compression matrices, "
                f"got {len(self.compressions)}")

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def dim(self) -> int:
        return self.layers[0].forward.d_in

    @classmethod
    def init(cls, rng: Rng, dim: int, depth: int, scale: float = 0.05,
             use_peepholes: bool = False) -> "StackedBlstm":
        layers, comps = [], []
        for level in range(depth):
            layers.append(BlstmLayer.init(rng, dim, dim, scale=scale, use_peepholes=use_peepholes))
            if level < depth - 1:
                comps.append(init_uniform(rng, dim, 2 * dim, scale))
        return cls(layers, comps)

    @classmethod
    def zeros(cls, dim: int, depth: int, use_peepholes: bool = False) -> "StackedBlstm":
        return cls([BlstmLayer.zeros(dim, dim, use_peepholes) for _ in range(depth)],
                   [np.zeros((dim, 2 * dim)) for _ in range(depth - 1)])

    def copy(self) -> "StackedBlstm":
        return StackedBlstm([layer.copy() for layer in self.layers], [w.copy() for w in self.compressions])


@dataclass
class DropoutMask:
    """One inverted-dropout mask per layer input; entries are 0 or 1/keep_prob."""

    masks: list[np.ndarray]
    keep_prob: float

    @classmethod
    def sample(cls, rng: Rng, keep_prob: float, shape: tuple[int, ...], depth: int) -> "DropoutMask":
        check_keep_prob(keep_prob)
        masks = [(rng.random(shape) < keep_prob) / keep_prob for _ in range(depth)]
        return cls(masks, keep_prob)


@dataclass
class StackTape:
    inputs: list[np.ndarray]
    outputs: list[np.ndarray]
    tapes: list[BlstmTape]
    dropout: DropoutMask | None


@dataclass
class StackGrads:
    layers: list[BlstmLayer]
    compressions: list[np.ndarray]
    grad_xs: np.ndarray


def check_keep_prob(keep_prob: float) -> None:
    if not 0.0 < keep_prob <= 1.0:
        raise ValueError(f"dropout keep_prob must lie in (0, 1], got {keep_prob}")


def blstm_forward(layer: BlstmLayer, xs, mask=None) -> tuple[np.ndarray, BlstmTape]:
    """Concatenate a left-to-right and a right-to-left pass, position-aligned."""
    if layer.forward.W.shape != layer.backward.W.shape or layer.forward.R.shape != layer.backward.R.shape:
        raise ShapeError("forward and backward LSTM parameters differ in shape")
    hf, tf = lstm_forward(layer.forward, xs, mask=mask)
    hb, tb = lstm_forward(layer.backward, xs, mask=mask, reverse=True)
    return np.concatenate([hf, hb], axis=-1), BlstmTape(tf, tb)


def blstm_backward(layer: BlstmLayer, tape: BlstmTape, grad_out) -> tuple[BlstmLayer, np.ndarray]:
    h = layer.forward.hidden
    gf, dxf = lstm_backward(layer.forward, tape.forward, grad_out[..., :h])
    gb, dxb = lstm_backward(layer.backward, tape.backward, grad_out[..., h:])
    return BlstmLayer(gf, gb), dxf + dxb


def compress(w: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Project 2d-sized activations back to size d (``w @ v`` per position)."""
    w = np.asarray(w, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if w.ndim != 2 or w.shape[1] != 2 * w.shape[0] or v.shape[-1] != w.shape[1]:
        raise ShapeError(f"compress: matrix {w.shape} cannot map activations {v.shape}")
    return v @ w.T


def stack_forward(net: StackedBlstm, xs, mask=None, dropout: DropoutMask | None = None):
    """Run every layer; returns the top layer's 2d output and a tape for backprop."""
    xs = np.asarray(xs, dtype=np.float64)
    if xs.shape[-1] != net.dim:
        raise ShapeError(f"stack_forward: inputs have {xs.shape[-1]} features, network expects {net.dim}")
    if dropout is not None:
        check_keep_prob(dropout.keep_prob)
        if len(dropout.masks) != net.depth:
            raise ValueError(f"need {net.depth} dropout masks, got {len(dropout.masks)}")
    inputs, outputs, tapes = [], [], []
    h = xs
    for level, layer in enumerate(net.layers):
        if dropout is not None:
            h = h * dropout.masks[level]
        inputs.append(h)
        out, tape = blstm_forward(layer, h, mask)
        outputs.append(out)
        tapes.append(tape)
        if level < net.depth - 1:
            h = compress(net.compressions[level], out)
    return outputs[-1], StackTape(inputs, outputs, tapes, dropout)


def stack_backward(net: StackedBlstm, tape: StackTape, grad_out) -> StackGrads:
    if tape is None or len(tape.tapes) != net.depth:
        raise ValueError("stack_backward needs the tape of a matching stack_forward call")
    g = np.asarray(grad_out, dtype=np.float64)
    layer_grads: list[BlstmLayer | None] = [None] * net.depth
    comp_grads: list[np.ndarray | None] = [None] * (net.depth - 1)
    for level in range(net.depth - 1, -1, -1):
        if level < net.depth - 1:
            # g is the gradient w.r.t. the compressed output of this layer
            out = tape.outputs[level]
            comp_grads[level] = g.reshape(-1, g.shape[-1]).T @ out.reshape(-1, out.shape[-1])
            g = g @ net.compressions[level]
        layer_grads[level], g = blstm_backward(net.layers[level], tape.tapes[level], g)
        if tape.dropout is not None:
            g = g * tape.dropout.masks[level]
    return StackGrads(layer_grads, comp_grads, g)
