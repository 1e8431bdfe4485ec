"""Straight-line restatement of the tagging network, vectorised over many
parameter settings at once.

This is the oracle behind ``grad_check``: it shares no code with the lstm /
blstm / tagger modules, reads parameters from a flat vector laid out in
``StackedModel.params()`` order, and evaluates K perturbed copies of the model
in one pass. Arrays may be ``np.longdouble`` or object arrays of ``gmpy2.mpfr``
values, so finite-difference quotients need not be limited by float64 rounding
in the loss.
"""

from __future__ import annotations

import gmpy2
import numpy as np

EXT = np.longdouble

_mp_exp = np.vectorize(gmpy2.exp, otypes=[object])
_mp_tanh = np.vectorize(gmpy2.tanh, otypes=[object])
_mp_log = np.vectorize(gmpy2.log, otypes=[object])


def _exp(x):
    return _mp_exp(x) if x.dtype == object else np.exp(x)


def _tanh(x):
    return _mp_tanh(x) if x.dtype == object else np.tanh(x)


def _log(x):
    return _mp_log(x) if x.dtype == object else np.log(x)


def to_mpfr(values: np.ndarray, bits: int) -> np.ndarray:
    """Exact conversion of float64 values to an object array of mpfr numbers.

    Arithmetic on the result only keeps ``bits`` bits inside a matching
    ``gmpy2.context``.
    """
    flat = [gmpy2.mpfr(float(v), bits) for v in np.asarray(values).reshape(-1)]
    return np.array(flat, dtype=object).reshape(np.shape(values))


def flatten(named: list[tuple[str, np.ndarray]]) -> np.ndarray:
    return np.concatenate([arr.reshape(-1) for _, arr in named])


def unflatten(shapes: list[tuple[str, tuple[int, ...]]], thetas: np.ndarray) -> dict[str, np.ndarray]:
    """Split (K, P) parameter rows into named (K, *shape) blocks."""
    out, pos = {}, 0
    K = thetas.shape[0]
    for name, shape in shapes:
        n = int(np.prod(shape))
        out[name] = thetas[:, pos:pos + n].reshape((K,) + tuple(shape))
        pos += n
    if pos != thetas.shape[1]:
        raise ValueError(f"parameter vector has {thetas.shape[1]} entries, layout needs {pos}")
    return out


def _sigmoid(x):
    return 1 / (1 + _exp(-x))


def _lstm(blocks, prefix, xs, reverse):
    """xs: (K, T, d_in). Returns (K, T, h)."""
    W = {g: blocks[f"{prefix}.W_{g}"] for g in "zifo"}
    R = {g: blocks[f"{prefix}.R_{g}"] for g in "zifo"}
    bias = {g: blocks[f"{prefix}.b_{g}"] for g in "zifo"}
    peep = {g: blocks.get(f"{prefix}.p_{g}") for g in "ifo"}
    K, T, _ = xs.shape
    h = R["z"].shape[1]
    c = np.zeros((K, h), dtype=xs.dtype)
    y = np.zeros((K, h), dtype=xs.dtype)
    out = np.zeros((K, T, h), dtype=xs.dtype)
    steps = range(T - 1, -1, -1) if reverse else range(T)
    for t in steps:
        x = xs[:, t]

        def pre(g):
            return (np.einsum("khd,kd->kh", W[g], x) + np.einsum("khj,kj->kh", R[g], y) + bias[g])

        z = _tanh(pre("z"))
        a_i, a_f = pre("i"), pre("f")
        if peep["i"] is not None:
            a_i = a_i + peep["i"] * c
            a_f = a_f + peep["f"] * c
        i = _sigmoid(a_i)
        f = _sigmoid(a_f)
        c = i * z + f * c
        a_o = pre("o")
        if peep["o"] is not None:
            a_o = a_o + peep["o"] * c
        o = _sigmoid(a_o)
        y = o * _tanh(c)
        out[:, t] = y
    return out


def reference_logits(blocks: dict[str, np.ndarray], depth: int, char_ids, input_masks=None) -> np.ndarray:
    """(K, T, 4) tag logits for one unpadded sentence."""
    emb = blocks["embeddings"]  # (K, d, V)
    h = np.transpose(emb[:, :, np.asarray(char_ids)], (0, 2, 1))  # (K, T, d)
    for level in range(depth):
        if input_masks is not None:
            h = h * input_masks[level]
        fwd = _lstm(blocks, f"layer{level}.fwd", h, reverse=False)
        bwd = _lstm(blocks, f"layer{level}.bwd", h, reverse=True)
        out = np.concatenate([fwd, bwd], axis=-1)
        if level < depth - 1:
            h = np.einsum("kij,ktj->kti", blocks[f"compress{level}"], out)
    hidden = _tanh(np.einsum("kij,ktj->kti", blocks["head.W_h"], out) + blocks["head.b_h"][:, None, :])
    return np.einsum("kij,ktj->kti", blocks["head.W_o"], hidden) + blocks["head.b_o"][:, None, :]


def reference_loss(blocks: dict[str, np.ndarray], depth: int, char_ids, gold_tags, input_masks=None) -> np.ndarray:
    """(K,) mean per-character negative log-likelihood."""
    logits = reference_logits(blocks, depth, char_ids, input_masks)
    top = logits.max(axis=-1, keepdims=True)
    logz = top[..., 0] + _log(_exp(logits - top).sum(axis=-1))
    picked = np.take_along_axis(logits, np.asarray(gold_tags)[None, :, None], axis=-1)[..., 0]
    return (logz - picked).mean(axis=-1)
