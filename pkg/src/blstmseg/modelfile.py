"""Binary model files.

Layout (all integers little-endian)::

    magic    9 bytes   b"BLSTMSEG1"
    hlen     uint32    byte length of the header
    header   hlen bytes UTF-8 JSON (sorted keys): format_version, embed_dim,
                        depth, hidden_dim, peepholes, normalize_width, vocab
                        (known characters in id order, id 0 = unknown is
                        implicit), config
    payload  float32   every parameter array, row-major, in
                        ``StackedModel.params()`` order: embeddings (d x |C|),
                        then per layer the forward LSTM (gates z, i, f, o; each
                        W, R, b and, with peepholes, p), the backward LSTM
                        likewise, the compression matrix (absent for the top
                        layer); then head W_h, b_h, W_o, b_o.

Parameters live in float64 while training and are rounded to float32 on disk,
so ``load(save(m))`` equals ``quantize(m)`` exactly.
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

from .blstm import StackedBlstm
from .tagger import EmbeddingTable, OutputHead, Vocab
from .training import StackedModel, TrainConfig

MAGIC = b"BLSTMSEG1"
FORMAT_VERSION = 1
_HLEN = struct.Struct("<I")


class ModelFormatError(ValueError):
    def __init__(self, section: str, message: str):
        super().__init__(f"{section}: {message}")
        self.section = section


def quantize(model: StackedModel) -> StackedModel:
    """Round every parameter to float32 precision in place."""
    for _, arr in model.params():
        arr[...] = arr.astype(np.float32)
    return model


def header_of(model: StackedModel) -> dict:
    cfg = model.config
    return {
        "format_version": FORMAT_VERSION,
        "embed_dim": model.embeddings.dim,
        "depth": model.net.depth,
        "hidden_dim": model.head.W_h.shape[0],
        "peepholes": bool(model.net.layers[0].forward.use_peepholes),
        "normalize_width": model.vocab.normalize_width,
        "vocab": model.vocab.chars(),
        "config": cfg.to_dict(),
    }


def dumps(model: StackedModel) -> bytes:
    header = json.dumps(header_of(model), sort_keys=True, ensure_ascii=False,
                        separators=(",", ":")).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(arr, dtype="<f4").tobytes() for _, arr in model.params())
    return MAGIC + _HLEN.pack(len(header)) + header + payload


def _skeleton(header: dict) -> StackedModel:
    d, depth, hid = header["embed_dim"], header["depth"], header["hidden_dim"]
    vocab = Vocab(header["vocab"], normalize_width=header.get("normalize_width", False))
    if len(vocab) != len(header["vocab"]) + 1:
        raise ModelFormatError("header", "vocabulary contains duplicate characters")
    cfg = TrainConfig.from_dict(header.get("config", {}))
    return StackedModel(vocab, EmbeddingTable(np.zeros((d, len(vocab)))),
                        StackedBlstm.zeros(d, depth, header["peepholes"]), OutputHead.zeros(2 * d, hid), cfg)


def loads(data: bytes) -> StackedModel:
    if data[:len(MAGIC)] != MAGIC:
        raise ModelFormatError("magic", f"expected {MAGIC!r}, found {bytes(data[:len(MAGIC)])!r}")
    pos = len(MAGIC)
    if len(data) < pos + _HLEN.size:
        raise ModelFormatError("header", "file ends before the header length")
    (hlen,) = _HLEN.unpack_from(data, pos)
    pos += _HLEN.size
    if len(data) < pos + hlen:
        raise ModelFormatError("header", f"expected {hlen} header bytes, found {len(data) - pos}")
    try:
        header = json.loads(data[pos:pos + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError("header", f"unreadable header ({exc})") from None
    pos += hlen
    if header.get("format_version") != FORMAT_VERSION:
        raise ModelFormatError("header", f"unsupported format version {header.get('format_version')!r}")
    try:
        model = _skeleton(header)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ModelFormatError):
            raise
        raise ModelFormatError("header", f"invalid header field ({exc})") from None
    params = model.params()
    expected = 4 * sum(arr.size for _, arr in params)
    actual = len(data) - pos
    if actual != expected:
        raise ModelFormatError("payload", f"expected {expected} payload bytes, found {actual}")
    values = np.frombuffer(data, dtype="<f4", offset=pos)
    k = 0
    for _, arr in params:
        arr[...] = values[k:k + arr.size].reshape(arr.shape)
        k += arr.size
    return model


def save_model(model: StackedModel, path: str | os.PathLike) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(model))


def load_model(path: str | os.PathLike) -> StackedModel:
    with open(path, "rb") as fh:
        return loads(fh.read())
