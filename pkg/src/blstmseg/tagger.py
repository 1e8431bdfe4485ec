"""Character lookup, the B/M/E/S output head and segmentation <-> tag conversion."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .linalg import Rng, ShapeError, init_uniform, softmax

TAGS = "BMES"
B, M, E, S = range(4)
N_TAGS = 4
UNK = "<unk>"


class CorpusError(ValueError):
    """Malformed segmented text."""


def to_halfwidth(text: str) -> str:
    """Map full-width ASCII variants (U+FF01..U+FF5E) and the ideographic space to ASCII."""
    out = []
    for ch in text:
        cp = ord(ch)
        if 0xFF01 <= cp <= 0xFF5E:
            out.append(chr(cp - 0xFEE0))
        elif cp == 0x3000:
            out.append(" ")
        else:
            out.append(ch)
    return "".join(out)


class Vocab:
    """Dense character ids; id 0 is reserved for unknown characters."""

    unk_id = 0

    def __init__(self, chars: Iterable[str] = (), normalize_width: bool = False):
        self.normalize_width = normalize_width
        self.id_to_char = [UNK]
        self.char_to_id: dict[str, int] = {}
        for ch in chars:
            self.add(ch)

    def add(self, ch: str) -> int:
        if len(ch) != 1:
            raise ValueError(f"vocabulary entries are single characters, got {ch!r}")
        if self.normalize_width:
            ch = to_halfwidth(ch)
        if ch not in self.char_to_id:
            self.char_to_id[ch] = len(self.id_to_char)
            self.id_to_char.append(ch)
        return self.char_to_id[ch]

    def __len__(self) -> int:
        return len(self.id_to_char)

    def __contains__(self, ch: str) -> bool:
        return self.id(ch) != self.unk_id

    def __eq__(self, other) -> bool:
        return (isinstance(other, Vocab) and self.id_to_char == other.id_to_char
                and self.normalize_width == other.normalize_width)

    def id(self, ch: str) -> int:
        if self.normalize_width:
            ch = to_halfwidth(ch)
        return self.char_to_id.get(ch, self.unk_id)

    def ids(self, chars: Sequence[str]) -> np.ndarray:
        return np.fromiter((self.id(ch) for ch in chars), dtype=np.int64, count=len(chars))

    def chars(self) -> list[str]:
        """Known characters in id order (excludes the unknown slot)."""
        return self.id_to_char[1:]


@dataclass
class EmbeddingTable:
    m: np.ndarray  # (d, |C|)

    @classmethod
    def init(cls, rng: Rng, dim: int, vocab_size: int, scale: float = 0.05) -> "EmbeddingTable":
        return cls(init_uniform(rng, dim, vocab_size, scale))

    @property
    def dim(self) -> int:
        return self.m.shape[0]


def embed(vocab: Vocab, table: EmbeddingTable, chars: Sequence[str]) -> np.ndarray:
    """(T, d) matrix whose row t is the embedding column of ``chars[t]``."""
    if table.m.shape[1] != len(vocab):
        raise ShapeError(f"embedding table has {table.m.shape[1]} columns for a vocabulary of {len(vocab)}")
    return table.m[:, vocab.ids(chars)].T


def substitute_rare(ids: np.ndarray, rare: np.ndarray, rng: Rng, rate: float = 0.5) -> np.ndarray:
    """Replace ids flagged in ``rare`` by the unknown id, each occurrence with probability ``rate``."""
    hit = rare[ids]
    if not hit.any():
        return ids
    drop = hit & (rng.random(ids.shape) < rate)
    return np.where(drop, Vocab.unk_id, ids)


@dataclass
class OutputHead:
    W_h: np.ndarray  # (d_hid, 2d)
    b_h: np.ndarray
    W_o: np.ndarray  # (4, d_hid)
    b_o: np.ndarray

    @classmethod
    def init(cls, rng: Rng, feat_dim: int, hidden: int, scale: float = 0.05) -> "OutputHead":
        return cls(init_uniform(rng, hidden, feat_dim, scale), np.zeros(hidden),
                   init_uniform(rng, N_TAGS, hidden, scale), np.zeros(N_TAGS))

    @classmethod
    def zeros(cls, feat_dim: int, hidden: int) -> "OutputHead":
        return cls(np.zeros((hidden, feat_dim)), np.zeros(hidden), np.zeros((N_TAGS, hidden)), np.zeros(N_TAGS))

    def arrays(self) -> list[tuple[str, np.ndarray]]:
        return [("W_h", self.W_h), ("b_h", self.b_h), ("W_o", self.W_o), ("b_o", self.b_o)]

    def copy(self) -> "OutputHead":
        return OutputHead(self.W_h.copy(), self.b_h.copy(), self.W_o.copy(), self.b_o.copy())


def head_forward(head: OutputHead, feats) -> tuple[np.ndarray, np.ndarray]:
    """Logits ``W_o tanh(W_h feat + b_h) + b_o`` per position, plus the hidden activations."""
    feats = np.asarray(feats, dtype=np.float64)
    if head.W_o.shape[0] != N_TAGS:
        raise ShapeError(f"output layer must have {N_TAGS} rows, got {head.W_o.shape[0]}")
    if feats.shape[-1] != head.W_h.shape[1]:
        raise ShapeError(f"head expects {head.W_h.shape[1]} features, got {feats.shape}")
    hidden = np.tanh(feats @ head.W_h.T + head.b_h)
    return hidden @ head.W_o.T + head.b_o, hidden


def head_backward(head: OutputHead, feats, hidden, grad_logits) -> tuple[OutputHead, np.ndarray]:
    feats2 = feats.reshape(-1, feats.shape[-1])
    hid2 = hidden.reshape(-1, hidden.shape[-1])
    gl = grad_logits.reshape(-1, N_TAGS)
    g_hid = (gl @ head.W_o) * (1.0 - hid2 ** 2)
    grads = OutputHead(g_hid.T @ feats2, g_hid.sum(axis=0), gl.T @ hid2, gl.sum(axis=0))
    return grads, (g_hid @ head.W_h).reshape(feats.shape)


def predict_tags(head: OutputHead, feats) -> tuple[np.ndarray, np.ndarray]:
    """Most probable tag per position (ties go to the lowest tag index) and the tag distribution."""
    logits, _ = head_forward(head, feats)
    probs = softmax(logits)
    return probs.argmax(axis=-1), probs


def label_from_segmentation(words: Sequence[str]) -> list[int]:
    tags: list[int] = []
    for word in words:
        n = len(word)
        if n == 0:
            raise CorpusError("empty word in segmentation")
        tags.extend([S] if n == 1 else [B] + [M] * (n - 2) + [E])
    return tags


def decode_segmentation(chars: Sequence[str], tags: Sequence[int]) -> list[str]:
    """Invert the tagging. Ill-formed tag runs are repaired greedily:
    a word is closed before every B or S and after every E or S."""
    if len(chars) != len(tags):
        raise ShapeError(f"decode_segmentation: {len(chars)} characters but {len(tags)} tags")
    words: list[str] = []
    current: list[str] = []
    for ch, tag in zip(chars, tags):
        if tag in (B, S) and current:
            words.append("".join(current))
            current = []
        current.append(ch)
        if tag in (E, S):
            words.append("".join(current))
            current = []
    if current:
        words.append("".join(current))
    return words


def tags_to_str(tags: Iterable[int]) -> str:
    return "".join(TAGS[t] for t in tags)
