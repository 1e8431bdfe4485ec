"""Segmented-corpus reading, vocabulary construction and word-level P/R/F scoring.

Input files are Bakeoff-style: UTF-8, one sentence per line, words separated
by runs of whitespace (ASCII or full-width).
"""

from __future__ import annotations

import io
import os
from collections import Counter
from dataclasses import dataclass, field
from typing import BinaryIO, Iterable, Iterator, Sequence

from .tagger import CorpusError, Vocab, to_halfwidth


@dataclass
class Corpus:
    sentences: list[list[str]]
    source: str = "<memory>"

    def __len__(self) -> int:
        return len(self.sentences)

    def __iter__(self):
        return iter(self.sentences)

    def __getitem__(self, idx):
        if isinstance(idx, slice):
            return Corpus(self.sentences[idx], self.source)
        return self.sentences[idx]

    def raw_lines(self) -> list[str]:
        return ["".join(words) for words in self.sentences]

    def n_chars(self) -> int:
        return sum(len(w) for words in self.sentences for w in words)


@dataclass
class EvalReport:
    correct_words: int
    gold_words: int
    pred_words: int
    precision: float = field(init=False)
    recall: float = field(init=False)
    f1: float = field(init=False)

    def __post_init__(self):
        self.precision = self.correct_words / self.pred_words if self.pred_words else 0.0
        self.recall = self.correct_words / self.gold_words if self.gold_words else 0.0
        pr = self.precision + self.recall
        self.f1 = 2 * self.precision * self.recall / pr if pr else 0.0

    def format(self) -> str:
        return (f"P={self.precision:.6f} R={self.recall:.6f} F={self.f1:.6f} "
                f"correct={self.correct_words} gold={self.gold_words} pred={self.pred_words}")


def iter_lines(stream: BinaryIO) -> Iterator[str]:
    """Decode a byte stream line by line; bad UTF-8 raises with the absolute byte offset."""
    offset = 0
    for raw in stream:
        try:
            line = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CorpusError(f"invalid UTF-8 at byte offset {offset + exc.start}") from None
        offset += len(raw)
        yield line


def split_words(line: str) -> list[str]:
    # str.split() with no argument splits on every Unicode whitespace run, U+3000 included
    return line.split()


def parse_corpus(text: str | bytes | BinaryIO | Iterable[str], source: str = "<memory>") -> Corpus:
    if isinstance(text, bytes):
        text = io.BytesIO(text)
    if isinstance(text, str):
        lines: Iterable[str] = text.splitlines()
    elif hasattr(text, "read") and not isinstance(text, io.TextIOBase):
        lines = iter_lines(text)
    else:
        lines = text
    sentences = [words for words in (split_words(line) for line in lines) if words]
    return Corpus(sentences, source)


def read_corpus(path: str | os.PathLike) -> Corpus:
    with open(path, "rb") as fh:
        return parse_corpus(fh, source=str(path))


def char_counts(corpus: Corpus) -> Counter:
    counts: Counter = Counter()
    for words in corpus.sentences:
        for w in words:
            counts.update(w)
    return counts


def build_vocab(corpus: Corpus, min_freq: int = 1, normalize_width: bool = False) -> Vocab:
    """Ids in order of first occurrence for every character seen at least ``min_freq`` times."""
    if min_freq < 1:
        raise ValueError(f"min_freq must be >= 1, got {min_freq}")
    if not corpus.sentences:
        raise CorpusError(f"cannot build a vocabulary from empty corpus {corpus.source}")
    norm = to_halfwidth if normalize_width else (lambda ch: ch)
    counts: Counter = Counter()
    for ch, n in char_counts(corpus).items():
        counts[norm(ch)] += n
    vocab = Vocab(normalize_width=normalize_width)
    for words in corpus.sentences:
        for w in words:
            for ch in w:
                if counts[norm(ch)] >= min_freq:
                    vocab.add(ch)
    return vocab


def word_spans(words: Sequence[str]) -> set[tuple[int, int]]:
    spans = set()
    start = 0
    for w in words:
        spans.add((start, start + len(w)))
        start += len(w)
    return spans


def score_prf(gold: Corpus | Sequence[Sequence[str]], pred: Corpus | Sequence[Sequence[str]]) -> EvalReport:
    """Micro-averaged word P/R/F; a predicted word counts iff its character span is a gold span."""
    gold_s = list(gold)
    pred_s = list(pred)
    if len(gold_s) != len(pred_s):
        raise CorpusError(f"sentence count mismatch: gold has {len(gold_s)}, prediction has {len(pred_s)}")
    correct = n_gold = n_pred = 0
    for idx, (g, p) in enumerate(zip(gold_s, pred_s)):
        if "".join(g) != "".join(p):
            raise CorpusError(f"character mismatch between gold and prediction in sentence {idx}")
        gs, ps = word_spans(g), word_spans(p)
        correct += len(gs & ps)
        n_gold += len(g)
        n_pred += len(p)
    return EvalReport(correct, n_gold, n_pred)
