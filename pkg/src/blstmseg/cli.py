"""Command line: ``blstmseg {train,segment,eval,gradcheck}``."""

from __future__ import annotations

import argparse
import itertools
import logging
import sys
from typing import Iterator, TextIO

from .corpus_eval import Corpus, build_vocab, iter_lines, read_corpus, score_prf
from .linalg import Rng
from .modelfile import ModelFormatError, load_model, save_model
from .tagger import CorpusError
from .training import StackedModel, TrainConfig, grad_check, random_model, segment, train

EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_MODEL = 3
EXIT_MISMATCH = 4

SEGMENT_CHUNK = 512


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_ERROR):
        super().__init__(message)
        self.code = code


def _load(path: str) -> StackedModel:
    try:
        return load_model(path)
    except ModelFormatError as exc:
        raise CliError(f"corrupt model {path}: section {exc.section}: {exc}", EXIT_MODEL) from None
    except OSError as exc:
        raise CliError(f"cannot read model {path}: {exc.strerror}") from None


def _read(path: str) -> Corpus:
    try:
        return read_corpus(path)
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror}") from None
    except CorpusError as exc:
        raise CliError(f"{path}: {exc}") from None


def cmd_train(args) -> int:
    cfg = TrainConfig(
        embed_dim=args.embed_dim, depth=args.layers, keep_prob=args.dropout_keep,
        learning_rate=args.lr, epochs=args.epochs, batch_size=args.batch_size, seed=args.seed,
        peepholes=args.peepholes, clip=args.clip, optimizer=args.optimizer, momentum=args.momentum,
        hidden_dim=args.hidden_dim, unk_rate=args.unk_rate, min_freq=args.min_freq,
        normalize_width=args.normalize_width,
    )
    corpus = _read(args.corpus)
    dev = _read(args.dev) if args.dev else None
    vocab = build_vocab(corpus, cfg.min_freq, cfg.normalize_width)
    model = StackedModel.init(vocab, cfg)
    result = train(model, corpus, dev, cfg, emit=lambda line: print(line, flush=True))
    try:
        save_model(result.model, args.out)
    except OSError as exc:
        raise CliError(f"cannot write {args.out}: {exc.strerror}") from None
    return 0


def _chunks(lines: Iterator[str], size: int) -> Iterator[list[str]]:
    while True:
        chunk = list(itertools.islice(lines, size))
        if not chunk:
            return
        yield chunk


def _segment_stream(model: StackedModel, src, out: TextIO) -> None:
    for chunk in _chunks((line.rstrip("\r\n") for line in iter_lines(src)), SEGMENT_CHUNK):
        for words in segment(model, chunk):
            out.write(" ".join(words) + "\n")


def cmd_segment(args) -> int:
    model = _load(args.model)
    src = sys.stdin.buffer if args.input == "-" else open(args.input, "rb")
    out = sys.stdout if args.output == "-" else open(args.output, "w", encoding="utf-8", newline="\n")
    try:
        _segment_stream(model, src, out)
    except CorpusError as exc:
        raise CliError(f"{args.input}: {exc}") from None
    finally:
        if src is not sys.stdin.buffer:
            src.close()
        if out is not sys.stdout:
            out.close()
    return 0


def cmd_eval(args) -> int:
    gold = _read(args.gold)
    if args.pred:
        pred = _read(args.pred)
    else:
        model = _load(args.model)
        pred = Corpus(segment(model, gold.raw_lines()), args.model)
    try:
        report = score_prf(gold, pred)
    except CorpusError as exc:
        raise CliError(str(exc), EXIT_MISMATCH) from None
    print(report.format())
    return 0


def cmd_gradcheck(args) -> int:
    failed = 0
    rng = Rng(args.seed)
    for trial in range(args.trials):
        model = random_model(args.embed_dim, args.layers, peepholes=args.peepholes, seed=args.seed + trial)
        chars = "".join(model.vocab.chars())
        line = "".join(chars[rng.randbelow(len(chars))] for _ in range(args.length))
        cuts = [0] + [k for k in range(1, len(line)) if rng.random() < 0.5] + [len(line)]
        words = [line[a:b] for a, b in zip(cuts, cuts[1:])]
        report = grad_check(model, words, tolerance=args.tolerance)
        print(f"# trial {trial} d={args.embed_dim} depth={args.layers} T={args.length} "
              f"peepholes={args.peepholes}")
        print(report.format())
        failed += not report.passed
    return 0 if failed == 0 else EXIT_ERROR


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="blstmseg", description="BLSTM Chinese word segmenter")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model on a segmented corpus")
    p.add_argument("--corpus", required=True, help="segmented UTF-8 training file")
    p.add_argument("--dev", help="segmented UTF-8 dev file used for model selection")
    p.add_argument("--out", required=True, help="where to write the model")
    p.add_argument("--embed-dim", type=int, default=200)
    p.add_argument("--layers", type=int, default=3)
    p.add_argument("--dropout-keep", type=float, default=0.8)
    p.add_argument("--lr", type=float, default=None,
                   help="default: 1.28 / embed-dim for adagrad, 0.1 for sgd")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--peepholes", action="store_true")
    p.add_argument("--clip", type=float, default=5.0)
    p.add_argument("--optimizer", choices=["adagrad", "sgd"], default="adagrad")
    p.add_argument("--momentum", type=float, default=0.0, help="sgd only")
    p.add_argument("--hidden-dim", type=int, default=None)
    p.add_argument("--unk-rate", type=float, default=0.5)
    p.add_argument("--min-freq", type=int, default=1)
    p.add_argument("--normalize-width", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("segment", help="segment raw text, one sentence per line")
    p.add_argument("--model", required=True)
    p.add_argument("--input", default="-")
    p.add_argument("--output", default="-")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("eval", help="word-level P/R/F against a gold file")
    p.add_argument("--gold", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--pred", help="segmented prediction file")
    src.add_argument("--model", help="segment the stripped gold text with this model")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of all gradients")
    p.add_argument("--embed-dim", type=int, default=4)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--length", type=int, default=6)
    p.add_argument("--peepholes", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--tolerance", type=float, default=1e-6)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"blstmseg: error: {exc}", file=sys.stderr)
        return exc.code
    except ValueError as exc:
        print(f"blstmseg: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
