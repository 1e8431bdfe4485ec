"""Desk-scale learning proxy: train a small model on the PKU98 slice and
score it on the held-out slice.

Defaults reproduce the pinned regression figure used by the acceptance suite
(d=64, depth 1, keep 0.8, 10 epochs, seed 1). Needs data/pku98 from
scripts/prepare_pku98.py.

Usage: python scripts/desk_proxy.py [--epochs 10] [--embed-dim 64] [--layers 1] [--save model.bin]
"""

import argparse
import time

from blstmseg import StackedModel, TrainConfig, build_vocab, read_corpus, save_model, score_prf, segment, train


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--train", default="data/pku98/train.utf8")
    ap.add_argument("--heldout", default="data/pku98/heldout.utf8")
    ap.add_argument("--embed-dim", type=int, default=64)
    ap.add_argument("--layers", type=int, default=1)
    ap.add_argument("--dropout-keep", type=float, default=0.8)
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--optimizer", choices=["adagrad", "sgd"], default="adagrad")
    ap.add_argument("--lr", type=float, default=None)
    ap.add_argument("--save")
    args = ap.parse_args()

    corpus, heldout = read_corpus(args.train), read_corpus(args.heldout)
    cfg = TrainConfig(embed_dim=args.embed_dim, depth=args.layers, keep_prob=args.dropout_keep,
                      epochs=args.epochs, seed=args.seed, optimizer=args.optimizer, learning_rate=args.lr)
    start = time.perf_counter()
    model = StackedModel.init(build_vocab(corpus), cfg)
    result = train(model, corpus, None, cfg)
    report = score_prf(heldout, segment(result.model, heldout.raw_lines()))
    print(f"heldout {report.format()} seconds={time.perf_counter() - start:.0f}")
    if args.save:
        save_model(result.model, args.save)


if __name__ == "__main__":
    main()
