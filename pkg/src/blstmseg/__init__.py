"""Bidirectional LSTM character tagger for Chinese word segmentation."""

from .corpus_eval import Corpus, EvalReport, build_vocab, parse_corpus, read_corpus, score_prf
from .modelfile import load_model, save_model
from .tagger import Vocab, decode_segmentation, label_from_segmentation
from .training import StackedModel, TrainConfig, grad_check, segment, train

__version__ = "0.1.0"

__all__ = [
    "Corpus", "EvalReport", "StackedModel", "TrainConfig", "Vocab", "build_vocab", "decode_segmentation",
    "grad_check", "label_from_segmentation", "load_model", "parse_corpus", "read_corpus", "save_model",
    "score_prf", "segment", "train",
]
