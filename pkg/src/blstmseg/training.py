"""End-to-end model, loss, SGD training loop, inference and gradient checking."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Sequence

import gmpy2
import numpy as np

from .blstm import DropoutMask, StackedBlstm, check_keep_prob, stack_backward, stack_forward
from .corpus_eval import Corpus, EvalReport, char_counts, score_prf
from . import reference
from .linalg import Rng, log_softmax, softmax
from .tagger import (N_TAGS, EmbeddingTable, OutputHead, Vocab, decode_segmentation, head_backward,
                     head_forward, label_from_segmentation, substitute_rare)

log = logging.getLogger(__name__)


OPTIMIZERS = ("adagrad", "sgd")

# AdaGrad moves every weight by about lr on its first updates, so the change in
# a pre-activation grows with the fan-in; the default keeps lr * embed_dim fixed.
ADAGRAD_LR_TIMES_DIM = 1.28
SGD_DEFAULT_LR = 0.1


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    embed_dim: int = 200
    depth: int = 3
    keep_prob: float = 0.8
    learning_rate: float | None = None  # None: see effective_lr
    epochs: int = 10
    batch_size: int = 32
    seed: int = 1
    peepholes: bool = False
    clip: float = 5.0
    optimizer: str = "adagrad"  # or "sgd"
    momentum: float = 0.0  # sgd only
    init_scale: float = 0.05
    forget_bias: float = 1.0
    hidden_dim: int | None = None  # head hidden layer; defaults to embed_dim
    unk_rate: float = 0.5
    min_freq: int = 1
    normalize_width: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.embed_dim <= 0:
            raise ValueError(f"embed_dim must be positive, got {self.embed_dim}")
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")
        check_keep_prob(self.keep_prob)
        if self.clip <= 0:
            raise ValueError(f"clip must be positive, got {self.clip}")
        if self.learning_rate is not None and self.learning_rate < 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")

    @property
    def effective_lr(self) -> float:
        """``learning_rate`` if set, else 1.28 / embed_dim for AdaGrad and 0.1 for SGD."""
        if self.learning_rate is not None:
            return self.learning_rate
        if self.optimizer == "adagrad":
            return ADAGRAD_LR_TIMES_DIM / self.embed_dim
        return SGD_DEFAULT_LR

    @property
    def head_dim(self) -> int:
        return self.hidden_dim or self.embed_dim

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class StackedModel:
    vocab: Vocab
    embeddings: EmbeddingTable
    net: StackedBlstm
    head: OutputHead
    config: TrainConfig

    @classmethod
    def init(cls, vocab: Vocab, cfg: TrainConfig, rng: Rng | None = None) -> "StackedModel":
        rng = rng or Rng(cfg.seed)
        d = cfg.embed_dim
        emb = EmbeddingTable.init(rng, d, len(vocab), cfg.init_scale)
        net = StackedBlstm.init(rng, d, cfg.depth, cfg.init_scale, cfg.peepholes)
        if cfg.forget_bias != 1.0:
            for layer in net.layers:
                for params in (layer.forward, layer.backward):
                    params.gate_view("f")["b"][:] = cfg.forget_bias
        head = OutputHead.init(rng, 2 * d, cfg.head_dim, cfg.init_scale)
        return cls(vocab, emb, net, head, cfg)

    def params(self) -> list[tuple[str, np.ndarray]]:
        """Named parameter arrays (views) in the fixed serialisation order."""
        out = [("embeddings", self.embeddings.m)]
        for level, layer in enumerate(self.net.layers):
            for direction, params in (("fwd", layer.forward), ("bwd", layer.backward)):
                out.extend((f"layer{level}.{direction}.{name}", arr) for name, arr in params.arrays())
            if level < self.net.depth - 1:
                out.append((f"compress{level}", self.net.compressions[level]))
        out.extend((f"head.{name}", arr) for name, arr in self.head.arrays())
        return out

    def copy(self) -> "StackedModel":
        return StackedModel(self.vocab, EmbeddingTable(self.embeddings.m.copy()), self.net.copy(),
                            self.head.copy(), self.config)

    def n_params(self) -> int:
        return sum(arr.size for _, arr in self.params())


@dataclass
class SequenceBatch:
    char_ids: np.ndarray  # (B, T) int
    gold_tags: np.ndarray  # (B, T) int, 0 on padding
    mask: np.ndarray  # (B, T) 0/1 float

    @property
    def batch_size(self) -> int:
        return self.char_ids.shape[0]

    @property
    def max_len(self) -> int:
        return self.char_ids.shape[1]

    @property
    def n_positions(self) -> int:
        return int(self.mask.sum())


def make_batch(vocab: Vocab, sentences: Sequence[Sequence[str]], pad_to: int | None = None) -> SequenceBatch:
    lines = ["".join(words) for words in sentences]
    T = max([len(line) for line in lines] + [pad_to or 0])
    ids = np.zeros((len(lines), T), dtype=np.int64)
    tags = np.zeros((len(lines), T), dtype=np.int64)
    mask = np.zeros((len(lines), T))
    for b, (line, words) in enumerate(zip(lines, sentences)):
        n = len(line)
        ids[b, :n] = vocab.ids(line)
        tags[b, :n] = label_from_segmentation(words)
        mask[b, :n] = 1.0
    return SequenceBatch(ids, tags, mask)


def make_batches(corpus: Corpus | Sequence[Sequence[str]], vocab: Vocab, batch_size: int,
                 rng: Rng | None = None) -> list[SequenceBatch]:
    """Length-bucketed batches. With ``rng`` the sentence order inside equal
    lengths and the order of batches are shuffled."""
    sentences = list(corpus)
    order = list(range(len(sentences)))
    if rng is not None:
        rng.shuffle(order)
    order.sort(key=lambda i: sum(len(w) for w in sentences[i]))
    batches = [make_batch(vocab, [sentences[i] for i in order[k:k + batch_size]])
               for k in range(0, len(order), batch_size)]
    if rng is not None:
        rng.shuffle(batches)
    return batches


def cross_entropy(probs, gold, mask) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood over unmasked positions and its gradient w.r.t. the logits."""
    probs = np.asarray(probs, dtype=np.float64)
    gold = np.asarray(gold)
    mask = np.asarray(mask, dtype=np.float64)
    if probs.shape[:-1] != gold.shape or gold.shape != mask.shape:
        raise ValueError(f"cross_entropy: misaligned shapes {probs.shape}, {gold.shape}, {mask.shape}")
    n = mask.sum()
    if n == 0:
        raise ValueError("cross_entropy: no unmasked positions")
    picked = np.take_along_axis(probs, gold[..., None], axis=-1)[..., 0]
    with np.errstate(divide="ignore"):
        nll = -np.log(picked)
    loss = float(np.where(mask > 0, nll, 0.0).sum() / n)
    onehot = np.eye(probs.shape[-1])[gold]
    return loss, (probs - onehot) * (mask / n)[..., None]


def _logit_loss(logits, gold, mask) -> tuple[float, np.ndarray]:
    # same quantity as cross_entropy(softmax(logits)) but via log-softmax
    n = mask.sum()
    if n == 0:
        raise ValueError("cross_entropy: no unmasked positions")
    lp = log_softmax(logits)
    picked = np.take_along_axis(lp, gold[..., None], axis=-1)[..., 0]
    loss = float(-(picked * mask).sum() / n)
    grad = (np.exp(lp) - np.eye(N_TAGS)[gold]) * (mask / n)[..., None]
    return loss, grad


def forward_logits(model: StackedModel, ids_tb: np.ndarray, mask_tb: np.ndarray,
                   dropout: DropoutMask | None = None):
    xs = model.embeddings.m[:, ids_tb].transpose(1, 2, 0)  # (T, B, d)
    feats, tape = stack_forward(model.net, xs, mask_tb, dropout)
    logits, hidden = head_forward(model.head, feats)
    return logits, (feats, hidden, tape)


@dataclass
class Gradients:
    model: StackedModel  # gradient arrays laid out like the model
    touched: np.ndarray  # embedding columns that received gradient

    def arrays(self) -> list[np.ndarray]:
        return [arr for _, arr in self.model.params()]

    def global_norm(self) -> float:
        return math.sqrt(sum(float(np.vdot(g, g)) for g in self.arrays()))


def loss_and_grads(model: StackedModel, batch: SequenceBatch,
                   dropout: DropoutMask | None = None) -> tuple[float, Gradients]:
    ids = batch.char_ids.T
    mask = batch.mask.T
    logits, (feats, hidden, tape) = forward_logits(model, ids, mask, dropout)
    loss, g_logits = _logit_loss(logits, batch.gold_tags.T, mask)
    head_grads, g_feats = head_backward(model.head, feats, hidden, g_logits)
    sg = stack_backward(model.net, tape, g_feats)
    emb_grad = np.zeros_like(model.embeddings.m)
    g_x = sg.grad_xs.reshape(-1, model.embeddings.dim)
    flat_ids = ids.reshape(-1)
    np.add.at(emb_grad.T, flat_ids, g_x)
    touched = np.unique(flat_ids[mask.reshape(-1) > 0])
    grads = StackedModel(model.vocab, EmbeddingTable(emb_grad),
                         StackedBlstm(sg.layers, sg.compressions), head_grads, model.config)
    return loss, Gradients(grads, touched)


def batch_loss(model: StackedModel, batch: SequenceBatch, dropout: DropoutMask | None = None) -> float:
    logits, _ = forward_logits(model, batch.char_ids.T, batch.mask.T, dropout)
    return _logit_loss(logits, batch.gold_tags.T, batch.mask.T)[0]


def clip_global_norm(grads: Gradients, clip: float) -> float:
    """Rescale in place so the global norm is at most ``clip``; returns the pre-clip norm."""
    norm = grads.global_norm()
    if norm > clip:
        scale = clip / norm
        for g in grads.arrays():
            g *= scale
    return norm


class Sgd:
    """SGD with optional classical momentum or AdaGrad scaling.

    The embedding update (and its optimizer state) touches only the columns
    used in the batch.
    """

    def __init__(self, learning_rate: float, momentum: float = 0.0, adagrad: bool = False,
                 adagrad_eps: float = 1e-8):
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.adagrad = adagrad
        self.adagrad_eps = adagrad_eps
        self.slots: list[np.ndarray] | None = None
        self.steps = 0

    def apply(self, model: StackedModel, grads: Gradients) -> None:
        self.steps += 1
        if self.learning_rate == 0:
            return
        params = [arr for _, arr in model.params()]
        gs = grads.arrays()
        lr = self.learning_rate
        if self.slots is None and (self.momentum or self.adagrad):
            self.slots = [np.zeros_like(p) for p in params]
        cols = grads.touched
        for k, (p, g) in enumerate(zip(params, gs)):
            if k == 0:
                # embeddings: restrict to used columns
                p, g = p[:, cols], g[:, cols]
                slot = None if self.slots is None else self.slots[0][:, cols]
            else:
                slot = None if self.slots is None else self.slots[k]
            if self.adagrad:
                slot += g * g
                step = lr * g / (np.sqrt(slot) + self.adagrad_eps)
            elif self.momentum:
                slot *= self.momentum
                slot += g
                step = lr * slot
            else:
                step = lr * g
            if k == 0:
                params[0][:, cols] = p - step
                if slot is not None:
                    self.slots[0][:, cols] = slot
            else:
                p -= step


def make_optimizer(cfg: TrainConfig) -> Sgd:
    return Sgd(cfg.effective_lr, cfg.momentum, adagrad=cfg.optimizer == "adagrad")


def train_step(model: StackedModel, batch: SequenceBatch, cfg: TrainConfig, rng: Rng,
               optimizer: Sgd | None = None) -> float:
    """One forward/backward/update; returns the pre-update mean loss."""
    optimizer = optimizer or make_optimizer(cfg)
    dropout = None
    if cfg.keep_prob < 1.0:
        shape = (batch.max_len, batch.batch_size, cfg.embed_dim)
        dropout = DropoutMask.sample(rng, cfg.keep_prob, shape, model.net.depth)
    loss, grads = loss_and_grads(model, batch, dropout)
    if not math.isfinite(loss) or not all(np.isfinite(g).all() for g in grads.arrays()):
        max_grad = max((float(np.abs(g[~np.isnan(g)]).max(initial=0.0)) for g in grads.arrays()), default=0.0)
        raise TrainingDiverged(f"non-finite loss/gradient at step {optimizer.steps}: "
                               f"loss={loss} max|grad|={max_grad}")
    clip_global_norm(grads, cfg.clip)
    optimizer.apply(model, grads)
    return loss


def predict(model: StackedModel, lines: Sequence[str], batch_size: int = 64) -> list[np.ndarray]:
    """Tag ids per input line (dropout off)."""
    order = sorted(range(len(lines)), key=lambda i: len(lines[i]))
    out: list[np.ndarray] = [np.zeros(0, dtype=np.int64)] * len(lines)
    for k in range(0, len(order), batch_size):
        idx = [i for i in order[k:k + batch_size] if lines[i]]
        if not idx:
            continue
        T = max(len(lines[i]) for i in idx)
        ids = np.zeros((T, len(idx)), dtype=np.int64)
        mask = np.zeros((T, len(idx)))
        for b, i in enumerate(idx):
            ids[:len(lines[i]), b] = model.vocab.ids(lines[i])
            mask[:len(lines[i]), b] = 1.0
        logits, _ = forward_logits(model, ids, mask)
        tags = softmax(logits).argmax(axis=-1)
        for b, i in enumerate(idx):
            out[i] = tags[:len(lines[i]), b]
    return out


def segment(model: StackedModel, lines: Sequence[str], batch_size: int = 64) -> list[list[str]]:
    lines = ["".join(line.split()) for line in lines]
    return [decode_segmentation(line, tags) for line, tags in zip(lines, predict(model, lines, batch_size))]


@dataclass
class DevScore:
    tag_accuracy: float
    report: EvalReport


def evaluate(model: StackedModel, corpus: Corpus | Sequence[Sequence[str]]) -> DevScore:
    sentences = list(corpus)
    lines = ["".join(words) for words in sentences]
    tags = predict(model, lines)
    right = total = 0
    preds = []
    for line, words, t in zip(lines, sentences, tags):
        gold = np.asarray(label_from_segmentation(words))
        right += int((gold == t).sum())
        total += len(gold)
        preds.append(decode_segmentation(line, t))
    return DevScore(right / total if total else 0.0, score_prf(sentences, preds))


@dataclass
class TrainResult:
    model: StackedModel
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0


def format_epoch(entry: dict) -> str:
    return (f"epoch={entry['epoch']} loss={entry['loss']:.6f} dev_acc={entry['dev_acc']:.6f} "
            f"dev_f1={entry['dev_f1']:.6f} seconds={entry['seconds']:.3f}")


def train(model: StackedModel, corpus: Corpus, dev: Corpus | None, cfg: TrainConfig,
          emit: Callable[[str], None] | None = print) -> TrainResult:
    """Seeded mini-batch training; keeps the snapshot with the best dev F1
    (the last epoch's when there is no dev data)."""
    if not len(corpus):
        raise ValueError("training corpus is empty")
    if dev is None or not len(dev):
        log.warning("no dev sentences; skipping per-epoch evaluation")
        dev = None
    rng = Rng(cfg.seed ^ 0x5EED)
    optimizer = make_optimizer(cfg)
    counts = char_counts(corpus)
    rare = np.zeros(len(model.vocab), dtype=bool)
    for ch, n in counts.items():
        if n == 1 and ch in model.vocab:
            rare[model.vocab.id(ch)] = True
    result = TrainResult(model.copy())
    best_f1 = -1.0
    for epoch in range(1, cfg.epochs + 1):
        start = time.perf_counter()
        total = weight = 0.0
        for batch in make_batches(corpus, model.vocab, cfg.batch_size, rng):
            if cfg.unk_rate > 0:
                batch.char_ids = substitute_rare(batch.char_ids, rare, rng, cfg.unk_rate)
            loss = train_step(model, batch, cfg, rng, optimizer)
            total += loss * batch.n_positions
            weight += batch.n_positions
        entry = {"epoch": epoch, "loss": total / weight, "dev_acc": math.nan, "dev_f1": math.nan}
        if dev is not None:
            score = evaluate(model, dev)
            entry["dev_acc"], entry["dev_f1"] = score.tag_accuracy, score.report.f1
        entry["seconds"] = time.perf_counter() - start
        result.history.append(entry)
        if emit:
            emit(format_epoch(entry))
        f1 = entry["dev_f1"] if dev is not None else 0.0
        if dev is None or f1 > best_f1:
            best_f1 = f1
            result.model = model.copy()
            result.best_epoch = epoch
    return result


@dataclass
class GradCheckReport:
    errors: dict[str, float]
    tolerance: float
    n_checked: int

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance

    def format(self) -> str:
        lines = [f"{name:24s} {err:.3e}" for name, err in self.errors.items()]
        verdict = "PASS" if self.passed else "FAIL"
        lines.append(f"{verdict} max_rel_error={self.max_error:.3e} tolerance={self.tolerance:g} "
                     f"checked={self.n_checked}")
        return "\n".join(lines)


def rel_error(a, n):
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)


def grad_check(model: StackedModel, sentence: Sequence[str], tolerance: float = 1e-6,
               eps: float = 1e-5, dropout: DropoutMask | None = None,
               precision=np.longdouble, chunk: int = 256, refine_bits: int = 160) -> GradCheckReport:
    """Compare analytic gradients to central differences for every parameter
    block (embedding columns restricted to the characters in ``sentence``).

    Relative error is ``|a - n| / max(|a|, |n|, 1e-8)``. The numeric side
    evaluates the independent network in ``reference`` at ``precision``.
    Near-zero gradient entries hit the 1e-8 floor, where even extended
    precision rounding in the loss, divided by 2*eps, is visible; entries
    whose error exceeds a tenth of ``tolerance`` are therefore re-differenced
    with ``refine_bits``-bit mpfr arithmetic (same eps). ``refine_bits=0``
    disables that pass.
    """
    batch = make_batch(model.vocab, [sentence])
    _, grads = loss_and_grads(model, batch, dropout)
    named = model.params()
    shapes = [(name, arr.shape) for name, arr in named]
    theta = reference.flatten(named).astype(precision)
    analytic = reference.flatten(list(zip([n for n, _ in named], grads.arrays())))
    ids, gold = batch.char_ids[0], batch.gold_tags[0]
    masks = None if dropout is None else [m[:, 0, :].astype(precision) for m in dropout.masks]

    # flat indices to probe, tagged with their block
    probe, owner = [], []
    pos = 0
    used = set(np.unique(ids).tolist())
    for k, (name, arr) in enumerate(named):
        if name == "embeddings":
            flat = [r * arr.shape[1] + c for r in range(arr.shape[0]) for c in sorted(used)]
        else:
            flat = range(arr.size)
        probe.extend(pos + f for f in flat)
        owner.extend([k] * len(flat))
        pos += arr.size
    probe_arr = np.asarray(probe, dtype=np.int64)
    numeric = np.empty(len(probe_arr))
    step = precision(eps)
    for start in range(0, len(probe_arr), chunk):
        idx = probe_arr[start:start + chunk]
        rows = np.repeat(theta[None, :], 2 * len(idx), axis=0)
        span = np.arange(len(idx))
        rows[2 * span, idx] += step
        rows[2 * span + 1, idx] -= step
        losses = reference.reference_loss(reference.unflatten(shapes, rows), model.net.depth, ids, gold, masks)
        numeric[start:start + len(idx)] = (losses[0::2] - losses[1::2]) / (2 * step)
    err = rel_error(analytic[probe_arr], numeric)
    if refine_bits:
        suspect = np.flatnonzero(err > tolerance / 10)
        if suspect.size:
            with gmpy2.context(gmpy2.get_context(), precision=refine_bits):
                theta_mp = reference.to_mpfr(reference.flatten(named), refine_bits)
                masks_mp = None if masks is None else [reference.to_mpfr(m, refine_bits) for m in masks]
                step_mp = gmpy2.mpfr(eps)
                for j in suspect:
                    rows = np.repeat(theta_mp[None, :], 2, axis=0)
                    rows[0, probe_arr[j]] += step_mp
                    rows[1, probe_arr[j]] -= step_mp
                    losses = reference.reference_loss(reference.unflatten(shapes, rows), model.net.depth,
                                                      ids, gold, masks_mp)
                    numeric[j] = float((losses[0] - losses[1]) / (2 * step_mp))
            err[suspect] = rel_error(analytic[probe_arr[suspect]], numeric[suspect])
    errors: dict[str, float] = {}
    owner_arr = np.asarray(owner)
    for k, (name, _) in enumerate(named):
        sel = owner_arr == k
        errors[name] = float(err[sel].max()) if sel.any() else 0.0
    return GradCheckReport(errors, tolerance, len(probe_arr))


def random_model(embed_dim: int, depth: int, vocab_size: int = 8, peepholes: bool = False,
                 seed: int = 0, scale: float = 0.5) -> StackedModel:
    """Small randomly initialised model (all parameters, biases included, drawn
    from U[-scale, scale]) for checks."""
    rng = Rng(seed)
    vocab = Vocab(chr(ord("a") + k) for k in range(vocab_size - 1))
    cfg = TrainConfig(embed_dim=embed_dim, depth=depth, peepholes=peepholes, keep_prob=1.0, init_scale=scale)
    model = StackedModel.init(vocab, cfg, rng)
    for _, arr in model.params():
        arr[...] = rng.uniform(-scale, scale, arr.shape)
    return model
