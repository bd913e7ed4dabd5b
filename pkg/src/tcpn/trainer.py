"""Weakly-supervised objective and the training loop.

Per document and category the loss has three parts: the negative log
likelihood of the gold value under the mixed copy/predict distribution
(teacher forcing), a classification term that labels the token the decoder
copied from, and a hinge that caps the head's total probability mass for a
category at the value's length.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .autodiff import Graph, Tensor, ops
from .decoder import EPS, Memory, SourceIndex, prepare_memory, teacher_force
from .document import EOS, Document
from .lattice import LatticeLayout
from .model import Model

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LossWeights:
    lambda_s: float = 1.0
    lambda_c: float = 1.0
    lambda_n: float = 1.0

    def __post_init__(self):
        if min(self.lambda_s, self.lambda_c, self.lambda_n) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class TrainConfig:
    epochs: int = 60
    batch_size: int = 4
    lr: float = 1.0
    rho: float = 0.9
    eps: float = 1e-6
    decay_epochs: tuple[int, ...] = ()  # the rate is multiplied by 0.1 after each of these epochs
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    f1_every: int = 0  # 0: train F1 only after the last epoch
    max_len: int = 40

    def __post_init__(self):
        self.decay_epochs = tuple(sorted(self.decay_epochs))
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if any(e >= self.epochs or e < 1 for e in self.decay_epochs):
            raise ValueError(f"decay epochs {self.decay_epochs} must lie in [1, epochs)")


class TrainingError(RuntimeError):
    pass


# ---------------------------------------------------------------- examples

@dataclass
class Example:
    doc: Document
    layout: LatticeLayout
    ids: np.ndarray          # [N] vocabulary ids in reading order
    source: SourceIndex
    targets: np.ndarray      # [K, T] extended ids, rows padded with EOS
    lengths: np.ndarray      # [K] steps per category, value length + 1
    budgets: np.ndarray      # [K] value length (0 for absent categories)


def make_example(model: Model, doc: Document) -> Example:
    layout = model.layout(doc)
    source = SourceIndex.build(layout.tokens, model.vocab)
    seqs = [[source.ext_id(t, model.vocab) for t in doc.target(c)] + [EOS] for c in model.categories]
    t_max = max(len(s) for s in seqs)
    targets = np.full((len(seqs), t_max), EOS, dtype=np.int64)
    for k, s in enumerate(seqs):
        targets[k, :len(s)] = s
    lengths = np.array([len(s) for s in seqs], dtype=np.int64)
    return Example(doc, layout, model.token_ids(layout), source, targets, lengths, lengths - 1)


# ---------------------------------------------------------------- loss terms

def sequence_loss(probs: Sequence[Tensor]) -> Tensor:
    """Mean over steps of ``-log(P_t + eps)`` for one category."""
    terms = [ops.neg(ops.log(ops.add(p, EPS))) for p in probs]
    return ops.mul(ops.sum(ops.concat([ops.reshape(t, (1,)) for t in terms], axis=0)), 1.0 / len(terms))


def classification_loss(log_probs: Tensor, picks: Sequence[int], category: int) -> Tensor:
    """Mean of ``-log P(category)`` at the selected token rows; zero when nothing was selected."""
    if not picks:
        return Tensor(np.zeros((), log_probs.dtype))
    rows = np.asarray(picks, dtype=np.int64)
    chosen = ops.index(log_probs, (rows, np.full(len(rows), category)))
    return ops.neg(ops.mean(chosen))


def suppression_loss(probs: Tensor, category: int, budget: float) -> Tensor:
    """``max(0, sum_i P_i(category) - budget)``."""
    mass = ops.sum(ops.index(probs, (slice(None), category)))
    return ops.clamp_min(ops.sub(mass, budget), 0.0)


Gates = list[list[int]]  # per category: selected token rows, one per qualifying step


def copy_gates(steps, lengths: np.ndarray) -> Gates:
    """Steps with ``p_copy > 0.5`` (within each category's length) select ``argmax alpha``."""
    out: Gates = [[] for _ in lengths]
    for t, st in enumerate(steps):
        for k, n in enumerate(lengths):
            if t < n and st.p_copy[k] > 0.5:
                out[k].append(int(np.argmax(st.alpha[k])))
    return out


@dataclass
class LossParts:
    total: Tensor
    seq: float
    cls: float
    sup: float
    gates: Gates


def document_loss(model: Model, ex: Example, weights: LossWeights, gates: Gates | None = None) -> LossParts:
    """Weighted objective for one document; ``gates`` pins the copy-step selection (for gradient checks)."""
    p = model.params
    F = model.features(ex.layout, ex.ids).F
    logits = model.head_logits(F)
    log_probs = ops.log_softmax(logits, axis=-1)
    probs = ops.softmax(logits, axis=-1)
    k = len(model.categories)
    class_ids = np.arange(1, k + 1)

    mem: Memory = prepare_memory(p, F, class_ids)
    steps = teacher_force(p, mem, ex.source, ex.targets)
    if gates is None:
        gates = copy_gates(steps, ex.lengths)

    seq_terms, cls_terms, sup_terms = [], [], []
    for r in range(k):
        probs_r = [ops.index(steps[t].prob, r) for t in range(ex.lengths[r])]
        seq_terms.append(sequence_loss(probs_r))
        cls_terms.append(classification_loss(log_probs, gates[r], r + 1))
        sup_terms.append(suppression_loss(probs, r + 1, float(ex.budgets[r])))

    def mean(ts):
        return ops.mul(ops.sum(ops.concat([ops.reshape(t, (1,)) for t in ts], axis=0)), 1.0 / len(ts))

    ls, lc, ln = mean(seq_terms), mean(cls_terms), mean(sup_terms)
    total = ops.add(ops.add(ops.mul(ls, weights.lambda_s), ops.mul(lc, weights.lambda_c)),
                    ops.mul(ln, weights.lambda_n))
    return LossParts(total, ls.item(), lc.item(), ln.item(), gates)


# ---------------------------------------------------------------- optimizer

class Adadelta:
    """Per-parameter adaptive steps from running averages of squared gradients and updates."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1.0, rho: float = 0.9, eps: float = 1e-6):
        self.params = params
        self.lr, self.rho, self.eps = lr, rho, eps
        self.sq_grad = {n: np.zeros_like(t.data) for n, t in params.items()}
        self.sq_step = {n: np.zeros_like(t.data) for n, t in params.items()}

    def step(self, scale: float = 1.0) -> None:
        rho, eps = self.rho, self.eps
        for name, t in self.params.items():
            if t.grad is None:
                continue
            g = t.grad * scale
            self.sq_grad[name] = rho * self.sq_grad[name] + (1 - rho) * g * g
            delta = -np.sqrt(self.sq_step[name] + eps) / np.sqrt(self.sq_grad[name] + eps) * g
            self.sq_step[name] = rho * self.sq_step[name] + (1 - rho) * delta * delta
            t.data = (t.data + self.lr * delta).astype(t.data.dtype)


# ---------------------------------------------------------------- loop

def train_step(model: Model, batch: Sequence[Example], weights: LossWeights, opt: Adadelta) -> list[LossParts]:
    model.zero_grad()
    parts = []
    for ex in batch:
        with Graph() as g:
            lp = document_loss(model, ex, weights)
            if not math.isfinite(lp.total.item()):
                raise TrainingError(f"non-finite loss on document {ex.doc.doc_id!r}")
            g.backward(lp.total)
        parts.append(lp)
    opt.step(scale=1.0 / len(batch))
    return parts


def fit(model: Model, docs: Sequence[Document], cfg: TrainConfig, out_dir: str | Path | None = None,
        evaluate: Callable[[Model, int], dict] | None = None) -> list[dict]:
    """Train in place; returns (and writes to ``metrics.jsonl``) one record per epoch.

    ``evaluate(model, epoch)`` supplies the train-F1 fields of a record; it
    runs every ``f1_every`` epochs and after the last one.
    """
    if not docs:
        raise ValueError("cannot train on an empty dataset")
    examples = [make_example(model, d) for d in docs]
    rng = np.random.default_rng(cfg.seed)
    opt = Adadelta(model.params, cfg.lr, cfg.rho, cfg.eps)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.jsonl").write_text("")
    history = []
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(examples))
        sums = np.zeros(4)
        for start in range(0, len(order), cfg.batch_size):
            batch = [examples[i] for i in order[start:start + cfg.batch_size]]
            for lp in train_step(model, batch, cfg.weights, opt):
                sums += (lp.total.item(), lp.seq, lp.cls, lp.sup)
        sums /= len(examples)
        record = {"epoch": epoch, "loss": sums[0], "L_S": sums[1], "L_C": sums[2], "L_N": sums[3],
                  "train_f1_tag": None, "train_f1_cp": None}
        if evaluate is not None and (epoch == cfg.epochs or (cfg.f1_every and epoch % cfg.f1_every == 0)):
            record.update(evaluate(model, epoch))
        record = {k: (float(v) if isinstance(v, np.floating) else v) for k, v in record.items()}
        history.append(record)
        log.info("epoch %d loss %.4f L_S %.4f L_C %.4f L_N %.4f", epoch, *sums)
        if out is not None:
            with open(out / "metrics.jsonl", "a") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
            if epoch in cfg.decay_epochs:
                model.save(out / f"checkpoint-epoch{epoch:04d}.json", {"epoch": epoch})
        if epoch in cfg.decay_epochs:
            opt.lr *= 0.1
    if out is not None:
        model.save(out / "model.json", {"epoch": cfg.epochs})
    return history


# ---------------------------------------------------------------- gradient check of the objective

def toy_problem(d: int = 8, seed: int = 1, spread: float = 0.3) -> tuple[Model, Example]:
    """A float64 model and a two-token, two-category document for finite-difference checks."""
    from .document import BoundingBox, CategorySchema, Utterance, build_vocab
    from .encoder import EncoderConfig

    doc = Document("toy", (Utterance(BoundingBox(0, 0, 10, 10), "A"), Utterance(BoundingBox(30, 0, 40, 10), "B")),
                   {"KEY": "A", "VALUE": "B"})
    model = Model.init(build_vocab([doc]), CategorySchema(("KEY", "VALUE")), EncoderConfig(d=d, depth=1),
                       seed=seed, dtype=np.float64)
    rng = np.random.default_rng(seed)
    # move every parameter off its initial value so no gradient path is trivially zero
    for name, p in model.params.items():
        p.data = p.data + rng.normal(0.0, spread, p.shape)
    model.params["embed"].data[0] = 0.0
    # a balanced copy gate, so both the copy and the predict route carry gradient
    model.params["dec.copy.b"].data[:] = rng.normal(0.0, 0.1, 1)
    return model, make_example(model, doc)


def loss_grad_check(d: int = 8, seed: int = 1, eps: float = 1e-5, max_per_param: int | None = 48) -> float:
    """Max relative error of the full objective's gradient, copy-step selection held fixed.

    Tensors larger than ``max_per_param`` are checked on a seeded sample of coordinates.
    """
    model, ex = toy_problem(d, seed)
    weights = LossWeights()
    gates = document_loss(model, ex, weights).gates
    params = [p for name, p in sorted(model.params.items()) if name != "embed"]
    params.append(model.params["embed"])
    from .autodiff import grad_check

    return grad_check(lambda: document_loss(model, ex, weights, gates).total, params, eps, max_per_param, seed)
