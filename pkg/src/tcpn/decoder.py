"""Class-conditioned attention decoder with coverage and a copy/predict switch.

All categories of one document run as rows of a single batch. Every op used
here is row-independent (the matmuls use stacked per-row products), so a
category's trace is bit-identical whether it is decoded alone or in a batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, ops
from .document import EOS, UNK, Vocabulary

EPS = 1e-12


def _dense(rng, fan_in, shape, dtype):
    return (rng.standard_normal(shape) / np.sqrt(fan_in)).astype(dtype)


def init_decoder_params(d: int, vocab_size: int, num_categories: int, rng: np.random.Generator,
                        dtype=np.float32) -> dict[str, np.ndarray]:
    a = d  # attention hidden size
    return {
        "dec.class": rng.uniform(-0.1, 0.1, (num_categories + 1, d)).astype(dtype),
        "dec.s0": np.zeros(d, dtype),
        "dec.gru.wx": _dense(rng, 2 * d, (2 * d, 3 * d), dtype),
        "dec.gru.wh": _dense(rng, d, (d, 3 * d), dtype),
        "dec.gru.bx": np.zeros(3 * d, dtype),
        "dec.gru.bh": np.zeros(3 * d, dtype),
        "dec.att.w1": _dense(rng, d, (d, a), dtype),
        "dec.att.w2": _dense(rng, d, (d, a), dtype),
        "dec.att.w3": _dense(rng, d, (d, a), dtype),
        "dec.att.w4": _dense(rng, 1, (a,), dtype) * 0.1,
        "dec.att.b1": np.zeros(a, dtype),
        "dec.att.we": _dense(rng, a, (a,), dtype),
        "dec.pred.w": _dense(rng, 2 * d, (2 * d, vocab_size), dtype),
        "dec.pred.b": np.zeros(vocab_size, dtype),
        "dec.copy.w": _dense(rng, 3 * d, (3 * d, 1), dtype),
        "dec.copy.b": np.full(1, 5.0, dtype),  # start almost fully on copying (p_copy ~ 0.993)
    }


@dataclass
class SourceIndex:
    """Input tokens in reading order with ids over the extended vocabulary.

    Tokens outside the vocabulary get ids ``V, V+1, ...`` in order of first
    appearance, so the copy term can still emit them.
    """

    tokens: list[str]
    ext_ids: np.ndarray  # [N]
    vocab_size: int
    oov: list[str] = field(default_factory=list)

    @classmethod
    def build(cls, tokens, vocab: Vocabulary) -> SourceIndex:
        oov: list[str] = []
        ext = []
        for tok in tokens:
            if tok in vocab:
                ext.append(vocab.lookup(tok))
            else:
                if tok not in oov:
                    oov.append(tok)
                ext.append(len(vocab) + oov.index(tok))
        return cls(list(tokens), np.asarray(ext, dtype=np.int64), len(vocab), oov)

    @property
    def size(self) -> int:
        return self.vocab_size + len(self.oov)

    def ext_id(self, token: str, vocab: Vocabulary) -> int:
        if token in vocab:
            return vocab.lookup(token)
        if token in self.oov:
            return self.vocab_size + self.oov.index(token)
        return UNK  # neither in the dictionary nor in the input: no route can produce it

    def token(self, ext_id: int, vocab: Vocabulary) -> str:
        return vocab.token(ext_id) if ext_id < self.vocab_size else self.oov[ext_id - self.vocab_size]


@dataclass
class Memory:
    """Per-document quantities that do not change across steps."""

    F: Tensor           # [N, d]
    keys: Tensor        # F W2, [N, a]
    query_bias: Tensor  # C W1 + b1, [K, a]


@dataclass
class DecoderState:
    s: Tensor          # [K, h]
    coverage: Tensor   # [K, N]
    context: Tensor    # [K, d], previous step's attended feature
    step: int = 0


@dataclass
class StepOutput:
    alpha: Tensor    # [K, N]
    context: Tensor  # [K, d]
    p_pred: Tensor   # [K, V]
    p_copy: Tensor   # [K, 1]


def prepare_memory(params: dict[str, Tensor], F: Tensor, class_ids) -> Memory:
    C = ops.embedding(params["dec.class"], np.asarray(class_ids, dtype=np.int64))
    return Memory(F, ops.matmul(F, params["dec.att.w2"]),
                  ops.linear(C, params["dec.att.w1"], params["dec.att.b1"], rowwise=True))


def initial_state(params: dict[str, Tensor], mem: Memory) -> DecoderState:
    k, n, d = mem.query_bias.shape[0], mem.F.shape[0], mem.F.shape[1]
    dtype = mem.F.dtype
    s0 = ops.broadcast_to(params["dec.s0"], (k, params["dec.s0"].shape[0]))
    return DecoderState(s0, Tensor(np.zeros((k, n), dtype)), Tensor(np.zeros((k, d), dtype)), 0)


def attention_step(params: dict[str, Tensor], mem: Memory, s: Tensor, coverage: Tensor) -> tuple[Tensor, Tensor]:
    k, n = coverage.shape
    a = mem.keys.shape[1]
    q = ops.add(ops.linear(s, params["dec.att.w3"], rowwise=True), mem.query_bias)
    pre = ops.add(ops.reshape(mem.keys, (1, n, a)), ops.reshape(q, (k, 1, a)))
    pre = ops.add(pre, ops.mul(ops.reshape(coverage, (k, n, 1)), params["dec.att.w4"]))
    e = ops.sum(ops.mul(ops.tanh(pre), params["dec.att.we"]), axis=-1)
    alpha = ops.softmax(e, axis=-1)
    return alpha, ops.matmul(alpha, mem.F, rowwise=True)


def decode_step(params: dict[str, Tensor], mem: Memory, state: DecoderState, x: Tensor
                ) -> tuple[DecoderState, StepOutput]:
    """Advance every row by one step given the previous-token embeddings ``x [K, d]``."""
    s = ops.gru_cell(ops.concat([state.context, x], axis=-1), state.s, params["dec.gru.wx"], params["dec.gru.wh"],
                     params["dec.gru.bx"], params["dec.gru.bh"], rowwise=True)
    alpha, ctx = attention_step(params, mem, s, state.coverage)
    p_pred = ops.softmax(ops.linear(ops.concat([ctx, s], axis=-1), params["dec.pred.w"], params["dec.pred.b"],
                                    rowwise=True), axis=-1)
    p_copy = ops.sigmoid(ops.linear(ops.concat([ctx, s, x], axis=-1), params["dec.copy.w"], params["dec.copy.b"],
                                    rowwise=True))
    new = DecoderState(s, ops.add(state.coverage, alpha), ctx, state.step + 1)
    return new, StepOutput(alpha, ctx, p_pred, p_copy)


def final_distribution(out: StepOutput, source: SourceIndex) -> np.ndarray:
    """Dense mixed distribution ``[K, V + n_oov]``; repeated input tokens pool their attention."""
    pc = out.p_copy.data
    k = pc.shape[0]
    p = np.zeros((k, source.size), dtype=np.float64)
    p[:, :source.vocab_size] = (1.0 - pc) * out.p_pred.data
    rows = np.repeat(np.arange(k), len(source.ext_ids))
    np.add.at(p, (rows, np.tile(source.ext_ids, k)), (pc * out.alpha.data).ravel())
    return p


def target_probability(out: StepOutput, source: SourceIndex, targets: np.ndarray) -> Tensor:
    """``P(k*)`` per row for extended target ids ``targets [K]``, differentiable."""
    k = len(targets)
    match = (source.ext_ids[None, :] == targets[:, None]).astype(out.alpha.dtype)
    copy_mass = ops.sum(ops.mul(out.alpha, Tensor(match)), axis=-1, keepdims=True)
    in_vocab = targets < source.vocab_size
    picked = ops.index(out.p_pred, (np.arange(k), np.where(in_vocab, targets, 0)))
    pred_mass = ops.mul(ops.reshape(picked, (k, 1)), Tensor(in_vocab.astype(out.alpha.dtype)[:, None]))
    one_minus = ops.sub(1.0, out.p_copy)
    return ops.reshape(ops.add(ops.mul(out.p_copy, copy_mass), ops.mul(one_minus, pred_mass)), (k,))


def next_inputs(params: dict[str, Tensor], ext_ids: np.ndarray, vocab_size: int) -> Tensor:
    """Embeddings of the previous tokens; OOV ids fall back to UNK."""
    ids = np.where(ext_ids < vocab_size, ext_ids, UNK)
    return ops.embedding(params["embed"], ids, padding_idx=0)


@dataclass
class TeacherForcedStep:
    prob: Tensor       # [K] probability of the target token
    p_copy: np.ndarray  # [K]
    alpha: np.ndarray   # [K, N]


def teacher_force(params: dict[str, Tensor], mem: Memory, source: SourceIndex, targets: np.ndarray
                  ) -> list[TeacherForcedStep]:
    """Run ``T`` steps feeding gold tokens; ``targets [K, T]`` holds extended ids (padded rows are ignored later)."""
    k, t_max = targets.shape
    state = initial_state(params, mem)
    x = next_inputs(params, np.full(k, EOS), source.vocab_size)
    steps = []
    for t in range(t_max):
        state, out = decode_step(params, mem, state, x)
        prob = target_probability(out, source, targets[:, t])
        steps.append(TeacherForcedStep(prob, out.p_copy.data[:, 0].copy(), out.alpha.data.copy()))
        x = next_inputs(params, targets[:, t], source.vocab_size)
    return steps


@dataclass(frozen=True)
class TraceStep:
    token: str
    source: str  # "copy:<i>" or "predict"


@dataclass
class DecodeTrace:
    steps: list[TraceStep] = field(default_factory=list)
    finished: bool = False  # EOS was emitted

    @property
    def text(self) -> str:
        return "".join(s.token for s in self.steps)


def greedy_decode(params: dict[str, Tensor], F: Tensor, class_ids, max_len: int, vocab: Vocabulary,
                  source: SourceIndex) -> list[DecodeTrace]:
    """Argmax decoding for every category in ``class_ids``; one trace per category."""
    if max_len < 1:
        raise ValueError(f"max_len must be >= 1, got {max_len}")
    mem = prepare_memory(params, F, class_ids)
    k = len(class_ids)
    state = initial_state(params, mem)
    prev = np.full(k, EOS)
    traces = [DecodeTrace() for _ in range(k)]
    for _ in range(max_len):
        state, out = decode_step(params, mem, state, next_inputs(params, prev, source.vocab_size))
        p = final_distribution(out, source)
        prev = p.argmax(axis=1)
        pc, alpha, p_pred = out.p_copy.data[:, 0], out.alpha.data, out.p_pred.data
        for r, trace in enumerate(traces):
            if trace.finished:
                continue
            tok = int(prev[r])
            if tok == EOS:
                trace.finished = True
                continue
            hits = source.ext_ids == tok
            copy_mass = pc[r] * alpha[r, hits].sum()
            pred_mass = (1.0 - pc[r]) * p_pred[r, tok] if tok < source.vocab_size else 0.0
            if copy_mass > pred_mass:
                pos = int(np.flatnonzero(hits)[np.argmax(alpha[r, hits])])
                src = f"copy:{pos}"
            else:
                src = "predict"
            trace.steps.append(TraceStep(source.token(tok, vocab), src))
        if all(t.finished for t in traces):
            break
    return traces
