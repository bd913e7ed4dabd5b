"""Two extraction modes over one trained model, and field-level scoring."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .decoder import DecodeTrace, SourceIndex, greedy_decode
from .document import Document, normalize_value
from .encoder import TokenFeatures
from .model import Model

TAG, CP = "tag", "cp"


@dataclass
class ModeConfig:
    modes: dict[str, str] = field(default_factory=dict)  # category -> "tag" | "cp"
    max_len: dict[str, int] = field(default_factory=dict)
    default_max_len: int = 40

    @classmethod
    def uniform(cls, categories: Sequence[str], mode: str, max_len: int = 40) -> ModeConfig:
        return cls({c: mode for c in categories}, {}, max_len)

    def check(self, categories: Sequence[str]) -> None:
        missing = [c for c in categories if c not in self.modes]
        if missing:
            raise ValueError(f"no mode assigned to categories {missing}")
        bad = {c: m for c, m in self.modes.items() if m not in (TAG, CP)}
        if bad:
            raise ValueError(f"unknown modes {bad}; use 'tag' or 'cp'")

    def limit(self, category: str) -> int:
        return self.max_len.get(category, self.default_max_len)


@dataclass
class FieldResult:
    category: str
    text: str
    mode: str
    trace: list[dict] = field(default_factory=list)  # cp: emitted steps
    positions: list[int] = field(default_factory=list)  # tag: reading-order indices of tagged tokens

    def to_json(self) -> dict:
        out = {"text": self.text, "mode": self.mode}
        if self.mode == CP:
            out["trace"] = self.trace
        else:
            out["positions"] = self.positions
        return out


def tag_mode(model: Model, feats: TokenFeatures, categories: Sequence[str] | None = None) -> dict[str, FieldResult]:
    """Label every token with its argmax class and join each category's tokens in reading order."""
    categories = model.categories if categories is None else categories
    labels = model.head_logits(feats.F).data.argmax(axis=1)
    tokens = feats.layout.tokens
    out = {}
    for c in categories:
        cid = model.schema.id_of(c)
        pos = [int(i) for i in np.flatnonzero(labels == cid)]
        if pos:
            out[c] = FieldResult(c, "".join(tokens[i] for i in pos), TAG, positions=pos)
    return out


def _trace_json(trace: DecodeTrace) -> list[dict]:
    return [{"token": s.token, "source": s.source} for s in trace.steps]


def cp_mode(model: Model, feats: TokenFeatures, categories: Sequence[str] | None = None,
            max_len: int | Mapping[str, int] = 40) -> dict[str, FieldResult]:
    """Greedy copy-or-predict decoding of all requested categories as one batch."""
    categories = list(model.categories if categories is None else categories)
    if not categories:
        return {}
    source = SourceIndex.build(feats.layout.tokens, model.vocab)
    if isinstance(max_len, Mapping):
        limits = [max_len.get(c, 40) for c in categories]
    else:
        limits = [max_len] * len(categories)
    traces = greedy_decode(model.params, feats.F, [model.schema.id_of(c) for c in categories], max(limits),
                           model.vocab, source)
    out = {}
    for c, trace, limit in zip(categories, traces, limits):
        trace.steps = trace.steps[:limit]
        if trace.steps:
            out[c] = FieldResult(c, trace.text, CP, trace=_trace_json(trace))
    return out


def predict(model: Model, doc: Document, modes: ModeConfig) -> dict[str, FieldResult]:
    modes.check(model.categories)
    feats = model.features(model.layout(doc))
    tagged = [c for c in model.categories if modes.modes[c] == TAG]
    decoded = [c for c in model.categories if modes.modes[c] == CP]
    out = tag_mode(model, feats, tagged) if tagged else {}
    if decoded:
        out.update(cp_mode(model, feats, decoded, {c: modes.limit(c) for c in decoded}))
    return out


def extract(model: Model, docs: Sequence[Document], modes: ModeConfig) -> dict[str, dict[str, FieldResult]]:
    return {d.doc_id: predict(model, d, modes) for d in docs}


# ---------------------------------------------------------------- scoring

@dataclass
class Score:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    def to_json(self) -> dict:
        return {"precision": self.precision, "recall": self.recall, "f1": self.f1,
                "tp": self.tp, "fp": self.fp, "fn": self.fn}


@dataclass
class F1Report:
    per_category: dict[str, Score]
    micro: Score

    def to_json(self) -> dict:
        return {"per_category": {c: s.to_json() for c, s in self.per_category.items()}, "micro": self.micro.to_json()}

    def table(self) -> str:
        rows = [f"{'category':<12}{'P':>8}{'R':>8}{'F1':>8}"]
        for name, s in [*self.per_category.items(), ("micro", self.micro)]:
            rows.append(f"{name:<12}{s.precision:>8.4f}{s.recall:>8.4f}{s.f1:>8.4f}")
        return "\n".join(rows)


def field_f1(predictions: Mapping[str, Mapping[str, str]], golds: Mapping[str, Mapping[str, str]],
             categories: Sequence[str]) -> F1Report:
    """Exact-match field scores; texts are compared with whitespace removed.

    A predicted field that differs from its gold counts as a false positive and
    a false negative.
    """
    per = {c: Score() for c in categories}
    for doc_id, gold in golds.items():
        pred = predictions.get(doc_id, {})
        unknown = set(pred) - set(per)
        if unknown:
            raise KeyError(f"document {doc_id!r}: unknown categories {sorted(unknown)}")
        for c in categories:
            p = normalize_value(pred[c]) if c in pred else ""
            g = normalize_value(gold[c]) if c in gold else ""
            s = per[c]
            if p and g and p == g:
                s.tp += 1
                continue
            s.fp += bool(p)
            s.fn += bool(g)
    micro = Score(sum(s.tp for s in per.values()), sum(s.fp for s in per.values()), sum(s.fn for s in per.values()))
    return F1Report(per, micro)


def texts(results: Mapping[str, Mapping[str, FieldResult]]) -> dict[str, dict[str, str]]:
    return {doc_id: {c: r.text for c, r in fields.items()} for doc_id, fields in results.items()}


def evaluate(model: Model, docs: Sequence[Document], modes: ModeConfig) -> F1Report:
    preds = texts(extract(model, docs, modes))
    return field_f1(preds, {d.doc_id: d.ground_truth for d in docs}, model.categories)


def throughput(model: Model, docs: Sequence[Document], mode: str, max_len: int = 40) -> float:
    """Documents per second for a full single-worker pass: lattice, encoder and the chosen mode."""
    if not docs:
        raise ValueError("throughput needs at least one document")
    modes = ModeConfig.uniform(model.categories, mode, max_len)
    start = time.perf_counter()
    for d in docs:
        predict(model, d, modes)
    return len(docs) / (time.perf_counter() - start)
