"""OCR results, ground truth, JSONL ingestion and the token vocabulary.

A token is one non-whitespace character. Whitespace inside an utterance
carries no lattice cell and is ignored when comparing field values.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

PAD, UNK, EOS = 0, 1, 2
RESERVED = ("<pad>", "<unk>", "<eos>")
BACKGROUND = 0


class DocumentParseError(ValueError):
    """Malformed JSON; ``offset`` is the byte offset of the failure."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class DocumentValidationError(ValueError):
    """Well-formed JSON that violates a document invariant."""

    def __init__(self, message: str, utterance_index: int | None = None):
        where = f"utterance {utterance_index}: " if utterance_index is not None else ""
        super().__init__(where + message)
        self.utterance_index = utterance_index


def tokenize(text: str) -> tuple[str, ...]:
    return tuple(ch for ch in text if not ch.isspace())


def normalize_value(text: str) -> str:
    """Whitespace-free form used for field comparison."""
    return "".join(tokenize(text))


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in document pixel units."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        vals = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite box coordinates {vals}")
        if self.x_min >= self.x_max:
            raise ValueError(f"x_min {self.x_min} >= x_max {self.x_max}")
        if self.y_min >= self.y_max:
            raise ValueError(f"y_min {self.y_min} >= y_max {self.y_max}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def center_x(self) -> float:
        return (self.x_min + self.x_max) / 2.0

    @property
    def center_y(self) -> float:
        return (self.y_min + self.y_max) / 2.0

    def translated(self, dx: float, dy: float) -> "BoundingBox":
        return BoundingBox(self.x_min + dx, self.y_min + dy, self.x_max + dx, self.y_max + dy)

    def as_list(self) -> list[float]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]


@dataclass(frozen=True)
class Utterance:
    box: BoundingBox
    text: str

    def __post_init__(self):
        if not tokenize(self.text):
            raise ValueError("utterance text has no tokens")

    @property
    def tokens(self) -> tuple[str, ...]:
        return tokenize(self.text)


@dataclass(frozen=True)
class EntityCategory:
    id: int
    name: str


@dataclass(frozen=True)
class CategorySchema:
    """Entity categories with dense ids; id 0 is the background class."""

    names: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise ValueError(f"duplicate category names in {self.names}")
        if not self.names:
            raise ValueError("schema needs at least one category")

    @classmethod
    def from_documents(cls, docs: Iterable["Document"]) -> "CategorySchema":
        return cls(tuple(sorted({name for d in docs for name in d.ground_truth})))

    @property
    def categories(self) -> list[EntityCategory]:
        return [EntityCategory(i + 1, n) for i, n in enumerate(self.names)]

    def __len__(self) -> int:
        return len(self.names)

    def id_of(self, name: str) -> int:
        try:
            return self.names.index(name) + 1
        except ValueError:
            raise KeyError(f"unknown category {name!r}") from None

    def name_of(self, cid: int) -> str:
        if not 1 <= cid <= len(self.names):
            raise KeyError(f"no category with id {cid}")
        return self.names[cid - 1]


@dataclass(frozen=True)
class Document:
    doc_id: str
    utterances: tuple[Utterance, ...]
    ground_truth: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "utterances", tuple(self.utterances))
        for name, value in self.ground_truth.items():
            if not tokenize(value):
                raise DocumentValidationError(f"ground truth for {name!r} is empty")

    @property
    def num_tokens(self) -> int:
        return sum(len(u.tokens) for u in self.utterances)

    def target(self, category: str) -> tuple[str, ...]:
        """Ground-truth token sequence for ``category`` (empty when absent)."""
        return tokenize(self.ground_truth.get(category, ""))

    def replace(self, **changes) -> "Document":
        fields = {"doc_id": self.doc_id, "utterances": self.utterances, "ground_truth": self.ground_truth}
        fields.update(changes)
        return Document(**fields)


# ---------------------------------------------------------------- JSON I/O

def _byte_offset(text: str, char_pos: int) -> int:
    return len(text[:char_pos].encode("utf-8"))


def parse_ocr_json(data: bytes | str) -> Document:
    """Parse one JSON document: ``{"doc_id", "utterances": [{"box", "text"}], "ground_truth"}``."""
    text = data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else data
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise DocumentParseError(e.msg, _byte_offset(text, e.pos)) from None
    if not isinstance(obj, dict):
        raise DocumentValidationError("document must be a JSON object")
    doc_id = obj.get("doc_id")
    if not isinstance(doc_id, str):
        raise DocumentValidationError("doc_id must be a string")
    raw_utts = obj.get("utterances")
    if not isinstance(raw_utts, list):
        raise DocumentValidationError("utterances must be a list")
    utterances = []
    for i, u in enumerate(raw_utts):
        try:
            box = u["box"]
            if not isinstance(box, list) or len(box) != 4:
                raise ValueError("box must be [x0, y0, x1, y1]")
            if not isinstance(u["text"], str):
                raise ValueError("text must be a string")
            utterances.append(Utterance(BoundingBox(*(float(v) for v in box)), u["text"]))
        except (KeyError, TypeError, ValueError) as e:
            raise DocumentValidationError(str(e), i) from None
    gt = obj.get("ground_truth") or {}
    if not isinstance(gt, dict) or not all(isinstance(k, str) and isinstance(v, str) for k, v in gt.items()):
        raise DocumentValidationError("ground_truth must map category names to strings")
    return Document(doc_id, tuple(utterances), dict(gt))


def document_to_dict(doc: Document) -> dict:
    out = {
        "doc_id": doc.doc_id,
        "utterances": [{"box": u.box.as_list(), "text": u.text} for u in doc.utterances],
    }
    if doc.ground_truth:
        out["ground_truth"] = dict(doc.ground_truth)
    return out


def serialize_document(doc: Document) -> str:
    return json.dumps(document_to_dict(doc), ensure_ascii=False)


def load_jsonl(path: str | Path) -> list[Document]:
    docs = []
    with open(path, "rb") as f:
        for line_no, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                docs.append(parse_ocr_json(line))
            except (DocumentParseError, DocumentValidationError) as e:
                e.args = (f"{path}:{line_no}: {e}",)
                raise
    return docs


def write_jsonl(path: str | Path, docs: Iterable[Document]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for d in docs:
            f.write(serialize_document(d) + "\n")


# ---------------------------------------------------------------- vocabulary

@dataclass(frozen=True)
class Vocabulary:
    """Token ↔ id map with PAD=0, UNK=1, EOS=2 reserved."""

    tokens: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("vocabulary tokens must be unique")
        object.__setattr__(self, "_ids", {t: i + len(RESERVED) for i, t in enumerate(self.tokens)})

    def __len__(self) -> int:
        return len(self.tokens) + len(RESERVED)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def lookup(self, token: str) -> int:
        return self._ids.get(token, UNK)

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.lookup(t) for t in tokens]

    def token(self, idx: int) -> str:
        if idx < len(RESERVED):
            return RESERVED[idx]
        return self.tokens[idx - len(RESERVED)]


def build_vocab(corpus: Sequence[Document], min_freq: int = 1) -> Vocabulary:
    """Tokens seen at least ``min_freq`` times, ordered by frequency then lexicographically."""
    counts: Counter[str] = Counter()
    for doc in corpus:
        for u in doc.utterances:
            counts.update(u.tokens)
        for value in doc.ground_truth.values():
            counts.update(tokenize(value))
    kept = [t for t, n in counts.items() if n >= min_freq]
    kept.sort(key=lambda t: (-counts[t], t))
    return Vocabulary(tuple(kept))
