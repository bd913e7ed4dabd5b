"""Synthetic receipt-like documents and an OCR noise injector.

Documents are laid out on a character grid (header, key/value lines, item
lines with right-aligned prices, a total block) and converted to pixel boxes.
Jitter is ±15% of the glyph size: horizontally per box, vertically per printed
line (boxes of one line share a baseline up to ±3%). Ground truth is always
the clean value string.
"""

from __future__ import annotations

import string
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .document import BoundingBox, Document, Utterance, normalize_value, tokenize

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(master: int, index: int) -> int:
    return splitmix64(splitmix64(master & _MASK64) ^ index)


PAGE_COLS = 52

KEYS = {
    "DATE": ("DATE", "DATE:", "Date:"),
    "TOTAL": ("TOTAL", "TOTAL:", "Total:", "TOTAL RM"),
    "NAME": ("CASHIER:", "NAME:", "Served by:"),
}
DUPLICATE_KEYS = ("CASH", "PAID", "AMOUNT DUE", "VISA")
FOOTERS = ("THANK YOU", "PLEASE COME AGAIN", "GOODS SOLD ARE NOT RETURNABLE", "HAVE A NICE DAY")

_CONSONANTS = "BCDFGHJKLMNPRSTVWZ"
_VOWELS = "AEIOU"


def make_lexicon(size: int, seed: int) -> list[str]:
    """``size`` distinct pronounceable upper-case words of 3-7 letters."""
    rng = np.random.default_rng(seed)
    words: list[str] = []
    seen = set()
    while len(words) < size:
        n = int(rng.integers(3, 8))
        w = "".join(_CONSONANTS[rng.integers(len(_CONSONANTS))] if i % 2 == 0 else _VOWELS[rng.integers(len(_VOWELS))]
                    for i in range(n))
        if w not in seen:
            seen.add(w)
            words.append(w)
    return words


def gen_date(rng: np.random.Generator, lexicon: list[str]) -> str:
    y, m, d = int(rng.integers(2015, 2025)), int(rng.integers(1, 13)), int(rng.integers(1, 29))
    if rng.random() < 0.5:
        return f"{y:04d}-{m:02d}-{d:02d}"
    return f"{d:02d}/{m:02d}/{y:04d}"


def gen_total(rng: np.random.Generator, lexicon: list[str]) -> str:
    digits = int(rng.integers(2, 6))
    whole = int(rng.integers(10 ** (digits - 1), 10 ** digits))
    return f"{whole}.{int(rng.integers(0, 100)):02d}"


def gen_name(rng: np.random.Generator, lexicon: list[str]) -> str:
    n = int(rng.integers(2, 5))
    return " ".join(lexicon[int(i)] for i in rng.integers(0, len(lexicon), size=n))


GRAMMARS: dict[str, Callable[[np.random.Generator, list[str]], str]] = {
    "DATE": gen_date,
    "TOTAL": gen_total,
    "NAME": gen_name,
}


@dataclass
class GenConfig:
    num_docs: int = 100
    vocab_size: int = 300
    categories: tuple[str, ...] = ("DATE", "TOTAL", "NAME")
    min_rows: int = 5
    max_rows: int = 30
    max_row_tokens: int = 40
    dup_prob: float = 0.0
    seed: int = 0
    lexicon_seed: int = 0

    def __post_init__(self):
        self.categories = tuple(self.categories)
        if not self.categories:
            raise ValueError("at least one category is required")
        unknown = [c for c in self.categories if c not in GRAMMARS]
        if unknown:
            raise ValueError(f"no value grammar for categories {unknown}; known: {sorted(GRAMMARS)}")
        if not 0.0 <= self.dup_prob <= 1.0:
            raise ValueError(f"dup_prob must lie in [0, 1], got {self.dup_prob}")
        if self.min_rows > self.max_rows or self.min_rows < 1:
            raise ValueError(f"bad row range [{self.min_rows}, {self.max_rows}]")


@dataclass
class NoiseConfig:
    p_sub: float = 0.0
    p_del: float = 0.0
    scope: str = "all"  # "all" utterances, or only "values" (utterances equal to a ground-truth value)

    def __post_init__(self):
        if self.p_sub < 0 or self.p_del < 0 or self.p_sub + self.p_del > 1:
            raise ValueError(f"need p_sub, p_del >= 0 and p_sub + p_del <= 1, got {self.p_sub}, {self.p_del}")
        if self.scope not in ("all", "values"):
            raise ValueError(f"scope must be 'all' or 'values', got {self.scope!r}")


@dataclass
class _Line:
    segments: list[tuple[int, str]] = field(default_factory=list)  # (start column, text)


def _kv_line(rng, key: str, value: str) -> _Line:
    vcol_min = len(key) + 1
    if rng.random() < 0.5 and PAGE_COLS - len(value) > vcol_min:
        vcol = PAGE_COLS - len(value)
    else:
        vcol = min(len(key) + int(rng.integers(1, 7)), max(vcol_min, PAGE_COLS - len(value)))
    return _Line([(0, key), (vcol, value)])


def _right(text: str) -> int:
    return max(0, PAGE_COLS - len(text))


def _layout(rng: np.random.Generator, cfg: GenConfig, lexicon: list[str]) -> tuple[list[_Line], dict[str, str]]:
    words = lambda n: " ".join(lexicon[int(i)] for i in rng.integers(0, len(lexicon), size=n))  # noqa: E731
    values = {c: GRAMMARS[c](rng, lexicon) for c in cfg.categories}

    header = [_Line([(int(rng.integers(0, 12)), words(int(rng.integers(1, 4))))])]
    if rng.random() < 0.7:
        header.append(_Line([(int(rng.integers(0, 8)), f"{int(rng.integers(1, 999))} {words(2)}")]))

    meta = [_kv_line(rng, KEYS[c][int(rng.integers(len(KEYS[c])))], values[c]) for c in cfg.categories if c != "TOTAL"]
    if rng.random() < 0.5:
        meta.append(_kv_line(rng, "INV NO", str(int(rng.integers(1000, 999999)))))
    rng.shuffle(meta)

    tail = []
    if "TOTAL" in values:
        tail.append(_kv_line(rng, KEYS["TOTAL"][int(rng.integers(len(KEYS["TOTAL"])))], values["TOTAL"]))
        if rng.random() < cfg.dup_prob:
            tail.append(_kv_line(rng, DUPLICATE_KEYS[int(rng.integers(len(DUPLICATE_KEYS)))], values["TOTAL"]))
    footer = [_Line([(int(rng.integers(0, 10)), FOOTERS[int(rng.integers(len(FOOTERS)))])])] if rng.random() < 0.5 else []

    fixed = len(header) + len(meta) + len(tail) + len(footer)
    target_rows = int(rng.integers(cfg.min_rows, cfg.max_rows + 1))
    items = []
    for _ in range(max(0, target_rows - fixed)):
        name = words(int(rng.integers(1, 3)))
        price = f"{int(rng.integers(1, 999))}.{int(rng.integers(0, 100)):02d}"
        segs = [(0, name)]
        if rng.random() < 0.3:
            segs.append((len(name) + 2, f"x{int(rng.integers(1, 10))}"))
        segs.append((_right(price), price))
        items.append(_Line(segs))
    lines = header + meta + items + tail + footer
    if len(lines) > cfg.max_rows:
        lines = header[:1] + meta + tail
    return lines, values


def _fits(lines: list[_Line], cfg: GenConfig) -> bool:
    for line in lines:
        if sum(len(tokenize(t)) for _, t in line.segments) > cfg.max_row_tokens:
            return False
        end = -1
        for col, text in sorted(line.segments):
            if col <= end:
                return False
            end = col + len(text)
    return True


def generate_document(cfg: GenConfig, index: int, lexicon: list[str]) -> Document:
    rng = np.random.default_rng(derive_seed(cfg.seed, index))
    for _ in range(100):
        lines, values = _layout(rng, cfg, lexicon)
        if _fits(lines, cfg):
            break
    else:
        raise RuntimeError("could not lay out a document within the row token budget")

    glyph_w = rng.uniform(8.0, 14.0)
    glyph_h = glyph_w * rng.uniform(1.5, 2.0)
    pitch = glyph_h * rng.uniform(1.4, 2.2)
    left = rng.uniform(20.0, 80.0)
    top = rng.uniform(20.0, 80.0)
    jx, jy = 0.15 * glyph_w, 0.15 * glyph_h

    utterances = []
    for li, line in enumerate(lines):
        # boxes on one printed line share a baseline up to a small wobble
        baseline = top + li * pitch + glyph_h + rng.uniform(-jy, jy)
        for col, text in line.segments:
            x0 = left + col * glyph_w + rng.uniform(-jx, jx)
            width = len(text) * glyph_w * rng.uniform(0.95, 1.05)
            y1 = baseline + rng.uniform(-0.03, 0.03) * glyph_h
            height = glyph_h * rng.uniform(0.9, 1.1)
            box = BoundingBox(round(x0, 2), round(y1 - height, 2), round(x0 + width, 2), round(y1, 2))
            utterances.append(Utterance(box, text))
    return Document(f"synth-{cfg.seed}-{index:06d}", tuple(utterances), values)


def generate_synthetic(cfg: GenConfig) -> list[Document]:
    lexicon = make_lexicon(cfg.vocab_size, cfg.lexicon_seed)
    return [generate_document(cfg, i, lexicon) for i in range(cfg.num_docs)]


def page_area(doc: Document) -> float:
    """Pixel area of the page a generated document was laid out on (margins mirrored)."""
    x1 = max(u.box.x_max for u in doc.utterances)
    y1 = max(u.box.y_max for u in doc.utterances)
    x0 = min(u.box.x_min for u in doc.utterances)
    y0 = min(u.box.y_min for u in doc.utterances)
    return (x1 + x0) * (y1 + y0)


# ---------------------------------------------------------------- OCR noise

_CONFUSIONS = {
    "0": "O", "O": "0", "1": "I", "I": "1", "5": "S", "S": "5", "8": "B", "B": "8",
    "2": "Z", "Z": "2", "6": "G", "G": "6", "-": "~", ".": ",", "/": "1", "A": "4", "E": "F",
}
_ALPHABET = string.ascii_uppercase + string.digits + "-./:"


def _substitute(ch: str, rng: np.random.Generator) -> str:
    if ch in _CONFUSIONS and rng.random() < 0.5:
        return _CONFUSIONS[ch]
    choices = [c for c in _ALPHABET if c != ch]
    return choices[int(rng.integers(len(choices)))]


def inject_ocr_noise(doc: Document, cfg: NoiseConfig, seed: int) -> Document:
    """Perturb recognized strings; boxes shrink with deletions, ground truth is untouched."""
    if cfg.p_sub == 0 and cfg.p_del == 0:
        return doc
    rng = np.random.default_rng(splitmix64(seed))
    gold = {normalize_value(v) for v in doc.ground_truth.values()}
    out = []
    for u in doc.utterances:
        if cfg.scope == "values" and normalize_value(u.text) not in gold:
            out.append(u)
            continue
        remaining = len(u.tokens)
        chars = []
        for ch in u.text:
            if ch.isspace():
                chars.append(ch)
                continue
            r = rng.random()
            if r < cfg.p_sub:
                chars.append(_substitute(ch, rng))
            elif r < cfg.p_sub + cfg.p_del and remaining > 1:
                remaining -= 1
            else:
                chars.append(ch)
        text = "".join(chars)
        box = u.box
        if len(text) != len(u.text):
            box = BoundingBox(box.x_min, box.y_min, box.x_min + box.width * len(text) / len(u.text), box.y_max)
        out.append(Utterance(box, text))
    return doc.replace(utterances=tuple(out))
