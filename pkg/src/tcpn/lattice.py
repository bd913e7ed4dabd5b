"""TextLattice construction: OCR boxes to a compact token grid.

Rows come from quantized box centers (``round(center_y / mean_height)``);
unique rows and, per row, token columns are then gap-compressed so that
small gaps become single steps and large gaps shrink by a constant ratio.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .document import BoundingBox, Document, Utterance


class LatticeError(ValueError):
    pass


@dataclass(frozen=True)
class LatticeParams:
    r_t: float = 2.0  # gaps at or below this collapse to one step
    r_r: float = 4.0  # larger gaps are divided by this ratio

    def __post_init__(self):
        if not (self.r_t > 0 and self.r_r > 0):
            raise ValueError(f"r_t and r_r must be positive, got {self.r_t}, {self.r_r}")


@dataclass(frozen=True)
class TokenBox:
    box: BoundingBox
    token: str
    utterance_index: int
    offset_in_utterance: int
    row: int


@dataclass(frozen=True)
class TokenPlacement:
    token: str
    utterance_index: int
    offset_in_utterance: int
    row: int
    col: int


@dataclass(frozen=True)
class LatticeLayout:
    height: int
    width: int
    placements: tuple[TokenPlacement, ...]

    def __len__(self) -> int:
        return len(self.placements)

    @property
    def rows(self) -> list[int]:
        return [p.row for p in self.placements]

    @property
    def cols(self) -> list[int]:
        return [p.col for p in self.placements]

    @property
    def tokens(self) -> list[str]:
        return [p.token for p in self.placements]

    def dump(self) -> str:
        """Text-art grid: one character per cell, ``.`` for empty cells."""
        grid = [["."] * self.width for _ in range(self.height)]
        for p in self.placements:
            grid[p.row][p.col] = p.token
        return "\n".join("".join(r) for r in grid) + "\n"


_HALF_TOL = 1e-9


def _round_half_up(v: float) -> int:
    # ties go up; the tolerance keeps exact halves stable under float noise from translation
    return math.floor(v + 0.5 + _HALF_TOL)


def assign_rows(utterances: Sequence[Utterance]) -> tuple[list[int], float]:
    """Raw row per utterance, ``round(center_y / R^h)``, and ``R^h`` (mean height)."""
    if not utterances:
        raise LatticeError("cannot build a lattice without utterances")
    r_h = sum(u.box.height for u in utterances) / len(utterances)
    if not r_h > 0:
        raise LatticeError("degenerate boxes: mean height is zero")
    return [_round_half_up(u.box.center_y / r_h) for u in utterances], r_h


def compress_axis(values: Sequence[int], params: LatticeParams) -> list[int]:
    """Gap-compress sorted integer coordinates, starting from 0.

    A gap ``g`` becomes one step when ``g <= r_t``, else ``ceil(max(1, g / r_r))``.
    Equal neighbours (gap 0) still advance by one, so the map is strictly
    increasing even when the input has ties.
    """
    if not values:
        return []
    out = [0]
    for prev, cur in zip(values, values[1:]):
        gap = cur - prev
        if gap < 0:
            raise LatticeError(f"compress_axis expects sorted values, got {prev} then {cur}")
        step = 1 if gap <= params.r_t else math.ceil(max(1.0, gap / params.r_r))
        out.append(out[-1] + step)
    return out


def _token_spans(u: Utterance):
    """``(x_min, x_max, token)`` of the equal-width split of one utterance."""
    toks = u.tokens
    b = u.box
    step = b.width / len(toks)
    last = len(toks) - 1
    for k, tok in enumerate(toks):
        yield b.x_min + k * step, (b.x_max if k == last else b.x_min + (k + 1) * step), tok


def split_utterances(utterances: Sequence[Utterance], rows: Sequence[int]) -> list[TokenBox]:
    """Equal-width token boxes for every utterance, in utterance then string order."""
    out = []
    for ui, (u, row) in enumerate(zip(utterances, rows)):
        b = u.box
        for k, (x0, x1, tok) in enumerate(_token_spans(u)):
            out.append(TokenBox(BoundingBox(x0, b.y_min, x1, b.y_max), tok, ui, k, row))
    return out


def reading_order(placements: Sequence[TokenPlacement]) -> list[TokenPlacement]:
    """Row-major order; the sort is stable."""
    return sorted(placements, key=lambda p: (p.row, p.col))


def build_lattice(doc: Document, params: LatticeParams | None = None) -> LatticeLayout:
    params = params or LatticeParams()
    utterances = doc.utterances
    raw_rows, _ = assign_rows(utterances)

    unique_rows = sorted(set(raw_rows))
    row_map = dict(zip(unique_rows, compress_axis(unique_rows, params)))
    rows = [row_map[r] for r in raw_rows]

    # same arithmetic as split_utterances, without materializing a box per token
    spans = [(ui, k, x0, x1, tok) for ui, u in enumerate(utterances) for k, (x0, x1, tok) in enumerate(_token_spans(u))]
    r_w = sum(x1 - x0 for _, _, x0, x1, _ in spans) / len(spans)

    by_row: dict[int, list[tuple[int, float, int, int, str]]] = {}
    for ui, k, x0, x1, tok in spans:
        cx = (x0 + x1) / 2.0
        by_row.setdefault(rows[ui], []).append((_round_half_up(cx / r_w), cx, ui, k, tok))

    placed = []
    for row, items in by_row.items():
        items.sort(key=lambda it: it[:4])
        xs = [it[0] for it in items]
        # each row keeps its own starting column, only the gaps shrink
        for x, (_, _, ui, k, tok) in zip(compress_axis(xs, params), items):
            placed.append((row, xs[0] + x, ui, k, tok))

    min_row = min(p[0] for p in placed)
    min_col = min(p[1] for p in placed)
    placements = [TokenPlacement(tok, ui, k, r - min_row, c - min_col) for r, c, ui, k, tok in placed]
    cells = {(p.row, p.col) for p in placements}
    if len(cells) != len(placements):
        raise AssertionError("lattice placement collision")
    placements = reading_order(placements)
    height = max(p.row for p in placements) + 1
    width = max(p.col for p in placements) + 1
    return LatticeLayout(height, width, tuple(placements))
