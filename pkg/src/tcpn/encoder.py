"""Lattice encoder: embeddings on the grid, a U-shaped residual conv backbone, per-token features."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, ops
from .lattice import LatticeLayout


@dataclass(frozen=True)
class EncoderConfig:
    d: int = 32
    depth: int = 3
    use_coord: bool = True
    use_unet: bool = True
    use_residual: bool = True

    def __post_init__(self):
        if self.d < 4:
            raise ValueError(f"d must be >= 4, got {self.d}")
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")

    def channels(self, stage: int) -> int:
        return self.d * 2 ** stage if self.use_unet else self.d


@dataclass
class TokenFeatures:
    F: Tensor  # [N, d], reading order
    layout: LatticeLayout

    def __len__(self) -> int:
        return self.F.shape[0]


def scatter_embeddings(layout: LatticeLayout, embed_table: Tensor, ids, padding_idx: int | None = 0) -> Tensor:
    """Grid ``I [H, W, d]``: token embeddings at placement cells, zeros elsewhere."""
    vecs = ops.embedding(embed_table, ids, padding_idx=padding_idx)
    return ops.scatter_cells(vecs, layout.rows, layout.cols, layout.height, layout.width)


def _ramp(n: int) -> np.ndarray:
    return np.linspace(-1.0, 1.0, n) if n > 1 else np.zeros(1)


def coord_channels(height: int, width: int, dtype=np.float64) -> np.ndarray:
    """``[H, W, 2]``: channel 0 runs -1..1 along the width, channel 1 along the height."""
    xs = np.broadcast_to(_ramp(width)[None, :], (height, width))
    ys = np.broadcast_to(_ramp(height)[:, None], (height, width))
    return np.stack([xs, ys], axis=-1).astype(dtype)


# ---------------------------------------------------------------- parameters

def _he(rng: np.random.Generator, shape, dtype) -> np.ndarray:
    fan_in = int(np.prod(shape[:-1]))
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


def _conv_params(params, rng, name, k, cin, cout, dtype):
    params[f"{name}.w"] = _he(rng, (k, k, cin, cout), dtype)
    params[f"{name}.scale"] = np.ones(cout, dtype)
    params[f"{name}.shift"] = np.zeros(cout, dtype)


def _block_params(params, rng, name, cin, cout, dtype):
    _conv_params(params, rng, f"{name}.a", 3, cin, cout, dtype)
    _conv_params(params, rng, f"{name}.b", 3, cout, cout, dtype)
    params[f"{name}.b.scale"][:] = 0.5  # keep the residual sum at unit scale at init
    if cin != cout:
        _conv_params(params, rng, f"{name}.proj", 1, cin, cout, dtype)


def _blocks(cfg: EncoderConfig) -> list[tuple[str, int, int, int]]:
    """(name, in channels, out channels, stride) of every residual block."""
    out = [("enc.block0", cfg.d, cfg.d, 1)]
    for j in range(1, cfg.depth + 1):
        out.append((f"enc.block{j}", cfg.channels(j - 1), cfg.channels(j), 2 if cfg.use_unet else 1))
    return out


def init_encoder_params(cfg: EncoderConfig, rng: np.random.Generator, dtype=np.float32) -> dict[str, np.ndarray]:
    params: dict[str, np.ndarray] = {}
    _conv_params(params, rng, "enc.stem", 3, cfg.d + (2 if cfg.use_coord else 0), cfg.d, dtype)
    for name, cin, cout, _ in _blocks(cfg):
        _block_params(params, rng, name, cin, cout, dtype)
    if cfg.use_unet:
        for j in range(cfg.depth, 0, -1):
            _conv_params(params, rng, f"enc.up{j}", 1, cfg.channels(j) + cfg.channels(j - 1), cfg.channels(j - 1), dtype)
    # with the residual on, a zero last layer makes the encoder start as the identity on I
    last = np.zeros if cfg.use_residual else (lambda shape, dt: _he(rng, shape, dt))
    params["enc.out.w"] = last((1, 1, cfg.d, cfg.d), dtype)
    params["enc.out.b"] = np.zeros(cfg.d, dtype)
    return params


# ---------------------------------------------------------------- forward

def _conv_affine(p, name, x, stride=1):
    y = ops.conv2d(x, p[f"{name}.w"], stride=stride)
    return ops.channel_affine(y, p[f"{name}.scale"], p[f"{name}.shift"])


def _res_block(p, name, x, stride):
    y = ops.relu(_conv_affine(p, f"{name}.a", x, stride))
    y = _conv_affine(p, f"{name}.b", y)
    # stride-2 blocks always change the width, so they always carry a projection
    skip = _conv_affine(p, f"{name}.proj", x, stride) if f"{name}.proj.w" in p else x
    return ops.relu(ops.add(y, skip))


def encode(I: Tensor, params: dict[str, Tensor], cfg: EncoderConfig) -> Tensor:
    """``Î [H, W, d]`` from ``I [H, W, d]``; the grid is zero-padded internally and cropped back."""
    if I.ndim != 3 or I.shape[-1] != cfg.d:
        raise ops.ShapeError(f"encode: expected [H, W, {cfg.d}], got {I.shape}")
    h, w, _ = I.shape
    x = I
    if cfg.use_coord:
        x = ops.concat([x, Tensor(coord_channels(h, w, I.dtype))], axis=-1)
    if cfg.use_unet:
        m = 2 ** cfg.depth
        x = ops.pad2d(x, -h % m, -w % m)

    x = ops.relu(_conv_affine(params, "enc.stem", x))
    feats = []
    for name, _, _, stride in _blocks(cfg):
        x = _res_block(params, name, x, stride)
        feats.append(x)
    if cfg.use_unet:
        for j in range(cfg.depth, 0, -1):
            x = ops.concat([ops.upsample2x(x), feats[j - 1]], axis=-1)
            x = ops.relu(_conv_affine(params, f"enc.up{j}", x))
    out = ops.conv2d(x, params["enc.out.w"], params["enc.out.b"])
    if out.shape[:2] != (h, w):
        out = ops.index(out, (slice(0, h), slice(0, w)))
    return ops.add(I, out) if cfg.use_residual else out


def gather_token_features(encoded: Tensor, layout: LatticeLayout) -> TokenFeatures:
    if encoded.shape[:2] != (layout.height, layout.width):
        raise ops.ShapeError(f"gather: grid {encoded.shape[:2]} vs layout {(layout.height, layout.width)}")
    return TokenFeatures(ops.gather_cells(encoded, layout.rows, layout.cols), layout)
