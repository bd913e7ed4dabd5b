"""The trainable model: embeddings, encoder, decoder and the per-token classifier head."""

from __future__ import annotations

from dataclasses import asdict
from pathlib import Path

import numpy as np

from .autodiff import Tensor, load_checkpoint, ops, save_checkpoint
from .decoder import init_decoder_params
from .document import PAD, CategorySchema, Document, Vocabulary
from .encoder import EncoderConfig, TokenFeatures, encode, gather_token_features, init_encoder_params, scatter_embeddings
from .lattice import LatticeLayout, LatticeParams, build_lattice


class Model:
    def __init__(self, params: dict[str, Tensor], encoder: EncoderConfig, vocab: Vocabulary,
                 schema: CategorySchema, lattice: LatticeParams | None = None):
        self.params = params
        self.encoder = encoder
        self.vocab = vocab
        self.schema = schema
        self.lattice = lattice or LatticeParams()

    @classmethod
    def init(cls, vocab: Vocabulary, schema: CategorySchema, encoder: EncoderConfig | None = None,
             seed: int = 0, dtype=np.float32, lattice: LatticeParams | None = None) -> Model:
        encoder = encoder or EncoderConfig()
        rng = np.random.default_rng(seed)
        d, k = encoder.d, len(schema)
        arrays = {"embed": rng.uniform(-0.1, 0.1, (len(vocab), d)).astype(dtype)}
        arrays["embed"][PAD] = 0.0
        arrays.update(init_encoder_params(encoder, rng, dtype))
        arrays.update(init_decoder_params(d, len(vocab), k, rng, dtype))
        arrays["head.w"] = (rng.standard_normal((d, k + 1)) / np.sqrt(d)).astype(dtype)
        arrays["head.b"] = np.zeros(k + 1, dtype)
        params = {name: Tensor(a, requires_grad=True, name=name) for name, a in arrays.items()}
        return cls(params, encoder, vocab, schema, lattice)

    @property
    def dtype(self):
        return self.params["embed"].dtype

    @property
    def categories(self) -> tuple[str, ...]:
        return self.schema.names

    def layout(self, doc: Document) -> LatticeLayout:
        return build_lattice(doc, self.lattice)

    def token_ids(self, layout: LatticeLayout) -> np.ndarray:
        return np.asarray(self.vocab.encode(layout.tokens), dtype=np.int64)

    def features(self, layout: LatticeLayout, ids: np.ndarray | None = None) -> TokenFeatures:
        ids = self.token_ids(layout) if ids is None else ids
        grid = scatter_embeddings(layout, self.params["embed"], ids, padding_idx=PAD)
        return gather_token_features(encode(grid, self.params, self.encoder), layout)

    def head_logits(self, F: Tensor) -> Tensor:
        """``[N, K+1]`` per-token class scores; column 0 is background."""
        return ops.linear(F, self.params["head.w"], self.params["head.b"])

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    # ------------------------------------------------------------ checkpoints

    def meta(self) -> dict:
        return {
            "encoder": asdict(self.encoder),
            "vocab": list(self.vocab.tokens),
            "categories": list(self.schema.names),
            "lattice": asdict(self.lattice),
        }

    def save(self, path: str | Path, extra: dict | None = None) -> Path:
        arrays = {name: p.data for name, p in sorted(self.params.items())}
        return save_checkpoint(path, arrays, {**self.meta(), **(extra or {})})

    @classmethod
    def load(cls, path: str | Path) -> Model:
        arrays, meta = load_checkpoint(path)
        params = {name: Tensor(a, requires_grad=True, name=name) for name, a in arrays.items()}
        return cls(params, EncoderConfig(**meta["encoder"]), Vocabulary(tuple(meta["vocab"])),
                   CategorySchema(tuple(meta["categories"])), LatticeParams(**meta["lattice"]))
