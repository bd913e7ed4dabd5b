"""Command-line entry point: ``tcpn <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .config import ConfigError, load_settings
from .document import CategorySchema, DocumentParseError, DocumentValidationError, build_vocab, load_jsonl, write_jsonl
from .inference import CP, TAG, evaluate, extract
from .lattice import build_lattice
from .model import Model
from .synth import generate_synthetic, inject_ocr_noise

log = logging.getLogger("tcpn")


class UsageError(Exception):
    pass


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tcpn", description="Key information extraction from OCR boxes "
                                "with one model serving a tagging mode and a copy-or-predict mode.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic dataset as JSONL")
    g.add_argument("--docs", type=int, help="number of documents (overrides gen.num_docs)")
    g.add_argument("--seed", type=int, help="master seed (overrides gen.seed)")
    g.add_argument("--dup-prob", type=float, help="probability of a second copy of the TOTAL value")
    g.add_argument("--p-sub", type=float, help="OCR noise: per-character substitution probability")
    g.add_argument("--p-del", type=float, help="OCR noise: per-character deletion probability")
    g.add_argument("--noise-scope", choices=["all", "values"], help="which utterances the noise touches")
    g.add_argument("--config", type=Path, help="key = value settings file")
    g.add_argument("-o", "--output", type=Path, required=True, help="output JSONL path")

    t = sub.add_parser("train", help="train a model and write checkpoints plus metrics.jsonl")
    t.add_argument("--data", type=Path, required=True, help="training JSONL")
    t.add_argument("--config", type=Path, help="key = value settings file")
    t.add_argument("--seed", type=int, help="training seed (overrides train.seed)")
    t.add_argument("--epochs", type=int, help="overrides train.epochs")
    t.add_argument("--d", type=int, help="feature width (overrides encoder.d)")
    t.add_argument("--out", type=Path, required=True, help="output directory")

    for name, helptext in (("eval", "score a checkpoint on a labelled dataset"),
                           ("infer", "write per-document extraction results as JSONL")):
        e = sub.add_parser(name, help=helptext)
        e.add_argument("--data", type=Path, required=True, help="dataset JSONL")
        e.add_argument("--checkpoint", type=Path, help="model manifest written by train (model.json)")
        e.add_argument("--config", type=Path, help="settings file; mode.<CATEGORY> = tag|cp picks per-category modes")
        e.add_argument("--mode", choices=[TAG, CP], default=TAG, help="mode for categories the config leaves unset")
        e.add_argument("-o", "--output", type=Path, help="write JSON here instead of stdout")

    gc = sub.add_parser("grad-check", help="finite-difference check of the full training objective")
    gc.add_argument("--d", type=int, default=8, help="feature width of the toy model")
    gc.add_argument("--seed", type=int, default=1)
    gc.add_argument("--max-per-param", type=int, default=48, help="coordinates checked per tensor (0: all)")

    lat = sub.add_parser("lattice", help="lattice utilities")
    lsub = lat.add_subparsers(dest="lattice_command", required=True)
    dump = lsub.add_parser("dump", help="print the text-art lattice of documents")
    dump.add_argument("--data", type=Path, required=True, help="dataset JSONL")
    dump.add_argument("--index", type=int, help="only the document at this position")
    dump.add_argument("--config", type=Path, help="settings file (lattice.r_t, lattice.r_r)")
    return p


def _load_model(args) -> Model:
    if args.checkpoint is None:
        raise UsageError(f"{args.command} needs --checkpoint (the model.json written by train)")
    return Model.load(args.checkpoint)


def _emit(text: str, output: Path | None) -> None:
    if output is None:
        print(text)
    else:
        output.write_text(text + "\n")


def cmd_gen_data(args) -> int:
    s = load_settings(args.config)
    gen, noise = s.gen, s.noise
    gen = replace(gen, **{k: v for k, v in (("num_docs", args.docs), ("seed", args.seed), ("dup_prob", args.dup_prob))
                          if v is not None})
    noise = replace(noise, **{k: v for k, v in (("p_sub", args.p_sub), ("p_del", args.p_del),
                                                ("scope", args.noise_scope)) if v is not None})
    docs = generate_synthetic(gen)
    docs = [inject_ocr_noise(d, noise, seed=gen.seed * 1_000_003 + i) for i, d in enumerate(docs)]
    write_jsonl(args.output, docs)
    print(f"wrote {len(docs)} documents to {args.output}")
    return 0


def cmd_train(args) -> int:
    from .trainer import fit

    s = load_settings(args.config)
    train, encoder = s.train, s.encoder
    if args.seed is not None:
        train = replace(train, seed=args.seed)
    if args.epochs is not None:
        train = replace(train, epochs=args.epochs)
    if args.d is not None:
        encoder = replace(encoder, d=args.d)
    docs = load_jsonl(args.data)
    if not docs:
        raise UsageError(f"{args.data} holds no documents")
    model = Model.init(build_vocab(docs), CategorySchema.from_documents(docs), encoder, seed=train.seed,
                       lattice=s.lattice)
    modes = {m: s.mode_config(model.categories, m) for m in (TAG, CP)}

    def train_f1(m, epoch):
        return {f"train_f1_{k}": evaluate(m, docs, mc).micro.f1 for k, mc in modes.items()}

    history = fit(model, docs, train, args.out, evaluate=train_f1)
    last = history[-1]
    print(f"trained {train.epochs} epochs; final loss {last['loss']:.4f}; checkpoint {args.out / 'model.json'}")
    return 0


def cmd_eval(args) -> int:
    model = _load_model(args)
    docs = load_jsonl(args.data)
    modes = load_settings(args.config).mode_config(model.categories, args.mode)
    report = evaluate(model, docs, modes)
    print(report.table(), file=sys.stderr)
    _emit(json.dumps({"modes": modes.modes, **report.to_json()}, indent=1), args.output)
    return 0


def cmd_infer(args) -> int:
    model = _load_model(args)
    docs = load_jsonl(args.data)
    modes = load_settings(args.config).mode_config(model.categories, args.mode)
    results = extract(model, docs, modes)
    lines = [json.dumps({"doc_id": doc_id, "fields": {c: r.to_json() for c, r in fields.items()}})
             for doc_id, fields in results.items()]
    _emit("\n".join(lines), args.output)
    return 0


def cmd_grad_check(args) -> int:
    from .trainer import loss_grad_check

    err = loss_grad_check(args.d, args.seed, max_per_param=args.max_per_param or None)
    ok = err < 1e-4
    print(f"max relative error {err:.3e} ({'ok' if ok else 'FAILED'}, threshold 1e-4)")
    return 0 if ok else 1


def cmd_lattice(args) -> int:
    params = load_settings(args.config).lattice
    docs = load_jsonl(args.data)
    if args.index is not None:
        if not 0 <= args.index < len(docs):
            raise UsageError(f"--index {args.index} out of range for {len(docs)} documents")
        docs = [docs[args.index]]
    for doc in docs:
        layout = build_lattice(doc, params)
        print(f"# {doc.doc_id} H={layout.height} W={layout.width} N={len(layout)}")
        print(layout.dump(), end="")
    return 0


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval, "infer": cmd_infer,
            "grad-check": cmd_grad_check, "lattice": cmd_lattice}


def main(argv: list[str] | None = None) -> int:
    parser = _parser()
    args = parser.parse_args(argv)  # exits with status 2 on usage errors
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(f"tcpn {args.command}: error: {e}", file=sys.stderr)
        return 2
    except (ConfigError, DocumentParseError, DocumentValidationError, FileNotFoundError, ValueError) as e:
        print(f"tcpn {args.command}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
