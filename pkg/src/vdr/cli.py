"""Command-line entry point: ``vdr <subcommand> [flags]``.

Exit codes: 0 success, 1 validation error, 2 runtime error. Config files are
JSON; explicit flags override config-file values, which override defaults.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import checks
from .data import check_pairing, load_dialogs, load_features, write_dialogs, write_features
from .diffcore import log_softmax
from .ensemble import combine_files
from .errors import RunFailure, ValidationError, VDRError
from .metrics import evaluate, format_table
from .predictions import read_predictions, write_predictions
from .synthetic import (SyntheticConfig, gen_synthetic, oracle_scores, split, synthetic_vocab,
                        toy_vectors, write_vectors)
from .trainer import Checkpoint, TrainConfig, predict, train
from .vocab import RemapTable, Vocabulary, apply_remap, build_vocab, load_pretrained, normalize_tokenize

log = logging.getLogger("vdr")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError("usage", message)


def _echo(command: str, resolved: dict) -> None:
    print("# resolved config: " + json.dumps({"command": command, **resolved}, sort_keys=True))


def _default_seed() -> int:
    env = os.environ.get("VDR_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise ValidationError("config", f"VDR_SEED={env!r} is not an integer") from None


def _merge(dataclass_type, config_path, overrides: dict):
    """defaults < config file < flags (flags left as None are not applied)."""
    base = {}
    if config_path:
        base = json.loads(Path(config_path).read_text(encoding="utf-8"))
        known = {f.name for f in fields(dataclass_type)}
        unknown = set(base) - known
        if unknown:
            raise ValidationError("config", f"unknown keys {sorted(unknown)}")
    base.update({k: v for k, v in overrides.items() if v is not None})
    return dataclass_type(**base)


def _out_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


# ---------------------------------------------------------------- subcommands

def cmd_build_vocab(args) -> int:
    protected = None if args.remap is None else set(RemapTable.load(args.remap).entries)
    corpus = []
    for path in args.data:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        for d in raw["dialogs"]:
            corpus.append(normalize_tokenize(d["caption"], protected))
            for r in d["rounds"]:
                corpus.append(normalize_tokenize(r["question"], protected))
                corpus.extend(normalize_tokenize(c, protected) for c in r["candidates"])
    vocab = build_vocab(corpus, args.min_count)
    _echo("build-vocab", {"data": args.data, "min_count": args.min_count, "out": args.out,
                          "vectors": args.vectors, "remap": args.remap})
    vocab.save(args.out)
    print(f"vocabulary: {len(vocab) - 2} tokens (+2 specials)")
    if args.vectors:
        init, missing = load_pretrained(args.vectors, vocab)
        table = RemapTable.default() if args.remap is None else RemapTable.load(args.remap)
        init = apply_remap(init, table, args.vectors)
        c = init.counts()
        print(f"missing from vectors: {len(missing)}; remapped: {c['remapped']}; "
              f"still random: {c['random'] - 2}")
    return 0


def cmd_gen_synthetic(args) -> int:
    cfg = _merge(SyntheticConfig, args.config, {
        "seed": args.seed if args.seed is not None else (None if args.config else _default_seed()),
        "n_dialogs": args.n_dialogs, "n_heldout": args.n_heldout,
    })
    _echo("gen-synthetic", {"config": cfg.to_dict(), "seed": cfg.seed, "output_dir": args.output_dir})
    dialogs, store, oracle = gen_synthetic(cfg)
    vocab = synthetic_vocab(cfg)
    out = _out_dir(args.output_dir)
    train_set, heldout = split(dialogs, cfg)
    write_dialogs(out / "train.json", train_set, vocab)
    if heldout:
        write_dialogs(out / "heldout.json", heldout, vocab)
    write_features(out / "features.vdf", store)
    vocab.save(out / "vocab.txt")
    write_vectors(out / "vectors.txt", toy_vectors(vocab, cfg.embed_dim, cfg.seed))
    (out / "synthetic_config.json").write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")
    oracle_preds = {(d.dialog_id, t + 1): log_softmax(oracle_scores(oracle, d.dialog_id, t)).data
                    for d in dialogs for t in range(len(d.rounds))}
    write_predictions(out / "oracle.jsonl", oracle_preds)
    print(f"wrote {len(train_set)} train / {len(heldout)} held-out dialogs to {out}")
    return 0


def _load_embedding(cfg: TrainConfig, vocab: Vocabulary):
    if not cfg.vectors:
        return None
    init, missing = load_pretrained(cfg.vectors, vocab, seed=cfg.seed)
    table = RemapTable.load(cfg.remap) if cfg.remap else RemapTable.default()
    init = apply_remap(init, table, cfg.vectors)
    log.info("embedding rows: %s (missing before remap: %d)", dict(init.counts()), len(missing))
    return init


def cmd_train(args) -> int:
    seed = args.seed
    if seed is None and not (args.config and "seed" in json.loads(Path(args.config).read_text())):
        seed = _default_seed()
    cfg = _merge(TrainConfig, args.config, {
        "model": args.model, "epochs": args.epochs, "batch_size": args.batch_size,
        "learning_rate": args.lr, "seed": seed, "hidden": args.hidden,
        "embed_trainable": args.embed_trainable, "data": args.data, "features": args.features,
        "vocab": args.vocab, "vectors": args.vectors, "remap": args.remap,
        "output_dir": args.output_dir, "wt_variant": args.wt_variant,
    })
    cfg.validate()
    for req in ("data", "features", "vocab", "output_dir"):
        if not getattr(cfg, req):
            raise ValidationError("config", f"missing required setting {req!r}")
    _echo("train", {"config": cfg.to_dict(), "seed": cfg.seed})
    vocab = Vocabulary.load(cfg.vocab)
    protected = set(RemapTable.load(cfg.remap).entries) if cfg.remap else None
    dialogs = load_dialogs(cfg.data, vocab, protected)
    store = load_features(cfg.features, (args.k_min, args.k_max))
    check_pairing(dialogs, store)
    out = _out_dir(cfg.output_dir)
    ckpt_path = out / "checkpoint.vdckpt"

    def on_epoch(ckpt):
        ckpt.save(ckpt_path)
        if cfg.eval_every and ckpt.epoch % cfg.eval_every == 0:
            print(f"epoch {ckpt.epoch}: loss {ckpt.loss_history[-1]:.6f}", flush=True)

    try:
        checkpoints = train(cfg, dialogs, store, _load_embedding(cfg, vocab), vocab, on_epoch)
    except RunFailure as err:
        print(f"last good checkpoint retained at {ckpt_path}", file=sys.stderr)
        raise err
    print(f"final loss {checkpoints[-1].loss_history[-1]:.6f}; checkpoint: {ckpt_path}")
    return 0


def cmd_predict(args) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    _echo("predict", {"checkpoint": args.checkpoint, "data": args.data, "features": args.features,
                      "out": args.out, "seed": ckpt.train.get("seed")})
    vocab = Vocabulary(ckpt.vocab) if ckpt.vocab else Vocabulary.load(args.vocab)
    remap = ckpt.train.get("remap")
    protected = set(RemapTable.load(remap).entries) if remap and Path(remap).exists() else None
    dialogs = load_dialogs(args.data, vocab, protected)
    store = load_features(args.features, (args.k_min, args.k_max))
    write_predictions(args.out, predict(ckpt, dialogs, store))
    print(f"wrote {sum(len(d.rounds) for d in dialogs)} rounds to {args.out}")
    return 0


def cmd_ensemble(args) -> int:
    _echo("ensemble", {"mode": args.mode, "inputs": args.inputs, "out": args.out})
    preds = combine_files(args.inputs, args.out, args.mode)
    print(f"wrote {len(preds)} rounds to {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    _echo("evaluate", {"pred": args.pred, "data": args.data, "report": args.report})
    vocab = Vocabulary.load(args.vocab) if args.vocab else Vocabulary.from_tokens([])
    dialogs = load_dialogs(args.data, vocab)
    rows = []
    for item in args.pred:
        name, _, path = item.rpartition("=")
        rows.append((name or Path(path).stem, evaluate(read_predictions(path), dialogs)))
    print(format_table(rows))
    if args.report:
        report = rows[0][1].to_dict() if len(rows) == 1 else {n: r.to_dict() for n, r in rows}
        Path(args.report).write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    return 0


def cmd_grad_check(args) -> int:
    seed = args.seed if args.seed is not None else _default_seed()
    _echo("grad-check", {"seed": seed, "model_seed": checks.MODEL_CHECK_SEED, "step": 1e-5, "tol": 1e-4})
    reports = checks.run_all(seed)
    ok = True
    for name, rep in reports.items():
        ok &= rep.passed
        print(f"{'PASS' if rep.passed else 'FAIL'}  {name:28s} max rel err {rep.max_error:.2e}")
    if not ok:
        raise RunFailure("grad-check-failed")
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="vdr", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("build-vocab", help="tokenize datasets and write a vocabulary file")
    s.add_argument("--data", action="append", required=True)
    s.add_argument("--min-count", type=int, default=1)
    s.add_argument("--out", required=True)
    s.add_argument("--vectors")
    s.add_argument("--remap")
    s.set_defaults(func=cmd_build_vocab)

    s = sub.add_parser("gen-synthetic", help="write a synthetic corpus with its oracle predictions")
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--n-dialogs", type=int)
    s.add_argument("--n-heldout", type=int)
    s.add_argument("--output-dir", required=True)
    s.set_defaults(func=cmd_gen_synthetic)

    s = sub.add_parser("train", help="train one model variant")
    s.add_argument("--model", choices=["lf_rcnn", "mn_rcnn", "mn_rcnn_wt"])
    s.add_argument("--config")
    s.add_argument("--data")
    s.add_argument("--features")
    s.add_argument("--vocab")
    s.add_argument("--vectors")
    s.add_argument("--remap")
    s.add_argument("--output-dir")
    s.add_argument("--epochs", type=int)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--hidden", type=int)
    s.add_argument("--seed", type=int)
    g = s.add_mutually_exclusive_group()
    g.add_argument("--fine-tune-embeddings", dest="embed_trainable", action="store_true", default=None)
    g.add_argument("--freeze-embeddings", dest="embed_trainable", action="store_false")
    s.add_argument("--wt-variant", choices=["gated", "gated_scalar"], help="scorer used by mn_rcnn_wt")
    s.add_argument("--k-min", type=int, default=1)
    s.add_argument("--k-max", type=int, default=100)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("predict", help="write per-round log-probabilities")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--features", required=True)
    s.add_argument("--vocab")
    s.add_argument("--out", required=True)
    s.add_argument("--k-min", type=int, default=1)
    s.add_argument("--k-max", type=int, default=100)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("ensemble", help="mean/max of several prediction files")
    s.add_argument("--mode", choices=["mean", "max"], default="mean")
    s.add_argument("--in", dest="inputs", action="append", default=[])
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ensemble)

    s = sub.add_parser("evaluate", help="NDCG / MRR / R@k / mean rank table")
    s.add_argument("--pred", action="append", required=True, help="PATH or NAME=PATH")
    s.add_argument("--data", required=True)
    s.add_argument("--vocab")
    s.add_argument("--report")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("grad-check", help="finite-difference check of every model stage")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_grad_check)
    return p


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        return args.func(args)
    except VDRError as err:
        print(f"error: {err}", file=sys.stderr)
        return err.exit_code
    except (FileNotFoundError, json.JSONDecodeError) as err:
        print(f"error: input: {err}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
