"""Desk-scale end-to-end run through the CLI: synthetic data, three models, mean ensemble."""
from __future__ import annotations

import contextlib
import io
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import cli
from .data import load_dialogs
from .errors import RunFailure
from .metrics import RankingReport, evaluate
from .models import MODEL_NAMES
from .predictions import read_predictions
from .vocab import Vocabulary


@dataclass
class DeskConfig:
    epochs: int = 100
    batch_size: int = 20
    learning_rate: float = 1e-2
    hidden: int = 8
    seed: int = 0
    n_heldout: int = 20
    models: tuple = MODEL_NAMES
    ensemble_mode: str = "mean"
    wt_variant: str = "gated"


@dataclass
class DeskResult:
    workdir: Path
    train: dict = field(default_factory=dict)      # name -> RankingReport on the training dialogs
    heldout: dict = field(default_factory=dict)    # name -> RankingReport on held-out dialogs
    seconds: dict = field(default_factory=dict)    # name -> training wall time
    table: str = ""                                # CLI evaluate output for the held-out split


def _cli(argv, quiet=True) -> str:
    buf = io.StringIO()
    with contextlib.redirect_stdout(buf) if quiet else contextlib.nullcontext():
        code = cli.run([str(a) for a in argv])
    if code != 0:
        raise RunFailure(f"cli-exit-{code}", " ".join(str(a) for a in argv[:1]))
    return buf.getvalue()


def run_desk(workdir, cfg: DeskConfig | None = None, log=None) -> DeskResult:
    cfg = cfg or DeskConfig()
    say = log or (lambda msg: None)
    work = Path(workdir)
    data = work / "data"
    _cli(["gen-synthetic", "--seed", cfg.seed, "--n-heldout", cfg.n_heldout, "--output-dir", data])
    vocab = Vocabulary.load(data / "vocab.txt")
    splits = {s: load_dialogs(data / f"{s}.json", vocab) for s in ("train", "heldout")}
    result = DeskResult(work)

    for name in cfg.models:
        out = work / name
        t0 = time.perf_counter()
        _cli(["train", "--model", name, "--data", data / "train.json", "--features", data / "features.vdf",
              "--vocab", data / "vocab.txt", "--vectors", data / "vectors.txt", "--output-dir", out,
              "--epochs", cfg.epochs, "--batch-size", cfg.batch_size, "--lr", cfg.learning_rate,
              "--hidden", cfg.hidden, "--seed", cfg.seed, "--wt-variant", cfg.wt_variant])
        result.seconds[name] = time.perf_counter() - t0
        for split, dialogs in splits.items():
            _cli(["predict", "--checkpoint", out / "checkpoint.vdckpt", "--data", data / f"{split}.json",
                  "--features", data / "features.vdf", "--out", out / f"{split}.jsonl"])
            report = evaluate(read_predictions(out / f"{split}.jsonl"), dialogs)
            getattr(result, split)[name] = report
        say(f"{name}: {result.seconds[name]:.0f}s  train R@1 {result.train[name].recall_at[1]:.3f}  "
            f"held-out MRR {result.heldout[name].mrr:.3f}")

    ens = work / "ensemble"
    ens.mkdir(parents=True, exist_ok=True)
    for split, dialogs in splits.items():
        _cli(["ensemble", "--mode", cfg.ensemble_mode, *sum((["--in", work / m / f"{split}.jsonl"]
                                                            for m in cfg.models), []),
              "--out", ens / f"{split}.jsonl"])
        getattr(result, split)["ensemble"] = evaluate(read_predictions(ens / f"{split}.jsonl"), dialogs)

    preds = [f"{m}={work / m / 'heldout.jsonl'}" for m in cfg.models] + [f"ensemble={ens / 'heldout.jsonl'}"]
    text = _cli(["evaluate", *sum((["--pred", p] for p in preds), []), "--data", data / "heldout.json",
                 "--vocab", data / "vocab.txt", "--report", work / "heldout_report.json"])
    result.table = "\n".join(line for line in text.splitlines() if not line.startswith("#"))
    (work / "desk_summary.json").write_text(json.dumps({
        "config": {**cfg.__dict__, "models": list(cfg.models)},
        "seconds": result.seconds,
        "train": {k: v.to_dict() for k, v in result.train.items()},
        "heldout": {k: v.to_dict() for k, v in result.heldout.items()},
    }, indent=2) + "\n")
    return result


def ensemble_beats_each(reports: dict[str, RankingReport], metric: str = "mrr") -> bool:
    others = [getattr(r, metric) for k, r in reports.items() if k != "ensemble"]
    return getattr(reports["ensemble"], metric) > max(others)
