"""PredictionSet files: JSON lines ``{"dialog_id", "round", "log_probs"}``.

Rounds are 1-based in files. Values are stored at single precision using the
shortest decimal that round-trips, so write -> read -> write is byte-stable.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import ValidationError

PredictionSet = dict  # (dialog_id, round) -> float64 log-prob vector


def _fmt(x: np.float32) -> str:
    return np.format_float_positional(x, unique=True, trim="-")


def write_predictions(path, preds: Mapping[tuple, np.ndarray]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key in sorted(preds):
            vals = ",".join(_fmt(v) for v in np.asarray(preds[key], dtype=np.float32))
            fh.write(f'{{"dialog_id":{int(key[0])},"round":{int(key[1])},"log_probs":[{vals}]}}\n')


def read_predictions(path) -> PredictionSet:
    preds: PredictionSet = {}
    width = None
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            key = (int(rec["dialog_id"]), int(rec["round"]))
            vec = np.asarray(rec["log_probs"], dtype=np.float32).astype(np.float64)
        except (KeyError, TypeError, ValueError):
            raise ValidationError(f"prediction-parse:{lineno}") from None
        if key in preds:
            raise ValidationError(f"prediction-mismatch:{key[0]}:{key[1]}", "duplicate round")
        if vec.ndim != 1 or (width is not None and len(vec) != width):
            raise ValidationError(f"prediction-mismatch:{key[0]}:{key[1]}", "candidate count")
        width = len(vec)
        preds[key] = vec
    return preds


def quantize(preds: Mapping[tuple, np.ndarray]) -> PredictionSet:
    """What a write/read cycle yields, without touching disk."""
    return {k: np.asarray(v, dtype=np.float32).astype(np.float64) for k, v in preds.items()}
