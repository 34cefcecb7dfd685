"""Combine per-round log-probability vectors from several models."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import diffcore as dc
from .errors import ValidationError
from .predictions import PredictionSet, read_predictions, write_predictions

MODES = ("mean", "max")


@dataclass
class EnsembleConfig:
    inputs: Sequence           # paths or in-memory PredictionSets
    mode: str = "mean"


def digest(preds: Mapping[tuple, np.ndarray]) -> str:
    h = hashlib.sha256()
    for key in sorted(preds):
        h.update(np.asarray(key, dtype="<i8").tobytes())
        h.update(np.asarray(preds[key], dtype="<f8").tobytes())
    return h.hexdigest()


def _validate(sets: list) -> None:
    keys = set(sets[0])
    width = {len(v) for v in sets[0].values()}
    for s in sets[1:]:
        if set(s) != keys or {len(v) for v in s.values()} != width:
            raise ValidationError("ensemble-misalign")
    if len(width) > 1:
        raise ValidationError("ensemble-misalign", "candidate counts differ between rounds")
    for s in sets:
        for key, lp in s.items():
            if abs(float(np.sum(np.exp(lp))) - 1.0) > 1e-4:
                raise ValidationError(f"ensemble-unnormalized:{key[0]}:{key[1]}")


def combine(config: EnsembleConfig) -> PredictionSet:
    """Per-candidate mean (or max) across models, re-normalized with log-softmax.

    Inputs are reduced in digest order so the result does not depend on the
    order they were given in.
    """
    if config.mode not in MODES:
        raise ValidationError("config", f"mode must be one of {MODES}")
    if not config.inputs:
        raise ValidationError("no-inputs")
    sets = [read_predictions(x) if not isinstance(x, Mapping) else dict(x) for x in config.inputs]
    _validate(sets)
    sets.sort(key=digest)
    out: PredictionSet = {}
    for key in sorted(sets[0]):
        acc = np.array(sets[0][key], dtype=np.float64)
        for s in sets[1:]:
            acc = acc + s[key] if config.mode == "mean" else np.maximum(acc, s[key])
        if config.mode == "mean":
            acc = acc / len(sets)
        out[key] = dc.log_softmax(acc).data
    return out


def combine_files(inputs: Sequence, out_path, mode: str = "mean") -> PredictionSet:
    preds = combine(EnsembleConfig(list(inputs), mode))
    write_predictions(out_path, preds)
    return preds
