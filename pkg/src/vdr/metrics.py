"""Ranking metrics: NDCG over dense relevance, MRR, R@k, mean rank."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .data import Dialog
from .errors import ValidationError
from .predictions import read_predictions

RECALL_KS = (1, 5, 10)


def rank_of_gt(log_probs, gt_index: int) -> int:
    """1-based rank under descending score; ties go to the lower candidate index."""
    s = np.asarray(log_probs, dtype=np.float64)
    if not 0 <= gt_index < len(s):
        raise ValidationError("gt-index", f"{gt_index} not in [0, {len(s)})")
    g = s[gt_index]
    return 1 + int(np.sum(s > g)) + int(np.sum(s[:gt_index] == g))


def _ranks(ranks) -> np.ndarray:
    r = np.asarray(ranks, dtype=np.float64)
    if r.size == 0:
        raise ValidationError("no-rounds")
    return r


def mrr(ranks) -> float:
    return float(np.mean(1.0 / _ranks(ranks)))


def recall_at_k(ranks, k: int) -> float:
    if k < 1:
        raise ValidationError("recall-k", "k must be >= 1")
    return float(np.mean(_ranks(ranks) <= k))


def mean_rank(ranks) -> float:
    return float(np.mean(_ranks(ranks)))


def ndcg(log_probs, relevance) -> float:
    """NDCG truncated at the number of candidates with positive relevance."""
    s = np.asarray(log_probs, dtype=np.float64)
    rel = np.asarray(relevance, dtype=np.float64)
    k = int(np.sum(rel > 0))
    if k == 0:
        raise ValidationError("no-relevant")
    order = np.argsort(-s, kind="stable")
    discounts = 1.0 / np.log2(np.arange(2, k + 2))
    dcg = float(np.sum(rel[order[:k]] * discounts))
    idcg = float(np.sum(np.sort(rel)[::-1][:k] * discounts))
    return dcg / idcg


@dataclass
class RankingReport:
    ndcg: float | None
    mrr: float
    recall_at: dict
    mean_rank: float
    n_rounds_scored: int
    n_rounds_ndcg: int = 0
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "ndcg": self.ndcg,
            "mrr": self.mrr,
            "recall_at": {str(k): v for k, v in self.recall_at.items()},
            "mean_rank": self.mean_rank,
            "n_rounds_scored": self.n_rounds_scored,
            "n_rounds_ndcg": self.n_rounds_ndcg,
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")


def evaluate(predictions: Mapping[tuple, np.ndarray], dialogs: Sequence[Dialog]) -> RankingReport:
    """Score predictions keyed (dialog_id, 1-based round) against ``dialogs``."""
    expected = {(d.dialog_id, t + 1): r for d in dialogs for t, r in enumerate(d.rounds)}
    for key in sorted(set(expected) ^ set(predictions)):
        raise ValidationError(f"prediction-mismatch:{key[0]}:{key[1]}")
    ranks, gains = [], []
    for key in sorted(expected):
        rnd, lp = expected[key], predictions[key]
        if len(lp) != len(rnd.candidates):
            raise ValidationError(f"prediction-mismatch:{key[0]}:{key[1]}", "candidate count")
        ranks.append(rank_of_gt(lp, rnd.gt_index))
        if rnd.relevance is not None:
            gains.append(ndcg(lp, rnd.relevance))
    return RankingReport(
        ndcg=float(np.mean(gains)) if gains else None,
        mrr=mrr(ranks),
        recall_at={k: recall_at_k(ranks, k) for k in RECALL_KS},
        mean_rank=mean_rank(ranks),
        n_rounds_scored=len(ranks),
        n_rounds_ndcg=len(gains),
    )


def evaluate_file(predictions_path, dialogs: Sequence[Dialog]) -> RankingReport:
    return evaluate(read_predictions(predictions_path), dialogs)


def format_table(rows: Sequence[tuple[str, RankingReport]]) -> str:
    """Column order NDCG, MRR, R@1, R@5, R@10, Mean; NDCG/MRR/R@k scaled by 100,
    with raw NDCG and MRR repeated at the end."""
    head = ["Model", "NDCG (x 100)", "MRR (x 100)", "R@1", "R@5", "R@10", "Mean",
            "NDCG raw", "MRR raw"]
    body = []
    for name, rep in rows:
        nd = "n/a" if rep.ndcg is None else f"{100 * rep.ndcg:.2f}"
        nd_raw = "n/a" if rep.ndcg is None else f"{rep.ndcg:.4f}"
        body.append([name, nd, f"{100 * rep.mrr:.2f}"]
                    + [f"{100 * rep.recall_at[k]:.2f}" for k in RECALL_KS]
                    + [f"{rep.mean_rank:.2f}", nd_raw, f"{rep.mrr:.4f}"])
    widths = [max(len(r[i]) for r in [head] + body) for i in range(len(head))]
    line = lambda r: "  ".join(c.ljust(w) if i == 0 else c.rjust(w)  # noqa: E731
                               for i, (c, w) in enumerate(zip(r, widths)))
    rule = "-" * len(line(head))
    return "\n".join([line(head), rule] + [line(r) for r in body])
