"""Synthetic dialog corpus with a planted, exactly-known optimal scorer.

Each image belongs to one of C latent clusters; its regions scatter around
that cluster's center and its caption names the cluster. Every question asks
one of T query types, and the correct answer label is
``(cluster + shift[qtype]) mod C``, so both image (or caption) and question
are needed. Candidates name one label each; the ground truth is the only
candidate carrying the correct label.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import Dialog, ObjectFeatureSet, Round
from .errors import ValidationError
from .vocab import Vocabulary


@dataclass
class SyntheticConfig:
    n_dialogs: int = 20
    n_rounds: int = 10
    n_cand: int = 20
    vocab_size: int = 60
    d_img: int = 16
    k_range: tuple = (4, 12)
    n_clusters: int = 8
    n_qtypes: int = 2
    embed_dim: int = 16
    n_heldout: int = 0
    seed: int = 0

    def __post_init__(self):
        self.k_range = tuple(self.k_range)

    def validate(self) -> None:
        counts = (self.n_dialogs, self.n_rounds, self.vocab_size, self.d_img,
                  self.n_clusters, self.n_qtypes, self.embed_dim)
        if min(counts) < 1 or self.n_cand < 2 or self.n_heldout < 0:
            raise ValidationError("synthetic-config", "counts must be >= 1 and n_cand >= 2")
        if not 1 <= self.k_range[0] <= self.k_range[1]:
            raise ValidationError("synthetic-config", "bad k_range")
        if self.n_clusters < 2:
            raise ValidationError("synthetic-config", "need at least 2 clusters")
        if self.vocab_size < 2 + self.n_qtypes + 2 * self.n_clusters + 1:
            raise ValidationError("synthetic-config", "vocab_size too small for clusters")

    @classmethod
    def from_json(cls, path) -> "SyntheticConfig":
        return cls(**json.loads(Path(path).read_text(encoding="utf-8")))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["k_range"] = list(self.k_range)
        return d


@dataclass
class SyntheticOracle:
    n_clusters: int
    shifts: np.ndarray            # per query type
    centers: np.ndarray           # C x d_img
    qtype_ids: tuple              # token id per query type
    scene_ids: tuple              # caption token id per cluster
    label_ids: tuple              # answer token id per label
    clusters: dict = field(default_factory=dict)   # dialog_id -> cluster
    dialogs: dict = field(default_factory=dict)    # dialog_id -> Dialog

    def answer_label(self, dialog_id: int, question) -> int:
        qtype = next(self.qtype_ids.index(t) for t in question if t in self.qtype_ids)
        return int((self.clusters[dialog_id] + self.shifts[qtype]) % self.n_clusters)

    def candidate_label(self, candidate) -> int:
        return next(self.label_ids.index(t) for t in candidate if t in self.label_ids)


def _vocab(cfg: SyntheticConfig) -> tuple[Vocabulary, tuple, tuple, tuple, tuple]:
    qtypes = [f"ask{i}" for i in range(cfg.n_qtypes)]
    scenes = [f"scene{i}" for i in range(cfg.n_clusters)]
    labels = [f"ans{i}" for i in range(cfg.n_clusters)]
    n_fill = cfg.vocab_size - 2 - len(qtypes) - len(scenes) - len(labels)
    fillers = [f"w{i}" for i in range(n_fill)]
    vocab = Vocabulary.from_tokens(qtypes + scenes + labels + fillers)
    ids = lambda toks: tuple(vocab.token_to_id[t] for t in toks)  # noqa: E731
    return vocab, ids(qtypes), ids(scenes), ids(labels), ids(fillers)


def gen_synthetic(cfg: SyntheticConfig):
    """Returns ``(dialogs, features, oracle)``. With ``n_heldout > 0`` the last
    ``n_heldout`` dialogs are extra draws from the same world (see ``split``)."""
    cfg.validate()
    vocab, qtype_ids, scene_ids, label_ids, filler_ids = _vocab(cfg)
    world = np.random.default_rng([cfg.seed, 1])
    C = cfg.n_clusters
    centers = world.normal(0.0, 1.0, size=(C, cfg.d_img))
    shifts = np.concatenate([[0], world.choice(np.arange(1, C), size=cfg.n_qtypes - 1,
                                               replace=cfg.n_qtypes - 1 > C - 1)])
    oracle = SyntheticOracle(C, shifts.astype(np.int64), centers, qtype_ids, scene_ids, label_ids)

    rng = np.random.default_rng([cfg.seed, 2])
    fill = lambda n: [int(x) for x in rng.choice(filler_ids, size=n)]  # noqa: E731

    def with_token(tok, n_fill):
        toks = fill(n_fill)
        toks.insert(int(rng.integers(0, n_fill + 1)), tok)
        return tuple(toks)

    def balanced(n):
        # every cluster appears floor(n / C) or ceil(n / C) times
        return [int(c) for c in rng.permutation(np.arange(n) % C)]

    assignment = balanced(cfg.n_dialogs) + balanced(cfg.n_heldout)
    dialogs, store = [], {}
    for dialog_id, cluster in enumerate(assignment):
        k = int(rng.integers(cfg.k_range[0], cfg.k_range[1] + 1))
        feats = centers[cluster] + 0.5 * rng.normal(size=(k, cfg.d_img))
        image_id = 1000 + dialog_id
        # stored single precision on disk; keep the in-memory copy identical
        store[image_id] = ObjectFeatureSet(image_id, feats.astype(np.float32).astype(np.float64))
        caption = with_token(scene_ids[cluster], 1)
        rounds = []
        for _ in range(cfg.n_rounds):
            qtype = int(rng.integers(cfg.n_qtypes))
            label = (cluster + int(shifts[qtype])) % C
            others = [c for c in range(C) if c != label]
            cand_labels = [int(x) for x in rng.choice(others, size=cfg.n_cand)]
            gt = int(rng.integers(cfg.n_cand))
            cand_labels[gt] = label
            candidates = tuple(
                (tuple(fill(1)) if rng.random() < 0.5 else ()) + (label_ids[lab],)
                for lab in cand_labels
            )
            adjacent = (label + 1) % C
            relevance = tuple(1.0 if i == gt else (0.5 if lab == adjacent else 0.0)
                              for i, lab in enumerate(cand_labels))
            rounds.append(Round(with_token(qtype_ids[qtype], 1), candidates, gt, relevance))
        dialog = Dialog(dialog_id, image_id, caption, tuple(rounds))
        dialogs.append(dialog)
        oracle.clusters[dialog_id] = cluster
        oracle.dialogs[dialog_id] = dialog
    return dialogs, store, oracle


def synthetic_vocab(cfg: SyntheticConfig) -> Vocabulary:
    return _vocab(cfg)[0]


def split(dialogs, cfg: SyntheticConfig):
    """(train, heldout) according to ``cfg.n_dialogs``."""
    return dialogs[:cfg.n_dialogs], dialogs[cfg.n_dialogs:]


def toy_vectors(vocab: Vocabulary, d: int, seed: int) -> dict:
    """Stand-in 'pretrained' vectors for every non-special synthetic token."""
    rng = np.random.default_rng([seed, 3])
    return {tok: rng.normal(0.0, 1.0, size=d) for tok in vocab.id_to_token[2:]}


def write_vectors(path, vectors: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for tok, vec in vectors.items():
            fh.write(tok + " " + " ".join(repr(float(v)) for v in vec) + "\n")


def oracle_scores(oracle: SyntheticOracle, dialog_id: int, rnd) -> np.ndarray:
    """Exact-match scores (1 for the correct label, else 0). ``rnd`` is a round
    index into the generated dialog, or a Round object (e.g. with permuted candidates)."""
    if dialog_id not in oracle.clusters:
        raise ValidationError("oracle-miss", f"dialog {dialog_id}")
    if isinstance(rnd, Round):
        r = rnd
    else:
        rounds = oracle.dialogs[dialog_id].rounds
        if not 0 <= rnd < len(rounds):
            raise ValidationError("oracle-miss", f"round {rnd}")
        r = rounds[rnd]
    label = oracle.answer_label(dialog_id, r.question)
    return np.array([1.0 if oracle.candidate_label(c) == label else 0.0 for c in r.candidates])


def oracle_features(oracle: SyntheticOracle, dialog_id: int, rnd: Round) -> np.ndarray:
    """One-hot of (cluster, qtype, candidate label) per candidate: N x (C*T*C)."""
    C, T = oracle.n_clusters, len(oracle.qtype_ids)
    qtype = next(oracle.qtype_ids.index(t) for t in rnd.question if t in oracle.qtype_ids)
    base = (oracle.clusters[dialog_id] * T + qtype) * C
    out = np.zeros((len(rnd.candidates), C * T * C))
    for i, cand in enumerate(rnd.candidates):
        out[i, base + oracle.candidate_label(cand)] = 1.0
    return out


def fit_oracle_logit(oracle: SyntheticOracle, dialogs, steps: int = 300, lr: float = 1.0):
    """Conditional-logit fit on oracle features by plain gradient descent.

    Sanity check that the corpus is solvable independently of the neural
    models. Returns (weights, R@1 on ``dialogs``).
    """
    X = np.stack([oracle_features(oracle, d.dialog_id, r) for d in dialogs for r in d.rounds])
    gt = np.array([r.gt_index for d in dialogs for r in d.rounds])
    w = np.zeros(X.shape[2])
    rows = np.arange(len(gt))
    for _ in range(steps):
        logits = X @ w
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        target = np.zeros_like(p)
        target[rows, gt] = 1.0
        w -= lr * np.einsum("bn,bnf->f", p - target, X) / len(gt)
    r1 = float(np.mean(np.argmax(X @ w, axis=1) == gt))
    return w, r1
