"""Dialog/feature data model, file formats, batching and batch tensorization."""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .errors import ValidationError
from .vocab import PAD, UNK, Vocabulary, normalize_tokenize

Ids = tuple  # tuple[int, ...]


@dataclass(frozen=True)
class Round:
    question: Ids
    candidates: tuple[Ids, ...]
    gt_index: int
    relevance: tuple[float, ...] | None = None

    def validate(self, n_cand: int, where: str = "?") -> None:
        if len(self.candidates) != n_cand:
            raise ValidationError("candidate-count", f"{where}: {len(self.candidates)} != {n_cand}")
        if not 0 <= self.gt_index < n_cand:
            raise ValidationError("candidate-count", f"{where}: gt_index {self.gt_index} out of range")
        if self.relevance is not None:
            rel = self.relevance
            if (len(rel) != n_cand or any(not 0.0 <= r <= 1.0 for r in rel)
                    or rel[self.gt_index] <= 0):
                raise ValidationError(f"dataset-parse:{where}", "bad relevance vector")

    @property
    def answer(self) -> Ids:
        return self.candidates[self.gt_index]


@dataclass(frozen=True)
class Dialog:
    dialog_id: int
    image_id: int
    caption: Ids
    rounds: tuple[Round, ...]

    def history_concat(self, t: int) -> Ids:
        """Caption followed by the ground-truth QA pairs of rounds before ``t``."""
        out = list(self.caption)
        for r in self.rounds[:t]:
            out += r.question + r.answer
        return tuple(out)

    def history_rounds(self, t: int) -> list[Ids]:
        """Memory entries for round ``t``: the caption, then one QA pair per earlier round."""
        return [self.caption] + [r.question + r.answer for r in self.rounds[:t]]


@dataclass(frozen=True)
class ObjectFeatureSet:
    image_id: int
    features: np.ndarray   # K x d_img, float64 in memory

    @property
    def n_regions(self) -> int:
        return self.features.shape[0]


FeatureStore = dict  # image_id -> ObjectFeatureSet


# ---------------------------------------------------------------- dataset JSON

def load_dialogs(path, vocab: Vocabulary, protected: Iterable[str] | None = None) -> list[Dialog]:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    return dialogs_from_json(raw, vocab, protected)


def dialogs_from_json(raw: Mapping, vocab: Vocabulary, protected=None) -> list[Dialog]:
    try:
        n_cand, n_rounds = int(raw["n_cand"]), int(raw["n_rounds"])
        records = raw["dialogs"]
    except (KeyError, TypeError, ValueError):
        raise ValidationError("dataset-parse:header") from None

    def enc(text):
        if not isinstance(text, str):
            raise TypeError(text)
        return vocab.encode(normalize_tokenize(text, protected))

    dialogs = []
    for idx, rec in enumerate(records):
        rid = rec.get("dialog_id", idx) if isinstance(rec, dict) else idx
        try:
            rounds = []
            for r in rec["rounds"]:
                rel = r.get("relevance")
                rounds.append(Round(
                    question=enc(r["question"]),
                    candidates=tuple(enc(c) for c in r["candidates"]),
                    gt_index=int(r["gt_index"]),
                    relevance=None if rel is None else tuple(float(x) for x in rel),
                ))
            dialog = Dialog(int(rec["dialog_id"]), int(rec["image_id"]), enc(rec["caption"]),
                            tuple(rounds))
        except (KeyError, TypeError, ValueError):
            raise ValidationError(f"dataset-parse:{rid}") from None
        if len(dialog.rounds) != n_rounds:
            raise ValidationError(f"dataset-parse:{rid}", "round count")
        for t, r in enumerate(dialog.rounds):
            r.validate(n_cand, f"{rid}:{t}")
        dialogs.append(dialog)
    return dialogs


def dialogs_to_json(dialogs: Sequence[Dialog], vocab: Vocabulary) -> dict:
    def text(ids):
        return " ".join(vocab.decode(ids))

    return {
        "version": 1,
        "n_cand": len(dialogs[0].rounds[0].candidates) if dialogs else 0,
        "n_rounds": len(dialogs[0].rounds) if dialogs else 0,
        "dialogs": [
            {
                "dialog_id": d.dialog_id,
                "image_id": d.image_id,
                "caption": text(d.caption),
                "rounds": [
                    {
                        "question": text(r.question),
                        "candidates": [text(c) for c in r.candidates],
                        "gt_index": r.gt_index,
                        "relevance": None if r.relevance is None else list(r.relevance),
                    }
                    for r in d.rounds
                ],
            }
            for d in dialogs
        ],
    }


def write_dialogs(path, dialogs: Sequence[Dialog], vocab: Vocabulary) -> None:
    Path(path).write_text(json.dumps(dialogs_to_json(dialogs, vocab)), encoding="utf-8")


# ---------------------------------------------------------------- feature file

MAGIC = b"VDF1"


def write_features(path, store: Mapping[int, ObjectFeatureSet]) -> None:
    sets = [store[k] for k in sorted(store)]
    d_img = sets[0].features.shape[1] if sets else 0
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<II", d_img, len(sets)))
        for fs in sets:
            if fs.features.shape[1] != d_img:
                raise ValidationError("shape", f"image {fs.image_id} width")
            fh.write(struct.pack("<QH", fs.image_id, fs.n_regions))
            fh.write(np.ascontiguousarray(fs.features, dtype="<f4").tobytes())


def load_features(path, k_range: tuple[int, int] = (1, 100)) -> FeatureStore:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise ValidationError("feature-format", "bad magic")
    if len(buf) < 12:
        raise ValidationError("feature-truncated")
    d_img, count = struct.unpack_from("<II", buf, 4)
    pos, store = 12, {}
    for _ in range(count):
        if pos + 10 > len(buf):
            raise ValidationError("feature-truncated")
        image_id, k = struct.unpack_from("<QH", buf, pos)
        pos += 10
        nbytes = 4 * k * d_img
        if pos + nbytes > len(buf):
            raise ValidationError("feature-truncated")
        if not k_range[0] <= k <= k_range[1]:
            raise ValidationError(f"feature-count:{image_id}")
        arr = np.frombuffer(buf, dtype="<f4", count=k * d_img, offset=pos).reshape(k, d_img)
        if not np.isfinite(arr).all():
            raise ValidationError(f"feature-count:{image_id}", "non-finite entries")
        store[image_id] = ObjectFeatureSet(image_id, arr.astype(np.float64))
        pos += nbytes
    return store


def check_pairing(dialogs: Iterable[Dialog], store: Mapping[int, ObjectFeatureSet]) -> None:
    for d in dialogs:
        if d.image_id not in store:
            raise ValidationError(f"feature-miss:{d.image_id}")


# ---------------------------------------------------------------- batching

def batch_iter(dialogs: Sequence[Dialog], batch_size: int,
               shuffle_seed: int | None = None) -> Iterator[list[tuple[Dialog, int]]]:
    """Yield batches of (dialog, round index); a seeded permutation per call,
    natural order when ``shuffle_seed`` is None."""
    if batch_size < 1:
        raise ValidationError("batch-size")
    pairs = [(d, t) for d in dialogs for t in range(len(d.rounds))]
    order = (np.arange(len(pairs)) if shuffle_seed is None
             else np.random.default_rng(shuffle_seed).permutation(len(pairs)))
    for start in range(0, len(pairs), batch_size):
        yield [pairs[i] for i in order[start:start + batch_size]]


def pad(seqs: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad id sequences with PAD; empty ones become a single UNK."""
    seqs = [tuple(s) if len(s) else (UNK,) for s in seqs]
    lengths = np.array([len(s) for s in seqs], dtype=np.int64)
    out = np.full((len(seqs), int(lengths.max())), PAD, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, :len(s)] = s
    return out, lengths


@dataclass
class RoundBatch:
    """Padded arrays for a batch of B (dialog, round) pairs."""
    keys: list            # (dialog_id, round index)
    question: np.ndarray  # B x Lq
    question_len: np.ndarray
    caption: np.ndarray
    caption_len: np.ndarray
    history: np.ndarray   # concatenated history, B x Lh
    history_len: np.ndarray
    memories: np.ndarray  # B*M x Lm, row b*M + j is memory j of item b
    memory_len: np.ndarray
    memory_mask: np.ndarray  # B x M bool
    candidates: np.ndarray   # B*N x La
    candidate_len: np.ndarray
    n_cand: int
    features: np.ndarray     # B x Kmax x d_img
    region_mask: np.ndarray  # B x Kmax bool
    gt: np.ndarray           # B

    def __len__(self):
        return len(self.keys)


def make_batch(pairs: Sequence[tuple[Dialog, int]], store: Mapping[int, ObjectFeatureSet]) -> RoundBatch:
    if not pairs:
        raise ValidationError("empty-batch")
    n_cand = len(pairs[0][0].rounds[0].candidates)
    q, q_len = pad([d.rounds[t].question for d, t in pairs])
    c, c_len = pad([d.caption for d, _ in pairs])
    h, h_len = pad([d.history_concat(t) for d, t in pairs])

    mems = [d.history_rounds(t) for d, t in pairs]
    m_max = max(len(m) for m in mems)
    mem_mask = np.zeros((len(pairs), m_max), dtype=bool)
    flat = []
    for b, m in enumerate(mems):
        mem_mask[b, :len(m)] = True
        flat += list(m) + [()] * (m_max - len(m))
    mem, mem_len = pad(flat)

    cand, cand_len = pad([c for d, t in pairs for c in d.rounds[t].candidates])

    sets = []
    for d, _ in pairs:
        if d.image_id not in store:
            raise ValidationError(f"feature-miss:{d.image_id}")
        sets.append(store[d.image_id].features)
    k_max = max(s.shape[0] for s in sets)
    feats = np.zeros((len(pairs), k_max, sets[0].shape[1]))
    reg_mask = np.zeros((len(pairs), k_max), dtype=bool)
    for b, s in enumerate(sets):
        feats[b, :s.shape[0]] = s
        reg_mask[b, :s.shape[0]] = True

    return RoundBatch(
        keys=[(d.dialog_id, t) for d, t in pairs],
        question=q, question_len=q_len, caption=c, caption_len=c_len,
        history=h, history_len=h_len,
        memories=mem, memory_len=mem_len, memory_mask=mem_mask,
        candidates=cand, candidate_len=cand_len, n_cand=n_cand,
        features=feats, region_mask=reg_mask,
        gt=np.array([d.rounds[t].gt_index for d, t in pairs], dtype=np.int64),
    )
