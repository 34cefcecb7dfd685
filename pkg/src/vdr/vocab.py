"""Vocabulary construction, pretrained-vector ingestion and manual token remapping."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import ValidationError

PAD, UNK = 0, 1
PAD_TOKEN, UNK_TOKEN = "<pad>", "<unk>"
PUNCT = set(".,?!\"'-")

# Misspellings of "yes" seen in dialog answers, mapped onto the pretrained "yes" row.
DEFAULT_REMAP = {
    "*yes": "yes",
    "yesa": "yes",
    "yess": "yes",
    "ytes": "yes",
    "yes-": "yes",
    "yes3": "yes",
    "yyes": "yes",
    "yees": "yes",
}


def normalize_tokenize(text: str, protected: Iterable[str] | None = None) -> list[str]:
    """Lowercase, split on whitespace, peel leading/trailing punctuation off
    into one-character tokens. Chunks listed in ``protected`` (default: the
    keys of the default remap table) are kept verbatim."""
    keep = set(DEFAULT_REMAP) if protected is None else set(protected)
    tokens: list[str] = []
    for chunk in text.lower().split():
        if chunk in keep:
            tokens.append(chunk)
            continue
        lead, trail = [], []
        while chunk and chunk[0] in PUNCT:
            lead.append(chunk[0])
            chunk = chunk[1:]
        while chunk and chunk[-1] in PUNCT:
            trail.append(chunk[-1])
            chunk = chunk[:-1]
        tokens.extend(lead)
        if chunk:
            tokens.append(chunk)
        tokens.extend(reversed(trail))
    return tokens


@dataclass(frozen=True)
class Vocabulary:
    id_to_token: tuple[str, ...]
    token_to_id: Mapping[str, int] = field(repr=False, compare=False, default=None)

    def __post_init__(self):
        if self.id_to_token[:2] != (PAD_TOKEN, UNK_TOKEN):
            raise ValidationError("vocab", "ids 0/1 must be PAD/UNK")
        mapping = {t: i for i, t in enumerate(self.id_to_token)}
        if len(mapping) != len(self.id_to_token):
            raise ValidationError("vocab", "duplicate token")
        object.__setattr__(self, "token_to_id", mapping)

    @classmethod
    def from_tokens(cls, tokens: Iterable[str]) -> "Vocabulary":
        return cls((PAD_TOKEN, UNK_TOKEN) + tuple(tokens))

    def __len__(self):
        return len(self.id_to_token)

    def encode(self, tokens: Iterable[str]) -> tuple[int, ...]:
        return tuple(self.token_to_id.get(t, UNK) for t in tokens)

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.id_to_token[i] for i in ids]

    def save(self, path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.id_to_token[2:]), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls.from_tokens(lines)


def build_vocab(corpus: Iterable, min_count: int = 1) -> Vocabulary:
    """Ids ordered by descending count, then lexicographically. Elements of
    ``corpus`` are token sequences; bare strings count as single tokens."""
    if min_count < 1:
        raise ValidationError("min-count")
    counts: Counter = Counter()
    for item in corpus:
        if isinstance(item, str):
            counts[item] += 1
        else:
            counts.update(item)
    if not counts:
        raise ValidationError("empty-corpus")
    counts.pop(PAD_TOKEN, None)
    counts.pop(UNK_TOKEN, None)
    kept = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
    return Vocabulary.from_tokens(kept)


# ---------------------------------------------------------------- pretrained vectors

PRETRAINED, RANDOM = "pretrained", "random"


def remapped_tag(target: str) -> str:
    return f"remapped:{target}"


@dataclass
class EmbeddingInit:
    matrix: np.ndarray                 # |V| x d, float64
    provenance: list[str]              # "pretrained" | "random" | "remapped:<target>"
    vocab: Vocabulary
    trainable: bool = True

    def counts(self) -> Counter:
        return Counter(p.split(":", 1)[0] for p in self.provenance)


def read_vectors(path, wanted: set | None = None) -> tuple[dict, int]:
    """Parse ``token v1 ... vd`` lines; returns ({token: vector}, d)."""
    vectors, width = {}, None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split(" ")
            if not line.strip():
                continue
            if width is None:
                width = len(parts) - 1
            if len(parts) - 1 != width or width < 1:
                raise ValidationError(f"bad-vector-file:{lineno}")
            if wanted is not None and parts[0] not in wanted:
                continue
            try:
                vectors[parts[0]] = np.array([float(v) for v in parts[1:]])
            except ValueError:
                raise ValidationError(f"bad-vector-file:{lineno}") from None
    if width is None:
        raise ValidationError("bad-vector-file:0", "empty file")
    return vectors, width


def random_rows(n: int, d: int, seed: int, scale: float = 0.1) -> np.ndarray:
    return np.random.default_rng([seed, 0xE3B]).uniform(-scale, scale, size=(n, d))


def load_pretrained(vector_file, vocab: Vocabulary, seed: int = 0,
                    trainable: bool = True) -> tuple[EmbeddingInit, list[str]]:
    """Copy pretrained rows for known tokens; everything else starts random.
    PAD/UNK are random-tagged but never reported missing."""
    vectors, d = read_vectors(vector_file, set(vocab.id_to_token))
    matrix = random_rows(len(vocab), d, seed)
    provenance, missing = [], []
    for i, tok in enumerate(vocab.id_to_token):
        if tok in vectors:
            matrix[i] = vectors[tok]
            provenance.append(PRETRAINED)
        else:
            provenance.append(RANDOM)
            if i > UNK:
                missing.append(tok)
    return EmbeddingInit(matrix, provenance, vocab, trainable), missing


def random_init(vocab: Vocabulary, d: int, seed: int = 0, trainable: bool = True) -> EmbeddingInit:
    return EmbeddingInit(random_rows(len(vocab), d, seed), [RANDOM] * len(vocab), vocab, trainable)


@dataclass(frozen=True)
class RemapTable:
    entries: Mapping[str, str]

    def __post_init__(self):
        chained = set(self.entries) & set(self.entries.values())
        if chained:
            raise ValidationError("remap-chain", ",".join(sorted(chained)))

    @classmethod
    def default(cls) -> "RemapTable":
        return cls(dict(DEFAULT_REMAP))

    @classmethod
    def load(cls, path) -> "RemapTable":
        entries = {}
        for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not raw.strip() or raw.lstrip().startswith("#"):
                continue
            parts = raw.rstrip("\r\n").split("\t")
            if len(parts) != 2 or not parts[0] or not parts[1]:
                raise ValidationError(f"bad-remap-file:{lineno}")
            entries[parts[0]] = parts[1].strip()
        return cls(entries)

    def save(self, path) -> None:
        Path(path).write_text("".join(f"{k}\t{v}\n" for k, v in self.entries.items()),
                              encoding="utf-8")


def apply_remap(init: EmbeddingInit, table: RemapTable, vector_file) -> EmbeddingInit:
    """Give each non-pretrained token listed in ``table`` its target's pretrained row."""
    # only entries that would fill a row need a resolvable target
    needed = sorted(tok for i, tok in enumerate(init.vocab.id_to_token)
                    if i > UNK and init.provenance[i] != PRETRAINED and tok in table.entries)
    vectors, d = read_vectors(vector_file, {table.entries[k] for k in needed})
    for key in needed:
        if table.entries[key] not in vectors:
            raise ValidationError(f"remap-target-missing:{key}")
    if d != init.matrix.shape[1]:
        raise ValidationError("shape", f"vector width {d} != embedding width {init.matrix.shape[1]}")
    matrix = init.matrix.copy()
    provenance = list(init.provenance)
    for i, tok in enumerate(init.vocab.id_to_token):
        if i <= UNK or provenance[i] == PRETRAINED or tok not in table.entries:
            continue
        target = table.entries[tok]
        matrix[i] = vectors[target]
        provenance[i] = remapped_tag(target)
    return EmbeddingInit(matrix, provenance, init.vocab, init.trainable)
