"""Training loop (Adam + global-norm clipping), checkpoints, and prediction."""
from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import diffcore as dc
from .data import Dialog, batch_iter, check_pairing, make_batch
from .decoder import GATED, round_loss
from .diffcore import Params
from .errors import RunFailure, ValidationError
from .models import MODEL_NAMES, ModelConfig, forward, init_params
from .predictions import PredictionSet
from .vocab import EmbeddingInit, Vocabulary

log = logging.getLogger(__name__)

CKPT_MAGIC = b"VDCKPT1"
CKPT_VERSION = 1


@dataclass
class TrainConfig:
    model: str = "mn_rcnn"
    epochs: int = 200
    batch_size: int = 20
    learning_rate: float = 1e-3
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    grad_clip_norm: float = 5.0
    seed: int = 0
    eval_every: int = 10
    hidden: int = 8
    embed_dim: int = 16
    embed_trainable: bool | None = None   # None: the model's default
    wt_variant: str = GATED
    data: str | None = None
    features: str | None = None
    vocab: str | None = None
    vectors: str | None = None
    remap: str | None = None
    output_dir: str | None = None

    def __post_init__(self):
        self.adam_betas = tuple(self.adam_betas)

    def validate(self) -> None:
        if self.model not in MODEL_NAMES:
            raise ValidationError("config", f"model must be one of {MODEL_NAMES}")
        if self.epochs < 1:
            raise ValidationError("config", "epochs must be >= 1")
        if self.learning_rate < 0:
            raise ValidationError("config", "learning_rate must be >= 0")
        if self.batch_size < 1 or self.grad_clip_norm <= 0:
            raise ValidationError("config", "batch_size >= 1 and grad_clip_norm > 0 required")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["adam_betas"] = list(self.adam_betas)
        return d


@dataclass
class Checkpoint:
    params: dict                  # name -> float64 array
    model: ModelConfig
    train: dict
    epoch: int
    loss_history: list = field(default_factory=list)
    vocab: tuple | None = None    # id_to_token, so predict needs no vocab file
    version: int = CKPT_VERSION

    def to_params(self) -> Params:
        trainable = self.model.encoder.embed_trainable
        return {k: dc.Value(v.copy(), requires_grad=(k != "embed" or trainable))
                for k, v in self.params.items()}

    def save(self, path) -> None:
        names = list(self.params)
        header = {
            "version": self.version,
            "model": self.model.to_dict(),
            "train": self.train,
            "epoch": self.epoch,
            "loss_history": [float(x) for x in self.loss_history],
            "vocab": None if self.vocab is None else list(self.vocab),
            "params": [{"name": n, "shape": list(self.params[n].shape)} for n in names],
        }
        blob = json.dumps(header, sort_keys=True).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(CKPT_MAGIC + struct.pack("<Q", len(blob)) + blob)
            for n in names:
                fh.write(np.ascontiguousarray(self.params[n], dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        buf = Path(path).read_bytes()
        if buf[:len(CKPT_MAGIC)] != CKPT_MAGIC:
            raise ValidationError("checkpoint-format", "bad magic")
        pos = len(CKPT_MAGIC)
        (hlen,) = struct.unpack_from("<Q", buf, pos)
        pos += 8
        header = json.loads(buf[pos:pos + hlen].decode("utf-8"))
        pos += hlen
        if header.get("version") != CKPT_VERSION:
            raise ValidationError("checkpoint-version", str(header.get("version")))
        params = {}
        for spec in header["params"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape, dtype=np.int64))
            if pos + 8 * count > len(buf):
                raise ValidationError("checkpoint-format", "truncated")
            params[spec["name"]] = np.frombuffer(buf, "<f8", count, pos).reshape(shape).copy()
            pos += 8 * count
        vocab = header.get("vocab")
        return cls(params, ModelConfig.from_dict(header["model"]), header["train"], header["epoch"],
                   header["loss_history"], None if vocab is None else tuple(vocab), header["version"])


# ---------------------------------------------------------------- optimization

def clip_gradients(grads: Mapping[str, np.ndarray], max_norm: float) -> tuple[dict, float]:
    """Rescale to global L2 norm ``max_norm`` when exceeded; returns (grads, pre-clip norm)."""
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if norm > max_norm:
        scale = max_norm / norm
        return {k: g * scale for k, g in grads.items()}, norm
    return dict(grads), norm


class Adam:
    def __init__(self, params: Params, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr, self.betas, self.eps = lr, tuple(betas), eps
        self.names = [k for k, p in params.items() if p.requires_grad]
        self.m = {k: np.zeros_like(params[k].data) for k in self.names}
        self.v = {k: np.zeros_like(params[k].data) for k in self.names}
        self.t = 0

    def step(self, params: Params, grads: Mapping[str, np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.betas
        c1, c2 = 1 - b1 ** self.t, 1 - b2 ** self.t
        for k in self.names:
            g = grads[k]
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            update = self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
            params[k].data = params[k].data - update


def collect_grads(params: Params) -> dict:
    return {k: (np.zeros_like(p.data) if p.grad is None else np.asarray(p.grad, dtype=np.float64))
            for k, p in params.items() if p.requires_grad}


# ---------------------------------------------------------------- train / predict

def model_config_for(config: TrainConfig, vocab_size: int, embed_dim: int, d_img: int) -> ModelConfig:
    return ModelConfig.preset(config.model, vocab_size, embed_dim, d_img, config.hidden,
                              config.embed_trainable, config.wt_variant)


def _snapshot(params: Params, model: ModelConfig, config: TrainConfig, epoch: int,
              history: list, vocab) -> Checkpoint:
    return Checkpoint({k: p.data.copy() for k, p in params.items()}, model, config.to_dict(),
                      epoch, list(history), vocab)


def train(config: TrainConfig, dialogs: Sequence[Dialog], features: Mapping,
          embedding: EmbeddingInit | None = None, vocab: Vocabulary | None = None,
          on_epoch: Callable[[Checkpoint], None] | None = None) -> list[Checkpoint]:
    """Train one model; returns one checkpoint per epoch.

    ``embedding`` supplies the initial table (random init otherwise, which
    needs ``vocab``). On a non-finite loss raises ``diverged@<step>``; the
    exception's ``checkpoints`` holds the good ones so far.
    """
    config.validate()
    if not dialogs:
        raise ValidationError("empty-dataset")
    check_pairing(dialogs, features)
    if embedding is not None:
        vocab = embedding.vocab
    if vocab is None:
        raise ValidationError("config", "need an embedding init or a vocabulary")
    d_img = next(iter(features.values())).features.shape[1]
    embed_dim = config.embed_dim if embedding is None else embedding.matrix.shape[1]
    model = model_config_for(config, len(vocab), embed_dim, d_img)
    params = init_params(model, config.seed, embedding)
    opt = Adam(params, config.learning_rate, config.adam_betas, config.adam_eps)

    checkpoints: list[Checkpoint] = []
    history: list[float] = []
    step = 0
    for epoch in range(1, config.epochs + 1):
        losses = []
        for pairs in batch_iter(dialogs, config.batch_size, shuffle_seed=[config.seed, epoch]):
            batch = make_batch(pairs, features)
            for p in params.values():
                p.grad = None
            scores, _ = forward(model, params, batch)
            loss = round_loss(scores, batch.gt)
            step += 1
            if not np.isfinite(loss.item()):
                err = RunFailure(f"diverged@{step}")
                err.checkpoints = checkpoints
                raise err
            loss.backward()
            grads, _ = clip_gradients(collect_grads(params), config.grad_clip_norm)
            opt.step(params, grads)
            losses.append(loss.item())
        history.append(float(np.mean(losses)))
        ckpt = _snapshot(params, model, config, epoch, history,
                         None if vocab is None else vocab.id_to_token)
        checkpoints.append(ckpt)
        if on_epoch is not None:
            on_epoch(ckpt)
        if config.eval_every and epoch % config.eval_every == 0:
            log.info("%s epoch %d loss %.4f", config.model, epoch, history[-1])
    return checkpoints


def predict(checkpoint: Checkpoint, dialogs: Sequence[Dialog], features: Mapping,
            batch_size: int = 50) -> PredictionSet:
    """Log-probabilities for every (dialog_id, 1-based round)."""
    check_pairing(dialogs, features)
    params = {k: dc.Value(v) for k, v in checkpoint.params.items()}
    out: PredictionSet = {}
    for pairs in batch_iter(dialogs, batch_size):
        batch = make_batch(pairs, features)
        scores, _ = forward(checkpoint.model, params, batch)
        for (dialog_id, t), row in zip(batch.keys, scores.log_probs.data):
            out[(dialog_id, t + 1)] = row.copy()
    return out
