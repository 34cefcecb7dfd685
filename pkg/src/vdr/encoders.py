"""Late-fusion and memory-network encoders with query-guided region attention.

All functions operate on a padded batch; pass a batch of one for a single round.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .data import RoundBatch, pad
from .diffcore import Params, RnnConfig, Value
from .errors import ValidationError

LATE_FUSION, MEMORY_NETWORK = "late_fusion", "memory_network"
QUESTION_ONLY, QUESTION_PLUS_CAPTION = "question_only", "question_plus_caption"


@dataclass(frozen=True)
class EncoderConfig:
    kind: str = LATE_FUSION
    hidden: int = 8
    layers: int = 2
    bidirectional: bool = False
    embed_trainable: bool = False
    attention_query: str = QUESTION_ONLY
    output_dim: int = 8

    @classmethod
    def late_fusion(cls, hidden: int = 8, **kw) -> "EncoderConfig":
        kw.setdefault("output_dim", hidden)
        return cls(LATE_FUSION, hidden, 2, False, False, QUESTION_ONLY, **kw)

    @classmethod
    def memory_network(cls, hidden: int = 8, **kw) -> "EncoderConfig":
        kw.setdefault("output_dim", hidden)
        return cls(MEMORY_NETWORK, hidden, 1, True, True, QUESTION_PLUS_CAPTION, **kw)

    @property
    def rnn(self) -> RnnConfig:
        cell = "lstm" if self.kind == LATE_FUSION else "gru"
        return RnnConfig(cell, self.layers, self.bidirectional, self.hidden)


@dataclass
class EncodedContext:
    vector: Value                       # B x E
    attention_weights: np.ndarray       # B x Kmax (zeros on padding)
    memory_weights: np.ndarray | None = None   # B x Mmax, memory network only


def encode_tokens(ids, embeddings: Value, rnn_config: RnnConfig, params: Params,
                  lengths=None) -> Value:
    """Embedding lookup followed by ``run_rnn``.

    ``ids`` is a single id sequence (returns a vector) or a padded ``B x L``
    array with ``lengths`` (returns ``B x width``). An empty sequence is
    encoded as a lone UNK.
    """
    single = lengths is None and np.ndim(ids) <= 1
    if single:
        ids, lengths = pad([list(ids)])
    x = embeddings[np.asarray(ids)]
    out = dc.run_rnn(x, rnn_config, params, lengths=lengths)
    return out[0] if single else out


def init_attention(rng, d_query: int, d_img: int, d_att: int) -> Params:
    return {
        "wq": dc.init_uniform(rng, d_query, (d_query, d_att)),
        "wf": dc.init_uniform(rng, d_img, (d_img, d_att)),
        "b": dc.parameter(np.zeros(d_att)),
        "w2": dc.init_uniform(rng, d_att, (d_att,)),
    }


def attend_objects(query, features, params: Params, mask=None) -> tuple[Value, Value]:
    """Additive attention of ``query`` over region features.

    query: ``(Q,)`` or ``(B, Q)``; features: ``(K, d)`` or ``(B, K, d)``;
    mask: optional ``(B, K)`` bool marking real (non-padding) regions.
    Returns (attended ``(B, d)``, weights ``(B, K)``), unbatched when inputs are.
    """
    query, features = dc.as_value(query), dc.as_value(features)
    single = query.ndim == 1
    if single:
        query = query.reshape(1, -1)
        features = features.reshape((1,) + features.shape)
        mask = None if mask is None else np.asarray(mask)[None]
    if features.shape[1] == 0 or (mask is not None and not np.asarray(mask).any(axis=1).all()):
        raise ValidationError("no-regions")
    b, k, d = features.shape
    proj = dc.matmul(features, params["wf"]) + dc.reshape(dc.matmul(query, params["wq"]), (b, 1, -1))
    scores = dc.matmul(dc.tanh(proj + params["b"]), params["w2"])          # B x K
    weights = dc.softmax(scores, axis=-1, mask=mask)
    attended = dc.reshape(dc.matmul(dc.reshape(weights, (b, 1, k)), features), (b, d))
    if single:
        return attended[0], weights[0]
    return attended, weights


# ---------------------------------------------------------------- parameters

def init_encoder(rng, cfg: EncoderConfig, embed_dim: int, d_img: int) -> Params:
    rnn = cfg.rnn
    w = rnn.out_dim
    p: Params = {}
    p.update(dc.prefixed("q_rnn.", dc.init_rnn(rng, rnn, embed_dim)))
    p.update(dc.prefixed("h_rnn.", dc.init_rnn(rng, rnn, embed_dim)))
    if cfg.kind not in (LATE_FUSION, MEMORY_NETWORK):
        raise ValidationError("config", f"unknown encoder kind {cfg.kind!r}")
    if cfg.kind == MEMORY_NETWORK:
        p.update(dc.prefixed("mem_proj.", dc.init_linear(rng, w, w)))
    if cfg.attention_query == QUESTION_PLUS_CAPTION:
        p.update(dc.prefixed("img_query.", dc.init_linear(rng, 2 * w, w)))
    p.update(dc.prefixed("att.", init_attention(rng, w, d_img, cfg.hidden)))
    p.update(dc.prefixed("fuse.", dc.init_linear(rng, 2 * w + d_img, cfg.output_dim)))
    return p


# ---------------------------------------------------------------- encoders

def _image_query(cfg: EncoderConfig, params: Params, q: Value, c: Value) -> Value:
    if cfg.attention_query == QUESTION_ONLY:
        return q
    return dc.tanh(dc.linear(dc.concat([q, c], axis=-1), dc.scope(params, "img_query.")))


def lf_encode(batch: RoundBatch, embeddings: Value, params: Params, cfg: EncoderConfig) -> EncodedContext:
    """Question and concatenated history through separate RNNs; the question
    alone queries the regions; the three vectors are fused by tanh-linear."""
    rnn = cfg.rnn
    q = encode_tokens(batch.question, embeddings, rnn, dc.scope(params, "q_rnn."), batch.question_len)
    h = encode_tokens(batch.history, embeddings, rnn, dc.scope(params, "h_rnn."), batch.history_len)
    if cfg.attention_query == QUESTION_ONLY:
        query = q
    else:
        c = encode_tokens(batch.caption, embeddings, rnn, dc.scope(params, "h_rnn."), batch.caption_len)
        query = _image_query(cfg, params, q, c)
    v, weights = attend_objects(query, batch.features, dc.scope(params, "att."), batch.region_mask)
    out = dc.tanh(dc.linear(dc.concat([q, h, v], axis=-1), dc.scope(params, "fuse.")))
    return EncodedContext(out, weights.data)


def mn_encode(batch: RoundBatch, embeddings: Value, params: Params, cfg: EncoderConfig) -> EncodedContext:
    """Memory network: one attention hop of the question over per-round history
    memories, additive read, and a question+caption query over the regions."""
    rnn = cfg.rnn
    w = rnn.out_dim
    b, m = batch.memory_mask.shape
    q = encode_tokens(batch.question, embeddings, rnn, dc.scope(params, "q_rnn."), batch.question_len)
    c = encode_tokens(batch.caption, embeddings, rnn, dc.scope(params, "h_rnn."), batch.caption_len)
    mem = encode_tokens(batch.memories, embeddings, rnn, dc.scope(params, "h_rnn."), batch.memory_len)
    mem = dc.reshape(dc.linear(mem, dc.scope(params, "mem_proj.")), (b, m, w))
    sim = dc.reshape(dc.matmul(mem, dc.reshape(q, (b, w, 1))), (b, m)) * (1.0 / np.sqrt(w))
    alpha = dc.softmax(sim, axis=-1, mask=batch.memory_mask)
    read = dc.reshape(dc.matmul(dc.reshape(alpha, (b, 1, m)), mem), (b, w))
    query = _image_query(cfg, params, q, c)
    v, weights = attend_objects(query, batch.features, dc.scope(params, "att."), batch.region_mask)
    out = dc.tanh(dc.linear(dc.concat([q, q + read, v], axis=-1), dc.scope(params, "fuse.")))
    return EncodedContext(out, weights.data, alpha.data)


def encode(batch: RoundBatch, embeddings: Value, params: Params, cfg: EncoderConfig) -> EncodedContext:
    if cfg.kind == LATE_FUSION:
        return lf_encode(batch, embeddings, params, cfg)
    return mn_encode(batch, embeddings, params, cfg)
