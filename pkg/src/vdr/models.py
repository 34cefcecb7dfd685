"""The three model variants: encoder + candidate branch + scorer."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import diffcore as dc
from .data import RoundBatch
from .decoder import BIGRU, DOT, GATED, LSTM2, DecoderConfig, RoundScores, encode_candidates, init_decoder, score
from .diffcore import Params
from .encoders import EncodedContext, EncoderConfig, encode, init_encoder
from .errors import ValidationError
from .vocab import EmbeddingInit

MODEL_NAMES = ("lf_rcnn", "mn_rcnn", "mn_rcnn_wt")


@dataclass(frozen=True)
class ModelConfig:
    name: str
    encoder: EncoderConfig
    decoder: DecoderConfig
    vocab_size: int
    embed_dim: int
    d_img: int

    @classmethod
    def preset(cls, name: str, vocab_size: int, embed_dim: int, d_img: int, hidden: int = 8,
               embed_trainable: bool | None = None, wt_variant: str = GATED) -> "ModelConfig":
        """LF-RCNN: 2-layer LSTMs, question-only attention, frozen embeddings.
        MN-RCNN: biGRUs, question+caption attention, fine-tuned embeddings.
        MN-RCNN-Wt: MN-RCNN with the gated scorer."""
        if name not in MODEL_NAMES:
            raise ValidationError("config", f"unknown model {name!r}")
        kw = {} if embed_trainable is None else {"embed_trainable": embed_trainable}
        if name == "lf_rcnn":
            enc = EncoderConfig.late_fusion(hidden)
            dec = DecoderConfig(DOT, LSTM2, enc.output_dim, enc.output_dim)
        else:
            enc = EncoderConfig.memory_network(hidden)
            dec = DecoderConfig(DOT if name == "mn_rcnn" else wt_variant, BIGRU,
                                enc.output_dim, enc.output_dim)
        if kw:
            enc = EncoderConfig(**{**asdict(enc), **kw})
        return cls(name, enc, dec, vocab_size, embed_dim, d_img)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(d["name"], EncoderConfig(**d["encoder"]), DecoderConfig(**d["decoder"]),
                   d["vocab_size"], d["embed_dim"], d["d_img"])


def init_params(cfg: ModelConfig, seed: int, embedding: EmbeddingInit | None = None) -> Params:
    """Uniform(+-1/sqrt(fan_in)) weights, zero biases, from a generator keyed on ``seed``."""
    rng = np.random.default_rng([seed, 0x5EED])
    if embedding is None:
        table = rng.uniform(-0.1, 0.1, size=(cfg.vocab_size, cfg.embed_dim))
    else:
        table = embedding.matrix
        if table.shape != (cfg.vocab_size, cfg.embed_dim):
            raise ValidationError("shape", f"embedding {table.shape} vs model "
                                           f"{(cfg.vocab_size, cfg.embed_dim)}")
    params: Params = {"embed": dc.Value(np.array(table, dtype=np.float64),
                                        requires_grad=cfg.encoder.embed_trainable)}
    params.update(init_encoder(rng, cfg.encoder, cfg.embed_dim, cfg.d_img))
    params.update(init_decoder(rng, cfg.decoder, cfg.embed_dim, cfg.encoder.hidden))
    return params


def forward(cfg: ModelConfig, params: Params, batch: RoundBatch) -> tuple[RoundScores, EncodedContext]:
    embed = params["embed"]
    ctx = encode(batch, embed, params, cfg.encoder)
    cands = encode_candidates(batch.candidates, batch.candidate_len, batch.n_cand, embed, params,
                              cfg.decoder.rnn(cfg.encoder.hidden))
    return score(cfg.decoder, ctx.vector, cands, params), ctx
