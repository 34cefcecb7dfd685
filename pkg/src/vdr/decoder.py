"""Discriminative decoding: score candidate answers against the encoder output."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import Params, RnnConfig, Value
from .encoders import encode_tokens
from .errors import ValidationError

DOT, GATED, GATED_SCALAR = "dot", "gated", "gated_scalar"
LSTM2, BIGRU = "lstm2", "bigru"


@dataclass(frozen=True)
class DecoderConfig:
    variant: str = DOT
    candidate_rnn: str = LSTM2
    score_width: int = 8
    gate_width: int = 8

    def rnn(self, hidden: int) -> RnnConfig:
        if self.candidate_rnn == LSTM2:
            return RnnConfig("lstm", 2, False, hidden)
        if self.candidate_rnn == BIGRU:
            return RnnConfig("gru", 1, True, hidden)
        raise ValidationError("config", f"unknown candidate_rnn {self.candidate_rnn!r}")


@dataclass
class RoundScores:
    logits: Value      # (N,) or (B, N)
    log_probs: Value


def init_decoder(rng, cfg: DecoderConfig, embed_dim: int, hidden: int) -> Params:
    rnn = cfg.rnn(hidden)
    p: Params = {}
    p.update(dc.prefixed("cand_rnn.", dc.init_rnn(rng, rnn, embed_dim)))
    # under dot scoring a candidate bias shifts every logit by ctx.b and cancels in the softmax
    p.update(dc.prefixed("cand_proj.", dc.init_linear(rng, rnn.out_dim, cfg.score_width,
                                                      bias=cfg.variant != DOT)))
    e, g = cfg.score_width, cfg.gate_width
    if cfg.variant == GATED:
        p.update({
            "gate.wg": dc.init_uniform(rng, e, (e, g)),
            "gate.bg": dc.parameter(np.zeros(g)),
            "gate.ws": dc.init_uniform(rng, e, (e, g)),
            "gate.bs": dc.parameter(np.zeros(g)),
            # no output bias: a shared offset on every logit cancels in the softmax
            "gate.w": dc.init_uniform(rng, g, (g,)),
        })
    elif cfg.variant == GATED_SCALAR:
        p.update({
            "gate.a": dc.parameter(1.0),
            "gate.b": dc.parameter(0.0),
            "gate.w": dc.parameter(1.0),
        })
    elif cfg.variant != DOT:
        raise ValidationError("config", f"unknown decoder variant {cfg.variant!r}")
    return p


def encode_candidates(ids, lengths, n_cand: int, embeddings: Value, params: Params,
                      rnn: RnnConfig) -> Value:
    """Encode ``B*N`` padded candidate rows and project them; returns ``B x N x E``."""
    if n_cand < 2:
        raise ValidationError("candidate-count", "need at least 2 candidates")
    enc = encode_tokens(ids, embeddings, rnn, dc.scope(params, "cand_rnn."), lengths)
    proj = dc.linear(enc, dc.scope(params, "cand_proj."))
    return dc.reshape(proj, (-1, n_cand, proj.shape[-1]))


def _check_widths(context: Value, cand: Value):
    if context.shape[-1] != cand.shape[-1] or (context.ndim == 2 and cand.ndim == 3
                                               and context.shape[0] != cand.shape[0]):
        raise ValidationError("shape", f"context {context.shape} vs candidates {cand.shape}")


def _dot_logits(context: Value, cand: Value) -> Value:
    if context.ndim == 1:
        return dc.matmul(cand, context)
    b, e = context.shape
    return dc.reshape(dc.matmul(cand, dc.reshape(context, (b, e, 1))), (b, -1))


def score_dot(context, cand_matrix) -> RoundScores:
    context, cand_matrix = dc.as_value(context), dc.as_value(cand_matrix)
    _check_widths(context, cand_matrix)
    logits = _dot_logits(context, cand_matrix)
    return RoundScores(logits, dc.log_softmax(logits, axis=-1))


def score_gated(context, cand_matrix, gate_params: Params) -> RoundScores:
    """Elementwise context-candidate product through a tanh layer gated by a
    sigmoid layer, then reduced to one logit per candidate."""
    context, cand_matrix = dc.as_value(context), dc.as_value(cand_matrix)
    _check_widths(context, cand_matrix)
    fused = cand_matrix * (context if context.ndim == 1 else dc.reshape(context, (context.shape[0], 1, -1)))
    act = dc.tanh(dc.matmul(fused, gate_params["wg"]) + gate_params["bg"])
    gate = dc.sigmoid(dc.matmul(fused, gate_params["ws"]) + gate_params["bs"])
    logits = dc.matmul(act * gate, gate_params["w"])
    if "b" in gate_params:
        logits = logits + gate_params["b"]
    return RoundScores(logits, dc.log_softmax(logits, axis=-1))


def score_gated_scalar(context, cand_matrix, gate_params: Params) -> RoundScores:
    """Literal reading: a scalar affine map of the dot product, squashed by tanh."""
    context, cand_matrix = dc.as_value(context), dc.as_value(cand_matrix)
    _check_widths(context, cand_matrix)
    dot = _dot_logits(context, cand_matrix)
    logits = gate_params["w"] * dc.tanh(gate_params["a"] * dot + gate_params["b"])
    return RoundScores(logits, dc.log_softmax(logits, axis=-1))


def score(cfg: DecoderConfig, context, cand_matrix, params: Params) -> RoundScores:
    if cfg.variant == DOT:
        return score_dot(context, cand_matrix)
    if cfg.variant == GATED:
        return score_gated(context, cand_matrix, dc.scope(params, "gate."))
    return score_gated_scalar(context, cand_matrix, dc.scope(params, "gate."))


def round_loss(scores: RoundScores, gt_index) -> Value:
    """Negative log-probability of the ground truth; batch mean for ``B x N`` scores."""
    lp = scores.log_probs
    n = lp.shape[-1]
    gt = np.asarray(gt_index)
    if (gt < 0).any() or (gt >= n).any():
        raise ValidationError("gt-index", f"{gt_index} not in [0, {n})")
    if lp.ndim == 1:
        return -lp[int(gt)]
    picked = lp[np.arange(lp.shape[0]), gt]
    return dc.mean(-picked)
