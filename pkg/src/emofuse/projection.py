"""Resampling and alignment into the LM embedding space."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from . import tensor as T
from .encoders import FeatureStack
from .tensor import ShapeError, Tensor

TOKEN_STREAMS = ("visual", "speech", "face", "fusion")


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ShapeError(f"expected a non-empty [L, D] feature sequence, got shape {arr.shape}")
    return Tensor(arr)


class Attention(nn.Module):
    """Query/key/value projections around the shared attention kernel."""

    def __init__(self, rng, d_query: int, d_context: int, dim: int, heads: int, out_proj: bool = True):
        if dim % heads:
            raise T.ConfigError(f"attention dim {dim} not divisible by heads={heads}")
        self.heads = heads
        self.q = nn.Linear(rng, d_query, dim)
        self.k = nn.Linear(rng, d_context, dim)
        self.v = nn.Linear(rng, d_context, dim)
        self.o = nn.Linear(rng, dim, dim) if out_proj else None

    def __call__(self, x: Tensor, context: Tensor, return_weights: bool = False):
        out, w = T.scaled_dot_attention(self.q(x), self.k(context), self.v(context),
                                        self.heads, return_weights=True)
        if self.o is not None:
            out = self.o(out)
        return (out, w) if return_weights else out


class QFormerLayer(nn.Module):
    """Pre-norm: query self-attention, cross-attention to features, FFN."""

    def __init__(self, rng, dim: int, d_features: int, heads: int):
        self.ln_self = nn.LayerNorm(dim)
        self.self_attn = Attention(rng, dim, dim, dim, heads)
        self.ln_cross = nn.LayerNorm(dim)
        self.cross_attn = Attention(rng, dim, d_features, dim, heads)
        self.ln_ffn = nn.LayerNorm(dim)
        self.ffn = nn.FeedForward(rng, dim, 2 * dim, dim)

    def __call__(self, q: Tensor, feats: Tensor):
        h = self.ln_self(q)
        q = q + self.self_attn(h, h)
        c, w = self.cross_attn(self.ln_cross(q), feats, return_weights=True)
        q = q + c
        q = q + self.ffn(self.ln_ffn(q))
        return q, w


class QFormerBlock(nn.Module):
    """Learnable queries refined by ``layers`` Q-Former layers."""

    def __init__(self, rng, num_queries: int, dim: int, d_features: int, heads: int, layers: int = 2):
        self.queries = nn.normal(rng, (num_queries, dim), 0.02)
        self.layers = [QFormerLayer(rng, dim, d_features, heads) for _ in range(layers)]

    @property
    def num_queries(self) -> int:
        return self.queries.shape[0]

    def __call__(self, features, return_weights: bool = False):
        feats = _as_tensor(features)
        q = self.queries
        weights = []
        for layer in self.layers:
            q, w = layer(q, feats)
            weights.append(w)
        return (q, weights) if return_weights else q


def qformer_resample(block: QFormerBlock, features) -> Tensor:
    return block(features)


class TemporalQueries(nn.Module):
    """Learnable temporal queries cross-attending over per-frame face features.

    ``out = CrossAttention(Q, E_f W_k, E_f W_v)``: the queries are used as-is
    and heads are concatenated without an output projection.
    """

    def __init__(self, rng, num_queries: int, dim: int, heads: int):
        if dim % heads:
            raise T.ConfigError(f"face dim {dim} not divisible by heads={heads}")
        self.heads = heads
        self.queries = nn.normal(rng, (num_queries, dim), 0.02)
        self.key = nn.Linear(rng, dim, dim)
        self.value = nn.Linear(rng, dim, dim)

    def __call__(self, e_f, return_weights: bool = False):
        e_f = _as_tensor(e_f)
        return T.scaled_dot_attention(self.queries, self.key(e_f), self.value(e_f), self.heads,
                                      return_weights=return_weights)


def temporal_modeling(tm: TemporalQueries, e_f) -> Tensor:
    return tm(e_f)


class Adapter(nn.Module):
    """``W2 gelu(W1 x + b1) + b2`` into the LM dimension."""

    def __init__(self, rng, d_in: int, d_out: int, hidden: int | None = None):
        self.input_dim = d_in
        self.output_dim = d_out
        self.fc1 = nn.Linear(rng, d_in, hidden or d_out)
        self.fc2 = nn.Linear(rng, hidden or d_out, d_out)

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.input_dim:
            raise ShapeError(f"adapter expects input dim {self.input_dim}, got {x.shape[-1]}")
        return self.fc2(T.gelu(self.fc1(x)))


def adapt(adapter: Adapter, x: Tensor) -> Tensor:
    return adapter(x)


@dataclass
class TokenBlock:
    tokens: Tensor
    stream_tag: str

    def __post_init__(self):
        if self.stream_tag not in TOKEN_STREAMS:
            raise ValueError(f"unknown token stream {self.stream_tag!r}")

    @property
    def length(self) -> int:
        return self.tokens.shape[0]


class Projector(nn.Module):
    """All four modality branches from encoder stacks to LM-space token blocks."""

    def __init__(self, rng_seed, cfg):
        rng = lambda i: np.random.default_rng([rng_seed, i])  # noqa: E731
        qf, tok, d_lm = cfg.qformer, cfg.tokens, cfg.lm.dim
        self.visual_qformer = QFormerBlock(rng(0), tok.visual, qf.dim, cfg.encoder.dim, qf.heads, qf.layers)
        self.visual_adapter = Adapter(rng(1), qf.dim, d_lm)
        self.speech_qformer = QFormerBlock(rng(2), tok.speech, qf.dim, cfg.encoder.dim, qf.heads, qf.layers)
        self.speech_adapter = Adapter(rng(3), qf.dim, d_lm)
        self.face_tm = TemporalQueries(rng(4), tok.face, cfg.encoder.face_dim, qf.heads)
        self.face_adapter = Adapter(rng(5), cfg.encoder.face_dim, d_lm)
        self.fusion_adapter = Adapter(rng(6), cfg.encoder.dim, d_lm)

    def __call__(self, visual: FeatureStack | None, speech: FeatureStack | None,
                 face: FeatureStack | None, fusion_embedding: Tensor | None,
                 use_fusion: bool = True) -> list:
        return project_all(self, visual, speech, face, fusion_embedding, use_fusion)


def project_all(proj: Projector, visual, speech, face, fusion_embedding, use_fusion: bool = True) -> list:
    """Token blocks in stream order visual, speech, face[, fusion]."""
    given = {"visual": visual, "speech": speech, "face": face}
    if use_fusion:
        given["fusion"] = fusion_embedding
    absent = [k for k, v in given.items() if v is None]
    if absent:
        raise ValueError(f"missing modality streams: {absent}")
    blocks = [
        TokenBlock(proj.visual_adapter(proj.visual_qformer(visual.final)), "visual"),
        TokenBlock(proj.speech_adapter(proj.speech_qformer(speech.final)), "speech"),
        TokenBlock(proj.face_adapter(proj.face_tm(face.final)), "face"),
    ]
    if use_fusion:
        pooled = T.mean(proj.fusion_adapter(fusion_embedding), axis=0, keepdims=True)
        blocks.append(TokenBlock(pooled, "fusion"))
    return blocks


def token_blocks_to_arrays(blocks) -> dict:
    return {f"token_block/{b.stream_tag}": b.tokens.data for b in blocks}


def token_blocks_from_arrays(arrays: dict) -> list:
    out = []
    for name, arr in arrays.items():
        prefix, _, tag = name.partition("/")
        if prefix == "token_block":
            out.append(TokenBlock(Tensor(arr), tag))
    return out
