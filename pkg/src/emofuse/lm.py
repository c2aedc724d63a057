"""Tiny decoder-only LM with LoRA on the attention query/value projections."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from . import tensor as T
from .tensor import ConfigError, ShapeError, Tensor


@dataclass
class LoRAConfig:
    r: int = 32
    alpha: float = 16.0
    seed: int = 0

    @property
    def scaling(self) -> float:
        return self.alpha / self.r


class LoRA(nn.Module):
    """Low-rank delta ``(alpha / r) * B A`` with ``A: [r, d_in]``, ``B: [d_out, r]``.

    ``B`` starts at zero so the delta is exactly zero until trained.
    """

    def __init__(self, rng, d_in: int, d_out: int, r: int, alpha: float):
        if r < 1 or r > min(d_in, d_out):
            raise ConfigError(f"LoRA rank {r} must lie in [1, min({d_in}, {d_out})]")
        self.A = nn.normal(rng, (r, d_in), d_in**-0.5)
        self.B = nn.zeros((d_out, r))
        self._scaling = alpha / r

    @property
    def scaling(self) -> float:
        return self._scaling

    def __call__(self, x: Tensor) -> Tensor:
        return T.matmul(T.matmul(x, T.transpose(self.A)), T.transpose(self.B)) * self._scaling

    def delta_weight(self) -> np.ndarray:
        """Delta in the ``x @ W`` orientation, shape ``[d_in, d_out]``, formed in float64.

        Forming the product in float32 adds rounding noise that lifts the
        numerical rank above ``r``.
        """
        B, A = self.B.data.astype(np.float64), self.A.data.astype(np.float64)
        return self._scaling * (B @ A).T


class LMBlock(nn.Module):
    def __init__(self, rng, dim: int, heads: int):
        self.heads = heads
        self.ln_attn = nn.LayerNorm(dim)
        self.q = nn.Linear(rng, dim, dim)
        self.k = nn.Linear(rng, dim, dim)
        self.v = nn.Linear(rng, dim, dim)
        self.o = nn.Linear(rng, dim, dim)
        self.ln_ffn = nn.LayerNorm(dim)
        self.ffn = nn.FeedForward(rng, dim, 4 * dim, dim)
        self.lora_q = None
        self.lora_v = None

    def __call__(self, x: Tensor, mask: np.ndarray) -> Tensor:
        h = self.ln_attn(x)
        q, v = self.q(h), self.v(h)
        if self.lora_q is not None:
            q = q + self.lora_q(h)
        if self.lora_v is not None:
            v = v + self.lora_v(h)
        a = T.scaled_dot_attention(q, self.k(h), v, self.heads, mask=mask)
        x = x + self.o(a)
        return x + self.ffn(self.ln_ffn(x))


class TinyLM(nn.Module):
    def __init__(self, rng, vocab: int = 512, dim: int = 64, layers: int = 2, heads: int = 4,
                 max_len: int = 512):
        self.vocab = vocab
        self.dim = dim
        self.max_len = max_len
        self.tok_emb = nn.normal(rng, (vocab, dim), 0.1)
        self.pos_emb = nn.normal(rng, (max_len, dim), 0.02)
        self.blocks = [LMBlock(rng, dim, heads) for _ in range(layers)]
        self.ln_f = nn.LayerNorm(dim)
        self.head = nn.Linear(rng, dim, vocab)

    def embed(self, ids) -> Tensor:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size == 0:
            raise ShapeError("cannot embed an empty token list")
        if ids.min() < 0 or ids.max() >= self.vocab:
            raise ValueError("token id outside the vocabulary")
        return T.getitem(self.tok_emb, ids)

    def hidden(self, x: Tensor) -> Tensor:
        L = x.shape[0]
        if L > self.max_len:
            raise ShapeError(f"sequence length {L} exceeds max_len {self.max_len}")
        if x.shape[1] != self.dim:
            raise ShapeError(f"embedding dim {x.shape[1]} != LM dim {self.dim}")
        h = x + self.pos_emb[:L]
        mask = np.tril(np.ones((L, L), dtype=bool))
        for blk in self.blocks:
            h = blk(h, mask)
        return self.ln_f(h)

    def logits(self, x: Tensor) -> Tensor:
        return self.head(self.hidden(x))

    def lora_modules(self) -> list:
        return [m for blk in self.blocks for m in (blk.lora_q, blk.lora_v) if m is not None]


def lora_attach(lm: TinyLM, cfg: LoRAConfig) -> list:
    """Attach fresh LoRA deltas to every block's query and value projections."""
    rng = np.random.default_rng([cfg.seed, 4242])
    for blk in lm.blocks:
        for name in ("q", "v"):
            if getattr(blk, name) is None:
                raise ConfigError(f"LoRA target projection '{name}' missing")
        blk.lora_q = LoRA(rng, lm.dim, lm.dim, cfg.r, cfg.alpha)
        blk.lora_v = LoRA(rng, lm.dim, lm.dim, cfg.r, cfg.alpha)
    return lm.lora_modules()


def lora_detach(lm: TinyLM) -> list:
    mods = []
    for blk in lm.blocks:
        mods.append((blk.lora_q, blk.lora_v))
        blk.lora_q = blk.lora_v = None
    return mods


def lora_reattach(lm: TinyLM, mods: list) -> None:
    for blk, (q, v) in zip(lm.blocks, mods):
        blk.lora_q, blk.lora_v = q, v


def lora_merge_check(lm: TinyLM, x: Tensor) -> bool:
    """True when attached and detached logits agree bitwise for input ``x``."""
    with T.no_grad():
        attached = lm.logits(x).data
        mods = lora_detach(lm)
        try:
            detached = lm.logits(x).data
        finally:
            lora_reattach(lm, mods)
    return bool(np.array_equal(attached, detached))


@dataclass
class AssembledSequence:
    embeddings: Tensor  # [L, D]
    token_ids: np.ndarray  # [L], -1 on modality positions
    loss_mask: np.ndarray  # [L] bool, True on supervised target positions
    prefix_len: int

    def __post_init__(self):
        L = self.embeddings.shape[0]
        if self.token_ids.shape != (L,) or self.loss_mask.shape != (L,):
            raise ShapeError("token ids / mask length must equal the sequence length")

    @property
    def length(self) -> int:
        return self.embeddings.shape[0]


def assemble(lm: TinyLM, blocks, prompt_tokens, target_tokens, supervise=None) -> AssembledSequence:
    """Concatenate modality token blocks, prompt and target embeddings.

    ``supervise`` optionally gives a per-target-token boolean mask; by default
    every target token is supervised.
    """
    target_tokens = list(target_tokens)
    prompt_tokens = list(prompt_tokens)
    if not target_tokens:
        raise ValueError("empty target: nothing to supervise")
    parts = []
    for b in blocks:
        if b.tokens.shape[1] != lm.dim:
            raise ShapeError(f"{b.stream_tag} tokens have dim {b.tokens.shape[1]}, LM expects {lm.dim}")
        parts.append(b.tokens)
    prefix = sum(p.shape[0] for p in parts)
    text = prompt_tokens + target_tokens
    parts.append(lm.embed(text))
    emb = T.concat(parts, axis=0)
    ids = np.concatenate([np.full(prefix, -1, dtype=np.int64), np.asarray(text, dtype=np.int64)])
    mask = np.zeros(ids.shape[0], dtype=bool)
    tmask = np.ones(len(target_tokens), dtype=bool) if supervise is None else np.asarray(supervise, bool)
    mask[prefix + len(prompt_tokens):] = tmask
    return AssembledSequence(emb, ids, mask, prefix)


def mle_loss(lm: TinyLM, seq: AssembledSequence) -> Tensor:
    """Mean next-token negative log-likelihood over supervised positions (nats)."""
    pos = np.nonzero(seq.loss_mask)[0]
    if pos.size == 0:
        raise ValueError("every position is masked; nothing to supervise")
    if pos[0] == 0:
        raise ValueError("position 0 cannot be supervised (no context)")
    h = lm.hidden(seq.embeddings)
    logits = lm.head(T.getitem(h, pos - 1))
    return T.cross_entropy(logits, seq.token_ids[pos])


def generate(lm: TinyLM, prefix: Tensor, max_tokens: int, eos_id: int, mode: str = "greedy") -> list:
    """Greedy decoding; ties go to the lowest id.  The end token is included when emitted."""
    if mode != "greedy":
        raise ValueError(f"unsupported decoding mode {mode!r}")
    if max_tokens <= 0:
        raise ValueError("max_tokens must be positive")
    out: list = []
    with T.no_grad():
        x = prefix.data
        for _ in range(max_tokens):
            if x.shape[0] >= lm.max_len:
                break
            h = lm.hidden(Tensor(x))
            last = lm.head(h[h.shape[0] - 1:]).data[0]
            tok = int(np.argmax(last))
            out.append(tok)
            if tok == eos_id:
                break
            x = np.concatenate([x, lm.tok_emb.data[tok][None, :]], axis=0)
    return out


def next_token_logits(lm: TinyLM, prefix: Tensor) -> np.ndarray:
    with T.no_grad():
        h = lm.hidden(Tensor(prefix.data))
        return lm.head(h[h.shape[0] - 1:]).data[0]
