"""Hierarchical speech-to-visual fusion experts with a dense gate."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from . import tensor as T
from .encoders import FeatureStack
from .tensor import ConfigError, ShapeError, Tensor

FUSION_MODES = ("experts_gated", "none", "attention_fusion", "average_weighting")


class FusionExpert(nn.Module):
    """Speech features query visual features.

    ``E_m = CrossAttention(E_s^Q, E_v^K, E_v^V) + E_s^Q`` followed by
    ``E_mf = FFN(E_m) + E_m``.  The query projection also equalises the
    speech and visual widths.
    """

    def __init__(self, rng, d_speech: int, d_visual: int, dim: int, heads: int, index: int = 1):
        self.expert_index = index
        self.heads = heads
        self.query = nn.Linear(rng, d_speech, dim)
        self.key = nn.Linear(rng, d_visual, dim)
        self.value = nn.Linear(rng, d_visual, dim)
        self.out = nn.Linear(rng, dim, dim)
        self.ffn = nn.FeedForward(rng, dim, 2 * dim, dim)

    def __call__(self, speech: Tensor, visual: Tensor, return_weights: bool = False):
        if speech.shape[-1] != self.query.d_in or visual.shape[-1] != self.key.d_in:
            raise ShapeError(
                f"expert {self.expert_index}: speech {speech.shape} / visual {visual.shape} "
                f"do not match projections ({self.query.d_in}, {self.key.d_in})")
        e_sq = self.query(speech)
        att, w = T.scaled_dot_attention(e_sq, self.key(visual), self.value(visual), self.heads,
                                        return_weights=True)
        e_m = self.out(att) + e_sq
        e_mf = self.ffn(e_m) + e_m
        return (e_mf, w) if return_weights else e_mf


def expert_forward(expert: FusionExpert, speech_feat: Tensor, visual_feat: Tensor) -> Tensor:
    return expert(speech_feat, visual_feat)


class GatingNetwork(nn.Module):
    """``softmax(fc2(gelu(fc1(concat(E_1..E_n)))))`` per token position.

    The last layer starts at zero, so a fresh gate weighs experts uniformly.
    """

    def __init__(self, rng, n_experts: int, dim: int, hidden: int):
        self.n_experts = n_experts
        self.fc1 = nn.Linear(rng, n_experts * dim, hidden)
        self.fc2 = nn.Linear(rng, hidden, n_experts, zero=True)

    def weights(self, outputs) -> Tensor:
        return T.softmax(self.fc2(T.gelu(self.fc1(T.concat(outputs, axis=-1)))), axis=-1)


def mix(weights: Tensor, outputs) -> Tensor:
    """``sum_i weights[:, i] * outputs[i]`` with per-position scalar weights."""
    fused = None
    for i, e in enumerate(outputs):
        term = weights[:, i:i + 1] * e
        fused = term if fused is None else fused + term
    return fused


def gate_and_fuse(gate: GatingNetwork, outputs, fixed_weights: bool = False):
    outputs = list(outputs)
    shapes = {o.shape for o in outputs}
    if len(shapes) != 1:
        raise ShapeError(f"expert outputs disagree in shape: {sorted(shapes)}")
    if len(outputs) != gate.n_experts:
        raise ShapeError(f"gate expects {gate.n_experts} experts, got {len(outputs)}")
    if fixed_weights:
        n = len(outputs)
        w = Tensor(np.full((outputs[0].shape[0], n), 1.0 / n, dtype=outputs[0].dtype))
    else:
        w = gate.weights(outputs)
    return mix(w, outputs), w


@dataclass
class LayerPairing:
    pairs: list  # [(speech_layer, visual_layer), ...]
    mode: str = "sequential"

    @classmethod
    def from_taps(cls, speech_taps, visual_taps, mode: str = "sequential") -> "LayerPairing":
        if len(speech_taps) != len(visual_taps):
            raise ConfigError("speech and visual tap lists differ in length")
        if mode == "sequential":
            pairs = list(zip(speech_taps, visual_taps))
        elif mode == "cross_layer":
            pairs = list(zip(speech_taps, reversed(list(visual_taps))))
        else:
            raise ConfigError(f"unknown pairing mode {mode!r}")
        return cls([(int(s), int(v)) for s, v in pairs], mode)


@dataclass(frozen=True)
class FusionVariant:
    mode: str
    uses_gate: bool
    fixed_weights: bool
    single_expert: bool
    emits_token: bool


def fusion_variant(mode: str) -> FusionVariant:
    if mode == "experts_gated":
        return FusionVariant(mode, True, False, False, True)
    if mode == "average_weighting":
        return FusionVariant(mode, False, True, False, True)
    if mode == "attention_fusion":
        return FusionVariant(mode, False, False, True, True)
    if mode == "none":
        return FusionVariant(mode, False, False, False, False)
    raise ConfigError(f"unknown fusion mode {mode!r}; expected one of {FUSION_MODES}")


class FusionEncoder(nn.Module):
    def __init__(self, rng_seed, cfg):
        fc = cfg.fusion
        self.variant = fusion_variant(fc.mode)
        self.pairing = LayerPairing.from_taps(cfg.encoder.speech_taps, cfg.encoder.visual_taps, fc.pairing)
        if len(self.pairing.pairs) != fc.experts:
            raise ConfigError(f"{fc.experts} experts but {len(self.pairing.pairs)} layer pairs")
        d = cfg.encoder.dim
        self.experts = [FusionExpert(np.random.default_rng([rng_seed, i]), d, d, d, fc.heads, i + 1)
                        for i in range(fc.experts)]
        self.gate = GatingNetwork(np.random.default_rng([rng_seed, 100]), fc.experts, d, fc.gate_hidden)

    def __call__(self, speech_stack: FeatureStack, visual_stack: FeatureStack):
        return fusion_forward(self, speech_stack, visual_stack)


def fusion_forward(enc: FusionEncoder, speech_stack: FeatureStack, visual_stack: FeatureStack):
    """Returns ``(E_mf, gate_weights)``; weights are ``None`` for the single-expert variant."""
    v = enc.variant
    if not v.emits_token:
        raise ConfigError("fusion mode 'none' has no fusion forward")
    pairs = enc.pairing.pairs
    if v.single_expert:
        s, vis = pairs[-1]
        return enc.experts[-1](speech_stack.layer(s), visual_stack.layer(vis)), None
    outputs = [expert(speech_stack.layer(s), visual_stack.layer(vis))
               for expert, (s, vis) in zip(enc.experts, pairs)]
    return gate_and_fuse(enc.gate, outputs, fixed_weights=v.fixed_weights)
