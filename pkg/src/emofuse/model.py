"""Full multimodal model: frozen encoders, projection, fusion and the LM."""

from __future__ import annotations

import numpy as np

from . import nn
from . import tensor as T
from .config import RunConfig
from .encoders import Encoders
from .fusion import FusionEncoder
from .lm import AssembledSequence, LoRAConfig, TinyLM, assemble, lora_attach, mle_loss
from .projection import Projector
from .tasks import THINK_CLOSE, TaskSample, build_tokenizer
from .tensor import Tensor

TRAINABLE_GROUPS = ("visual_qformer", "visual_adapter", "speech_qformer", "speech_adapter",
                    "face_adapter", "fusion_encoder", "fusion_adapter", "lora")
FROZEN_GROUPS = ("encoders", "lm_base")
ALL_GROUPS = TRAINABLE_GROUPS + FROZEN_GROUPS


def param_group(name: str) -> str:
    if name.startswith("encoders."):
        return "encoders"
    if name.startswith("lm."):
        return "lora" if ".lora_" in name else "lm_base"
    if name.startswith("fusion."):
        return "fusion_encoder"
    if name.startswith("projector."):
        part = name.split(".")[1]
        if part in ("face_tm", "face_adapter"):
            return "face_adapter"
        return part
    raise KeyError(f"parameter '{name}' belongs to no group")


class EmoModel(nn.Module):
    def __init__(self, cfg: RunConfig, tokenizer=None):
        self._cfg = cfg
        self._dtype = np.float64 if cfg.run.precision == "float64" else np.float32
        seed = cfg.run.seed
        with T.default_dtype(self._dtype):
            self.encoders = Encoders(cfg.encoder, cfg.data)
            self.projector = Projector(seed * 1000 + 1, cfg)
            self.fusion = FusionEncoder(seed * 1000 + 2, cfg)
            self.lm = TinyLM(np.random.default_rng([cfg.lm.seed, 3]), cfg.lm.vocab, cfg.lm.dim,
                             cfg.lm.layers, cfg.lm.heads, cfg.lm.max_len)
            lora_attach(self.lm, LoRAConfig(cfg.lora.r, cfg.lora.alpha, seed * 1000 + 4))
        self._tok = tokenizer or build_tokenizer(cfg.lm.vocab)
        self.set_trainable_groups(())

    @property
    def cfg(self) -> RunConfig:
        return self._cfg

    @property
    def tokenizer(self):
        return self._tok

    @property
    def use_fusion(self) -> bool:
        return self.fusion.variant.emits_token

    # -- parameter groups ----------------------------------------------
    def grouped_parameters(self) -> dict:
        groups = {g: {} for g in ALL_GROUPS}
        for name, p in self.named_parameters().items():
            groups[param_group(name)][name] = p
        return groups

    def set_trainable_groups(self, groups) -> None:
        groups = set(groups)
        bad = groups - set(TRAINABLE_GROUPS)
        if bad:
            raise ValueError(f"cannot train groups {sorted(bad)}")
        for name, p in self.named_parameters().items():
            p.requires_grad = param_group(name) in groups

    # -- forward ---------------------------------------------------------
    def encode(self, sample: TaskSample) -> tuple:
        enc = self.encoders
        video = sample.video
        if video.frames.dtype != self._dtype:
            video = type(video)(video.frames.astype(self._dtype))
        return (enc.encode_visual(video), enc.encode_speech(type(sample.audio)(sample.audio.features.astype(self._dtype))),
                enc.encode_face(video))

    def prefix_blocks(self, sample: TaskSample, stacks=None, return_gates: bool = False):
        vis, sp, face = stacks if stacks is not None else self.encode(sample)
        fused, gates = None, None
        if self.use_fusion:
            fused, gates = self.fusion(sp, vis)
        blocks = self.projector(vis, sp, face, fused, self.use_fusion)
        return (blocks, gates) if return_gates else blocks

    def text_ids(self, sample: TaskSample) -> tuple:
        tok = self._tok
        prompt = tok.encode(sample.prompt)
        target = tok.encode(sample.target) + [tok.eos_id]
        supervise = None
        if sample.task == "ERG" and not self._cfg.lm.supervise_think:
            words = sample.target.split()
            cut = words.index(THINK_CLOSE) + 1
            n_think = len(tok.encode(" ".join(words[:cut])))
            supervise = [False] * n_think + [True] * (len(target) - n_think)
        return prompt, target, supervise

    def sequence(self, sample: TaskSample, stacks=None) -> AssembledSequence:
        prompt, target, supervise = self.text_ids(sample)
        return assemble(self.lm, self.prefix_blocks(sample, stacks), prompt, target, supervise)

    def loss(self, sample: TaskSample, stacks=None) -> Tensor:
        return mle_loss(self.lm, self.sequence(sample, stacks))

    def prompt_prefix(self, sample: TaskSample, stacks=None) -> Tensor:
        """Modality tokens plus prompt embeddings, the conditioning context for decoding."""
        blocks = self.prefix_blocks(sample, stacks)
        prompt = self._tok.encode(sample.prompt)
        return T.concat([b.tokens for b in blocks] + [self.lm.embed(prompt)], axis=0)

    @property
    def prefix_length(self) -> int:
        tok = self._cfg.tokens
        return tok.visual + tok.speech + tok.face + (tok.fusion if self.use_fusion else 0)
