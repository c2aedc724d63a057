"""Run configuration: nested dataclasses loaded from a YAML key-value tree."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .tensor import ConfigError

TASKS = ("MER", "OV_MER", "MIR", "ERI", "ERG")
DEFAULT_MIXTURE = {"MER": 18, "OV_MER": 28, "MIR": 5, "ERI": 31, "ERG": 18}


@dataclass
class RunSection:
    seed: int = 0
    out_dir: str = "runs/default"
    precision: str = "float32"


@dataclass
class DataSection:
    frames: int = 8
    height: int = 8
    width: int = 8
    audio_steps: int = 20
    audio_dim: int = 16
    snr: float = 2.0
    signal_seed: int = 1234


@dataclass
class EncoderSection:
    depth: int = 24
    dim: int = 64
    visual_taps: list = field(default_factory=lambda: [12, 16, 22])
    speech_taps: list = field(default_factory=lambda: [16, 18, 22])
    face_taps: list = field(default_factory=lambda: [6, 12, 18, 24])
    face_block_dims: list = field(default_factory=lambda: [16, 32, 48, 64])
    face_dim: int = 64
    seed: int = 7


@dataclass
class TokensSection:
    visual: int = 32
    speech: int = 32
    face: int = 4
    fusion: int = 1


@dataclass
class QFormerSection:
    heads: int = 4
    layers: int = 2
    dim: int = 64


@dataclass
class FusionSection:
    mode: str = "experts_gated"
    experts: int = 3
    pairing: str = "sequential"
    heads: int = 4
    gate_hidden: int = 64


@dataclass
class LMSection:
    dim: int = 64
    layers: int = 2
    heads: int = 4
    vocab: int = 512
    max_len: int = 512
    seed: int = 11
    pretrain_steps: int = 600
    pretrain_lr: float = 3e-3
    pretrain_batch: int = 8
    supervise_think: bool = True


@dataclass
class LoRASection:
    r: int = 32
    alpha: float = 16.0


@dataclass
class CurriculumSection:
    mode: str = "standard"
    scale: int = 1
    lr_scale: float = 1.0
    batch_size: int = 3
    grad_accum: int = 4
    train_qformers: bool = True
    interleave_phase1: bool = False
    mixture: dict = field(default_factory=lambda: dict(DEFAULT_MIXTURE))
    phases: dict = field(default_factory=dict)
    overfit_samples: int = 32
    overfit_max_steps: int = 0
    overfit_target: float = 0.1


@dataclass
class OptimSection:
    betas: list = field(default_factory=lambda: [0.9, 0.999])
    eps: float = 1e-8
    weight_decay: float = 0.01


@dataclass
class EvalSection:
    tasks: list = field(default_factory=lambda: ["MER", "OV_MER", "MIR", "ERI", "ERG"])
    samples_per_task: int = 28
    seed: int = 99
    max_new_tokens: int = 32


@dataclass
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    data: DataSection = field(default_factory=DataSection)
    encoder: EncoderSection = field(default_factory=EncoderSection)
    tokens: TokensSection = field(default_factory=TokensSection)
    qformer: QFormerSection = field(default_factory=QFormerSection)
    fusion: FusionSection = field(default_factory=FusionSection)
    lm: LMSection = field(default_factory=LMSection)
    lora: LoRASection = field(default_factory=LoRASection)
    curriculum: CurriculumSection = field(default_factory=CurriculumSection)
    optim: OptimSection = field(default_factory=OptimSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def validate(self) -> "RunConfig":
        enc, fus = self.encoder, self.fusion
        for name, taps in (("visual_taps", enc.visual_taps), ("speech_taps", enc.speech_taps)):
            bad = [t for t in taps if not 1 <= t <= enc.depth]
            if bad:
                raise ConfigError(f"encoder.{name} {bad} outside encoder depth {enc.depth}")
        if len(enc.face_taps) != len(enc.face_block_dims):
            raise ConfigError("encoder.face_taps and encoder.face_block_dims differ in length")
        if any(not 1 <= t <= enc.depth for t in enc.face_taps):
            raise ConfigError(f"encoder.face_taps {enc.face_taps} outside depth {enc.depth}")
        if fus.mode not in ("experts_gated", "none", "attention_fusion", "average_weighting"):
            raise ConfigError(f"unknown fusion.mode '{fus.mode}'")
        if fus.pairing not in ("sequential", "cross_layer"):
            raise ConfigError(f"unknown fusion.pairing '{fus.pairing}'")
        if fus.experts != len(enc.speech_taps) or fus.experts != len(enc.visual_taps):
            raise ConfigError(
                f"fusion.experts={fus.experts} needs that many speech/visual taps "
                f"(got {len(enc.speech_taps)}/{len(enc.visual_taps)})")
        if self.tokens.fusion != 1:
            raise ConfigError("tokens.fusion must be 1 (the fusion stream is mean-pooled)")
        if self.lora.r > self.lm.dim:
            raise ConfigError(f"lora.r={self.lora.r} exceeds lm.dim={self.lm.dim}")
        cur = self.curriculum
        if cur.mode not in ("standard", "reverse_p2e", "joint_training"):
            raise ConfigError(f"unknown curriculum.mode '{cur.mode}'")
        if cur.scale < 1:
            raise ConfigError(f"curriculum.scale must be >= 1, got {cur.scale}")
        if cur.lr_scale <= 0:
            raise ConfigError("curriculum.lr_scale must be positive")
        if cur.batch_size < 1 or cur.grad_accum < 1:
            raise ConfigError("batch_size and grad_accum must be >= 1")
        unknown = set(cur.mixture) - set(TASKS)
        if unknown:
            raise ConfigError(f"unknown tasks in curriculum.mixture: {sorted(unknown)}")
        for pid, over in cur.phases.items():
            if str(pid) not in ("1a", "1b", "2", "3", "joint"):
                raise ConfigError(f"unknown phase override '{pid}'")
            extra = set(over) - {"lr", "steps"}
            if extra:
                raise ConfigError(f"unknown keys in phase override '{pid}': {sorted(extra)}")
        if self.run.precision not in ("float32", "float64"):
            raise ConfigError(f"run.precision must be float32 or float64, got {self.run.precision}")
        bad_tasks = set(self.eval.tasks) - set(TASKS) - {"MSA"}
        if bad_tasks:
            raise ConfigError(f"unknown eval tasks {sorted(bad_tasks)}")
        return self


def _build(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"section '{path}' must be a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"unknown config keys under '{path or '<root>'}': {unknown}")
    kwargs = {}
    for name, value in data.items():
        f = fields[name]
        default = f.default_factory() if f.default_factory is not dataclasses.MISSING else f.default
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value or {}, f"{path}.{name}".lstrip("."))
        else:
            kwargs[name] = _coerce(value, default, f"{path}.{name}".lstrip("."))
    return cls(**kwargs)


def _coerce(value, default, key):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key} expects a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key} expects an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} expects a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{key} expects a string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{key} expects a list, got {value!r}")
        return value
    if isinstance(default, dict):
        if not isinstance(value, dict):
            raise ConfigError(f"{key} expects a mapping, got {value!r}")
        return {str(k): v for k, v in value.items()}
    return value


def from_dict(data: dict | None) -> RunConfig:
    return _build(RunConfig, data or {}, "").validate()


def load(path) -> RunConfig:
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return from_dict(data)


def dump(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False, allow_unicode=True)


def override(cfg: RunConfig, **dotted: Any) -> RunConfig:
    """Return a copy with ``section__key=value`` style overrides applied."""
    data = cfg.to_dict()
    for key, value in dotted.items():
        section, name = key.split("__", 1)
        if section not in data or name not in data[section]:
            raise ConfigError(f"unknown config key {section}.{name}")
        data[section][name] = value
    return from_dict(data)
