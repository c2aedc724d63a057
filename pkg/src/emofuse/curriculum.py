"""Phased freeze/unfreeze training schedule, its ablations and the step trace."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .config import DEFAULT_MIXTURE, RunConfig
from .model import TRAINABLE_GROUPS
from .optim import AdamState, adamw_step
from .tasks import Mixture, TASK_SOURCES, sample_task
from .tensor import ConfigError

PHASE_STEPS = {"1a": 25000, "1b": 15000, "2": 5000, "3": 300000}
PHASE_LRS = {"1a": 3e-4, "1b": 3e-4, "2": 1e-5, "3": 8e-6}
JOINT_STEPS = 345000
JOINT_LR = 8e-6
MODES = ("standard", "reverse_p2e", "joint_training")

PHASE_SOURCES = {
    "1a": {"MER": ("FERV39K", "CAER")},
    "1b": {"MER": ("CREMA-D", "M3ED")},
    "2": {"MIR": TASK_SOURCES["MIR"]},
}


@dataclass(frozen=True)
class PhaseConfig:
    phase_id: str
    trainable_groups: tuple
    lr: float
    step_budget: int
    mixture: Mixture
    task_sources: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"phase {self.phase_id}: lr must be positive")
        if self.step_budget < 1:
            raise ConfigError(f"phase {self.phase_id}: step budget must be >= 1")
        bad = set(self.trainable_groups) - set(TRAINABLE_GROUPS)
        if bad:
            raise ConfigError(f"phase {self.phase_id}: unknown groups {sorted(bad)}")

    def sources(self, task: str) -> tuple:
        return self.task_sources.get(task, TASK_SOURCES[task])


def scaled(steps: int, scale: int) -> int:
    if scale < 1:
        raise ConfigError(f"scale must be >= 1, got {scale}")
    return -(-steps // scale)


def phase_groups(phase_id: str, train_qformers: bool = True) -> tuple:
    vis = ("visual_qformer",) if train_qformers else ()
    sp = ("speech_qformer",) if train_qformers else ()
    if phase_id == "1a":
        return vis + ("visual_adapter", "face_adapter")
    if phase_id == "1b":
        return sp + ("speech_adapter",)
    adapters = vis + ("visual_adapter", "face_adapter") + sp + ("speech_adapter",)
    if phase_id == "2":
        return adapters + ("fusion_encoder", "fusion_adapter")
    if phase_id in ("3", "joint"):
        return adapters + ("fusion_encoder", "fusion_adapter", "lora")
    raise ConfigError(f"unknown phase '{phase_id}'")


def _phase(pid: str, scale: int, lr_scale: float, mixture: Mixture, train_qformers: bool,
           overrides: dict) -> PhaseConfig:
    over = overrides.get(pid, {})
    base_steps = JOINT_STEPS if pid == "joint" else PHASE_STEPS[pid]
    base_lr = JOINT_LR if pid == "joint" else PHASE_LRS[pid]
    steps = int(over["steps"]) if "steps" in over else scaled(base_steps, scale)
    lr = float(over.get("lr", base_lr)) * lr_scale
    if pid == "1a" or pid == "1b":
        mix = Mixture({"MER": 1})
    elif pid == "2":
        mix = Mixture({"MIR": 1})
    else:
        mix = mixture
    return PhaseConfig(pid, phase_groups(pid, train_qformers), lr, steps, mix, PHASE_SOURCES.get(pid, {}))


def build_default_schedule(scale: int = 1, lr_scale: float = 1.0, mixture=None,
                           train_qformers: bool = True, overrides=None) -> list:
    """Phases 1a, 1b, 2, 3 with step budgets divided by ``scale`` (ceiling)."""
    scaled(1, scale)
    mixture = mixture if isinstance(mixture, Mixture) else Mixture(dict(mixture or DEFAULT_MIXTURE))
    return [_phase(pid, scale, lr_scale, mixture, train_qformers, overrides or {})
            for pid in ("1a", "1b", "2", "3")]


def ablation_mode(mode: str, scale: int = 1, lr_scale: float = 1.0, mixture=None,
                  train_qformers: bool = True, overrides=None) -> list:
    if mode not in MODES:
        raise ConfigError(f"unknown curriculum mode {mode!r}; expected one of {MODES}")
    if mode == "joint_training":
        scaled(1, scale)
        mixture = mixture if isinstance(mixture, Mixture) else Mixture(dict(mixture or DEFAULT_MIXTURE))
        return [_phase("joint", scale, lr_scale, mixture, train_qformers, overrides or {})]
    phases = build_default_schedule(scale, lr_scale, mixture, train_qformers, overrides)
    return phases[::-1] if mode == "reverse_p2e" else phases


def schedule_from_config(cfg: RunConfig) -> list:
    cur = cfg.curriculum
    return ablation_mode(cur.mode, cur.scale, cur.lr_scale, cur.mixture, cur.train_qformers, cur.phases)


# -- state machine ------------------------------------------------------------

@dataclass
class TraceRecord:
    global_step: int
    phase: str
    lr: float
    groups: tuple
    tasks: tuple

    def to_json(self) -> str:
        return json.dumps({"global_step": self.global_step, "phase": self.phase, "lr": self.lr,
                           "trainable_groups": list(self.groups), "sampled_tasks": list(self.tasks)},
                          sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "TraceRecord":
        d = json.loads(line)
        return cls(d["global_step"], d["phase"], d["lr"], tuple(d["trainable_groups"]),
                   tuple(d["sampled_tasks"]))


@dataclass
class ScheduleTrace:
    records: list = field(default_factory=list)

    def append(self, rec: TraceRecord) -> None:
        self.records.append(rec)

    def phase_order(self) -> list:
        out = []
        for r in self.records:
            if not out or out[-1] != r.phase:
                out.append(r.phase)
        return out

    def phase_lengths(self) -> dict:
        counts: dict = {}
        for r in self.records:
            counts[r.phase] = counts.get(r.phase, 0) + 1
        return counts

    def dumps(self) -> str:
        return "".join(r.to_json() + "\n" for r in self.records)

    def write(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def read(cls, path) -> "ScheduleTrace":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls([TraceRecord.from_json(x) for x in lines if x.strip()])


def step_plan(phases: list, interleave_phase1: bool = False) -> list:
    """Phase index for every optimizer step.

    With ``interleave_phase1`` the two phase-1 branches alternate step by
    step until one runs out, then the other finishes.
    """
    plan = []
    i = 0
    while i < len(phases):
        ids = [p.phase_id for p in phases[i:i + 2]]
        if interleave_phase1 and sorted(ids) == ["1a", "1b"]:
            left = [phases[i].step_budget, phases[i + 1].step_budget]
            while left[0] or left[1]:
                for k in (0, 1):
                    if left[k]:
                        plan.append(i + k)
                        left[k] -= 1
            i += 2
        else:
            plan.extend([i] * phases[i].step_budget)
            i += 1
    return plan


def _stage(pid: str, interleave: bool) -> str:
    return "1" if interleave and pid in ("1a", "1b") else pid


@dataclass
class CurriculumState:
    phases: list
    plan: list
    task_rng: np.random.Generator
    micro_batch: int
    interleave: bool = False
    global_step: int = 0
    optimizer: dict = field(default_factory=dict)
    _active: frozenset = frozenset()
    _stage: str | None = None

    @property
    def done(self) -> bool:
        return self.global_step >= len(self.plan)

    @property
    def total_steps(self) -> int:
        return len(self.plan)

    @property
    def phase(self) -> PhaseConfig:
        if self.done:
            raise RuntimeError("curriculum already complete")
        return self.phases[self.plan[self.global_step]]

    @property
    def phase_step(self) -> int:
        idx = self.plan[self.global_step]
        return sum(1 for j in self.plan[:self.global_step] if j == idx)


def init_state(phases: list, seed: int, samples_per_step: int = 12,
               interleave_phase1: bool = False) -> CurriculumState:
    if not phases:
        raise ConfigError("empty schedule")
    return CurriculumState(list(phases), step_plan(phases, interleave_phase1),
                           np.random.default_rng([seed, 101]), samples_per_step, interleave_phase1)


def state_from_config(cfg: RunConfig) -> CurriculumState:
    cur = cfg.curriculum
    return init_state(schedule_from_config(cfg), cfg.run.seed, cur.batch_size * cur.grad_accum,
                      cur.interleave_phase1)


def advance(state: CurriculumState) -> tuple:
    """Move one optimizer step forward.

    Returns ``(state, record, reset_groups)``; ``reset_groups`` lists groups
    whose optimizer moments were just cleared because they became trainable
    after being frozen.
    """
    if state.done:
        raise RuntimeError("advancing a completed curriculum")
    phase = state.phase
    stage = _stage(phase.phase_id, state.interleave)
    groups = frozenset(phase.trainable_groups)
    reset = []
    if stage != state._stage:
        prev = state._active
        active = set(groups)
        if stage == "1":
            # both interleaved branches count as one stage for moment resets
            for p in state.phases:
                if p.phase_id in ("1a", "1b"):
                    active |= set(p.trainable_groups)
        newly = sorted(active - prev)
        state._active = frozenset(active)
        for g in newly:
            state.optimizer[g] = AdamState()
            reset.append(g)
        state._stage = stage
    tasks = tuple(sample_task(phase.mixture, state.task_rng) for _ in range(state.micro_batch))
    rec = TraceRecord(state.global_step, phase.phase_id, phase.lr, tuple(phase.trainable_groups), tasks)
    state.global_step += 1
    return state, rec, reset


def trace_schedule(cfg: RunConfig) -> ScheduleTrace:
    """The full trace a ``train`` run with this config will follow, without training."""
    state = state_from_config(cfg)
    trace = ScheduleTrace()
    while not state.done:
        _, rec, _ = advance(state)
        trace.append(rec)
    return trace


# -- optimisation ---------------------------------------------------------------

def grad_accumulate_step(grouped_params: dict, micro_batches, loss_fn, lr: float, states: dict,
                         betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.01) -> float:
    """One optimizer step from ``len(micro_batches)`` accumulated micro-batches.

    Each micro-batch loss is the mean over its samples and the accumulated
    gradient is the mean over micro-batches, which equals one step on the
    concatenated batch when all micro-batches have the same size.
    ``grouped_params`` maps group -> {name: Tensor}; only groups present in
    ``states`` are updated, and parameters that received no gradient are
    left untouched.  Returns the mean loss.
    """
    micro_batches = [list(mb) for mb in micro_batches]
    if not micro_batches or any(not mb for mb in micro_batches):
        raise ValueError("need at least one non-empty micro-batch")
    accum = len(micro_batches)
    for params in grouped_params.values():
        for p in params.values():
            p.grad = None
    total = 0.0
    for mb in micro_batches:
        w = 1.0 / (accum * len(mb))
        for item in mb:
            loss = loss_fn(item)
            total += float(loss.data) * w
            if loss.requires_grad:
                T.backward(loss * w)
    for group, state in states.items():
        params = grouped_params.get(group, {})
        live = {n: p for n, p in params.items() if p.grad is not None}
        if live:
            adamw_step(live, {n: p.grad for n, p in live.items()}, lr, state, betas, eps,
                       weight_decay, group)
    for params in grouped_params.values():
        for p in params.values():
            p.grad = None
    return total
