"""Training drivers: LM warm start, curriculum loop, overfit loop and evaluation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from types import SimpleNamespace

import numpy as np

from . import checkpoint
from . import config as config_mod
from . import tensor as T
from .config import RunConfig
from .curriculum import (ScheduleTrace, advance, grad_accumulate_step, state_from_config)
from .lm import assemble, generate, mle_loss
from .metrics import EmotionWheel, PredictionRecord, classification_suite, dist_n, hit_rate, waf
from .model import TRAINABLE_GROUPS, EmoModel
from .optim import AdamState, adamw_step
from .tasks import (EMOTIONS, INTENTS, OV_VOCAB, SENTIMENTS, TASKS_WITH_MSA, TaskForge, TaskSample,
                    THINK_CLOSE, label_space)

_LM_CACHE: dict = {}


# -- LM warm start ----------------------------------------------------------------

def _caption_prefix(sample: TaskSample, model: EmoModel, rng: np.random.Generator) -> np.ndarray:
    """Stand-in modality prefix: label-word embeddings at random slots, noise elsewhere."""
    lm, tok = model.lm, model.tokenizer
    L = model.prefix_length
    emb = lm.tok_emb.data
    x = 0.1 * rng.normal(size=(L, lm.dim))
    words = list(sample.labels)
    slots = rng.random(L) < 0.5
    if not slots.any():
        slots[int(rng.integers(L))] = True
    for i in np.nonzero(slots)[0]:
        x[i] += emb[tok.word_id(words[int(rng.integers(len(words)))])]
    return x.astype(emb.dtype)


def pretrain_lm(model: EmoModel, log=None) -> None:
    """Warm-start the LM as a frozen "pretrained" text model.

    The LM learns the instruction formats with label words standing in for
    the modality prefix, so later phases only have to map encoder features
    onto something the LM already reads.  Depends only on the LM, data and
    token settings, never on the run seed, and is memoised per process.
    """
    cfg = model.cfg
    key = (repr(cfg.lm), repr(cfg.data), repr(cfg.tokens), model.prefix_length, cfg.run.precision)
    lm_params = {n: p for n, p in model.lm.named_parameters("lm.").items() if ".lora_" not in n}
    if key in _LM_CACHE:
        for n, arr in _LM_CACHE[key].items():
            lm_params[n].data = arr.copy()
        return
    steps, batch = cfg.lm.pretrain_steps, cfg.lm.pretrain_batch
    if steps > 0:
        rng = np.random.default_rng([cfg.lm.seed, 55])
        forge = TaskForge(cfg.data)
        tasks = ("MER", "OV_MER", "MIR", "ERI", "ERG")
        state = AdamState()
        saved = {n: p.requires_grad for n, p in model.named_parameters().items()}
        model.set_trainable_groups(())
        for p in lm_params.values():
            p.requires_grad = True
        try:
            for step in range(steps):
                total = 0.0
                for _ in range(batch):
                    s = forge.generate(tasks[int(rng.integers(len(tasks)))], rng)
                    prompt, target, supervise = model.text_ids(s)
                    prefix = SimpleNamespace(tokens=T.Tensor(_caption_prefix(s, model, rng)), stream_tag="caption")
                    loss = mle_loss(model.lm, assemble(model.lm, [prefix], prompt, target, supervise))
                    T.backward(loss * (1.0 / batch))
                    total += float(loss.data) / batch
                adamw_step(lm_params, {n: p.grad for n, p in lm_params.items()}, cfg.lm.pretrain_lr, state,
                           group="lm_base")
                for p in lm_params.values():
                    p.grad = None
                if log is not None and (step % 50 == 0 or step == steps - 1):
                    log({"pretrain_step": step, "loss": total})
        finally:
            for n, p in model.named_parameters().items():
                p.requires_grad = saved[n]
    _LM_CACHE[key] = {n: p.data.copy() for n, p in lm_params.items()}


def build_model(cfg: RunConfig, log=None) -> EmoModel:
    model = EmoModel(cfg)
    pretrain_lm(model, log)
    return model


# -- curriculum -------------------------------------------------------------------

def sample_for(cfg: RunConfig, forge: TaskForge, phase, task: str, step: int, k: int) -> TaskSample:
    """Training sample ``k`` of optimizer step ``step``: a pure function of (seed, step, k)."""
    rng = np.random.default_rng([cfg.run.seed, 202, step, k])
    srcs = phase.sources(task)
    return forge.generate(task, rng, source=srcs[int(rng.integers(len(srcs)))],
                          sample_id=f"train-{step}-{k}")


@dataclass
class TrainResult:
    model: EmoModel
    trace: ScheduleTrace
    losses: list = field(default_factory=list)  # dicts {global_step, phase, loss}
    snapshots: dict = field(default_factory=dict)  # phase boundary -> state dict

    def phase_losses(self, phase: str) -> list:
        return [r["loss"] for r in self.losses if r["phase"] == phase]


def run_curriculum(cfg: RunConfig, model: EmoModel | None = None, snapshot: bool = False,
                   max_steps: int | None = None, log=None) -> TrainResult:
    model = model or build_model(cfg)
    forge = TaskForge(cfg.data)
    state = state_from_config(cfg)
    cur, opt = cfg.curriculum, cfg.optim
    grouped = model.grouped_parameters()
    trace = ScheduleTrace()
    result = TrainResult(model, trace)
    current = None
    while not state.done and (max_steps is None or state.global_step < max_steps):
        phase = state.phase
        step = state.global_step
        _, rec, _ = advance(state)
        trace.append(rec)
        if phase.phase_id != current:
            if snapshot:
                result.snapshots[(step, phase.phase_id)] = model.state_dict()
            model.set_trainable_groups(phase.trainable_groups)
            current = phase.phase_id
        samples = [sample_for(cfg, forge, phase, t, step, k) for k, t in enumerate(rec.tasks)]
        micro = [samples[i:i + cur.batch_size] for i in range(0, len(samples), cur.batch_size)]
        states = {g: state.optimizer[g] for g in phase.trainable_groups}
        loss = grad_accumulate_step(grouped, micro, model.loss, phase.lr, states,
                                    tuple(opt.betas), opt.eps, opt.weight_decay)
        row = {"global_step": step, "phase": phase.phase_id, "loss": loss}
        result.losses.append(row)
        if log is not None:
            log(row)
    if snapshot:
        result.snapshots[(state.global_step, "end")] = model.state_dict()
    model.set_trainable_groups(())
    return result


def overfit_corpus(cfg: RunConfig, n: int | None = None) -> list:
    """Held-in corpus drawn from the final-phase task mixture."""
    from .tasks import Mixture, sample_task
    n = n or cfg.curriculum.overfit_samples
    forge = TaskForge(cfg.data)
    mix = Mixture(dict(cfg.curriculum.mixture))
    rng = np.random.default_rng([cfg.run.seed, 303])
    return [forge.generate(sample_task(mix, rng), rng, sample_id=f"overfit-{i}") for i in range(n)]


def corpus_nll(model: EmoModel, samples, stacks=None) -> float:
    with T.no_grad():
        return float(np.mean([model.loss(s, None if stacks is None else stacks[i]).data
                              for i, s in enumerate(samples)]))


def overfit(model: EmoModel, samples, max_steps: int = 2000, target: float = 0.1, lr: float = 1e-3,
            batch: int = 8, check_every: int = 25, seed: int = 0, log=None) -> dict:
    """Train the final-phase groups on a fixed corpus until its mean NLL drops below ``target``."""
    cfg = model.cfg
    groups = tuple(g for g in TRAINABLE_GROUPS)
    model.set_trainable_groups(groups)
    grouped = model.grouped_parameters()
    states = {g: AdamState() for g in groups}
    stacks = [model.encode(s) for s in samples]
    rng = np.random.default_rng([seed, 404])
    idx = np.arange(len(samples))
    nll = corpus_nll(model, samples, stacks)
    history = [(0, nll)]
    step = 0
    while nll >= target and step < max_steps:
        order = rng.permutation(idx)
        for start in range(0, len(order), batch):
            chunk = order[start:start + batch]
            grad_accumulate_step(grouped, [list(chunk)], lambda i: model.loss(samples[i], stacks[i]), lr,
                                 states, tuple(cfg.optim.betas), cfg.optim.eps, cfg.optim.weight_decay)
            step += 1
            if step % check_every == 0 or step >= max_steps:
                nll = corpus_nll(model, samples, stacks)
                history.append((step, nll))
                if log is not None:
                    log({"overfit_step": step, "nll": nll})
                if nll < target or step >= max_steps:
                    break
    model.set_trainable_groups(())
    return {"steps": step, "nll": nll, "history": history}


# -- evaluation -------------------------------------------------------------------

CANDIDATES = {"MER": EMOTIONS, "MIR": INTENTS, "MSA": SENTIMENTS}


def eval_corpus(cfg: RunConfig, task: str, n: int | None = None) -> list:
    n = n or cfg.eval.samples_per_task
    forge = TaskForge(cfg.data)
    rng = np.random.default_rng([cfg.eval.seed, TASKS_WITH_MSA.index(task)])
    return [forge.generate(task, rng, sample_id=f"eval-{task}-{i}") for i in range(n)]


def restricted_choice(model: EmoModel, sample: TaskSample, candidates) -> str:
    """Candidate whose single token scores highest right after the prompt."""
    prefix = model.prompt_prefix(sample)
    from .lm import next_token_logits
    logits = next_token_logits(model.lm, prefix)
    ids = [model.tokenizer.word_id(c) for c in candidates]
    return candidates[int(np.argmax(logits[ids]))]


def decode(model: EmoModel, sample: TaskSample, max_new: int) -> str:
    with T.no_grad():
        prefix = model.prompt_prefix(sample)
    out = generate(model.lm, prefix, max_new, model.tokenizer.eos_id)
    if out and out[-1] == model.tokenizer.eos_id:
        out = out[:-1]
    return model.tokenizer.decode(out)


def parse_prediction(task: str, text: str) -> tuple:
    words = text.split()
    if task == "OV_MER":
        return tuple(dict.fromkeys(w for w in words if w in OV_VOCAB))
    if task == "ERG":
        if THINK_CLOSE in words:
            words = words[:words.index(THINK_CLOSE)]
        if "emotion:" in words:
            i = words.index("emotion:")
            words = words[i + 1:i + 2]
    hits = [w for w in words if w in EMOTIONS]
    return (hits[-1],) if hits else ()


def erg_reply(text: str) -> str:
    words = text.split()
    if THINK_CLOSE in words:
        words = words[words.index(THINK_CLOSE) + 1:]
    return " ".join(words)


def predict(model: EmoModel, samples, max_new: int) -> list:
    task = samples[0].task
    records = []
    for s in samples:
        text = None
        if task in CANDIDATES:
            gold = (s.labels[0],) if task != "MSA" else (s.target,)
            pred = (restricted_choice(model, s, CANDIDATES[task]),)
        else:
            text = decode(model, s, max_new)
            gold = tuple(s.labels)
            pred = parse_prediction(task, text)
        records.append(PredictionRecord(s.sample_id, pred, gold, text))
    return records


def evaluate(model: EmoModel, tasks=None, n: int | None = None, wheel: EmotionWheel | None = None) -> list:
    """Metric report rows ``{metric, task, value, n_records}``."""
    cfg = model.cfg
    wheel = wheel or EmotionWheel.default()
    rows = []
    for task in tasks or cfg.eval.tasks:
        recs = predict(model, eval_corpus(cfg, task, n), cfg.eval.max_new_tokens)
        n_rec = len(recs)
        if task == "MER":
            rows.append({"metric": "hit_rate", "task": task, "value": hit_rate(recs, wheel), "n_records": n_rec})
            rows.append({"metric": "waf", "task": task, "value": waf(recs, EMOTIONS), "n_records": n_rec})
        elif task in ("MIR", "MSA"):
            for k, v in classification_suite(recs, label_space(task) if task == "MIR" else SENTIMENTS).items():
                rows.append({"metric": k, "task": task, "value": v, "n_records": n_rec})
        elif task in ("OV_MER", "ERI"):
            rows.append({"metric": "hit_rate", "task": task, "value": hit_rate(recs, wheel), "n_records": n_rec})
        elif task == "ERG":
            rows.append({"metric": "hit_rate", "task": task, "value": hit_rate(recs, wheel), "n_records": n_rec})
            replies = [erg_reply(r.text or "") for r in recs]
            for k in (1, 2):
                try:
                    v = dist_n(replies, k)
                except ValueError:
                    v = 0.0
                rows.append({"metric": f"dist_{k}", "task": task, "value": v, "n_records": n_rec})
    return rows


# -- end-to-end command -----------------------------------------------------------

def write_jsonl(path, rows) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for r in rows:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def train(cfg: RunConfig, out_dir=None, log=None) -> TrainResult:
    """Run the configured curriculum and write config echo, trace, losses and checkpoint."""
    out = Path(out_dir or cfg.run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(config_mod.dump(cfg), encoding="utf-8")
    result = run_curriculum(cfg, log=log)
    result.trace.write(out / "trace.jsonl")
    write_jsonl(out / "losses.jsonl", result.losses)
    checkpoint.save(out / "model.ckpt", result.model.state_dict())
    return result


def load_model(cfg: RunConfig, path) -> EmoModel:
    model = EmoModel(cfg)
    state = checkpoint.load(path)
    expected = {n: p.shape for n, p in model.named_parameters().items()}
    diff = checkpoint.manifest_diff(expected, state)
    problems = [f"{k}: {len(v)} ({', '.join(v[:3])}{', ...' if len(v) > 3 else ''})"
                for k, v in diff.items() if v]
    if problems:
        raise checkpoint.CheckpointError("checkpoint does not match the model; " + "; ".join(problems))
    model.load_state_dict(state)
    return model
