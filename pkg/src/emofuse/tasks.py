"""Seeded synthetic affective tasks, instruction templates and task mixtures.

Modality payloads carry a fixed per-label direction plus noise (signal to
noise 2:1 by default), so labels are recoverable from video and audio alone.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .config import DEFAULT_MIXTURE, TASKS, DataSection
from .encoders import AudioClip, VideoClip
from .tokenizer import Tokenizer

EMOTIONS = ("happy", "sad", "angry", "fearful", "surprised", "disgusted", "neutral")
OV_GROUPS = {
    "happy": ("joyful", "cheerful", "content"),
    "sad": ("gloomy", "lonely", "heartbroken"),
    "angry": ("furious", "irritated", "annoyed"),
    "fearful": ("anxious", "nervous", "scared"),
    "surprised": ("amazed", "astonished", "startled"),
    "disgusted": ("repulsed", "revolted"),
    "neutral": ("calm", "relaxed", "indifferent"),
}
OV_VOCAB = tuple(w for words in OV_GROUPS.values() for w in words)
INTENTS = ("complain", "praise", "apologise", "thank", "criticize",
           "agree", "taunt", "flaunt", "joke", "oppose")
SENTIMENTS = ("positive", "negative", "neutral")
SENTIMENT_OF = {"happy": "positive", "surprised": "positive", "neutral": "neutral",
                "sad": "negative", "angry": "negative", "fearful": "negative", "disgusted": "negative"}

IDENTIFIERS = {
    "MER": "[Recognition]",
    "OV_MER": "[Recog_OV]",
    "MIR": "[Intent]",
    "ERI": "[Inference]",
    "ERG": "[Interaction]",
}
TASK_SOURCES = {
    "MER": ("FERV39K", "CAER", "CREMA-D", "M3ED", "erg_dialogue"),
    "OV_MER": ("MER-Caption+",),
    "ERI": ("MER-Caption+", "MERR-Fine"),
    "MIR": ("MIntRec", "MIntRec2.0"),
    "ERG": ("AvaMERG",),
    "MSA": ("MOSI", "SIMS"),
}

MER_TEMPLATE = ("[Recognition] Please select the label that can best describe the person's "
                "emotional state from the provided candidate labels: {labels} .")
MSA_TEMPLATE = ("[Recognition] Please select the label that can best describe the person's "
                "sentiment from the provided candidate labels: {labels} .")
MIR_TEMPLATE = "[Intent] Recognize speaker's intention from the provided candidate labels: {labels} ."
OV_TEMPLATE = ("[Recog_OV] Recognize all the possible emotional states the character might be "
               "feeling in this context.")
ERI_TEMPLATE = ("[Inference] From the combined evidence of speech, tone, and visual expression, "
                "construct a detailed summary of the subject's emotional journey and final inferred state.")
ERG_TEMPLATE = (
    "[Interaction] You are an empathetic listener, your goal is to understand the user's emotions "
    "and intentions, and respond or comfort them with appropriate language that helps them feel "
    "understood and cared for. Please analyze using Chain of Empathy: "
    "First, Reflect on the event scenarios that arise from the ongoing dialogue. "
    "Secondly, Analyze both the implicit and explicit emotions conveyed by the user. "
    "Thirdly, Infer the underlying reasons for the user's emotions. "
    "Fourthly, Determine the goal of your response in this particular instance, such as "
    "alleviating anxiety, offering reassurance, or expressing understanding."
)

VOICE_CUE = {"happy": "bright", "sad": "trembling", "angry": "harsh", "fearful": "shaky",
             "surprised": "rising", "disgusted": "scornful", "neutral": "steady"}
FACE_CUE = {"happy": "smiling", "sad": "tearful", "angry": "frowning", "fearful": "tense",
            "surprised": "wide-eyed", "disgusted": "wrinkled", "neutral": "still"}
RESPONSE_GOAL = {"happy": "celebrate", "sad": "comfort", "angry": "calm", "fearful": "reassure",
                 "surprised": "explore", "disgusted": "validate", "neutral": "engage"}
REPLIES = {
    "happy": "that is wonderful news , i am so glad for you",
    "sad": "i am sorry you feel this way , i am here for you",
    "angry": "that sounds really frustrating , take a deep breath",
    "fearful": "it is okay to feel scared , you are not alone",
    "surprised": "wow that is unexpected , tell me more",
    "disgusted": "that sounds awful , your reaction makes sense",
    "neutral": "thanks for sharing , how was the rest of it",
}
QUERIES = (
    ("i just came back from work", "work"),
    ("my exam results arrived today", "exam"),
    ("i met my old friend at the station", "friend"),
    ("my dog ran away this morning", "dog"),
    ("we moved to a new city", "move"),
    ("my phone broke again", "phone"),
    ("the meeting ran late tonight", "meeting"),
    ("my sister called me today", "sister"),
)
FILLER_REPLIES = ("i see , go on", "tell me more about it", "that makes sense", "how did that go")
THINK_OPEN, THINK_CLOSE = "<think>", "</think>"
TASKS_WITH_MSA = TASKS + ("MSA",)


@dataclass
class Mixture:
    weights: dict

    def __post_init__(self):
        if any(w < 0 for w in self.weights.values()):
            raise ValueError("mixture weights must be non-negative")
        if not any(w > 0 for w in self.weights.values()):
            raise ValueError("mixture needs at least one positive weight")
        unknown = set(self.weights) - set(TASKS)
        if unknown:
            raise ValueError(f"unknown tasks in mixture: {sorted(unknown)}")

    @property
    def tasks(self) -> tuple:
        return tuple(t for t in TASKS if t in self.weights)

    def exact_probabilities(self) -> dict:
        total = sum(Fraction(self.weights[t]) for t in self.tasks)
        return {t: Fraction(self.weights[t]) / total for t in self.tasks}

    def probabilities(self) -> dict:
        return {t: float(p) for t, p in self.exact_probabilities().items()}


DEFAULT = Mixture(dict(DEFAULT_MIXTURE))


def sample_task(mixture: Mixture, rng: np.random.Generator) -> str:
    probs = mixture.exact_probabilities()
    u = rng.random()
    acc = Fraction(0)
    last = None
    for t, p in probs.items():
        if p == 0:
            continue
        acc += p
        last = t
        if u < acc:
            return t
    return last


@dataclass
class DialogueHistory:
    history: list  # [(query_text, response_text), ...]
    query_text: str
    target: str
    query_video: VideoClip | None = None
    query_audio: AudioClip | None = None

    def __post_init__(self):
        if not self.target:
            raise ValueError("dialogue target must be non-empty")


def restructure_dialogue(turns) -> list:
    """One item per turn; history is every earlier (query, response) pair.

    ``turns`` is a sequence of dicts with keys ``query``, ``response`` and
    optional ``video`` / ``audio`` (attached only to the current query).
    """
    turns = list(turns)
    if not turns:
        raise ValueError("empty dialogue")
    items = []
    for n, turn in enumerate(turns):
        history = [(t["query"], t["response"]) for t in turns[:n]]
        items.append(DialogueHistory(history, turn["query"], turn["response"],
                                     turn.get("video"), turn.get("audio")))
    return items


def dialogue_context(history, query_text: str) -> str:
    parts = [f"user: {q} assistant: {r}" for q, r in history]
    parts.append(f"user: {query_text}")
    return " ".join(parts)


@dataclass
class TaskSample:
    task: str
    identifier: str
    video: VideoClip
    audio: AudioClip
    prompt: str
    target: str
    labels: tuple
    source: str
    sample_id: str = ""
    dialogue: DialogueHistory | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.task in IDENTIFIERS and IDENTIFIERS[self.task] != self.identifier:
            raise ValueError(f"identifier {self.identifier} does not match task {self.task}")
        if not self.labels:
            raise ValueError("a sample needs at least one gold label")


def label_space(task: str) -> tuple:
    return {"MER": EMOTIONS, "ERI": EMOTIONS, "ERG": EMOTIONS, "OV_MER": OV_VOCAB,
            "MIR": INTENTS, "MSA": EMOTIONS}[task]


def signal_space(task: str) -> str:
    return {"OV_MER": "ov", "MIR": "intent"}.get(task, "emotion")


def format_instruction(sample: TaskSample) -> str:
    task = sample.task
    if task == "MER":
        return MER_TEMPLATE.format(labels=" , ".join(EMOTIONS))
    if task == "MSA":
        return MSA_TEMPLATE.format(labels=" , ".join(SENTIMENTS))
    if task == "MIR":
        return MIR_TEMPLATE.format(labels=" , ".join(INTENTS))
    if task == "OV_MER":
        return OV_TEMPLATE
    if task == "ERI":
        return ERI_TEMPLATE
    if task == "ERG":
        d = sample.dialogue
        return ERG_TEMPLATE + " " + dialogue_context(d.history, d.query_text)
    raise ValueError(f"unknown task {task!r}")


def eri_target(emotion: str) -> str:
    return (f"the voice sounds {VOICE_CUE[emotion]} and the face looks {FACE_CUE[emotion]} "
            f"so the final state is {emotion}")


def erg_target(emotion: str, topic: str) -> str:
    think = f"{THINK_OPEN} scenario: {topic} emotion: {emotion} goal: {RESPONSE_GOAL[emotion]} {THINK_CLOSE}"
    return f"{think} {REPLIES[emotion]}"


def target_text(task: str, labels, topic: str | None = None) -> str:
    if task in ("MER", "MIR"):
        return labels[0]
    if task == "MSA":
        return SENTIMENT_OF[labels[0]]
    if task == "OV_MER":
        return " ".join(labels)
    if task == "ERI":
        return eri_target(labels[0])
    if task == "ERG":
        return erg_target(labels[0], topic)
    raise ValueError(f"unknown task {task!r}")


class SignalBank:
    """Fixed seeded unit directions per (label space, label) in pixel and audio space."""

    def __init__(self, data: DataSection):
        self.data = data
        self.pixels = 3 * data.height * data.width
        rng = np.random.default_rng(data.signal_seed)
        self.video, self.audio = {}, {}
        for space, labels in (("emotion", EMOTIONS), ("ov", OV_VOCAB), ("intent", INTENTS)):
            for lab in labels:
                v = rng.normal(size=self.pixels)
                a = rng.normal(size=data.audio_dim)
                self.video[(space, lab)] = v / np.linalg.norm(v)
                self.audio[(space, lab)] = a / np.linalg.norm(a)

    def direction(self, space: str, labels) -> tuple:
        v = sum(self.video[(space, lab)] for lab in labels)
        a = sum(self.audio[(space, lab)] for lab in labels)
        return v / np.linalg.norm(v), a / np.linalg.norm(a)

    def render(self, space: str, labels, rng: np.random.Generator, frames: int | None = None,
               audio_steps: int | None = None) -> tuple:
        d = self.data
        frames = frames or d.frames
        audio_steps = audio_steps or d.audio_steps
        v_dir, a_dir = self.direction(space, labels)
        pix_amp = 0.1
        v = 0.5 + pix_amp * np.sqrt(self.pixels) * v_dir[None, :]
        v = v + (pix_amp / d.snr) * rng.normal(size=(frames, self.pixels))
        video = np.clip(v, 0.0, 1.0).reshape(frames, 3, d.height, d.width)
        a = np.sqrt(d.audio_dim) * a_dir[None, :] + (1.0 / d.snr) * rng.normal(size=(audio_steps, d.audio_dim))
        return VideoClip(video), AudioClip(a)


class TaskForge:
    """Pure generators over ``(config, rng)``."""

    def __init__(self, data: DataSection | None = None):
        self.data = data or DataSection()
        self.signals = SignalBank(self.data)

    def generate(self, task: str, rng: np.random.Generator, labels=None, source: str | None = None,
                 sample_id: str = "", frames: int | None = None, audio_steps: int | None = None) -> TaskSample:
        if task not in IDENTIFIERS and task != "MSA":
            raise ValueError(f"unknown task {task!r}")
        space = label_space(task)
        if not space:
            raise ValueError(f"empty label space for {task}")
        if labels is None:
            if task == "OV_MER":
                k = int(rng.integers(1, 4))
                picked = rng.choice(len(space), size=k, replace=False)
                labels = tuple(space[i] for i in sorted(picked))
            else:
                labels = (space[int(rng.integers(len(space)))],)
        labels = tuple(labels)
        if any(lab not in space for lab in labels):
            raise ValueError(f"labels {labels} outside the {task} label space")
        if source is None:
            srcs = TASK_SOURCES[task]
            source = srcs[int(rng.integers(len(srcs)))]
        video, audio = self.signals.render(signal_space(task), labels, rng, frames, audio_steps)
        dialogue = None
        topic = None
        if task == "ERG":
            n_turns = int(rng.integers(1, 4))
            turns = []
            for _ in range(n_turns - 1):
                q, _t = QUERIES[int(rng.integers(len(QUERIES)))]
                turns.append({"query": q, "response": FILLER_REPLIES[int(rng.integers(len(FILLER_REPLIES)))]})
            q, topic = QUERIES[int(rng.integers(len(QUERIES)))]
            turns.append({"query": q, "response": target_text(task, labels, topic),
                          "video": video, "audio": audio})
            dialogue = restructure_dialogue(turns)[-1]
        identifier = IDENTIFIERS.get(task, IDENTIFIERS["MER"])
        sample = TaskSample(task, identifier, video, audio, "", target_text(task, labels, topic),
                            labels, source, sample_id, dialogue)
        sample.prompt = format_instruction(sample)
        return sample


def reference_texts() -> list:
    """Every template and target string the generators can emit."""
    texts = [MER_TEMPLATE.format(labels=" , ".join(EMOTIONS)), MSA_TEMPLATE.format(labels=" , ".join(SENTIMENTS)),
             MIR_TEMPLATE.format(labels=" , ".join(INTENTS)), OV_TEMPLATE, ERI_TEMPLATE, ERG_TEMPLATE]
    for e in EMOTIONS:
        texts.append(eri_target(e))
        for _, topic in QUERIES:
            texts.append(erg_target(e, topic))
    for q, _ in QUERIES:
        texts.append(f"user: {q} assistant:")
    texts.extend(FILLER_REPLIES)
    return texts


def build_tokenizer(vocab_size: int = 512) -> Tokenizer:
    targets = [eri_target(e) for e in EMOTIONS] + [erg_target(e, t) for e in EMOTIONS for _, t in QUERIES]
    required = (list(EMOTIONS) + list(OV_VOCAB) + list(INTENTS) + list(SENTIMENTS)
                + list(IDENTIFIERS.values()) + [w for t in targets for w in t.split()])
    return Tokenizer.from_corpus(reference_texts(), vocab_size, required)


def sample_to_record(sample: TaskSample, blob_dir: Path, rel_to: Path | None = None) -> dict:
    """JSON-ready dict; modality arrays are written as ``.npy`` blobs next to the corpus."""
    blob_dir = Path(blob_dir)
    blob_dir.mkdir(parents=True, exist_ok=True)
    vid = blob_dir / f"{sample.sample_id}.video.npy"
    aud = blob_dir / f"{sample.sample_id}.audio.npy"
    np.save(vid, sample.video.frames.astype("<f8"))
    np.save(aud, sample.audio.features.astype("<f8"))
    base = Path(rel_to) if rel_to is not None else blob_dir.parent
    rec = {
        "sample_id": sample.sample_id,
        "task": sample.task,
        "identifier": sample.identifier,
        "source": sample.source,
        "prompt": sample.prompt,
        "target": sample.target,
        "labels": list(sample.labels),
        "video": str(vid.relative_to(base)),
        "audio": str(aud.relative_to(base)),
    }
    if sample.dialogue is not None:
        rec["history"] = [list(p) for p in sample.dialogue.history]
        rec["query"] = sample.dialogue.query_text
    return rec


def record_to_sample(rec: dict, base: Path) -> TaskSample:
    base = Path(base)
    video = VideoClip(np.load(base / rec["video"]))
    audio = AudioClip(np.load(base / rec["audio"]))
    dialogue = None
    if "history" in rec:
        dialogue = DialogueHistory([tuple(p) for p in rec["history"]], rec["query"], rec["target"], video, audio)
    return TaskSample(rec["task"], rec["identifier"], video, audio, rec["prompt"], rec["target"],
                      tuple(rec["labels"]), rec["source"], rec["sample_id"], dialogue)


def write_corpus(samples, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "samples.jsonl"
    with path.open("w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(json.dumps(sample_to_record(s, out_dir / "blobs", out_dir), sort_keys=True) + "\n")
    return path


def read_corpus(path) -> list:
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        return [record_to_sample(json.loads(line), path.parent) for line in fh if line.strip()]
