"""Affective evaluation metrics: wheel hit rate, WAF, Acc/WF1/WP and Dist-n."""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path


class EmotionWheel:
    """Map from emotion word to group id; lookups ignore case and surrounding space."""

    def __init__(self, mapping: dict):
        table = {}
        for word, gid in mapping.items():
            key = word.strip().lower()
            if not key:
                raise ValueError("empty word in emotion wheel")
            if key in table and table[key] != gid:
                raise ValueError(f"word '{key}' maps to groups {table[key]} and {gid}")
            table[key] = gid
        self.table = table

    @classmethod
    def from_text(cls, text: str) -> "EmotionWheel":
        mapping = {}
        for n, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(f"line {n}: expected 'word<TAB>group_id', got {line!r}")
            word, gid = parts
            if word.strip().lower() in mapping and mapping[word.strip().lower()] != int(gid):
                raise ValueError(f"line {n}: '{word}' already mapped to another group")
            mapping[word.strip().lower()] = int(gid)
        return cls(mapping)

    @classmethod
    def load(cls, path) -> "EmotionWheel":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))

    @classmethod
    def default(cls) -> "EmotionWheel":
        text = resources.files("emofuse").joinpath("data/emotion_wheel.tsv").read_text(encoding="utf-8")
        return cls.from_text(text)

    def __contains__(self, word: str) -> bool:
        return word.strip().lower() in self.table

    def group(self, word: str) -> int:
        return self.table[word.strip().lower()]

    def groups(self, words) -> set:
        unknown = [w for w in words if w not in self]
        if unknown:
            raise KeyError(f"words not on the emotion wheel: {unknown}")
        return {self.group(w) for w in words}

    @property
    def n_groups(self) -> int:
        return len(set(self.table.values()))


@dataclass
class PredictionRecord:
    sample_id: str
    predicted: tuple
    gold: tuple
    text: str | None = None

    def __post_init__(self):
        self.predicted = tuple(self.predicted)
        self.gold = tuple(self.gold)
        if not self.gold:
            raise ValueError(f"record {self.sample_id!r} has no gold label")


def _check(records) -> list:
    records = list(records)
    if not records:
        raise ValueError("no records to score")
    return records


def hit_rate(records, wheel: EmotionWheel) -> float:
    """Fraction of records whose predicted and gold word groups intersect.

    An empty prediction is a miss.
    """
    records = _check(records)
    unknown = sorted({w for r in records for w in r.predicted + r.gold if w not in wheel})
    if unknown:
        raise KeyError(f"words not on the emotion wheel: {unknown}")
    hits = sum(1 for r in records if wheel.groups(r.predicted) & wheel.groups(r.gold))
    return hits / len(records)


def _per_class(records, label_space) -> tuple:
    space = list(dict.fromkeys(label_space))
    allowed = set(space)
    bad = sorted({w for r in records for w in r.predicted + r.gold if w not in allowed})
    if bad:
        raise ValueError(f"labels outside the label space: {bad}")
    tp = dict.fromkeys(space, 0)
    fp = dict.fromkeys(space, 0)
    fn = dict.fromkeys(space, 0)
    for r in records:
        p, g = set(r.predicted), set(r.gold)
        for c in p & g:
            tp[c] += 1
        for c in p - g:
            fp[c] += 1
        for c in g - p:
            fn[c] += 1
    return space, tp, fp, fn


def _weighted(records, label_space, which: str) -> float:
    records = _check(records)
    space, tp, fp, fn = _per_class(records, label_space)
    total = 0
    score = 0.0
    for c in space:
        support = tp[c] + fn[c]
        if support == 0:
            continue
        prec = tp[c] / (tp[c] + fp[c]) if tp[c] + fp[c] else 0.0
        if which == "precision":
            val = prec
        else:
            rec = tp[c] / support
            val = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        score += support * val
        total += support
    return score / total


def waf(records, label_space) -> float:
    """Per-class F1 averaged with gold-support weights (multi-label aware)."""
    return _weighted(records, label_space, "f1")


def weighted_precision(records, label_space) -> float:
    return _weighted(records, label_space, "precision")


def accuracy(records) -> float:
    records = _check(records)
    return sum(1 for r in records if set(r.predicted) == set(r.gold)) / len(records)


def classification_suite(records, label_space) -> dict:
    records = _check(records)
    return {"acc": accuracy(records), "wf1": waf(records, label_space),
            "wp": weighted_precision(records, label_space)}


def dist_n(responses, n: int) -> float:
    """Distinct n-grams over total n-grams across the whole response corpus."""
    if n < 1:
        raise ValueError("n must be >= 1")
    grams = []
    for text in responses:
        toks = text.split()
        grams.extend(tuple(toks[i:i + n]) for i in range(len(toks) - n + 1))
    if not grams:
        raise ValueError(f"no response has at least {n} tokens")
    return len(set(grams)) / len(grams)


def report_row(metric: str, task: str, value: float, n_records: int) -> dict:
    return {"metric": metric, "task": task, "value": float(value), "n_records": int(n_records)}


def write_report(rows, path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for r in rows:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
