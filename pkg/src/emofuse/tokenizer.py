"""Whitespace tokenizer with UTF-8 byte fallback.

Ids: 4 specials, 256 byte tokens, then whole words up to ``vocab_size``.
A word missing from the table is spelled as its bytes followed by ``<eow>``,
so ``decode(encode(s)) == " ".join(s.split())`` for any string.
"""

from __future__ import annotations

from collections import Counter
from typing import Iterable

PAD, BOS, EOS, EOW = "<pad>", "<bos>", "<eos>", "<eow>"
SPECIALS = (PAD, BOS, EOS, EOW)
BYTE_OFFSET = len(SPECIALS)
WORD_OFFSET = BYTE_OFFSET + 256


class Tokenizer:
    def __init__(self, words: Iterable[str], vocab_size: int = 512):
        words = list(dict.fromkeys(words))
        capacity = vocab_size - WORD_OFFSET
        if capacity < 0:
            raise ValueError(f"vocab_size {vocab_size} cannot hold specials and bytes")
        if len(words) > capacity:
            raise ValueError(f"{len(words)} words exceed the {capacity} word slots")
        self.vocab_size = vocab_size
        self.words = words
        self.word_to_id = {w: WORD_OFFSET + i for i, w in enumerate(words)}
        self.pad_id, self.bos_id, self.eos_id, self.eow_id = range(4)

    @classmethod
    def from_corpus(cls, texts: Iterable[str], vocab_size: int = 512, required: Iterable[str] = ()):
        """Required words first, then the most frequent words (ties broken lexically)."""
        required = list(dict.fromkeys(required))
        counts = Counter(w for t in texts for w in t.split())
        for w in required:
            counts.pop(w, None)
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        room = vocab_size - WORD_OFFSET - len(required)
        return cls(required + [w for w, _ in ranked[:max(room, 0)]], vocab_size)

    def __len__(self) -> int:
        return self.vocab_size

    def word_id(self, word: str) -> int:
        return self.word_to_id[word]

    def encode(self, text: str) -> list:
        ids = []
        for w in text.split():
            wid = self.word_to_id.get(w)
            if wid is not None:
                ids.append(wid)
            else:
                ids.extend(BYTE_OFFSET + b for b in w.encode("utf-8"))
                ids.append(self.eow_id)
        return ids

    def decode(self, ids: Iterable[int]) -> str:
        out, buf = [], bytearray()
        for i in ids:
            i = int(i)
            if BYTE_OFFSET <= i < WORD_OFFSET:
                buf.append(i - BYTE_OFFSET)
                continue
            if buf:
                out.append(buf.decode("utf-8", errors="replace"))
                buf = bytearray()
            if i >= WORD_OFFSET:
                if i - WORD_OFFSET < len(self.words):
                    out.append(self.words[i - WORD_OFFSET])
        if buf:
            out.append(buf.decode("utf-8", errors="replace"))
        return " ".join(out)
