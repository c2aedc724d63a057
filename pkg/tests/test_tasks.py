from fractions import Fraction

import numpy as np
import pytest
from sklearn.linear_model import LogisticRegression

from emofuse.config import DataSection, EncoderSection
from emofuse.encoders import Encoders
from emofuse.tasks import (DEFAULT, EMOTIONS, IDENTIFIERS, INTENTS, OV_VOCAB, THINK_CLOSE, THINK_OPEN, Mixture,
                           TaskForge, build_tokenizer, read_corpus, restructure_dialogue, sample_task,
                           write_corpus)

FORGE = TaskForge()


@pytest.mark.parametrize("task", list(IDENTIFIERS))
def test_identifier_and_label_space(task, rng):
    s = FORGE.generate(task, rng)
    assert s.identifier == IDENTIFIERS[task]
    assert s.prompt.startswith(IDENTIFIERS[task])


def test_msa_uses_recognition_identifier(rng):
    s = FORGE.generate("MSA", rng)
    assert s.identifier == "[Recognition]" and s.target in ("positive", "negative", "neutral")


def test_ov_label_count(rng):
    counts = {len(FORGE.generate("OV_MER", rng).labels) for _ in range(60)}
    assert counts == {1, 2, 3}
    s = FORGE.generate("OV_MER", rng)
    assert all(w in OV_VOCAB for w in s.labels) and s.target == " ".join(s.labels)


def test_generation_is_seed_deterministic():
    a = FORGE.generate("ERG", np.random.default_rng(5))
    b = FORGE.generate("ERG", np.random.default_rng(5))
    assert a.prompt == b.prompt and a.target == b.target
    assert np.array_equal(a.video.frames, b.video.frames) and np.array_equal(a.audio.features, b.audio.features)


def test_templates(rng):
    mir = FORGE.generate("MIR", rng)
    assert mir.prompt.startswith("[Intent] Recognize speaker's intention")
    assert all(i in mir.prompt for i in INTENTS)
    erg = FORGE.generate("ERG", rng)
    assert erg.target.startswith(THINK_OPEN) and THINK_CLOSE in erg.target
    assert erg.prompt.rstrip().endswith("user: " + erg.dialogue.query_text)
    mer = FORGE.generate("MER", rng, labels=("sad",))
    assert mer.target == "sad" and all(e in mer.prompt for e in EMOTIONS)


def test_unknown_task_and_bad_labels(rng):
    with pytest.raises(ValueError):
        FORGE.generate("XYZ", rng)
    with pytest.raises(ValueError):
        FORGE.generate("MER", rng, labels=("joyful",))


def test_restructure_three_turn_dialogue():
    turns = [{"query": f"q{i}", "response": f"r{i}"} for i in range(3)]
    items = restructure_dialogue(turns)
    assert [len(it.history) for it in items] == [0, 1, 2]
    for i, it in enumerate(items):
        assert it.query_text == f"q{i}" and it.target == f"r{i}"
        if i:
            assert items[i - 1].history == it.history[:i - 1]
            assert it.history[-1] == (f"q{i - 1}", f"r{i - 1}")
    with pytest.raises(ValueError):
        restructure_dialogue([])


def test_default_mixture_probabilities():
    p = DEFAULT.exact_probabilities()
    assert p == {"MER": Fraction(18, 100), "OV_MER": Fraction(28, 100), "MIR": Fraction(5, 100),
                 "ERI": Fraction(31, 100), "ERG": Fraction(18, 100)}
    assert sum(p.values()) == 1


def test_mixture_degenerate_cases(rng):
    only = Mixture({"MER": 1.0, "MIR": 0.0})
    assert {sample_task(only, rng) for _ in range(200)} == {"MER"}
    with pytest.raises(ValueError):
        Mixture({"MER": 0.0, "MIR": 0.0})
    with pytest.raises(ValueError):
        Mixture({"MER": -1.0, "MIR": 2.0})
    with pytest.raises(ValueError):
        Mixture({"FOO": 1.0})


def test_mixture_unnormalised_weights_renormalise():
    m = Mixture({"MER": 2, "MIR": 6})
    assert m.probabilities() == {"MER": 0.25, "MIR": 0.75}


def test_labels_linearly_recoverable_from_frozen_features():
    """A linear probe on pooled frozen-encoder features recovers the emotion label."""
    enc = Encoders(EncoderSection(), DataSection())
    rng = np.random.default_rng(0)
    X, y = [], []
    for i in range(280):
        lab = EMOTIONS[i % len(EMOTIONS)]
        s = FORGE.generate("MER", rng, labels=(lab,))
        vis = enc.encode_visual(s.video).final.data.mean(axis=0)
        sp = enc.encode_speech(s.audio).final.data.mean(axis=0)
        X.append(np.concatenate([vis, sp]))
        y.append(lab)
    X, y = np.array(X), np.array(y)
    clf = LogisticRegression(max_iter=2000).fit(X[:210], y[:210])
    assert clf.score(X[210:], y[210:]) > 0.9


def test_corpus_round_trip(tmp_path, rng):
    samples = [FORGE.generate(t, rng, sample_id=f"s{i}") for i, t in enumerate(["MER", "ERG", "OV_MER"])]
    path = write_corpus(samples, tmp_path)
    back = read_corpus(path)
    for a, b in zip(samples, back):
        assert (a.prompt, a.target, a.labels, a.task) == (b.prompt, b.target, b.labels, b.task)
        assert np.array_equal(a.video.frames, b.video.frames)
        assert np.array_equal(a.audio.features, b.audio.features)
    assert back[1].dialogue.history == samples[1].dialogue.history


def test_tokenizer_covers_every_target_word(rng):
    tok = build_tokenizer()
    for task in IDENTIFIERS:
        for _ in range(10):
            s = FORGE.generate(task, rng)
            assert all(w in tok.word_to_id for w in s.target.split())
