import math
from types import SimpleNamespace

import numpy as np
import pytest

from emofuse import tensor as T
from emofuse.lm import LoRA, LoRAConfig, TinyLM, assemble, generate, lora_attach, lora_merge_check, mle_loss
from emofuse.optim import AdamState, adamw_step
from emofuse.tensor import ConfigError, Tensor


def small_lm(seed=0, vocab=40, dim=16, dtype=np.float64):
    with T.default_dtype(dtype):
        return TinyLM(np.random.default_rng(seed), vocab=vocab, dim=dim, layers=2, heads=2, max_len=32)


def block(x, tag="probe"):
    return SimpleNamespace(tokens=Tensor(x), stream_tag=tag)


def test_causality(rng):
    lm = small_lm()
    x = rng.normal(size=(8, 16))
    base = lm.logits(Tensor(x)).data
    x2 = x.copy()
    x2[5:] += rng.normal(size=(3, 16))
    out = lm.logits(Tensor(x2)).data
    assert np.array_equal(out[:5], base[:5])
    assert not np.allclose(out[5:], base[5:])


def test_fresh_lora_is_bitwise_identity(rng):
    lm = small_lm()
    x = Tensor(rng.normal(size=(6, 16)))
    before = lm.logits(x).data
    lora_attach(lm, LoRAConfig(r=4, alpha=2, seed=1))
    assert np.array_equal(lm.logits(x).data, before)
    assert lora_merge_check(lm, x)


def test_lora_scaling_and_rank(rng):
    assert LoRAConfig(32, 16).scaling == 0.5
    with T.default_dtype(np.float64):
        mod = LoRA(rng, 64, 64, 32, 16)
    mod.B.data = rng.normal(size=mod.B.shape)
    x = rng.normal(size=(3, 64))
    np.testing.assert_allclose(mod(Tensor(x)).data, 0.5 * x @ mod.A.data.T @ mod.B.data.T, rtol=1e-12)
    np.testing.assert_allclose(mod(Tensor(x)).data, x @ mod.delta_weight(), rtol=1e-10)
    assert np.linalg.matrix_rank(mod.delta_weight()) <= 32


def test_lora_rank_must_fit(rng):
    with pytest.raises(ConfigError):
        LoRA(rng, 16, 16, 17, 8)
    with pytest.raises(ConfigError):
        lora_attach(small_lm(), LoRAConfig(r=32, alpha=16))


def test_lora_targets_query_and_value_only(rng):
    lm = small_lm()
    lora_attach(lm, LoRAConfig(r=4, alpha=8))
    names = [n for n in lm.named_parameters() if "lora" in n]
    assert names and all(".lora_q." in n or ".lora_v." in n for n in names)


def test_assemble_layout():
    lm = small_lm()
    blocks = [block(np.zeros((32, 16))), block(np.zeros((32, 16))), block(np.zeros((4, 16))),
              block(np.zeros((1, 16)))]
    seq = assemble(lm, blocks, list(range(10, 20)), [5, 6, 7, 8, 2])
    assert seq.length == 69 + 10 + 5 and seq.prefix_len == 69
    assert seq.loss_mask.sum() == 5 and np.all(seq.loss_mask[-5:])
    assert np.all(seq.token_ids[:69] == -1)


def test_assemble_rejects_empty_target_and_wrong_dim():
    lm = small_lm()
    with pytest.raises(ValueError):
        assemble(lm, [block(np.zeros((2, 16)))], [4], [])
    with pytest.raises(T.ShapeError):
        assemble(lm, [block(np.zeros((2, 8)))], [4], [5])


def test_uniform_logits_give_log_vocab():
    lm = small_lm(vocab=512)
    lm.head.weight.data[:] = 0.0
    lm.head.bias.data[:] = 0.0
    seq = assemble(lm, [block(np.ones((3, 16)))], [7, 8], [9, 10, 11])
    assert float(mle_loss(lm, seq).data) == pytest.approx(math.log(512), abs=1e-12)


def test_loss_matches_manual_cross_entropy(rng):
    lm = small_lm()
    seq = assemble(lm, [block(rng.normal(size=(2, 16)))], [3, 4], [5, 6, 7])
    logits = lm.logits(seq.embeddings).data
    nll = []
    for pos in range(4, 7):
        row = logits[pos - 1]
        lse = row.max() + math.log(np.exp(row - row.max()).sum())
        nll.append(lse - row[seq.token_ids[pos]])
    assert float(mle_loss(lm, seq).data) == pytest.approx(np.mean(nll), abs=1e-12)


def test_perfect_logits_near_zero_loss():
    lm = small_lm()
    lm.head.weight.data[:] = 0.0
    lm.head.bias.data[:] = 0.0
    lm.head.bias.data[9] = 60.0
    seq = assemble(lm, [block(np.ones((2, 16)))], [3], [9, 9])
    assert float(mle_loss(lm, seq).data) < 1e-9


def test_supervise_mask_limits_loss(rng):
    lm = small_lm()
    seq = assemble(lm, [block(rng.normal(size=(2, 16)))], [3], [5, 6, 7], supervise=[False, True, True])
    assert seq.loss_mask.sum() == 2
    with pytest.raises(ValueError):
        mle_loss(lm, assemble(lm, [block(rng.normal(size=(2, 16)))], [3], [5], supervise=[False]))


def test_generate_contract(rng):
    lm = small_lm()
    prefix = Tensor(rng.normal(size=(4, 16)))
    assert len(generate(lm, prefix, 1, eos_id=2)) == 1
    a, b = generate(lm, prefix, 6, eos_id=2), generate(lm, prefix, 6, eos_id=2)
    assert a == b
    with pytest.raises(ValueError):
        generate(lm, prefix, 0, eos_id=2)
    with pytest.raises(ValueError):
        generate(lm, prefix, 3, eos_id=2, mode="beam")


def test_generate_stops_at_eos():
    lm = small_lm()
    lm.head.weight.data[:] = 0.0
    lm.head.bias.data[:] = 0.0
    lm.head.bias.data[2] = 5.0
    assert generate(lm, Tensor(np.ones((2, 16))), 10, eos_id=2) == [2]


def test_overfit_then_greedy_decode_reproduces_target(rng):
    lm = small_lm(seed=3)
    prefix = rng.normal(size=(3, 16))
    prompt, target = [10, 11], [20, 21, 22, 2]
    params = lm.named_parameters()
    state = AdamState()
    for _ in range(300):
        loss = mle_loss(lm, assemble(lm, [block(prefix)], prompt, target))
        T.backward(loss)
        adamw_step(params, {n: p.grad for n, p in params.items()}, 3e-3, state, weight_decay=0.0)
        for p in params.values():
            p.grad = None
    assert float(loss.data) < 0.01
    x = T.concat([Tensor(prefix), lm.embed(prompt)], axis=0)
    assert generate(lm, x, 8, eos_id=2) == target
