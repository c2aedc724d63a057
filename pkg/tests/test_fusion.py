import numpy as np
import pytest
from hypothesis import given, strategies as st

from emofuse import tensor as T
from emofuse.config import RunConfig, override
from emofuse.encoders import FeatureStack
from emofuse.fusion import (FusionEncoder, FusionExpert, GatingNetwork, LayerPairing, fusion_variant,
                            gate_and_fuse)
from emofuse.tensor import ConfigError, ShapeError, Tensor

from oracles import loop_attention


def lin(x, m):
    return x @ m.weight.data + m.bias.data


def expert_oracle(ex, s, v, heads):
    e_sq = lin(s, ex.query)
    att = loop_attention(e_sq, lin(v, ex.key), lin(v, ex.value), heads)
    e_m = lin(att, ex.out) + e_sq
    return lin(T.gelu_np(lin(e_m, ex.ffn.fc1)), ex.ffn.fc2) + e_m


def test_expert_matches_composition_oracle(rng):
    with T.default_dtype(np.float64):
        ex = FusionExpert(rng, 12, 10, 16, 4)
    s, v = rng.normal(size=(5, 12)), rng.normal(size=(7, 10))
    np.testing.assert_allclose(ex(Tensor(s), Tensor(v)).data, expert_oracle(ex, s, v, 4), rtol=1e-10, atol=1e-12)


def test_expert_single_visual_token(rng):
    with T.default_dtype(np.float64):
        ex = FusionExpert(rng, 8, 8, 8, 2)
    s, v = rng.normal(size=(3, 8)), rng.normal(size=(1, 8))
    out, w = ex(Tensor(s), Tensor(v), return_weights=True)
    assert np.all(w == 1.0)
    e_sq = lin(s, ex.query)
    e_m = lin(np.repeat(lin(v, ex.value), 3, axis=0), ex.out) + e_sq
    np.testing.assert_allclose(out.data, lin(T.gelu_np(lin(e_m, ex.ffn.fc1)), ex.ffn.fc2) + e_m, rtol=1e-12)


def test_expert_pure_residual_path(rng):
    with T.default_dtype(np.float64):
        ex = FusionExpert(rng, 8, 8, 8, 2)
    for m in (ex.out, ex.ffn.fc2):
        m.weight.data[:] = 0.0
        m.bias.data[:] = 0.0
    s = rng.normal(size=(4, 8))
    out = ex(Tensor(s), Tensor(rng.normal(size=(6, 8)))).data
    assert np.array_equal(out, lin(s, ex.query))


def test_expert_dim_mismatch(rng):
    ex = FusionExpert(rng, 8, 8, 8, 2)
    with pytest.raises(ShapeError):
        ex(Tensor(np.ones((2, 7))), Tensor(np.ones((2, 8))))


def test_zero_gate_is_uniform_mean(rng):
    gate = GatingNetwork(rng, 3, 8, 16)
    outs = [Tensor(rng.normal(size=(5, 8))) for _ in range(3)]
    fused, w = gate_and_fuse(gate, outs)
    assert np.all(w.data == np.float32(1.0) / np.float32(3.0)) or np.allclose(w.data, 1 / 3, atol=1e-7)
    np.testing.assert_allclose(fused.data, sum(o.data for o in outs) / 3, rtol=1e-6)


def test_identical_experts_fixed_point(rng):
    gate = GatingNetwork(rng, 3, 8, 16)
    for p in gate.named_parameters().values():
        p.data = rng.normal(size=p.shape).astype(p.dtype)
    x = Tensor(rng.normal(size=(4, 8)))
    fused, _ = gate_and_fuse(gate, [x, x, x])
    np.testing.assert_allclose(fused.data, x.data, rtol=1e-6)


def test_fused_matches_elementwise_loop(rng):
    with T.default_dtype(np.float64):
        gate = GatingNetwork(rng, 3, 4, 8)
        gate.fc2.weight.data = rng.normal(size=gate.fc2.weight.shape)
    outs = [Tensor(rng.normal(size=(3, 4))) for _ in range(3)]
    fused, w = gate_and_fuse(gate, outs)
    ref = np.zeros((3, 4))
    for i in range(3):
        for j in range(4):
            ref[i, j] = sum(w.data[i, e] * outs[e].data[i, j] for e in range(3))
    np.testing.assert_allclose(fused.data, ref, rtol=1e-13)


@given(st.integers(1, 8), st.integers(0, 2**31 - 1))
def test_gate_weights_convex(length, seed):
    r = np.random.default_rng(seed)
    with T.default_dtype(np.float64):
        gate = GatingNetwork(r, 3, 4, 8)
        gate.fc2.weight.data = 3.0 * r.normal(size=gate.fc2.weight.shape)
    w = gate.weights([Tensor(5.0 * r.normal(size=(length, 4))) for _ in range(3)]).data
    assert np.all((w >= 0) & (w <= 1))
    np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-12)


def test_gate_shape_errors(rng):
    gate = GatingNetwork(rng, 3, 4, 8)
    with pytest.raises(ShapeError):
        gate_and_fuse(gate, [Tensor(np.ones((2, 4))), Tensor(np.ones((3, 4))), Tensor(np.ones((2, 4)))])
    with pytest.raises(ShapeError):
        gate_and_fuse(gate, [Tensor(np.ones((2, 4)))] * 2)


def test_default_pairing():
    cfg = RunConfig().validate()
    pairing = LayerPairing.from_taps(cfg.encoder.speech_taps, cfg.encoder.visual_taps)
    assert pairing.pairs == [(16, 12), (18, 16), (22, 22)]
    cross = LayerPairing.from_taps(cfg.encoder.speech_taps, cfg.encoder.visual_taps, "cross_layer")
    assert cross.pairs == [(16, 22), (18, 16), (22, 12)]


class Recorder(FeatureStack):
    def __post_init__(self):
        super().__post_init__()
        object.__setattr__(self, "seen", [])

    def layer(self, index):
        self.seen.append(index)
        return super().layer(index)


def stacks(rng, tag_len=(("speech", 5), ("visual", 4))):
    return [Recorder([Tensor(rng.normal(size=(n, 64)).astype(np.float32)) for _ in range(24)], tag)
            for tag, n in tag_len]


@pytest.mark.parametrize("mode,expected", [("sequential", [12, 16, 22]), ("cross_layer", [22, 16, 12])])
def test_pairing_mode_changes_visual_taps(rng, mode, expected):
    cfg = override(RunConfig(), fusion__pairing=mode)
    enc = FusionEncoder(3, cfg)
    sp, vis = stacks(rng)
    enc(sp, vis)
    assert sp.seen == [16, 18, 22]
    assert vis.seen == expected


def test_two_expert_configuration(rng):
    cfg = override(RunConfig(), encoder__speech_taps=[18, 22], encoder__visual_taps=[16, 22], fusion__experts=2)
    enc = FusionEncoder(3, cfg)
    sp, vis = stacks(rng)
    fused, w = enc(sp, vis)
    assert fused.shape == (5, 64) and w.shape == (5, 2)


def test_variants(rng):
    sp, vis = stacks(rng)
    base = RunConfig()
    gated = FusionEncoder(3, base)
    avg = FusionEncoder(3, override(base, fusion__mode="average_weighting"))
    att = FusionEncoder(3, override(base, fusion__mode="attention_fusion"))
    f_att, w_att = att(sp, vis)
    assert w_att is None
    np.testing.assert_array_equal(f_att.data, att.experts[-1](sp.layer(22), vis.layer(22)).data)
    _, w_avg = avg(sp, vis)
    assert np.all(w_avg.data == 1.0 / 3)
    x = Tensor(rng.normal(size=(5, 64)).astype(np.float32))
    a, _ = gate_and_fuse(gated.gate, [x, x, x])
    b, _ = gate_and_fuse(avg.gate, [x, x, x], fixed_weights=True)
    np.testing.assert_allclose(a.data, b.data, rtol=1e-6)
    with pytest.raises(ConfigError):
        fusion_variant("sparse")


def test_experts_share_no_parameters():
    enc = FusionEncoder(3, RunConfig())
    ids = [{id(p) for p in e.named_parameters().values()} for e in enc.experts]
    assert not (ids[0] & ids[1]) and not (ids[1] & ids[2])
    assert not np.array_equal(enc.experts[0].query.weight.data, enc.experts[1].query.weight.data)
