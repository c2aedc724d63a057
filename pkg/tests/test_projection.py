import numpy as np
import pytest
from hypothesis import given, strategies as st

from emofuse import tensor as T
from emofuse.config import RunConfig
from emofuse.encoders import Encoders, VideoClip, AudioClip
from emofuse.projection import (Adapter, Projector, QFormerBlock, TemporalQueries, TokenBlock,
                                token_blocks_from_arrays, token_blocks_to_arrays)
from emofuse.tensor import ShapeError, Tensor

from oracles import loop_attention


@pytest.fixture(scope="module")
def parts():
    cfg = RunConfig().validate()
    return cfg, Encoders(cfg.encoder, cfg.data), Projector(5, cfg)


def test_qformer_fixed_output_length(rng):
    blk = QFormerBlock(rng, 32, 64, 64, 4)
    assert blk(rng.normal(size=(100, 64))).shape == (32, 64)


@given(st.integers(1, 256))
def test_qformer_length_invariant(length):
    r = np.random.default_rng(length)
    blk = QFormerBlock(np.random.default_rng(0), 6, 16, 8, 2, layers=1)
    assert blk(r.normal(size=(length, 8))).shape == (6, 16)


def test_qformer_single_feature_weights_one(rng):
    blk = QFormerBlock(rng, 5, 16, 8, 2)
    _, weights = blk(rng.normal(size=(1, 8)), return_weights=True)
    assert all(np.all(w == 1.0) for w in weights)


def test_qformer_matches_straight_line_composition(rng):
    with T.default_dtype(np.float64):
        blk = QFormerBlock(rng, 3, 8, 6, 2)
    feats = rng.normal(size=(5, 6))

    def ln(x, m):
        return T.layer_norm_np(x, m.gamma.data, m.beta.data)

    def lin(x, m):
        return x @ m.weight.data + m.bias.data

    def attn(x, ctx, a):
        out = loop_attention(lin(x, a.q), lin(ctx, a.k), lin(ctx, a.v), 2)
        return lin(out, a.o)

    q = blk.queries.data
    for layer in blk.layers:
        h = ln(q, layer.ln_self)
        q = q + attn(h, h, layer.self_attn)
        q = q + attn(ln(q, layer.ln_cross), feats, layer.cross_attn)
        f = layer.ffn
        q = q + lin(T.gelu_np(lin(ln(q, layer.ln_ffn), f.fc1)), f.fc2)
    np.testing.assert_allclose(blk(feats).data, q, rtol=1e-9, atol=1e-11)


def test_temporal_single_frame_gives_value_projection(rng):
    with T.default_dtype(np.float64):
        tm = TemporalQueries(rng, 4, 16, 4)
    e_f = rng.normal(size=(1, 16))
    out = tm(e_f).data
    v = e_f @ tm.value.weight.data + tm.value.bias.data
    np.testing.assert_allclose(out, np.repeat(v, 4, axis=0), rtol=1e-12)


def test_temporal_matches_loop_oracle(rng):
    with T.default_dtype(np.float64):
        tm = TemporalQueries(rng, 4, 16, 4)
    e_f = rng.normal(size=(3, 16))
    k = e_f @ tm.key.weight.data + tm.key.bias.data
    v = e_f @ tm.value.weight.data + tm.value.bias.data
    np.testing.assert_allclose(tm(e_f).data, loop_attention(tm.queries.data, k, v, 4), rtol=1e-10)


def test_adapter_zero_and_identity(rng):
    with T.default_dtype(np.float64):
        ad = Adapter(rng, 8, 8)
    x = rng.normal(size=(3, 8))
    for lin in (ad.fc1, ad.fc2):
        lin.weight.data[:] = 0.0
    assert np.all(ad(Tensor(x)).data == 0.0)
    ad.fc1.weight.data = np.eye(8)
    ad.fc2.weight.data = np.eye(8)
    np.testing.assert_allclose(ad(Tensor(x)).data, T.gelu_np(x))


def test_adapter_random_oracle_and_dim_check(rng):
    with T.default_dtype(np.float64):
        ad = Adapter(rng, 6, 10)
    x = rng.normal(size=(4, 6))
    ref = T.gelu_np(x @ ad.fc1.weight.data + ad.fc1.bias.data) @ ad.fc2.weight.data + ad.fc2.bias.data
    np.testing.assert_allclose(ad(Tensor(x)).data, ref, rtol=1e-12)
    with pytest.raises(ShapeError):
        ad(Tensor(rng.normal(size=(4, 5))))


def test_default_token_counts(parts, rng):
    cfg, enc, proj = parts
    c = VideoClip(rng.random((8, 3, 8, 8)))
    vis, sp, face = enc.encode_visual(c), enc.encode_speech(AudioClip(rng.normal(size=(20, 16)))), enc.encode_face(c)
    fused = Tensor(rng.normal(size=(20, 64)).astype(np.float32))
    blocks = proj(vis, sp, face, fused)
    assert [(b.stream_tag, b.length) for b in blocks] == [("visual", 32), ("speech", 32), ("face", 4), ("fusion", 1)]
    assert sum(b.length for b in blocks) == 69
    assert all(b.tokens.shape[1] == cfg.lm.dim for b in blocks)


def test_single_frame_single_step_same_counts(parts, rng):
    _, enc, proj = parts
    c = VideoClip(rng.random((1, 3, 8, 8)))
    blocks = proj(enc.encode_visual(c), enc.encode_speech(AudioClip(rng.normal(size=(1, 16)))),
                  enc.encode_face(c), Tensor(np.ones((1, 64), dtype=np.float32)))
    assert [b.length for b in blocks] == [32, 32, 4, 1]


def test_missing_stream_error(parts, rng):
    _, enc, proj = parts
    c = VideoClip(rng.random((2, 3, 8, 8)))
    with pytest.raises(ValueError, match="speech"):
        proj(enc.encode_visual(c), None, enc.encode_face(c), None, use_fusion=False)


def test_token_blocks_round_trip_through_checkpoint(rng):
    from emofuse import checkpoint
    blocks = [TokenBlock(Tensor(rng.normal(size=(n, 4))), tag)
              for tag, n in (("visual", 3), ("speech", 2), ("face", 4), ("fusion", 1))]
    back = token_blocks_from_arrays(checkpoint.loads(checkpoint.dumps(token_blocks_to_arrays(blocks))))
    assert [b.stream_tag for b in back] == ["visual", "speech", "face", "fusion"]
    assert all(np.array_equal(a.tokens.data, b.tokens.data) for a, b in zip(blocks, back))
