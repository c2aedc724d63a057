import numpy as np
import pytest

from emofuse import tensor as T
from emofuse.config import DataSection, EncoderSection
from emofuse.encoders import AudioClip, Encoders, FeatureStack, ResidualBlock, VideoClip
from emofuse.tensor import ConfigError, ShapeError, Tensor


@pytest.fixture(scope="module")
def enc():
    return Encoders(EncoderSection(), DataSection())


def clip(rng, frames=8):
    return VideoClip(rng.random((frames, 3, 8, 8)))


def test_visual_stack_shape(enc, rng):
    stack = enc.encode_visual(clip(rng))
    assert stack.layer_count == 24
    assert all(t.shape == (8, 64) for t in stack.layers)


def test_speech_stack_shape_and_zero_input(enc):
    stack = enc.encode_speech(AudioClip(np.zeros((20, 16))))
    assert stack.layer_count == 24 and stack.final.shape == (20, 64)
    assert all(np.isfinite(t.data).all() for t in stack.layers)


def test_deterministic_across_instances(rng):
    c = clip(rng)
    a = Encoders(EncoderSection(), DataSection()).encode_visual(c)
    b = Encoders(EncoderSection(), DataSection()).encode_visual(c)
    assert all(np.array_equal(x.data, y.data) for x, y in zip(a.layers, b.layers))


def test_taps_match_direct_indexing(enc, rng):
    stack = enc.encode_visual(clip(rng))
    taps = stack.tap([12, 16, 22])
    for i, t in zip([12, 16, 22], taps):
        assert t is stack.layers[i - 1]
    assert not np.array_equal(taps[0].data, taps[1].data)
    with pytest.raises(ConfigError):
        stack.layer(25)


def test_residual_block_formula(rng):
    with T.default_dtype(np.float64):
        blk = ResidualBlock(rng, 6)
    x = rng.normal(size=(3, 6))
    h = T.gelu_np(x @ blk.fc.weight.data + blk.fc.bias.data)
    ref = x + T.layer_norm_np(h, blk.norm.gamma.data, blk.norm.beta.data)
    np.testing.assert_allclose(blk.forward_np(x), ref, rtol=1e-12)


def test_encoders_are_frozen(enc):
    assert enc.named_parameters()
    assert not any(p.requires_grad for p in enc.named_parameters().values())


def test_face_single_frame(enc, rng):
    stack = enc.encode_face(clip(rng, frames=1))
    assert stack.final.shape == (1, 64)


def test_face_fusion_oracle(enc, rng):
    c = clip(rng, frames=3)
    face = enc.face
    feats = face.block_features(c.frames)
    assert [f.shape[1] for f in feats] == [16, 32, 48, 64]
    aligned = [f @ a.weight.data + a.bias.data for f, a in zip(feats, face.align)]
    fc1, fc2 = face.fuse.fc1, face.fuse.fc2
    h = np.concatenate(aligned, axis=1) @ fc1.weight.data + fc1.bias.data
    ref = T.gelu_np(h) @ fc2.weight.data + fc2.bias.data
    stack = enc.encode_face(c)
    assert stack.layer_count == 5
    np.testing.assert_allclose(stack.final.data, ref, rtol=1e-5, atol=1e-6)


def test_face_stage_depths_follow_taps(enc):
    assert [len(s.blocks) for s in enc.face.stages] == [6, 6, 6, 6]


def test_clip_validation():
    with pytest.raises(ShapeError):
        VideoClip(np.zeros((2, 1, 4, 4)))
    with pytest.raises(ValueError):
        VideoClip(np.full((1, 3, 4, 4), 2.0))
    with pytest.raises(ShapeError):
        AudioClip(np.zeros((0, 4)))
    with pytest.raises(ValueError):
        AudioClip(np.array([[np.nan]]))


def test_stack_rejects_ragged_layers():
    with pytest.raises(ShapeError):
        FeatureStack([Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 3)))], "visual")


def test_tap_beyond_depth_rejected():
    with pytest.raises(ConfigError):
        Encoders(EncoderSection(depth=20), DataSection())
