"""Frozen toy encoders that expose every intermediate layer.

Each block is ``x + layer_norm(gelu(x W + b))``; "layer ``i``" is the output
of block ``i`` (1-based).  Encoders are never trained, so forwards run in
plain numpy without touching the tape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .config import DataSection, EncoderSection
from .tensor import ConfigError, ShapeError, Tensor, gelu_np, layer_norm_np

STREAMS = ("visual", "speech", "face")


@dataclass
class VideoClip:
    frames: np.ndarray  # [F, 3, H, W] in [0, 1]

    def __post_init__(self):
        f = np.asarray(self.frames)
        if f.ndim != 4 or f.shape[1] != 3:
            raise ShapeError(f"video frames must be [F, 3, H, W], got {f.shape}")
        if f.shape[0] < 1:
            raise ShapeError("video needs at least one frame")
        if f.min() < 0.0 or f.max() > 1.0:
            raise ValueError("pixel values must lie in [0, 1]")
        self.frames = f

    @property
    def frame_count(self) -> int:
        return self.frames.shape[0]


@dataclass
class AudioClip:
    features: np.ndarray  # [T, D]

    def __post_init__(self):
        a = np.asarray(self.features)
        if a.ndim != 2 or a.shape[0] < 1:
            raise ShapeError(f"audio features must be [T>=1, D], got {a.shape}")
        if not np.isfinite(a).all():
            raise ValueError("audio features must be finite")
        self.features = a


@dataclass
class FeatureStack:
    layers: list  # list of Tensor [L, D]
    stream_tag: str

    def __post_init__(self):
        if self.stream_tag not in STREAMS:
            raise ValueError(f"unknown stream tag {self.stream_tag!r}")
        shapes = {t.shape for t in self.layers}
        if len(shapes) != 1:
            raise ShapeError(f"layers in one stack must share a shape, got {sorted(shapes)}")

    @property
    def layer_count(self) -> int:
        return len(self.layers)

    def layer(self, index: int) -> Tensor:
        """1-based layer lookup."""
        if not 1 <= index <= len(self.layers):
            raise ConfigError(f"layer {index} requested from a {len(self.layers)}-layer {self.stream_tag} stack")
        return self.layers[index - 1]

    def tap(self, indices) -> list:
        return [self.layer(i) for i in indices]

    @property
    def final(self) -> Tensor:
        return self.layers[-1]


class ResidualBlock(nn.Module):
    def __init__(self, rng, dim: int):
        self.fc = nn.Linear(rng, dim, dim)
        self.norm = nn.LayerNorm(dim)

    def forward_np(self, x: np.ndarray) -> np.ndarray:
        h = gelu_np(x @ self.fc.weight.data + self.fc.bias.data)
        return x + layer_norm_np(h, self.norm.gamma.data, self.norm.beta.data)


class ToyEncoder(nn.Module):
    """Input projection followed by ``depth`` residual blocks."""

    def __init__(self, rng, d_in: int, dim: int, depth: int, stream_tag: str):
        self.stream_tag = stream_tag
        self.embed = nn.Linear(rng, d_in, dim)
        self.blocks = [ResidualBlock(rng, dim) for _ in range(depth)]
        self.set_trainable(False)

    @property
    def depth(self) -> int:
        return len(self.blocks)

    def encode_np(self, x: np.ndarray) -> list:
        h = x @ self.embed.weight.data + self.embed.bias.data
        out = []
        for blk in self.blocks:
            h = blk.forward_np(h)
            out.append(h)
        return out

    def __call__(self, x: np.ndarray) -> FeatureStack:
        x = np.asarray(x, dtype=self.embed.weight.dtype)
        return FeatureStack([Tensor(h) for h in self.encode_np(x)], self.stream_tag)


class FaceEncoder(nn.Module):
    """Per-frame multiscale backbone with MLP fusion of four tapped blocks.

    The backbone has one stage per tap (stage ``s`` spans blocks
    ``(taps[s-1], taps[s]]`` at width ``block_dims[s]``); each tapped block is
    aligned by a linear map to ``face_dim``, the four aligned features are
    concatenated and fused by ``Linear -> GeLU -> Linear``.
    """

    def __init__(self, rng, d_in: int, taps, block_dims, face_dim: int):
        self.taps = list(taps)
        self.block_dims = list(block_dims)
        self.embed = nn.Linear(rng, d_in, block_dims[0])
        stages, transitions = [], []
        prev_tap, prev_dim = 0, block_dims[0]
        for tap, dim in zip(self.taps, self.block_dims):
            transitions.append(nn.Linear(rng, prev_dim, dim))
            stages.append([ResidualBlock(rng, dim) for _ in range(tap - prev_tap)])
            prev_tap, prev_dim = tap, dim
        self.transitions = transitions
        self.stages = [_Stage(s) for s in stages]
        self.align = [nn.Linear(rng, d, face_dim) for d in self.block_dims]
        self.fuse = nn.FeedForward(rng, face_dim * len(self.taps), face_dim, face_dim)
        self.face_dim = face_dim
        self.set_trainable(False)

    @property
    def depth(self) -> int:
        return self.taps[-1]

    def block_features(self, frames: np.ndarray) -> list:
        """Raw per-frame features of the tapped blocks (widths ``block_dims``)."""
        x = frames.reshape(frames.shape[0], -1).astype(self.embed.weight.dtype)
        h = x @ self.embed.weight.data + self.embed.bias.data
        feats = []
        for trans, stage in zip(self.transitions, self.stages):
            h = h @ trans.weight.data + trans.bias.data
            for blk in stage.blocks:
                h = blk.forward_np(h)
            feats.append(h)
        return feats

    def fuse_np(self, feats: list) -> tuple[list, np.ndarray]:
        aligned = [f @ a.weight.data + a.bias.data for f, a in zip(feats, self.align)]
        cat = np.concatenate(aligned, axis=-1)
        fc1, fc2 = self.fuse.fc1, self.fuse.fc2
        e_f = gelu_np(cat @ fc1.weight.data + fc1.bias.data) @ fc2.weight.data + fc2.bias.data
        return aligned, e_f

    def __call__(self, clip: VideoClip) -> FeatureStack:
        aligned, e_f = self.fuse_np(self.block_features(clip.frames))
        return FeatureStack([Tensor(a) for a in aligned] + [Tensor(e_f)], "face")


class _Stage(nn.Module):
    def __init__(self, blocks):
        self.blocks = blocks


class Encoders(nn.Module):
    """The three frozen encoders, seeded from ``encoder.seed``."""

    def __init__(self, enc: EncoderSection, data: DataSection):
        needed = max(list(enc.visual_taps) + list(enc.speech_taps))
        if needed > enc.depth:
            raise ConfigError(f"tapped layer {needed} exceeds encoder depth {enc.depth}")
        pixels = 3 * data.height * data.width
        self.visual = ToyEncoder(np.random.default_rng([enc.seed, 0]), pixels, enc.dim, enc.depth, "visual")
        self.speech = ToyEncoder(np.random.default_rng([enc.seed, 1]), data.audio_dim, enc.dim, enc.depth, "speech")
        self.face = FaceEncoder(np.random.default_rng([enc.seed, 2]), pixels, enc.face_taps,
                                enc.face_block_dims, enc.face_dim)

    def encode_visual(self, clip: VideoClip) -> FeatureStack:
        return self.visual(clip.frames.reshape(clip.frame_count, -1))

    def encode_speech(self, clip: AudioClip) -> FeatureStack:
        return self.speech(clip.features)

    def encode_face(self, clip: VideoClip) -> FeatureStack:
        return self.face(clip)


def encode_visual(clip: VideoClip, encoders: Encoders) -> FeatureStack:
    return encoders.encode_visual(clip)


def encode_speech(clip: AudioClip, encoders: Encoders) -> FeatureStack:
    return encoders.encode_speech(clip)


def encode_face(clip: VideoClip, encoders: Encoders) -> FeatureStack:
    return encoders.encode_face(clip)
