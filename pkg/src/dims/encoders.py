"""Feature encoders: article tokens to contextual states, frames to
segment-level recurrent states.

The article side is a bidirectional LSTM over word embeddings. The video
side splits candidate frames into fixed-length segments, featurizes each
frame (a small conv stack for raw images, or a linear map over
precomputed vectors), and runs a bidirectional LSTM within each segment.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .layers import BiLstm, Linear
from .tensor import ParameterStore, Tensor


class InputError(ValueError):
    """Encoder input violates its contract (empty sequence, bad ids, ...)."""


@dataclass
class ArticleEncoding:
    states: Tensor          # (T_d, d) per-token states
    final: Tensor           # (d,) joined final states of both directions


@dataclass
class VideoEncoding:
    frame_features: list[Tensor]   # per segment, (T_f, d) post-relu frame features
    segment_states: list[Tensor]   # per segment, (T_f, d) recurrent states
    summaries: Tensor              # (T_s, d) per-segment final states
    num_real_frames: int           # candidate count before last-segment padding


class ArticleEncoder:
    def __init__(self, store: ParameterStore, embedding: Tensor, hidden_dim: int,
                 max_steps: int, rng: np.random.Generator, std: float):
        self.embedding = embedding
        self.max_steps = max_steps
        self.rnn = BiLstm(store, "article_rnn", embedding.shape[1], hidden_dim, rng, std)

    def encode(self, token_ids: list[int]) -> ArticleEncoding:
        if not token_ids:
            raise InputError("article is empty")
        if len(token_ids) > self.max_steps:
            raise InputError(f"article has {len(token_ids)} tokens, limit is {self.max_steps}")
        vocab = self.embedding.shape[0]
        if any(i < 0 or i >= vocab for i in token_ids):
            raise InputError("article token id outside the vocabulary")
        emb = T.embedding(self.embedding, token_ids)
        states, final = self.rnn.encode([emb[t] for t in range(len(token_ids))])
        return ArticleEncoding(states=states, final=final)


def segment_frames(frames: list, segment_len: int) -> list[list]:
    """Split frames into contiguous chunks of segment_len, repeating the
    final frame to fill the last chunk."""
    if not frames:
        raise InputError("video has no frames")
    if segment_len < 1:
        raise InputError("segment_len must be >= 1")
    segments = []
    for start in range(0, len(frames), segment_len):
        chunk = list(frames[start:start + segment_len])
        while len(chunk) < segment_len:
            chunk.append(chunk[-1])
        segments.append(chunk)
    return segments


class ConvFeaturizer:
    """Three strided 3x3 conv blocks (8, 16, 32 channels), global average
    pool, then a linear map to the output width."""

    CHANNELS = (8, 16, 32)
    MIN_SIDE = 15    # smallest input side that survives three stride-2 valid convs

    def __init__(self, store: ParameterStore, name: str, in_channels: int, out_dim: int,
                 rng: np.random.Generator, std: float):
        chans = (in_channels,) + self.CHANNELS
        self.weights = []
        self.biases = []
        for k in range(3):
            self.weights.append(store.add(f"{name}.conv{k}.w", (3, 3, chans[k], chans[k + 1]), rng, std))
            self.biases.append(store.add(f"{name}.conv{k}.b", (chans[k + 1],), rng, std))
        self.out = Linear(store, f"{name}.out", self.CHANNELS[-1], out_dim, rng, std)

    def __call__(self, frame: Tensor) -> Tensor:
        x = frame
        for w, b in zip(self.weights, self.biases):
            x = T.relu(T.conv2d(x, w, b, stride=2))
        h, wd, c = x.shape
        pooled = T.tmean(T.reshape(x, (h * wd, c)), axis=0)
        return self.out(pooled)


class FrameFeaturizer:
    """Turns segments of frames into (T_f, d) feature matrices M = relu(F_v(O)).

    O comes from either the conv stack (raw frames) or the vectors
    themselves (precomputed features).
    """

    def __init__(self, store: ParameterStore, kind: str, hidden_dim: int, feature_dim: int,
                 in_channels: int, rng: np.random.Generator, std: float):
        if kind not in ("conv", "passthrough"):
            raise InputError(f"unknown featurizer {kind!r}")
        self.kind = kind
        self.conv = None
        if kind == "conv":
            self.conv = ConvFeaturizer(store, "frame_conv", in_channels, hidden_dim, rng, std)
            in_dim = hidden_dim
        else:
            in_dim = feature_dim
        self.project = Linear(store, "frame_project", in_dim, hidden_dim, rng, std)

    def featurize_segment(self, frames: list[np.ndarray]) -> Tensor:
        outs = []
        for f in frames:
            arr = np.asarray(f)
            if self.kind == "conv":
                if arr.ndim != 3:
                    raise InputError(f"conv featurizer expects (H,W,C) frames, got shape {arr.shape}")
                outs.append(self.conv(T.tensor(arr)))
            else:
                if arr.ndim != 1:
                    raise InputError(f"passthrough featurizer expects feature vectors, got shape {arr.shape}")
                outs.append(T.tensor(arr))
        return T.relu(self.project(T.stack(outs)))


class SegmentEncoder:
    def __init__(self, store: ParameterStore, hidden_dim: int,
                 rng: np.random.Generator, std: float):
        self.rnn = BiLstm(store, "segment_rnn", hidden_dim, hidden_dim, rng, std)

    def encode(self, featurized_segments: list[Tensor], num_real_frames: int) -> VideoEncoding:
        states, summaries = [], []
        for feats in featurized_segments:
            seg_states, seg_final = self.rnn.encode([feats[j] for j in range(feats.shape[0])])
            states.append(seg_states)
            summaries.append(seg_final)
        return VideoEncoding(frame_features=featurized_segments, segment_states=states,
                             summaries=T.stack(summaries), num_real_frames=num_real_frames)
