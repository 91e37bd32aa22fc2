"""Video/article fusion.

Two pieces: self-attention over segment summaries whose output rows are
gated by their relevance to the article's final state, and a two-way
global attention that yields video-aware token states and article-aware
segment states from one score matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .layers import Linear
from .tensor import ParameterStore, Tensor


@dataclass
class InteractionOutput:
    conditional_segments: Tensor        # (T_s, d) gated self-attention output
    condition_gates: Tensor | None      # (T_s,) per-segment gate values, None when bypassed
    attention_map: Tensor | None        # (T_d, T_s) raw two-way scores, None when bypassed
    video_aware_article: Tensor         # (T_d, d)
    article_aware_segments: Tensor      # (T_s, d)


class SelfAttentionLayer:
    """Dot-product self-attention plus a feed-forward sublayer, each wrapped
    in residual + layer norm.

    scale_position picks where the 1/sqrt(d) factor sits: on the attended
    value sum ("values") or on the score logits ("logits").
    """

    def __init__(self, store: ParameterStore, name: str, dim: int, scale_position: str,
                 eps: float, rng: np.random.Generator, std: float):
        self.dim = dim
        self.scale_position = scale_position
        self.eps = eps
        self.query = Linear(store, f"{name}.query", dim, dim, rng, std)
        self.key = Linear(store, f"{name}.key", dim, dim, rng, std)
        self.value = Linear(store, f"{name}.value", dim, dim, rng, std)
        self.ff1 = Linear(store, f"{name}.ff1", dim, dim, rng, std)
        self.ff2 = Linear(store, f"{name}.ff2", dim, dim, rng, std)
        self.norm1_gain = store.add(f"{name}.norm1.gain", (dim,), init=np.ones(dim))
        self.norm1_bias = store.add(f"{name}.norm1.bias", (dim,), init=np.zeros(dim))
        self.norm2_gain = store.add(f"{name}.norm2.gain", (dim,), init=np.ones(dim))
        self.norm2_bias = store.add(f"{name}.norm2.bias", (dim,), init=np.zeros(dim))

    def attend(self, x: Tensor) -> Tensor:
        """The bare attention aggregate, before residual wiring."""
        q = self.query(x)
        k = self.key(x)
        v = self.value(x)
        logits = T.matmul(q, T.transpose(k))
        if self.scale_position == "logits":
            logits = logits * (1.0 / math.sqrt(self.dim))
        weights = T.softmax(logits, axis=-1)
        attended = T.matmul(weights, v)
        if self.scale_position == "values":
            attended = attended * (1.0 / math.sqrt(self.dim))
        return attended

    def __call__(self, x: Tensor) -> Tensor:
        h = T.layer_norm(x + self.attend(x), self.norm1_gain, self.norm1_bias, self.eps)
        ff = self.ff2(T.relu(self.ff1(h)))
        return T.layer_norm(h + ff, self.norm2_gain, self.norm2_bias, self.eps)


class ConditionalSelfAttention:
    """N stacked self-attention layers over segment summaries, then a
    per-segment sigmoid gate driven by the article's final state."""

    def __init__(self, store: ParameterStore, dim: int, layers: int, scale_position: str,
                 eps: float, rng: np.random.Generator, std: float):
        self.layers = [SelfAttentionLayer(store, f"cond_attn.layer{i}", dim, scale_position,
                                          eps, rng, std)
                       for i in range(layers)]
        self.gate = Linear(store, "cond_attn.gate", dim, 1, rng, std)

    def __call__(self, summaries: Tensor, article_final: Tensor) -> tuple[Tensor, Tensor]:
        x = summaries
        for layer in self.layers:
            x = layer(x)
        # gate reads the original summaries, scales the stack output
        gate_in = T.mul_rowvec(summaries, article_final)
        gates = T.reshape(T.sigmoid(self.gate(gate_in)), (summaries.shape[0],))
        return T.rowscale(x, gates), gates


class GlobalAttention:
    """Two-way attention between token states and segment summaries.

    The raw score matrix is kept for export; attended sums use row/column
    softmax weights by default, or the raw scores when normalize="raw".
    """

    def __init__(self, store: ParameterStore, dim: int, normalize: str,
                 rng: np.random.Generator, std: float):
        self.normalize = normalize
        self.article_proj = Linear(store, "global_attn.article", dim, dim, rng, std)
        self.segment_proj = Linear(store, "global_attn.segment", dim, dim, rng, std)

    def __call__(self, article_states: Tensor, summaries: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        scores = T.matmul(self.article_proj(article_states),
                          T.transpose(self.segment_proj(summaries)))   # (T_d, T_s)
        if self.normalize == "softmax":
            row_w = T.softmax(scores, axis=1)
            col_w = T.softmax(scores, axis=0)
        else:
            row_w = scores
            col_w = scores
        video_aware_article = T.matmul(row_w, summaries)               # (T_d, d)
        article_aware_segments = T.matmul(T.transpose(col_w), article_states)  # (T_s, d)
        return scores, video_aware_article, article_aware_segments
