"""Summary generation and cover-frame scoring.

The decoder is a single LSTM with additive attention over editing-gated
article states, a sigmoid pre-output bottleneck, and a pointer mix that
lets it copy source tokens (including out-of-vocabulary ones) straight
from the attention distribution. Cover scoring fuses segment-level and
frame-level representations through two sigmoid gates read off the
article's final state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .data import EOS, START, UNK
from .layers import Linear, LstmCell
from .tensor import ParameterStore, Tensor


@dataclass
class DecoderState:
    hidden: Tensor     # (d,)
    cell: Tensor       # (d,)
    context: Tensor    # (d,) attention context from the previous step
    step: int


@dataclass
class StepOutput:
    state: DecoderState
    attention: Tensor        # (T_d,) weights over article positions
    vocab_dist: Tensor       # (V,) generator-side distribution
    copy_gate: Tensor        # (1,) probability of generating vs copying
    extended_dist: Tensor    # (V + num_oov,) final mixed distribution


class Decoder:
    def __init__(self, store: ParameterStore, embedding: Tensor, hidden_dim: int,
                 vocab_size: int, editing_gate: str, rng: np.random.Generator, std: float):
        d = hidden_dim
        e = embedding.shape[1]
        self.embedding = embedding
        self.hidden_dim = d
        self.vocab_size = vocab_size
        self.editing_gate_kind = editing_gate
        self.cell = LstmCell(store, "decoder.rnn", e + d, d, rng, std)
        self.init_proj = Linear(store, "decoder.init", d, d, rng, std)
        gate_out = 1 if editing_gate == "scalar" else d
        self.edit_gate = Linear(store, "decoder.edit_gate", d, gate_out, rng, std)
        self.attn_source = store.add("decoder.attn.source", (d, d), rng, std)
        self.attn_state = store.add("decoder.attn.state", (d, d), rng, std)
        self.attn_score = store.add("decoder.attn.score", (d,), rng, std)
        self.pre_output = Linear(store, "decoder.pre_output", 2 * d, d, rng, std)
        self.out = Linear(store, "decoder.out", d, vocab_size, rng, std)
        self.copy_gate = Linear(store, "decoder.copy_gate", 2 * d + e, 1, rng, std)

    def initial_state(self, article_final: Tensor) -> DecoderState:
        h0 = T.tanh(self.init_proj(article_final))
        return DecoderState(hidden=h0, cell=T.zeros(self.hidden_dim),
                            context=T.zeros(self.hidden_dim), step=0)

    def edited_article(self, hidden: Tensor, article_states: Tensor,
                       video_aware_article: Tensor) -> tuple[Tensor, Tensor]:
        """Mix original and video-aware token states under the editing gate."""
        gate = T.sigmoid(self.edit_gate(hidden))
        if self.editing_gate_kind == "scalar":
            mixed = gate * article_states + (1.0 - gate) * video_aware_article
        else:
            mixed = T.mul_rowvec(article_states, gate) + \
                T.mul_rowvec(video_aware_article, 1.0 - gate)
        return mixed, gate

    def step(self, state: DecoderState, prev_token: int, article_states: Tensor,
             video_aware_article: Tensor, source_ids: list[int],
             extended_size: int) -> StepOutput:
        if prev_token >= self.vocab_size:      # copied OOV tokens re-enter as UNK
            prev_token = UNK
        prev_emb = T.embedding(self.embedding, [prev_token])[0]
        x = T.concat([prev_emb, state.context])
        hidden, cell = self.cell.step(x, state.hidden, state.cell)

        edited, _ = self.edited_article(hidden, article_states, video_aware_article)
        scores = T.matmul(T.tanh(T.add_rowvec(T.matmul(edited, T.transpose(self.attn_source)),
                                              T.matmul(self.attn_state, hidden))),
                          self.attn_score)
        attention = T.softmax(scores, axis=0)
        context = T.matmul(attention, edited)

        bottleneck = T.sigmoid(self.pre_output(T.concat([hidden, context])))
        vocab_dist = T.softmax(self.out(bottleneck), axis=0)
        copy_gate = T.sigmoid(self.copy_gate(T.concat([context, hidden, prev_emb])))

        extended = pointer_mix(vocab_dist, attention, copy_gate, source_ids, extended_size)
        new_state = DecoderState(hidden=hidden, cell=cell, context=context, step=state.step + 1)
        return StepOutput(state=new_state, attention=attention, vocab_dist=vocab_dist,
                          copy_gate=copy_gate, extended_dist=extended)


def pointer_mix(vocab_dist: Tensor, attention: Tensor, copy_gate: Tensor,
                source_ids: list[int], extended_size: int) -> Tensor:
    """Blend the generator distribution with attention mass scattered onto
    source token slots (duplicated source tokens accumulate)."""
    vocab_size = vocab_dist.shape[0]
    if extended_size < vocab_size:
        raise T.DimensionError("extended size below base vocabulary size")
    if len(source_ids) != attention.shape[0]:
        raise T.DimensionError("attention length must match source length")
    gen = copy_gate * vocab_dist
    if extended_size > vocab_size:
        gen = T.concat([gen, T.zeros(extended_size - vocab_size)])
    copy = T.scatter_add(extended_size, source_ids, (1.0 - copy_gate) * attention)
    return gen + copy


# -- decoding ----------------------------------------------------------------


@dataclass
class BeamHypothesis:
    tokens: list[int]          # emitted ids over the extended vocab (EOS included)
    log_prob: float
    state: DecoderState
    finished: bool

    def score(self) -> float:
        return self.log_prob / max(len(self.tokens), 1)


def greedy_decode(step_fn, initial_state: DecoderState, min_len: int, max_len: int) -> list[int]:
    """Argmax decoding; EOS is masked out before position min_len."""
    tokens: list[int] = []
    state = initial_state
    prev = START
    for pos in range(1, max_len + 1):
        state, probs = step_fn(state, prev)
        if pos < min_len:
            probs = probs.copy()
            probs[EOS] = 0.0
        nxt = int(np.argmax(probs))
        tokens.append(nxt)
        if nxt == EOS:
            break
        prev = nxt
    return tokens[:-1] if tokens and tokens[-1] == EOS else tokens


def beam_search(step_fn, initial_state: DecoderState, beam_size: int,
                min_len: int, max_len: int, prob_floor: float = 1e-12) -> list[int]:
    """Length-normalized beam search over a step function.

    step_fn(state, prev_token) -> (new_state, extended probs as ndarray).
    Finished hypotheses leave the beam; the best normalized score among
    them (or among survivors at the step cap) wins.
    """
    if beam_size < 1:
        raise ValueError("beam_size must be >= 1")
    beam = [BeamHypothesis(tokens=[], log_prob=0.0, state=initial_state, finished=False)]
    results: list[BeamHypothesis] = []
    for pos in range(1, max_len + 1):
        candidates: list[BeamHypothesis] = []
        for hyp in beam:
            prev = hyp.tokens[-1] if hyp.tokens else START
            state, probs = step_fn(hyp.state, prev)
            logp = np.log(np.maximum(probs, prob_floor))
            if pos < min_len:
                logp[EOS] = -np.inf
            order = np.argsort(-logp, kind="stable")[:beam_size]
            for tok in order:
                candidates.append(BeamHypothesis(tokens=hyp.tokens + [int(tok)],
                                                 log_prob=hyp.log_prob + float(logp[tok]),
                                                 state=state, finished=int(tok) == EOS))
        candidates.sort(key=lambda h: -h.score())
        beam = []
        for cand in candidates:
            if cand.finished:
                results.append(cand)
            else:
                beam.append(cand)
            if len(beam) == beam_size:
                break
        if len(results) >= beam_size or not beam:
            break
    if not results:
        results = beam
    best = max(results, key=lambda h: h.score())
    return best.tokens[:-1] if best.tokens and best.tokens[-1] == EOS else best.tokens


# -- cover scoring -------------------------------------------------------------


class CoverScorer:
    """Scores each candidate frame from fused segment- and frame-level
    representations, gated by the article's final state."""

    def __init__(self, store: ParameterStore, hidden_dim: int,
                 rng: np.random.Generator, std: float):
        self.gate_segment = Linear(store, "cover.gate_segment", hidden_dim, 1, rng, std)
        self.gate_article = Linear(store, "cover.gate_article", hidden_dim, 1, rng, std)
        self.score = Linear(store, "cover.score", hidden_dim, 1, rng, std)

    def __call__(self, frame_features: list[Tensor], conditional_segments: Tensor,
                 article_aware_segments: Tensor, article_final: Tensor,
                 num_real_frames: int) -> Tensor:
        """Returns the (num_real_frames,) score vector in flat candidate order."""
        g1 = T.sigmoid(self.gate_segment(article_final))   # (1,)
        g2 = T.sigmoid(self.gate_article(article_final))   # (1,)
        frame_coeff = 1.0 - g1 - g2                        # may go negative; kept as defined
        per_segment = []
        for i, feats in enumerate(frame_features):
            base = g1 * conditional_segments[i] + g2 * article_aware_segments[i]
            fused = T.add_rowvec(frame_coeff * feats, base)
            per_segment.append(T.sigmoid(self.score(fused)))   # (T_f, 1)
        flat = T.reshape(T.concat(per_segment, axis=0), (-1,))
        return flat[:num_real_frames]


def select_cover(scores: np.ndarray) -> int:
    """Argmax candidate index; ties go to the lowest index."""
    scores = np.asarray(scores).reshape(-1)
    if scores.size == 0:
        raise ValueError("no candidates to select from")
    return int(np.argmax(scores))
