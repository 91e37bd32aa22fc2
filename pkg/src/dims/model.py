"""Full model assembly: encoders, interaction, generation, cover scoring.

One Model owns one ParameterStore. Every forward entry point works on a
single Sample; batching is a loop in the training module. Ablation flags
rewire the interaction stage: disable_conditional_self_attention passes
raw segment summaries through, disable_global_attention substitutes the
original states for the fused ones.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import RunConfig
from .data import EOS, START, UNK, Sample, Vocabulary
from .encoders import (ArticleEncoder, ArticleEncoding, FrameFeaturizer, InputError,
                       SegmentEncoder, VideoEncoding, segment_frames)
from .generator import (CoverScorer, Decoder, DecoderState, beam_search, greedy_decode,
                        select_cover)
from .interaction import ConditionalSelfAttention, GlobalAttention, InteractionOutput
from .losses import hinge_loss_t, seq_loss
from .tensor import ParameterStore, Tensor


@dataclass
class EncodedSample:
    article: ArticleEncoding
    video: VideoEncoding
    interaction: InteractionOutput
    source_extended_ids: list[int]
    oovs: list[str]


@dataclass
class InferenceResult:
    summary: list[str]
    cover_index: int
    scores: list[float]
    attention_map: np.ndarray | None   # (T_d, T_s) raw global scores, None when ablated
    article_tokens: list[str]


class Model:
    def __init__(self, config: RunConfig, vocab: Vocabulary):
        config.validate()
        self.config = config
        self.vocab = vocab
        T.set_default_dtype(np.float32 if config.precision == "float32" else np.float64)
        rng = np.random.default_rng(config.seed)
        std = config.init_std
        d = config.hidden_dim

        self.params = ParameterStore()
        self.embedding = self.params.add("embedding", (len(vocab), config.embed_dim), rng, std)
        self.article_encoder = ArticleEncoder(self.params, self.embedding, d,
                                              config.encode_steps, rng, std)
        self.featurizer = FrameFeaturizer(self.params, config.frame_featurizer, d,
                                          config.feature_dim, in_channels=3, rng=rng, std=std)
        self.segment_encoder = SegmentEncoder(self.params, d, rng, std)
        self.conditional = ConditionalSelfAttention(self.params, d, config.attn_layers,
                                                    config.scale_position,
                                                    config.layer_norm_eps, rng, std)
        self.global_attn = GlobalAttention(self.params, d, config.global_attention_normalize,
                                           rng, std)
        self.decoder = Decoder(self.params, self.embedding, d, len(vocab),
                               config.editing_gate, rng, std)
        self.cover_scorer = CoverScorer(self.params, d, rng, std)

    # -- forward --------------------------------------------------------

    def _check_frames(self, sample: Sample) -> None:
        want = "raw" if self.config.frame_featurizer == "conv" else "feat"
        if sample.frame_kind != want:
            raise InputError(f"sample {sample.id}: featurizer {self.config.frame_featurizer!r} "
                             f"needs {want!r} frames, dataset has {sample.frame_kind!r}")
        if want == "feat" and sample.frames[0].shape != (self.config.feature_dim,):
            raise InputError(f"sample {sample.id}: feature dim {sample.frames[0].shape} "
                             f"!= configured {self.config.feature_dim}")

    def encode(self, sample: Sample) -> EncodedSample:
        self._check_frames(sample)
        cfg = self.config
        article_tokens = sample.article[:cfg.encode_steps]
        src_ids, oovs = self.vocab.encode_with_oov(article_tokens)
        encoder_ids = [i if i < len(self.vocab) else UNK for i in src_ids]
        article = self.article_encoder.encode(encoder_ids)

        segments = segment_frames(sample.frames, cfg.segment_len)
        feats = [self.featurizer.featurize_segment(seg) for seg in segments]
        video = self.segment_encoder.encode(feats, num_real_frames=len(sample.frames))

        if cfg.disable_conditional_self_attention:
            conditional, gates = video.summaries, None
        else:
            conditional, gates = self.conditional(video.summaries, article.final)
        if cfg.disable_global_attention:
            scores_map = None
            video_aware = article.states
            article_aware = conditional
        else:
            scores_map, video_aware, article_aware = self.global_attn(article.states,
                                                                      video.summaries)
        inter = InteractionOutput(conditional_segments=conditional, condition_gates=gates,
                                  attention_map=scores_map, video_aware_article=video_aware,
                                  article_aware_segments=article_aware)
        return EncodedSample(article=article, video=video, interaction=inter,
                             source_extended_ids=src_ids, oovs=oovs)

    def frame_scores(self, enc: EncodedSample) -> Tensor:
        return self.cover_scorer(enc.video.frame_features,
                                 enc.interaction.conditional_segments,
                                 enc.interaction.article_aware_segments,
                                 enc.article.final,
                                 enc.video.num_real_frames)

    # -- losses -----------------------------------------------------------

    def _target_ids(self, sample: Sample, oovs: list[str]) -> list[int]:
        ids = self.vocab.encode_target(sample.summary, oovs)
        return (ids + [EOS])[:self.config.max_decode]

    def teacher_forced_dists(self, enc: EncodedSample, targets: list[int]) -> list[Tensor]:
        """Per-step extended distributions conditioned on the gold prefix."""
        extended_size = len(self.vocab) + len(enc.oovs)
        state = self.decoder.initial_state(enc.article.final)
        prev = START
        dists = []
        for tgt in targets:
            out = self.decoder.step(state, prev, enc.article.states,
                                    enc.interaction.video_aware_article,
                                    enc.source_extended_ids, extended_size)
            dists.append(out.extended_dist)
            state = out.state
            prev = tgt
        return dists

    def sequence_loss(self, enc: EncodedSample, sample: Sample) -> tuple[Tensor, int]:
        """Teacher-forced negative log likelihood, summed over steps."""
        targets = self._target_ids(sample, enc.oovs)
        dists = self.teacher_forced_dists(enc, targets)
        return seq_loss(dists, targets, self.config.prob_floor), len(targets)

    def cover_loss(self, enc: EncodedSample, sample: Sample,
                   rng: np.random.Generator | None = None) -> Tensor:
        """Pairwise hinge against every (or a sampled subset of) negative."""
        scores = self.frame_scores(enc)
        pos = sample.positive_index()
        n = scores.shape[0]
        negatives = [j for j in range(n) if j != pos]
        k = self.config.hinge_negatives
        if k and rng is not None and len(negatives) > k:
            negatives = sorted(rng.choice(negatives, size=k, replace=False).tolist())
        return hinge_loss_t(scores, pos, negatives, self.config.margin)

    def sample_losses(self, sample: Sample,
                      rng: np.random.Generator | None = None) -> tuple[Tensor, Tensor, int]:
        """(sequence loss, cover loss, target step count) for one sample."""
        enc = self.encode(sample)
        seq, steps = self.sequence_loss(enc, sample)
        pic = self.cover_loss(enc, sample, rng)
        return seq, pic, steps

    # -- inference ----------------------------------------------------------

    def _step_fn(self, enc: EncodedSample):
        extended_size = len(self.vocab) + len(enc.oovs)

        def step(state: DecoderState, prev: int):
            out = self.decoder.step(state, prev, enc.article.states,
                                    enc.interaction.video_aware_article,
                                    enc.source_extended_ids, extended_size)
            return out.state, out.extended_dist.numpy()

        return step

    def decode_ids(self, enc: EncodedSample, beam_size: int | None = None) -> list[int]:
        cfg = self.config
        beam = cfg.beam_size if beam_size is None else beam_size
        init = self.decoder.initial_state(enc.article.final)
        if beam == 1:
            return greedy_decode(self._step_fn(enc), init, cfg.min_decode, cfg.max_decode)
        return beam_search(self._step_fn(enc), init, beam, cfg.min_decode, cfg.max_decode,
                           cfg.prob_floor)

    def decode_tokens(self, enc: EncodedSample, beam_size: int | None = None) -> list[str]:
        return [self.vocab.decode_extended(i, enc.oovs) for i in self.decode_ids(enc, beam_size)]

    def infer(self, sample: Sample, beam_size: int | None = None) -> InferenceResult:
        enc = self.encode(sample)
        summary = self.decode_tokens(enc, beam_size)
        scores = self.frame_scores(enc).numpy()
        attn = enc.interaction.attention_map
        return InferenceResult(summary=summary,
                               cover_index=select_cover(scores),
                               scores=[float(s) for s in scores],
                               attention_map=None if attn is None else attn.numpy().copy(),
                               article_tokens=sample.article[:self.config.encode_steps])


def attention_export(result: InferenceResult) -> dict:
    """JSON-ready dump of the global-attention score matrix."""
    if result.attention_map is None:
        raise ValueError("global attention was disabled; no matrix to export")
    mat = result.attention_map
    return {"tokens": result.article_tokens,
            "segments": list(range(mat.shape[1])),
            "scores": [[float(v) for v in row] for row in mat]}
