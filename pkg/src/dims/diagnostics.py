"""Whole-model diagnostics: the finite-difference gradient suite.

Builds a tiny model (hidden 8, 6-token articles, 4 frames, vocab 20) over
a fixed 2-sample micro-batch whose articles include an out-of-vocabulary
token, so the copy path gets checked too. Double precision only.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .config import RunConfig
from .data import SPECIAL_TOKENS, Sample, Vocabulary
from .model import Model
from .tensor import GradCheckReport


def tiny_config(**overrides) -> RunConfig:
    base = dict(embed_dim=8, hidden_dim=8, encode_steps=6, min_decode=1, max_decode=5,
                segment_len=2, attn_layers=2, vocab_size=20, feature_dim=8,
                frame_featurizer="passthrough", beam_size=2, batch_size=2,
                precision="float64")
    base.update(overrides)
    return RunConfig(**base)


def tiny_vocab(size: int = 20) -> Vocabulary:
    return Vocabulary(SPECIAL_TOKENS + [f"t{i:02d}" for i in range(size - 4)])


def micro_batch(feature_dim: int = 8, num_frames: int = 4,
                seed: int = 7) -> list[Sample]:
    rng = np.random.default_rng(seed)
    frames = lambda: [rng.normal(size=feature_dim) for _ in range(num_frames)]
    return [
        Sample(id="micro0",
               article=["t00", "t03", "blazar", "t05", "t01", "t02"],
               summary=["t03", "blazar", "t05"],
               frames=frames(), frame_kind="feat", cover=1),
        Sample(id="micro1",
               article=["t07", "t02", "t09", "t04", "t06", "t08"],
               summary=["t02", "t09", "t07", "t04"],
               frames=frames(), frame_kind="feat", cover=3),
    ]


def full_model_gradcheck(config: RunConfig | None = None, eps: float = 1e-4,
                         tol: float = 1e-4, max_coords_per_param: int | None = None,
                         corrupt: str | None = None) -> GradCheckReport:
    """Finite-difference check of the joint loss against every parameter."""
    cfg = config if config is not None else tiny_config()
    vocab = tiny_vocab(cfg.vocab_size)
    model = Model(cfg, vocab)
    batch = micro_batch(feature_dim=cfg.feature_dim)

    def loss() -> T.Tensor:
        parts = []
        for s in batch:
            seq, pic, _ = model.sample_losses(s)
            parts.append(seq + pic)
        return T.tmean(T.stack(parts))

    mutate = None
    if corrupt is not None:
        names = model.params.names()
        if corrupt not in names:
            raise KeyError(f"no parameter named {corrupt!r}")

        def mutate(analytic: dict[str, np.ndarray]) -> None:
            analytic[corrupt] = analytic[corrupt] * 1.5 + 1.0

    return T.grad_check(loss, dict(model.params.items()), eps=eps, tol=tol,
                        max_coords_per_param=max_coords_per_param,
                        rng=np.random.default_rng(0), mutate_grads=mutate)
