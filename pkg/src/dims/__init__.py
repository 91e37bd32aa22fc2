"""Joint abstractive summarization of an article and cover-frame selection
for its companion video, trained end to end on a from-scratch autodiff core."""

from .config import ConfigError, RunConfig
from .data import (Sample, SyntheticSpec, Vocabulary, build_vocab, gen_synthetic,
                   load_dataset, save_dataset)
from .model import Model
from .training import evaluate, load_checkpoint, model_from_checkpoint, save_checkpoint, train

__all__ = [
    "ConfigError", "RunConfig", "Sample", "SyntheticSpec", "Vocabulary",
    "build_vocab", "gen_synthetic", "load_dataset", "save_dataset",
    "Model", "evaluate", "load_checkpoint", "model_from_checkpoint",
    "save_checkpoint", "train",
]

__version__ = "0.1.0"
