"""Loss terms: teacher-forced sequence NLL and the pairwise ranking hinge."""

from __future__ import annotations

from . import tensor as T
from .tensor import Tensor


def seq_loss(step_dists: list[Tensor], targets: list[int], prob_floor: float = 1e-12) -> Tensor:
    """Negative log likelihood of the targets under per-step distributions,
    summed over steps. Probabilities are floored before the log."""
    if len(step_dists) != len(targets):
        raise ValueError(f"{len(step_dists)} distributions vs {len(targets)} targets")
    losses = []
    for dist, tgt in zip(step_dists, targets):
        if not (0 <= tgt < dist.shape[0]):
            raise ValueError(f"target id {tgt} outside extended vocab of {dist.shape[0]}")
        losses.append(-T.log(T.clamp_min(dist[tgt], prob_floor)))
    return T.tsum(T.stack(losses))


def hinge_loss_t(scores: Tensor, positive: int, negatives: list[int], margin: float) -> Tensor:
    """Differentiable sum over negatives of max(0, neg - pos + margin)."""
    if not negatives:
        return T.zeros(())
    diffs = T.gather(scores, negatives) - scores[positive] + margin
    return T.tsum(T.relu(diffs))


def hinge_loss(positive: float, negatives: list[float], margin: float) -> float:
    """Plain-float reference of the same hinge (reporting and tests)."""
    return float(sum(max(0.0, n - positive + margin) for n in negatives))
