"""Evaluation metrics: ROUGE-1/2/L F1, MAP, recall-at-k, cosine similarity.

Pure functions over token lists and score arrays. ROUGE is computed on
whitespace tokens exactly as given (full length, no stemming); ranking
metrics break score ties by ascending candidate index so results are
deterministic.
"""

from __future__ import annotations

import warnings
from collections import Counter
from dataclasses import dataclass

import numpy as np


@dataclass
class RougeScore:
    precision: float
    recall: float
    f1: float


def _f1(p: float, r: float) -> float:
    return 2.0 * p * r / (p + r) if p + r > 0 else 0.0


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def rouge_n(candidate: list[str], reference: list[str], n: int) -> RougeScore:
    """Clipped n-gram overlap F1."""
    cand = _ngrams(candidate, n)
    ref = _ngrams(reference, n)
    cand_total = sum(cand.values())
    ref_total = sum(ref.values())
    if cand_total == 0 or ref_total == 0:
        return RougeScore(0.0, 0.0, 0.0)
    overlap = sum(min(c, ref[g]) for g, c in cand.items())
    p = overlap / cand_total
    r = overlap / ref_total
    return RougeScore(p, r, _f1(p, r))


def _lcs_length(a: list[str], b: list[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, start=1):
            cur[j] = prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1])
        prev = cur
    return prev[-1]


def rouge_l(candidate: list[str], reference: list[str]) -> RougeScore:
    """Longest-common-subsequence F1."""
    if not candidate or not reference:
        return RougeScore(0.0, 0.0, 0.0)
    lcs = _lcs_length(candidate, reference)
    p = lcs / len(candidate)
    r = lcs / len(reference)
    return RougeScore(p, r, _f1(p, r))


def rouge_all(candidate: list[str], reference: list[str]) -> dict[str, RougeScore]:
    return {"rouge1": rouge_n(candidate, reference, 1),
            "rouge2": rouge_n(candidate, reference, 2),
            "rougeL": rouge_l(candidate, reference)}


# -- ranking -----------------------------------------------------------------


@dataclass
class RankingResult:
    """Candidate scores for one sample plus the index of its single positive."""
    scores: list[float]
    positive: int

    def rank_of_positive(self) -> int:
        """1-based rank under descending score, ties by ascending index."""
        if not (0 <= self.positive < len(self.scores)):
            raise ValueError(f"positive index {self.positive} outside {len(self.scores)} candidates")
        order = sorted(range(len(self.scores)), key=lambda i: (-self.scores[i], i))
        return order.index(self.positive) + 1


def map_score(rankings: list[RankingResult]) -> float:
    """Mean average precision; with one positive per sample this is mean 1/rank."""
    if not rankings:
        raise ValueError("map_score needs at least one sample")
    return float(np.mean([1.0 / r.rank_of_positive() for r in rankings]))


def recall_at_k(rankings: list[RankingResult], n: int, k: int) -> float:
    """Fraction of samples whose positive lands in the top k of n candidates."""
    if k > n:
        raise ValueError(f"k={k} exceeds candidate count n={n}")
    if not rankings:
        raise ValueError("recall_at_k needs at least one sample")
    for r in rankings:
        if len(r.scores) != n:
            raise ValueError(f"sample has {len(r.scores)} candidates, expected {n}")
    return float(np.mean([1.0 if r.rank_of_positive() <= k else 0.0 for r in rankings]))


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise ValueError(f"cosine_similarity shapes differ: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        warnings.warn("cosine_similarity of a zero vector: defining it as 0")
        return 0.0
    return float(np.dot(a, b) / (na * nb))
