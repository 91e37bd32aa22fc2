"""Dataset I/O, vocabulary, candidate-frame preparation, synthetic data.

A dataset is a JSONL manifest, one sample per line:

    {"id": str,
     "article": [token, ...],
     "summary": [token, ...],
     "frames": {"kind": "feat", "dim": F, "payload": [b64, ...]}
             | {"kind": "raw", "shape": [H, W, C], "payload": [b64, ...]}
             | {"kind": ..., "sidecar": name, "ref": [{"offset": int, "shape": [...]}, ...]},
     "cover": {"kind": "index", "index": int}
            | {"kind": "feat"|"raw", ...payload or ref as above...}}

Payloads are base64 little-endian float64; sidecar refs address raw
little-endian float64 arrays in a binary file next to the manifest.
"""

from __future__ import annotations

import base64
import dataclasses
import json
import os
import warnings
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .metrics import cosine_similarity

PAD, UNK, START, EOS = 0, 1, 2, 3
SPECIAL_TOKENS = ["<pad>", "<unk>", "<s>", "</s>"]

CANDIDATE_HEIGHT = 128
CANDIDATE_WIDTH = 64


class DataError(ValueError):
    """Unusable dataset input; the CLI maps this to exit code 3."""


@dataclass
class Sample:
    """One record: article tokens, reference summary, candidate frames, cover truth."""
    id: str
    article: list[str]
    summary: list[str]
    frames: list[np.ndarray]
    frame_kind: str                      # "raw" (H,W,C arrays) or "feat" (vectors)
    cover: np.ndarray | int              # truth payload, or a precomputed positive index

    def positive_index(self) -> int:
        if isinstance(self.cover, (int, np.integer)):
            idx = int(self.cover)
            if not (0 <= idx < len(self.frames)):
                raise DataError(f"sample {self.id}: cover index {idx} out of range")
            return idx
        return label_positive(self.frames, np.asarray(self.cover))[0]


class Vocabulary:
    """Token/id bijection with fixed special ids 0-3 and a hard size cap."""

    def __init__(self, tokens: list[str]):
        if tokens[:4] != SPECIAL_TOKENS:
            raise DataError("vocabulary must start with the four special tokens")
        self._tokens = list(tokens)
        self._ids = {t: i for i, t in enumerate(self._tokens)}
        if len(self._ids) != len(self._tokens):
            raise DataError("vocabulary tokens must be unique")

    def __len__(self) -> int:
        return len(self._tokens)

    def id(self, token: str) -> int:
        return self._ids.get(token, UNK)

    def token(self, idx: int) -> str:
        return self._tokens[idx]

    def tokens(self) -> list[str]:
        return list(self._tokens)

    def encode(self, tokens: list[str]) -> list[int]:
        return [self.id(t) for t in tokens]

    def encode_with_oov(self, tokens: list[str]) -> tuple[list[int], list[str]]:
        """Encode source tokens, assigning extended ids past len(self) to OOVs."""
        ids, oovs = [], []
        for t in tokens:
            i = self.id(t)
            if i == UNK and t != SPECIAL_TOKENS[UNK]:
                if t not in oovs:
                    oovs.append(t)
                i = len(self) + oovs.index(t)
            ids.append(i)
        return ids, oovs

    def encode_target(self, tokens: list[str], oovs: list[str]) -> list[int]:
        """Target ids over the extended vocab; unknowable tokens fall back to UNK."""
        ids = []
        for t in tokens:
            i = self.id(t)
            if i == UNK and t in oovs:
                i = len(self) + oovs.index(t)
            ids.append(i)
        return ids

    def decode_extended(self, idx: int, oovs: list[str]) -> str:
        if idx < len(self):
            return self.token(idx)
        j = idx - len(self)
        if j < len(oovs):
            return oovs[j]
        raise DataError(f"extended id {idx} outside vocab+oov range")


def build_vocab(samples: list[Sample], max_size: int = 50000) -> Vocabulary:
    """Frequency-ordered vocabulary over article+summary tokens, ties lexicographic."""
    if not samples:
        raise DataError("cannot build a vocabulary from zero samples")
    if max_size > 50000:
        raise DataError("vocabulary size is capped at 50000")
    counts = Counter()
    for s in samples:
        for t in s.article:
            counts[t] += 1
        for t in s.summary:
            counts[t] += 1
    for sp in SPECIAL_TOKENS:
        counts.pop(sp, None)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    kept = [t for t, _ in ranked[:max_size - 4]]
    return Vocabulary(SPECIAL_TOKENS + kept)


# -- payload encoding ----------------------------------------------------


def _encode_array(arr: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(arr, dtype="<f8").tobytes()).decode("ascii")


def _decode_array(b64: str, shape) -> np.ndarray:
    raw = base64.b64decode(b64.encode("ascii"))
    arr = np.frombuffer(raw, dtype="<f8")
    expected = int(np.prod(shape))
    if arr.size != expected:
        raise ValueError(f"payload holds {arr.size} floats, shape {shape} needs {expected}")
    return arr.reshape(shape).astype(np.float64)


class _Sidecar:
    def __init__(self, path: str):
        try:
            with open(path, "rb") as fh:
                self._buf = fh.read()
        except OSError as e:
            raise DataError(f"cannot read sidecar {path}: {e}") from e

    def read(self, offset: int, shape) -> np.ndarray:
        count = int(np.prod(shape))
        end = offset + 8 * count
        if offset < 0 or end > len(self._buf):
            raise ValueError(f"sidecar ref [{offset}:{end}] outside file of {len(self._buf)} bytes")
        arr = np.frombuffer(self._buf, dtype="<f8", count=count, offset=offset)
        return arr.reshape(shape).astype(np.float64)


def _frame_shape(kind: str, block: dict) -> list[int]:
    if kind == "raw":
        shape = block.get("shape")
        if not (isinstance(shape, list) and len(shape) == 3 and all(isinstance(v, int) and v > 0 for v in shape)):
            raise ValueError("raw frames need a positive [H, W, C] shape")
        return shape
    dim = block.get("dim")
    if not (isinstance(dim, int) and dim > 0):
        raise ValueError("feat frames need a positive dim")
    return [dim]


def _decode_frames(block: dict, sidecars: dict, base_dir: str) -> tuple[list[np.ndarray], str]:
    kind = block.get("kind")
    if kind not in ("raw", "feat"):
        raise ValueError(f"frames.kind must be 'raw' or 'feat', got {kind!r}")
    if "payload" in block:
        shape = _frame_shape(kind, block)
        payloads = block["payload"]
        if not isinstance(payloads, list) or not payloads:
            raise ValueError("frames.payload must be a non-empty list")
        return [_decode_array(p, shape) for p in payloads], kind
    if "ref" in block:
        name = block.get("sidecar")
        if not isinstance(name, str):
            raise ValueError("frame refs need a sidecar file name")
        path = os.path.join(base_dir, name)
        if path not in sidecars:
            sidecars[path] = _Sidecar(path)
        refs = block["ref"]
        if not isinstance(refs, list) or not refs:
            raise ValueError("frames.ref must be a non-empty list")
        return [sidecars[path].read(r["offset"], r["shape"]) for r in refs], kind
    raise ValueError("frames need either payload or ref")


def _decode_cover(block: dict, sidecars: dict, base_dir: str) -> np.ndarray | int:
    kind = block.get("kind")
    if kind == "index":
        idx = block.get("index")
        if not isinstance(idx, int) or idx < 0:
            raise ValueError("cover.index must be a non-negative integer")
        return idx
    if kind not in ("raw", "feat"):
        raise ValueError(f"cover.kind must be 'raw', 'feat' or 'index', got {kind!r}")
    shape = _frame_shape(kind, block)
    if "payload" in block:
        return _decode_array(block["payload"], shape)
    if "ref" in block:
        name = block.get("sidecar")
        path = os.path.join(base_dir, name)
        if path not in sidecars:
            sidecars[path] = _Sidecar(path)
        r = block["ref"]
        return sidecars[path].read(r["offset"], r["shape"])
    raise ValueError("cover needs payload, ref, or index")


def _record_to_sample(rec: dict, sidecars: dict, base_dir: str) -> Sample:
    for key in ("id", "article", "summary", "frames", "cover"):
        if key not in rec:
            raise ValueError(f"missing field {key!r}")
    if not isinstance(rec["id"], str) or not rec["id"]:
        raise ValueError("id must be a non-empty string")
    for key in ("article", "summary"):
        toks = rec[key]
        if not isinstance(toks, list) or not toks or not all(isinstance(t, str) and t for t in toks):
            raise ValueError(f"{key} must be a non-empty list of non-empty strings")
    frames, kind = _decode_frames(rec["frames"], sidecars, base_dir)
    cover = _decode_cover(rec["cover"], sidecars, base_dir)
    if isinstance(cover, int) and cover >= len(frames):
        raise ValueError(f"cover index {cover} out of range for {len(frames)} frames")
    return Sample(id=rec["id"], article=list(rec["article"]), summary=list(rec["summary"]),
                  frames=frames, frame_kind=kind, cover=cover)


@dataclass
class LoadResult:
    samples: list[Sample]
    errors: list[str]


def load_dataset(path: str, max_article_len: int = 100, max_summary_len: int = 30) -> LoadResult:
    """Read a JSONL manifest; malformed records become per-line errors, not crashes.

    Articles/summaries are truncated to the stated lengths. Mixed raw and
    feat frames within one file are rejected. Unreadable sidecars abort.
    """
    samples: list[Sample] = []
    errors: list[str] = []
    sidecars: dict[str, _Sidecar] = {}
    base_dir = os.path.dirname(os.path.abspath(path))
    seen_kind: str | None = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                errors.append(f"line {lineno}: not valid JSON ({e.msg})")
                continue
            try:
                sample = _record_to_sample(rec, sidecars, base_dir)
            except DataError:
                raise
            except (ValueError, KeyError, TypeError) as e:
                rid = rec.get("id", "?") if isinstance(rec, dict) else "?"
                errors.append(f"line {lineno} (id={rid}): {e}")
                continue
            if seen_kind is None:
                seen_kind = sample.frame_kind
            elif sample.frame_kind != seen_kind:
                errors.append(f"line {lineno} (id={sample.id}): frame kind {sample.frame_kind!r} "
                              f"mixes with {seen_kind!r} earlier in the file")
                continue
            sample.article = sample.article[:max_article_len]
            sample.summary = sample.summary[:max_summary_len]
            samples.append(sample)
    if not samples and not errors:
        warnings.warn(f"{path}: dataset is empty")
    return LoadResult(samples=samples, errors=errors)


def save_dataset(samples: list[Sample], path: str) -> None:
    """Write samples as a JSONL manifest with inline base64 payloads."""
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            if s.frame_kind == "raw":
                frames = {"kind": "raw", "shape": [int(v) for v in s.frames[0].shape],
                          "payload": [_encode_array(f) for f in s.frames]}
            else:
                frames = {"kind": "feat", "dim": int(s.frames[0].shape[0]),
                          "payload": [_encode_array(f) for f in s.frames]}
            if isinstance(s.cover, (int, np.integer)):
                cover = {"kind": "index", "index": int(s.cover)}
            elif s.frame_kind == "raw":
                cover = {"kind": "raw", "shape": [int(v) for v in s.cover.shape],
                         "payload": _encode_array(s.cover)}
            else:
                cover = {"kind": "feat", "dim": int(s.cover.shape[0]),
                         "payload": _encode_array(s.cover)}
            rec = {"id": s.id, "article": s.article, "summary": s.summary,
                   "frames": frames, "cover": cover}
            fh.write(json.dumps(rec) + "\n")


# -- candidate preparation -------------------------------------------------


def resize_nearest(frame: np.ndarray, height: int = CANDIDATE_HEIGHT,
                   width: int = CANDIDATE_WIDTH) -> np.ndarray:
    if frame.ndim != 3:
        raise DataError(f"raw frame must be (H,W,C), got shape {frame.shape}")
    h, w, _ = frame.shape
    rows = np.minimum((np.arange(height) * h) // height, h - 1)
    cols = np.minimum((np.arange(width) * w) // width, w - 1)
    return frame[np.ix_(rows, cols)]


def sample_candidates(frames: list[np.ndarray], stride: int = 120,
                      target: int = 10) -> list[np.ndarray]:
    """Pick every stride-th frame (capped at target) and resize to 128x64."""
    if not frames:
        raise DataError("cannot sample candidates from zero frames")
    picked = [frames[i] for i in range(0, len(frames), stride)]
    return [resize_nearest(f) for f in picked[:target]]


def label_positive(candidates: list[np.ndarray], truth: np.ndarray) -> tuple[int, float]:
    """Index of the candidate most cosine-similar to the truth; ties to lowest index."""
    if not candidates:
        raise DataError("cannot label an empty candidate list")
    t = truth.reshape(-1)
    sims = np.array([cosine_similarity(c.reshape(-1), t) for c in candidates])
    best = int(np.argmax(sims))
    return best, float(sims[best])


def labeling_diagnostic(samples: list[Sample]) -> float | None:
    """Mean positive-label cosine similarity over samples whose cover is a
    payload. A dataset-quality number to eyeball (high on clean data), not
    something to assert on."""
    sims = [label_positive(s.frames, np.asarray(s.cover))[1]
            for s in samples if not isinstance(s.cover, (int, np.integer))]
    return float(np.mean(sims)) if sims else None


# -- synthetic data ----------------------------------------------------------


@dataclass
class SyntheticSpec:
    """Recipe for a deterministic sanity-check dataset.

    Each sample carries one topic: a keyword token placed in the article,
    a summary equal to the summary_len tokens right after the keyword, and
    candidate feature vectors where exactly one aligns with the topic's
    direction (the planted cover). Every segment holds exactly one strong
    "anchor" frame among low-norm background frames; the planted cover is
    the anchor of its segment, and the other segments' anchors point at
    *other* topics' directions. Segments are therefore structurally
    indistinguishable without the article, and ranking the cover first
    requires relating article content to frame features. The cover truth
    payload is the topic direction itself.
    """
    num_samples: int = 64
    vocab_size: int = 50            # filler token count
    topic_count: int = 6
    article_len_lo: int = 12
    article_len_hi: int = 24
    summary_len: int = 4
    feature_dim: int = 32
    num_frames: int = 10
    segment_len: int = 5            # must match the model config's grouping
    background_scale: float = 0.3
    noise: float = 0.0
    seed: int = 0

    def validate(self) -> None:
        if self.topic_count < 2:
            raise DataError("topic_count must be >= 2 (distractors come from other topics)")
        if self.article_len_lo < self.summary_len + 1:
            raise DataError("articles must fit a keyword plus the summary window")
        if self.article_len_hi < self.article_len_lo:
            raise DataError("article_len_hi must be >= article_len_lo")
        if self.num_frames < 2:
            raise DataError("num_frames must be >= 2")
        if self.segment_len < 1:
            raise DataError("segment_len must be >= 1")
        if min(self.num_samples, self.vocab_size, self.summary_len, self.feature_dim) < 1:
            raise DataError("num_samples, vocab_size, summary_len, feature_dim must be >= 1")
        if self.noise < 0 or self.background_scale < 0:
            raise DataError("noise and background_scale must be >= 0")

    @classmethod
    def from_file(cls, path: str) -> "SyntheticSpec":
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise DataError(f"unknown synthetic spec key: {sorted(unknown)[0]}")
        spec = cls(**raw)
        spec.validate()
        return spec


def topic_directions(spec: SyntheticSpec) -> np.ndarray:
    """Unit feature direction per topic, deterministic in the spec seed."""
    rng = np.random.default_rng(spec.seed + 1)
    dirs = rng.normal(size=(spec.topic_count, spec.feature_dim))
    return dirs / np.linalg.norm(dirs, axis=1, keepdims=True)


def gen_synthetic(spec: SyntheticSpec) -> list[Sample]:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    dirs = topic_directions(spec)
    fillers = [f"w{i:03d}" for i in range(spec.vocab_size)]
    samples = []
    for n in range(spec.num_samples):
        topic = int(rng.integers(spec.topic_count))
        length = int(rng.integers(spec.article_len_lo, spec.article_len_hi + 1))
        article = [fillers[i] for i in rng.integers(len(fillers), size=length)]
        pos = int(rng.integers(0, length - spec.summary_len))
        article[pos] = f"topic{topic:02d}"
        summary = article[pos + 1: pos + 1 + spec.summary_len]

        num_segments = -(-spec.num_frames // spec.segment_len)
        planted_segment = int(rng.integers(num_segments))
        anchors = {}
        for seg in range(num_segments):
            lo = seg * spec.segment_len
            hi = min(lo + spec.segment_len, spec.num_frames)
            slot = int(rng.integers(lo, hi))
            if seg == planted_segment:
                anchors[slot] = dirs[topic]
            else:
                other = int(rng.integers(spec.topic_count - 1))
                if other >= topic:
                    other += 1
                anchors[slot] = dirs[other]
        frames = []
        for j in range(spec.num_frames):
            base = anchors.get(j)
            if base is None:
                base = spec.background_scale * rng.normal(size=spec.feature_dim)
            frames.append(base + spec.noise * rng.normal(size=spec.feature_dim))
        samples.append(Sample(id=f"syn{n:05d}", article=article, summary=summary,
                              frames=frames, frame_kind="feat", cover=dirs[topic].copy()))
    return samples
