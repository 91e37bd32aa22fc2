"""Joint training: loss aggregation, Adagrad with gradient clipping,
checkpointing, metric logging, and validation-driven checkpoint retention."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .config import RunConfig
from .data import Sample, Vocabulary
from .losses import hinge_loss, hinge_loss_t, seq_loss  # noqa: F401  (module API)
from .metrics import RankingResult, rouge_all
from .model import Model
from .tensor import ParameterStore, Tape


class TrainingError(RuntimeError):
    """Training hit a non-recoverable state (non-finite loss, bad data)."""


@dataclass
class LossBreakdown:
    seq: float
    pic: float

    @property
    def total(self) -> float:
        return self.seq + self.pic


def clip_gradients(params: ParameterStore, lo: float, hi: float, mode: str = "value") -> None:
    """Clip every gradient in place. "value" clamps elementwise into
    [lo, hi]; "norm" rescales the global L2 norm down to hi."""
    if lo >= hi:
        raise ValueError("clip bounds must satisfy lo < hi")
    if mode == "value":
        for t in params.tensors():
            if t.grad is not None:
                np.clip(t.grad, lo, hi, out=t.grad)
    elif mode == "norm":
        total = 0.0
        for t in params.tensors():
            if t.grad is not None:
                total += float((t.grad * t.grad).sum())
        norm = total ** 0.5
        if norm > hi:
            scale = hi / norm
            for t in params.tensors():
                if t.grad is not None:
                    t.grad *= scale
    else:
        raise ValueError(f"unknown clip mode {mode!r}")


class Adagrad:
    """Per-coordinate squared-gradient accumulation; expects clipped grads."""

    def __init__(self, params: ParameterStore, lr: float, eps: float):
        self.params = params
        self.lr = lr
        self.eps = eps
        self.accumulators = {name: np.zeros_like(t.data) for name, t in params.items()}

    def step(self) -> None:
        for name, t in self.params.items():
            g = t.grad
            if g is None:
                continue
            acc = self.accumulators[name]
            acc += g * g
            t.data = t.data - self.lr * g / (np.sqrt(acc) + self.eps)

    def load(self, arrays: dict[str, np.ndarray]) -> None:
        if set(arrays) != set(self.accumulators):
            raise KeyError("optimizer accumulator set mismatch")
        for k in self.accumulators:
            self.accumulators[k] = np.asarray(arrays[k]).copy()


# -- checkpoints ---------------------------------------------------------------

CHECKPOINT_VERSION = 1


def save_checkpoint(base_path: str, model: Model, optimizer: Adagrad | None,
                    step: int, metrics: dict | None = None) -> None:
    """Write <base>.json (manifest) + <base>.bin (little-endian float payload)."""
    entries = []
    blobs = []
    offset = 0

    def put(name: str, kind: str, arr: np.ndarray):
        nonlocal offset
        raw = arr.astype("<f8").tobytes()
        entries.append({"name": name, "kind": kind, "shape": list(arr.shape),
                        "offset": offset, "dtype": "<f8"})
        blobs.append(raw)
        offset += len(raw)

    for name, t in model.params.items():
        put(name, "param", t.data)
    if optimizer is not None:
        for name, acc in optimizer.accumulators.items():
            put(name, "accum", acc)

    manifest = {"format_version": CHECKPOINT_VERSION,
                "config": model.config.to_dict(),
                "vocab": model.vocab.tokens(),
                "step": step,
                "metrics": metrics or {},
                "tensors": entries}
    with open(base_path + ".json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh)
    with open(base_path + ".bin", "wb") as fh:
        fh.write(b"".join(blobs))


@dataclass
class LoadedCheckpoint:
    config: RunConfig
    vocab: Vocabulary
    params: dict[str, np.ndarray]
    accumulators: dict[str, np.ndarray]
    step: int
    metrics: dict


def load_checkpoint(base_path: str) -> LoadedCheckpoint:
    with open(base_path + ".json", "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format_version") != CHECKPOINT_VERSION:
        raise TrainingError(f"unsupported checkpoint version {manifest.get('format_version')}")
    with open(base_path + ".bin", "rb") as fh:
        payload = fh.read()
    params: dict[str, np.ndarray] = {}
    accums: dict[str, np.ndarray] = {}
    for e in manifest["tensors"]:
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        arr = np.frombuffer(payload, dtype=e["dtype"], count=count,
                            offset=e["offset"]).reshape(e["shape"]).copy()
        (params if e["kind"] == "param" else accums)[e["name"]] = arr
    return LoadedCheckpoint(config=RunConfig.from_dict(manifest["config"]),
                            vocab=Vocabulary(manifest["vocab"]),
                            params=params, accumulators=accums,
                            step=manifest["step"], metrics=manifest["metrics"])


def model_from_checkpoint(ckpt: LoadedCheckpoint) -> Model:
    model = Model(ckpt.config, ckpt.vocab)
    model.params.load_state(ckpt.params)
    return model


# -- evaluation -----------------------------------------------------------------


def evaluate(model: Model, samples: list[Sample], beam_size: int | None = None,
             ks: tuple[int, ...] = (1, 2, 5)) -> dict:
    """Decode + rank every sample; returns aggregate metrics and per-sample detail."""
    if not samples:
        raise TrainingError("cannot evaluate on an empty dataset")
    r1, r2, rl = [], [], []
    rankings: list[RankingResult] = []
    details = []
    for s in samples:
        result = model.infer(s, beam_size=beam_size)
        scores = rouge_all(result.summary, s.summary)
        r1.append(scores["rouge1"].f1)
        r2.append(scores["rouge2"].f1)
        rl.append(scores["rougeL"].f1)
        ranking = RankingResult(scores=result.scores, positive=s.positive_index())
        rankings.append(ranking)
        details.append({"id": s.id, "summary": " ".join(result.summary),
                        "reference": " ".join(s.summary),
                        "rouge1": scores["rouge1"].f1, "rouge2": scores["rouge2"].f1,
                        "rougeL": scores["rougeL"].f1,
                        "cover_index": result.cover_index,
                        "positive_index": ranking.positive,
                        "scores": result.scores})
    ap = [1.0 / r.rank_of_positive() for r in rankings]
    report = {"rouge1": float(np.mean(r1)), "rouge2": float(np.mean(r2)),
              "rougeL": float(np.mean(rl)), "map": float(np.mean(ap)),
              "r_at_k": {}}
    for k in ks:
        eligible = [r for r in rankings if len(r.scores) >= k]
        if eligible:
            report["r_at_k"][str(k)] = float(np.mean([1.0 if r.rank_of_positive() <= k else 0.0
                                                      for r in eligible]))
    return {"metrics": report, "samples": details}


# -- the loop --------------------------------------------------------------------


@dataclass
class TrainResult:
    history: list[LossBreakdown] = field(default_factory=list)
    checkpoints: list[str] = field(default_factory=list)
    final_checkpoint: str = ""
    log_path: str = ""


def _param_norms(params: ParameterStore) -> str:
    worst = sorted(((float(np.abs(t.data).max()), n) for n, t in params.items()), reverse=True)
    return ", ".join(f"{n}={v:.3e}" for v, n in worst[:5])


def train_step(model: Model, batch: list[Sample], optimizer: Adagrad, config: RunConfig,
               rng: np.random.Generator | None = None, step: int = 0) -> LossBreakdown:
    """One optimizer update on one batch: forward, backward, clip, apply."""
    model.params.zero_grad()
    with Tape():
        seq_losses, pic_losses = [], []
        for s in batch:
            seq, pic, _steps = model.sample_losses(s, rng)
            seq_losses.append(seq)
            pic_losses.append(pic)
        seq_mean = T.tmean(T.stack(seq_losses))
        pic_mean = T.tmean(T.stack(pic_losses))
        total = seq_mean + pic_mean
        if not np.isfinite(total.item()):
            ids = ",".join(s.id for s in batch)
            raise TrainingError(
                f"non-finite loss at step {step} (batch [{ids}]); "
                f"largest parameters: {_param_norms(model.params)}")
        total.backward()
    clip_gradients(model.params, config.clip_lo, config.clip_hi, config.clip_mode)
    optimizer.step()
    return LossBreakdown(seq=seq_mean.item(), pic=pic_mean.item())


def train(model: Model, train_samples: list[Sample], config: RunConfig,
          out_dir: str, val_samples: list[Sample] | None = None,
          epochs: int | None = None) -> TrainResult:
    """Shuffled mini-batch training with the joint loss.

    Validation (when val_samples given) runs every config.val_every steps;
    the best config.keep_checkpoints checkpoints by validation ROUGE-L are
    retained. A "final" checkpoint is always written. Identical seed and
    config give bitwise-identical checkpoints.
    """
    if not train_samples:
        raise TrainingError("cannot train on an empty dataset")
    os.makedirs(out_dir, exist_ok=True)
    epochs = config.epochs if epochs is None else epochs
    rng = np.random.default_rng(config.seed + 1)    # batch order + negative sampling
    optimizer = Adagrad(model.params, config.lr, config.adagrad_eps)
    result = TrainResult(log_path=os.path.join(out_dir, "metrics.csv"))
    kept: list[tuple[float, int, str]] = []         # (rougeL, step, base path)

    log_fh = open(result.log_path, "w", newline="", encoding="utf-8")
    log = csv.writer(log_fh)
    log.writerow(["step", "l_seq", "l_pic", "val_rougeL", "val_map"])

    step = 0
    try:
        for _epoch in range(epochs):
            order = rng.permutation(len(train_samples))
            for lo in range(0, len(order), config.batch_size):
                batch = [train_samples[i] for i in order[lo:lo + config.batch_size]]
                step += 1
                breakdown = train_step(model, batch, optimizer, config, rng, step)
                result.history.append(breakdown)

                val_rouge, val_map = "", ""
                if val_samples and step % config.val_every == 0:
                    report = evaluate(model, val_samples)["metrics"]
                    val_rouge, val_map = report["rougeL"], report["map"]
                    base = os.path.join(out_dir, f"ckpt_step{step:06d}")
                    save_checkpoint(base, model, optimizer, step,
                                    {"rougeL": val_rouge, "map": val_map})
                    kept.append((val_rouge, step, base))
                    kept.sort(key=lambda e: (-e[0], e[1]))
                    while len(kept) > config.keep_checkpoints:
                        _, _, drop = kept.pop()
                        for ext in (".json", ".bin"):
                            if os.path.exists(drop + ext):
                                os.remove(drop + ext)
                log.writerow([step, f"{breakdown.seq:.10g}", f"{breakdown.pic:.10g}",
                              val_rouge, val_map])
    finally:
        log_fh.close()

    result.checkpoints = [base for _, _, base in kept]
    result.final_checkpoint = os.path.join(out_dir, "final")
    save_checkpoint(result.final_checkpoint, model, optimizer, step)
    return result
