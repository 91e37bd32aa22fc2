"""Command-line entry point: train, eval, infer, synth, gradcheck.

Exit codes: 0 success, 1 gradcheck failure, 2 usage/config error,
3 data error, 4 checkpoint/dataset mismatch. DIMS_SEED overrides the
config seed unless --seed is given explicitly.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from .config import ConfigError, RunConfig
from .data import (DataError, Sample, SyntheticSpec, build_vocab, gen_synthetic,
                   labeling_diagnostic, load_dataset, save_dataset)
from .diagnostics import full_model_gradcheck
from .encoders import InputError
from .model import Model, attention_export
from .training import (TrainingError, evaluate, load_checkpoint, model_from_checkpoint,
                       train)

EXIT_OK = 0
EXIT_GRADCHECK = 1
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_MISMATCH = 4

ABLATIONS = ("disable_conditional_self_attention", "disable_global_attention")


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    for f in dataclasses.fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.type == "bool":
            parser.add_argument(flag, default=None, action=argparse.BooleanOptionalAction)
        elif f.type == "int":
            parser.add_argument(flag, type=int, default=None)
        elif f.type == "float":
            parser.add_argument(flag, type=float, default=None)
        else:
            parser.add_argument(flag, type=str, default=None)
    parser.add_argument("--ablation", action="append", default=[], choices=ABLATIONS,
                        help="shorthand for the matching --disable-... flag")


def _build_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    env_seed = os.environ.get("DIMS_SEED")
    if env_seed is not None and args.seed is None:
        try:
            cfg = cfg.override(seed=int(env_seed))
        except ValueError:
            raise ConfigError(f"DIMS_SEED must be an integer, got {env_seed!r}")
    overrides = {}
    for f in dataclasses.fields(RunConfig):
        val = getattr(args, f.name, None)
        if val is not None:
            overrides[f.name] = val
    for name in args.ablation:
        overrides[name] = True
    cfg = cfg.override(**overrides)
    return cfg


def _load_samples(path: str, cfg: RunConfig | None = None):
    max_article = cfg.encode_steps if cfg else 100
    max_summary = cfg.max_decode if cfg else 30
    result = load_dataset(path, max_article_len=max_article, max_summary_len=max_summary)
    for err in result.errors:
        print(f"warning: {path}: {err}", file=sys.stderr)
    return result.samples


def _emit(payload: dict, as_json: bool, human: str) -> None:
    if as_json:
        print(json.dumps(payload))
    else:
        print(human)


# -- subcommands ------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = _build_config(args)
    train_samples = _load_samples(args.data, cfg)
    if not train_samples:
        print(f"error: {args.data}: no usable samples", file=sys.stderr)
        return EXIT_DATA
    mean_sim = labeling_diagnostic(train_samples)
    if mean_sim is not None:
        print(f"info: mean positive-label cosine similarity {mean_sim:.3f}", file=sys.stderr)
    val_samples = _load_samples(args.val, cfg) if args.val else None
    vocab = build_vocab(train_samples, cfg.vocab_size)
    model = Model(cfg, vocab)
    result = train(model, train_samples, cfg, args.out, val_samples=val_samples,
                   epochs=args.epochs)
    last = result.history[-1]
    payload = {"steps": len(result.history), "final_checkpoint": result.final_checkpoint,
               "kept_checkpoints": result.checkpoints, "log": result.log_path,
               "final_l_seq": last.seq, "final_l_pic": last.pic}
    _emit(payload, args.json,
          f"trained {len(result.history)} steps; final L_seq={last.seq:.4f} "
          f"L_pic={last.pic:.4f}\ncheckpoint: {result.final_checkpoint}\nlog: {result.log_path}")
    return EXIT_OK


def _eval_one(base: str, data_path: str, beam: int | None, details_path: str | None) -> dict:
    ckpt = load_checkpoint(base)
    model = model_from_checkpoint(ckpt)
    samples = _load_samples(data_path, model.config)
    if not samples:
        raise DataError(f"{data_path}: no usable samples")
    report = evaluate(model, samples, beam_size=beam)
    if details_path:
        with open(details_path, "w", encoding="utf-8") as fh:
            for row in report["samples"]:
                fh.write(json.dumps(row) + "\n")
    return report["metrics"]


def cmd_eval(args) -> int:
    if args.report == "avg5":
        if not args.checkpoints:
            print("error: --report avg5 needs --checkpoints DIR", file=sys.stderr)
            return EXIT_USAGE
        bases = sorted(os.path.join(args.checkpoints, f[:-5])
                       for f in os.listdir(args.checkpoints)
                       if f.startswith("ckpt_") and f.endswith(".json"))
        if not bases:
            print(f"error: no checkpoints under {args.checkpoints}", file=sys.stderr)
            return EXIT_DATA
        reports = [_eval_one(b, args.data, args.beam, None) for b in bases]
        avg = {k: float(np.mean([r[k] for r in reports]))
               for k in ("rouge1", "rouge2", "rougeL", "map")}
        avg["r_at_k"] = {k: float(np.mean([r["r_at_k"][k] for r in reports]))
                         for k in reports[0]["r_at_k"]}
        print(json.dumps({"metrics": avg, "checkpoints": bases}))
        return EXIT_OK
    if not args.checkpoint:
        print("error: eval needs --checkpoint (or --report avg5 --checkpoints DIR)", file=sys.stderr)
        return EXIT_USAGE
    metrics = _eval_one(args.checkpoint, args.data, args.beam, args.details)
    print(json.dumps(metrics))
    return EXIT_OK


def _sample_from_flags(args) -> Sample:
    if args.sample:
        samples = _load_samples(args.sample)
        if not samples:
            raise DataError(f"{args.sample}: no usable samples")
        return samples[0]
    if not args.article or not args.frames_json:
        raise ConfigError("infer needs --sample FILE or both --article and --frames-json")
    frames = [np.asarray(v, dtype=np.float64) for v in json.loads(args.frames_json)]
    return Sample(id="inline", article=args.article.split(), summary=["<s>"],
                  frames=frames, frame_kind="feat", cover=args.cover_index)


def cmd_infer(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    model = model_from_checkpoint(ckpt)
    sample = _sample_from_flags(args)
    result = model.infer(sample, beam_size=args.beam)
    if args.dump_attention:
        with open(args.dump_attention, "w", encoding="utf-8") as fh:
            json.dump(attention_export(result), fh)
    payload = {"summary": " ".join(result.summary), "cover_index": result.cover_index,
               "scores": result.scores}
    _emit(payload, args.json,
          f"summary: {payload['summary']}\ncover index: {result.cover_index}\n"
          f"scores: {json.dumps(result.scores)}")
    return EXIT_OK


def cmd_synth(args) -> int:
    spec = SyntheticSpec.from_file(args.spec) if args.spec else SyntheticSpec()
    overrides = {f.name: getattr(args, f.name) for f in dataclasses.fields(SyntheticSpec)
                 if getattr(args, f.name, None) is not None}
    env_seed = os.environ.get("DIMS_SEED")
    if env_seed is not None and "seed" not in overrides:
        overrides["seed"] = int(env_seed)
    spec = dataclasses.replace(spec, **overrides)
    spec.validate()
    samples = gen_synthetic(spec)
    save_dataset(samples, args.out)
    _emit({"samples": len(samples), "path": args.out, "seed": spec.seed}, args.json,
          f"wrote {len(samples)} samples to {args.out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    report = full_model_gradcheck(eps=args.eps, tol=args.tol,
                                  max_coords_per_param=args.max_coords,
                                  corrupt=args.corrupt)
    if args.json:
        worst = {"param": report.worst[0], "coord": report.worst[1]} if report.worst else None
        print(json.dumps({"ok": report.ok, "max_rel_err": report.max_rel_err,
                          "tol": report.tol, "worst": worst,
                          "failures": report.failures}))
    else:
        print(report.summary())
    return EXIT_OK if report.ok else EXIT_GRADCHECK


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dims",
                                description="joint article summarization + video cover selection")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config", help="JSON config file (flags override it)")
    t.add_argument("--data", required=True, help="training JSONL manifest")
    t.add_argument("--val", help="validation JSONL manifest")
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--json", action="store_true")
    _add_config_flags(t)
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", help="checkpoint base path (without .json/.bin)")
    e.add_argument("--data", required=True)
    e.add_argument("--beam", type=int, default=None)
    e.add_argument("--details", default="eval_details.jsonl",
                   help="per-sample detail JSONL (default eval_details.jsonl)")
    e.add_argument("--report", choices=["avg5"], default=None)
    e.add_argument("--checkpoints", help="directory of retained checkpoints for --report avg5")
    e.set_defaults(fn=cmd_eval)

    i = sub.add_parser("infer", help="summarize one sample and pick its cover")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--sample", help="JSONL file; the first sample is used")
    i.add_argument("--article", help="inline whitespace-tokenized article")
    i.add_argument("--frames-json", help="inline JSON list of feature vectors")
    i.add_argument("--cover-index", type=int, default=0)
    i.add_argument("--beam", type=int, default=None)
    i.add_argument("--dump-attention", help="write the global-attention matrix as JSON")
    i.add_argument("--json", action="store_true")
    i.set_defaults(fn=cmd_infer)

    s = sub.add_parser("synth", help="generate a synthetic dataset")
    s.add_argument("--spec", help="JSON synthetic spec file")
    s.add_argument("--out", required=True)
    s.add_argument("--json", action="store_true")
    for f in dataclasses.fields(SyntheticSpec):
        typ = {"int": int, "float": float}.get(f.type, str)
        s.add_argument("--" + f.name.replace("_", "-"), type=typ, default=None)
    s.set_defaults(fn=cmd_synth)

    g = sub.add_parser("gradcheck", help="finite-difference check of the full model")
    g.add_argument("--tol", type=float, default=1e-4)
    g.add_argument("--eps", type=float, default=1e-4)
    g.add_argument("--max-coords", type=int, default=None,
                   help="subsample this many coordinates per parameter")
    g.add_argument("--corrupt", help="test hook: tamper with this parameter's gradient")
    g.add_argument("--json", action="store_true")
    g.set_defaults(fn=cmd_gradcheck)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, TrainingError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except InputError as e:
        print(f"error: checkpoint/dataset mismatch: {e}", file=sys.stderr)
        return EXIT_MISMATCH
    except (FileNotFoundError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
