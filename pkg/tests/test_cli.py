"""Command-line interface: subcommands, exit codes, output contracts."""

import json
import os

import numpy as np
import pytest

from dims.cli import main
from dims.data import SyntheticSpec, gen_synthetic, save_dataset


@pytest.fixture()
def tiny_dataset(tmp_path):
    spec = SyntheticSpec(num_samples=8, vocab_size=20, topic_count=3, feature_dim=8,
                         article_len_lo=6, article_len_hi=8, summary_len=2,
                         num_frames=4, noise=0.0, seed=11)
    path = str(tmp_path / "data.jsonl")
    save_dataset(gen_synthetic(spec), path)
    return path


@pytest.fixture()
def tiny_config(tmp_path):
    cfg = {"embed_dim": 8, "hidden_dim": 8, "feature_dim": 8,
           "frame_featurizer": "passthrough", "vocab_size": 100,
           "min_decode": 1, "max_decode": 4, "segment_len": 2,
           "batch_size": 4, "epochs": 2, "seed": 3}
    path = str(tmp_path / "config.json")
    with open(path, "w") as fh:
        json.dump(cfg, fh)
    return path


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture()
def trained(tmp_path, tiny_dataset, tiny_config, capsys):
    out = str(tmp_path / "run")
    code, stdout, _ = run_cli(capsys, "train", "--config", tiny_config,
                              "--data", tiny_dataset, "--out", out, "--json")
    assert code == 0
    return json.loads(stdout)["final_checkpoint"], tiny_dataset


class TestTrain:
    def test_happy_path(self, trained):
        base, _ = trained
        assert os.path.exists(base + ".json") and os.path.exists(base + ".bin")

    def test_unknown_flag_exits_2(self, tiny_dataset, tmp_path):
        with pytest.raises(SystemExit) as e:
            main(["train", "--data", tiny_dataset, "--out", str(tmp_path / "x"),
                  "--no-such-flag"])
        assert e.value.code == 2

    def test_invalid_config_key_exits_2_with_key_name(self, tmp_path, tiny_dataset, capsys):
        bad = str(tmp_path / "bad.json")
        with open(bad, "w") as fh:
            json.dump({"hidden_dimension": 8}, fh)
        code, _, err = run_cli(capsys, "train", "--config", bad,
                               "--data", tiny_dataset, "--out", str(tmp_path / "x"))
        assert code == 2
        assert "hidden_dimension" in err

    def test_missing_data_exits_3(self, tmp_path, tiny_config, capsys):
        code, _, _ = run_cli(capsys, "train", "--config", tiny_config,
                             "--data", str(tmp_path / "nope.jsonl"),
                             "--out", str(tmp_path / "x"))
        assert code == 3

    def test_ablation_flag_lands_in_checkpoint(self, tmp_path, tiny_dataset, tiny_config, capsys):
        out = str(tmp_path / "ablated")
        code, stdout, _ = run_cli(capsys, "train", "--config", tiny_config,
                                  "--data", tiny_dataset, "--out", out,
                                  "--ablation", "disable_global_attention",
                                  "--epochs", "1", "--json")
        assert code == 0
        base = json.loads(stdout)["final_checkpoint"]
        manifest = json.load(open(base + ".json"))
        assert manifest["config"]["disable_global_attention"] is True

    def test_env_seed_override(self, tmp_path, tiny_dataset, tiny_config, capsys, monkeypatch):
        monkeypatch.setenv("DIMS_SEED", "77")
        out = str(tmp_path / "env")
        code, stdout, _ = run_cli(capsys, "train", "--config", tiny_config,
                                  "--data", tiny_dataset, "--out", out,
                                  "--epochs", "1", "--json")
        assert code == 0
        manifest = json.load(open(json.loads(stdout)["final_checkpoint"] + ".json"))
        assert manifest["config"]["seed"] == 77


class TestEval:
    def test_metrics_json(self, trained, tmp_path, capsys):
        base, data = trained
        details = str(tmp_path / "details.jsonl")
        code, stdout, _ = run_cli(capsys, "eval", "--checkpoint", base, "--data", data,
                                  "--beam", "2", "--details", details)
        assert code == 0
        metrics = json.loads(stdout)
        for key in ("rouge1", "rouge2", "rougeL", "map", "r_at_k"):
            assert key in metrics
        rows = [json.loads(l) for l in open(details)]
        assert len(rows) == 8
        assert {"id", "summary", "reference", "scores"} <= set(rows[0])

    def test_empty_dataset_exits_3(self, trained, tmp_path, capsys):
        base, _ = trained
        empty = str(tmp_path / "empty.jsonl")
        open(empty, "w").close()
        code, _, _ = run_cli(capsys, "eval", "--checkpoint", base, "--data", empty,
                             "--details", str(tmp_path / "d.jsonl"))
        assert code == 3

    def test_mismatched_dataset_exits_4(self, trained, tmp_path, capsys):
        base, _ = trained
        raw = [gen_synthetic(SyntheticSpec(num_samples=2, feature_dim=8, seed=1))[0]]
        raw[0].frames = [np.zeros((16, 16, 3))]
        raw[0].frame_kind = "raw"
        raw[0].cover = 0
        path = str(tmp_path / "raw.jsonl")
        save_dataset(raw, path)
        code, _, err = run_cli(capsys, "eval", "--checkpoint", base, "--data", path,
                               "--details", str(tmp_path / "d2.jsonl"))
        assert code == 4
        assert "mismatch" in err

    def test_avg5_report(self, tmp_path, tiny_dataset, tiny_config, capsys):
        out = str(tmp_path / "run5")
        code, stdout, _ = run_cli(capsys, "train", "--config", tiny_config,
                                  "--data", tiny_dataset, "--val", tiny_dataset,
                                  "--out", out, "--val-every", "1",
                                  "--epochs", "3", "--json")
        assert code == 0
        code, stdout, _ = run_cli(capsys, "eval", "--report", "avg5",
                                  "--checkpoints", out, "--data", tiny_dataset,
                                  "--beam", "1")
        assert code == 0
        rep = json.loads(stdout)
        assert len(rep["checkpoints"]) == 5
        assert "rougeL" in rep["metrics"]


class TestInfer:
    def test_deterministic_output(self, trained, tmp_path, capsys):
        base, data = trained
        outs = []
        for _ in range(2):
            code, stdout, _ = run_cli(capsys, "infer", "--checkpoint", base,
                                      "--sample", data, "--json")
            assert code == 0
            outs.append(stdout)
        assert outs[0] == outs[1]

    def test_beam_one_equals_greedy_flagging(self, trained, capsys):
        base, data = trained
        _, a, _ = run_cli(capsys, "infer", "--checkpoint", base, "--sample", data,
                          "--beam", "1", "--json")
        _, b, _ = run_cli(capsys, "infer", "--checkpoint", base, "--sample", data,
                          "--beam", "1", "--json")
        assert json.loads(a)["summary"] == json.loads(b)["summary"]

    def test_attention_dump_shape(self, trained, tmp_path, capsys):
        base, data = trained
        dump = str(tmp_path / "attn.json")
        code, stdout, _ = run_cli(capsys, "infer", "--checkpoint", base, "--sample", data,
                                  "--dump-attention", dump, "--json")
        assert code == 0
        attn = json.load(open(dump))
        first = json.loads(open(data).readline())
        n_tokens = len(first["article"])
        n_segments = -(-len(first["frames"]["payload"]) // 2)   # segment_len 2
        assert len(attn["tokens"]) == n_tokens
        assert len(attn["scores"]) == n_tokens
        assert all(len(row) == n_segments for row in attn["scores"])
        assert attn["segments"] == list(range(n_segments))

    def test_inline_sample(self, trained, capsys):
        base, _ = trained
        frames = json.dumps([[0.1] * 8, [0.4] * 8])
        code, stdout, _ = run_cli(capsys, "infer", "--checkpoint", base,
                                  "--article", "w001 w002 topic00 w003",
                                  "--frames-json", frames, "--json")
        assert code == 0
        payload = json.loads(stdout)
        assert "summary" in payload and "cover_index" in payload
        assert len(payload["scores"]) == 2


class TestSynth:
    def test_deterministic_per_seed(self, tmp_path, capsys):
        a, b = str(tmp_path / "a.jsonl"), str(tmp_path / "b.jsonl")
        for path in (a, b):
            code, _, _ = run_cli(capsys, "synth", "--out", path,
                                 "--num-samples", "6", "--seed", "42")
            assert code == 0
        assert open(a).read() == open(b).read()

    def test_spec_file_with_overrides(self, tmp_path, capsys):
        spec_path = str(tmp_path / "spec.json")
        with open(spec_path, "w") as fh:
            json.dump({"num_samples": 4, "seed": 9, "feature_dim": 8}, fh)
        out = str(tmp_path / "out.jsonl")
        code, stdout, _ = run_cli(capsys, "synth", "--spec", spec_path, "--out", out,
                                  "--num-samples", "3", "--json")
        assert code == 0
        assert json.loads(stdout)["samples"] == 3
        assert len(open(out).read().strip().splitlines()) == 3

    def test_unknown_spec_key_exits_3(self, tmp_path, capsys):
        spec_path = str(tmp_path / "spec.json")
        with open(spec_path, "w") as fh:
            json.dump({"sample_count": 4}, fh)
        code, _, err = run_cli(capsys, "synth", "--spec", spec_path,
                               "--out", str(tmp_path / "x.jsonl"))
        assert code == 3
        assert "sample_count" in err


class TestGradcheck:
    def test_passes_quickly_when_sampled(self, capsys):
        code, stdout, _ = run_cli(capsys, "gradcheck", "--max-coords", "2", "--json")
        assert code == 0
        rep = json.loads(stdout)
        assert rep["ok"] is True and rep["max_rel_err"] <= rep["tol"]

    def test_corrupt_hook_fails_with_param_name(self, capsys):
        code, stdout, _ = run_cli(capsys, "gradcheck", "--max-coords", "2",
                                  "--corrupt", "decoder.out.w")
        assert code == 1
        assert "decoder.out.w" in stdout

    def test_unknown_corrupt_param(self, capsys):
        code, _, err = run_cli(capsys, "gradcheck", "--corrupt", "nope")
        assert code == 3
