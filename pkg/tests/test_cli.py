import hashlib
import os

import numpy as np
import pytest

from accentctc.cli import dispatch
from accentctc.config import (
    format_config,
    load_config_file,
    model_config_from_dict,
    model_config_to_dict,
    parse_config_text,
)
from accentctc.errors import ConfigError
from accentctc.model import ModelConfig

TOY_FLAGS = ["--accents", "4", "--utts", "60", "--separation", "1.0",
             "--samples-per-symbol", "16", "--train-fraction", "0.8"]
FAST_TRAIN = ["--max-updates", "6", "--batch-size", "4", "--warmup", "2", "--lr", "3e-3"]


def _checksum_dir(path):
    digest = hashlib.sha256()
    for root, _, files in sorted(os.walk(path)):
        for name in sorted(files):
            with open(os.path.join(root, name), "rb") as fh:
                digest.update(name.encode())
                digest.update(fh.read())
    return digest.hexdigest()


# -- config files -----------------------------------------------------------------

def test_parse_config_text_handles_comments_and_dots():
    cfg = parse_config_text("# top\nmodel.d_model = 64  # inline\n\nseed = 3\n")
    assert cfg == {"model.d_model": "64", "seed": "3"}


def test_parse_config_rejects_bad_lines():
    with pytest.raises(ConfigError, match=":2"):
        parse_config_text("a = 1\nnot a pair\n")


def test_format_config_round_trips(tmp_path):
    cfg = {"b.z": "2", "a": "hello world"}
    path = tmp_path / "c.cfg"
    path.write_text(format_config(cfg))
    assert load_config_file(path) == cfg


def test_model_config_dict_round_trip():
    cfg = ModelConfig(conv_layers=((32, 6, 3), (64, 4, 2)), d_encoder=64, d_model=32,
                      n_layers=1, n_heads=2, d_ffn=64, accent_mode="true_label",
                      injection_sites=("context_output",), combine_mode="concat",
                      per_accent_output_heads=True)
    assert model_config_from_dict(model_config_to_dict(cfg)) == cfg


def test_model_config_empty_injection_sites_round_trip():
    cfg = ModelConfig(injection_sites=())
    assert model_config_from_dict(model_config_to_dict(cfg)).injection_sites == ()


# -- CLI ---------------------------------------------------------------------------

def test_gen_data_deterministic_checksums(tmp_path):
    # identical command, two working directories: byte-identical output trees
    for name in ("a", "b"):
        (tmp_path / name).mkdir()
        code = dispatch(["gen-data", "--out", "corpus", "--workdir", str(tmp_path / name),
                         "--seed", "7"] + TOY_FLAGS)
        assert code == 0
    assert _checksum_dir(tmp_path / "a") == _checksum_dir(tmp_path / "b")


def test_unknown_subcommand_exits_1(capsys):
    assert dispatch(["frobnicate"]) == 1


def test_unknown_flag_exits_1():
    assert dispatch(["gen-data", "--out", "x", "--bogus", "1"]) == 1


def test_missing_manifest_exits_2(tmp_path):
    assert dispatch(["train-aid", "--data", str(tmp_path / "nope.tsv"),
                     "--out", str(tmp_path / "run")]) == 2


def test_dynamic_mode_without_aid_ckpt_exits_1(tmp_path, capsys):
    dispatch(["gen-data", "--out", str(tmp_path / "d"), "--seed", "1"] + TOY_FLAGS)
    code = dispatch(["train-asr", "--data", str(tmp_path / "d" / "manifest.tsv"),
                     "--out", str(tmp_path / "run"), "--accent-mode", "dynamic"] + FAST_TRAIN)
    assert code == 1
    assert "aid-ckpt" in capsys.readouterr().err


def test_decode_defaults_echoed(tmp_path):
    data = tmp_path / "d"
    dispatch(["gen-data", "--out", str(data), "--seed", "2"] + TOY_FLAGS)
    run = tmp_path / "asr"
    assert dispatch(["train-asr", "--data", str(data / "manifest.tsv"),
                     "--out", str(run), "--seed", "0"] + FAST_TRAIN) == 0
    dec = tmp_path / "dec"
    assert dispatch(["decode", "--ckpt", str(run / "model.ckpt"),
                     "--data", str(data / "manifest.tsv"), "--out", str(dec),
                     "--beam", "500", "--wip", "-0.52", "--lm-weight", "1.74",
                     "--limit", "2"]) == 0
    resolved = load_config_file(dec / "config.resolved")
    assert resolved["decode.beam"] == "500"
    assert resolved["decode.wip"] == "-0.52"
    assert resolved["decode.lm_weight"] == "1.74"


def test_env_seed_fallback(tmp_path, monkeypatch):
    monkeypatch.setenv("ACCENTCTC_SEED", "99")
    dispatch(["gen-data", "--out", str(tmp_path / "e")] + TOY_FLAGS)
    resolved = load_config_file(tmp_path / "e" / "config.resolved")
    assert resolved["seed"] == "99"


def test_flag_overrides_config_file(tmp_path):
    cfg_file = tmp_path / "base.cfg"
    cfg_file.write_text("gen.n_utterances = 30\ngen.n_accents = 2\nseed = 5\n")
    out = tmp_path / "o"
    dispatch(["gen-data", "--config", str(cfg_file), "--out", str(out), "--utts", "40"])
    resolved = load_config_file(out / "config.resolved")
    assert resolved["gen.n_utterances"] == "40"  # flag wins
    assert resolved["gen.n_accents"] == "2"      # file survives
    manifest = (out / "manifest.tsv").read_text().strip().splitlines()
    assert len(manifest) == 40


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """gen-data -> train-aid -> train-asr(dynamic) -> train-lm, shared by the
    end-to-end CLI assertions below."""
    root = tmp_path_factory.mktemp("pipeline")
    data = root / "data"
    assert dispatch(["gen-data", "--out", str(data), "--seed", "3"] + TOY_FLAGS) == 0
    manifest = str(data / "manifest.tsv")
    aid = root / "aid"
    assert dispatch(["train-aid", "--data", manifest, "--out", str(aid),
                     "--head-only-updates", "3"] + FAST_TRAIN) == 0
    asr = root / "asr"
    assert dispatch(["train-asr", "--data", manifest, "--out", str(asr),
                     "--accent-mode", "dynamic", "--aid-ckpt", str(aid / "model.ckpt")]
                    + FAST_TRAIN) == 0
    lm = root / "lm"
    assert dispatch(["train-lm", "--data", manifest, "--out", str(lm), "--order", "3"]) == 0
    return root, manifest


def test_pipeline_outputs_exist(pipeline):
    root, _ = pipeline
    for rel in ("aid/model.ckpt", "aid/train_log.csv", "aid/config.resolved",
                "asr/model.ckpt", "lm/lm.txt"):
        assert (root / rel).exists()
    log = (root / "aid" / "train_log.csv").read_text().splitlines()
    assert log[0] == "step,loss,lr,wall_ms"
    assert len(log) == 7  # header + 6 steps


def test_decode_and_eval_wer(pipeline, tmp_path, capsys):
    root, manifest = pipeline
    dec = tmp_path / "dec"
    assert dispatch(["decode", "--ckpt", str(root / "asr" / "model.ckpt"),
                     "--data", manifest, "--out", str(dec), "--greedy"]) == 0
    hyps = (dec / "hyps.tsv").read_text().splitlines()
    assert len(hyps) == 12  # test split of 60 at 0.8
    assert dispatch(["eval-wer", "--refs", manifest, "--hyps", str(dec / "hyps.tsv"),
                     "--out", str(tmp_path / "rep")]) == 0
    out = capsys.readouterr().out
    assert "WER%" in out and "All" in out
    assert (tmp_path / "rep" / "wer_report.csv").exists()


def test_decode_with_lm_fusion_runs(pipeline, tmp_path):
    root, manifest = pipeline
    dec = tmp_path / "declm"
    assert dispatch(["decode", "--ckpt", str(root / "asr" / "model.ckpt"),
                     "--data", manifest, "--out", str(dec), "--beam", "4",
                     "--lm", str(root / "lm" / "lm.txt"), "--lm-weight", "0.8",
                     "--limit", "3"]) == 0
    assert len((dec / "hyps.tsv").read_text().splitlines()) == 3


def test_eval_aid_reports(pipeline, tmp_path, capsys):
    root, manifest = pipeline
    assert dispatch(["eval-aid", "--ckpt", str(root / "aid" / "model.ckpt"),
                     "--data", manifest, "--out", str(tmp_path / "rep")]) == 0
    assert "acc%" in capsys.readouterr().out
    assert (tmp_path / "rep" / "aid_report.csv").exists()


def test_rerun_from_resolved_config_reproduces_checkpoint(pipeline, tmp_path):
    root, manifest = pipeline
    again = tmp_path / "again"
    assert dispatch(["train-aid", "--config", str(root / "aid" / "config.resolved"),
                     "--out", str(again), "--threads", "1"]) == 0
    assert (again / "model.ckpt").read_bytes() == (root / "aid" / "model.ckpt").read_bytes()


def test_divergent_training_exits_3(tmp_path):
    data = tmp_path / "d"
    dispatch(["gen-data", "--out", str(data), "--seed", "1", "--utts", "40", "--accents", "2"])
    with np.errstate(all="ignore"):
        code = dispatch(["train-asr", "--data", str(data / "manifest.tsv"),
                         "--out", str(tmp_path / "run"), "--lr", "1e6",
                         "--max-updates", "30", "--batch-size", "4", "--warmup", "1"])
    assert code == 3


def test_workdir_resolves_relative_paths(tmp_path):
    dispatch(["gen-data", "--out", "corpus", "--workdir", str(tmp_path), "--seed", "4",
              "--utts", "12", "--accents", "2"])
    assert (tmp_path / "corpus" / "manifest.tsv").exists()
