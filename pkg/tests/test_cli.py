import argparse
import os

import numpy as np
import pandas as pd
import pytest

from cli import _manifests, _run_config, cli_main
from conftest import random_audio
from corpus import read_manifest
from models import ModelConfig, build_model, param_count, save_checkpoint
from wavio import read_wav, write_wav

CONF_DIR = os.path.join(os.path.dirname(__file__), "..", "src", "conf")


@pytest.fixture
def checkpoint(tmp_path):
    config = ModelConfig(conv_config="none", fc_depth=1, fc_width=16, input_channels=2, causal=True, look_ahead_frames=2)
    network, params = build_model(config, seed=4)
    path = str(tmp_path / "model.ckpt")
    save_checkpoint(path, network, params)
    return path


@pytest.fixture
def noisy_wav(tmp_path, rng):
    path = str(tmp_path / "noisy.wav")
    write_wav(path, random_audio(rng, seconds=0.4, channels=2))
    return path


def test_make_manifest_and_gen_data(tmp_path):
    manifest_path = str(tmp_path / "dev.csv")
    assert cli_main(["make-manifest", "dev", "4", manifest_path, "--duration-s", "0.5"]) == 0
    manifest = read_manifest(manifest_path)
    assert len(manifest) == 4 and manifest.split == "dev"

    data_dir = tmp_path / "data"
    assert cli_main(["gen-data", manifest_path, str(data_dir), "--sample-format", "pcm16"]) == 0
    assert len(list(data_dir.glob("*.wav"))) == 8


def test_info_on_yaml_config(capsys):
    assert cli_main(["info", os.path.join(CONF_DIR, "models", "search_best.yaml"), "--layers"]) == 0
    out = capsys.readouterr().out
    for line in ["conv_config: small", "blstm_depth: 3", "blstm_width: 1023", "fc_width: 873", "delta_phase: True"]:
        assert line in out
    assert "complex_loss_lambda: 0.113" in out
    assert "param_count:" in out and "ops_per_audio_second:" in out
    assert "latency: whole utterance (non-causal)" in out
    assert "lstm0:" in out


def test_info_on_checkpoint(checkpoint, capsys):
    from models import load_checkpoint

    assert cli_main(["info", checkpoint]) == 0
    out = capsys.readouterr().out
    network, _ = load_checkpoint(checkpoint)
    assert f"param_count: {param_count(network)}" in out
    assert "look_ahead_frames: 2" in out
    assert "latency: 720 samples (45 ms)" in out


def test_enhance_bypass_mask_sums_channels(checkpoint, noisy_wav, tmp_path):
    out = str(tmp_path / "out.wav")
    assert cli_main(["enhance", checkpoint, noisy_wav, out, "--bypass-mask"]) == 0
    noisy, enhanced = read_wav(noisy_wav), read_wav(out)
    assert enhanced.channels == 1
    assert np.allclose(enhanced.samples[0, 1:], noisy.samples.sum(axis=0)[1:], atol=1e-5)


def test_enhance_stream_matches_offline(checkpoint, noisy_wav, tmp_path, capsys):
    offline, streamed = str(tmp_path / "offline.wav"), str(tmp_path / "stream.wav")
    assert cli_main(["enhance", checkpoint, noisy_wav, offline]) == 0
    assert cli_main(["enhance", checkpoint, noisy_wav, streamed, "--stream", "--chunk-size", "97", "--report-latency"]) == 0
    assert "total_ms: 45" in capsys.readouterr().out
    a, b = read_wav(offline), read_wav(streamed)
    assert len(a) == len(b) == len(read_wav(noisy_wav))
    assert np.max(np.abs(a.samples - b.samples)) < 1e-4


def test_enhance_rejects_look_ahead_mismatch(checkpoint, noisy_wav, tmp_path):
    out = str(tmp_path / "out.wav")
    assert cli_main(["enhance", checkpoint, noisy_wav, out, "--look-ahead-ms", "20"]) == 0
    assert cli_main(["enhance", checkpoint, noisy_wav, out, "--look-ahead-ms", "100"]) == 1


def test_evaluate_writes_one_row_per_utterance(checkpoint, tmp_path):
    manifest_path = str(tmp_path / "eval.csv")
    data_dir = str(tmp_path / "data")
    assert cli_main(["make-manifest", "eval", "3", manifest_path, "--duration-s", "0.5"]) == 0
    assert cli_main(["gen-data", manifest_path, data_dir]) == 0
    out = str(tmp_path / "eval_sdr.csv")
    assert cli_main(["evaluate", checkpoint, manifest_path, "--data-dir", data_dir, "--out", out]) == 0
    df = pd.read_csv(out)
    assert len(df) == 3
    assert list(df.columns) == ["utterance_id", "input_snr_db", "sdr_db", "input_sdr_db"]
    assert os.path.exists(tmp_path / "eval_sdr_summary.csv")


def test_train_test_run():
    assert cli_main(["train", os.path.join(CONF_DIR, "tiny.yaml"), "--test-run", "--max-steps", "3"]) == 0


def test_usage_errors(tmp_path, capsys):
    assert cli_main(["enhance", "--no-such-flag"]) == 2
    assert cli_main(["make-manifest", "test", "3", str(tmp_path / "x.csv")]) == 2
    assert cli_main([]) == 2
    assert "usage error" in capsys.readouterr().err


def test_missing_files(tmp_path, noisy_wav):
    assert cli_main(["enhance", str(tmp_path / "none.ckpt"), noisy_wav, str(tmp_path / "o.wav")]) == 2
    assert cli_main(["info", str(tmp_path / "none.yaml")]) == 2
    assert cli_main(["gen-data", str(tmp_path / "none.csv"), str(tmp_path)]) == 2


@pytest.mark.parametrize("name", ["tiny", "small_conv", "causal", "search_best"])
def test_info_on_shipped_model_configs(name):
    assert cli_main(["info", os.path.join(CONF_DIR, "models", f"{name}.yaml")]) == 0


def test_config_counts_size_every_split(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("training:\n    train_count: 3\n    dev_count: 2\n    eval_count: 5\n    duration_s: 0.5\n")
    args = argparse.Namespace(train_manifest=None, dev_manifest=None, eval_manifest=None)
    train, dev, evaluation = _manifests(args, _run_config(str(path)), ["train", "dev", "eval"])
    assert (len(train), len(dev), len(evaluation)) == (3, 2, 5)
    assert evaluation.split == "eval"
