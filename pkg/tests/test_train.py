import json
import os

import numpy as np
import pytest
import yaml

from base_models import ConvLayerSpec, ParameterSet
from corpus import chunk_fixed, generate_mixture, make_manifest
from eval import evaluate_network, get_model_from_run, score_mixtures, write_report_csv
from models import ModelConfig, build_model, load_checkpoint
from train import AdamOptimizer, clip_grad_norm, prepare_examples, train, train_step

TINY = ModelConfig(conv_config="none", fc_depth=1, fc_width=16, input_channels=2, learning_rate=1e-3)


@pytest.fixture(scope="module")
def train_mixtures():
    manifest = make_manifest("train", 2, duration_s=1.0)
    return [generate_mixture(spec, "train") for spec in manifest.entries]


@pytest.fixture(scope="module")
def dev_mixtures():
    manifest = make_manifest("dev", 2, duration_s=0.6)
    return [generate_mixture(spec, "dev") for spec in manifest.entries]


def test_adam_first_step_moves_by_learning_rate():
    params = ParameterSet({"w": np.array([1.0, -2.0, 0.5])})
    grads = ParameterSet({"w": np.array([0.3, -4.0, 1e-3])})
    AdamOptimizer(params, 0.01).step(params, grads)
    assert np.allclose(params["w"], [0.99, -1.99, 0.49], rtol=1e-4)


def test_adam_zero_learning_rate_is_a_no_op():
    params = ParameterSet({"w": np.ones(4)})
    optimizer = AdamOptimizer(params, 0.0)
    for _ in range(3):
        optimizer.step(params, ParameterSet({"w": np.arange(4.0)}))
    assert np.array_equal(params["w"], np.ones(4))
    with pytest.raises(ValueError):
        AdamOptimizer(params, -1.0)


def test_clip_grad_norm():
    grads = ParameterSet({"a": np.array([3.0]), "b": np.array([4.0])})
    assert clip_grad_norm(grads, 1.0) == pytest.approx(5.0)
    assert grads.global_norm() == pytest.approx(1.0)
    small = ParameterSet({"a": np.array([0.3, 0.4])})
    assert clip_grad_norm(small, 5.0) == pytest.approx(0.5)
    assert np.array_equal(small["a"], [0.3, 0.4])


def test_loss_decreases_on_a_fixed_batch(train_mixtures):
    network, params = build_model(TINY, seed=0)
    chunks = chunk_fixed([(m.noisy, m.clean) for m in train_mixtures], 0.5)
    batch = prepare_examples(network, chunks)
    optimizer = AdamOptimizer(params, 1e-3)
    losses = [train_step(network, params, batch, optimizer, 5.0)[0] for _ in range(50)]
    assert losses[-1] < losses[0]


def test_train_records_best_dev_step(train_mixtures, dev_mixtures):
    run = train(
        TINY, train_mixtures, dev_mixtures, max_steps=15, batch_size=2, eval_every_steps=5, chunk_s=0.5, progress=False
    )
    assert run.status == "ok"
    assert run.steps == list(range(1, 16))
    assert sorted(run.dev_sdr) == [5, 10, 15]
    best = max(run.dev_sdr.values())
    assert run.best_step == min(step for step, sdr in run.dev_sdr.items() if sdr == best)
    assert run.best_sdr == best

    rescored = score_mixtures(run.network, dev_mixtures, run.best_params, 512)
    assert np.mean([r.sdr_db for r in rescored]) == pytest.approx(best)


def test_training_is_deterministic(train_mixtures, dev_mixtures, tmp_path):
    runs = []
    for name in ("a", "b"):
        out_dir = str(tmp_path / name)
        os.makedirs(out_dir)
        runs.append(
            train(
                TINY,
                train_mixtures,
                dev_mixtures,
                seed=3,
                max_steps=6,
                batch_size=2,
                eval_every_steps=3,
                chunk_s=0.5,
                out_dir=out_dir,
                progress=False,
            )
        )
    assert runs[0].losses == runs[1].losses
    with open(tmp_path / "a" / "best.ckpt", "rb") as fa, open(tmp_path / "b" / "best.ckpt", "rb") as fb:
        assert fa.read() == fb.read()


def test_divergence_marks_run_failed(train_mixtures):
    broken = generate_mixture(make_manifest("train", 1, duration_s=1.0).entries[0], "train")
    broken.noisy.samples[0] = np.nan
    run = train(TINY, [broken], None, max_steps=5, batch_size=1, chunk_s=0.5, progress=False)
    assert run.status == "failed"
    assert run.steps == []
    assert run.best_step is None


def test_train_validates_arguments(train_mixtures):
    with pytest.raises(ValueError):
        train(TINY, train_mixtures, None, batch_size=0, progress=False)
    with pytest.raises(ValueError):
        train(TINY, train_mixtures, None, chunk_s=5.0, progress=False)
    with pytest.raises(ValueError):
        train(ModelConfig(blstm_width=4), train_mixtures, None, progress=False)


def test_run_directory_round_trip(train_mixtures, dev_mixtures, tmp_path):
    out_dir = str(tmp_path)
    with open(os.path.join(out_dir, "config.yaml"), "w") as fp:
        yaml.dump({"model": TINY.to_dict(), "training": {"seed": 0}}, fp)
    run = train(
        TINY,
        train_mixtures,
        dev_mixtures,
        max_steps=10,
        batch_size=2,
        eval_every_steps=5,
        chunk_s=0.5,
        out_dir=out_dir,
        keep_every_steps=5,
        progress=False,
    )
    assert os.path.exists(os.path.join(out_dir, "loss_curve.png"))
    assert os.path.exists(os.path.join(out_dir, "model_10.ckpt"))
    with open(os.path.join(out_dir, "metrics.json")) as fp:
        metrics = json.load(fp)
    assert metrics["best_step"] == run.best_step and len(metrics["loss"]) == 10

    network, conf = get_model_from_run(out_dir)
    assert conf.model.fc_width == 16
    assert network.config == TINY
    for name, value in run.best_params.items():
        assert np.array_equal(network.params[name], value.astype(np.float32))

    stepped, _ = get_model_from_run(out_dir, step=5)
    _, only_conf = get_model_from_run(out_dir, only_conf=True)
    assert only_conf.training.seed == 0
    assert stepped.config == TINY




@pytest.mark.parametrize(
    "config,conv_specs",
    [
        (ModelConfig(conv_config="small", blstm_depth=1, blstm_width=8, causal=True, look_ahead_frames=2), None),
        (
            ModelConfig(blstm_depth=2, blstm_width=8, fc_depth=1, fc_width=8, delta_phase=True, input_channels=2),
            [ConvLayerSpec(4, 1, 5), ConvLayerSpec(4, 3, 3, 2, 1), ConvLayerSpec(2, 1, 1)],
        ),
    ],
)
def test_training_through_conv_and_lstm_layers(config, conv_specs, train_mixtures, dev_mixtures):
    initial, _ = build_model(config, seed=0, conv_specs=conv_specs)
    run = train(
        config,
        train_mixtures,
        dev_mixtures,
        max_steps=3,
        batch_size=1,
        eval_every_steps=3,
        chunk_s=0.5,
        progress=False,
        conv_specs=conv_specs,
    )
    assert run.status == "ok"
    assert run.steps == [1, 2, 3] and np.all(np.isfinite(run.losses))
    assert np.isfinite(run.dev_sdr[3])
    assert not np.array_equal(run.best_params["lstm0.fw.w_hidden"], initial.params["lstm0.fw.w_hidden"])
    assert not np.array_equal(run.best_params["conv0.weight"], initial.params["conv0.weight"])


@pytest.mark.slow
def test_desk_scale_training_beats_the_input(tmp_path):
    """Small conv stack on one utterance per SNR bucket; repeated runs give identical files."""
    config = ModelConfig(conv_config="small", learning_rate=1e-3)
    train_manifest = make_manifest("train", 6, duration_s=3.0)
    dev_manifest = make_manifest("dev", 6, duration_s=3.0)

    csv_bytes, ckpt_bytes = [], []
    for name in ("a", "b"):
        out_dir = tmp_path / name
        out_dir.mkdir()
        run = train(
            config,
            train_manifest,
            dev_manifest,
            max_steps=2000,
            batch_size=1,
            eval_every_steps=500,
            chunk_s=0.5,
            out_dir=str(out_dir),
            progress=False,
        )
        assert run.status == "ok"
        network, _ = load_checkpoint(str(out_dir / "best.ckpt"))
        df, report = evaluate_network(network, dev_manifest, progress=False)
        write_report_csv(str(out_dir / "dev.csv"), df, report)
        csv_bytes.append((out_dir / "dev.csv").read_bytes() + (out_dir / "dev_summary.csv").read_bytes())
        ckpt_bytes.append((out_dir / "best.ckpt").read_bytes())

    assert np.mean(df.sdr_db - df.input_sdr_db) >= 3.0
    assert csv_bytes[0] == csv_bytes[1]
    assert ckpt_bytes[0] == ckpt_bytes[1]
