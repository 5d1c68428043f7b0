import numpy as np
import pandas as pd
import pytest

from base_models import ConvLayerSpec
from corpus import generate_mixture, make_manifest
from models import ModelConfig
from search import (
    SearchSpace,
    look_ahead_frames,
    lookahead_sweep,
    random_search,
    search_scatter,
    sweep_summary,
)

SMALL_SPACE = SearchSpace(
    conv_config=("none",),
    blstm_depth=(0, 0),
    fc_depth=(0, 1),
    fc_width=(8, 16),
    learning_rate=(1e-4, 1e-3),
)
QUICK = dict(batch_size=2, eval_every_steps=3, chunk_s=0.5)


def _mixtures(split, count, duration_s):
    return [generate_mixture(spec, split) for spec in make_manifest(split, count, duration_s).entries]


@pytest.fixture(scope="module")
def data():
    return _mixtures("train", 2, 1.0), _mixtures("dev", 2, 0.6), _mixtures("eval", 2, 0.6)


def test_sampled_configs_are_valid_and_in_range():
    space = SearchSpace()
    rng = np.random.default_rng(0)
    configs = [space.sample(rng) for _ in range(1000)]
    for config in configs:
        assert config.validate() == []
        assert config.conv_config in ("small", "large")
        assert 0 <= config.blstm_depth <= 5 and 8 <= config.blstm_width <= 1024
        assert 0 <= config.fc_depth <= 5 and 8 <= config.fc_width <= 1024
        assert 0.0 <= config.complex_loss_lambda <= 1.0
        assert 3e-6 <= config.learning_rate <= 1e-3
        assert config.input_channels in (1, 2)
        assert not config.causal
    log_lr = np.log10([c.learning_rate for c in configs])
    # log-uniform: the median sits near the middle of the log range
    assert abs(np.median(log_lr) - np.mean(np.log10([3e-6, 1e-3]))) < 0.2
    assert {c.blstm_depth for c in configs} == set(range(6))
    assert {c.delta_phase for c in configs} == {True, False}


def test_space_from_config_section():
    space = SearchSpace.from_config({"budget": 8, "per_trial_steps": 10, "fc_width": [8, 32], "conv_config": ["none"]})
    assert space.fc_width == (8, 32)
    assert space.conv_config == ("none",)
    assert space.blstm_width == (8, 1024)


def test_random_search_ranks_trials(data):
    train_mixtures, dev_mixtures, _ = data
    runs = random_search(SMALL_SPACE, 3, 3, 7, train_mixtures, dev_mixtures, **QUICK)
    assert sorted(r.trial for r in runs) == [0, 1, 2]
    sdrs = [r.best_sdr for r in runs]
    assert sdrs == sorted(sdrs, reverse=True)

    scatter = search_scatter(runs)
    assert len(scatter) == 3
    for column in ("trial", "param_count", "ops_per_second", "sdr", "fc_width", "status"):
        assert column in scatter.columns
    assert (scatter.param_count > 0).all()


def test_random_search_budget_of_one(data, tmp_path):
    train_mixtures, dev_mixtures, _ = data
    runs = random_search(SMALL_SPACE, 1, 3, 0, train_mixtures, dev_mixtures, out_dir=str(tmp_path), **QUICK)
    assert len(runs) == 1
    assert (tmp_path / "trial_000" / "best.ckpt").exists()
    with pytest.raises(ValueError):
        random_search(SMALL_SPACE, 0, 3, 0, train_mixtures, dev_mixtures)


@pytest.mark.parametrize("ms,frames", [(0, 0), (100, 10), (-100, -10), (200, 20), (-50, -5)])
def test_look_ahead_frames(ms, frames):
    assert look_ahead_frames(ms) == frames


@pytest.mark.parametrize("ms", [250, -110, 15, 0.5])
def test_look_ahead_frames_rejects(ms):
    with pytest.raises(ValueError):
        look_ahead_frames(ms)


def test_same_seed_sweep_has_zero_spread(data):
    train_mixtures, dev_mixtures, eval_mixtures = data
    base = ModelConfig(conv_config="none", fc_depth=1, fc_width=16, learning_rate=1e-3)
    report = lookahead_sweep(
        base,
        [0, 50],
        2,
        train_mixtures,
        dev_mixtures,
        eval_mixtures,
        same_seed_trials=True,
        non_causal_reference=True,
        max_steps=3,
        **QUICK,
    )
    assert len(report.rows) == 4
    assert set(report.rows.status) == {"ok"}
    summary = report.summary()
    assert list(summary.look_ahead_ms) == [0, 50]
    assert (summary.trials == 2).all()
    assert np.allclose(summary.sdr_eval_std, 0.0)
    assert np.isfinite(report.reference)


def test_sweep_rejects_bad_points(data):
    train_mixtures, dev_mixtures, eval_mixtures = data
    base = ModelConfig(conv_config="none")
    with pytest.raises(ValueError):
        lookahead_sweep(base, [25], 1, train_mixtures, dev_mixtures, eval_mixtures)
    with pytest.raises(ValueError):
        lookahead_sweep(base, [0], 0, train_mixtures, dev_mixtures, eval_mixtures)


def test_sweep_summary():
    rows = pd.DataFrame(
        {
            "look_ahead_ms": [0, 0, 100, 100],
            "trial": [0, 1, 0, 1],
            "sdr_dev": [5.0, 7.0, 8.0, 8.0],
            "sdr_eval": [4.0, 6.0, 9.0, 9.0],
        }
    )
    summary = sweep_summary(rows)
    first = summary[summary.look_ahead_ms == 0].iloc[0]
    assert first.sdr_dev_mean == 6.0 and first.sdr_dev_std == 1.0
    assert summary[summary.look_ahead_ms == 100].iloc[0].sdr_eval_std == 0.0


@pytest.mark.slow
def test_look_ahead_direction():
    """Delaying the features costs SDR; look-ahead beyond zero buys little."""
    conv_specs = [
        ConvLayerSpec(8, 1, 7),
        ConvLayerSpec(8, 7, 1),
        ConvLayerSpec(8, 5, 5, 2, 1),
        ConvLayerSpec(4, 1, 1),
    ]
    base = ModelConfig(blstm_depth=1, blstm_width=32, learning_rate=1e-3)
    report = lookahead_sweep(
        base,
        [-100, 0, 100, 200],
        2,
        make_manifest("train", 12, 3.0),
        make_manifest("dev", 6, 3.0),
        make_manifest("eval", 6, 3.0),
        max_steps=1000,
        batch_size=2,
        chunk_s=1.0,
        eval_every_steps=250,
        conv_specs=conv_specs,
    )
    assert (report.rows.status == "ok").all()
    assert (report.rows.groupby("look_ahead_ms").trial.count() == 2).all()
    sdr = report.summary().set_index("look_ahead_ms").sdr_eval_mean
    assert sdr[-100] <= sdr[0] - 1.0
    assert max(sdr[0], sdr[100], sdr[200]) - min(sdr[0], sdr[100], sdr[200]) <= 1.0