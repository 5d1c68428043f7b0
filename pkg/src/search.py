import dataclasses
import os
from dataclasses import dataclass

import numpy as np
import pandas as pd
from tqdm import tqdm

from corpus import load_mixtures
from eval import score_mixtures
from models import ModelConfig, ops_per_audio_second, param_count
from stft import DEFAULT_SAMPLE_RATE, StftParams
from train import train


LOOK_AHEAD_RANGE_MS = (-100, 200)


@dataclass
class SearchSpace:
    conv_config: tuple = ("small", "large")
    blstm_depth: tuple = (0, 5)
    blstm_width: tuple = (8, 1024)
    fc_depth: tuple = (0, 5)
    fc_width: tuple = (8, 1024)
    delta_phase: tuple = (True, False)
    complex_loss_lambda: tuple = (0.0, 1.0)
    learning_rate: tuple = (3e-6, 1e-3)  # log-uniform
    input_channels: tuple = (1, 2)

    @classmethod
    def from_config(cls, search):
        """Build from a `search` config section; unrelated keys (budget, ...) are ignored."""
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: tuple(v) for k, v in dict(search).items() if k in names})

    def sample(self, rng):
        def integer(bounds):
            return int(rng.integers(bounds[0], bounds[1] + 1))

        low, high = np.log(self.learning_rate[0]), np.log(self.learning_rate[1])
        return ModelConfig(
            conv_config=str(rng.choice(self.conv_config)),
            blstm_depth=integer(self.blstm_depth),
            blstm_width=integer(self.blstm_width),
            fc_depth=integer(self.fc_depth),
            fc_width=integer(self.fc_width),
            delta_phase=bool(rng.choice(self.delta_phase)),
            complex_loss_lambda=float(rng.uniform(*self.complex_loss_lambda)),
            learning_rate=float(np.exp(rng.uniform(low, high))),
            input_channels=integer(self.input_channels),
        )


def _mixtures(manifest, data_dir):
    if manifest is None or isinstance(manifest, list):
        return manifest
    return load_mixtures(manifest, data_dir)


def _rank_key(run):
    failed = run.status != "ok" or run.best_sdr is None
    return (failed, -(run.best_sdr or 0.0), run.trial)


def random_search(
    space,
    budget,
    per_trial_steps,
    seed,
    train_manifest,
    dev_manifest,
    data_dir=None,
    batch_size=4,
    eval_every_steps=None,
    out_dir=None,
    **train_kwargs,
):
    """Train `budget` sampled configurations for a fixed step budget each, best dev SDR first."""
    if budget < 1:
        raise ValueError(f"budget must be >= 1, got {budget}")
    rng = np.random.default_rng(seed)
    train_mixtures = _mixtures(train_manifest, data_dir)
    dev_mixtures = _mixtures(dev_manifest, data_dir)
    eval_every_steps = eval_every_steps or min(200, per_trial_steps)

    runs = []
    for trial in tqdm(range(budget), desc="search"):
        config = space.sample(rng)
        trial_dir = None
        if out_dir is not None:
            trial_dir = os.path.join(out_dir, f"trial_{trial:03d}")
            os.makedirs(trial_dir, exist_ok=True)
        run = train(
            config,
            train_mixtures,
            dev_mixtures,
            seed=seed + trial,
            max_steps=per_trial_steps,
            batch_size=batch_size,
            eval_every_steps=eval_every_steps,
            out_dir=trial_dir,
            progress=False,
            **train_kwargs,
        )
        run.trial = trial
        runs.append(run)
    return sorted(runs, key=_rank_key)


def search_scatter(runs, stft_params=None, sample_rate=DEFAULT_SAMPLE_RATE):
    """(param_count, ops_per_second, sdr) per trial, with the sampled hyperparameters."""
    rows = []
    for run in runs:
        row = {"trial": run.trial}
        row.update(run.config.to_dict())
        row["param_count"] = param_count(run.config, stft_params)
        row["ops_per_second"] = ops_per_audio_second(run.config, stft_params, sample_rate)
        row["sdr"] = run.best_sdr if run.best_sdr is not None else float("nan")
        row["best_step"] = run.best_step
        row["status"] = run.status
        rows.append(row)
    return pd.DataFrame(rows)


def look_ahead_frames(ms, stft_params=None, sample_rate=DEFAULT_SAMPLE_RATE):
    p = stft_params or StftParams()
    hop_ms = 1000.0 * p.hop / sample_rate
    low, high = LOOK_AHEAD_RANGE_MS
    if not low <= ms <= high:
        raise ValueError(f"look-ahead {ms} ms outside [{low}, {high}] ms")
    frames = ms / hop_ms
    if abs(frames - round(frames)) > 1e-9:
        raise ValueError(f"look-ahead {ms} ms is not a multiple of the {hop_ms:g} ms hop")
    return int(round(frames))


@dataclass
class SweepReport:
    rows: pd.DataFrame  # look_ahead_ms, trial, sdr_dev, sdr_eval, status
    reference: float = None  # non-causal eval SDR

    def summary(self):
        return sweep_summary(self.rows)


def _train_and_score(config, seed, train_mixtures, dev_mixtures, eval_mixtures, train_kwargs):
    run = train(config, train_mixtures, dev_mixtures, seed=seed, progress=False, **train_kwargs)
    if run.best_params is None:
        return run, float("nan"), float("nan")
    results = score_mixtures(run.network, eval_mixtures, run.best_params)
    return run, run.best_sdr, float(np.mean([r.sdr_db for r in results]))


def lookahead_sweep(
    base_config,
    look_ahead_ms,
    trials_per_point,
    train_manifest,
    dev_manifest,
    eval_manifest,
    seed=0,
    same_seed_trials=False,
    non_causal_reference=False,
    data_dir=None,
    **train_kwargs,
):
    """Train causal variants of base_config at each look-ahead and score dev/eval SDR."""
    frames = [look_ahead_frames(ms) for ms in look_ahead_ms]
    if trials_per_point < 1:
        raise ValueError(f"trials_per_point must be >= 1, got {trials_per_point}")
    train_mixtures = _mixtures(train_manifest, data_dir)
    dev_mixtures = _mixtures(dev_manifest, data_dir)
    eval_mixtures = _mixtures(eval_manifest, data_dir)

    def trial_seed(trial):
        return seed if same_seed_trials else seed + trial

    rows = []
    points = [(ms, k, trial) for ms, k in zip(look_ahead_ms, frames) for trial in range(trials_per_point)]
    pbar = tqdm(points, desc="sweep")
    for ms, k, trial in pbar:
        config = base_config.as_causal(k)
        run, dev, ev = _train_and_score(
            config, trial_seed(trial), train_mixtures, dev_mixtures, eval_mixtures, train_kwargs
        )
        rows.append({"look_ahead_ms": ms, "trial": trial, "sdr_dev": dev, "sdr_eval": ev, "status": run.status})
        pbar.set_description(f"look-ahead {ms} ms: eval SDR {ev:.2f}")

    reference = None
    if non_causal_reference:
        config = dataclasses.replace(base_config, causal=False, look_ahead_frames=0)
        scores = [
            _train_and_score(config, trial_seed(t), train_mixtures, dev_mixtures, eval_mixtures, train_kwargs)[2]
            for t in range(trials_per_point)
        ]
        reference = float(np.nanmean(scores))
    return SweepReport(pd.DataFrame(rows), reference)


def sweep_summary(rows):
    """Mean and run-to-run std (population) of dev and eval SDR per look-ahead."""
    grouped = rows.groupby("look_ahead_ms")
    summary = pd.DataFrame(
        {
            "trials": grouped.trial.count(),
            "sdr_dev_mean": grouped.sdr_dev.mean(),
            "sdr_dev_std": grouped.sdr_dev.std(ddof=0),
            "sdr_eval_mean": grouped.sdr_eval.mean(),
            "sdr_eval_std": grouped.sdr_eval.std(ddof=0),
        }
    )
    return summary.reset_index()
