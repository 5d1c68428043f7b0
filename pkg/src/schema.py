from quinine import (
    tstring,
    tinteger,
    tfloat,
    tboolean,
    stdict,
    default,
    allowed,
    nullable,
)
from funcy import merge


def bounded(low, high):
    return {"min": low, "max": high}


tnumbers = {"type": "list", "schema": {"type": "number"}}

CONV_CONFIGS = ["small", "large", "none"]

# ranges from the hyperparameter study; ModelConfig.validate enforces the same
model_schema = {
    "conv_config": merge(tstring, allowed(CONV_CONFIGS), default("small")),
    "blstm_depth": merge(tinteger, bounded(0, 5), default(0)),
    "blstm_width": merge(tinteger, bounded(8, 1024), default(8)),
    "fc_depth": merge(tinteger, bounded(0, 5), default(0)),
    "fc_width": merge(tinteger, bounded(8, 1024), default(8)),
    "delta_phase": merge(tboolean, default(False)),
    "complex_loss_lambda": merge(tfloat, bounded(0.0, 1.0), default(0.0)),
    "learning_rate": merge(tfloat, default(1e-4)),
    "input_channels": merge(tinteger, bounded(1, 2), default(1)),
    "causal": merge(tboolean, default(False)),
    "look_ahead_frames": merge(tinteger, bounded(-10, 20), default(0)),
    "compression_power": merge(tfloat, default(0.3)),
}

training_schema = {
    "seed": merge(tinteger, default(0)),
    "max_steps": merge(tinteger, default(2000)),
    "batch_size": merge(tinteger, default(4)),
    "eval_every_steps": merge(tinteger, default(200)),  # dev SDR cadence
    "keep_every_steps": merge(tinteger, default(-1)),  # permanent checkpoints
    "chunk_s": merge(tfloat, default(3.0)),
    "grad_clip_norm": merge(tfloat, default(5.0)),
    "train_manifest": merge(tstring, nullable, default(None)),
    "dev_manifest": merge(tstring, nullable, default(None)),
    "data_dir": merge(tstring, nullable, default(None)),  # None: generate in memory
    "train_count": merge(tinteger, default(6)),  # used when no manifest is given
    "dev_count": merge(tinteger, default(6)),
    "eval_count": merge(tinteger, default(6)),
    "duration_s": merge(tfloat, default(3.0)),
    "filter_len": merge(tinteger, default(512)),
    "resume_id": merge(tstring, nullable, default(None)),
}

search_schema = {
    "budget": merge(tinteger, default(8)),
    "per_trial_steps": merge(tinteger, default(200)),
    "conv_config": merge(tnumbers, {"schema": {"type": "string"}}, default(["small", "large"])),
    "blstm_depth": merge(tnumbers, default([0, 5])),
    "blstm_width": merge(tnumbers, default([8, 1024])),
    "fc_depth": merge(tnumbers, default([0, 5])),
    "fc_width": merge(tnumbers, default([8, 1024])),
    "delta_phase": merge(tnumbers, {"schema": {"type": "boolean"}}, default([True, False])),
    "complex_loss_lambda": merge(tnumbers, default([0.0, 1.0])),
    "learning_rate": merge(tnumbers, default([3e-6, 1e-3])),
    "input_channels": merge(tnumbers, default([1, 2])),
}

sweep_schema = {
    "look_ahead_ms": merge(tnumbers, default([-100, -50, 0, 50, 100, 150, 200])),
    "trials_per_point": merge(tinteger, default(2)),
    "same_seed_trials": merge(tboolean, default(False)),
    "non_causal_reference": merge(tboolean, default(True)),
}

wandb_schema = {
    "project": merge(tstring, default("maskstream")),
    "entity": merge(tstring, nullable, default(None)),
    "notes": merge(tstring, nullable, default("")),
    "name": merge(tstring, nullable, default(None)),
    "log_every_steps": merge(tinteger, default(10)),
}

schema = {
    "out_dir": merge(tstring, default("../runs")),
    "model": stdict(model_schema),
    "training": stdict(training_schema),
    "search": stdict(search_schema),
    "sweep": stdict(sweep_schema),
    "wandb": stdict(wandb_schema),
    "test_run": merge(tboolean, default(False)),
}
