import json
import os
import uuid
from dataclasses import dataclass, field

from munch import unmunchify
import numpy as np
from quinine import QuinineArgumentParser
from tqdm import tqdm
import yaml

import wandb

from corpus import chunk_fixed, load_mixtures, make_manifest, read_manifest
from eval import score_mixtures
from losses import loss_and_input_grad, mask_grad_from_input_grad
from models import ModelConfig, build_model, noisy_spectrogram, save_checkpoint
from plot_utils import plot_loss_curve
from schema import schema
from stft import stft


class AdamOptimizer:
    def __init__(self, params, learning_rate, beta1=0.9, beta2=0.999, eps=1e-8):
        if learning_rate < 0:
            raise ValueError(f"learning_rate must be >= 0, got {learning_rate}")
        self.learning_rate = learning_rate
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = params.zeros_like()
        self.v = params.zeros_like()
        self.t = 0

    def step(self, params, grads):
        """In-place update of params."""
        self.t += 1
        lr_t = self.learning_rate * np.sqrt(1 - self.beta2**self.t) / (1 - self.beta1**self.t)
        for name, g in grads.items():
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
            update = lr_t * self.m[name] / (np.sqrt(self.v[name]) + self.eps)
            params[name] -= update.astype(params[name].dtype)
        return params


def clip_grad_norm(grads, max_norm):
    """Scale grads so their global norm is at most max_norm; returns the norm before clipping."""
    norm = grads.global_norm()
    if max_norm is not None and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for name in grads:
            grads[name] = grads[name] * scale
    return norm


@dataclass
class TrainExample:
    features: np.ndarray
    noisy_sum: np.ndarray
    clean: np.ndarray


@dataclass
class TrainRun:
    config: ModelConfig
    seed: int
    max_steps: int
    batch_size: int
    learning_rate: float
    network: object = None
    steps: list = field(default_factory=list)
    losses: list = field(default_factory=list)
    grad_norms: list = field(default_factory=list)
    dev_sdr: dict = field(default_factory=dict)
    best_step: int = None
    best_sdr: float = None
    best_params: object = None
    status: str = "ok"
    out_dir: str = None
    trial: int = None

    @property
    def best_checkpoint(self):
        if self.out_dir is None or self.best_step is None:
            return None
        return os.path.join(self.out_dir, "best.ckpt")

    def metrics(self):
        return {
            "steps": self.steps,
            "loss": self.losses,
            "grad_norm": self.grad_norms,
            "dev_sdr": {str(k): v for k, v in self.dev_sdr.items()},
            "best_step": self.best_step,
            "best_sdr": self.best_sdr,
            "status": self.status,
        }


def prepare_examples(network, chunks):
    examples = []
    for noisy, clean in chunks:
        clean_spec = stft(clean.channel(0), network.stft_params)
        examples.append(
            TrainExample(
                features=network.features(noisy).values,
                noisy_sum=noisy_spectrogram(network, noisy).values.sum(axis=2),
                clean=clean_spec.values,
            )
        )
    return examples


def example_loss_and_grads(network, params, example):
    config = network.config
    mask, trace = network.forward(example.features, params)
    enhanced = mask.values * example.noisy_sum
    value, input_grad = loss_and_input_grad(
        enhanced[:, :, None], example.clean, config.complex_loss_lambda, config.compression_power
    )
    mask_grad = mask_grad_from_input_grad(input_grad[:, :, 0], example.noisy_sum)
    grads, _ = network.backward(mask_grad, trace)
    return value, grads


def train_step(network, params, batch, optimizer, grad_clip_norm):
    total, grads = 0.0, params.zeros_like()
    for example in batch:
        value, example_grads = example_loss_and_grads(network, params, example)
        total += value
        for name, g in example_grads.items():
            grads[name] += g
    for name in grads:
        grads[name] /= len(batch)
    loss = total / len(batch)
    if not np.isfinite(loss):
        return loss, float("nan")
    norm = clip_grad_norm(grads, grad_clip_norm)
    if not np.isfinite(norm):
        return loss, norm
    optimizer.step(params, grads)
    return loss, norm


def _as_mixtures(manifest, data_dir):
    if manifest is None:
        return None
    if isinstance(manifest, str):
        manifest = read_manifest(manifest)
    if isinstance(manifest, list):
        return manifest
    return load_mixtures(manifest, data_dir)


def train(
    config,
    train_manifest,
    dev_manifest,
    seed=0,
    max_steps=2000,
    batch_size=4,
    eval_every_steps=200,
    chunk_s=3.0,
    grad_clip_norm=5.0,
    learning_rate=None,
    out_dir=None,
    data_dir=None,
    keep_every_steps=-1,
    filter_len=512,
    use_wandb=False,
    log_every_steps=10,
    progress=True,
    conv_specs=None,
):
    """Adam on the compressed spectral loss over shuffled fixed-length chunks.

    Manifests may be DatasetManifest objects, manifest paths or lists of
    already loaded mixtures. Dev SDR is measured every eval_every_steps and at
    the last step; the best-scoring parameters are kept. conv_specs replaces
    the named conv stack of the config.
    """
    config.check()
    learning_rate = config.learning_rate if learning_rate is None else learning_rate
    if batch_size < 1 or max_steps < 1 or eval_every_steps < 1:
        raise ValueError("batch_size, max_steps and eval_every_steps must be >= 1")

    network, params = build_model(config, seed=seed, conv_specs=conv_specs)
    run = TrainRun(config, seed, max_steps, batch_size, learning_rate, network=network, out_dir=out_dir)

    train_mixtures = _as_mixtures(train_manifest, data_dir)
    dev_mixtures = _as_mixtures(dev_manifest, data_dir)
    chunks = chunk_fixed([(m.noisy, m.clean) for m in train_mixtures], chunk_s)
    if not chunks:
        raise ValueError(f"no training chunks of {chunk_s} s in the training set")
    examples = prepare_examples(network, chunks)

    optimizer = AdamOptimizer(params, learning_rate)
    rng = np.random.default_rng([seed, 1])
    order, cursor = rng.permutation(len(examples)), 0

    pbar = tqdm(range(1, max_steps + 1), disable=not progress)
    for i in pbar:
        batch = []
        for _ in range(batch_size):
            if cursor == len(order):
                order, cursor = rng.permutation(len(examples)), 0
            batch.append(examples[order[cursor]])
            cursor += 1

        loss, norm = train_step(network, params, batch, optimizer, grad_clip_norm)
        if not (np.isfinite(loss) and np.isfinite(norm)):
            print(f"training diverged at step {i} (loss {loss}, grad norm {norm})")
            run.status = "failed"
            break
        run.steps.append(i)
        run.losses.append(float(loss))
        run.grad_norms.append(float(norm))

        log = {"loss": loss, "grad_norm": norm}
        if dev_mixtures and (i % eval_every_steps == 0 or i == max_steps):
            results = score_mixtures(network, dev_mixtures, params, filter_len)
            sdr = float(np.mean([r.sdr_db for r in results]))
            run.dev_sdr[i] = sdr
            log["dev_sdr"] = sdr
            if run.best_sdr is None or sdr > run.best_sdr:
                run.best_step, run.best_sdr, run.best_params = i, sdr, params.copy()
                if out_dir is not None:
                    save_checkpoint(os.path.join(out_dir, "best.ckpt"), network, params)

        if use_wandb and i % log_every_steps == 0:
            wandb.log(log, step=i)
        if out_dir is not None and keep_every_steps > 0 and i % keep_every_steps == 0:
            save_checkpoint(os.path.join(out_dir, f"model_{i}.ckpt"), network, params)

        desc = f"loss {loss:.4f}"
        if run.best_sdr is not None:
            desc += f" best dev SDR {run.best_sdr:.2f}"
        pbar.set_description(desc)

    if run.best_params is not None:
        network.params = run.best_params
    if out_dir is not None:
        with open(os.path.join(out_dir, "metrics.json"), "w") as f:
            json.dump(run.metrics(), f)
        if run.steps:
            plot_loss_curve(run.steps, run.losses, os.path.join(out_dir, "loss_curve.png"), run.dev_sdr)
    return run


def manifests_from_args(training):
    """Train/dev manifests named in a run config, or small generated ones."""
    if training.train_manifest is not None:
        train_manifest = read_manifest(training.train_manifest)
    else:
        train_manifest = make_manifest("train", training.train_count, training.duration_s, training.seed)
    if training.dev_manifest is not None:
        dev_manifest = read_manifest(training.dev_manifest)
    else:
        dev_manifest = make_manifest("dev", training.dev_count, training.duration_s, training.seed)
    return train_manifest, dev_manifest


def main(args):
    if args.test_run:
        args.training.max_steps = min(args.training.max_steps, 20)
        args.training.eval_every_steps = min(args.training.eval_every_steps, 10)
    else:
        wandb.init(
            dir=args.out_dir,
            project=args.wandb.project,
            entity=args.wandb.entity,
            config=unmunchify(args),
            notes=args.wandb.notes,
            name=args.wandb.name,
            resume=True,
        )

    config = ModelConfig.from_dict(dict(args.model))
    train_manifest, dev_manifest = manifests_from_args(args.training)
    t = args.training
    run = train(
        config,
        train_manifest,
        dev_manifest,
        seed=t.seed,
        max_steps=t.max_steps,
        batch_size=t.batch_size,
        eval_every_steps=t.eval_every_steps,
        chunk_s=t.chunk_s,
        grad_clip_norm=t.grad_clip_norm,
        out_dir=None if args.test_run else args.out_dir,
        data_dir=t.data_dir,
        keep_every_steps=t.keep_every_steps,
        filter_len=t.filter_len,
        use_wandb=not args.test_run,
        log_every_steps=args.wandb.log_every_steps,
    )
    print(f"run {run.status}: best dev SDR {run.best_sdr} at step {run.best_step}")
    return run


def prepare_out_dir(args):
    run_id = args.training.resume_id
    if run_id is None:
        run_id = str(uuid.uuid4())

    out_dir = os.path.join(args.out_dir, run_id)
    if not os.path.exists(out_dir):
        os.makedirs(out_dir)
    args.out_dir = out_dir

    with open(os.path.join(out_dir, "config.yaml"), "w") as yaml_file:
        yaml.dump(unmunchify(args), yaml_file, default_flow_style=False)
    return out_dir


if __name__ == "__main__":
    parser = QuinineArgumentParser(schema=schema)
    args = parser.parse_quinfig()
    print(f"Running with: {args}")

    if not args.test_run:
        prepare_out_dir(args)

    main(args)
