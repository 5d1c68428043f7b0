"""maskstream command line.

    python src/cli.py make-manifest dev 6 dev.csv
    python src/cli.py gen-data dev.csv data/
    python src/cli.py train conf/tiny.yaml
    python src/cli.py enhance best.ckpt noisy.wav out.wav --stream --report-latency
    python src/cli.py evaluate best.ckpt dev.csv --data-dir data/ --out dev_sdr.csv
    python src/cli.py sweep conf/lookahead_sweep.yaml
    python src/cli.py search conf/search.yaml
    python src/cli.py info conf/models/search_best.yaml
"""
import argparse
import os
import sys
import warnings

from funcy import merge
from quinine import Quinfig, tlist

import corpus
import eval as evaluation
import models
import search
import stream
import train
from schema import schema
from wavio import read_wav, write_wav


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _run_config(path):
    if not os.path.exists(path):
        raise FileNotFoundError(f"no such config file: {path}")
    # list-valued inherit:, as QuinineArgumentParser allows
    return Quinfig(config_path=path, schema=merge(schema, {"inherit": tlist}))


def _manifests(args, conf, splits):
    """Manifests from flags, else generated from the training section of the config."""
    t = conf.training
    manifests = []
    for split in splits:
        path = getattr(args, f"{split}_manifest", None)
        if path is not None:
            manifests.append(corpus.read_manifest(path))
            continue
        count = getattr(t, f"{split}_count")
        manifests.append(corpus.make_manifest(split, count, t.duration_s, t.seed))
    return manifests


def _train_kwargs(conf, args):
    t = conf.training
    return dict(
        max_steps=args.max_steps or t.max_steps,
        batch_size=t.batch_size,
        eval_every_steps=t.eval_every_steps,
        chunk_s=t.chunk_s,
        grad_clip_norm=t.grad_clip_norm,
        filter_len=t.filter_len,
    )


def cmd_make_manifest(args):
    manifest = corpus.make_manifest(args.split, args.count, args.duration_s, args.global_seed)
    corpus.write_manifest(args.out, manifest)
    print(f"wrote {len(manifest)} {args.split} entries to {args.out}")


def cmd_gen_data(args):
    manifest = corpus.read_manifest(args.manifest)
    paths = corpus.build_corpus(manifest, args.dir, args.sample_format)
    print(f"wrote {len(paths)} WAV files to {args.dir}")


def cmd_train(args):
    conf = _run_config(args.config)
    if args.seed is not None:
        conf.training.seed = args.seed
    if args.max_steps is not None:
        conf.training.max_steps = args.max_steps
    if args.out_dir is not None:
        conf.out_dir = args.out_dir
    if args.test_run:
        conf.test_run = True
    if not conf.test_run:
        train.prepare_out_dir(conf)
    run = train.main(conf)
    return 0 if run.status == "ok" else 1


def cmd_enhance(args):
    network, _ = models.load_checkpoint(args.checkpoint)
    config = network.config
    if args.look_ahead_ms is not None:
        frames = search.look_ahead_frames(args.look_ahead_ms, network.stft_params)
        if frames != config.look_ahead_frames:
            raise ValueError(
                f"checkpoint was trained with look-ahead {config.look_ahead_frames} frames, "
                f"--look-ahead-ms {args.look_ahead_ms} asks for {frames}"
            )
    if args.report_latency:
        for key, value in stream.latency_breakdown(config, network.stft_params).items():
            print(f"{key}: {value:g}")

    noisy = read_wav(args.input)
    if args.stream and not args.bypass_mask:
        enhanced = stream.enhance_stream(network, noisy, args.chunk_size)
    else:
        if args.stream:
            warnings.warn("--bypass-mask runs the offline path")
        enhanced, _ = models.enhance_offline(network, noisy, bypass_mask=args.bypass_mask)
    write_wav(args.output, enhanced, args.sample_format)


def cmd_evaluate(args):
    network, _ = models.load_checkpoint(args.checkpoint)
    manifest = corpus.read_manifest(args.manifest)
    df, report = evaluation.evaluate_network(network, manifest, args.data_dir, filter_len=args.filter_len)
    out = args.out or f"{manifest.split}_sdr.csv"
    summary_path = evaluation.write_report_csv(out, df, report)
    print(report.to_frame().to_string(index=False))
    print(f"wrote {len(df)} rows to {out} and the summary to {summary_path}")


def cmd_sweep(args):
    conf = _run_config(args.config)
    base = models.ModelConfig.from_dict(dict(conf.model)).check()
    train_manifest, dev_manifest, eval_manifest = _manifests(args, conf, ["train", "dev", "eval"])
    look_ahead_ms = args.look_ahead_ms or list(conf.sweep.look_ahead_ms)
    report = search.lookahead_sweep(
        base,
        look_ahead_ms,
        args.trials or conf.sweep.trials_per_point,
        train_manifest,
        dev_manifest,
        eval_manifest,
        seed=conf.training.seed,
        same_seed_trials=conf.sweep.same_seed_trials,
        non_causal_reference=conf.sweep.non_causal_reference,
        data_dir=args.data_dir or conf.training.data_dir,
        **_train_kwargs(conf, args),
    )
    os.makedirs(args.out_dir, exist_ok=True)
    report.rows[["look_ahead_ms", "trial", "sdr_dev", "sdr_eval"]].to_csv(
        os.path.join(args.out_dir, "sweep.csv"), index=False
    )
    summary = report.summary()
    summary.to_csv(os.path.join(args.out_dir, "sweep_summary.csv"), index=False)
    print(summary.to_string(index=False))
    if report.reference is not None:
        print(f"non-causal reference eval SDR: {report.reference:.2f} dB")

    from plot_utils import plot_lookahead

    fig, _ = plot_lookahead(report.rows, report.reference)
    fig.savefig(os.path.join(args.out_dir, "sdr_vs_lookahead.png"), bbox_inches="tight")


def cmd_search(args):
    conf = _run_config(args.space)
    space = search.SearchSpace.from_config(conf.search)
    train_manifest, dev_manifest = _manifests(args, conf, ["train", "dev"])
    kwargs = _train_kwargs(conf, args)
    kwargs.pop("max_steps")
    runs = search.random_search(
        space,
        args.budget or conf.search.budget,
        args.per_trial_steps or conf.search.per_trial_steps,
        conf.training.seed,
        train_manifest,
        dev_manifest,
        data_dir=args.data_dir or conf.training.data_dir,
        out_dir=args.out_dir,
        **kwargs,
    )
    scatter = search.search_scatter(runs)
    os.makedirs(args.out_dir, exist_ok=True)
    scatter.to_csv(os.path.join(args.out_dir, "search_scatter.csv"), index=False)
    print(scatter[["trial", "conv_config", "param_count", "ops_per_second", "sdr", "status"]].to_string(index=False))

    from plot_utils import plot_search_scatter

    fig, _ = plot_search_scatter(scatter)
    fig.savefig(os.path.join(args.out_dir, "search_scatter.png"), bbox_inches="tight")


def _is_checkpoint(path):
    with open(path, "rb") as fp:
        return fp.read(len(models.CHECKPOINT_MAGIC)) == models.CHECKPOINT_MAGIC


def cmd_info(args):
    if not os.path.exists(args.config):
        raise FileNotFoundError(f"no such file: {args.config}")
    if _is_checkpoint(args.config):
        network, _ = models.load_checkpoint(args.config)
    else:
        network = models.EnhancementNetwork(models.load_model_config(args.config))
    config = network.config

    for key, value in config.to_dict().items():
        print(f"{key}: {value}")
    print(f"param_count: {models.param_count(network)}")
    print(f"ops_per_audio_second: {models.ops_per_audio_second(network):.6g}")
    past, future = network.receptive_field()
    print(f"receptive_field_frames: past {past}, future {future}")
    if config.causal:
        latency = stream.latency_breakdown(config, network.stft_params)
        print(f"latency: {latency['total_samples']} samples ({latency['total_ms']:g} ms)")
    else:
        print("latency: whole utterance (non-causal)")
    if args.layers:
        params = models.param_breakdown(network)
        ops = models.ops_breakdown(network)
        for name in params:
            print(f"  {name}: {params[name]} params, {ops[name]} multiply-adds/frame")


def build_parser():
    parser = _Parser(prog="maskstream", description="Spectrogram-mask speech enhancement toolkit")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("make-manifest", help="write a seed-disjoint split manifest")
    p.add_argument("split", choices=corpus.SPLITS)
    p.add_argument("count", type=int)
    p.add_argument("out")
    p.add_argument("--duration-s", type=float, default=3.0)
    p.add_argument("--global-seed", type=int, default=0)
    p.set_defaults(func=cmd_make_manifest)

    p = sub.add_parser("gen-data", help="materialize a manifest as WAV pairs")
    p.add_argument("manifest")
    p.add_argument("dir")
    p.add_argument("--sample-format", choices=["float32", "pcm16"], default="float32")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one model from a YAML run config")
    p.add_argument("config")
    p.add_argument("--seed", type=int)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--out-dir")
    p.add_argument("--test-run", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("enhance", help="enhance a WAV file with a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--look-ahead-ms", type=int)
    p.add_argument("--stream", action="store_true")
    p.add_argument("--chunk-size", type=int, default=160)
    p.add_argument("--bypass-mask", action="store_true", help="force the mask to 1 (debug)")
    p.add_argument("--report-latency", action="store_true")
    p.add_argument("--sample-format", choices=["float32", "pcm16"], default="float32")
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("evaluate", help="per-utterance SDR of a checkpoint on a manifest")
    p.add_argument("checkpoint")
    p.add_argument("manifest")
    p.add_argument("--data-dir")
    p.add_argument("--out")
    p.add_argument("--filter-len", type=int, default=evaluation.DEFAULT_FILTER_LEN)
    p.set_defaults(func=cmd_evaluate)

    for name, positional, func in [("sweep", "config", cmd_sweep), ("search", "space", cmd_search)]:
        p = sub.add_parser(name)
        p.add_argument(positional)
        p.add_argument("--out-dir", default=f"{name}_out")
        p.add_argument("--data-dir")
        p.add_argument("--max-steps", type=int)
        for split in ("train", "dev", "eval"):
            p.add_argument(f"--{split}-manifest")
        p.set_defaults(func=func)
        if name == "sweep":
            p.add_argument("--look-ahead-ms", type=int, nargs="+")
            p.add_argument("--trials", type=int)
        else:
            p.add_argument("--budget", type=int)
            p.add_argument("--per-trial-steps", type=int)

    p = sub.add_parser("info", help="model size, cost, receptive field and latency")
    p.add_argument("config", help="model config (YAML or key = value) or checkpoint")
    p.add_argument("--layers", action="store_true")
    p.set_defaults(func=cmd_info)
    return parser


def cli_main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 2
    except SystemExit as e:  # --help
        return e.code or 0

    try:
        code = args.func(args)
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return code or 0


if __name__ == "__main__":
    sys.exit(cli_main())
