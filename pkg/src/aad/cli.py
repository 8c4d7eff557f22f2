"""Command-line pipeline: synth, features, train, score, eval, embed, stream.

Configuration merges three layers: built-in defaults, then a JSON config
file (--config or the AAD_CONFIG environment variable), then explicit
flags. Exit codes: 0 success, 1 pipeline error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import queue
import sys
import threading
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from .audio_io import NORMAL, SynthConfig, scan_dataset, split_index, synth_generate
from .errors import AadError, ContractError
from .evaluation import EvalConfig, emit_report, evaluate_dataset
from .features import FeatureConfig, dataset_features, save_features, stream_windows
from .models import build, checkpoint_load, default_spec
from .scoring import (
    anomaly_score,
    decide,
    score_dataset,
    select_threshold,
    write_scores_csv,
)
from .training import TrainConfig, train, write_trainlog_csv
from .tsne import EmbedConfig, tsne_embed, emit_plot

CONFIG_ENV = "AAD_CONFIG"

_STREAM_CHUNK = 8192  # samples per producer read
_QUEUE_DEPTH = 8


def _load_config_file(path: str | None) -> dict:
    if path is None:
        path = os.environ.get(CONFIG_ENV)
    if path is None:
        return {}
    with open(path) as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ContractError(f"{path}: config root must be a JSON object")
    return data


def _merge_section(cls, file_cfg: dict, section: str, flags: dict):
    """defaults < config-file section < explicit flags, as one dataclass."""
    values = dict(file_cfg.get(section, {}))
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ContractError(f"config section {section!r}: unknown keys {sorted(unknown)}")
    values.update({k: v for k, v in flags.items() if k in known and v is not None})
    return cls(**values)


def _feature_flags(args) -> dict:
    return {"n_fft": args.n_fft, "hop": args.hop, "n_mels": args.n_mels,
            "context_frames": args.context_frames}


def _add_feature_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n-fft", type=int, dest="n_fft")
    p.add_argument("--hop", type=int)
    p.add_argument("--n-mels", type=int, dest="n_mels")
    p.add_argument("--context-frames", type=int, dest="context_frames")


def _add_common_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file (or set $AAD_CONFIG)")
    p.add_argument("--seed", type=int)
    p.add_argument("--sample-rate", type=int, dest="sample_rate")


def _seed(args, file_cfg) -> int:
    if args.seed is not None:
        return args.seed
    return int(file_cfg.get("seed", 0))


def _sample_rate(args, file_cfg, default=22050) -> int:
    if args.sample_rate is not None:
        return args.sample_rate
    return int(file_cfg.get("sample_rate", default))


def _out_dir(args, file_cfg) -> Path:
    out = args.out or file_cfg.get("output_dir")
    if out is None:
        raise ContractError("no output directory: pass --out or set output_dir")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _root(args, file_cfg) -> Path:
    root = args.root or file_cfg.get("dataset_root")
    if root is None:
        raise ContractError("no dataset root: pass --root or set dataset_root")
    return Path(root)


def _test_split(index, args, file_cfg, seed):
    fraction = args.test_fraction
    if fraction is None:
        fraction = float(file_cfg.get("test_normal_fraction", 0.1))
    return split_index(index, test_normal_fraction=fraction, seed=seed)


def _load_model(args):
    return checkpoint_load(args.model)


# -- subcommands --


def cmd_synth(args) -> int:
    file_cfg = _load_config_file(args.config)
    out = _out_dir(args, file_cfg)
    cfg = SynthConfig(
        n_normal=args.n_normal,
        n_anomaly=args.n_anomaly,
        duration_s=args.duration_s,
        sample_rate=_sample_rate(args, file_cfg, default=16000),
        seed=_seed(args, file_cfg),
    )
    index = synth_generate(out, cfg)
    print(f"wrote {len(index)} clips under {out}")
    return 0


def cmd_features(args) -> int:
    file_cfg = _load_config_file(args.config)
    features = _merge_section(FeatureConfig, file_cfg, "features", _feature_flags(args))
    root = _root(args, file_cfg)
    out = _out_dir(args, file_cfg)
    index = scan_dataset(root)
    clips = dataset_features(index, features, target_rate=args.sample_rate)
    for clip in clips:
        dest = out / Path(clip.path).with_suffix(".aadf")
        dest.parent.mkdir(parents=True, exist_ok=True)
        save_features(clip.features, dest, features)
    print(f"cached {len(clips)} feature files under {out}")
    return 0


def _model_flags(args) -> dict:
    return {"kind": args.model, "window_frames": args.window_frames,
            "latent_dim": args.latent_dim, "tcn_layers": args.tcn_layers,
            "tcn_channels": args.tcn_channels}


def cmd_train(args) -> int:
    file_cfg = _load_config_file(args.config)
    seed = _seed(args, file_cfg)
    features = _merge_section(FeatureConfig, file_cfg, "features", _feature_flags(args))
    root = _root(args, file_cfg)
    out = _out_dir(args, file_cfg)
    index = scan_dataset(root)
    train_index, _ = _test_split(index, args, file_cfg, seed)

    model_section = dict(file_cfg.get("model", {}))
    model_section.setdefault("kind", "dense_ae")
    model_section.setdefault("n_mels", features.n_mels)
    model_section.setdefault("context_frames", features.context_frames)
    model_section.setdefault("seed", seed)
    flag_values = {k: v for k, v in _model_flags(args).items() if v is not None}
    model_section.update(flag_values)
    kind = model_section.pop("kind")
    spec = default_spec(kind, **model_section)
    model = build(spec)

    train_cfg = _merge_section(TrainConfig, file_cfg, "train", {
        "epochs": args.epochs, "batch_size": args.batch_size,
        "lr": args.lr, "seed": seed,
        "validation_split": args.validation_split,
    })
    clips = dataset_features(train_index, features, target_rate=args.sample_rate)
    model, log = train(model, clips, train_cfg, checkpoint_dir=out)
    write_trainlog_csv(log, out / "trainlog.csv")
    final = log.train_losses()[-1] if log.epochs else float("nan")
    print(f"trained {spec.kind} for {len(log.epochs)} epochs, "
          f"final train loss {final:.6g}; checkpoints under {out}")
    return 0


def cmd_score(args) -> int:
    file_cfg = _load_config_file(args.config)
    seed = _seed(args, file_cfg)
    features = _merge_section(FeatureConfig, file_cfg, "features", _feature_flags(args))
    root = _root(args, file_cfg)
    out = _out_dir(args, file_cfg)
    model = _load_model(args)
    index = scan_dataset(root)
    if args.partition == "test":
        _, index = _test_split(index, args, file_cfg, seed)
    elif args.partition == "train":
        index, _ = _test_split(index, args, file_cfg, seed)
    clips = dataset_features(index, features, target_rate=args.sample_rate)
    records = score_dataset(model, clips)
    if args.tau is not None:
        tau = args.tau
    else:
        normal_scores = [r.score for r in records if r.label == NORMAL]
        tau = select_threshold(normal_scores, args.max_fpr)
    path = out / "scores.csv"
    write_scores_csv(records, path, tau)
    print(f"scored {len(records)} clips (tau={tau!r}) -> {path}")
    return 0


def cmd_eval(args) -> int:
    file_cfg = _load_config_file(args.config)
    seed = _seed(args, file_cfg)
    features = _merge_section(FeatureConfig, file_cfg, "features", _feature_flags(args))
    root = _root(args, file_cfg)
    out = _out_dir(args, file_cfg)
    model = _load_model(args)
    index = scan_dataset(root)
    _, test_index = _test_split(index, args, file_cfg, seed)
    cfg = EvalConfig(features=features, p=args.p, pauc_ceil=args.pauc_ceil,
                     sample_rate=args.sample_rate)
    report = evaluate_dataset(model, test_index, cfg)
    suffix = {"json": ".json", "csv": ".csv", "markdown": ".md"}[args.format]
    path = out / f"report{suffix}"
    emit_report(report, args.format, path)
    print(f"evaluated {model.spec.kind} at p={args.p} -> {path}")
    return 0


def cmd_embed(args) -> int:
    file_cfg = _load_config_file(args.config)
    seed = _seed(args, file_cfg)
    features = _merge_section(FeatureConfig, file_cfg, "features", _feature_flags(args))
    root = _root(args, file_cfg)
    out = _out_dir(args, file_cfg)
    index = scan_dataset(root)
    clips = dataset_features(index, features, target_rate=args.sample_rate)
    if args.max_clips is not None and len(clips) > args.max_clips:
        keep = np.random.default_rng([seed, 3]).permutation(len(clips))[:args.max_clips]
        clips = [clips[i] for i in sorted(keep)]
    labels = [c.label for c in clips]
    if args.space == "latent":
        if args.model is None:
            raise ContractError("--space latent needs --model")
        model = _load_model(args)
        vectors = np.stack([model.encode(c.features) for c in clips])
        base = out / "embed_latent"
    else:
        vectors = np.stack([c.features.data.mean(axis=0) for c in clips])
        base = out / "embed_features"
    embed_cfg = _merge_section(EmbedConfig, file_cfg, "embed", {
        "output_dims": args.dims, "perplexity": args.perplexity,
        "iterations": args.iterations, "seed": seed,
    })
    embedding = tsne_embed(vectors, embed_cfg, labels=labels)
    paths = emit_plot(embedding, base)
    print(f"embedded {len(clips)} clips -> " + ", ".join(str(p) for p in paths))
    return 0


def _raw_chunk_reader(fh, out_queue: queue.Queue) -> None:
    """Producer: raw float32 LE mono samples to a bounded queue."""
    while True:
        raw = fh.read(_STREAM_CHUNK * 4)
        if not raw:
            break
        out_queue.put(np.frombuffer(raw, dtype="<f4"))
    out_queue.put(None)


def cmd_stream(args) -> int:
    file_cfg = _load_config_file(args.config)
    features = _merge_section(FeatureConfig, file_cfg, "features", _feature_flags(args))
    sample_rate = _sample_rate(args, file_cfg, default=16000)
    model = _load_model(args)
    tau = args.tau

    fh = open(args.input, "rb") if args.input else sys.stdin.buffer
    chunk_queue: queue.Queue = queue.Queue(maxsize=_QUEUE_DEPTH)
    producer = threading.Thread(target=_raw_chunk_reader, args=(fh, chunk_queue),
                                daemon=True)

    def drain():
        while True:
            chunk = chunk_queue.get()
            if chunk is None:
                return
            yield chunk

    total_samples = 0

    def counting():
        nonlocal total_samples
        for chunk in drain():
            total_samples += len(chunk)
            yield chunk

    t0 = time.perf_counter()
    producer.start()
    n_windows = 0
    try:
        for window in stream_windows(counting(), sample_rate, features,
                                     window_s=args.window_s, hop_s=args.hop_s):
            score = anomaly_score(*model.reconstruct_features(window.features))
            print(f"{window.end_s:.3f}, {score!r}, {decide(score, tau)}")
            n_windows += 1
    finally:
        if args.input:
            fh.close()
    elapsed = time.perf_counter() - t0
    audio_s = total_samples / sample_rate
    rtf = elapsed / audio_s if audio_s > 0 else float("inf")
    print(f"real-time factor: {rtf:.4f} ({n_windows} windows, "
          f"{audio_s:.1f} s audio in {elapsed:.2f} s)", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aad",
        description="Acoustic anomaly detection pipeline for machine sounds.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    _add_common_args(p)
    p.add_argument("--out", help="dataset root to create")
    p.add_argument("--n-normal", type=int, required=True, dest="n_normal")
    p.add_argument("--n-anomaly", type=int, required=True, dest="n_anomaly")
    p.add_argument("--duration-s", type=float, default=2.0, dest="duration_s")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("features", help="cache log-mel features as AADF files")
    _add_common_args(p)
    _add_feature_args(p)
    p.add_argument("--root", help="dataset root")
    p.add_argument("--out", help="cache output directory")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("train", help="train a model on the normal partition")
    _add_common_args(p)
    _add_feature_args(p)
    p.add_argument("--root")
    p.add_argument("--out")
    p.add_argument("--model", choices=["dense_ae", "cae", "cvae", "tcn_cvae"])
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--lr", type=float)
    p.add_argument("--validation-split", type=float, dest="validation_split")
    p.add_argument("--test-fraction", type=float, dest="test_fraction")
    p.add_argument("--window-frames", type=int, dest="window_frames")
    p.add_argument("--latent-dim", type=int, dest="latent_dim")
    p.add_argument("--tcn-layers", type=int, dest="tcn_layers")
    p.add_argument("--tcn-channels", type=int, dest="tcn_channels")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="write the anomaly score table")
    _add_common_args(p)
    _add_feature_args(p)
    p.add_argument("--root")
    p.add_argument("--out")
    p.add_argument("--model", required=True, help="model checkpoint (.aadm)")
    p.add_argument("--partition", choices=["all", "train", "test"], default="all")
    p.add_argument("--test-fraction", type=float, dest="test_fraction")
    p.add_argument("--tau", type=float, help="fixed decision threshold")
    p.add_argument("--max-fpr", type=float, default=0.10, dest="max_fpr",
                   help="FPR bound used to fit tau from normal scores")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="AUC/pAUC report over the test partition")
    _add_common_args(p)
    _add_feature_args(p)
    p.add_argument("--root")
    p.add_argument("--out")
    p.add_argument("--model", required=True)
    p.add_argument("--p", type=float, default=0.05)
    p.add_argument("--pauc-ceil", action="store_true", dest="pauc_ceil")
    p.add_argument("--format", choices=["json", "csv", "markdown"], default="json")
    p.add_argument("--test-fraction", type=float, dest="test_fraction")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("embed", help="t-SNE embedding of features or latents")
    _add_common_args(p)
    _add_feature_args(p)
    p.add_argument("--root")
    p.add_argument("--out")
    p.add_argument("--model", help="checkpoint; required for --space latent")
    p.add_argument("--space", choices=["features", "latent"], default="features")
    p.add_argument("--dims", type=int, choices=[2, 3])
    p.add_argument("--perplexity", type=float)
    p.add_argument("--iterations", type=int)
    p.add_argument("--max-clips", type=int, dest="max_clips")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("stream", help="sliding-window scoring of raw samples")
    _add_common_args(p)
    _add_feature_args(p)
    p.add_argument("--input", help="raw float32 LE mono file (default: stdin)")
    p.add_argument("--model", required=True)
    p.add_argument("--tau", type=float, required=True)
    p.add_argument("--window-s", type=float, default=2.0, dest="window_s")
    p.add_argument("--hop-s", type=float, default=1.0, dest="hop_s")
    p.set_defaults(func=cmd_stream)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return args.func(args)
    except (AadError, OSError) as exc:
        print(f"aad {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
