"""Command line for the package: train, eval, infer, cost, ablate.

Exit codes are a stable scripting contract: 0 success, 2 configuration
problem, 3 data or I/O problem, 4 numeric failure during training.

Every command echoes its resolved configuration: train/ablate write
run_manifest.json into the output directory before any compute (and accept
--replay to rerun it bit-for-bit); the read-only commands print a one-line
manifest echo on standard error so standard output stays machine-readable.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict

import numpy as np

from . import __version__
from . import data as D
from . import tensor as T
from .checkpoint import load_checkpoint, load_state
from .errors import ConfigError, DataError, DivergenceError, InvalidInputError
from .network import (ModelConfig, Variant, build, config_from_dict,
                      config_to_dict, count_macs, count_params)
from .tensor import Tensor
from .training import TrainConfig, evaluate, fit, history_lines

_ABLATION_ORDER = (Variant.MAK_ONLY, Variant.MAK_FF,
                   Variant.SANDWICH_FF, Variant.SEQUENTIAL_FF)
_VARIANT_LABELS = {
    Variant.MAK_ONLY: "MakOnly",
    Variant.MAK_FF: "MakFF",
    Variant.SANDWICH_FF: "SandwichFF",
    Variant.SEQUENTIAL_FF: "SequentialFF",
}


def _echo_manifest(manifest: dict) -> None:
    print("# manifest " + json.dumps(manifest, sort_keys=True), file=sys.stderr)


def _pipeline_from_opts(opts: dict) -> D.PipelineConfig:
    base = D.preset(opts["preset"]) if opts.get("preset") else D.PipelineConfig()
    cfg = D.PipelineConfig(
        window_frames=opts.get("window") or base.window_frames,
        window_stride=opts.get("stride") or base.window_stride,
        points_per_frame=opts.get("points_per_frame") or base.points_per_frame,
        split_ratios=base.split_ratios,
        seed=opts.get("data_seed", 0))
    cfg.validate()
    return cfg


def _load_sequences(opts: dict):
    if opts.get("data"):
        path = opts["data"]
        sequences = D.read_manifest(path)
        source = {"kind": "manifest", "path": os.path.abspath(path)}
    elif opts.get("preset") == "synth":
        spec = D.SynthSpec()
        sequences = D.synth_generate(spec, opts.get("data_seed", 0))
        source = {"kind": "synth", "spec": asdict(spec), "seed": opts.get("data_seed", 0)}
    else:
        raise ConfigError("a dataset is required: pass --data or --preset synth")
    return sequences, source


def _prepare_splits(opts: dict):
    """Sequences -> windows -> (train, val, test) plus echo info."""
    pipeline = _pipeline_from_opts(opts)
    sequences, source = _load_sequences(opts)
    samples = D.build_samples(sequences, pipeline)
    limit = opts.get("limit") or 0
    if limit and limit < len(samples):
        # evenly spaced, not a prefix: datasets are often ordered by class
        keep = np.linspace(0, len(samples) - 1, limit).round().astype(int)
        samples = [samples[i] for i in keep]
    if not samples:
        raise DataError("the pipeline produced no samples (sequences shorter than the window?)")
    splits = D.split(samples, pipeline.split_ratios, pipeline.seed)
    return pipeline, source, samples, splits


def _infer_data_shape(samples) -> tuple:
    labels = {s.label for s in samples}
    num_classes = max(labels) + 1
    if min(labels) < 0 or num_classes < 2:
        raise DataError(f"labels must cover at least classes 0 and 1, got {sorted(labels)}")
    c, n = samples[0].tensor.shape
    return c, n, num_classes


def _model_config_from_opts(opts: dict, in_channels: int, num_classes: int) -> ModelConfig:
    cfg = ModelConfig(
        in_channels=in_channels,
        k=opts.get("k", 20),
        num_heads=opts.get("heads", 1),
        emb_dims=opts.get("emb_dims", 1024),
        num_classes=num_classes,
        variant=Variant.from_string(opts.get("variant", Variant.SEQUENTIAL_FF.value)))
    cfg.validate()
    return cfg


def _softmax(z: np.ndarray) -> np.ndarray:
    s = z - z.max(axis=-1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=-1, keepdims=True)


def _pct(x: float) -> str:
    return f"{100.0 * x:.2f}"


# ---------------------------------------------------------------------
# train
# ---------------------------------------------------------------------

def _train_opts(args) -> dict:
    return {
        "data": args.data,
        "preset": args.preset,
        "data_seed": args.data_seed,
        "limit": args.limit,
        "k": args.k,
        "heads": args.heads,
        "variant": args.variant,
        "emb_dims": args.emb_dims,
        "lr_max": args.lr_max,
        "epochs": args.epochs,
        "patience": args.patience,
        "batch": args.batch,
        "seeds": _parse_seeds(args),
        "dtype": args.dtype,
        "out": args.out,
    }


def _parse_seeds(args) -> list:
    if getattr(args, "seeds", None):
        try:
            seeds = [int(s) for s in args.seeds.split(",") if s.strip() != ""]
        except ValueError:
            raise ConfigError(f"--seeds must be a comma list of integers, got {args.seeds!r}")
        if not seeds:
            raise ConfigError("--seeds lists no seeds")
        return seeds
    return [args.seed]


def _run_one_seed(opts, seed, run_dir, mcfg, tcfg_base, splits, pipeline, source):
    os.makedirs(run_dir, exist_ok=True)
    train_set, val_set, test_set = splits
    tcfg = TrainConfig(**{**asdict(tcfg_base), "seed": seed})
    model = build(mcfg, seed=seed, dtype=tcfg.dtype)
    ckpt_path = os.path.join(run_dir, "checkpoint.bin")
    extra = {"pipeline_config": asdict(pipeline), "data_source": source,
             "limit": opts.get("limit") or 0, "version": __version__}
    result = fit(model, train_set, val_set, tcfg, checkpoint_path=ckpt_path,
                 extra_manifest=extra,
                 log=lambda s: print(s, file=sys.stderr))
    with open(os.path.join(run_dir, "history.csv"), "w", encoding="utf-8") as f:
        f.write("\n".join(history_lines(result.history)) + "\n")
    load_state(model, result.best_state)
    metrics = evaluate(model, test_set, batch_size=tcfg.batch_size, dtype=tcfg.dtype)
    return result, metrics


def cmd_train(args) -> int:
    if getattr(args, "replay", None):
        with open(args.replay, "r", encoding="utf-8") as f:
            manifest = json.load(f)
        if manifest.get("command") != "train":
            raise ConfigError(f"{args.replay} is not a train manifest")
        opts = manifest["opts"]
        if args.out:
            opts = {**opts, "out": args.out}
    else:
        opts = _train_opts(args)
    return _train_impl(opts)


def _train_impl(opts: dict) -> int:
    out_dir = opts.get("out") or "runs/train"
    pipeline, source, samples, splits = _prepare_splits(opts)
    c, n, num_classes = _infer_data_shape(samples)
    mcfg = _model_config_from_opts(opts, c, num_classes)
    if n < mcfg.k:
        raise ConfigError(f"samples have N={n} points but k={mcfg.k}")
    tcfg_base = TrainConfig(
        lr_max=opts.get("lr_max", 0.1), batch_size=opts.get("batch", 32),
        max_epochs=opts.get("epochs", 250), patience=opts.get("patience", 30),
        seed=0, dtype=opts.get("dtype", "f32"))
    tcfg_base.validate()
    seeds = opts["seeds"]

    os.makedirs(out_dir, exist_ok=True)
    manifest = {
        "command": "train", "version": __version__, "opts": opts,
        "pipeline_config": asdict(pipeline), "data_source": source,
        "model_config": config_to_dict(mcfg),
        "train_config": {**asdict(tcfg_base), "seed": None},
        "seeds": seeds,
        "layout": {"run_dir": "seed_<seed>" if len(seeds) > 1 else ".",
                   "files": ["checkpoint.bin", "history.csv"]},
        "split_sizes": [len(s) for s in splits],
    }
    with open(os.path.join(out_dir, "run_manifest.json"), "w", encoding="utf-8") as f:
        json.dump(manifest, f, sort_keys=True, indent=2)
        f.write("\n")

    accs = []
    for seed in seeds:
        run_dir = out_dir if len(seeds) == 1 else os.path.join(out_dir, f"seed_{seed}")
        result, metrics = _run_one_seed(opts, seed, run_dir, mcfg, tcfg_base,
                                        splits, pipeline, source)
        accs.append(metrics.accuracy)
        print(f"seed {seed}: test acc {_pct(metrics.accuracy)}%  "
              f"pre {_pct(metrics.precision)}%  rec {_pct(metrics.recall)}%  "
              f"f1 {_pct(metrics.f1)}%  "
              f"(best epoch {result.best_epoch}, val loss {result.best_val_loss:.6f})")
    if len(seeds) > 1:
        mean = float(np.mean(accs))
        std = float(np.std(accs))
        print(f"summary over {len(seeds)} seeds: accuracy {_pct(mean)}% "
              f"± {100.0 * std:.2f}%")
    return 0


# ---------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------

def _model_from_checkpoint(path):
    manifest, state = load_checkpoint(path)
    mcfg = config_from_dict(manifest["model_config"])
    model = build(mcfg, seed=0, dtype=manifest.get("dtype", "f32"))
    load_state(model, state)
    model.eval()
    return manifest, model


def _splits_from_manifest(manifest: dict, data_override=None):
    pd = dict(manifest["pipeline_config"])
    pd["split_ratios"] = tuple(pd["split_ratios"])
    pipeline = D.PipelineConfig(**pd)
    if data_override:
        sequences = D.read_manifest(data_override)
    else:
        source = manifest.get("data_source") or {}
        if source.get("kind") == "manifest":
            sequences = D.read_manifest(source["path"])
        elif source.get("kind") == "synth":
            spec = D.SynthSpec(**source["spec"])
            sequences = D.synth_generate(spec, source["seed"])
        else:
            raise ConfigError("checkpoint records no data source; pass --data")
    samples = D.build_samples(sequences, pipeline)
    limit = manifest.get("limit") or 0
    if limit:
        samples = samples[:limit]
    return pipeline, samples, D.split(samples, pipeline.split_ratios, pipeline.seed)


def cmd_eval(args) -> int:
    manifest, model = _model_from_checkpoint(args.checkpoint)
    pipeline, samples, splits = _splits_from_manifest(manifest, args.data)
    chosen = {"train": splits[0], "val": splits[1], "test": splits[2],
              "all": samples}[args.split]
    if not chosen:
        raise DataError(f"split {args.split!r} is empty")
    _echo_manifest({"command": "eval", "version": __version__,
                    "checkpoint": os.path.abspath(args.checkpoint),
                    "split": args.split, "average": args.average,
                    "model_config": manifest["model_config"]})
    dtype = manifest.get("dtype", "f32")
    metrics = evaluate(model, chosen, batch_size=args.batch,
                       average=args.average, dtype=dtype)
    print("Acc    Pre    Rec    F1")
    print(f"{_pct(metrics.accuracy)}  {_pct(metrics.precision)}  "
          f"{_pct(metrics.recall)}  {_pct(metrics.f1)}")
    out_dir = args.out or os.path.dirname(os.path.abspath(args.checkpoint))
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "confusion.csv"), "w", encoding="utf-8") as f:
        for row in metrics.confusion:
            f.write(",".join(str(int(v)) for v in row) + "\n")
    with open(os.path.join(out_dir, "metrics.json"), "w", encoding="utf-8") as f:
        json.dump({"accuracy": metrics.accuracy, "precision": metrics.precision,
                   "recall": metrics.recall, "f1": metrics.f1,
                   "split": args.split, "average": args.average}, f, sort_keys=True)
        f.write("\n")
    return 0


# ---------------------------------------------------------------------
# infer
# ---------------------------------------------------------------------

def cmd_infer(args) -> int:
    manifest, model = _model_from_checkpoint(args.checkpoint)
    pd = manifest.get("pipeline_config")
    if not pd:
        raise ConfigError("checkpoint records no pipeline config; cannot assemble frames")
    window = pd["window_frames"]
    points = pd["points_per_frame"]
    seed = pd["seed"]
    _echo_manifest({"command": "infer", "version": __version__,
                    "checkpoint": os.path.abspath(args.checkpoint),
                    "window_frames": window, "points_per_frame": points,
                    "seed": seed, "seq_id": args.seq_id})

    stream = sys.stdin
    header_line = None
    for line in stream:
        if line.strip():
            header_line = line
            break
    if header_line is None:
        return 0  # empty input: nothing to do
    header = D._parse_header(header_line.strip(), "<stdin>")
    c = header["C"]
    if c != model.cfg.in_channels:
        raise ConfigError(
            f"stream has C={c} channels, model expects {model.cfg.in_channels}")

    assembler = D.StreamAssembler(window, points, seed=seed, seq_id=args.seq_id)
    dtype = manifest.get("dtype", "f32")
    for line in stream:
        if not line.strip():
            continue
        tokens = line.split()
        try:
            m = int(tokens[1])
            values = [float(v) for v in tokens[2:]]
            if m < 0 or len(values) != m * c:
                raise ValueError(f"expected {m}*{c} values, got {len(values)}")
            frame = np.asarray(values, dtype=np.float32).reshape(m, c)
        except (IndexError, ValueError) as e:
            print(f"warning: skipping malformed frame line: {e}", file=sys.stderr)
            continue
        emitted_at = assembler.frames_seen  # index assigned to this frame
        sample = assembler.push(frame)
        if sample is None:
            continue
        with T.no_grad():
            logits = model(Tensor(sample.tensor[None, :, :], dtype=dtype))
        probs = _softmax(logits.data[0])
        pred = int(np.argmax(probs))
        print(f"{emitted_at} {pred} " + " ".join(f"{p:.4f}" for p in probs))
    return 0


# ---------------------------------------------------------------------
# cost
# ---------------------------------------------------------------------

def _parse_sweep(text: str, name: str) -> list:
    parts = text.split(":")
    if len(parts) not in (2, 3):
        raise ConfigError(f"{name} must be start:stop[:step], got {text!r}")
    try:
        start, stop = int(parts[0]), int(parts[1])
        step = int(parts[2]) if len(parts) == 3 else 1
    except ValueError:
        raise ConfigError(f"{name} must be integer start:stop[:step], got {text!r}")
    if step < 1 or stop < start:
        raise ConfigError(f"{name} needs stop >= start and step >= 1, got {text!r}")
    return list(range(start, stop + 1, step))


def cmd_cost(args) -> int:
    base = ModelConfig(
        in_channels=args.in_channels, k=args.k, num_heads=args.heads,
        emb_dims=args.emb_dims, num_classes=args.classes,
        variant=Variant.from_string(args.variant))
    base.validate()
    if args.k_sweep and args.head_sweep:
        raise ConfigError("pass only one of --k-sweep / --head-sweep")
    configs = []
    if args.k_sweep:
        for k in _parse_sweep(args.k_sweep, "--k-sweep"):
            configs.append(ModelConfig(**{**config_kwargs(base), "k": k}))
    elif args.head_sweep:
        for h in _parse_sweep(args.head_sweep, "--head-sweep"):
            configs.append(ModelConfig(**{**config_kwargs(base), "num_heads": h}))
    else:
        configs.append(base)
    _echo_manifest({"command": "cost", "version": __version__,
                    "points": args.points, "base": config_to_dict(base)})
    print(f"{'k':>4} {'heads':>5} {'variant':<14} {'macs':>15} {'params':>12} "
          f"{'macs_g':>10} {'params_m':>10}")
    for cfg in configs:
        macs = count_macs(cfg, args.points)
        params = count_params(cfg)
        print(f"{cfg.k:>4} {cfg.num_heads:>5} {cfg.variant.value:<14} "
              f"{macs:>15} {params:>12} {macs / 1e9:>10.4f} {params / 1e6:>10.4f}")
    return 0


def config_kwargs(cfg: ModelConfig) -> dict:
    d = config_to_dict(cfg)
    d["variant"] = cfg.variant
    d["stage_widths"] = tuple(d["stage_widths"])
    d["fc_widths"] = tuple(d["fc_widths"])
    return d


# ---------------------------------------------------------------------
# ablate
# ---------------------------------------------------------------------

def cmd_ablate(args) -> int:
    if getattr(args, "replay", None):
        with open(args.replay, "r", encoding="utf-8") as f:
            manifest = json.load(f)
        if manifest.get("command") != "ablate":
            raise ConfigError(f"{args.replay} is not an ablate manifest")
        opts = manifest["opts"]
        if args.out:
            opts = {**opts, "out": args.out}
    else:
        opts = {
            "data": args.data, "preset": args.preset, "data_seed": args.data_seed,
            "limit": args.limit, "k": args.k, "heads": args.heads,
            "emb_dims": args.emb_dims, "lr_max": args.lr_max,
            "epochs": args.epochs, "patience": args.patience,
            "batch": args.batch, "seeds": [args.seed], "dtype": args.dtype,
            "out": args.out,
        }
    return _ablate_impl(opts)


def _ablate_impl(opts: dict) -> int:
    out_dir = opts.get("out") or "runs/ablate"
    pipeline, source, samples, splits = _prepare_splits(opts)
    c, n, num_classes = _infer_data_shape(samples)
    seed = opts["seeds"][0]
    tcfg_base = TrainConfig(
        lr_max=opts.get("lr_max", 0.1), batch_size=opts.get("batch", 32),
        max_epochs=opts.get("epochs", 250), patience=opts.get("patience", 30),
        seed=seed, dtype=opts.get("dtype", "f32"))
    tcfg_base.validate()

    os.makedirs(out_dir, exist_ok=True)
    manifest = {
        "command": "ablate", "version": __version__, "opts": opts,
        "pipeline_config": asdict(pipeline), "data_source": source,
        "train_config": asdict(tcfg_base),
        "variants": [v.value for v in _ABLATION_ORDER],
        "split_sizes": [len(s) for s in splits],
    }
    with open(os.path.join(out_dir, "run_manifest.json"), "w", encoding="utf-8") as f:
        json.dump(manifest, f, sort_keys=True, indent=2)
        f.write("\n")

    rows = []
    for variant in _ABLATION_ORDER:
        mcfg = _model_config_from_opts({**opts, "variant": variant.value}, c, num_classes)
        if n < mcfg.k:
            raise ConfigError(f"samples have N={n} points but k={mcfg.k}")
        run_dir = os.path.join(out_dir, variant.value)
        result, metrics = _run_one_seed(opts, seed, run_dir, mcfg, tcfg_base,
                                        splits, pipeline, source)
        rows.append((variant, count_macs(mcfg, n), count_params(mcfg), metrics.accuracy))

    print(f"{'method':<14} {'macs_g':>10} {'params_m':>10} {'accuracy':>9}")
    for variant, macs, params, acc in rows:
        print(f"{_VARIANT_LABELS[variant]:<14} {macs / 1e9:>10.4f} "
              f"{params / 1e6:>10.4f} {_pct(acc):>9}")
    return 0


# ---------------------------------------------------------------------
# parser / entry point
# ---------------------------------------------------------------------

def _add_data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", help="dataset manifest (one frame-file path per line)")
    p.add_argument("--preset", choices=sorted(D.PRESETS),
                   help="pipeline preset; 'synth' also provides generated data")
    p.add_argument("--data-seed", type=int, default=0,
                   help="seed for synthesis, frame subsampling, and the split")
    p.add_argument("--limit", type=int, default=0,
                   help="cap the number of windowed samples (0 = no cap)")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--heads", type=int, default=1)
    p.add_argument("--emb-dims", type=int, default=1024, dest="emb_dims")
    p.add_argument("--lr-max", type=float, default=0.1, dest="lr_max")
    p.add_argument("--epochs", type=int, default=250)
    p.add_argument("--patience", type=int, default=30)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--dtype", choices=("f32", "f64"), default="f32")
    p.add_argument("--out", default=None, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="adaptgraph",
        description="Point-cloud activity recognition with adaptive graph kernels")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and save the best checkpoint")
    _add_data_flags(p)
    _add_train_flags(p)
    p.add_argument("--variant", choices=[v.value for v in Variant],
                   default=Variant.SEQUENTIAL_FF.value)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", default=None,
                   help="comma list; runs once per seed and prints mean ± std")
    p.add_argument("--replay", default=None,
                   help="rerun a previous run_manifest.json verbatim")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint and print metrics")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", default=None, help="override the recorded data manifest")
    p.add_argument("--split", choices=("train", "val", "test", "all"), default="test")
    p.add_argument("--average", choices=("weighted", "macro"), default="weighted")
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--out", default=None,
                   help="directory for confusion.csv/metrics.json (default: next to checkpoint)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="stream frames from stdin, print predictions")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--seq-id", type=int, default=0, dest="seq_id",
                   help="sequence id for the frame-subsampling RNG stream")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("cost", help="report analytical MACs and parameter counts")
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--heads", type=int, default=1)
    p.add_argument("--variant", choices=[v.value for v in Variant],
                   default=Variant.SEQUENTIAL_FF.value)
    p.add_argument("--emb-dims", type=int, default=1024, dest="emb_dims")
    p.add_argument("--classes", type=int, default=5)
    p.add_argument("--in-channels", type=int, default=3, dest="in_channels")
    p.add_argument("--points", type=int, default=1024,
                   help="N used for the MACs figure")
    p.add_argument("--k-sweep", default=None, dest="k_sweep",
                   help="start:stop[:step], inclusive")
    p.add_argument("--head-sweep", default=None, dest="head_sweep",
                   help="start:stop[:step], inclusive")
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("ablate", help="train every variant under one budget")
    _add_data_flags(p)
    _add_train_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--replay", default=None)
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InvalidInputError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except DivergenceError as e:
        print(f"error: {e}", file=sys.stderr)
        return 4
    except (DataError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
