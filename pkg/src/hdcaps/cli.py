"""Command-line entry point.

Subcommands: gen-synth, train, extract, eval, baseline, gradcheck.
Exit codes: 0 success, 1 usage/config error, 2 malformed or missing
data, 3 numeric failure (divergence or a failed gradient check).
Diagnostics go to stderr as a single line. Metric reports are JSON with
fields oa, aa, kappa, per_class and confusion; all output files are
written atomically.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from .config import TrainConfig
from .errors import DivergenceError, FormatError

__all__ = ["main", "parse_config", "build_parser"]


class UsageError(Exception):
    pass


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


_INT_FIELDS = {f.name for f in dataclasses.fields(TrainConfig)
               if f.type in (int, "int")}


def parse_config(path: str) -> TrainConfig:
    """Read key=value overrides of the training defaults.

    Blank lines and #-comments are ignored. Unknown keys, repeated keys,
    unparsable values and out-of-range values raise ConfigError naming
    the offending line.
    """
    cfg = TrainConfig()
    valid = {f.name for f in dataclasses.fields(TrainConfig)}
    seen = set()
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror or exc}") from exc
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in valid:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        seen.add(key)
        try:
            parsed = int(value) if key in _INT_FIELDS else float(value)
        except ValueError:
            kind = "an integer" if key in _INT_FIELDS else "a number"
            raise ConfigError(
                f"{path}:{lineno}: value for {key!r} must be {kind}, got {value!r}"
            ) from None
        setattr(cfg, key, parsed)
        try:
            cfg.validate()
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: {exc}") from exc
    return cfg


def _parse_size(text: str):
    parts = text.lower().split("x")
    if len(parts) != 2:
        raise UsageError(f"--size must look like HxW, got {text!r}")
    try:
        height, width = int(parts[0]), int(parts[1])
    except ValueError:
        raise UsageError(f"--size must look like HxW, got {text!r}") from None
    if height < 1 or width < 1:
        raise UsageError("--size dimensions must be positive")
    return height, width


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hdcaps",
                     description="two-branch capsule feature extraction")
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("gen-synth", help="write a random synthetic scene")
    p.add_argument("--out", required=True, help="output scene directory")
    p.add_argument("--size", default="48x48", help="scene extent as HxW")
    p.add_argument("--bands", type=int, default=20)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise-spec", type=float, default=0.1)
    p.add_argument("--noise-elev", type=float, default=0.1)
    p.add_argument("--class-sep", type=float, default=1.2)

    p = sub.add_parser("train", help="train the autoencoder on a scene")
    p.add_argument("--data", required=True, help="scene directory")
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--quiet", action="store_true",
                   help="suppress per-epoch progress lines")

    p = sub.add_parser("extract", help="write fused features for a scene")
    p.add_argument("--model", required=True, help="checkpoint directory")
    p.add_argument("--data", required=True, help="scene directory")
    p.add_argument("--out", required=True, help="output feature file")

    p = sub.add_parser("eval", help="classify stored features and report metrics")
    p.add_argument("--features", required=True)
    p.add_argument("--labels", help="optional label raster overriding "
                                    "the labels stored with the features")
    p.add_argument("--train-frac", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", help="write metrics as JSON to this path")

    p = sub.add_parser("baseline", help="metrics for raw / PCA / embedding features")
    p.add_argument("--data", required=True, help="scene directory")
    p.add_argument("--method", choices=["raw", "pca", "le"], default="raw")
    p.add_argument("--dim", type=int, default=32,
                   help="output dimension for pca/le")
    p.add_argument("--neighbors", type=int, default=10)
    p.add_argument("--patch-size", type=int, default=5)
    p.add_argument("--train-frac", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", help="write metrics as JSON to this path")

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    p.add_argument("--seed", type=int, nargs="+", default=[0])
    p.add_argument("--samples", type=int, default=8)
    p.add_argument("--tol", type=float, default=1e-4)
    return parser


def _metric_line(prefix: str, result: dict) -> str:
    return (f"{prefix}oa={result['oa']:.6f} aa={result['aa']:.6f} "
            f"kappa={result['kappa']:.6f}")


def _write_report(path: str, result: dict) -> None:
    payload = {
        "oa": result["oa"],
        "aa": result["aa"],
        "kappa": result["kappa"],
        "per_class": result["per_class"],
        "confusion": result["confusion"].tolist(),
        "classes": result["classes"].tolist(),
    }
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def _cmd_gen_synth(args) -> int:
    from . import dataio

    height, width = _parse_size(args.size)
    rng = np.random.default_rng(args.seed)
    hsi, elevation, labels = dataio.gen_synthetic(
        height, width, args.classes, args.bands, rng,
        noise_spec=args.noise_spec, noise_elev=args.noise_elev,
        class_sep=args.class_sep,
    )
    dataio.write_scene(args.out, hsi, elevation, labels)
    print(f"scene={args.out} size={height}x{width} bands={args.bands} "
          f"classes={args.classes} labeled={int((labels > 0).sum())}")
    return 0


def _cmd_train(args) -> int:
    from . import dataio, model, training

    cfg = parse_config(args.config) if args.config else TrainConfig()
    hsi, elevation, labels = dataio.read_scene(args.data)
    patches = dataio.extract_patches(hsi, elevation, labels, cfg.b)
    rng = np.random.default_rng(cfg.seed)
    state = model.init_model(cfg, patches.c_spec, rng)
    os.makedirs(args.out, exist_ok=True)
    log_path = os.path.join(args.out, "train_log.csv")

    def progress(row):
        if not args.quiet:
            print(f"epoch={row['epoch']} total={row['total']:.6f} "
                  f"kl={row['kl']:.6f}")

    history = training.train(state, patches.hsi, patches.lidar, rng,
                             log_path=log_path, progress=progress)
    model.save_checkpoint(state, args.out)
    if history:
        print(f"checkpoint={args.out} epochs={len(history)} "
              f"final_total={history[-1]['total']:.6f}")
    else:
        print(f"checkpoint={args.out} epochs=0")
    return 0


def _cmd_extract(args) -> int:
    from . import dataio, model

    state = model.load_checkpoint(args.model)
    hsi, elevation, labels = dataio.read_scene(args.data)
    patches = dataio.extract_patches(hsi, elevation, labels, state.config.b)
    if patches.c_spec != state.c_spec:
        raise ValueError(
            f"scene has {patches.c_spec} bands but the checkpoint was trained "
            f"on {state.c_spec}"
        )
    feats = model.fused_features(state, patches.hsi, patches.lidar)
    dataio.write_features(args.out, patches.rows, patches.cols,
                          patches.labels, feats)
    print(f"features={args.out} n={feats.shape[0]} dim={feats.shape[1]}")
    return 0


def _cmd_eval(args) -> int:
    from . import dataio, evaluation

    rows, cols, labels, feats = dataio.read_features(args.features)
    if args.labels:
        raster = dataio.read_dten(args.labels)
        if raster.ndim != 2:
            raise ValueError("label raster must be a 2-D tensor")
        labels = raster[rows, cols].astype(np.int32)
    rng = np.random.default_rng(args.seed)
    train_idx, test_idx = dataio.stratified_split(labels, args.train_frac, rng)
    result = evaluation.evaluate_split(feats.astype(np.float64), labels,
                                       train_idx, test_idx, seed=args.seed)
    if args.report:
        _write_report(args.report, result)
    print(_metric_line("", result))
    return 0


def _cmd_baseline(args) -> int:
    from . import dataio, evaluation

    hsi, elevation, labels = dataio.read_scene(args.data)
    patches = dataio.extract_patches(hsi, elevation, labels, args.patch_size)
    raw = evaluation.raw_patch_features(patches)
    if args.method == "raw":
        feats = raw
    elif args.method == "pca":
        feats = evaluation.pca_transform(evaluation.pca_fit(raw, args.dim), raw)
    else:
        feats = evaluation.laplacian_eigenmaps(raw, args.dim,
                                               n_neighbors=args.neighbors)
    rng = np.random.default_rng(args.seed)
    train_idx, test_idx = dataio.stratified_split(patches.labels,
                                                  args.train_frac, rng)
    result = evaluation.evaluate_split(feats, patches.labels, train_idx,
                                       test_idx, seed=args.seed)
    if args.report:
        _write_report(args.report, result)
    print(_metric_line(f"method={args.method} ", result))
    return 0


def _cmd_gradcheck(args) -> int:
    from .training import grad_check

    worst = 0.0
    for seed in args.seed:
        max_rel, _ = grad_check(seed=seed, n_samples=args.samples)
        print(f"seed={seed} max_rel_err={max_rel:.3e}")
        worst = max(worst, max_rel)
    if worst > args.tol:
        print(f"error: gradient check failed: {worst:.3e} > {args.tol:.1e}",
              file=sys.stderr)
        return 3
    print(f"gradcheck ok: {worst:.3e} <= {args.tol:.1e}")
    return 0


_COMMANDS = {
    "gen-synth": _cmd_gen_synth,
    "train": _cmd_train,
    "extract": _cmd_extract,
    "eval": _cmd_eval,
    "baseline": _cmd_baseline,
    "gradcheck": _cmd_gradcheck,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            print(parser.format_usage().rstrip(), file=sys.stderr)
            return 1
        return _COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, NotADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
