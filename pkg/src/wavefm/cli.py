"""Command-line entry point: ``wavefm <subcommand> ...``.

Subcommands: phantom-gen, train, sample, evaluate, wavelet-bench, matrix.
Every error raised by the library is reported as one ``error:`` line on
stderr with exit status 1.
"""
from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import fields
from pathlib import Path

from .errors import ConfigError, WaveFMError
from .flows import KINDS
from .matrix import ExperimentMatrix, run_matrix
from .metrics import METRIC_GROUPS, evaluate_sets
from .neural import CONDITIONING_MODES, load_checkpoint
from .rng import derive_seed, draw_noise
from .sampler import SOLVERS, sample_batch
from .synthdata import phantom_set
from .trainer import TrainConfig, load_config, read_manifest, run_training
from .volio import Volume3D, load_rawvol, save_rawvol
from .wavelet import recon_benchmark


def _csv_list(kind=str):
    def parse(text):
        try:
            return [kind(x) for x in text.split(",") if x.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad list {text!r}") from None
    return parse


def _condition(text):
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"condition must be name=value, got {text!r}")
    name, value = text.split("=", 1)
    try:
        return name.strip(), float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"condition value {value!r} is not a number") from None


def _write_manifest(path: Path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for p, c, s in rows:
            w.writerow([p, repr(float(c)), s])


def cmd_phantom_gen(args):
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, ph in enumerate(phantom_set(args.count, args.size, args.seed, args.stream)):
        name = f"phantom_{i:04d}.flv1"
        save_rawvol(ph.volume, out / name)
        rows.append((name, ph.condition, ph.seed))
    _write_manifest(out / args.manifest, rows)
    print(out / args.manifest)


def cmd_train(args):
    cfg = load_config(args.config)
    if args.out_dir:
        cfg.out_dir = args.out_dir
    ckpt, loss_csv = run_training(cfg)
    print(ckpt)
    print(loss_csv)


def cmd_sample(args):
    model = load_checkpoint(args.checkpoint)
    trained_flow = model.meta.get("flow")
    if args.flow and trained_flow and args.flow != trained_flow:
        raise ConfigError(f"checkpoint was trained with flow {trained_flow!r}, not {args.flow!r}")
    cond = dict(args.condition or [])
    if not cond and model.config.variables == ["condition"]:
        cond = {"condition": 0.5}
    size = args.size or int(model.meta.get("size", 16))
    family = model.meta.get("family", "haar")
    vols = sample_batch(model, [cond] * args.n, (size, size, size), args.steps, args.solver,
                        seed=args.seed, family=family)
    out = Path(args.out)
    if args.n == 1:
        out.parent.mkdir(parents=True, exist_ok=True)
        save_rawvol(vols[0], out)
        print(out)
        return
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    value = next(iter(cond.values())) if len(cond) == 1 else 0.0
    for i, v in enumerate(vols):
        name = f"sample_{i:04d}.flv1"
        save_rawvol(v, out / name)
        rows.append((name, value, args.seed))
    _write_manifest(out / "manifest.csv", rows)
    print(out / "manifest.csv")


def _load_set(manifest):
    return [load_rawvol(p) for p, _, _ in read_manifest(manifest)]


def cmd_evaluate(args):
    real = _load_set(args.real)
    synth = _load_set(args.synth)
    reports = evaluate_sets(real, synth, args.metrics, args.bootstrap, args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "mean", "std", "n"])
        for r in reports:
            w.writerow([r.name, repr(r.mean), repr(r.std), r.n_bootstrap])
    print(out)


def cmd_wavelet_bench(args):
    seed = derive_seed(args.seed, "wavelet-bench")
    vols = [Volume3D(draw_noise((args.size,) * 3, seed, i).astype("float32")) for i in range(args.n)]
    rows = recon_benchmark(vols, args.families)
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["family", "mean_mae", "std_mae"])
        for fam, mean, std in rows:
            w.writerow([fam, repr(mean), repr(std)])
    finally:
        if fh is not sys.stdout:
            fh.close()


def cmd_matrix(args):
    base = load_config(args.config) if args.config else TrainConfig()
    if args.train_steps:
        base.steps_total = args.train_steps
    matrix = ExperimentMatrix(args.flows, args.steps, args.solvers, args.conditioning, args.seeds)
    mpath, tpath = run_matrix(matrix, base, args.checkpoint_dir, args.out_dir, args.n_samples,
                              train_missing=args.train, parallel=args.parallel)
    print(mpath)
    print(tpath)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wavefm", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("phantom-gen", help="write FLV1 phantoms and a path,condition,seed manifest")
    g.add_argument("--count", type=int, default=200, help="number of phantoms")
    g.add_argument("--size", type=int, default=16, help="cube side (even, >= 8)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--stream", default="train", help="named substream (e.g. train, heldout)")
    g.add_argument("--out-dir", required=True)
    g.add_argument("--manifest", default="manifest.csv", help="manifest file name inside --out-dir")
    g.set_defaults(func=cmd_phantom_gen)

    keys = ", ".join(f.name for f in fields(TrainConfig))
    g = sub.add_parser("train", help="train a velocity model",
                       description=f"Config file: flat key = value lines. Keys: {keys}.")
    g.add_argument("--config", required=True, help="key=value config file")
    g.add_argument("--out-dir", help="override out_dir from the config")
    g.set_defaults(func=cmd_train)

    g = sub.add_parser("sample", help="generate volumes from a checkpoint")
    g.add_argument("--checkpoint", required=True)
    g.add_argument("--flow", choices=KINDS, help="must match the checkpoint's training flow")
    g.add_argument("--steps", type=int, default=10)
    g.add_argument("--solver", choices=SOLVERS, default="euler")
    g.add_argument("--condition", type=_condition, action="append", help="name=value, repeatable")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--n", type=int, default=1, help="samples; >1 makes --out a directory")
    g.add_argument("--size", type=int, help="cube side (default: training size)")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_sample)

    g = sub.add_parser("evaluate", help="compare a generated set to a reference set")
    g.add_argument("--real", required=True, help="manifest of reference volumes")
    g.add_argument("--synth", required=True, help="manifest of generated volumes")
    g.add_argument("--metrics", type=_csv_list(), default=list(METRIC_GROUPS),
                   help="comma list from mmd,msssim,roi")
    g.add_argument("--bootstrap", type=int, default=100)
    g.add_argument("--seed", type=int, default=1)
    g.add_argument("--out", required=True, help="CSV: metric,mean,std,n")
    g.set_defaults(func=cmd_evaluate)

    g = sub.add_parser("wavelet-bench", help="round-trip reconstruction error per wavelet family")
    g.add_argument("--families", type=_csv_list(), default=["haar", "db4", "sym4", "coif2", "bior33"])
    g.add_argument("--n", type=int, default=100, help="number of random volumes")
    g.add_argument("--size", type=int, default=32)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", help="CSV path (default stdout)")
    g.set_defaults(func=cmd_wavelet_bench)

    g = sub.add_parser("matrix", help="run the ablation grid")
    g.add_argument("--flows", type=_csv_list(), default=["rfm"])
    g.add_argument("--steps", type=_csv_list(int), default=[1, 2, 5, 10, 200])
    g.add_argument("--solvers", type=_csv_list(), default=["euler"])
    g.add_argument("--conditioning", type=_csv_list(), default=["full"],
                   help=f"comma list from {','.join(CONDITIONING_MODES)}")
    g.add_argument("--seeds", type=_csv_list(int), default=[0])
    g.add_argument("--config", help="base training config for --train")
    g.add_argument("--train", action="store_true", help="train missing checkpoints")
    g.add_argument("--train-steps", type=int, help="override steps_total when training")
    g.add_argument("--checkpoint-dir", required=True, help="holds <flow>_<conditioning>.ckpt")
    g.add_argument("--n-samples", type=int, default=20)
    g.add_argument("--parallel", type=int, default=1)
    g.add_argument("--out-dir", required=True)
    g.set_defaults(func=cmd_matrix)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (WaveFMError, OSError, ValueError, KeyError) as exc:
        msg = str(exc).strip().splitlines()[0] if str(exc).strip() else type(exc).__name__
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
