"""Ablation grid: flows x step counts x solvers x conditioning modes x seeds."""
from __future__ import annotations

import csv
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, MissingCheckpoint
from .metrics import intra_set_msssim, region_metrics, spearman, volume_mmd2
from .neural import load_checkpoint, save_checkpoint
from .sampler import SOLVERS, sample_batch
from .synthdata import condition_proxy, phantom_set, segment
from .trainer import TrainConfig, train

MATRIX_COLUMNS = ("flow", "solver", "steps", "conditioning", "seed", "mmd", "msssim", "imae", "kl",
                  "dice", "condition_proxy_spearman")
TIMING_COLUMNS = ("flow", "solver", "steps", "conditioning", "seed", "wall_ms_per_sample")


@dataclass
class ExperimentMatrix:
    flows: list = field(default_factory=lambda: ["rfm"])
    step_counts: list = field(default_factory=lambda: [1, 2, 5, 10, 200])
    solvers: list = field(default_factory=lambda: ["euler"])
    conditioning: list = field(default_factory=lambda: ["full"])
    seeds: list = field(default_factory=lambda: [0])

    def __post_init__(self):
        for name in ("flows", "step_counts", "solvers", "conditioning", "seeds"):
            if not getattr(self, name):
                raise ConfigError(f"experiment matrix needs a nonempty {name} list")
        if any(int(s) < 1 for s in self.step_counts):
            raise ConfigError("step counts must be >= 1")
        for s in self.solvers:
            if s not in SOLVERS:
                raise ConfigError(f"unknown solver {s!r}")


def checkpoint_path(ckpt_dir, flow: str, conditioning: str) -> Path:
    return Path(ckpt_dir) / f"{flow}_{conditioning}.ckpt"


def ensure_checkpoints(matrix: ExperimentMatrix, base: TrainConfig, ckpt_dir, train_missing: bool):
    ckpt_dir = Path(ckpt_dir)
    for flow in matrix.flows:
        for mode in matrix.conditioning:
            path = checkpoint_path(ckpt_dir, flow, mode)
            if path.exists():
                continue
            if not train_missing:
                raise MissingCheckpoint(f"no checkpoint {path} (pass --train to create it)")
            ckpt_dir.mkdir(parents=True, exist_ok=True)
            model, _ = train(replace(base, flow=flow, conditioning=mode))
            save_checkpoint(model, path)


def _run_cell(args):
    ckpt, flow, solver, steps, mode, seed, n_samples, size = args
    model = load_checkpoint(ckpt)
    family = model.meta.get("family", "haar")
    real = phantom_set(n_samples, size, seed, "matrix-reference")
    conds = [{"condition": ph.condition} for ph in real]
    t0 = time.perf_counter()
    gen = sample_batch(model, conds, (size, size, size), steps, solver, seed=seed, family=family)
    wall_ms = 1000.0 * (time.perf_counter() - t0) / n_samples
    real_vols = [ph.volume for ph in real]
    roi = [region_metrics(r.volume, g, r.masks, segment(g)) for r, g in zip(real, gen)]
    row = {
        "flow": flow, "solver": solver, "steps": steps, "conditioning": mode, "seed": seed,
        "mmd": volume_mmd2(gen, real_vols),
        "msssim": intra_set_msssim(gen, scales=None),
        "imae": float(np.mean([r["imae"] for r in roi])),
        "kl": float(np.mean([r["kl"] for r in roi])),
        "dice": float(np.mean([r["dice"] for r in roi])),
        "condition_proxy_spearman": spearman([c["condition"] for c in conds],
                                             [condition_proxy(g) for g in gen]),
    }
    return row, wall_ms


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def run_matrix(matrix: ExperimentMatrix, base: TrainConfig, ckpt_dir, out_dir, n_samples: int = 20,
               train_missing: bool = False, parallel: int = 1) -> tuple[Path, Path]:
    """Evaluate every cell; writes ``matrix.csv`` (deterministic) and
    ``timing.csv`` (wall-clock milliseconds per generated sample)."""
    ensure_checkpoints(matrix, base, ckpt_dir, train_missing)
    cells = []
    for flow in matrix.flows:
        for mode in matrix.conditioning:
            ckpt = checkpoint_path(ckpt_dir, flow, mode)
            for solver in matrix.solvers:
                for steps in matrix.step_counts:
                    for seed in matrix.seeds:
                        cells.append((str(ckpt), flow, solver, int(steps), mode, int(seed),
                                      n_samples, base.size))
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            results = list(pool.map(_run_cell, cells))
    else:
        results = [_run_cell(c) for c in cells]

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    mpath, tpath = out / "matrix.csv", out / "timing.csv"
    with open(mpath, "w", newline="") as fm, open(tpath, "w", newline="") as ft:
        wm = csv.writer(fm, lineterminator="\n")
        wt = csv.writer(ft, lineterminator="\n")
        wm.writerow(MATRIX_COLUMNS)
        wt.writerow(TIMING_COLUMNS)
        for row, wall_ms in results:
            wm.writerow([_fmt(row[c]) for c in MATRIX_COLUMNS])
            wt.writerow([_fmt(row[c]) for c in TIMING_COLUMNS[:-1]] + [f"{wall_ms:.3f}"])
    return mpath, tpath
