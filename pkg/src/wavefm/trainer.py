"""Flow-matching training loop."""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError, NonFiniteState
from .flows import FlowSpec, path_sample
from .neural import (CONDITIONING_MODES, ModelConfig, OptimState, VelocityModel, adamw_step,
                     clip_grads, fm_loss_grad, save_checkpoint)
from .rng import derive_seed, draw_noise, generator
from .synthdata import phantom_set
from .volio import load_rawvol
from .wavelet import dwt3_array

T_CLAMP = 1e-5


@dataclass
class TrainConfig:
    flow: str = "rfm"
    steps_total: int = 2000
    batch: int = 4
    lr_max: float = 1e-3
    eta_min: float = 1e-7
    weight_decay: float = 1e-5
    grad_clip: float = 1.0
    seed: int = 0
    dataset: str = ""
    conditioning: str = "full"
    # used when no dataset manifest is given
    n_phantoms: int = 200
    size: int = 16
    family: str = "haar"
    d_model: int = 32
    n_blocks: int = 2
    d_hidden: int = 64
    n_freqs: int = 16
    epsilon: float = 1e-8
    vp_beta_min: float = 0.1
    vp_beta_max: float = 20.0
    checkpoint_every: int = 0
    out_dir: str = "."

    def __post_init__(self):
        if self.steps_total < 1 or self.batch < 1:
            raise ConfigError("steps_total and batch must be >= 1")
        if self.conditioning not in CONDITIONING_MODES:
            raise ConfigError(f"conditioning must be one of {CONDITIONING_MODES}")
        self.flow_spec()

    def flow_spec(self) -> FlowSpec:
        return FlowSpec(self.flow, self.epsilon, self.vp_beta_min, self.vp_beta_max)

    def model_config(self) -> ModelConfig:
        return ModelConfig(d_model=self.d_model, d_cond=self.d_model, n_freqs=self.n_freqs,
                           n_blocks=self.n_blocks, d_hidden=self.d_hidden,
                           conditioning=self.conditioning)


def parse_config_text(text: str) -> TrainConfig:
    """Flat ``key = value`` lines; ``#`` starts a comment; unknown keys are errors."""
    types = {f.name: f.type for f in fields(TrainConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        kind = types[key]
        try:
            values[key] = int(val) if kind == "int" else float(val) if kind == "float" else val
        except ValueError:
            raise ConfigError(f"line {lineno}: bad {kind} value {val!r} for {key}") from None
    return TrainConfig(**values)


def load_config(path) -> TrainConfig:
    return parse_config_text(Path(path).read_text())


def format_config(cfg: TrainConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in asdict(cfg).items())


def read_manifest(path) -> list[tuple[str, float, int]]:
    """Rows of ``path,condition,seed``; relative paths resolve against the manifest."""
    path = Path(path)
    rows = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise ConfigError(f"{path}:{lineno}: expected path,condition,seed")
        vol_path = Path(parts[0])
        if not vol_path.is_absolute():
            vol_path = path.parent / vol_path
        rows.append((str(vol_path), float(parts[1]), int(parts[2])))
    return rows


def load_dataset(cfg: TrainConfig):
    """``(coeffs, conditions)``: wavelet arrays ``(N, 8, ...)`` and ``(N, 1)`` conditions."""
    if cfg.dataset:
        rows = read_manifest(cfg.dataset)
        vols = []
        for p, _, _ in rows:
            try:
                vols.append(load_rawvol(p).data)
            except OSError as exc:
                raise OSError(f"cannot read dataset volume {p}: {exc}") from exc
        conds = [c for _, c, _ in rows]
    else:
        phantoms = phantom_set(cfg.n_phantoms, cfg.size, cfg.seed, "train")
        vols = [ph.volume.data for ph in phantoms]
        conds = [ph.condition for ph in phantoms]
    if not vols:
        raise ConfigError("empty dataset")
    coeffs = np.stack([dwt3_array(v, cfg.family).astype(np.float64) for v in vols])
    return coeffs, np.asarray(conds, dtype=np.float64)[:, None]


def train_step(model: VelocityModel, x1, cnorm, flow: FlowSpec, optim: OptimState, step: int,
               seed: int, grad_clip: float = 1.0) -> tuple[float, float, float]:
    """One optimisation step on a batch of clean coefficients ``x1`` ``(B, 8, ...)``.

    Returns ``(loss, lr, grad_norm)`` where loss is measured before the update.
    """
    B = x1.shape[0]
    shape = x1.shape[1:]
    rng = generator(derive_seed(seed, "train-time"), step)
    ts = np.clip(rng.uniform(0.0, 1.0, size=B), T_CLAMP, 1.0 - T_CLAMP)
    xt = np.empty_like(x1)
    vt = np.empty_like(x1)
    for i in range(B):
        stream = step * B + i
        x0 = draw_noise(shape, derive_seed(seed, "train-x0"), stream)
        xi = draw_noise(shape, derive_seed(seed, "train-xi"), stream) if flow.needs_xi else None
        ps = path_sample(flow, x0, x1[i], ts[i], xi)
        xt[i] = ps.x_t
        vt[i] = ps.v_target
    v, cache = model.forward_batch(xt, ts, cnorm)
    diff = v - vt
    loss = float(np.mean(diff * diff))
    if not math.isfinite(loss):
        raise NonFiniteState(f"loss became non-finite at step {step}")
    grads = model.backward(cache, fm_loss_grad(v, vt))
    norm = clip_grads(grads, grad_clip)
    lr = adamw_step(optim, model.params, grads, step)
    model.round_to_f32()
    return loss, lr, norm


def make_optimizer(cfg: TrainConfig) -> OptimState:
    # horizon steps_total-1 so the last step runs at eta_min
    return OptimState(lr_max=cfg.lr_max, eta_min=cfg.eta_min, weight_decay=cfg.weight_decay,
                      total_steps=max(cfg.steps_total - 1, 1))


def train(cfg: TrainConfig, data=None, log=None):
    """Train a fresh model; returns ``(model, rows)`` with rows ``(step, lr, loss)``."""
    coeffs, conds = data if data is not None else load_dataset(cfg)
    model = VelocityModel.init(cfg.model_config(), seed=cfg.seed)
    model.meta = {"flow": cfg.flow, "family": cfg.family, "size": cfg.size}
    ranges = model.config.condition_ranges
    (lo, hi), = ranges.values()
    if np.any(conds < lo) or np.any(conds > hi):
        raise ConfigError(f"dataset conditions fall outside the declared range [{lo}, {hi}]")
    cnorm = (conds - lo) / (hi - lo)
    optim = make_optimizer(cfg)
    flow = cfg.flow_spec()
    n = coeffs.shape[0]
    per_epoch = max(n // cfg.batch, 1)
    rows = []
    order = None
    for step in range(cfg.steps_total):
        epoch, pos = divmod(step, per_epoch)
        if pos == 0:
            order = generator(derive_seed(cfg.seed, "shuffle"), epoch).permutation(n)
        idx = np.resize(order[pos * cfg.batch:(pos + 1) * cfg.batch], cfg.batch)
        loss, lr, _ = train_step(model, coeffs[idx], cnorm[idx], flow, optim, step, cfg.seed, cfg.grad_clip)
        rows.append((step, lr, loss))
        if log is not None:
            log(step, lr, loss, model)
    return model, rows


def write_loss_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "lr", "loss"])
        for step, lr, loss in rows:
            w.writerow([step, repr(float(lr)), repr(float(loss))])


def run_training(cfg: TrainConfig) -> tuple[Path, Path]:
    """Train, writing ``model.ckpt`` (plus ``model_step<k>.ckpt`` every
    ``checkpoint_every`` steps) and ``loss.csv`` into ``cfg.out_dir``."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    def log(step, lr, loss, model):
        if cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0 and step + 1 < cfg.steps_total:
            save_checkpoint(model, out / f"model_step{step + 1}.ckpt")

    model, rows = train(cfg, log=log)
    ckpt = out / "model.ckpt"
    save_checkpoint(model, ckpt)
    loss_csv = out / "loss.csv"
    write_loss_csv(rows, loss_csv)
    return ckpt, loss_csv
