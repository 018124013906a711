"""Conditional velocity network with hand-written reverse mode.

The network works on the tokens of a wavelet-coefficient grid: every spatial
position of the half-resolution grid is one token whose 8 channels are the
subband values there. Pipeline::

    tokens --proj_in (+ fixed positional features --pos)--> h
    h -> [ResBlock: Norm -> FiLM(e_time) -> FiLM(e_cond) -> linear1 -> SiLU -> linear2, + h] x n_blocks
    h -> cross-attention (queries from h, key/value from e_cond), + h
    h -> proj_out -> velocity tokens

``e_time`` is a sinusoidal embedding of t through a SiLU MLP; ``e_cond`` is
the sum of one SiLU MLP per condition variable, each fed the variable
normalised to [0, 1] by its declared range.

Parameters live in float64 arrays so finite-difference checks are
meaningful; training keeps them float32-representable (see
:meth:`VelocityModel.round_to_f32`) so checkpoints reload bit-exactly.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import (MalformedHeader, OutOfRange, ShapeMismatch, StaleCache,
                     TruncatedData, UnknownVariable)
from .rng import derive_seed, generator

CONDITIONING_MODES = ("full", "film_only", "spatial_only", "unconditional")
NORM_EPS = 1e-5


@dataclass
class ModelConfig:
    d_model: int = 32
    d_cond: int = 32
    n_freqs: int = 16
    n_blocks: int = 2
    d_hidden: int = 64
    pos_freqs: int = 3
    condition_ranges: dict = field(default_factory=lambda: {"condition": (0.0, 1.0)})
    conditioning: str = "full"

    def __post_init__(self):
        if self.d_cond != self.d_model:
            raise ValueError("d_cond must equal d_model (embeddings are fused by summation)")
        if not self.condition_ranges:
            raise ValueError("condition_ranges must name at least one variable")
        self.condition_ranges = {k: (float(lo), float(hi)) for k, (lo, hi) in self.condition_ranges.items()}
        for name, (lo, hi) in self.condition_ranges.items():
            if not hi > lo:
                raise ValueError(f"empty range for {name!r}")
        if self.conditioning not in CONDITIONING_MODES:
            raise ValueError(f"conditioning must be one of {CONDITIONING_MODES}")
        if min(self.d_model, self.n_freqs, self.n_blocks, self.d_hidden) < 1 or self.pos_freqs < 0:
            raise ValueError("model sizes must be positive")

    @property
    def variables(self) -> list[str]:
        return list(self.condition_ranges)

    @property
    def film_cond_on(self) -> bool:
        return self.conditioning in ("full", "film_only")

    @property
    def attn_cond_on(self) -> bool:
        return self.conditioning in ("full", "spatial_only")


# ---------------------------------------------------------------- small pieces

def silu(a):
    return a / (1.0 + np.exp(-a))


def silu_grad(a):
    s = 1.0 / (1.0 + np.exp(-a))
    return s * (1.0 + a * (1.0 - s))


def time_frequencies(n_freqs: int) -> np.ndarray:
    if n_freqs == 1:
        return np.ones(1)
    return 10.0 ** (4.0 * np.arange(n_freqs) / (n_freqs - 1))


def time_features(t, n_freqs: int) -> np.ndarray:
    """``[sin(w_k t)..., cos(w_k t)...]`` with w_k geometric from 1 to 1e4."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    arg = t[:, None] * time_frequencies(n_freqs)[None, :]
    return np.concatenate([np.sin(arg), np.cos(arg)], axis=1)


def normalize_conditions(values: dict, ranges: dict) -> np.ndarray:
    """Map named raw values to a [0, 1] vector ordered like ``ranges``."""
    for name in values:
        if name not in ranges:
            raise UnknownVariable(f"unknown condition variable {name!r}")
    out = np.empty(len(ranges))
    for i, (name, (lo, hi)) in enumerate(ranges.items()):
        if name not in values:
            raise UnknownVariable(f"missing condition variable {name!r}")
        v = float(values[name])
        if not (lo <= v <= hi):
            raise OutOfRange(f"{name}={v} outside [{lo}, {hi}]")
        out[i] = (v - lo) / (hi - lo)
    return out


def position_features(grid, pos_freqs: int) -> np.ndarray:
    """Fixed per-token coordinate features, shape ``(prod(grid), 3*(1+2*pos_freqs))``."""
    feats = []
    axes = np.meshgrid(*[(2.0 * np.arange(g) + 1.0) / g - 1.0 for g in grid], indexing="ij")
    for u in axes:
        u = u.ravel()
        feats.append(u)
        for k in range(1, pos_freqs + 1):
            feats.append(np.sin(math.pi * k * u))
            feats.append(np.cos(math.pi * k * u))
    return np.stack(feats, axis=1)


def layer_norm(h):
    mu = h.mean(axis=-1, keepdims=True)
    c = h - mu
    rstd = 1.0 / np.sqrt((c * c).mean(axis=-1, keepdims=True) + NORM_EPS)
    return c * rstd, rstd


def layer_norm_backward(gz, z, rstd):
    return rstd * (gz - gz.mean(axis=-1, keepdims=True) - z * (gz * z).mean(axis=-1, keepdims=True))


def softmax(s, axis=-1):
    e = np.exp(s - s.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def film(z, gamma, beta):
    """``z * (1 + gamma) + beta`` with per-sample gamma/beta broadcast over tokens."""
    return z * (1.0 + gamma[:, None, :]) + beta[:, None, :]


# ---------------------------------------------------------------- model

class VelocityModel:
    def __init__(self, config: ModelConfig | None = None, params: dict | None = None,
                 meta: dict | None = None):
        self.config = config or ModelConfig()
        self.meta = dict(meta or {})
        self.params = params if params is not None else {
            name: np.zeros(shape) for name, shape in self.param_shapes().items()}

    # -- structure

    def param_shapes(self) -> dict:
        c = self.config
        d, h = c.d_model, c.d_hidden
        n_pos = 3 * (1 + 2 * c.pos_freqs)
        shapes = {
            "time.w1": (2 * c.n_freqs, d), "time.b1": (d,),
            "time.w2": (d, d), "time.b2": (d,),
        }
        for var in c.variables:
            shapes.update({f"cond.{var}.w1": (1, d), f"cond.{var}.b1": (d,),
                           f"cond.{var}.w2": (d, d), f"cond.{var}.b2": (d,)})
        shapes.update({"proj_in.w": (8, d), "proj_in.b": (d,), "pos.w": (n_pos, d)})
        for i in range(c.n_blocks):
            p = f"block{i}."
            shapes.update({p + "film_time.w": (d, 2 * d), p + "film_time.b": (2 * d,),
                           p + "film_cond.w": (d, 2 * d), p + "film_cond.b": (2 * d,),
                           p + "linear1.w": (d, h), p + "linear1.b": (h,),
                           p + "linear2.w": (h, d), p + "linear2.b": (d,)})
        shapes.update({"attn.wq": (d, d), "attn.wk": (d, d), "attn.wv": (d, d), "attn.wo": (d, d),
                       "proj_out.w": (d, 8), "proj_out.b": (8,)})
        return shapes

    def n_params(self) -> int:
        return int(sum(np.prod(s) for s in self.param_shapes().values()))

    @classmethod
    def init(cls, config: ModelConfig | None = None, seed: int = 0) -> "VelocityModel":
        """Uniform(+-1/sqrt(fan_in)) weights, zero biases, zero output projection."""
        model = cls(config)
        rng = generator(derive_seed(seed, "model-init"))
        for name, shape in model.param_shapes().items():
            if name.endswith(".b") or name.endswith(".b1") or name.endswith(".b2") or name.startswith("proj_out"):
                model.params[name] = np.zeros(shape)
            else:
                bound = 1.0 / math.sqrt(shape[0])
                model.params[name] = rng.uniform(-bound, bound, size=shape)
        model.round_to_f32()
        return model

    def round_to_f32(self) -> None:
        for name, p in self.params.items():
            self.params[name] = p.astype(np.float32).astype(np.float64)

    def copy(self) -> "VelocityModel":
        return VelocityModel(ModelConfig(**asdict(self.config)),
                             {k: v.copy() for k, v in self.params.items()}, self.meta)

    # -- embeddings

    def embed_time(self, t) -> tuple[np.ndarray, dict]:
        p = self.params
        f = time_features(t, self.config.n_freqs)
        a = f @ p["time.w1"] + p["time.b1"]
        s = silu(a)
        return s @ p["time.w2"] + p["time.b2"], {"f": f, "a": a, "s": s}

    def embed_condition(self, cnorm: np.ndarray) -> tuple[np.ndarray, dict]:
        """``cnorm``: ``(B, n_vars)`` values already scaled to [0, 1]."""
        p = self.params
        cnorm = np.atleast_2d(np.asarray(cnorm, dtype=np.float64))
        out = np.zeros((cnorm.shape[0], self.config.d_model))
        cache = {}
        for i, var in enumerate(self.config.variables):
            u = cnorm[:, i:i + 1]
            a = u @ p[f"cond.{var}.w1"] + p[f"cond.{var}.b1"]
            s = silu(a)
            out = out + s @ p[f"cond.{var}.w2"] + p[f"cond.{var}.b2"]
            cache[var] = (u, a, s)
        return out, cache

    # -- forward / backward

    def forward_batch(self, x, t, cnorm):
        """Velocity for a batch of coefficient grids.

        ``x``: ``(B, 8, d, h, w)``; ``t``: ``(B,)``; ``cnorm``: ``(B, n_vars)``.
        Returns ``(v, cache)`` with ``v`` shaped like ``x``.
        """
        c = self.config
        p = self.params
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 5 or x.shape[1] != 8:
            raise ShapeMismatch(f"expected (B, 8, d, h, w) coefficients, got {x.shape}")
        B, grid = x.shape[0], x.shape[2:]
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (B,))
        cnorm = np.atleast_2d(np.asarray(cnorm, dtype=np.float64))
        if cnorm.shape != (B, len(c.variables)):
            raise ShapeMismatch(f"conditions shape {cnorm.shape}, expected {(B, len(c.variables))}")

        tokens = x.reshape(B, 8, -1).transpose(0, 2, 1)
        pos = position_features(grid, c.pos_freqs)
        e_time, tcache = self.embed_time(t)
        e_cond, ccache = self.embed_condition(cnorm)
        e_film = e_cond if c.film_cond_on else np.zeros_like(e_cond)
        e_attn = e_cond if c.attn_cond_on else np.zeros_like(e_cond)

        h = tokens @ p["proj_in.w"] + p["proj_in.b"] + (pos @ p["pos.w"])[None]
        d = c.d_model
        blocks = []
        for i in range(c.n_blocks):
            q = f"block{i}."
            z, rstd = layer_norm(h)
            ft = e_time @ p[q + "film_time.w"] + p[q + "film_time.b"]
            if c.film_cond_on:
                fc = e_film @ p[q + "film_cond.w"] + p[q + "film_cond.b"]
            else:
                fc = np.zeros((B, 2 * d))
            hp = film(z, ft[:, :d], ft[:, d:])
            hm = film(hp, fc[:, :d], fc[:, d:])
            a = hm @ p[q + "linear1.w"] + p[q + "linear1.b"]
            s = silu(a)
            h = h + s @ p[q + "linear2.w"] + p[q + "linear2.b"]
            blocks.append({"z": z, "rstd": rstd, "ft": ft, "fc": fc, "hp": hp, "hm": hm, "a": a, "s": s})

        # cross-attention against the (single) conditioning token
        ctx = e_attn[:, None, :]
        qh = h @ p["attn.wq"]
        kc = ctx @ p["attn.wk"]
        vc = ctx @ p["attn.wv"]
        w = softmax(np.einsum("bnd,bmd->bnm", qh, kc) / math.sqrt(d))
        att = np.einsum("bnm,bmd->bnd", w, vc)
        h_att = h + att @ p["attn.wo"]

        out = h_att @ p["proj_out.w"] + p["proj_out.b"]
        v = out.transpose(0, 2, 1).reshape(x.shape)
        cache = {"x_shape": x.shape, "tokens": tokens, "pos": pos, "tcache": tcache, "ccache": ccache,
                 "e_film": e_film, "e_attn": e_attn, "blocks": blocks, "h_pre_attn": h,
                 "qh": qh, "kc": kc, "vc": vc, "w": w, "att": att, "h_att": h_att, "ctx": ctx}
        return v, cache

    def backward(self, cache, grad_out, input_grad: bool = False) -> dict:
        """Parameter gradients of ``sum(grad_out * v)``; adds ``"x"`` when asked."""
        c = self.config
        p = self.params
        d = c.d_model
        grad_out = np.asarray(grad_out, dtype=np.float64)
        if grad_out.shape != cache["x_shape"]:
            raise StaleCache(f"grad_out shape {grad_out.shape} does not match cached forward "
                             f"{cache['x_shape']}")
        B = grad_out.shape[0]
        g = {}
        gout = grad_out.reshape(B, 8, -1).transpose(0, 2, 1)

        h_att = cache["h_att"]
        g["proj_out.w"] = np.einsum("bnd,bnk->dk", h_att, gout)
        g["proj_out.b"] = gout.sum(axis=(0, 1))
        gh = gout @ p["proj_out.w"].T

        # attention
        g_att = gh @ p["attn.wo"].T
        g["attn.wo"] = np.einsum("bnd,bne->de", cache["att"], gh)
        w, vc, kc, qh = cache["w"], cache["vc"], cache["kc"], cache["qh"]
        g_w = np.einsum("bnd,bmd->bnm", g_att, vc)
        g_vc = np.einsum("bnm,bnd->bmd", w, g_att)
        g_s = w * (g_w - (w * g_w).sum(axis=-1, keepdims=True)) / math.sqrt(d)
        g_q = np.einsum("bnm,bmd->bnd", g_s, kc)
        g_k = np.einsum("bnm,bnd->bmd", g_s, qh)
        h = cache["h_pre_attn"]
        ctx = cache["ctx"]
        g["attn.wq"] = np.einsum("bnd,bne->de", h, g_q)
        g["attn.wk"] = np.einsum("bmd,bme->de", ctx, g_k)
        g["attn.wv"] = np.einsum("bmd,bme->de", ctx, g_vc)
        g_ctx = g_k @ p["attn.wk"].T + g_vc @ p["attn.wv"].T
        g_e_attn = g_ctx.sum(axis=1)
        gh = gh + g_q @ p["attn.wq"].T

        g_e_time = np.zeros((B, d))
        g_e_film = np.zeros((B, d))
        e_film = cache["e_film"]
        e_time = None
        for i in reversed(range(c.n_blocks)):
            q = f"block{i}."
            bc = cache["blocks"][i]
            g[q + "linear2.w"] = np.einsum("bnh,bnd->hd", bc["s"], gh)
            g[q + "linear2.b"] = gh.sum(axis=(0, 1))
            g_a = (gh @ p[q + "linear2.w"].T) * silu_grad(bc["a"])
            g[q + "linear1.w"] = np.einsum("bnd,bnh->dh", bc["hm"], g_a)
            g[q + "linear1.b"] = g_a.sum(axis=(0, 1))
            g_hm = g_a @ p[q + "linear1.w"].T

            gam_c = bc["fc"][:, :d]
            g_hp = g_hm * (1.0 + gam_c[:, None, :])
            if c.film_cond_on:
                g_fc = np.concatenate([(g_hm * bc["hp"]).sum(axis=1), g_hm.sum(axis=1)], axis=1)
                g[q + "film_cond.w"] = e_film.T @ g_fc
                g[q + "film_cond.b"] = g_fc.sum(axis=0)
                g_e_film += g_fc @ p[q + "film_cond.w"].T
            else:
                g[q + "film_cond.w"] = np.zeros_like(p[q + "film_cond.w"])
                g[q + "film_cond.b"] = np.zeros_like(p[q + "film_cond.b"])

            gam_t = bc["ft"][:, :d]
            g_z = g_hp * (1.0 + gam_t[:, None, :])
            g_ft = np.concatenate([(g_hp * bc["z"]).sum(axis=1), g_hp.sum(axis=1)], axis=1)
            if e_time is None:
                e_time = cache["tcache"]["s"] @ p["time.w2"] + p["time.b2"]
            g[q + "film_time.w"] = e_time.T @ g_ft
            g[q + "film_time.b"] = g_ft.sum(axis=0)
            g_e_time += g_ft @ p[q + "film_time.w"].T

            gh = gh + layer_norm_backward(g_z, bc["z"], bc["rstd"])

        tokens = cache["tokens"]
        g["proj_in.w"] = np.einsum("bnc,bnd->cd", tokens, gh)
        g["proj_in.b"] = gh.sum(axis=(0, 1))
        g["pos.w"] = cache["pos"].T @ gh.sum(axis=0)
        if input_grad:
            g["x"] = (gh @ p["proj_in.w"].T).transpose(0, 2, 1).reshape(cache["x_shape"])

        # time MLP
        tc = cache["tcache"]
        g["time.w2"] = tc["s"].T @ g_e_time
        g["time.b2"] = g_e_time.sum(axis=0)
        g_a = (g_e_time @ p["time.w2"].T) * silu_grad(tc["a"])
        g["time.w1"] = tc["f"].T @ g_a
        g["time.b1"] = g_a.sum(axis=0)

        # condition MLPs; each pathway only sees e_cond when its mode is on
        g_e_cond = np.zeros((B, d))
        if c.film_cond_on:
            g_e_cond += g_e_film
        if c.attn_cond_on:
            g_e_cond += g_e_attn
        for var in c.variables:
            u, a, s = cache["ccache"][var]
            g[f"cond.{var}.w2"] = s.T @ g_e_cond
            g[f"cond.{var}.b2"] = g_e_cond.sum(axis=0)
            g_a = (g_e_cond @ p[f"cond.{var}.w2"].T) * silu_grad(a)
            g[f"cond.{var}.w1"] = u.T @ g_a
            g[f"cond.{var}.b1"] = g_a.sum(axis=0)
        return g

    def __call__(self, x_t, t, cond: dict) -> np.ndarray:
        """Single-sample velocity: ``x_t`` is ``(8, d, h, w)``, ``cond`` raw named values."""
        cnorm = normalize_conditions(cond, self.config.condition_ranges)[None]
        v, _ = self.forward_batch(np.asarray(x_t)[None], np.array([t], dtype=np.float64), cnorm)
        return v[0]


def forward(model: VelocityModel, x_t, t, cond: dict) -> np.ndarray:
    return model(x_t, t, cond)


def fm_loss(v_pred, v_target) -> float:
    v_pred = np.asarray(v_pred, dtype=np.float64)
    v_target = np.asarray(v_target, dtype=np.float64)
    if v_pred.shape != v_target.shape:
        raise ShapeMismatch(f"prediction {v_pred.shape} vs target {v_target.shape}")
    diff = v_pred - v_target
    return float(np.mean(diff * diff))


def fm_loss_grad(v_pred, v_target) -> np.ndarray:
    return 2.0 * (np.asarray(v_pred, dtype=np.float64) - v_target) / np.size(v_pred)


# ---------------------------------------------------------------- optimisation

@dataclass
class OptimState:
    lr_max: float = 1e-3
    eta_min: float = 1e-7
    weight_decay: float = 1e-5
    total_steps: int = 1
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def cosine_lr(state: OptimState, step: int) -> float:
    """Cosine annealing from ``lr_max`` at step 0 to ``eta_min`` at ``total_steps``."""
    frac = min(step, state.total_steps) / max(state.total_steps, 1)
    return state.eta_min + 0.5 * (state.lr_max - state.eta_min) * (1.0 + math.cos(math.pi * frac))


def adamw_step(state: OptimState, params: dict, grads: dict, step_index: int | None = None) -> float:
    """One decoupled-weight-decay Adam update in place; returns the lr used."""
    step_index = state.step if step_index is None else step_index
    lr = cosine_lr(state, step_index)
    state.step += 1
    k = state.step
    bc1 = 1.0 - state.beta1 ** k
    bc2 = 1.0 - state.beta2 ** k
    for name, p in params.items():
        gr = grads[name]
        if gr.shape != p.shape:
            raise ShapeMismatch(f"gradient for {name} has shape {gr.shape}, param {p.shape}")
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= state.beta1
        m += (1.0 - state.beta1) * gr
        v *= state.beta2
        v += (1.0 - state.beta2) * gr * gr
        p *= 1.0 - lr * state.weight_decay
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.adam_eps)
    return lr


def global_norm(grads: dict) -> float:
    return math.sqrt(sum(float(np.sum(gr * gr)) for gr in grads.values()))


def clip_grads(grads: dict, max_norm: float) -> float:
    """Rescale in place so the global norm is at most ``max_norm``; returns the pre-clip norm."""
    norm = global_norm(grads)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for gr in grads.values():
            gr *= scale
    return norm


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(model: VelocityModel, path) -> None:
    """JSON manifest, a NUL byte, then every tensor as little-endian float32."""
    entries = []
    chunks = []
    offset = 0
    for name in sorted(model.params):
        arr = np.ascontiguousarray(model.params[name], dtype="<f4")
        entries.append({"name": name, "shape": list(arr.shape), "byte_offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    cfg = asdict(model.config)
    cfg["condition_ranges"] = {k: list(v) for k, v in cfg["condition_ranges"].items()}
    manifest = json.dumps({"config": cfg, "meta": model.meta, "tensors": entries,
                           "payload_bytes": offset}, sort_keys=True)
    with open(path, "wb") as fh:
        fh.write(manifest.encode("utf-8"))
        fh.write(b"\0")
        for chunk in chunks:
            fh.write(chunk)


def load_checkpoint(path) -> VelocityModel:
    path = Path(path)
    raw = path.read_bytes()
    sep = raw.find(b"\0")
    if sep < 0:
        raise MalformedHeader(f"{path}: no manifest separator")
    try:
        manifest = json.loads(raw[:sep].decode("utf-8"))
        cfg = ModelConfig(**manifest["config"])
        entries = manifest["tensors"]
    except (ValueError, KeyError, TypeError) as exc:
        raise MalformedHeader(f"{path}: bad manifest ({exc})") from None
    payload = memoryview(raw)[sep + 1:]
    model = VelocityModel(cfg, meta=manifest.get("meta"))
    expected = model.param_shapes()
    total = 0
    params = {}
    for e in entries:
        shape = tuple(e["shape"])
        if expected.get(e["name"]) != shape:
            raise MalformedHeader(f"{path}: tensor {e['name']} shape {shape} does not fit the config")
        n = int(np.prod(shape)) * 4
        if e["byte_offset"] + n > len(payload):
            raise TruncatedData(f"{path}: tensor {e['name']} runs past the payload")
        params[e["name"]] = np.frombuffer(payload, dtype="<f4", count=n // 4,
                                          offset=e["byte_offset"]).reshape(shape).astype(np.float64)
        total += n
    if set(params) != set(expected):
        raise MalformedHeader(f"{path}: missing tensors {sorted(set(expected) - set(params))}")
    if total != len(payload) or manifest.get("payload_bytes", total) != total:
        raise TruncatedData(f"{path}: payload is {len(payload)} bytes, manifest describes {total}")
    model.params = params
    return model


def param_digest(model: VelocityModel) -> str:
    """SHA-256 over parameter names and bytes (for immutability checks)."""
    h = hashlib.sha256()
    for name in sorted(model.params):
        h.update(name.encode())
        h.update(np.ascontiguousarray(model.params[name]).tobytes())
    return h.hexdigest()
