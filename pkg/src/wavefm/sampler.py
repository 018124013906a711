"""Fixed-step ODE integration from Gaussian noise (t=0) to data (t=1)."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NonFiniteState
from .neural import VelocityModel, normalize_conditions
from .rng import derive_seed, draw_noise
from .volio import Volume3D
from .wavelet import idwt3_array

SOLVERS = ("euler", "rk4")


@dataclass
class SamplerConfig:
    steps: int = 10
    solver: str = "euler"
    seed: int = 0
    condition: dict = field(default_factory=dict)

    def __post_init__(self):
        if int(self.steps) < 1:
            raise ConfigError("steps must be >= 1")
        if self.solver not in SOLVERS:
            raise ConfigError(f"solver must be one of {SOLVERS}")
        self.steps = int(self.steps)


def _check(x, k):
    if not np.all(np.isfinite(x)):
        raise NonFiniteState(f"non-finite state after step {k}")


def integrate_field(field, x0, steps: int, solver: str = "euler"):
    """Integrate ``dx/dt = field(x, t)`` over t in [0, 1] with ``steps`` uniform steps."""
    if solver not in SOLVERS:
        raise ConfigError(f"solver must be one of {SOLVERS}")
    if steps < 1:
        raise ConfigError("steps must be >= 1")
    x = np.array(x0, dtype=np.float64)
    h = 1.0 / steps
    for k in range(steps):
        t = k * h
        if solver == "euler":
            x = x + h * field(x, t)
        else:
            k1 = field(x, t)
            k2 = field(x + 0.5 * h * k1, t + 0.5 * h)
            k3 = field(x + 0.5 * h * k2, t + 0.5 * h)
            k4 = field(x + h * k3, t + h)
            x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        _check(x, k)
    return x


def initial_noise(dims, seed: int, index: int = 0) -> np.ndarray:
    """Wavelet-space starting point for sample ``index`` under ``seed``."""
    d, h, w = dims
    return draw_noise((8, d // 2, h // 2, w // 2), derive_seed(seed, "sampler-noise"), index)


def sample_batch(model: VelocityModel, conditions: list, dims, steps: int, solver: str = "euler",
                 seed: int = 0, family="haar", first_index: int = 0) -> list:
    """One generated volume per entry of ``conditions`` (dicts of raw values).

    Sample ``i`` starts from noise stream ``first_index + i``, so results do
    not depend on how a request is split into batches.
    """
    ranges = model.config.condition_ranges
    cnorm = np.stack([normalize_conditions(c, ranges) for c in conditions])
    x0 = np.stack([initial_noise(dims, seed, first_index + i) for i in range(len(conditions))])
    B = len(conditions)

    def field(x, t):
        return model.forward_batch(x, np.full(B, t), cnorm)[0]

    xs = integrate_field(field, x0, steps, solver)
    return [Volume3D(idwt3_array(x, family).astype(np.float32), "generated") for x in xs]


def integrate(model: VelocityModel, flowspec, cfg: SamplerConfig, dims=(16, 16, 16),
              family="haar", index: int = 0) -> Volume3D:
    """Generate one volume.

    All four flow kinds are trained on a velocity in generation time, so
    they share one integrator and ``flowspec`` is not consulted.
    """
    del flowspec
    return sample_batch(model, [cfg.condition], dims, cfg.steps, cfg.solver, cfg.seed, family,
                        first_index=index)[0]
