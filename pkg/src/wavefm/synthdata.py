"""Condition-controlled 3D phantoms with ground-truth region masks.

A phantom is a centred bright sphere ("core", label 1) wrapped in a darker
shell (label 2) on a dark background. The core radius grows linearly with a
scalar condition in [0, 1], which plays the role of a normalised covariate
such as age. A weak seed-dependent cosine field keeps samples distinct.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BadDims, DomainError
from .rng import derive_seed, generator
from .volio import Volume3D

CORE, SHELL = 1, 2
CORE_VALUE = 0.8
SHELL_VALUE = -0.2
BACKGROUND_VALUE = -1.0
PERTURB_AMPLITUDE = 0.05
PROXY_THRESHOLD = 0.3
SHELL_THRESHOLD = 0.5 * (BACKGROUND_VALUE + SHELL_VALUE)

R_MIN_FRAC = 0.15
R_MAX_FRAC = 0.35
SHELL_FRAC = 0.1


@dataclass
class RegionMask:
    """Label -> sorted flat voxel indices. Label sets are disjoint."""

    labels: dict
    size: int

    def __post_init__(self):
        seen = np.zeros(self.size, dtype=bool)
        clean = {}
        for lab, idx in sorted(self.labels.items()):
            idx = np.unique(np.asarray(idx, dtype=np.int64))
            if lab <= 0:
                raise ValueError("labels must be positive integers")
            if idx.size and (idx[0] < 0 or idx[-1] >= self.size):
                raise ValueError(f"label {lab} has indices outside [0, {self.size})")
            if seen[idx].any():
                raise ValueError(f"label {lab} overlaps another label")
            seen[idx] = True
            clean[int(lab)] = idx
        self.labels = clean

    @classmethod
    def from_label_volume(cls, lab: np.ndarray) -> "RegionMask":
        flat = np.asarray(lab).ravel()
        return cls({int(v): np.flatnonzero(flat == v) for v in np.unique(flat) if v > 0}, flat.size)

    def to_label_volume(self, shape) -> np.ndarray:
        out = np.zeros(self.size, dtype=np.int32)
        for lab, idx in self.labels.items():
            out[idx] = lab
        return out.reshape(shape)

    def count(self, label: int) -> int:
        return int(self.labels.get(label, np.empty(0)).size)


@dataclass
class Phantom:
    volume: Volume3D
    condition: float
    masks: RegionMask
    seed: int


def core_radius(n: int, condition: float) -> float:
    return R_MIN_FRAC * n + condition * (R_MAX_FRAC - R_MIN_FRAC) * n


def _center_distance(n: int) -> np.ndarray:
    c = (n - 1) / 2.0
    ax = np.arange(n, dtype=np.float64) - c
    return np.sqrt(ax[:, None, None] ** 2 + ax[None, :, None] ** 2 + ax[None, None, :] ** 2)


def _perturbation(n: int, seed: int) -> np.ndarray:
    rng = generator(derive_seed(seed, "phantom-perturbation"))
    phases = rng.uniform(0.0, 2.0 * np.pi, size=3)
    freqs = rng.integers(1, 3, size=3)
    grid = 2.0 * np.pi * np.arange(n, dtype=np.float64) / n
    field = (np.cos(freqs[0] * grid + phases[0])[:, None, None]
             + np.cos(freqs[1] * grid + phases[1])[None, :, None]
             + np.cos(freqs[2] * grid + phases[2])[None, None, :])
    return PERTURB_AMPLITUDE * field / 3.0


def gen_phantom(n: int, condition: float, seed: int) -> Phantom:
    if n < 8 or n % 2:
        raise BadDims(f"phantom side must be even and >= 8, got {n}")
    if not (0.0 <= condition <= 1.0):
        raise DomainError(f"condition {condition} outside [0, 1]")
    dist = _center_distance(n)
    r = core_radius(n, condition)
    core = dist <= r
    shell = (dist > r) & (dist <= r + SHELL_FRAC * n)
    vol = np.full((n, n, n), BACKGROUND_VALUE)
    vol[shell] = SHELL_VALUE
    vol[core] = CORE_VALUE
    vol = np.clip(vol + _perturbation(n, seed), -1.0, 1.0)
    masks = RegionMask({CORE: np.flatnonzero(core.ravel()), SHELL: np.flatnonzero(shell.ravel())}, n ** 3)
    return Phantom(Volume3D(vol.astype(np.float32), "synthetic"), float(condition), masks, int(seed))


def condition_proxy(vol: Volume3D) -> float:
    """Estimate the condition from the volume of supra-threshold voxels."""
    n = float(np.prod(vol.dims)) ** (1.0 / 3.0)
    count = int(np.count_nonzero(vol.data > PROXY_THRESHOLD))
    if count == 0:
        return 0.0
    r = (3.0 * count / (4.0 * np.pi)) ** (1.0 / 3.0)
    c = (r - R_MIN_FRAC * n) / ((R_MAX_FRAC - R_MIN_FRAC) * n)
    return float(np.clip(c, 0.0, 1.0))


def phantom_set(count: int, n: int, seed: int, stream: str = "dataset") -> list[Phantom]:
    """``count`` phantoms with conditions drawn uniformly from [0, 1]."""
    rng = generator(derive_seed(seed, stream, "conditions"))
    conds = rng.uniform(0.0, 1.0, size=count)
    return [gen_phantom(n, float(c), derive_seed(seed, stream, i)) for i, c in enumerate(conds)]


def segment(vol: Volume3D) -> RegionMask:
    """Threshold labelling of any volume into core/shell, midway between the
    nominal phantom intensities. Used to obtain masks for generated volumes."""
    x = vol.data.ravel()
    core = np.flatnonzero(x > PROXY_THRESHOLD)
    shell = np.flatnonzero((x > SHELL_THRESHOLD) & (x <= PROXY_THRESHOLD))
    return RegionMask({CORE: core, SHELL: shell}, x.size)
