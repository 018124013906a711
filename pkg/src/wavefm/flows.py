"""Interpolation paths between noise ``x0`` (t=0) and data ``x1`` (t=1).

Four kinds are supported:

``rfm``   straight line, constant velocity ``x1 - x0``
``cfm``   straight line, velocity ``(x1 - x_t) / (1 - t + eps)``
``trig``  quarter circle ``cos(pi t/2) x0 + sin(pi t/2) x1``
``vp``    variance-preserving diffusion path with a linear beta schedule

VP is parameterised internally by the diffusion time ``tau = 1 - t``
(``tau = 0`` is clean data). Its target is the conditional probability-flow
velocity expressed in generation time, i.e. ``d x_t / d t`` along the path,
so every kind can be integrated forward from noise at t=0 to data at t=1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError, ShapeMismatch

KINDS = ("rfm", "cfm", "vp", "trig")


@dataclass(frozen=True)
class VPSchedule:
    beta_min: float = 0.1
    beta_max: float = 20.0

    def __post_init__(self):
        if not (self.beta_max > self.beta_min > 0):
            raise ConfigError("need beta_max > beta_min > 0")


@dataclass(frozen=True)
class FlowSpec:
    kind: str = "rfm"
    epsilon: float = 1e-8
    vp_beta_min: float = 0.1
    vp_beta_max: float = 20.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown flow kind {self.kind!r}; choose from {', '.join(KINDS)}")
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be positive")
        VPSchedule(self.vp_beta_min, self.vp_beta_max)

    @property
    def schedule(self) -> VPSchedule:
        return VPSchedule(self.vp_beta_min, self.vp_beta_max)

    @property
    def needs_xi(self) -> bool:
        return self.kind == "vp"


@dataclass
class PathSample:
    x_t: np.ndarray
    v_target: np.ndarray
    t: float


def vp_beta(sched: VPSchedule, tau):
    return sched.beta_min + tau * (sched.beta_max - sched.beta_min)


def vp_T(sched: VPSchedule, tau):
    """Integral of beta from 0 to tau."""
    return sched.beta_min * tau + 0.5 * (sched.beta_max - sched.beta_min) * tau * tau


def vp_alpha_bar(sched: VPSchedule, tau):
    return np.exp(-0.5 * vp_T(sched, tau))


def vp_sigma(sched: VPSchedule, tau):
    # 1 - exp(-T) via expm1 keeps precision near tau = 0
    return np.sqrt(-np.expm1(-vp_T(sched, tau)))


def path_sample(spec: FlowSpec, x0, x1, t: float, xi=None) -> PathSample:
    """Interpolant ``x_t`` and its regression target at generation time ``t``.

    ``xi`` is the diffusion noise for the ``vp`` kind and is ignored otherwise.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    if x0.shape != x1.shape:
        raise ShapeMismatch(f"x0 {x0.shape} and x1 {x1.shape} differ")
    t = float(t)
    if not (0.0 <= t <= 1.0) or math.isnan(t):
        raise DomainError(f"t={t} outside [0, 1]")

    if spec.kind == "rfm":
        x_t = (1.0 - t) * x0 + t * x1
        v = x1 - x0
    elif spec.kind == "cfm":
        x_t = (1.0 - t) * x0 + t * x1
        v = (x1 - x_t) / (1.0 - t + spec.epsilon)
    elif spec.kind == "trig":
        a = 0.5 * math.pi * t
        x_t = math.cos(a) * x0 + math.sin(a) * x1
        v = 0.5 * math.pi * (-math.sin(a) * x0 + math.cos(a) * x1)
    else:
        if xi is None:
            raise ValueError("vp path needs the diffusion noise xi")
        xi = np.asarray(xi, dtype=np.float64)
        if xi.shape != x1.shape:
            raise ShapeMismatch(f"xi {xi.shape} and x1 {x1.shape} differ")
        sched = spec.schedule
        tau = 1.0 - t
        T = vp_T(sched, tau)
        x_t = vp_alpha_bar(sched, tau) * x1 + vp_sigma(sched, tau) * xi
        v = (-0.5 * vp_beta(sched, tau)
             * (math.exp(-T) * x_t - math.exp(-0.5 * T) * x1)
             / (-math.expm1(-T) + spec.epsilon))
    return PathSample(x_t, v, t)
