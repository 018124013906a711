"""Counter-based randomness.

Every random stream in the package is keyed by ``(seed, stream)`` on a
Philox counter generator, so draws are reproducible across platforms and
independent streams can be split off by name or sample index without
shifting each other.
"""
from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def derive_seed(seed: int, *names: object) -> int:
    """Hash ``(seed, *names)`` to a 64-bit key for a named component."""
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(seed) & _MASK64).encode())
    for name in names:
        h.update(b"\x1f")
        h.update(str(name).encode())
    return int.from_bytes(h.digest(), "little")


def _philox(seed: int, stream: int) -> np.random.Philox:
    key = np.array([int(seed) & _MASK64, int(stream) & _MASK64], dtype=np.uint64)
    return np.random.Philox(key=key)


def generator(seed: int, stream: int = 0) -> np.random.Generator:
    """A numpy Generator over the Philox stream ``(seed, stream)``."""
    return np.random.Generator(_philox(seed, stream))


def uniforms(n: int, seed: int, stream: int = 0) -> np.ndarray:
    """``n`` doubles in the open interval (0, 1)."""
    raw = _philox(seed, stream).random_raw(n)
    # top 53 bits, centred in their cell so 0 is never produced
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * (1.0 / 9007199254740992.0)


def draw_noise(shape, seed: int, stream: int = 0) -> np.ndarray:
    """Standard normal array via Box-Muller on the counter stream."""
    shape = tuple(int(s) for s in np.atleast_1d(shape))
    n = int(np.prod(shape))
    pairs = (n + 1) // 2
    u = uniforms(2 * pairs, seed, stream)
    r = np.sqrt(-2.0 * np.log(u[0::2]))
    theta = 2.0 * np.pi * u[1::2]
    z = np.empty(2 * pairs)
    z[0::2] = r * np.cos(theta)
    z[1::2] = r * np.sin(theta)
    return z[:n].reshape(shape)
