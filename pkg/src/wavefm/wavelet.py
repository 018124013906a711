"""Single-level separable 3D DWT with periodized boundaries.

Filters use the tap order of the common published tables (PyWavelets).
Analysis reads taps over the window starting at each even sample,
``a[k] = sum_j dec[j] * x[(2k + j) mod N]``, so the Haar detail of a pair
``(x0, x1)`` is ``(x1 - x0) / sqrt(2)``. Synthesis places
``rec[L-1-j]`` at ``(2k + j) mod N``; for the orthonormal families this is
exactly the transpose of analysis.

Subbands are stacked as ``[LLL, LLH, LHL, LHH, HLL, HLH, HHL, HHH]``, the
letters naming the filter along (depth, height, width).
"""
from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from .errors import BadDims, ShapeMismatch
from .volio import Volume3D

SUBBANDS = ("LLL", "LLH", "LHL", "LHH", "HLL", "HLH", "HHL", "HHH")

_S2 = 0.7071067811865476


@dataclass(frozen=True)
class WaveletFamily:
    name: str
    dec_lo: tuple
    dec_hi: tuple
    rec_lo: tuple
    rec_hi: tuple
    orthonormal: bool = True

    @property
    def length(self) -> int:
        return len(self.dec_lo)


def _qmf(lo):
    """Orthonormal high-pass partner: dec_hi[n] = (-1)^(n+1) dec_lo[L-1-n]."""
    L = len(lo)
    return tuple((-1) ** (n + 1) * lo[L - 1 - n] for n in range(L))


def _orthonormal(name, dec_lo):
    dec_lo = tuple(dec_lo)
    dec_hi = _qmf(dec_lo)
    return WaveletFamily(name, dec_lo, dec_hi, dec_lo[::-1], dec_hi[::-1], True)


_DB4 = (-0.010597401785069032, 0.0328830116668852, 0.030841381835560764,
        -0.18703481171909309, -0.027983769416859854, 0.6308807679298589,
        0.7148465705529157, 0.2303778133088965)
_SYM4 = (-0.07576571478927333, -0.02963552764599851, 0.49761866763201545,
         0.8037387518059161, 0.29785779560527736, -0.09921954357684722,
         -0.012603967262037833, 0.0322231006040427)
_COIF2 = (-0.000720549445520347, -0.0018232088709110323, 0.005611434819368834,
          0.02368017194684777, -0.05943441864643109, -0.07648859907828076,
          0.4170051844232391, 0.8127236354494135, 0.3861100668227629,
          -0.0673725547237256, -0.04146493678687178, 0.01638733646320364)
_B33_DEC_LO = (0.06629126073623882, -0.1988737822087165, -0.15467960838455727,
               0.9943689110435825, 0.9943689110435825, -0.15467960838455727,
               -0.1988737822087165, 0.06629126073623882)
_B33_DEC_HI = (0.0, 0.0, -0.1767766952966369, 0.5303300858899106,
               -0.5303300858899106, 0.1767766952966369, 0.0, 0.0)
_B33_REC_LO = (0.0, 0.0, 0.1767766952966369, 0.5303300858899106,
               0.5303300858899106, 0.1767766952966369, 0.0, 0.0)
_B33_REC_HI = (0.06629126073623882, 0.1988737822087165, -0.15467960838455727,
               -0.9943689110435825, 0.9943689110435825, 0.15467960838455727,
               -0.1988737822087165, -0.06629126073623882)

FAMILIES = {
    "haar": _orthonormal("haar", (_S2, _S2)),
    "db4": _orthonormal("db4", _DB4),
    "sym4": _orthonormal("sym4", _SYM4),
    "coif2": _orthonormal("coif2", _COIF2),
    "bior33": WaveletFamily("bior33", _B33_DEC_LO, _B33_DEC_HI, _B33_REC_LO, _B33_REC_HI, False),
}
FAMILIES["bior3.3"] = FAMILIES["bior33"]


def get_family(family) -> WaveletFamily:
    if isinstance(family, WaveletFamily):
        return family
    try:
        return FAMILIES[family]
    except KeyError:
        raise ValueError(f"unknown wavelet family {family!r}; "
                         f"choose from haar, db4, sym4, coif2, bior33") from None


@dataclass
class WaveletCoeffs:
    """Eight stacked subbands, shape ``(8, D/2, H/2, W/2)``."""

    subbands: np.ndarray
    family: WaveletFamily
    orig_dims: tuple

    def __post_init__(self):
        d, h, w = self.orig_dims
        if self.subbands.shape != (8, d // 2, h // 2, w // 2):
            raise ShapeMismatch(f"subbands shape {self.subbands.shape} inconsistent "
                                f"with original dims {self.orig_dims}")

    def band(self, name: str) -> np.ndarray:
        return self.subbands[SUBBANDS.index(name)]


@functools.lru_cache(maxsize=64)
def _matrices(name: str, n: int, dtype: str):
    """Per-axis analysis (low rows then high rows) and synthesis matrices."""
    fam = FAMILIES[name]
    L = fam.length
    ana = np.zeros((n, n))
    syn = np.zeros((n, n))
    half = n // 2
    for k in range(half):
        for j in range(L):
            m = (2 * k + j) % n
            ana[k, m] += fam.dec_lo[j]
            ana[half + k, m] += fam.dec_hi[j]
            syn[m, k] += fam.rec_lo[L - 1 - j]
            syn[m, half + k] += fam.rec_hi[L - 1 - j]
    ana = ana.astype(dtype)
    syn = syn.astype(dtype)
    ana.setflags(write=False)
    syn.setflags(write=False)
    return ana, syn


def _along(mat: np.ndarray, x: np.ndarray, axis: int) -> np.ndarray:
    return np.moveaxis(np.tensordot(mat, x, axes=([1], [axis])), 0, axis)


def _work_dtype(x: np.ndarray):
    return np.float64 if x.dtype == np.float64 else np.float32


def dwt3_array(x: np.ndarray, family="haar") -> np.ndarray:
    """Forward transform of a raw ``(D, H, W)`` array to ``(8, D/2, H/2, W/2)``."""
    fam = get_family(family)
    if x.ndim != 3 or any(s % 2 or s == 0 for s in x.shape):
        raise BadDims(f"dwt3 needs a 3D array with even positive dims, got {x.shape}")
    dt = _work_dtype(x)
    y = x.astype(dt, copy=False)
    for axis in range(3):
        ana, _ = _matrices(fam.name, x.shape[axis], np.dtype(dt).str)
        y = _along(ana, y, axis)
    d, h, w = (s // 2 for s in x.shape)
    # split each axis into (low, high) halves; flattening the three bits gives LLL..HHH
    y = y.reshape(2, d, 2, h, 2, w).transpose(0, 2, 4, 1, 3, 5)
    return np.ascontiguousarray(y.reshape(8, d, h, w))


def idwt3_array(sub: np.ndarray, family="haar") -> np.ndarray:
    fam = get_family(family)
    if sub.ndim != 4 or sub.shape[0] != 8:
        raise ShapeMismatch(f"expected (8, d, h, w) subbands, got {sub.shape}")
    _, d, h, w = sub.shape
    dt = _work_dtype(sub)
    y = sub.astype(dt, copy=False).reshape(2, 2, 2, d, h, w).transpose(0, 3, 1, 4, 2, 5)
    y = y.reshape(2 * d, 2 * h, 2 * w)
    for axis in range(3):
        _, syn = _matrices(fam.name, y.shape[axis], np.dtype(dt).str)
        y = _along(syn, y, axis)
    return np.ascontiguousarray(y)


def dwt3(vol: Volume3D, family="haar") -> WaveletCoeffs:
    fam = get_family(family)
    return WaveletCoeffs(dwt3_array(vol.data, fam), fam, vol.dims)


def idwt3(coeffs: WaveletCoeffs, provenance: str = "generated") -> Volume3D:
    d, h, w = coeffs.orig_dims
    if coeffs.subbands.shape != (8, d // 2, h // 2, w // 2):
        raise ShapeMismatch("subband dims do not match orig_dims")
    out = idwt3_array(coeffs.subbands, coeffs.family)
    return Volume3D(out.astype(np.float32), provenance=provenance)


def recon_benchmark(volumes, families=("haar", "db4", "sym4", "coif2", "bior33")):
    """Round-trip MAE per family: list of ``(family, mean_mae, std_mae)``.

    MAE is averaged over voxels within each volume, then mean/std (population)
    across volumes. Computation stays in the volumes' float32 precision.
    """
    rows = []
    for fam in families:
        fam = get_family(fam)
        maes = []
        for vol in volumes:
            x = vol.data if isinstance(vol, Volume3D) else np.asarray(vol, dtype=np.float32)
            rec = idwt3_array(dwt3_array(x, fam), fam)
            maes.append(float(np.mean(np.abs(x.astype(np.float64) - rec.astype(np.float64)))))
        rows.append((fam.name, float(np.mean(maes)), float(np.std(maes))))
    return rows
