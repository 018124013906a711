import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import mannwhitneyu

from wavefm import metrics
from wavefm.errors import EmptySet, NoRegions, ShapeMismatch, TooSmall
from wavefm.metrics import (bonferroni, bootstrap, downsample2, evaluate_sets, gaussian_window,
                            intra_set_msssim, max_msssim_scales, mmd2, ms_ssim3, region_metrics,
                            spearman, volume_mmd2, wilcoxon_ranksum)
from wavefm.synthdata import RegionMask, gen_phantom, phantom_set
from wavefm.volio import Volume3D


def brute_ssim(a, b, win_size=7, sigma=1.5, data_range=2.0):
    """Single-scale SSIM map mean, one voxel at a time with symmetric padding."""
    r = win_size // 2
    g = gaussian_window(win_size, sigma)
    w3 = g[:, None, None] * g[None, :, None] * g[None, None, :]
    pa, pb = np.pad(a, r, mode="symmetric"), np.pad(b, r, mode="symmetric")
    c1, c2 = (0.01 * data_range) ** 2, (0.03 * data_range) ** 2
    vals = []
    for i, j, k in np.ndindex(a.shape):
        na = pa[i:i + win_size, j:j + win_size, k:k + win_size]
        nb = pb[i:i + win_size, j:j + win_size, k:k + win_size]
        ma, mb = np.sum(w3 * na), np.sum(w3 * nb)
        va = np.sum(w3 * na * na) - ma * ma
        vb = np.sum(w3 * nb * nb) - mb * mb
        cov = np.sum(w3 * na * nb) - ma * mb
        vals.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2)))
    return float(np.mean(vals))


# ---------------------------------------------------------------- MMD

def test_mmd_identical_sets_zero():
    X = np.random.default_rng(0).normal(size=(20, 5))
    assert mmd2(X, X.copy()) < 1e-12
    assert mmd2(X, X[::-1]) < 1e-12


def test_mmd_hand_value():
    assert mmd2([0.0], [1.0], bandwidth=1.0) == pytest.approx(2 - 2 * math.exp(-0.5), abs=1e-15)


def test_mmd_monte_carlo_ordering():
    rng = np.random.default_rng(1)
    for _ in range(10):
        X, Y, Z = rng.normal(size=200), rng.normal(size=200), rng.normal(3.0, 1.0, size=200)
        assert mmd2(X, Y) < mmd2(X, Z)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(1, 8), st.integers(1, 8))
def test_mmd_symmetric_nonnegative(seed, n, m):
    rng = np.random.default_rng(seed)
    X, Y = rng.normal(size=(n, 3)), rng.normal(size=(m, 3))
    assert abs(mmd2(X, Y) - mmd2(Y, X)) < 1e-12
    assert mmd2(X, Y) >= 0.0


def test_mmd_errors():
    with pytest.raises(EmptySet):
        mmd2(np.zeros((0, 2)), np.zeros((3, 2)))
    with pytest.raises(ShapeMismatch):
        mmd2(np.zeros((2, 2)), np.zeros((3, 3)))


def test_downsample2_is_block_mean():
    x = np.arange(64.0).reshape(4, 4, 4)
    assert downsample2(x)[0, 0, 0] == np.mean(x[:2, :2, :2])


def test_volume_mmd_phantoms_vs_noise():
    ph = [p.volume for p in phantom_set(10, 16, 0, "a")]
    ph2 = [p.volume for p in phantom_set(10, 16, 0, "b")]
    noise = [Volume3D(np.random.default_rng(i).normal(size=(16, 16, 16))) for i in range(10)]
    assert volume_mmd2(ph, ph2) < volume_mmd2(ph, noise)


# ---------------------------------------------------------------- MS-SSIM

def test_msssim_self_is_one():
    x = np.random.default_rng(2).uniform(-1, 1, size=(16, 16, 16))
    assert ms_ssim3(x, x) == pytest.approx(1.0, abs=1e-6)


def test_msssim_negated_is_nonpositive():
    rng = np.random.default_rng(3)
    for _ in range(3):
        x = rng.normal(0, 0.3, size=(16, 16, 16))
        x -= x.mean()
        assert ms_ssim3(x, -x) <= 0.0


def test_msssim_symmetric():
    rng = np.random.default_rng(4)
    a, b = rng.uniform(-1, 1, size=(2, 16, 16, 16))
    assert abs(ms_ssim3(a, b) - ms_ssim3(b, a)) < 1e-9


def test_single_scale_matches_brute_force():
    rng = np.random.default_rng(5)
    a = rng.uniform(-1, 1, size=(8, 8, 8))
    b = 0.6 * a + 0.4 * rng.uniform(-1, 1, size=(8, 8, 8))
    assert ms_ssim3(a, b, scales=1) == pytest.approx(brute_ssim(a, b), abs=1e-12)


def test_intra_set_identical():
    x = gen_phantom(16, 0.5, 1).volume
    assert intra_set_msssim([x, x, x]) == pytest.approx(1.0, abs=1e-6)


def test_msssim_errors():
    with pytest.raises(ShapeMismatch):
        ms_ssim3(np.zeros((16, 16, 16)), np.zeros((16, 16, 8)))
    with pytest.raises(TooSmall):
        ms_ssim3(np.zeros((8, 8, 8)), np.zeros((8, 8, 8)), scales=3)


# ---------------------------------------------------------------- region metrics

def two_region_fixture():
    rng = np.random.default_rng(6)
    real, synth = rng.uniform(-1, 1, size=(2, 4, 4, 4))
    rm = RegionMask({1: [0, 1, 2, 3, 4], 2: [10, 11, 12]}, 64)
    sm = RegionMask({1: [3, 4, 5, 6], 2: [20, 21]}, 64)
    return real, synth, rm, sm


def test_region_identity():
    ph = gen_phantom(16, 0.5, 2)
    out = region_metrics(ph.volume, ph.volume, ph.masks, ph.masks)
    assert out["imae"] == 0.0 and out["kl"] == 0.0 and out["dice"] == 1.0


def test_region_constant_offset():
    m = RegionMask({1: list(range(10))}, 27)
    out = region_metrics(np.zeros((3, 3, 3)), np.ones((3, 3, 3)), m, m)
    assert out["imae"] == 1.0


def test_region_brute_force_two_regions():
    real, synth, rm, sm = two_region_fixture()
    r, s = real.ravel(), synth.ravel()
    out = region_metrics(real, synth, rm, sm)
    unions = {1: [0, 1, 2, 3, 4, 5, 6], 2: [10, 11, 12, 20, 21]}
    imae = [sum(abs(r[i] - s[i]) for i in u) / len(u) for u in unions.values()]
    dice = [2 * 2 / (5 + 4), 0.0]
    assert out["imae"] == pytest.approx(sum(imae) / 2, abs=1e-14)
    assert out["dice"] == pytest.approx(sum(dice) / 2, abs=1e-14)
    assert out["per_region"][2]["dice"] == 0.0
    assert math.isfinite(out["kl"]) and out["kl"] >= 0


def test_kl_histogram_by_hand():
    # one region of two voxels: real (0, 1), synth (1, 1); edges span [0, 1]
    m = RegionMask({1: [0, 1]}, 8)
    real = np.array([0.0, 1.0, 0, 0, 0, 0, 0, 0]).reshape(2, 2, 2)
    synth = np.array([1.0, 1.0, 0, 0, 0, 0, 0, 0]).reshape(2, 2, 2)
    p = np.ones(64)
    q = np.ones(64)
    p[0] += 1
    p[63] += 1
    q[63] += 2
    p /= p.sum()
    q /= q.sum()
    expected = float(np.sum(p * np.log(p / q)))
    assert region_metrics(real, synth, m, m)["kl"] == pytest.approx(expected, abs=1e-14)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_region_ranges(seed):
    rng = np.random.default_rng(seed)
    real, synth = rng.normal(size=(2, 3, 3, 3))
    a, b = rng.permutation(27)[:6], rng.permutation(27)[:5]
    out = region_metrics(real, synth, RegionMask({1: a[:3], 2: a[3:]}, 27),
                         RegionMask({1: b[:2], 2: b[2:]}, 27))
    assert 0.0 <= out["dice"] <= 1.0 and out["kl"] >= 0.0 and out["imae"] >= 0.0


def test_no_regions():
    empty = RegionMask({}, 8)
    with pytest.raises(NoRegions):
        region_metrics(np.zeros((2, 2, 2)), np.zeros((2, 2, 2)), empty, empty)


# ---------------------------------------------------------------- statistics

def test_bootstrap_constant_and_deterministic():
    assert bootstrap(lambda idx: 3.0, 50, 5, 0) == (3.0, 0.0)
    data = np.random.default_rng(0).normal(size=20)
    f = lambda idx: data[idx].mean()  # noqa: E731
    assert bootstrap(f, 100, 20, 7) == bootstrap(f, 100, 20, 7)


def test_bootstrap_of_mean_matches_analytic():
    data = np.array([0.0, 0.0, 10.0, 10.0])
    mean, std = bootstrap(lambda idx: data[idx].mean(), 10_000, 4, 1)
    assert abs(mean - 5.0) < 0.2
    assert abs(std - 2.5) < 0.15 * 2.5


def test_wilcoxon_exact_examples():
    assert wilcoxon_ranksum([1, 2], [3, 4]) == pytest.approx(1 / 3, abs=1e-15)
    assert wilcoxon_ranksum([1, 2, 3], [1, 2, 3]) == 1.0


def test_wilcoxon_exact_vs_scipy():
    rng = np.random.default_rng(2)
    for _ in range(10):
        x, y = rng.normal(size=5), rng.normal(0.8, 1, size=6)
        ref = mannwhitneyu(x, y, alternative="two-sided", method="exact").pvalue
        assert wilcoxon_ranksum(x, y) == pytest.approx(ref, abs=1e-12)


def test_wilcoxon_normal_vs_scipy():
    rng = np.random.default_rng(3)
    x, y = rng.integers(0, 5, size=15), rng.integers(1, 6, size=12)
    ref = mannwhitneyu(x, y, alternative="two-sided", method="asymptotic",
                       use_continuity=True).pvalue
    assert wilcoxon_ranksum(x, y) == pytest.approx(ref, rel=1e-10)


def test_wilcoxon_exact_near_normal_at_six_six(monkeypatch):
    # every attainable rank-sum of a 6+6 split, no ties
    exact = {}
    for y in itertools.combinations(range(12), 6):
        x = sorted(set(range(12)) - set(y))
        key = sum(x)
        if key not in exact:
            exact[key] = (x, wilcoxon_ranksum(x, list(y)))
    monkeypatch.setattr(metrics, "EXACT_RANKSUM_LIMIT", 0)
    for x, p in exact.values():
        y = sorted(set(range(12)) - set(x))
        assert abs(wilcoxon_ranksum(x, y) - p) < 0.05


def test_wilcoxon_empty():
    with pytest.raises(EmptySet):
        wilcoxon_ranksum([], [1.0])


def test_bonferroni():
    assert bonferroni(0.02, 3) == pytest.approx(0.06)
    assert bonferroni(0.5, 3) == 1.0


def test_spearman():
    assert spearman([1, 2, 3, 4], [10, 20, 25, 100]) == pytest.approx(1.0)
    assert spearman([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)
    assert spearman([1, 1, 1], [1, 2, 3]) == 0.0


def test_evaluate_sets_reports():
    real = [p.volume for p in phantom_set(4, 16, 0, "r")]
    synth = [p.volume for p in phantom_set(4, 16, 0, "s")]
    reps = evaluate_sets(real, synth, n_bootstrap=5, seed=1)
    assert [r.name for r in reps] == ["mmd", "msssim", "imae", "kl", "dice"]
    assert all(r.std >= 0 and r.n_bootstrap == 5 for r in reps)
    again = evaluate_sets(real, synth, n_bootstrap=5, seed=1)
    assert [(r.mean, r.std) for r in reps] == [(r.mean, r.std) for r in again]
    with pytest.raises(ValueError):
        evaluate_sets(real, synth, metrics=["fid"])


def test_max_msssim_scales():
    assert max_msssim_scales((16, 16, 16)) == 3
    assert max_msssim_scales((8, 8, 8)) == 2
    assert max_msssim_scales((4, 4, 4)) == 1
    x = np.random.default_rng(0).uniform(-1, 1, size=(8, 8, 8))
    assert intra_set_msssim([x, x], scales=None) == pytest.approx(1.0, abs=1e-6)
