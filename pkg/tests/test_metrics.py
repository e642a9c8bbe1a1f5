import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bpinr import metrics
from bpinr.signal import DigitalSignal


def sig(values, n, channels=False):
    return DigitalSignal(np.asarray(values, dtype=np.uint32), n, channels)


# naive references, written without the package's kernels


def naive_ber(a, b, n):
    diff = 0
    for x, y in zip(a.ravel().tolist(), b.ravel().tolist()):
        for i in range(n):
            diff += ((x >> i) & 1) != ((y >> i) & 1)
    return diff / (n * a.size)


def naive_rmse(a, b):
    total = 0.0
    for x, y in zip(a.ravel().tolist(), b.ravel().tolist()):
        total += (x - y) ** 2
    return math.sqrt(total / a.size)


def naive_psnr(a, b, n):
    mse = naive_rmse(a, b) ** 2
    return math.inf if mse == 0 else 10 * math.log10((2**n - 1) ** 2 / mse)


def test_ber_examples():
    assert metrics.ber(sig([181], 8), sig([181], 8)) == 0
    assert metrics.ber(sig([181], 8), sig([182], 8)) == 0.25


def test_psnr_examples():
    assert metrics.psnr(sig([7, 9], 8), sig([7, 9], 8)) == math.inf
    assert metrics.psnr(sig([0], 8), sig([255], 8)) == 0.0
    assert metrics.psnr(sig([0, 0], 8), sig([255, 0], 8)) == pytest.approx(3.0103, abs=1e-4)


def test_rmse_examples():
    a = sig(np.full((4, 4), 10), 8)
    assert metrics.rmse(a, a) == 0
    assert metrics.rmse(a, sig(np.full((4, 4), 11), 8)) == 1.0


def test_per_plane_examples():
    a = sig(np.arange(16).reshape(4, 4), 8)
    assert np.all(metrics.per_plane_ber(a, a) == 0)
    flipped = sig(a.samples ^ 0x80, 8)
    v = metrics.per_plane_ber(a, flipped)
    assert v.tolist() == [0] * 7 + [1.0]
    assert v.mean() == metrics.ber(a, flipped)


def test_mismatch_rejected():
    with pytest.raises(ValueError):
        metrics.ber(sig([1], 8), sig([1], 16))
    with pytest.raises(ValueError):
        metrics.psnr(sig([1, 2], 8), sig([1], 8))
    with pytest.raises(ValueError):
        metrics.ssim(sig(np.zeros((10, 20)), 8), sig(np.zeros((10, 20)), 8))


@settings(max_examples=60, deadline=None)
@given(st.sampled_from([1, 3, 8, 12, 16, 32]), st.integers(1, 40), st.integers(0, 2**31))
def test_oracles_on_random_pairs(n, size, seed):
    rng = np.random.default_rng(seed)
    a = rng.integers(0, 2**n, size, dtype=np.uint64).astype(np.uint32)
    b = a.copy()
    flip = rng.random(size) < 0.5
    b[flip] = rng.integers(0, 2**n, flip.sum(), dtype=np.uint64).astype(np.uint32)
    A, B = sig(a, n), sig(b, n)
    assert abs(metrics.ber(A, B) - naive_ber(a, b, n)) <= 1e-12
    assert abs(metrics.rmse(A, B) - naive_rmse(a, b)) <= 1e-12 * max(1, naive_rmse(a, b))
    p, q = metrics.psnr(A, B), naive_psnr(a, b, n)
    assert (p == q == math.inf) or abs(p - q) <= 1e-12 * max(1, abs(q))
    assert metrics.ber(A, B) == metrics.ber(B, A)
    assert (metrics.ber(A, B) == 0) == (A == B) == (metrics.psnr(A, B) == math.inf) == (metrics.rmse(A, B) == 0)
    assert np.mean(metrics.per_plane_ber(A, B)) == pytest.approx(metrics.ber(A, B), abs=1e-15)


def test_psnr_decreases_with_mse():
    a = sig(np.zeros(10), 8)
    vals = [metrics.psnr(a, sig(np.r_[np.full(k, 3), np.zeros(10 - k)], 8)) for k in range(1, 11)]
    assert all(x > y for x, y in zip(vals, vals[1:]))


def test_ssim_identity_exact():
    rng = np.random.default_rng(0)
    a = sig(rng.integers(0, 256, (16, 20)), 8)
    assert metrics.ssim(a, a) == 1.0
    rgb = sig(rng.integers(0, 2**16, (12, 13, 3)), 16, channels=True)
    assert metrics.ssim(rgb, rgb) == 1.0


def test_ssim_matches_skimage():
    skm = pytest.importorskip("skimage.metrics")
    rng = np.random.default_rng(1)
    x = rng.integers(0, 256, (32, 40)).astype(np.float64)
    y = np.clip(x + rng.normal(scale=20, size=x.shape), 0, 255).round()
    ours = metrics.ssim(sig(x, 8), sig(y, 8))
    ref = skm.structural_similarity(x, y, data_range=255, gaussian_weights=True, sigma=1.5,
                                    use_sample_covariance=False)
    assert ours == pytest.approx(ref, abs=1e-6)


def test_evaluate_report():
    a = sig(np.arange(144).reshape(12, 12), 8)
    rep = metrics.evaluate(a, a)
    assert rep.psnr == math.inf and rep.ber == 0 and rep.rmse == 0 and rep.ssim == 1.0
    small = metrics.evaluate(sig([1, 2], 8), sig([1, 3], 8))
    assert small.ssim is None and small.to_dict()["per_plane_ber"][0] == 0.5
