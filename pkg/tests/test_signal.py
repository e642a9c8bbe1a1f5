import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from bpinr.signal import (
    DigitalSignal, Fp32PlaneStack, QuantizedStack, decompose, dequantize, epsilon, fp32_bits,
    fp32_decompose, fp32_recompose, normalize, quantize, recompose,
)


def sig(values, n):
    return DigitalSignal(np.asarray(values, dtype=np.uint32), n)


# ---------------------------------------------------------------------------
# quantize / epsilon


def test_quantize_small_grids():
    assert quantize(0.3, 1) == 0
    assert quantize(0.4, 2) == 1


def test_quantize_midpoint_rounds_up():
    # oracle: distances to every level of the 8-bit grid
    x = 127.5 / 255
    levels = np.arange(256) / 255
    d = np.abs(levels - x)
    tied = np.flatnonzero(np.isclose(d, d.min(), rtol=0, atol=1e-15))
    assert list(tied) == [127, 128]
    assert quantize(x, 8) == 128


def test_quantize_clamps_and_rejects():
    assert quantize(-0.2, 4) == 0
    assert quantize(1.7, 4) == 15
    with pytest.raises(ValueError):
        quantize(float("nan"), 8)
    with pytest.raises(ValueError):
        quantize(0.5, 0)
    with pytest.raises(ValueError):
        quantize(0.5, 33)


@pytest.mark.parametrize("n", [1, 8, 16])
def test_epsilon_is_half_grid_spacing(n):
    # oracle: largest distance from a grid midpoint to its nearest level
    top = 2**n - 1
    if n <= 8:
        levels = np.arange(top + 1) / top
        mids = (levels[:-1] + levels[1:]) / 2
        worst = np.max(np.min(np.abs(mids[:, None] - levels[None, :]), axis=1))
    else:
        worst = 0.5 / top
    assert epsilon(n) == pytest.approx(worst, rel=1e-12)
    assert epsilon(n) == 1 / (2 * top)


def test_epsilon_examples():
    assert epsilon(1) == 0.5
    assert epsilon(8) == pytest.approx(0.0019608, abs=1e-7)
    assert epsilon(16) == 1 / 131070
    with pytest.raises(ValueError):
        epsilon(0)


@given(st.floats(0, 1), st.integers(1, 24))
def test_quantize_error_within_epsilon(x, n):
    lvl = quantize(x, n)
    assert abs(dequantize(lvl, n) - x) <= epsilon(n) * (1 + 1e-12)


@given(st.floats(0, 1), st.integers(1, 12))
def test_quantize_is_nearest_level(x, n):
    top = 2**n - 1
    lvl = quantize(x, n)
    d = abs(lvl / top - x)
    for other in (lvl - 1, lvl + 1):
        if 0 <= other <= top:
            assert d <= abs(other / top - x)


def test_quantize_array_returns_levels():
    out = quantize(np.array([0.0, 0.5, 1.0]), 2)
    assert out.dtype == np.uint64
    assert list(out) == [0, 2, 3]


# ---------------------------------------------------------------------------
# DigitalSignal


def test_signal_validation():
    with pytest.raises(ValueError):
        sig([256], 8)
    with pytest.raises(ValueError):
        sig([], 8)
    with pytest.raises(ValueError):
        sig([1], 0)
    s = sig([[1, 2], [3, 4]], 8)
    assert s.shape == (2, 2) and s.size == 4
    with pytest.raises(ValueError):
        s.samples[0, 0] = 9


def test_normalize_examples():
    assert normalize(sig([255, 0, 85], 8)).tolist() == [1.0, 0.0, 1 / 3]


# ---------------------------------------------------------------------------
# decompose / recompose


@pytest.mark.parametrize("k,planes", [(1, [1, 0, 1, 0, 1, 1, 0, 1]), (4, [5, 11]), (8, [181])])
def test_decompose_181(k, planes):
    st_ = decompose(sig([181], 8), k)
    assert st_.planes[:, 0].tolist() == planes
    assert st_.num_planes == 8 // k
    assert recompose(st_) == sig([181], 8)


def test_decompose_rejects_non_divisor():
    with pytest.raises(ValueError, match="k=3.*n=8"):
        decompose(sig([1], 8), 3)


def test_recompose_names_bad_plane():
    planes = np.array([[5], [16]], dtype=np.uint32)
    with pytest.raises(ValueError, match="plane 1"):
        recompose(QuantizedStack(planes, 4, 8))


def test_recompose_hex_digits():
    planes = np.array([[5], [11]], dtype=np.uint32)
    assert recompose(QuantizedStack(planes, 4, 8)).samples.tolist() == [181]


def _divisors(n):
    return [k for k in range(1, n + 1) if n % k == 0]


@st.composite
def signal_and_k(draw):
    n = draw(st.sampled_from([1, 2, 3, 4, 8, 12, 16, 24, 32]))
    shape = draw(hnp.array_shapes(min_dims=1, max_dims=3, max_side=6))
    vals = draw(hnp.arrays(np.uint64, shape, elements=st.integers(0, 2**n - 1)))
    k = draw(st.sampled_from(_divisors(n)))
    return DigitalSignal(vals.astype(np.uint32), n), k


@settings(max_examples=200)
@given(signal_and_k())
def test_roundtrip_property(pair):
    s, k = pair
    stack = decompose(s, k)
    assert stack.planes.shape == (s.bit_depth // k,) + s.shape
    assert stack.planes.max() < 2**k
    assert recompose(stack) == s


@given(signal_and_k())
def test_plane_definition(pair):
    s, k = pair
    stack = decompose(s, k)
    for i in range(stack.num_planes):
        expect = [(int(v) >> (k * i)) % (1 << k) for v in s.samples.ravel()]
        assert stack.planes[i].ravel().tolist() == expect


def test_roundtrip_random_16bit():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        s = DigitalSignal(rng.integers(0, 2**16, size=(3, 5), dtype=np.uint32), 16)
        k = int(rng.choice([1, 2, 4, 8, 16]))
        assert recompose(decompose(s, k)) == s


def test_k1_planes_binary_and_kn_identity():
    s = DigitalSignal(np.arange(256, dtype=np.uint32).reshape(16, 16), 8)
    assert set(np.unique(decompose(s, 1).planes)) <= {0, 1}
    assert np.array_equal(decompose(s, 8).planes[0], s.samples)


# ---------------------------------------------------------------------------
# binary32 planes


def test_fp32_one():
    planes = fp32_decompose(np.array([1.0], dtype=np.float32)).planes[:, 0]
    pattern = struct.unpack("<I", struct.pack("<f", 1.0))[0]
    assert pattern == 0x3F800000
    assert planes.tolist() == [(pattern >> j) & 1 for j in range(32)]
    assert planes[22:31].tolist() == [0, 1, 1, 1, 1, 1, 1, 1, 0] and planes[31] == 0


def test_fp32_zeros():
    p = fp32_decompose(np.array([0.0, -0.0], dtype=np.float32)).planes
    assert p[:, 0].sum() == 0
    assert np.flatnonzero(p[:, 1]).tolist() == [31]


def test_fp32_nan_payload_roundtrip():
    bits = np.array([0x7FC00001, 0xFFA12345, 0x7F800000, 0x80000000], dtype=np.uint32)
    back = fp32_recompose(fp32_decompose(bits))
    assert back.view(np.uint32).tolist() == bits.tolist()
    assert fp32_recompose(fp32_decompose(np.array([1.0], np.float32)))[0] == np.float32(1.0)


def test_fp32_random_patterns():
    rng = np.random.default_rng(3)
    bits = rng.integers(0, 2**32, size=10_000, dtype=np.uint64).astype(np.uint32)
    stack = fp32_decompose(bits)
    assert isinstance(stack, Fp32PlaneStack) and stack.length == 10_000
    assert np.array_equal(fp32_recompose(stack).view(np.uint32), bits)


def test_fp32_exhaustive_mantissa_subsample():
    # every 16-bit mantissa head under a handful of exponent/sign patterns
    heads = np.arange(2**16, dtype=np.uint32) << np.uint32(7)
    for top in (0x00000000, 0x3F800000, 0x7F800000, 0xFF800000):
        bits = heads | np.uint32(top)
        assert np.array_equal(fp32_recompose(fp32_decompose(bits)).view(np.uint32), bits)


def test_fp32_bits_keeps_float_input():
    x = np.array([0.5, -2.25], dtype=np.float32)
    assert fp32_bits(x).tolist() == [0x3F000000, 0xC0100000]


@given(st.integers(0, 2**32 - 1))
def test_fp32_single_pattern(b):
    bits = np.array([b], dtype=np.uint32)
    assert fp32_recompose(fp32_decompose(bits)).view(np.uint32)[0] == b
