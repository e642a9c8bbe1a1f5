"""Hot inner loops, each with a numba kernel and a pure-numpy twin.

The public names (``extract_planes``, ``plane_mismatch_counts`` ...) point at
the numba versions unless ``BPINR_DISABLE_NUMBA`` is set. Both variants stay
importable as ``*_numba`` / ``*_numpy`` so tests can hold them to identical
results and ``benchmarks/bench_kernels.py`` can time them side by side.

Transcendental work (sine activations, the logistic loss) is not here: without
SVML numba calls scalar libm and loses to numpy's SIMD ufuncs by ~4x.
"""

import numpy as np

from ._jit import USE_NUMBA, njit

# --------------------------------------------------------------------------
# k-bit plane extraction, LSB first: out[i, j] = (s_j >> k*i) & (2^k - 1)


@njit(cache=True)
def _planes_kernel(samples, k, m, out):
    mask = np.uint32((1 << k) - 1)
    for i in range(m):
        sh = np.uint32(k * i)
        for j in range(samples.size):
            out[i, j] = (samples[j] >> sh) & mask


def extract_planes_numba(samples, k, m):
    flat = np.ascontiguousarray(samples, dtype=np.uint32).ravel()
    out = np.empty((m, flat.size), dtype=np.uint32)
    _planes_kernel(flat, k, m, out)
    return out


def extract_planes_numpy(samples, k, m):
    flat = np.asarray(samples, dtype=np.uint64).ravel()
    shifts = (np.arange(m, dtype=np.uint64) * np.uint64(k))[:, None]
    mask = np.uint64((1 << k) - 1)
    return ((flat[None, :] >> shifts) & mask).astype(np.uint32)


# --------------------------------------------------------------------------
# weighted recomposition: s_j = sum_i planes[i, j] << k*i


@njit(cache=True)
def _combine_kernel(planes, k, out):
    m, size = planes.shape
    for j in range(size):
        acc = np.uint64(0)
        for i in range(m):
            acc |= np.uint64(planes[i, j]) << np.uint64(k * i)
        out[j] = acc


def combine_planes_numba(planes, k):
    p = np.ascontiguousarray(planes, dtype=np.uint32)
    out = np.empty(p.shape[1], dtype=np.uint64)
    _combine_kernel(p, k, out)
    return out


def combine_planes_numpy(planes, k):
    p = np.asarray(planes, dtype=np.uint64)
    shifts = (np.arange(p.shape[0], dtype=np.uint64) * np.uint64(k))[:, None]
    return np.bitwise_or.reduce(p << shifts, axis=0)


# --------------------------------------------------------------------------
# bit mismatch counts per bit position (popcount of a ^ b, split by plane)


@njit(cache=True)
def _mismatch_kernel(a, b, nbits, counts):
    for j in range(a.size):
        x = a[j] ^ b[j]
        if x == 0:
            continue
        for i in range(nbits):
            counts[i] += (x >> np.uint32(i)) & np.uint32(1)


def plane_mismatch_counts_numba(a, b, nbits):
    fa = np.ascontiguousarray(a, dtype=np.uint32).ravel()
    fb = np.ascontiguousarray(b, dtype=np.uint32).ravel()
    counts = np.zeros(nbits, dtype=np.int64)
    _mismatch_kernel(fa, fb, nbits, counts)
    return counts


def plane_mismatch_counts_numpy(a, b, nbits):
    x = np.asarray(a, dtype=np.uint32).ravel() ^ np.asarray(b, dtype=np.uint32).ravel()
    return np.array(
        [np.count_nonzero((x >> np.uint32(i)) & np.uint32(1)) for i in range(nbits)],
        dtype=np.int64,
    )


# --------------------------------------------------------------------------
# 2-bit packing of ternary weights: 0 -> 00, +1 -> 01, -1 -> 10; four per byte,
# first weight in the lowest bits


@njit(cache=True)
def _pack_kernel(codes, out):
    for j in range(codes.size):
        out[j >> 2] |= np.uint8(codes[j] << (2 * (j & 3)))


def pack_ternary_numba(values):
    codes = _ternary_codes(values)
    out = np.zeros((codes.size + 3) // 4, dtype=np.uint8)
    _pack_kernel(codes, out)
    return out


def pack_ternary_numpy(values):
    codes = _ternary_codes(values)
    padded = np.zeros(((codes.size + 3) // 4) * 4, dtype=np.uint8)
    padded[: codes.size] = codes
    quads = padded.reshape(-1, 4)
    return (quads[:, 0] | (quads[:, 1] << 2) | (quads[:, 2] << 4) | (quads[:, 3] << 6)).astype(np.uint8)


def _ternary_codes(values):
    v = np.asarray(values).ravel()
    if not np.all((v == -1) | (v == 0) | (v == 1)):
        raise ValueError("ternary packing needs values in {-1, 0, 1}")
    codes = np.zeros(v.size, dtype=np.uint8)
    codes[v == 1] = 1
    codes[v == -1] = 2
    return codes


def unpack_ternary(packed, count):
    """Inverse of the 2-bit packing; rejects the unused code 0b11."""
    packed = np.asarray(packed, dtype=np.uint8)
    if packed.size * 4 < count:
        raise ValueError(f"need {(count + 3) // 4} packed bytes, got {packed.size}")
    codes = np.stack([(packed >> s) & 3 for s in (0, 2, 4, 6)], axis=1).ravel()[:count]
    if np.any(codes == 3):
        raise ValueError("invalid ternary code 0b11 in payload")
    lookup = np.array([0, 1, -1], dtype=np.int8)
    return lookup[codes]


if USE_NUMBA:
    extract_planes = extract_planes_numba
    combine_planes = combine_planes_numba
    plane_mismatch_counts = plane_mismatch_counts_numba
    pack_ternary = pack_ternary_numba
else:
    extract_planes = extract_planes_numpy
    combine_planes = combine_planes_numpy
    plane_mismatch_counts = plane_mismatch_counts_numpy
    pack_ternary = pack_ternary_numpy

BACKEND = "numba" if USE_NUMBA else "numpy"
