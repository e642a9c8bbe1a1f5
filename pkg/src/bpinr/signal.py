"""Quantization, bit-plane decomposition and exact recomposition."""

from dataclasses import dataclass

import numpy as np

from . import kernels

MAX_BITS = 32


def _check_bits(bits):
    if int(bits) != bits or bits < 1 or bits > MAX_BITS:
        raise ValueError(f"bit depth must be an integer in [1, {MAX_BITS}], got {bits}")
    return int(bits)


def max_level(bits):
    return (1 << _check_bits(bits)) - 1


@dataclass(frozen=True)
class DigitalSignal:
    """Unsigned integer samples of bit depth ``bit_depth`` on a regular grid.

    ``samples`` carries the grid shape directly (e.g. ``(H, W)`` or
    ``(H, W, C)``). ``has_channels`` marks the last axis as a channel axis
    rather than a coordinate axis.
    """

    samples: np.ndarray
    bit_depth: int
    has_channels: bool = False

    def __post_init__(self):
        n = _check_bits(self.bit_depth)
        raw = np.asarray(self.samples)
        if raw.size == 0:
            raise ValueError("signal has no samples")
        if not np.issubdtype(raw.dtype, np.integer):
            if not np.all(np.isfinite(raw)) or np.any(raw != np.round(raw)):
                raise ValueError("samples must be integers")
        if np.any(raw < 0) or np.any(raw > (1 << n) - 1):
            raise ValueError(f"samples must lie in [0, {(1 << n) - 1}] for {n}-bit depth")
        if self.has_channels and raw.ndim < 2:
            raise ValueError("a channel axis needs at least one spatial axis")
        arr = raw.astype(np.uint32)
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)
        object.__setattr__(self, "bit_depth", n)

    @property
    def shape(self):
        return self.samples.shape

    @property
    def spatial_shape(self):
        return self.shape[:-1] if self.has_channels else self.shape

    @property
    def channels(self):
        return self.shape[-1] if self.has_channels else 1

    @property
    def size(self):
        return self.samples.size

    def __eq__(self, other):
        if not isinstance(other, DigitalSignal):
            return NotImplemented
        return (
            self.bit_depth == other.bit_depth
            and self.has_channels == other.has_channels
            and self.shape == other.shape
            and bool(np.array_equal(self.samples, other.samples))
        )

    __hash__ = None


@dataclass(frozen=True)
class QuantizedStack:
    """LSB-first stack of k-bit planes; ``planes[i]`` has the signal's shape."""

    planes: np.ndarray
    plane_bits: int
    source_bit_depth: int
    has_channels: bool = False

    @property
    def num_planes(self):
        return self.planes.shape[0]

    @property
    def shape(self):
        return self.planes.shape[1:]


@dataclass(frozen=True)
class Fp32PlaneStack:
    """32 binary planes of IEEE-754 binary32 patterns.

    Plane 0 is the mantissa LSB, 22 the mantissa MSB, 23..30 the exponent and
    31 the sign.
    """

    planes: np.ndarray

    @property
    def length(self):
        return self.planes.shape[1]


def epsilon(bits):
    """Largest tolerated absolute error on the unit interval at ``bits`` bits."""
    return 1.0 / (2.0 * max_level(bits))


def quantize(value, bits):
    """Nearest level of the uniform ``bits``-bit grid on [0, 1].

    Values are clamped to [0, 1] first. Exact midpoints round away from zero,
    i.e. upwards on the non-negative interval. Returns integer levels.
    """
    top = max_level(bits)
    x = np.asarray(value, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("cannot quantize non-finite values")
    x = np.clip(x, 0.0, 1.0)
    lo = np.minimum(np.floor(x * top), top - 1 if top > 1 else 0)
    hi = np.minimum(lo + 1, top)
    # compare actual distances so the result is the argmin over the grid even
    # when x * top rounds across an integer
    d_lo = x - lo / top
    d_hi = hi / top - x
    level = np.where(d_hi <= d_lo, hi, lo).astype(np.uint64)
    if level.ndim == 0:
        return int(level)
    return level


def dequantize(levels, bits):
    return np.asarray(levels, dtype=np.float64) / max_level(bits)


def normalize(signal):
    """Samples mapped onto [0, 1] by ``s / (2^n - 1)``."""
    return signal.samples.astype(np.float64) / max_level(signal.bit_depth)


def decompose(signal, plane_bits):
    """Split ``signal`` into ``n / k`` planes of ``k`` bits, LSB first."""
    n = signal.bit_depth
    k = int(plane_bits)
    if k < 1 or n % k:
        raise ValueError(f"plane width k={plane_bits} does not divide bit depth n={n}")
    m = n // k
    planes = kernels.extract_planes(signal.samples, k, m).reshape((m,) + signal.shape)
    planes.setflags(write=False)
    return QuantizedStack(planes, k, n, signal.has_channels)


def recompose(stack):
    """Exact inverse of :func:`decompose`."""
    k = stack.plane_bits
    planes = np.asarray(stack.planes)
    if planes.ndim < 2:
        raise ValueError("stack needs a plane axis and at least one sample axis")
    if k * planes.shape[0] != stack.source_bit_depth:
        raise ValueError(
            f"{planes.shape[0]} planes of {k} bits do not make {stack.source_bit_depth} bits"
        )
    limit = 1 << k
    for i in range(planes.shape[0]):
        p = planes[i]
        if np.any(p < 0) or np.any(p >= limit):
            raise ValueError(f"plane {i} holds values outside [0, {limit - 1}]")
    shape = planes.shape[1:]
    flat = planes.reshape(planes.shape[0], -1).astype(np.uint32)
    samples = kernels.combine_planes(flat, k).reshape(shape)
    return DigitalSignal(samples.astype(np.uint32), stack.source_bit_depth, stack.has_channels)


def fp32_bits(samples):
    """uint32 bit patterns of ``samples``.

    uint32 input is taken as patterns already, which keeps NaN payloads intact.
    """
    arr = np.asarray(samples)
    if arr.dtype == np.uint32:
        return arr.ravel().copy()
    if arr.dtype != np.float32:
        arr = arr.astype(np.float32)
    return np.ascontiguousarray(arr).ravel().view(np.uint32).copy()


def fp32_decompose(samples):
    bits = fp32_bits(samples)
    planes = kernels.extract_planes(bits, 1, 32).astype(np.uint8)
    return Fp32PlaneStack(planes)


def fp32_recompose(stack):
    planes = np.asarray(stack.planes)
    if planes.shape[0] != 32:
        raise ValueError(f"binary32 needs 32 planes, got {planes.shape[0]}")
    if np.any(planes > 1):
        raise ValueError("binary32 planes must be 0/1")
    bits = kernels.combine_planes(planes.astype(np.uint32), 1).astype(np.uint32)
    return bits.view(np.float32)
