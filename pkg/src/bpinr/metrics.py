"""Bit-level and integer-scale fidelity metrics.

All comparisons work on the integer samples of two :class:`DigitalSignal`
objects with equal shape and bit depth. PSNR of identical inputs is
``math.inf``.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from . import kernels
from .signal import max_level

SSIM_WIN = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass
class MetricReport:
    psnr: float
    rmse: float
    ber: float
    per_plane_ber: np.ndarray = field(repr=False)
    ssim: float = None

    def to_dict(self):
        return {
            "psnr": self.psnr,
            "rmse": self.rmse,
            "ssim": self.ssim,
            "ber": self.ber,
            "per_plane_ber": [float(v) for v in self.per_plane_ber],
        }


def _check_pair(a, b):
    if a.bit_depth != b.bit_depth:
        raise ValueError(f"bit depths differ: {a.bit_depth} vs {b.bit_depth}")
    if a.shape != b.shape:
        raise ValueError(f"shapes differ: {a.shape} vs {b.shape}")


def per_plane_ber(a, b):
    """Fraction of flipped bits in each bit plane, LSB first."""
    _check_pair(a, b)
    counts = kernels.plane_mismatch_counts(a.samples, b.samples, a.bit_depth)
    return counts / float(a.size)


def ber(a, b):
    _check_pair(a, b)
    counts = kernels.plane_mismatch_counts(a.samples, b.samples, a.bit_depth)
    return float(counts.sum()) / (a.bit_depth * a.size)


def _mse(a, b):
    d = a.samples.astype(np.float64) - b.samples.astype(np.float64)
    return float(np.mean(d * d))


def rmse(a, b):
    _check_pair(a, b)
    return math.sqrt(_mse(a, b))


def psnr(a, b):
    _check_pair(a, b)
    mse = _mse(a, b)
    if mse == 0:
        return math.inf
    peak = float(max_level(a.bit_depth))
    return 10.0 * math.log10(peak * peak / mse)


def _ssim_channel(x, y, data_range):
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    radius = SSIM_WIN // 2
    blur = lambda v: gaussian_filter(v, SSIM_SIGMA, truncate=radius / SSIM_SIGMA, mode="reflect")
    mx, my = blur(x), blur(y)
    sxx = blur(x * x) - mx * mx
    syy = blur(y * y) - my * my
    sxy = blur(x * y) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    smap = num / den
    # keep only windows that lie fully inside the image
    crop = tuple(slice(radius, s - radius) for s in smap.shape)
    return float(smap[crop].mean())


def ssim(a, b):
    """Gaussian-window SSIM, computed per channel and averaged."""
    _check_pair(a, b)
    spatial = a.spatial_shape
    if min(spatial) < SSIM_WIN:
        raise ValueError(f"SSIM needs every spatial extent >= {SSIM_WIN}, got {spatial}")
    xa = a.samples.astype(np.float64)
    xb = b.samples.astype(np.float64)
    data_range = float(max_level(a.bit_depth))
    if not a.has_channels:
        return _ssim_channel(xa, xb, data_range)
    vals = [_ssim_channel(xa[..., c], xb[..., c], data_range) for c in range(a.channels)]
    return float(np.mean(vals))


def evaluate(a, b, with_ssim=True):
    planes = per_plane_ber(a, b)
    s = None
    if with_ssim and min(a.spatial_shape) >= SSIM_WIN:
        s = ssim(a, b)
    return MetricReport(psnr(a, b), rmse(a, b), float(planes.mean()), planes, s)
