"""Bit-exact coordinate-network representations of digital signals via
bit-plane decomposition."""

from .kernels import BACKEND
from .signal import (
    DigitalSignal, Fp32PlaneStack, QuantizedStack, decompose, dequantize, epsilon,
    fp32_decompose, fp32_recompose, normalize, quantize, recompose,
)
from .network import Mlp, NetSpec, init_mlp, make_activation
from .training import TrainConfig, TrainReport, fit, build_model, verify_lossless
from .metrics import evaluate
from .bounds import BoundQuery, upper_bound

__version__ = "0.1.0"
