"""Experiments built on the fitting loop: precision sweeps, bit-bias profiles,
bit-frequency test images, bit-depth expansion, float32 audio and ternary
networks."""

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import spearmanr

from . import metrics
from .bounds import relative_factor
from .io import model_nbytes, ternary_payload_bytes
from .network import count_for, width_for_budget
from .signal import DigitalSignal, epsilon, fp32_bits
from .training import PlaneProblem, build_model, fit, model_outputs

# ---------------------------------------------------------------------------
# hypothesis sweep


@dataclass
class SweepRecord:
    k: int
    epsilon: float
    relative_bound: int
    seeds: list
    iterations: list  # None where the run hit the cap
    median: float  # math.inf when at least half the runs capped
    param_count: int

    @property
    def all_capped(self):
        return all(i is None for i in self.iterations)


@dataclass
class SweepResult:
    records: list
    ordered: bool
    parallel: bool
    loss: str

    def medians(self):
        return {r.k: r.median for r in self.records}

    def rows(self):
        for r in self.records:
            for seed, it in zip(r.seeds, r.iterations):
                yield [r.k, seed, -1 if it is None else it, r.median, r.epsilon, r.relative_bound, r.param_count]

    columns = ["k", "seed", "iterations", "median", "epsilon", "relative_bound", "param_count"]

    def summary(self):
        return {
            "loss": self.loss,
            "parallel": self.parallel,
            "ordered": self.ordered,
            "records": [
                {"k": r.k, "epsilon": r.epsilon, "relative_bound": str(r.relative_bound),
                 "seeds": r.seeds, "iterations": r.iterations, "median": r.median,
                 "param_count": r.param_count}
                for r in self.records
            ],
        }


def _median(iterations, cap_marker=math.inf):
    vals = sorted(cap_marker if i is None else i for i in iterations)
    n = len(vals)
    mid = n // 2
    return float(vals[mid]) if n % 2 else (vals[mid - 1] + vals[mid]) / 2.0


def hypothesis_sweep(signal, ks, net_spec, config, seeds, parallel=True):
    """Iterations-to-lossless per plane width ``k``, with medians over seeds.

    ``parallel=True`` fits ``n/k`` identically shaped networks, one per
    plane, on the spatial coordinates only. ``parallel=False`` fits one
    bit-axis network. The verdict is whether medians are nondecreasing in k;
    a k whose runs all hit the cap is left out of it.
    """
    if len(seeds) < 1:
        raise ValueError("need at least one seed")
    for k in ks:
        if signal.bit_depth % k:
            raise ValueError(f"k={k} does not divide the bit depth {signal.bit_depth}")
    records = []
    for k in ks:
        iters = []
        pcount = 0
        for seed in seeds:
            cfg = replace(config, seed=seed)
            model = build_model(signal, net_spec, k, parallel=parallel, config=cfg, seed=seed)
            nets = model if parallel else [model]
            pcount = sum(n.param_count() for n in nets)
            _, report = fit(signal, k, model, cfg)
            iters.append(report.iteration_at_lossless)
        d = len(signal.spatial_shape) + (0 if parallel else 1)
        records.append(SweepRecord(k, epsilon(k), relative_factor(d, k), list(seeds), iters,
                                   _median(iters), pcount))
    usable = [r.median for r in sorted(records, key=lambda r: r.k) if not r.all_capped]
    ordered = all(a <= b for a, b in zip(usable, usable[1:]))
    return SweepResult(records, ordered, parallel, config.loss)


def matched_bit_axis_spec(signal, net_spec, plane_bits=1):
    """A bit-axis network spec whose size matches ``n/k`` parallel nets of
    ``net_spec`` (same depth, width chosen to hit the parameter total)."""
    m = signal.bit_depth // plane_bits
    ds = len(signal.spatial_shape)
    pe = net_spec.pos_enc if net_spec.pos_enc is not None else net_spec.activation.num_frequencies
    total = m * count_for(ds, net_spec.width, net_spec.depth, signal.channels, pe)
    width = width_for_budget(total, ds + 1, net_spec.depth, signal.channels, pe)
    return net_spec.replace(width=width)


# ---------------------------------------------------------------------------
# bit bias


@dataclass
class BiasProfile:
    iterations: np.ndarray
    matrix: np.ndarray  # (checkpoints, planes), LSB first
    correlations: list  # Spearman rho per checkpoint, None when undefined

    def nearest(self, iteration):
        """Index of the checkpoint closest to ``iteration``."""
        if len(self.iterations) == 0:
            raise ValueError("profile has no checkpoints")
        return int(np.argmin(np.abs(self.iterations - iteration)))

    def rows(self):
        for it, row, rho in zip(self.iterations, self.matrix, self.correlations):
            yield [int(it), rho] + [float(v) for v in row]

    def columns(self):
        return ["iteration", "spearman"] + [f"ber_plane_{i}" for i in range(self.matrix.shape[1])]


def plane_rank_correlation(row):
    """Spearman rho between a plane's distance from the MSB and its BER.

    ``row`` is LSB first. The rank used is ``n - 1 - i`` (MSB 0, LSB n-1), so
    rho > 0 means the less significant planes carry more errors. None when
    the BERs are all equal (e.g. all zero) and rho is undefined.
    """
    row = np.asarray(row, dtype=np.float64)
    idx = np.flatnonzero(~np.isnan(row))
    if idx.size < 2 or np.all(row[idx] == row[idx[0]]):
        return None
    rho = spearmanr(row.size - 1 - idx, row[idx]).statistic
    return None if not np.isfinite(rho) else float(rho)


def bias_profile(report):
    if not report.records:
        raise ValueError("report has no checkpoints")
    matrix = report.plane_matrix()
    if matrix.ndim != 2 or matrix.shape[1] == 0:
        raise ValueError("report is missing per-plane traces")
    return BiasProfile(report.iterations, matrix, [plane_rank_correlation(r) for r in matrix])


def convergence_budget(report):
    if report.iteration_at_lossless is not None:
        return report.iteration_at_lossless
    return report.config.get("max_iterations", int(report.iterations[-1]))


# ---------------------------------------------------------------------------
# bit-frequency image

NAMED_PATTERNS = {
    "alternating": 0xAAAA,  # 43690
    "alternating-shifted": 0x5555,  # 21845
    "dc-high": 0xFFFF,
    "dc-low": 0x0000,
}


def bit_pattern(freq, bits=16):
    """Value whose binary expansion has ``freq`` full cycles along the bit
    axis (bit i is set when floor(i * 2 freq / bits) is odd); names from
    :data:`NAMED_PATTERNS` are accepted too."""
    if isinstance(freq, str):
        if freq not in NAMED_PATTERNS:
            raise ValueError(f"unknown pattern {freq!r}; choose from {sorted(NAMED_PATTERNS)}")
        return NAMED_PATTERNS[freq]
    c = int(freq)
    if c != freq or c < 0 or 2 * c > bits:
        raise ValueError(f"frequency {freq} does not fit in {bits} bits (0..{bits // 2} cycles)")
    return sum(1 << i for i in range(bits) if (i * 2 * c // bits) % 2)


def make_bitfreq_image(width, height, frequencies):
    """16-bit image of vertical constant bands, one per requested pattern."""
    if width < 1 or height < 1:
        raise ValueError("image extents must be positive")
    if not frequencies or len(frequencies) > width:
        raise ValueError("need between 1 and width bands")
    values = [bit_pattern(f) for f in frequencies]
    img = np.zeros((height, width), dtype=np.uint32)
    for v, cols in zip(values, np.array_split(np.arange(width), len(values))):
        img[:, cols] = v
    return DigitalSignal(img, 16)


# ---------------------------------------------------------------------------
# bit-depth expansion


def zero_pad(signal, keep):
    drop = signal.bit_depth - keep
    return DigitalSignal((signal.samples >> drop) << drop, signal.bit_depth, signal.has_channels)


def bit_replicate(signal, keep):
    """Repeat the ``keep`` most significant bits cyclically into the rest."""
    n = signal.bit_depth
    v = signal.samples.astype(np.uint64) >> np.uint64(n - keep)
    out = np.zeros_like(v)
    filled = 0
    while filled < n:
        out = (out << np.uint64(keep)) | v
        filled += keep
    out >>= np.uint64(filled - n)
    return DigitalSignal(out.astype(np.uint32), n, signal.has_channels)


@dataclass
class ExpansionResult:
    predicted: DigitalSignal
    report: object
    metrics: metrics.MetricReport
    baselines: dict
    msb_lossless: bool
    msb_exact: bool
    net: object = field(repr=False, default=None)

    def summary(self):
        return {
            "ours": self.metrics.to_dict(),
            **{k: v.to_dict() for k, v in self.baselines.items()},
            "msb_lossless": self.msb_lossless,
            "msb_exact": self.msb_exact,
            "train": self.report.summary(),
        }


def expand_bit_depth(signal, train_msbs, net_spec, config):
    """Fit the top ``train_msbs`` bit planes with a bit-axis network mapped
    against all n planes, then read the low planes off unseen bit coordinates."""
    n = signal.bit_depth
    if n != 16:
        raise ValueError(f"expansion expects a 16-bit signal, got {n} bits")
    if not 1 <= train_msbs < n:
        raise ValueError(f"train_msbs must be in [1, {n - 1}]")
    planes = list(range(n - train_msbs, n))
    cfg = replace(config, bit_axis=True)
    train = PlaneProblem(signal, 1, cfg.loss, bit_axis=True, planes=planes, n_map=n,
                         channel_coordinate=cfg.channel_coordinate)
    net = build_model(train, net_spec)
    net, report = fit(signal, 1, net, cfg, planes=planes, n_map=n)

    full = PlaneProblem(signal, 1, cfg.loss, bit_axis=True, planes=range(n), n_map=n,
                        channel_coordinate=cfg.channel_coordinate)
    predicted = full.reconstruct(full.decode(model_outputs(net, full)))
    keep = np.uint32(((1 << train_msbs) - 1) << (n - train_msbs))
    msb_exact = bool(np.array_equal(predicted.samples & keep, signal.samples & keep))
    baselines = {
        "zero_padding": metrics.evaluate(zero_pad(signal, train_msbs), signal),
        "bit_replication": metrics.evaluate(bit_replicate(signal, train_msbs), signal),
    }
    return ExpansionResult(predicted, report, metrics.evaluate(predicted, signal), baselines,
                           report.lossless, msb_exact, net)


# ---------------------------------------------------------------------------
# float32 audio


@dataclass
class AudioResult:
    net: object
    report: object
    exact: bool
    reconstructed: np.ndarray


def fit_audio_fp32(samples, net_spec, config):
    """Fit the 32 IEEE-754 bit planes of a clip over (time, bit)."""
    bits = fp32_bits(samples)
    if bits.size == 0:
        raise ValueError("empty clip")
    signal = DigitalSignal(bits, 32)
    cfg = replace(config, bit_axis=True)
    net = build_model(signal, net_spec, 1, config=cfg)
    net, report = fit(signal, 1, net, cfg)
    problem = PlaneProblem(signal, 1, cfg.loss, bit_axis=True)
    recon = problem.reconstruct(problem.decode(model_outputs(net, problem)))
    out = recon.samples.astype(np.uint32)
    return AudioResult(net, report, bool(np.array_equal(out, bits)), out.view(np.float32))


# ---------------------------------------------------------------------------
# ternary networks


@dataclass
class TernaryResult:
    net: object
    report: object
    weight_count: int
    packed_bytes: int  # 2-bit packing plus one binary32 beta per layer
    entropy_bytes: int  # log2(3) bits per weight estimate, same betas
    file_bytes: int
    dense_file_bytes: int  # binary32 network of the same shape, biases included

    def summary(self):
        return {
            "weights": self.weight_count,
            "packed_bytes": self.packed_bytes,
            "entropy_bytes": self.entropy_bytes,
            "file_bytes": self.file_bytes,
            "dense_file_bytes": self.dense_file_bytes,
            "train": self.report.summary(),
        }


def fit_ternary(plane, net_spec, config):
    """Train a bias-free ternary network on a single binary plane."""
    if plane.bit_depth != 1:
        raise ValueError("ternary fitting takes a 1-bit plane")
    if not net_spec.ternary:
        net_spec = net_spec.replace(ternary=True)
    net = build_model(plane, net_spec, 1, config=config)
    net, report = fit(plane, 1, net, config)
    shapes = [l.shape for l in net.layers]
    count = sum(a * b for a, b in shapes)
    dense = build_model(plane, net_spec.replace(ternary=False, precision="binary32"), 1, config=config)
    meta = {"loss": config.loss}
    return TernaryResult(
        net, report, count,
        ternary_payload_bytes(shapes),
        math.ceil(count * math.log2(3) / 8) + 4 * len(shapes),
        model_nbytes(net, meta),
        model_nbytes(dense, meta),
    )
