"""Fitting a signal's bit planes with coordinate networks.

Coordinates: every spatial axis is mapped linearly onto [-1, 1]. With a bit
axis, plane ``i`` gets the extra coordinate ``-1 + 2 i / (n_map - 1)``, and
the planes are stacked plane-major (all points of plane 0, then plane 1 ...).

Decoding: BCE outputs are logits and a bit is 1 when ``sigmoid(z) >= 0.5``.
MSE/MAE outputs are read as normalized k-bit levels and snapped with
:func:`bpinr.signal.quantize`.
"""

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import metrics
from .network import Mlp
from .signal import DigitalSignal, QuantizedStack, decompose, epsilon, max_level, quantize, recompose

LOSSES = ("bce", "mse", "mae")


# ---------------------------------------------------------------------------
# grids


def axis_coords(size):
    if size < 1:
        raise ValueError("grid extents must be >= 1")
    return np.zeros(1) if size == 1 else np.linspace(-1.0, 1.0, size)


def spatial_grid(shape):
    """Row-major grid of ``shape`` with each axis on [-1, 1]; ``(N, len(shape))``."""
    axes = [axis_coords(s) for s in shape]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def bit_coordinate(i, n_map):
    return 0.0 if n_map == 1 else -1.0 + 2.0 * i / (n_map - 1)


def make_grid(shape, bit_planes, n_map=None, plane_indices=None):
    """Spatial grid repeated once per plane with the bit coordinate appended."""
    n_map = bit_planes if n_map is None else n_map
    if bit_planes < 1:
        raise ValueError("need at least one bit plane")
    if n_map < bit_planes:
        raise ValueError(f"n_map={n_map} is smaller than the plane count {bit_planes}")
    idx = list(range(bit_planes)) if plane_indices is None else list(plane_indices)
    if len(idx) != bit_planes:
        raise ValueError("plane_indices must list one index per plane")
    if any(i < 0 or i >= n_map for i in idx):
        raise ValueError(f"plane indices must lie in [0, {n_map - 1}]")
    pts = spatial_grid(shape)
    blocks = [np.hstack([pts, np.full((len(pts), 1), bit_coordinate(i, n_map))]) for i in idx]
    return np.vstack(blocks)


# ---------------------------------------------------------------------------
# losses and optimizer


def loss_eval(kind, predictions, targets):
    """Mean-reduced loss and its gradient with respect to ``predictions``."""
    z = np.asarray(predictions)
    t = np.asarray(targets, dtype=z.dtype)
    if z.shape != t.shape:
        raise ValueError(f"prediction shape {z.shape} != target shape {t.shape}")
    count = z.size
    if kind == "bce":
        if np.any((t != 0) & (t != 1)):
            raise ValueError("BCE needs binary targets")
        # softplus(z) - t*z == -[t log s(z) + (1-t) log(1-s(z))]
        loss = float(np.mean(np.logaddexp(0.0, z.astype(np.float64)) - t * z.astype(np.float64)))
        grad = (expit(z) - t) / count
    elif kind == "mse":
        d = z - t
        loss = float(np.mean(np.square(d, dtype=np.float64)))
        grad = d * (2.0 / count)
    elif kind == "mae":
        d = z - t
        loss = float(np.mean(np.abs(d), dtype=np.float64))
        grad = np.sign(d) / count
    else:
        raise ValueError(f"unknown loss {kind!r}; choose from {LOSSES}")
    return loss, grad.astype(z.dtype, copy=False)


class AdamState:
    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps


def adam_step(state, params, grads, lr, names=None):
    """Bias-corrected Adam, updating ``params`` in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("parameter, gradient and state lists differ in length")
    for i, g in enumerate(grads):
        if g.shape != params[i].shape:
            raise ValueError(f"gradient {i} has shape {g.shape}, parameter has {params[i].shape}")
        if not np.all(np.isfinite(g)):
            label = names[i] if names else f"block {i}"
            raise FloatingPointError(f"non-finite gradient in {label}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= (lr / c1) * m / (np.sqrt(v / c2) + state.eps)
    return params, state


# ---------------------------------------------------------------------------
# config and report


@dataclass
class TrainConfig:
    loss: str = "bce"
    learning_rate: float = 1e-4
    max_iterations: int = 20000
    check_interval: int = 50
    batch_size: int = None  # None means full batch
    seed: int = 0
    lr_decay: tuple = None  # (factor, every_n_steps)
    bit_axis: bool = None  # None: use one when more than one plane is fitted
    channel_coordinate: bool = False

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}; choose from {LOSSES}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.check_interval < 1:
            raise ValueError("check_interval must be >= 1")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.lr_decay is not None:
            factor, every = self.lr_decay
            if not factor > 0 or every < 1:
                raise ValueError("lr_decay needs factor > 0 and every >= 1")
            self.lr_decay = (float(factor), int(every))

    def lr_at(self, step):
        if self.lr_decay is None:
            return self.learning_rate
        factor, every = self.lr_decay
        return self.learning_rate * factor ** (step // every)

    def to_dict(self):
        return {
            "loss": self.loss,
            "learning_rate": self.learning_rate,
            "max_iterations": self.max_iterations,
            "check_interval": self.check_interval,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "lr_decay": list(self.lr_decay) if self.lr_decay else None,
            "bit_axis": self.bit_axis,
            "channel_coordinate": self.channel_coordinate,
        }


@dataclass
class Checkpoint:
    iteration: int
    loss: float
    ber: float
    psnr: float
    per_plane_ber: np.ndarray


@dataclass
class TrainReport:
    """Checkpoint trace of one fit. ``per_plane_ber`` is per bit (LSB first),
    with NaN for planes the fit did not cover."""

    bit_depth: int
    records: list = field(default_factory=list)
    iteration_at_lossless: int = None
    wall_time: float = 0.0
    config: dict = field(default_factory=dict)

    @property
    def lossless(self):
        return self.iteration_at_lossless is not None

    @property
    def iterations(self):
        return np.array([r.iteration for r in self.records], dtype=np.int64)

    def plane_matrix(self):
        if not self.records:
            return np.zeros((0, self.bit_depth))
        return np.vstack([r.per_plane_ber for r in self.records])

    def columns(self):
        return ["iteration", "loss", "ber", "psnr"] + [f"ber_plane_{i}" for i in range(self.bit_depth)]

    def rows(self):
        for r in self.records:
            yield [r.iteration, r.loss, r.ber, r.psnr] + [float(v) for v in r.per_plane_ber]

    def summary(self):
        last = self.records[-1] if self.records else None
        return {
            "bit_depth": self.bit_depth,
            "iteration_at_lossless": self.iteration_at_lossless,
            "lossless": self.lossless,
            "checkpoints": len(self.records),
            "final_iteration": last.iteration if last else 0,
            "final_loss": last.loss if last else None,
            "final_ber": last.ber if last else None,
            "final_psnr": last.psnr if last else None,
            "wall_time": self.wall_time,
            "config": self.config,
        }


# ---------------------------------------------------------------------------
# fitting problem


class PlaneProblem:
    """Targets, inputs, decoding and reassembly for fitting ``signal``'s
    k-bit planes (optionally a subset of them)."""

    def __init__(self, signal, plane_bits, loss="bce", bit_axis=None, planes=None, n_map=None,
                 channel_coordinate=False):
        if loss not in LOSSES:
            raise ValueError(f"unknown loss {loss!r}; choose from {LOSSES}")
        self.signal = signal
        self.k = int(plane_bits)
        self.loss = loss
        stack = decompose(signal, self.k)
        self.m = stack.num_planes
        if loss == "bce" and self.k != 1:
            raise ValueError(f"BCE needs binary targets, i.e. k=1 (got k={self.k})")
        self.plane_idx = list(range(self.m)) if planes is None else sorted(set(int(i) for i in planes))
        if not self.plane_idx or self.plane_idx[0] < 0 or self.plane_idx[-1] >= self.m:
            raise ValueError(f"plane indices must lie in [0, {self.m - 1}]")
        self.n_map = self.m if n_map is None else int(n_map)
        if self.n_map < self.m:
            raise ValueError(f"n_map={self.n_map} is smaller than the plane count {self.m}")
        self.subset = len(self.plane_idx) < self.m
        if bit_axis is None:
            bit_axis = len(self.plane_idx) > 1 or self.subset
        self.bit_axis = bool(bit_axis)

        if channel_coordinate and signal.has_channels:
            grid_shape, self.c_out = signal.shape, 1
        else:
            grid_shape, self.c_out = signal.spatial_shape, signal.channels
        self.points = spatial_grid(grid_shape)
        self.n_points = len(self.points)
        all_levels = stack.planes.reshape(self.m, self.n_points, self.c_out)
        self.levels = np.ascontiguousarray(all_levels[self.plane_idx])
        self.top = max_level(self.k)

        # reference the fit is judged against: untrained planes zeroed out
        ref = np.zeros_like(all_levels)
        ref[self.plane_idx] = self.levels
        self.reference = self._assemble(ref)

    @property
    def num_fitted(self):
        return len(self.plane_idx)

    @property
    def spatial_dim(self):
        return self.points.shape[1]

    @property
    def input_dim(self):
        return self.spatial_dim + (1 if self.bit_axis else 0)

    def inputs(self):
        if not self.bit_axis:
            return self.points
        blocks = [
            np.hstack([self.points, np.full((self.n_points, 1), bit_coordinate(i, self.n_map))])
            for i in self.plane_idx
        ]
        return np.vstack(blocks)

    def targets(self):
        t = self.levels.astype(np.float64)
        if self.loss != "bce":
            t = t / self.top
        return t

    def values(self, outputs):
        """Network outputs as points on [0, 1] (the sigmoid for BCE)."""
        out = np.asarray(outputs, dtype=np.float64)
        return expit(out) if self.loss == "bce" else out

    def decode(self, outputs):
        """Integer plane levels ``(planes, N, C)`` from stacked outputs."""
        return quantize(self.values(outputs).reshape(self.levels.shape), self.k).astype(np.uint32)

    def within_band(self, outputs):
        """Per-entry check of |clamp(value) - target| within the half-open
        epsilon band, written independently of :meth:`decode`."""
        v = np.clip(self.values(outputs).reshape(self.levels.shape), 0.0, 1.0)
        t = self.levels / self.top
        eps = epsilon(self.k)
        low = np.where(self.levels == 0, -np.inf, t - eps)
        high = np.where(self.levels == self.top, np.inf, t + eps)
        return (v >= low) & (v < high)

    def _assemble(self, all_levels):
        planes = all_levels.reshape((self.m,) + self.signal.shape)
        return recompose(QuantizedStack(planes, self.k, self.signal.bit_depth, self.signal.has_channels))

    def reconstruct(self, levels, fill=None):
        """Recompose fitted levels; unfitted planes come from ``fill``
        (``(m, N, C)`` levels) or are zero."""
        full = np.zeros((self.m, self.n_points, self.c_out), dtype=np.uint32) if fill is None else fill.copy()
        full[self.plane_idx] = levels
        return self._assemble(full)

    def evaluate(self, outputs):
        """``(lossless, ber, reconstruction, per-bit plane ber)``.

        Raises if the integer comparison and the epsilon-band check disagree.
        """
        levels = self.decode(outputs)
        recon = self.reconstruct(levels)
        exact = bool(np.array_equal(recon.samples, self.reference.samples))
        banded = bool(self.within_band(outputs).all())
        if exact != banded:
            raise AssertionError("integer check and epsilon-band check disagree")
        planes = metrics.per_plane_ber(recon, self.reference)
        if self.subset:
            mask = np.zeros(self.signal.bit_depth, dtype=bool)
            for i in self.plane_idx:
                mask[i * self.k : (i + 1) * self.k] = True
            planes = np.where(mask, planes, np.nan)
            ber_value = float(np.nanmean(planes))
        else:
            ber_value = metrics.ber(recon, self.reference)
        return exact, ber_value, recon, planes

    def check_model(self, model):
        nets = model if isinstance(model, (list, tuple)) else [model]
        if isinstance(model, (list, tuple)):
            if len(nets) != self.num_fitted:
                raise ValueError(f"parallel fit needs {self.num_fitted} networks, got {len(nets)}")
            if self.bit_axis:
                raise ValueError("parallel networks take no bit coordinate")
        for net in nets:
            if net.input_dim != self.input_dim:
                raise ValueError(f"network expects {net.input_dim} inputs, the grid has {self.input_dim}")
            if net.output_dim != self.c_out:
                raise ValueError(f"network has {net.output_dim} outputs, the signal needs {self.c_out}")
        if not isinstance(model, (list, tuple)) and not self.bit_axis and self.num_fitted > 1:
            raise ValueError("several planes without a bit axis need one network per plane")


def model_outputs(model, problem):
    """Outputs of ``model`` on the whole grid, stacked ``(planes * N, C)``."""
    if isinstance(model, (list, tuple)):
        x = problem.points
        return np.vstack([net.forward(x) for net in model])
    return model.forward(problem.inputs())


def verify_lossless(model, signal, plane_bits, loss="bce", **problem_kw):
    """``(is_lossless, ber, reconstructed signal)`` for a trained model."""
    problem = PlaneProblem(signal, plane_bits, loss, **problem_kw)
    problem.check_model(model)
    exact, ber_value, recon, _ = problem.evaluate(model_outputs(model, problem))
    return exact, ber_value, recon


# ---------------------------------------------------------------------------
# fit loop


class _Trainer:
    """One network, its Adam state and its slice of the targets."""

    def __init__(self, net, x, t):
        self.net = net
        self.x = x.astype(net.dtype)
        self.t = t.astype(net.dtype)
        self.params = net.parameters()
        self.names = net.parameter_names()
        self.state = AdamState(self.params)


def fit(signal, plane_bits, net, config=None, planes=None, n_map=None, callback=None):
    """Train ``net`` (or a list of per-plane nets) on ``signal``'s planes.

    Returns ``(net, TrainReport)``. Checkpoint ``t`` reflects the parameters
    after ``t`` Adam updates; training stops at the first lossless checkpoint.
    """
    config = TrainConfig() if config is None else config
    parallel = isinstance(net, (list, tuple))
    problem = PlaneProblem(signal, plane_bits, config.loss, bit_axis=False if parallel else config.bit_axis,
                           planes=planes, n_map=n_map, channel_coordinate=config.channel_coordinate)
    problem.check_model(net)
    targets = problem.targets()  # (planes, N, C)
    if parallel:
        trainers = [_Trainer(nt, problem.points, targets[i]) for i, nt in enumerate(net)]
    else:
        trainers = [_Trainer(net, problem.inputs(), targets.reshape(-1, problem.c_out))]
    full_batch = config.batch_size is None or config.batch_size >= len(trainers[0].x)
    rng = np.random.default_rng(config.seed)

    report = TrainReport(signal.bit_depth, config=config.to_dict())
    start = time.perf_counter()
    step = 0
    while True:
        checking = step == config.max_iterations or (step > 0 and step % config.check_interval == 0)
        if full_batch:
            passes = [tr.net.forward(tr.x, keep=True) for tr in trainers]
            losses_grads = [loss_eval(config.loss, out, tr.t) for (out, _), tr in zip(passes, trainers)]
        if checking:
            if full_batch:
                outputs = np.vstack([out for out, _ in passes])
                loss_value = float(np.mean([lg[0] for lg in losses_grads]))
            else:
                outputs = model_outputs(net, problem)
                loss_value = loss_eval(config.loss, outputs, targets.reshape(outputs.shape))[0]
            if not math.isfinite(loss_value):
                raise FloatingPointError(f"loss became non-finite at iteration {step}")
            exact, ber_value, recon, plane_ber = problem.evaluate(outputs)
            psnr_value = metrics.psnr(recon, problem.reference)
            report.records.append(Checkpoint(step, loss_value, ber_value, psnr_value, plane_ber))
            if callback is not None:
                callback(report.records[-1])
            if exact:
                report.iteration_at_lossless = step
                break
        if step >= config.max_iterations:
            break
        lr = config.lr_at(step)
        for i, tr in enumerate(trainers):
            if full_batch:
                (_, tape), (loss_value, grad) = passes[i], losses_grads[i]
            else:
                idx = rng.choice(len(tr.x), size=config.batch_size, replace=False)
                out, tape = tr.net.forward(tr.x[idx], keep=True)
                loss_value, grad = loss_eval(config.loss, out, tr.t[idx])
            if not math.isfinite(loss_value):
                raise FloatingPointError(f"loss became non-finite at iteration {step}")
            grads = tr.net.backward(tape, grad)
            adam_step(tr.state, tr.params, grads, lr, tr.names)
        step += 1
    report.wall_time = time.perf_counter() - start
    return net, report


def build_model(problem_or_signal, spec, plane_bits=1, parallel=False, config=None, seed=None):
    """Networks sized for a fitting problem: one net, or one per plane."""
    if isinstance(problem_or_signal, DigitalSignal):
        config = TrainConfig() if config is None else config
        problem = PlaneProblem(problem_or_signal, plane_bits, config.loss,
                               bit_axis=False if parallel else config.bit_axis,
                               channel_coordinate=config.channel_coordinate)
    else:
        problem = problem_or_signal
    base = spec.seed if seed is None else seed
    if parallel:
        return [spec.build(problem.spatial_dim, problem.c_out, seed=base * 1000 + i)
                for i in range(problem.num_fitted)]
    return spec.build(problem.input_dim, problem.c_out, seed=base)


__all__ = [
    "AdamState", "Checkpoint", "Mlp", "PlaneProblem", "TrainConfig", "TrainReport", "adam_step",
    "bit_coordinate", "build_model", "fit", "loss_eval", "make_grid", "model_outputs",
    "spatial_grid", "verify_lossless",
]
