"""Parameter upper bound for n-bit accurate approximation, plus executable
ReLU constructions (L1 norm, max, max-convolution) behind it.

For an L-Lipschitz (L1 metric) target on ``[a, b]^d``:

    coefficient  c = 9 * (3d * max(L (b - a), 1))^(2d) * d^2
    U_d(n)       = c * (2^(n+1) - 2)^(2d)

The relative factor ``(2^(n+1) - 2)^(2d)`` is kept as an exact Python int.
"""

import math
from dataclasses import dataclass
from decimal import ROUND_HALF_EVEN, Decimal
from fractions import Fraction

import numpy as np
from scipy.spatial import cKDTree

from .signal import normalize


@dataclass(frozen=True)
class BoundQuery:
    d: int
    n: int
    L: float = 0.0
    a: float = -1.0
    b: float = 1.0

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise ValueError("d must be a positive integer")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError("n must be a positive integer")
        if not self.L >= 0:
            raise ValueError("L must be non-negative")
        if not self.b >= self.a:
            raise ValueError("domain needs b >= a")


@dataclass(frozen=True)
class BoundResult:
    query: BoundQuery
    relative: int  # exact (2^(n+1) - 2)^(2d)
    coefficient: float
    absolute: float  # math.inf when saturated
    saturated: bool
    coefficient_exact: Fraction

    @property
    def absolute_exact(self):
        return self.coefficient_exact * self.relative


def _coefficient_exact(q):
    spread = Fraction(q.L) * (Fraction(q.b) - Fraction(q.a))
    return 9 * (3 * q.d * max(spread, Fraction(1))) ** (2 * q.d) * q.d**2


def _to_float(x):
    try:
        return float(x), False
    except OverflowError:
        return math.inf, True


def coefficient(q):
    return _to_float(_coefficient_exact(q))[0]


def relative_factor(d, n):
    return ((1 << (n + 1)) - 2) ** (2 * d)


def upper_bound(q):
    rel = relative_factor(q.d, q.n)
    c_exact = _coefficient_exact(q)
    c, sat_c = _to_float(c_exact)
    absolute, sat = _to_float(c_exact * rel)
    return BoundResult(q, rel, c, absolute, sat or sat_c, c_exact)


def layer_bound(q):
    """Depth bound from the same theorem; informational only."""
    eps = 1.0 / ((1 << (q.n + 1)) - 2)
    spread = q.L * (q.b - q.a)
    return q.d * (math.log2(max(1.5 * q.d * spread, 1.0)) + math.log2(1.0 / eps)) + 2


def channel_bound(q, layer):
    """Width bound of hidden layer ``layer``; informational only."""
    eps = 1.0 / ((1 << (q.n + 1)) - 2)
    spread = q.L * (q.b - q.a)
    return eps ** (-q.d) * q.d * (3 * (3 * q.d * spread) ** q.d / 2**layer + 1)


def round_sig(x, sig=3):
    """Round to ``sig`` significant figures with exact decimal arithmetic."""
    if x == 0:
        return Decimal(0)
    dx = Decimal(x) if not isinstance(x, Fraction) else Decimal(x.numerator) / Decimal(x.denominator)
    exp = dx.adjusted() - sig + 1
    return dx.quantize(Decimal(1).scaleb(exp), rounding=ROUND_HALF_EVEN)


_SI = ["", "K", "M", "G", "T", "P", "E", "Z", "Y"]


def format_si(x, sig=3):
    """``67652010000 -> '67.7G'``; falls back to scientific notation past Y."""
    r = round_sig(x, sig)
    if r == 0:
        return "0"
    e = r.adjusted() // 3
    if e >= len(_SI):
        return f"{float(r):.{sig - 1}e}"
    scaled = r.scaleb(-3 * e)
    digits = max(sig - 1 - scaled.adjusted(), 0)
    return f"{scaled:.{digits}f}{_SI[e]}"


# ---------------------------------------------------------------------------
# Lipschitz estimate


def lipschitz_estimate(signal, domain=(-1.0, 1.0)):
    """Max over axis-adjacent samples of |delta normalized value| / delta coordinate.

    ``domain`` is one ``(a, b)`` pair for every spatial axis or a list of pairs.
    Channels are never differenced against each other.
    """
    values = normalize(signal)
    spatial = signal.spatial_shape
    if len(domain) == 2 and np.isscalar(domain[0]):
        domain = [tuple(domain)] * len(spatial)
    if len(domain) != len(spatial):
        raise ValueError(f"need {len(spatial)} domain intervals, got {len(domain)}")
    best = None
    for axis, (size, (a, b)) in enumerate(zip(spatial, domain)):
        if size < 2:
            continue
        step = (b - a) / (size - 1)
        if step <= 0:
            raise ValueError("domain intervals must have positive length")
        jump = np.abs(np.diff(values, axis=axis)).max() / step
        best = jump if best is None else max(best, jump)
    if best is None:
        raise ValueError("need at least two samples along some axis")
    return float(best)


# ---------------------------------------------------------------------------
# ReLU networks


class ReluNet:
    """Affine maps ``(W, b)`` with ReLU between consecutive ones."""

    def __init__(self, layers):
        self.layers = [(np.asarray(W, dtype=np.float64), np.asarray(b, dtype=np.float64)) for W, b in layers]
        for i in range(1, len(self.layers)):
            if self.layers[i][0].shape[1] != self.layers[i - 1][0].shape[0]:
                raise ValueError(f"layer {i} does not chain with layer {i - 1}")

    @property
    def input_dim(self):
        return self.layers[0][0].shape[1]

    @property
    def output_dim(self):
        return self.layers[-1][0].shape[0]

    @property
    def depth(self):
        return len(self.layers)

    def param_count(self):
        return sum(W.size + b.size for W, b in self.layers)

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        a = np.atleast_2d(x)
        for i, (W, b) in enumerate(self.layers):
            a = a @ W.T + b
            if i < len(self.layers) - 1:
                a = np.maximum(a, 0.0)
        return a[0] if single else a


def affine(W, b=None):
    W = np.atleast_2d(np.asarray(W, dtype=np.float64))
    return ReluNet([(W, np.zeros(W.shape[0]) if b is None else b)])


def compose(outer, inner):
    """``outer . inner`` with inner's last and outer's first affine map fused."""
    Wi, bi = inner.layers[-1]
    Wo, bo = outer.layers[0]
    merged = (Wo @ Wi, Wo @ bi + bo)
    return ReluNet(inner.layers[:-1] + [merged] + outer.layers[1:])


def parallel(*nets):
    """Block-diagonal stack acting on concatenated inputs; equal depths required."""
    depth = nets[0].depth
    if any(n.depth != depth for n in nets):
        raise ValueError("parallel nets need equal depth")
    layers = []
    for i in range(depth):
        Ws = [n.layers[i][0] for n in nets]
        W = np.zeros((sum(w.shape[0] for w in Ws), sum(w.shape[1] for w in Ws)))
        r = c = 0
        for w in Ws:
            W[r : r + w.shape[0], c : c + w.shape[1]] = w
            r += w.shape[0]
            c += w.shape[1]
        layers.append((W, np.concatenate([n.layers[i][1] for n in nets])))
    return ReluNet(layers)


def identity_net(d=1):
    """Two-layer identity, ``relu(x) - relu(-x)``."""
    eye = np.eye(d)
    return ReluNet([(np.vstack([eye, -eye]), np.zeros(2 * d)), (np.hstack([eye, -eye]), np.zeros(d))])


def build_l1_net(d):
    """``x -> sum |x_i|`` as ``ones(1, 2d) . relu((E_d kron [1, -1]^T) x)``."""
    if d < 1:
        raise ValueError("d must be >= 1")
    W1 = np.kron(np.eye(d), np.array([[1.0], [-1.0]]))
    return ReluNet([(W1, np.zeros(2 * d)), (np.ones((1, 2 * d)), np.zeros(1))])


def _max2():
    W1 = np.array([[1.0, -1.0], [0.0, 1.0], [0.0, -1.0]])
    W2 = np.array([[1.0, 1.0, -1.0]])
    return ReluNet([(W1, np.zeros(3)), (W2, np.zeros(1))])


def build_max_net(d):
    """``x -> max_i x_i`` by pairwise reduction.

    Each round runs M_2 on consecutive pairs in parallel; with an odd count
    the last input rides along an identity lane.
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    if d == 1:
        return identity_net(1)
    if d == 2:
        return _max2()
    pairs = [_max2() for _ in range(d // 2)]
    if d % 2:
        pairs.append(identity_net(1))
    return compose(build_max_net(len(pairs)), parallel(*pairs))


def build_maxconv_net(points, values, L):
    """ReLU net for ``x -> max_k (y_k - L ||x - x_k||_1)``.

    Built as M_K . A(-L I_K, y) . P_K(L1_d . A(I_d, -x_k)) . T_{d,K}, where
    T repeats the input K times.
    """
    xs = np.atleast_2d(np.asarray(points, dtype=np.float64))
    ys = np.asarray(values, dtype=np.float64).ravel()
    if xs.shape[0] == 0:
        raise ValueError("need at least one sample")
    if xs.shape[0] != ys.size:
        raise ValueError("points and values differ in length")
    if L < 0:
        raise ValueError("L must be non-negative")
    K, d = xs.shape
    repeat = affine(np.kron(np.ones((K, 1)), np.eye(d)))
    dists = parallel(*[compose(build_l1_net(d), affine(np.eye(d), -xk)) for xk in xs])
    head = compose(build_max_net(K), affine(-L * np.eye(K), ys))
    return compose(head, compose(dists, repeat))


def maxconv_reference(points, values, L, x):
    xs = np.atleast_2d(np.asarray(points, dtype=np.float64))
    ys = np.asarray(values, dtype=np.float64).ravel()
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    dist = np.abs(x[:, None, :] - xs[None, :, :]).sum(axis=2)
    return (ys[None, :] - L * dist).max(axis=1)


# ---------------------------------------------------------------------------
# covering radius


def probe_axes(points, domain, resolution=101):
    """Per-axis probe coordinates: a uniform grid of ``resolution`` nodes plus
    every sample coordinate and every midpoint between neighbouring ones."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    d = pts.shape[1]
    if len(domain) == 2 and np.isscalar(domain[0]):
        domain = [tuple(domain)] * d
    axes = []
    for j, (a, b) in enumerate(domain):
        u = np.unique(np.clip(pts[:, j], a, b))
        mids = (u[1:] + u[:-1]) / 2
        axes.append(np.unique(np.concatenate([np.linspace(a, b, resolution), u, mids, [a, b]])))
    return axes


def probe_grid(axes):
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def covering_radius(points, domain, resolution=101):
    """Sup over a dense probe grid of the L1 distance to the nearest point.

    The probe grid is :func:`probe_axes` crossed over all axes, so on product
    grids the maximiser (a cell centre or a domain corner) is probed exactly.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if pts.shape[0] == 0:
        raise ValueError("need at least one point")
    probes = probe_grid(probe_axes(pts, domain, resolution))
    dist, _ = cKDTree(pts).query(probes, k=1, p=1)
    return float(dist.max())
