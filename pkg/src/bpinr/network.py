"""Coordinate MLPs with exact reverse-mode gradients and ternary layers.

Weights are stored ``(d_out, d_in)``; a layer computes ``a @ W.T + b``.
Random init draws from a Philox (counter-based) generator seeded by the
network seed, in float64, and is then cast to the working precision.
"""

import math

import numpy as np
from scipy.special import ndtr

BINARY32 = "binary32"
BINARY64 = "binary64"
_DTYPES = {BINARY32: np.float32, BINARY64: np.float64}

ACT_QUANT_LEVELS = 127  # 8-bit symmetric absmax grid for ternary inputs
LN_EPS = 1e-5
BETA_EPS = 1e-8


def precision_dtype(precision):
    try:
        return _DTYPES[precision]
    except KeyError:
        raise ValueError(f"unknown precision {precision!r}; use {BINARY32!r} or {BINARY64!r}") from None


# ---------------------------------------------------------------------------
# activations


class Activation:
    name = ""
    omega0 = 1.0
    num_frequencies = 0

    def __call__(self, z):
        raise NotImplementedError

    def grad(self, z, a):
        """d a / d z given the pre-activation and the activation value."""
        raise NotImplementedError

    def params(self):
        return {}

    def to_dict(self):
        return {"kind": self.name, **self.params()}

    def __eq__(self, other):
        return type(self) is type(other) and self.params() == other.params()

    def __hash__(self):
        return hash((self.name, tuple(sorted(self.params().items()))))

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.params().items())
        return f"{type(self).__name__}({args})"


class Sine(Activation):
    name = "sine"

    def __init__(self, omega0=30.0):
        if not omega0 > 0:
            raise ValueError("omega0 must be positive")
        self.omega0 = float(omega0)

    def __call__(self, z):
        return np.sin(self.omega0 * z)

    def grad(self, z, a):
        return self.omega0 * np.cos(self.omega0 * z)

    def params(self):
        return {"omega0": self.omega0}


class Relu(Activation):
    name = "relu"

    def __call__(self, z):
        return np.maximum(z, 0)

    def grad(self, z, a):
        return (z > 0).astype(z.dtype)


class ReluPosEnc(Relu):
    """ReLU network fed with sin/cos positional encoding of its inputs."""

    name = "relu_pe"

    def __init__(self, num_frequencies=10):
        if int(num_frequencies) != num_frequencies or num_frequencies < 1:
            raise ValueError("num_frequencies must be a positive integer")
        self.num_frequencies = int(num_frequencies)

    def params(self):
        return {"num_frequencies": self.num_frequencies}


class Gauss(Activation):
    name = "gauss"

    def __init__(self, scale=10.0):
        if not scale > 0:
            raise ValueError("scale must be positive")
        self.scale = float(scale)

    def __call__(self, z):
        return np.exp(-((self.scale * z) ** 2))

    def grad(self, z, a):
        return -2.0 * self.scale**2 * z * a

    def params(self):
        return {"scale": self.scale}


class Gelu(Activation):
    """Exact GELU, ``z * Phi(z)``."""

    name = "gelu"

    def __call__(self, z):
        return z * ndtr(z)

    def grad(self, z, a):
        pdf = np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
        return ndtr(z) + z * pdf


class Tanh(Activation):
    name = "tanh"

    def __call__(self, z):
        return np.tanh(z)

    def grad(self, z, a):
        return 1.0 - a * a


_ACTIVATIONS = {c.name: c for c in (Sine, Relu, ReluPosEnc, Gauss, Gelu, Tanh)}


def activation_from_dict(d):
    d = dict(d)
    kind = d.pop("kind")
    if kind not in _ACTIVATIONS:
        raise ValueError(f"unknown activation {kind!r}")
    return _ACTIVATIONS[kind](**d)


def make_activation(name, omega0=30.0, num_frequencies=10, scale=10.0):
    name = name.lower().replace("-", "_")
    if name == "sine":
        return Sine(omega0)
    if name in ("relu_pe", "relupe", "relu+pe"):
        return ReluPosEnc(num_frequencies)
    if name == "gauss":
        return Gauss(scale)
    if name == "gelu":
        return Gelu()
    if name == "tanh":
        return Tanh()
    if name == "relu":
        return Relu()
    raise ValueError(f"unknown activation {name!r}; choose from {sorted(_ACTIVATIONS)}")


def encoded_width(input_dim, num_frequencies):
    return input_dim * (2 * num_frequencies + 1) if num_frequencies else input_dim


def positional_encoding(x, num_frequencies):
    """Per coordinate: ``x``, ``sin(2^j pi x)`` for j < F, then ``cos(2^j pi x)``.

    The raw coordinate is kept because every sin/cos feature has period 2 and
    would map both ends of [-1, 1] to the same code.
    """
    if not num_frequencies:
        return x
    freqs = (2.0 ** np.arange(num_frequencies) * np.pi).astype(x.dtype)
    ang = x[:, :, None] * freqs
    return np.concatenate([x[:, :, None], np.sin(ang), np.cos(ang)], axis=2).reshape(x.shape[0], -1)


# ---------------------------------------------------------------------------
# layers


class Dense:
    def __init__(self, weight, bias=None):
        self.weight = weight
        self.bias = bias

    @property
    def shape(self):
        return self.weight.shape

    def params(self):
        return [self.weight] if self.bias is None else [self.weight, self.bias]

    def param_count(self):
        return self.weight.size + (0 if self.bias is None else self.bias.size)

    def forward(self, a):
        z = a @ self.weight.T
        if self.bias is not None:
            z += self.bias
        return z, None

    def backward(self, a, cache, g):
        grads = [g.T @ a]
        if self.bias is not None:
            grads.append(g.sum(axis=0))
        return grads, g @ self.weight


def ternary_quantize(weight):
    """Absmean ternarization: returns ``(W_tilde, beta)``.

    beta is rounded to binary32, the width it is stored with on disk, so a
    saved and reloaded layer computes exactly what the trained one did.
    """
    w = np.asarray(weight)
    beta = float(np.float32(np.abs(w).sum(dtype=np.float64) / w.size))
    wt = np.clip(np.round(w / (beta + BETA_EPS)), -1, 1).astype(np.int8)
    return wt, beta


def layer_norm(x):
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=1, keepdims=True) + LN_EPS)
    return xc * inv, inv


def absmax_quantize(x):
    """8-bit symmetric quantization per row: ``(levels / 127, gamma)``."""
    gamma = np.abs(x).max(axis=1, keepdims=True)
    safe = np.where(gamma > 0, gamma, 1)
    levels = np.clip(np.round(x * (ACT_QUANT_LEVELS / safe)), -ACT_QUANT_LEVELS, ACT_QUANT_LEVELS)
    xt = np.where(gamma > 0, levels / ACT_QUANT_LEVELS, 0).astype(x.dtype)
    return xt, gamma


class TernaryLayer:
    """Bias-free layer computing ``beta * gamma * W_tilde @ x_tilde``.

    ``weight`` holds the trained full-precision shadow weights. Gradients use
    the straight-through rule: both quantizers act as the identity, the layer
    norm is differentiated exactly. A layer loaded from disk has no shadow
    weights, only its frozen ``(W_tilde, beta)``.
    """

    bias = None

    def __init__(self, weight=None, frozen=None, normalize=True, dtype=np.float32):
        if weight is None and frozen is None:
            raise ValueError("need shadow weights or a frozen ternary view")
        self.weight = weight
        self.frozen = frozen
        self.normalize = normalize
        self.dtype = weight.dtype if weight is not None else np.dtype(dtype)

    @property
    def shape(self):
        return self.weight.shape if self.weight is not None else self.frozen[0].shape

    def quantized(self):
        if self.frozen is not None:
            return self.frozen
        return ternary_quantize(self.weight)

    def freeze(self):
        self.frozen = self.quantized()
        self.weight = None

    def params(self):
        return [] if self.weight is None else [self.weight]

    def param_count(self):
        d_out, d_in = self.shape
        return d_out * d_in

    def forward(self, x):
        wt, beta = self.quantized()
        if self.normalize:
            xn, inv = layer_norm(x)
        else:
            xn, inv = x, None
        xt, gamma = absmax_quantize(xn)
        weff = (beta * wt).astype(self.dtype)
        z = (xt @ weff.T) * gamma
        return z, (xn, inv, xt * gamma, weff)

    def backward(self, x, cache, g):
        xn, inv, xq, weff = cache
        grads = [g.T @ xq] if self.weight is not None else []
        gx = g @ weff
        if self.normalize:
            # exact layer-norm backward
            gx = inv * (gx - gx.mean(axis=1, keepdims=True) - xn * (gx * xn).mean(axis=1, keepdims=True))
        return grads, gx


# ---------------------------------------------------------------------------
# network


class Mlp:
    """Coordinate network: optional positional encoding, then layers with the
    activation after every layer but the last."""

    def __init__(self, layers, activation, input_dim, precision=BINARY32, seed=0, pos_enc=None):
        self.layers = list(layers)
        self.activation = activation
        self.input_dim = int(input_dim)
        self.precision = precision
        self.seed = seed
        self.pos_enc = activation.num_frequencies if pos_enc is None else int(pos_enc)
        self.dtype = precision_dtype(precision)
        expected = self.encoded_dim
        for i, layer in enumerate(self.layers):
            d_out, d_in = layer.shape
            if d_in != expected:
                raise ValueError(f"layer {i} expects {d_in} inputs but receives {expected}")
            expected = d_out

    @property
    def encoded_dim(self):
        return encoded_width(self.input_dim, self.pos_enc)

    @property
    def output_dim(self):
        return self.layers[-1].shape[0]

    @property
    def is_ternary(self):
        return any(isinstance(l, TernaryLayer) for l in self.layers)

    def parameters(self):
        return [p for layer in self.layers for p in layer.params()]

    def parameter_names(self):
        names = []
        for i, layer in enumerate(self.layers):
            kinds = ["weight", "bias"][: len(layer.params())]
            names.extend(f"layer{i}.{k}" for k in kinds)
        return names

    def param_count(self):
        return sum(layer.param_count() for layer in self.layers)

    def copy(self):
        layers = []
        for layer in self.layers:
            if isinstance(layer, TernaryLayer):
                frozen = None if layer.frozen is None else (layer.frozen[0].copy(), layer.frozen[1])
                w = None if layer.weight is None else layer.weight.copy()
                layers.append(TernaryLayer(w, frozen, layer.normalize, layer.dtype))
            else:
                b = None if layer.bias is None else layer.bias.copy()
                layers.append(Dense(layer.weight.copy(), b))
        return Mlp(layers, self.activation, self.input_dim, self.precision, self.seed, self.pos_enc)

    def _prepare(self, coords):
        x = np.asarray(coords, dtype=self.dtype)
        if x.ndim == 1:
            x = x[:, None]
        if x.shape[1] != self.input_dim:
            raise ValueError(f"coordinates have {x.shape[1]} dims, network expects {self.input_dim}")
        return x

    def forward(self, coords, keep=False):
        """Outputs ``(N, d_out)``; with ``keep=True`` also the tape for backward."""
        a = positional_encoding(self._prepare(coords), self.pos_enc)
        tape = []
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            z, cache = layer.forward(a)
            if keep:
                tape.append((a, z, cache))
            a = self.activation(z) if i < last else z
            if keep and i < last:
                tape[-1] = tape[-1] + (a,)
        return (a, tape) if keep else a

    def backward(self, tape, grad_out):
        """Gradients for :meth:`parameters`, in the same order."""
        g = np.asarray(grad_out, dtype=self.dtype)
        if g.ndim == 1:
            g = g[:, None]
        if len(tape) != len(self.layers):
            raise ValueError("tape does not belong to this network")
        if g.shape != tape[-1][1].shape:
            raise ValueError(f"upstream gradient shape {g.shape} != output shape {tape[-1][1].shape}")
        grads = []
        for i in range(len(self.layers) - 1, -1, -1):
            a_in, z, cache = tape[i][:3]
            layer_grads, g_in = self.layers[i].backward(a_in, cache, g)
            grads.append(layer_grads)
            if i:
                z_prev, a_prev = tape[i - 1][1], tape[i - 1][3]
                g = g_in * self.activation.grad(z_prev, a_prev)
        return [p for layer_grads in reversed(grads) for p in layer_grads]


def forward(net, coords):
    return net.forward(coords)


def backward(net, coords, upstream):
    _, tape = net.forward(coords, keep=True)
    return net.backward(tape, upstream)


def param_count(net):
    return net.param_count()


def init_mlp(input_dim, hidden_dim, depth, output_dim, activation, seed=0,
             precision=BINARY32, ternary=False, bias=None, pos_enc=None):
    """Build and initialise a coordinate MLP.

    ``depth`` counts hidden layers, so the network has ``depth + 1`` affine
    maps. Sine networks use the first-layer bound ``1/d_in`` and
    ``sqrt(6/d_in)/omega0`` after; everything else uses ``sqrt(6/d_in)``.
    Ternary networks have no biases.
    """
    for name, v in (("input_dim", input_dim), ("hidden_dim", hidden_dim), ("depth", depth), ("output_dim", output_dim)):
        if int(v) != v or v < 1:
            raise ValueError(f"{name} must be a positive integer, got {v}")
    dtype = precision_dtype(precision)
    if bias is None:
        bias = not ternary
    rng = np.random.Generator(np.random.Philox(seed))
    F = activation.num_frequencies if pos_enc is None else int(pos_enc)
    dims = [encoded_width(input_dim, F)] + [hidden_dim] * depth + [output_dim]
    is_sine = isinstance(activation, Sine)
    layers = []
    for i in range(len(dims) - 1):
        d_in, d_out = dims[i], dims[i + 1]
        if is_sine and i == 0:
            bound = 1.0 / d_in
        else:
            bound = math.sqrt(6.0 / d_in) / (activation.omega0 if is_sine else 1.0)
        w = rng.uniform(-bound, bound, size=(d_out, d_in)).astype(dtype)
        if ternary:
            layers.append(TernaryLayer(w))
        else:
            layers.append(Dense(w, np.zeros(d_out, dtype=dtype) if bias else None))
    return Mlp(layers, activation, input_dim, precision, seed, F)


class NetSpec:
    """Shape and activation recipe, turned into a network once the input and
    output sizes of a fitting problem are known."""

    def __init__(self, width=128, depth=3, activation=None, precision=BINARY32, seed=0,
                 ternary=False, pos_enc=None):
        self.width = width
        self.depth = depth
        self.activation = Sine() if activation is None else activation
        self.precision = precision
        self.seed = seed
        self.ternary = ternary
        self.pos_enc = pos_enc

    def build(self, input_dim, output_dim=1, seed=None):
        return init_mlp(input_dim, self.width, self.depth, output_dim, self.activation,
                        self.seed if seed is None else seed, self.precision,
                        ternary=self.ternary, pos_enc=self.pos_enc)

    def replace(self, **changes):
        kw = dict(width=self.width, depth=self.depth, activation=self.activation,
                  precision=self.precision, seed=self.seed, ternary=self.ternary, pos_enc=self.pos_enc)
        kw.update(changes)
        return NetSpec(**kw)

    def to_dict(self):
        return {"width": self.width, "depth": self.depth, "activation": self.activation.to_dict(),
                "precision": self.precision, "seed": self.seed, "ternary": self.ternary,
                "pos_enc": self.pos_enc}

    def __repr__(self):
        return f"NetSpec({self.to_dict()})"


def count_for(input_dim, width, depth, output_dim=1, pos_enc=0, bias=True):
    """Parameter count of an ``init_mlp`` network without building it."""
    dims = [encoded_width(input_dim, pos_enc)] + [width] * depth + [output_dim]
    return sum(a * b + (b if bias else 0) for a, b in zip(dims[:-1], dims[1:]))


def width_for_budget(budget, input_dim, depth, output_dim=1, pos_enc=0):
    """Width whose parameter count is closest to ``budget``."""
    best = None
    for w in range(1, 4097):
        err = abs(count_for(input_dim, w, depth, output_dim, pos_enc) - budget)
        if best is None or err < best[0]:
            best = (err, w)
        if count_for(input_dim, w, depth, output_dim, pos_enc) > budget:
            break
    return best[1]
