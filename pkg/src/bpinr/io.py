"""Readers and writers: Netpbm images, WAV audio, model files, CSV/JSON.

Model file layout (all integers little-endian)::

    b"BPINR1"  version:u8  header_len:u32  header:JSON(utf-8)  payload

Dense payload: per layer, weights row-major then bias, as ``<f4`` (binary32)
or ``<f8`` (binary64). Ternary payload: every layer's weights concatenated and
packed 2 bits each (0 -> 00, +1 -> 01, -1 -> 10, first weight in the low
bits), followed by one ``<f4`` beta per layer.
"""

import csv
import json
import math
import struct

import numpy as np

from . import kernels
from .network import (BINARY32, BINARY64, Dense, Mlp, TernaryLayer, activation_from_dict,
                      precision_dtype)
from .signal import DigitalSignal

MAGIC = b"BPINR1"
VERSION = 1

# ---------------------------------------------------------------------------
# Netpbm


def _header_tokens(data, count):
    """Pull ``count`` whitespace separated tokens, skipping ``#`` comments.
    Returns the tokens and the offset of the single whitespace byte that ends
    the header."""
    tokens = []
    pos = 0
    n = len(data)
    while len(tokens) < count:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos < n and data[pos : pos + 1] == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ValueError("truncated Netpbm header")
        tokens.append(data[start:pos])
    if pos >= n or not data[pos : pos + 1].isspace():
        raise ValueError("Netpbm header must end in a single whitespace byte")
    return tokens, pos + 1


def read_netpbm(path):
    """P5 (gray) or P6 (RGB) with maxval 255 or 65535; comments are dropped."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:2] not in (b"P5", b"P6"):
        raise ValueError(f"{path}: not a binary PGM/PPM (magic {data[:2]!r})")
    tokens, offset = _header_tokens(data, 4)
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise ValueError(f"{path}: malformed Netpbm header") from None
    if width < 1 or height < 1:
        raise ValueError(f"{path}: bad image size {width}x{height}")
    if maxval == 255:
        dtype, depth = np.dtype("u1"), 8
    elif maxval == 65535:
        dtype, depth = np.dtype(">u2"), 16
    else:
        raise ValueError(f"{path}: unsupported maxval {maxval} (only 255 and 65535)")
    channels = 3 if tokens[0] == b"P6" else 1
    count = width * height * channels
    raster = data[offset:]
    need = count * dtype.itemsize
    if len(raster) < need:
        raise ValueError(f"{path}: truncated raster ({len(raster)} of {need} bytes)")
    if len(raster) > need:
        raise ValueError(f"{path}: {len(raster) - need} bytes of trailing data")
    arr = np.frombuffer(raster, dtype=dtype)
    shape = (height, width, 3) if channels == 3 else (height, width)
    return DigitalSignal(arr.reshape(shape), depth, has_channels=channels == 3)


def write_netpbm(signal, path):
    if signal.bit_depth not in (8, 16):
        raise ValueError(f"Netpbm output needs 8- or 16-bit samples, got {signal.bit_depth}")
    if signal.has_channels:
        if signal.samples.ndim != 3 or signal.shape[2] != 3:
            raise ValueError(f"PPM needs (H, W, 3) samples, got {signal.shape}")
        magic = b"P6"
    else:
        if signal.samples.ndim != 2:
            raise ValueError(f"PGM needs (H, W) samples, got {signal.shape}")
        magic = b"P5"
    height, width = signal.shape[:2]
    maxval = 255 if signal.bit_depth == 8 else 65535
    dtype = "u1" if signal.bit_depth == 8 else ">u2"
    with open(path, "wb") as f:
        f.write(magic + f"\n{width} {height}\n{maxval}\n".encode("ascii"))
        f.write(signal.samples.astype(dtype).tobytes())


def promote_depth(signal, bits):
    """Same samples declared at a different depth (they must fit)."""
    return DigitalSignal(signal.samples, bits, signal.has_channels)


# ---------------------------------------------------------------------------
# WAV

WAVE_PCM = 1
WAVE_FLOAT = 3


class WavData:
    def __init__(self, samples, sample_rate, format_tag):
        self.samples = samples
        self.sample_rate = sample_rate
        self.format_tag = format_tag


def read_wav(path):
    """PCM16 (tag 1) or float32 (tag 3); returns the first channel only."""
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise ValueError(f"{path}: not a RIFF/WAVE file")
    pos = 12
    fmt = None
    payload = None
    while pos + 8 <= len(data):
        cid = data[pos : pos + 4]
        (size,) = struct.unpack("<I", data[pos + 4 : pos + 8])
        body = data[pos + 8 : pos + 8 + size]
        if len(body) < size:
            raise ValueError(f"{path}: truncated {cid!r} chunk")
        if cid == b"fmt ":
            if size < 16:
                raise ValueError(f"{path}: short fmt chunk")
            fmt = struct.unpack("<HHIIHH", body[:16])
        elif cid == b"data":
            payload = body
        pos += 8 + size + (size & 1)
    if fmt is None or payload is None:
        raise ValueError(f"{path}: missing fmt or data chunk")
    tag, channels, rate, _, block_align, bits = fmt
    if tag == WAVE_PCM and bits == 16:
        dtype = np.dtype("<i2")
    elif tag == WAVE_FLOAT and bits == 32:
        dtype = np.dtype("<f4")
    else:
        raise ValueError(f"{path}: unsupported WAV format tag {tag} with {bits} bits")
    if channels < 1 or block_align != channels * dtype.itemsize:
        raise ValueError(f"{path}: inconsistent block alignment")
    if len(payload) % block_align:
        raise ValueError(f"{path}: data chunk is not a whole number of frames")
    frames = np.frombuffer(payload, dtype=dtype).reshape(-1, channels)
    return WavData(frames[:, 0].astype(dtype.newbyteorder("=")), rate, tag)


def write_wav(path, samples, sample_rate=16000):
    """Mono WAV; int16 input is written as PCM16, float32 as IEEE float."""
    arr = np.asarray(samples)
    if arr.dtype == np.int16:
        tag, dtype = WAVE_PCM, "<i2"
    elif arr.dtype == np.float32:
        tag, dtype = WAVE_FLOAT, "<f4"
    else:
        raise ValueError(f"write_wav takes int16 or float32 samples, got {arr.dtype}")
    raw = arr.ravel().astype(dtype).tobytes()
    width = np.dtype(dtype).itemsize
    fmt = struct.pack("<HHIIHH", tag, 1, sample_rate, sample_rate * width, width, width * 8)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt + b"data" + struct.pack("<I", len(raw)) + raw
    if len(raw) & 1:
        body += b"\0"
    with open(path, "wb") as f:
        f.write(b"RIFF" + struct.pack("<I", len(body)) + body)


def pcm16_to_signal(samples):
    """Offset binary: -32768 -> 0, 0 -> 32768, 32767 -> 65535."""
    s = np.asarray(samples, dtype=np.int16).astype(np.int32) + 32768
    return DigitalSignal(s.astype(np.uint32), 16)


def signal_to_pcm16(signal):
    return (signal.samples.astype(np.int32) - 32768).astype(np.int16)


# ---------------------------------------------------------------------------
# model files


def _encode_model(net, meta):
    ternary = net.is_ternary
    if ternary and not all(isinstance(l, TernaryLayer) for l in net.layers):
        raise ValueError("mixed dense/ternary networks are not serialisable")
    header = {
        "input_dim": net.input_dim,
        "layers": [[int(l.shape[0]), int(l.shape[1]), l.bias is not None] for l in net.layers],
        "activation": net.activation.to_dict(),
        "pos_enc": net.pos_enc,
        "precision": net.precision,
        "seed": net.seed,
        "flags": {
            "ternary": ternary,
            "bias_detached": all(l.bias is None for l in net.layers),
            "layer_norm": [bool(getattr(l, "normalize", False)) for l in net.layers],
        },
    }
    header.update(meta or {})
    if ternary:
        views = [l.quantized() for l in net.layers]
        packed = kernels.pack_ternary(np.concatenate([wt.ravel() for wt, _ in views]))
        betas = np.array([beta for _, beta in views], dtype="<f4")
        payload = packed.tobytes() + betas.tobytes()
    else:
        dtype = "<f4" if net.precision == BINARY32 else "<f8"
        chunks = []
        for l in net.layers:
            chunks.append(np.asarray(l.weight, dtype=dtype).tobytes())
            if l.bias is not None:
                chunks.append(np.asarray(l.bias, dtype=dtype).tobytes())
        payload = b"".join(chunks)
    header["payload_bytes"] = len(payload)
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    return MAGIC + bytes([VERSION]) + struct.pack("<I", len(blob)) + blob + payload


def save_model(path, net, meta=None):
    """Write ``net``; ``meta`` adds fields such as loss and bit mapping."""
    data = _encode_model(net, meta)
    with open(path, "wb") as f:
        f.write(data)
    return len(data)


def model_nbytes(net, meta=None):
    return len(_encode_model(net, meta))


def ternary_payload_bytes(shapes):
    """Payload size of a ternary model with the given ``(d_out, d_in)`` layers."""
    total = sum(a * b for a, b in shapes)
    return (total + 3) // 4 + 4 * len(shapes)


def load_model(path):
    """Returns ``(net, header)``."""
    with open(path, "rb") as f:
        data = f.read()
    if data[: len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: bad magic, not a model file")
    pos = len(MAGIC)
    if len(data) < pos + 5:
        raise ValueError(f"{path}: truncated header")
    version = data[pos]
    if version != VERSION:
        raise ValueError(f"{path}: model format version {version}, this reader handles {VERSION}")
    (hlen,) = struct.unpack("<I", data[pos + 1 : pos + 5])
    pos += 5
    if len(data) < pos + hlen:
        raise ValueError(f"{path}: truncated header")
    try:
        header = json.loads(data[pos : pos + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ValueError(f"{path}: corrupt header ({e})") from None
    payload = data[pos + hlen :]
    if len(payload) != header["payload_bytes"]:
        raise ValueError(f"{path}: payload has {len(payload)} bytes, header says {header['payload_bytes']}")
    precision = header["precision"]
    if precision not in (BINARY32, BINARY64):
        raise ValueError(f"{path}: unknown precision {precision!r}")
    dtype = precision_dtype(precision)
    shapes = [(d_out, d_in) for d_out, d_in, _ in header["layers"]]
    layers = []
    if header["flags"]["ternary"]:
        if len(payload) != ternary_payload_bytes(shapes):
            raise ValueError(f"{path}: ternary payload length does not match layer shapes")
        total = sum(a * b for a, b in shapes)
        nbytes = (total + 3) // 4
        values = kernels.unpack_ternary(np.frombuffer(payload[:nbytes], dtype=np.uint8), total)
        betas = np.frombuffer(payload[nbytes:], dtype="<f4")
        norms = header["flags"].get("layer_norm", [True] * len(shapes))
        off = 0
        for i, (d_out, d_in) in enumerate(shapes):
            wt = values[off : off + d_out * d_in].reshape(d_out, d_in).copy()
            off += d_out * d_in
            layers.append(TernaryLayer(frozen=(wt, float(betas[i])), normalize=norms[i], dtype=dtype))
    else:
        width = np.dtype(dtype).itemsize
        expect = sum((a * b + (a if bias else 0)) * width for a, b, bias in header["layers"])
        if len(payload) != expect:
            raise ValueError(f"{path}: payload length does not match layer shapes")
        off = 0
        for d_out, d_in, has_bias in header["layers"]:
            n = d_out * d_in * width
            w = np.frombuffer(payload[off : off + n], dtype="<f4" if width == 4 else "<f8").astype(dtype)
            off += n
            b = None
            if has_bias:
                m = d_out * width
                b = np.frombuffer(payload[off : off + m], dtype="<f4" if width == 4 else "<f8").astype(dtype)
                off += m
            layers.append(Dense(w.reshape(d_out, d_in).copy(), None if b is None else b.copy()))
    net = Mlp(layers, activation_from_dict(header["activation"]), header["input_dim"], precision,
              header["seed"], header["pos_enc"])
    return net, header


# ---------------------------------------------------------------------------
# tables


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None:
        return ""
    return repr(float(v))  # shortest round-trip form, "inf" / "nan" included


def write_csv(report, path):
    """One row per checkpoint; header from ``report.columns()``."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\r\n")
        w.writerow(report.columns())
        for row in report.rows():
            w.writerow([_cell(v) for v in row])


def write_table(path, columns, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\r\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_cell(v) for v in row])


def read_csv(path):
    """``(columns, rows)`` with numeric cells parsed; empty cells become None."""
    with open(path, newline="") as f:
        r = csv.reader(f)
        columns = next(r)
        rows = []
        for raw in r:
            row = []
            for cell in raw:
                if cell == "":
                    row.append(None)
                elif cell.lstrip("-").isdigit():
                    row.append(int(cell))
                else:
                    row.append(float(cell))
            rows.append(row)
    return columns, rows


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else repr(f)  # "inf", "-inf", "nan" as strings
    return obj


def write_json(path, obj):
    with open(path, "w") as f:
        json.dump(_jsonable(obj), f, indent=2, sort_keys=True, allow_nan=False)
        f.write("\n")
