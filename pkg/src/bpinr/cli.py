"""Command line front end.

Every subcommand prints its resolved configuration as one JSON line before
running, writes ``<experiment>_seed<seed>.csv`` / ``.json`` under ``--out``
and exits 0 on success, 2 on usage errors, 3 when ``--require-lossless`` is
set and the fit did not become lossless, and 1 on bad input data.
"""

import argparse
import json
import os
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import applications, bounds, io, metrics
from .network import BINARY32, BINARY64, NetSpec, make_activation
from .signal import DigitalSignal, QuantizedStack, decompose, recompose
from .training import TrainConfig, build_model, fit

THREADS_ENV = "BPINR_THREADS"
EXIT_OK, EXIT_DATA, EXIT_USAGE, EXIT_NOT_LOSSLESS = 0, 1, 2, 3

PRESETS = {"desk": {"width": 128, "depth": 3}, "full": {"width": 512, "depth": 5}}


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# shared flags


def _net_flags(p, width=None, depth=None, act="sine", loss="bce", lr=1e-4, iterations=20000):
    g = p.add_argument_group("network and training")
    g.add_argument("--preset", choices=sorted(PRESETS), help="desk: 128x3, full: 512x5")
    g.add_argument("--width", type=int, default=width, help="hidden width (default 512, or preset)")
    g.add_argument("--depth", type=int, default=depth, help="hidden layers (default 5, or preset)")
    g.add_argument("--act", default=act, help="sine, relu, relu_pe, gauss, gelu, tanh")
    g.add_argument("--w0", type=float, default=30.0, help="sine frequency omega_0")
    g.add_argument("--pe", type=int, default=None, help="positional-encoding frequencies")
    g.add_argument("--loss", choices=["bce", "mse", "mae"], default=loss)
    g.add_argument("--lr", type=float, default=lr)
    g.add_argument("--iterations", type=int, default=iterations, help="iteration cap")
    g.add_argument("--check-interval", type=int, default=50)
    g.add_argument("--batch-size", type=int, default=None, help="default: full batch")
    g.add_argument("--precision", choices=[BINARY32, BINARY64], default=BINARY32)
    g.add_argument("--seed", type=int, default=0)


def _common(p):
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--threads", type=int, default=None,
                   help=f"BLAS threads (default: ${THREADS_ENV} or library default)")


def _spec(args, ternary=False):
    preset = PRESETS.get(args.preset, {})
    width = args.width if args.width is not None else preset.get("width", 512)
    depth = args.depth if args.depth is not None else preset.get("depth", 5)
    if width < 1 or depth < 1:
        raise UsageError("--width and --depth must be positive")
    try:
        act = make_activation(args.act, omega0=args.w0, num_frequencies=args.pe or 10)
    except ValueError as e:
        raise UsageError(str(e)) from None
    return NetSpec(width=width, depth=depth, activation=act, precision=args.precision,
                   seed=args.seed, ternary=ternary, pos_enc=args.pe)


def _config(args, **over):
    kw = dict(loss=args.loss, learning_rate=args.lr, max_iterations=args.iterations,
              check_interval=args.check_interval, batch_size=args.batch_size, seed=args.seed)
    kw.update(over)
    return TrainConfig(**kw)


def _read_signal(path):
    path = str(path)
    if path.lower().endswith(".wav"):
        wav = io.read_wav(path)
        if wav.format_tag != io.WAVE_PCM:
            raise ValueError(f"{path}: float WAV files go through the 'audio' subcommand")
        return io.pcm16_to_signal(wav.samples)
    return io.read_netpbm(path)


def _outputs(args, experiment):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = out / f"{experiment}_seed{args.seed}"
    return stem.with_suffix(".csv"), stem.with_suffix(".json"), stem


def _print_config(args, **extra):
    cfg = {k: v for k, v in vars(args).items() if k != "func"}
    cfg.update(extra)
    print("config: " + json.dumps(io._jsonable(cfg), sort_keys=True, default=str))


def _progress(ck):
    print(f"  it {ck.iteration:6d}  loss {ck.loss:.6g}  ber {ck.ber:.6g}  psnr {ck.psnr:.3f}", flush=True)


# ---------------------------------------------------------------------------
# subcommands


def cmd_fit(args):
    signal = _read_signal(args.input)
    spec = _spec(args)
    config = _config(args, bit_axis=None if not args.parallel else False)
    _print_config(args, net=spec.to_dict(), train=config.to_dict(), bit_depth=signal.bit_depth)
    model = build_model(signal, spec, args.k, parallel=args.parallel, config=config)
    model, report = fit(signal, args.k, model, config, callback=None if args.quiet else _progress)
    csv_path, json_path, stem = _outputs(args, "fit")
    io.write_csv(report, csv_path)
    meta = {"loss": args.loss, "plane_bits": args.k, "n_map": signal.bit_depth // args.k}
    nets = model if isinstance(model, list) else [model]
    model_files = []
    for i, net in enumerate(nets):
        name = stem.with_suffix(".bpinr") if len(nets) == 1 else Path(f"{stem}_plane{i}.bpinr")
        io.save_model(name, net, {**meta, "plane": i if len(nets) > 1 else None})
        model_files.append(str(name))
    io.write_json(json_path, {**report.summary(), "net": spec.to_dict(), "models": model_files})
    print(f"lossless: {report.lossless}  iteration: {report.iteration_at_lossless}  "
          f"final ber: {report.records[-1].ber if report.records else None}")
    if args.require_lossless and not report.lossless:
        return EXIT_NOT_LOSSLESS
    return EXIT_OK


def cmd_decompose(args):
    signal = _read_signal(args.input)
    _print_config(args, bit_depth=signal.bit_depth)
    stack = decompose(signal, args.k)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    depth = 8 if args.k <= 8 else 16
    names = []
    for i in range(stack.num_planes):
        name = f"plane_{i:02d}.pgm" if not signal.has_channels else f"plane_{i:02d}.ppm"
        io.write_netpbm(DigitalSignal(stack.planes[i], depth, signal.has_channels), out / name)
        names.append(name)
    manifest = {"plane_bits": args.k, "bit_depth": signal.bit_depth, "has_channels": signal.has_channels,
                "shape": list(signal.shape), "planes": names, "order": "lsb_first"}
    io.write_json(out / "manifest.json", manifest)
    print(f"wrote {len(names)} planes of {args.k} bit(s) to {out}")
    return EXIT_OK


def cmd_recompose(args):
    src = Path(args.input)
    with open(src / "manifest.json") as f:
        manifest = json.load(f)
    _print_config(args, manifest=manifest)
    planes = np.stack([io.read_netpbm(src / name).samples for name in manifest["planes"]])
    stack = QuantizedStack(planes, manifest["plane_bits"], manifest["bit_depth"], manifest["has_channels"])
    signal = recompose(stack)
    io.write_netpbm(signal, args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_bound(args):
    q = bounds.BoundQuery(args.dim, args.bits, args.lipschitz, args.domain[0], args.domain[1])
    _print_config(args)
    r = bounds.upper_bound(q)
    print(f"n: {args.bits}")
    print(f"d: {args.dim}")
    print(f"relative factor (2^(n+1)-2)^(2d): {r.relative} ({bounds.format_si(r.relative)})")
    print(f"coefficient c: {r.coefficient_exact} (~{r.coefficient:.6g})")
    print(f"absolute bound c*(2^(n+1)-2)^(2d): {r.absolute_exact} (~{bounds.format_si(r.absolute_exact)})")
    if args.json:
        io.write_json(args.json, {"d": args.dim, "n": args.bits, "lipschitz": args.lipschitz,
                                  "domain": list(args.domain), "relative": str(r.relative),
                                  "coefficient": str(r.coefficient_exact),
                                  "absolute": str(r.absolute_exact)})
    return EXIT_OK


def cmd_bitbias(args):
    signal = _read_signal(args.input)
    spec = _spec(args)
    k = signal.bit_depth
    config = _config(args, loss=args.loss, bit_axis=False)
    _print_config(args, net=spec.to_dict(), train=config.to_dict(), plane_bits=k)
    net = build_model(signal, spec, k, config=config)
    _, report = fit(signal, k, net, config, callback=None if args.quiet else _progress)
    profile = applications.bias_profile(report)
    budget = applications.convergence_budget(report)
    idx = profile.nearest(args.fraction * budget)
    csv_path, json_path, _ = _outputs(args, "bitbias")
    io.write_table(csv_path, profile.columns(), profile.rows())
    rho = profile.correlations[idx]
    io.write_json(json_path, {"budget": budget, "fraction": args.fraction,
                              "checkpoint": int(profile.iterations[idx]), "spearman": rho,
                              "per_plane_ber": profile.matrix[idx], "train": report.summary()})
    print(f"budget {budget}; checkpoint {int(profile.iterations[idx])}; spearman (LSB worse > 0): {rho}")
    return EXIT_OK


def cmd_sweep(args):
    signal = _read_signal(args.input)
    spec = _spec(args)
    config = _config(args)
    _print_config(args, net=spec.to_dict(), train=config.to_dict())
    result = applications.hypothesis_sweep(signal, args.ks, spec, config, args.seeds,
                                           parallel=not args.bit_axis)
    csv_path, json_path, _ = _outputs(args, "sweep")
    io.write_table(csv_path, result.columns, result.rows())
    io.write_json(json_path, result.summary())
    for r in result.records:
        print(f"k={r.k}: iterations {r.iterations} median {r.median} params {r.param_count}")
    print(f"nondecreasing in k: {result.ordered}")
    return EXIT_OK


def cmd_expand(args):
    signal = _read_signal(args.input)
    spec = _spec(args)
    config = _config(args, bit_axis=True)
    _print_config(args, net=spec.to_dict(), train=config.to_dict())
    res = applications.expand_bit_depth(signal, args.msbs, spec, config)
    csv_path, json_path, stem = _outputs(args, "expand")
    io.write_csv(res.report, csv_path)
    io.write_json(json_path, res.summary())
    io.write_netpbm(res.predicted, stem.with_suffix(".pgm" if not signal.has_channels else ".ppm"))
    print(f"psnr ours {res.metrics.psnr:.3f}  zero padding {res.baselines['zero_padding'].psnr:.3f}  "
          f"bit replication {res.baselines['bit_replication'].psnr:.3f}  msb exact {res.msb_exact}")
    if args.require_lossless and not res.msb_lossless:
        return EXIT_NOT_LOSSLESS
    return EXIT_OK


def cmd_ternary(args):
    signal = _read_signal(args.input)
    plane_index = signal.bit_depth - 1 if args.plane is None else args.plane
    if not 0 <= plane_index < signal.bit_depth:
        raise UsageError(f"--plane must be in [0, {signal.bit_depth - 1}]")
    plane = DigitalSignal((signal.samples >> np.uint32(plane_index)) & np.uint32(1), 1, signal.has_channels)
    spec = _spec(args, ternary=True)
    config = _config(args, lr_decay=tuple(args.lr_decay) if args.lr_decay else None)
    _print_config(args, net=spec.to_dict(), train=config.to_dict(), plane=plane_index)
    res = applications.fit_ternary(plane, spec, config)
    csv_path, json_path, stem = _outputs(args, "ternary")
    io.write_csv(res.report, csv_path)
    io.save_model(stem.with_suffix(".bpinr"), res.net, {"loss": args.loss, "plane_bits": 1, "n_map": 1})
    io.write_json(json_path, res.summary())
    print(f"lossless: {res.report.lossless}  file {res.file_bytes} B vs binary32 {res.dense_file_bytes} B")
    if args.require_lossless and not res.report.lossless:
        return EXIT_NOT_LOSSLESS
    return EXIT_OK


def cmd_audio(args):
    wav = io.read_wav(args.input)
    samples = wav.samples
    if wav.format_tag == io.WAVE_PCM:
        samples = (samples.astype(np.float32) / np.float32(32768))
    if args.samples:
        samples = samples[: args.samples]
    spec = _spec(args)
    config = _config(args, bit_axis=True)
    _print_config(args, net=spec.to_dict(), train=config.to_dict(), clip_length=len(samples))
    res = applications.fit_audio_fp32(samples, spec, config)
    csv_path, json_path, stem = _outputs(args, "audio")
    io.write_csv(res.report, csv_path)
    io.write_wav(stem.with_suffix(".wav"), res.reconstructed.astype(np.float32), wav.sample_rate)
    io.write_json(json_path, {**res.report.summary(), "exact": res.exact})
    print(f"bit-exact: {res.exact}")
    if args.require_lossless and not res.exact:
        return EXIT_NOT_LOSSLESS
    return EXIT_OK


def cmd_metrics(args):
    a = _read_signal(args.reference)
    b = _read_signal(args.test)
    _print_config(args)
    rep = metrics.evaluate(b, a, with_ssim=min(a.spatial_shape) >= metrics.SSIM_WIN)
    for key, val in rep.to_dict().items():
        print(f"{key}: {val}")
    if args.json:
        io.write_json(args.json, rep.to_dict())
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser():
    p = argparse.ArgumentParser(prog="bpinr", description="Lossless bit-plane coordinate networks.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("fit", help="fit a PGM/PPM or PCM16 WAV signal")
    s.add_argument("input")
    s.add_argument("--k", type=int, default=1, help="bits per plane")
    s.add_argument("--parallel", action="store_true", help="one network per plane, no bit axis")
    s.add_argument("--require-lossless", action="store_true")
    s.add_argument("--quiet", action="store_true")
    _net_flags(s)
    _common(s)
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("decompose", help="write the k-bit planes of an image")
    s.add_argument("input")
    s.add_argument("--k", type=int, default=1)
    _common(s)
    s.set_defaults(func=cmd_decompose, seed=0)

    s = sub.add_parser("recompose", help="rebuild an image from a decompose directory")
    s.add_argument("input", help="directory with manifest.json")
    s.add_argument("--out", required=True, help="output image path")
    s.add_argument("--threads", type=int, default=None)
    s.set_defaults(func=cmd_recompose, seed=0)

    s = sub.add_parser("bound", help="explicit parameter upper bound")
    s.add_argument("--dim", type=int, required=True)
    s.add_argument("--bits", type=int, required=True)
    s.add_argument("--lipschitz", type=float, default=0.0)
    s.add_argument("--domain", type=float, nargs=2, default=[-1.0, 1.0], metavar=("A", "B"))
    s.add_argument("--json", default=None, help="also write the result here")
    s.add_argument("--threads", type=int, default=None)
    s.set_defaults(func=cmd_bound, seed=0)

    s = sub.add_parser("bitbias", help="per-plane BER of a plain (undecomposed) fit")
    s.add_argument("input")
    s.add_argument("--fraction", type=float, default=0.25, help="checkpoint as a share of the budget")
    s.add_argument("--quiet", action="store_true")
    _net_flags(s, loss="mse")
    _common(s)
    s.set_defaults(func=cmd_bitbias)

    s = sub.add_parser("sweep", help="iterations-to-lossless over plane widths k")
    s.add_argument("input")
    s.add_argument("--ks", type=int, nargs="+", default=[1, 2, 4])
    s.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    s.add_argument("--bit-axis", action="store_true", help="one shared bit-axis network")
    _net_flags(s, loss="mse")
    _common(s)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("expand", help="predict unseen low bit planes of a 16-bit image")
    s.add_argument("input")
    s.add_argument("--msbs", type=int, default=8)
    s.add_argument("--require-lossless", action="store_true")
    _net_flags(s)
    _common(s)
    s.set_defaults(func=cmd_expand)

    s = sub.add_parser("ternary", help="ternary-weight fit of one bit plane")
    s.add_argument("input")
    s.add_argument("--plane", type=int, default=None, help="bit index (default: MSB)")
    s.add_argument("--lr-decay", type=float, nargs=2, default=None, metavar=("FACTOR", "EVERY"))
    s.add_argument("--require-lossless", action="store_true")
    _net_flags(s, act="gelu", lr=1e-3)
    _common(s)
    s.set_defaults(func=cmd_ternary)

    s = sub.add_parser("audio", help="fit the 32 binary32 bit planes of a WAV clip")
    s.add_argument("input")
    s.add_argument("--samples", type=int, default=None, help="use only the first N samples")
    s.add_argument("--require-lossless", action="store_true")
    _net_flags(s, lr=5e-4, iterations=50000)
    _common(s)
    s.set_defaults(func=cmd_audio)

    s = sub.add_parser("metrics", help="BER, RMSE, PSNR and SSIM of two images")
    s.add_argument("reference")
    s.add_argument("test")
    s.add_argument("--json", default=None)
    s.add_argument("--threads", type=int, default=None)
    s.set_defaults(func=cmd_metrics, seed=0)
    return p


def _thread_limit(n):
    if n is None:
        env = os.environ.get(THREADS_ENV)
        n = int(env) if env else None
    if n is None:
        return nullcontext()
    if n < 1:
        raise UsageError("--threads must be >= 1")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        with _thread_limit(args.threads):
            return args.func(args)
    except UsageError as e:
        print(f"bpinr {args.command}: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, OSError, KeyError) as e:
        print(f"bpinr {args.command}: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
