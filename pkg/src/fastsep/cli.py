"""Command-line pipeline: synthesis, separation, evaluation, benchmarking.

Exit codes: 0 success, 2 usage error, 3 I/O error, 4 numerical failure.
All commands are deterministic under a fixed --seed. WAV files are written
as 32-bit float PCM.
"""

import argparse
import csv
import datetime
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import (
    DegenerateModelError,
    FastsepError,
    InvalidInputError,
    NumericalBreakdownError,
    SingularMatrixError,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERICAL = 4

# keys accepted in a --config file, mapped onto the matching flags
CONFIG_KEYS = {
    "method", "sources", "bases", "iters", "seed", "win", "hop", "out",
    "duration", "mics", "threads", "taps", "sample_rate", "channel",
}


def _int_pair_list(text):
    return [int(v) for v in text.split(",") if v]


def read_wav(path):
    """Read a WAV file as (sample_rate, float64 array of shape (L, M))."""
    from scipy.io import wavfile

    try:
        rate, data = wavfile.read(path)
    except (OSError, ValueError) as exc:
        raise OSError(f"cannot read WAV file {path}: {exc}") from exc
    if data.ndim == 1:
        data = data[:, None]
    if np.issubdtype(data.dtype, np.integer):
        data = data.astype(np.float64) / float(np.iinfo(data.dtype).max)
    else:
        data = data.astype(np.float64)
    return rate, data


def write_wav(path, rate, data):
    """Write (L, M) float data as 32-bit float PCM."""
    from scipy.io import wavfile

    out = np.asarray(data, dtype=np.float32)
    if out.ndim == 1:
        out = out[:, None]
    try:
        wavfile.write(path, int(rate), out)
    except OSError as exc:
        raise OSError(f"cannot write WAV file {path}: {exc}") from exc


def write_manifest(path, entries):
    with open(path, "w") as fh:
        for key, value in entries.items():
            fh.write(f"{key}={value}\n")


def _manifest_base(args, command):
    import scipy

    return {
        "command": command,
        "fastsep_version": __version__,
        "numpy_version": np.__version__,
        "scipy_version": scipy.__version__,
        "python_version": platform.python_version(),
        "platform": platform.platform(),
        "started_utc": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "seed": args.seed,
    }


def _limit_threads(n):
    if n is None:
        return None
    try:
        from threadpoolctl import threadpool_limits

        return threadpool_limits(limits=n)
    except ImportError:
        return None


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_separate(args):
    from .separate import SeparatorConfig, run
    from .stft import istft, stft

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    rate, wave = read_wav(args.input)
    if wave.shape[0] < args.win:
        raise InvalidInputError(
            f"input of {wave.shape[0]} samples is shorter than one window"
        )
    X = stft(wave, args.win, args.hop)
    cfg = SeparatorConfig(
        method=args.method,
        n_sources=args.sources,
        n_basis=args.bases,
        n_iterations=args.iters,
        seed=args.seed,
    )
    result = run(cfg, X)
    outputs = []
    for n in range(args.sources):
        est = istft(result.images_NFTM[n], args.win, args.hop, length=wave.shape[0])
        dest = out_dir / f"source_{n + 1}.wav"
        write_wav(dest, rate, est)
        outputs.append(dest.name)
    trace_path = out_dir / "trace.csv"
    with open(trace_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "log_likelihood", "seconds"])
        for i, (ll, sec) in enumerate(
            zip(result.likelihood_trace, result.time_trace)
        ):
            writer.writerow([i, f"{ll:.10e}", f"{sec:.6f}"])
    manifest = _manifest_base(args, "separate")
    manifest.update(
        {
            "method": args.method,
            "sources": args.sources,
            "bases": args.bases,
            "iters": args.iters,
            "win": args.win,
            "hop": args.hop,
            "input": args.input,
            "sample_rate": rate,
            "samples": wave.shape[0],
            "channels": wave.shape[1],
            "outputs": ";".join(outputs + [trace_path.name]),
            "elapsed_seconds": f"{time.perf_counter() - started:.3f}",
        }
    )
    write_manifest(out_dir / "manifest.txt", manifest)
    return EXIT_OK


def cmd_synth(args):
    from .synth import make_scenario

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    mixture, images = make_scenario(
        n_sources=args.sources,
        n_channels=args.mics,
        duration=args.duration,
        sample_rate=args.sample_rate,
        seed=args.seed,
        n_taps=args.taps,
    )
    peak = max(np.abs(mixture).max(), 1e-9)
    scale = 0.5 / peak  # headroom against clipping in float WAV consumers
    write_wav(out_dir / "mixture.wav", args.sample_rate, mixture * scale)
    outputs = ["mixture.wav"]
    for n in range(args.sources):
        name = f"reference_{n + 1}.wav"
        write_wav(out_dir / name, args.sample_rate, images[n] * scale)
        outputs.append(name)
    manifest = _manifest_base(args, "synth")
    manifest.update(
        {
            "sources": args.sources,
            "mics": args.mics,
            "duration": args.duration,
            "sample_rate": args.sample_rate,
            "taps": args.taps,
            "outputs": ";".join(outputs),
        }
    )
    write_manifest(out_dir / "manifest.txt", manifest)
    return EXIT_OK


def cmd_eval(args):
    from .evaluate import evaluate_separation, write_report_csv

    rate_m, mixture = read_wav(args.mixture)
    estimates, references = [], []
    for path in args.estimates:
        _, data = read_wav(path)
        estimates.append(data)
    for path in args.references:
        _, data = read_wav(path)
        references.append(data)
    if len(estimates) != len(references):
        raise InvalidInputError(
            f"{len(estimates)} estimates vs {len(references)} references"
        )
    length = min(min(e.shape[0] for e in estimates), min(r.shape[0] for r in references), mixture.shape[0])
    est = np.stack([e[:length] for e in estimates])
    ref = np.stack([r[:length] for r in references])
    reports = evaluate_separation(
        est, ref, mixture[:length], method=args.method, channel=args.channel
    )
    write_report_csv(args.out, reports)
    for r in reports:
        print(
            f"source {r.source + 1}: si_sdr {r.si_sdr_db:.2f} dB "
            f"(input {r.input_si_sdr_db:.2f} dB, improvement {r.improvement_db:.2f} dB)"
        )
    return EXIT_OK


def cmd_benchmark(args):
    from .evaluate import timing_stats
    from .separate import SeparatorConfig, run
    from .stft import stft
    from .synth import make_scenario

    mixture, _ = make_scenario(
        n_sources=max(args.sources_grid),
        n_channels=args.mics,
        duration=args.duration,
        sample_rate=args.sample_rate,
        seed=args.seed,
    )
    X = stft(mixture, args.win, args.hop)
    rows = []
    for method in args.methods:
        for n in args.sources_grid:
            for k in args.bases_grid:
                cfg = SeparatorConfig(
                    method=method,
                    n_sources=n,
                    n_basis=k,
                    n_iterations=args.iters,
                    seed=args.seed,
                    record_likelihood=False,
                )
                result = run(cfg, X)
                mean_s, median_s = timing_stats(result.time_trace)
                rows.append([method, n, k, args.iters, f"{mean_s:.6f}", f"{median_s:.6f}"])
                print(
                    f"{method} N={n} K={k}: mean {mean_s:.3f} s/iter, "
                    f"median {median_s:.3f} s/iter"
                )
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "sources", "bases", "iterations", "mean_seconds", "median_seconds"])
        writer.writerows(rows)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser & dispatch
# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="fastsep",
        description="Multichannel blind source separation toolkit",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def add_common(p):
        p.add_argument("--seed", type=int, default=0, help="random seed")
        p.add_argument("--threads", type=int, default=None, help="cap BLAS threads")
        p.add_argument("--config", type=str, default=None,
                       help="key=value file; explicit flags take precedence")

    p_sep = sub.add_parser("separate", help="separate a multichannel WAV")
    p_sep.add_argument("input", help="multichannel WAV file")
    p_sep.add_argument("--method", default="fast-mnmf",
                       choices=["fca", "mnmf", "mnmf-dp", "fast-fca", "fast-mnmf", "fast-mnmf-dp"])
    p_sep.add_argument("--sources", type=int, default=2, help="number of sources N")
    p_sep.add_argument("--bases", type=int, default=16, help="NMF bases K")
    p_sep.add_argument("--iters", type=int, default=100, help="iterations")
    p_sep.add_argument("--win", type=int, default=1024, help="STFT window length")
    p_sep.add_argument("--hop", type=int, default=256, help="STFT hop")
    p_sep.add_argument("--out", default="separated", help="output directory")
    add_common(p_sep)
    p_sep.set_defaults(func=cmd_separate)

    p_syn = sub.add_parser("synth", help="synthesize a convolutive mixture with references")
    p_syn.add_argument("--sources", type=int, default=2)
    p_syn.add_argument("--mics", type=int, default=4)
    p_syn.add_argument("--duration", type=float, default=8.0, help="seconds")
    p_syn.add_argument("--sample-rate", type=int, default=16000, dest="sample_rate")
    p_syn.add_argument("--taps", type=int, default=200, help="RIR length in samples")
    p_syn.add_argument("--out", default="synth", help="output directory")
    add_common(p_syn)
    p_syn.set_defaults(func=cmd_synth)

    p_eval = sub.add_parser("eval", help="evaluate separated WAVs against references")
    p_eval.add_argument("--estimates", nargs="+", required=True)
    p_eval.add_argument("--references", nargs="+", required=True)
    p_eval.add_argument("--mixture", required=True)
    p_eval.add_argument("--method", default="", help="method label for the report")
    p_eval.add_argument("--channel", type=int, default=0, help="evaluation channel")
    p_eval.add_argument("--out", default="report.csv")
    add_common(p_eval)
    p_eval.set_defaults(func=cmd_eval)

    p_bench = sub.add_parser("benchmark", help="per-iteration timing over a method grid")
    p_bench.add_argument("--methods", type=lambda s: s.split(","),
                         default=["mnmf", "fast-mnmf"],
                         help="comma-separated method names")
    p_bench.add_argument("--sources-grid", type=_int_pair_list, default=[2, 5],
                         dest="sources_grid")
    p_bench.add_argument("--bases-grid", type=_int_pair_list, default=[4, 16],
                         dest="bases_grid")
    p_bench.add_argument("--iters", type=int, default=6)
    p_bench.add_argument("--duration", type=float, default=8.0)
    p_bench.add_argument("--mics", type=int, default=5)
    p_bench.add_argument("--sample-rate", type=int, default=16000, dest="sample_rate")
    p_bench.add_argument("--win", type=int, default=1024)
    p_bench.add_argument("--hop", type=int, default=256)
    p_bench.add_argument("--out", default="benchmark.csv")
    add_common(p_bench)
    p_bench.set_defaults(func=cmd_benchmark)
    return parser


def _apply_config_file(parser, argv):
    """Load key=value defaults from a --config file before the real parse."""
    path = None
    for i, token in enumerate(argv):
        if token == "--config" and i + 1 < len(argv):
            path = argv[i + 1]
        elif token.startswith("--config="):
            path = token.split("=", 1)[1]
    if path is None:
        return
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise OSError(f"cannot read config file {path}: {exc}") from exc
    overrides = {}
    for ln, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidInputError(f"{path}:{ln}: expected key=value")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise InvalidInputError(f"{path}:{ln}: unknown config key {key!r}")
        for cast in (int, float, str):
            try:
                value = cast(value)
                break
            except ValueError:
                continue
        overrides[key] = value
    for action in parser._subparsers._group_actions:
        for sp in action.choices.values():
            sp.set_defaults(**{k: v for k, v in overrides.items()
                               if any(a.dest == k for a in sp._actions)})


def _validate(parser, args):
    checks = [
        ("sources", 1, "--sources must be >= 1"),
        ("bases", 1, "--bases must be >= 1"),
        ("iters", 1, "--iters must be >= 1"),
        ("mics", 1, "--mics must be >= 1"),
    ]
    for name, low, message in checks:
        if getattr(args, name, low) < low:
            parser.error(message)
    if getattr(args, "duration", 1.0) <= 0:
        parser.error("--duration must be positive")


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config_file(parser, argv)
        args = parser.parse_args(argv)
        _validate(parser, args)
        limiter = _limit_threads(args.threads)
        try:
            return args.func(args)
        finally:
            if limiter is not None:
                limiter.unregister()
    except InvalidInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (SingularMatrixError, NumericalBreakdownError, DegenerateModelError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except FastsepError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
