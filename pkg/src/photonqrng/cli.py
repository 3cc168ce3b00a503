"""Command-line front end: simulate, analyze, extract, test, bench, pipeline.

Exit codes: 0 success, 1 usage error, 2 validation failure, 3 the FFT
rounding check failed and fallback to the exact path was disabled.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from pathlib import Path
from typing import Optional, Sequence


from . import __version__
from .analysis import RateReport, max_bin_deviation, rate_report
from .extractor import (
    DEFAULT_BLOCK_N,
    DEFAULT_EPSILON,
    BitBlock,
    ExtractionError,
    ExtractionPlan,
    PrecisionError,
    ToeplitzHasher,
    ToeplitzSeed,
    benchmark,
    extract_stream,
    reference_geometry,
    plan_extraction,
    symbols_to_bits,
)
from .files import (
    ConfigError,
    ManifestError,
    load_config,
    new_manifest,
    read_bits,
    read_symbols,
    write_bits,
    write_json,
    write_symbols,
)
from .model import SourceConfig, entropy_report, raw_symbol_distribution
from .simulator import RawSymbolStream, simulate
from .stattests import ALPHA, SequenceTooShort, format_table, run_battery

log = logging.getLogger(__name__)

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_PRECISION = 0, 1, 2, 3

DEFAULT_TOEPLITZ_SEED = 0


class UsageError(Exception):
    pass


class SequenceError(ValueError):
    pass


# ---------------------------------------------------------------- core steps

def analyze_stream(stream: RawSymbolStream) -> dict:
    """Entropy bound and histogram for a recorded stream, as a report document."""
    config = stream.config
    hist = stream.histogram()
    report = entropy_report(config, histogram=hist)
    total = int(hist.sum())
    model = raw_symbol_distribution(config).probs
    return {
        "entropy": report.to_dict(),
        "histogram": {
            "num_bins": config.num_bins,
            "counts": hist.tolist(),
            "probabilities": (hist / total).tolist() if total else [0.0] * config.num_bins,
            "model_probabilities": model.tolist(),
            "uniform": 1.0 / config.num_bins,
            "max_deviation": max_bin_deviation(hist) if total else None,
        },
        "rates": {
            "spad_count_rate": stream.spad_count_rate,
            "detection_rate": stream.detection_rate,
            "raw_bit_rate": stream.raw_bit_rate,
            "nominal_raw_bit_rate": stream.spad_count_rate * math.log2(config.num_bins),
        },
    }


def make_plan(config: SourceConfig, block_n: int = DEFAULT_BLOCK_N,
              epsilon: Optional[float] = DEFAULT_EPSILON,
              use_reference_geometry: bool = False) -> ExtractionPlan:
    h = entropy_report(config).min_entropy_bound_per_bit
    if use_reference_geometry:
        return reference_geometry(h)
    return plan_extraction(h, block_n, epsilon)


def extract_symbols(stream: RawSymbolStream, plan: ExtractionPlan,
                    toeplitz_seed: int = DEFAULT_TOEPLITZ_SEED, strict_precision: bool = False,
                    workers: Optional[int] = None) -> tuple[BitBlock, dict]:
    """Hash a symbol stream; returns the output and the manifest fields describing it."""
    raw = symbols_to_bits(stream)
    if raw.length < plan.n:
        raise ExtractionError(
            f"raw stream has {raw.length} bits, fewer than one block of n={plan.n}; "
            f"simulate at least {math.ceil(plan.n / math.log2(stream.config.num_bins))} symbols")
    seed = ToeplitzSeed.random(plan.n, plan.m, toeplitz_seed)
    hasher = ToeplitzHasher(seed, fallback=not strict_precision)
    out = extract_stream(raw, seed, workers=workers, hasher=hasher)
    blocks = raw.length // plan.n
    fields = {
        "source": _source_fields(stream),
        "extraction": {
            "n": plan.n, "m": plan.m, "epsilon": plan.epsilon,
            "min_entropy_per_bit": plan.min_entropy_per_bit,
            "seed_generator_seed": toeplitz_seed,
            "precision_fallbacks": hasher.fallbacks,
            "max_rounding_error": hasher.max_rounding_error,
        },
        "counts": {
            "symbols": stream.detections_recorded,
            "raw_bits": raw.length,
            "blocks": blocks,
            "discarded_raw_bits": raw.length - blocks * plan.n,
            "extracted_bits": out.length,
        },
    }
    fields["rates"] = rate_report_from_manifest(fields).to_dict()
    return out, fields


def _source_fields(stream: RawSymbolStream) -> dict:
    meta = stream.metadata()
    meta["spad_count_rate"] = stream.spad_count_rate
    meta["raw_bit_rate"] = stream.raw_bit_rate
    return meta


def rate_report_from_manifest(manifest: dict,
                              observed_raw_bit_rate: Optional[float] = None) -> RateReport:
    """Rate chain from the numbers recorded in an extraction manifest.

    The observed raw rate defaults to the one recorded for the source; pass
    a measured figure to reproduce a lab rate chain.
    """
    source, geo = manifest["source"], manifest["extraction"]
    observed = source.get("raw_bit_rate") if observed_raw_bit_rate is None else observed_raw_bit_rate
    return rate_report(source["spad_count_rate"], source["config"]["num_bins"],
                       geo["n"], geo["m"], observed)


def split_sequences(bits: BitBlock, seq_bits: int, sequences: Optional[int] = None) -> list:
    if seq_bits <= 0:
        raise SequenceError(f"--seq-bits must be positive, got {seq_bits}")
    available = bits.length // seq_bits
    if sequences is None:
        sequences = available
    if sequences < 2:
        raise SequenceError(f"the battery needs at least 2 sequences of {seq_bits} bits; "
                            f"{bits.length} bits give {available}")
    if sequences > available:
        raise SequenceError(f"{sequences} sequences of {seq_bits} bits need "
                            f"{sequences * seq_bits} bits, input has {bits.length}")
    return [bits.slice_bits(k * seq_bits, seq_bits) for k in range(sequences)]


def battery_report(bits: BitBlock, seq_bits: int, sequences: Optional[int] = None,
                   alpha: float = ALPHA, workers: int = 1):
    seqs = split_sequences(bits, seq_bits, sequences)
    return run_battery(seqs, alpha=alpha, workers=workers)


# ---------------------------------------------------------------- commands

def cmd_simulate(config_path, seed: int, symbols: int, out, offset: float = 0.0) -> dict:
    config = load_config(config_path)
    stream = simulate(config, seed, symbols, reference_offset=offset)
    return write_symbols(out, stream)


def cmd_analyze(symbol_path, out=None) -> dict:
    stream = read_symbols(symbol_path)
    result = {"tool": "photonqrng", "version": __version__, "input": str(symbol_path)}
    result.update(analyze_stream(stream))
    if out is not None:
        write_json(out, result)
    return result


def cmd_extract(symbol_path, out, epsilon: Optional[float] = DEFAULT_EPSILON,
                block_n: int = DEFAULT_BLOCK_N, use_reference_geometry: bool = False,
                toeplitz_seed: int = DEFAULT_TOEPLITZ_SEED, strict_precision: bool = False,
                plan_only: bool = False, workers: Optional[int] = None) -> dict:
    stream = read_symbols(symbol_path)
    plan = make_plan(stream.config, block_n, epsilon, use_reference_geometry)
    if plan_only:
        return {"extraction": {"n": plan.n, "m": plan.m, "epsilon": plan.epsilon,
                               "min_entropy_per_bit": plan.min_entropy_per_bit,
                               "ratio": plan.ratio}}
    bits, fields = extract_symbols(stream, plan, toeplitz_seed, strict_precision, workers)
    return write_bits(out, bits, kind="extracted", input=Path(symbol_path).name, **fields)


def cmd_test(bit_path, sequences: Optional[int], seq_bits: int, alpha: float = ALPHA,
             out=None, workers: int = 1) -> dict:
    bits = read_bits(bit_path)
    report = battery_report(bits, seq_bits, sequences, alpha, workers)
    result = {"tool": "photonqrng", "version": __version__, "input": str(bit_path),
              "seq_bits": seq_bits, **report.to_dict(), "table": format_table(report)}
    if out is not None:
        write_json(out, result)
    return result


def cmd_bench(block_ns: Sequence[int], trials: int = 1, sim_symbols: int = 10**6,
              rng_seed: int = 0) -> dict:
    rows = benchmark(block_ns, trials=trials, rng_seed=rng_seed)
    from .model import reference_config
    t0 = time.perf_counter()
    simulate(reference_config(), rng_seed, sim_symbols)
    elapsed = time.perf_counter() - t0
    return {"extractor": rows,
            "simulator": {"symbols": sim_symbols, "seconds": elapsed,
                          "symbols_per_second": sim_symbols / elapsed}}


def cmd_pipeline(config_path, seed: int, symbols: int, outdir,
                 epsilon: Optional[float] = DEFAULT_EPSILON, block_n: int = DEFAULT_BLOCK_N,
                 toeplitz_seed: int = DEFAULT_TOEPLITZ_SEED, sequences: Optional[int] = None,
                 seq_bits: int = 10**6, alpha: float = ALPHA, workers: int = 1) -> dict:
    """simulate -> analyze -> extract -> test under one manifest ``manifest.json``."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    config = load_config(config_path)
    stream = simulate(config, seed, symbols)
    analysis = analyze_stream(stream)
    plan = make_plan(config, block_n, epsilon)
    bits, fields = extract_symbols(stream, plan, toeplitz_seed, workers=workers)
    report = battery_report(bits, seq_bits, sequences, alpha, workers)

    # data files keep their own sidecars so the other commands can read them
    sym_path, bit_path = outdir / "symbols.bin", outdir / "extracted.bin"
    write_symbols(sym_path, stream)
    write_bits(bit_path, bits, kind="extracted", input=sym_path.name, **fields)
    write_json(outdir / "analysis.json", analysis)
    battery = {**report.to_dict(), "seq_bits": seq_bits}
    write_json(outdir / "battery.json", battery)
    files = {name: {"path": p.name, "bytes": p.stat().st_size}
             for name, p in [("symbols", sym_path), ("bits", bit_path),
                             ("analysis", outdir / "analysis.json"),
                             ("battery", outdir / "battery.json")]}
    manifest = new_manifest("pipeline", files=files, bits=bits.length, **fields,
                            battery={"seq_bits": seq_bits, "sequences": report.sequences,
                                     "alpha": alpha, "flagged": report.flagged()})
    write_json(outdir / "manifest.json", manifest)
    manifest["table"] = format_table(report)
    return manifest


# ---------------------------------------------------------------- argparse

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _epsilon(text: str) -> Optional[float]:
    if text.lower() in ("none", "off", "0"):
        return None
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0.0 < value < 1.0:
        raise argparse.ArgumentTypeError(f"epsilon must lie in (0, 1), got {value}")
    return value


def _int(text: str) -> int:
    """Integers, also written as 1e6 or 2**20."""
    try:
        if "**" in text:
            base, exp = text.split("**")
            return int(base) ** int(exp)
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if value != int(value):
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    return int(value)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="photonqrng", description="Photon-arrival-time QRNG toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="simulate detections and write a symbol file")
    p.add_argument("config", help="source config file (key = value, SI units)")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--symbols", type=_int, required=True)
    p.add_argument("--offset", type=float, default=0.0, help="reference offset in seconds")
    p.add_argument("--out", required=True)

    p = sub.add_parser("analyze", help="entropy report and histogram for a symbol file")
    p.add_argument("symbols")
    p.add_argument("--out", help="write the JSON report here")

    p = sub.add_parser("extract", help="Toeplitz-hash a symbol file into packed bits")
    p.add_argument("symbols")
    p.add_argument("--out")
    p.add_argument("--epsilon", type=_epsilon, default=DEFAULT_EPSILON,
                   help="security parameter, or 'none' to drop the 2 log2(1/eps) term")
    p.add_argument("--block-n", type=_int, default=DEFAULT_BLOCK_N)
    p.add_argument("--paper-geometry", action="store_true",
                   help="use n=33,600,000, m=29,500,000")
    p.add_argument("--toeplitz-seed", type=int, default=DEFAULT_TOEPLITZ_SEED,
                   help="generator seed for the matrix bits")
    p.add_argument("--strict-precision", action="store_true",
                   help="fail (exit 3) instead of falling back to exact hashing")
    p.add_argument("--plan-only", action="store_true", help="print the geometry and stop")
    p.add_argument("--workers", type=int)

    p = sub.add_parser("test", help="run the statistical battery on a bit file")
    p.add_argument("bits")
    p.add_argument("--sequences", type=_int)
    p.add_argument("--seq-bits", type=_int, default=10**6)
    p.add_argument("--alpha", type=float, default=ALPHA)
    p.add_argument("--out")
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("bench", help="naive vs FFT hashing and simulator throughput")
    p.add_argument("--block-n", type=_int, nargs="+", default=[1 << 14, 1 << 17, 1 << 20])
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--sim-symbols", type=_int, default=10**6)
    p.add_argument("--out")

    p = sub.add_parser("pipeline", help="simulate, analyze, extract and test in one run")
    p.add_argument("config")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--symbols", type=_int, required=True)
    p.add_argument("--outdir", required=True)
    p.add_argument("--epsilon", type=_epsilon, default=DEFAULT_EPSILON)
    p.add_argument("--block-n", type=_int, default=DEFAULT_BLOCK_N)
    p.add_argument("--toeplitz-seed", type=int, default=DEFAULT_TOEPLITZ_SEED)
    p.add_argument("--sequences", type=_int)
    p.add_argument("--seq-bits", type=_int, default=10**6)
    p.add_argument("--alpha", type=float, default=ALPHA)
    p.add_argument("--workers", type=int, default=1)
    return parser


def _print_analysis(result: dict) -> None:
    e = result["entropy"]
    print(f"mu = {e['mu']:.4f}, N = {e['num_bins']}")
    print(f"P1 bound           {e['p1_bound']:.6e}")
    print(f"min-entropy bound  {e['min_entropy_bound_per_symbol']:.4f} bits/symbol, "
          f"{e['min_entropy_bound_per_bit']:.4f} bits/bit")
    emp = e.get("empirical_min_entropy_per_symbol")
    if emp is not None:
        print(f"empirical          {emp:.4f} bits/symbol over {sum(result['histogram']['counts'])} symbols")
    r = result["rates"]
    print(f"SPAD count rate    {r['spad_count_rate'] / 1e6:.3f} Mcps, raw bit rate "
          f"{r['raw_bit_rate'] / 1e6:.2f} Mbps")


def _run(args) -> int:
    if args.command == "simulate":
        m = cmd_simulate(args.config, args.seed, args.symbols, args.out, args.offset)
        print(f"wrote {m['detections_recorded']} symbols to {args.out}")
    elif args.command == "analyze":
        _print_analysis(cmd_analyze(args.symbols, args.out))
    elif args.command == "extract":
        if args.out is None and not args.plan_only:
            raise UsageError("photonqrng extract: --out is required unless --plan-only is given")
        m = cmd_extract(args.symbols, args.out, args.epsilon, args.block_n, args.paper_geometry,
                        args.toeplitz_seed, args.strict_precision, args.plan_only, args.workers)
        g = m["extraction"]
        print(f"n = {g['n']}, m = {g['m']}, ratio = {g['m'] / g['n']:.6f}, "
              f"min-entropy bound {g['min_entropy_per_bit']:.6f} bits/bit")
        if not args.plan_only:
            print(f"wrote {m['counts']['extracted_bits']} bits to {args.out}")
    elif args.command == "test":
        print(cmd_test(args.bits, args.sequences, args.seq_bits, args.alpha, args.out,
                       args.workers)["table"])
    elif args.command == "bench":
        result = cmd_bench(args.block_n, args.trials, args.sim_symbols)
        print(f"{'n':>10}{'m':>10}{'naive s':>10}{'fast s':>10}{'speedup':>9}  identical")
        for row in result["extractor"]:
            print(f"{row['n']:>10}{row['m']:>10}{row['naive_seconds']:>10.4f}"
                  f"{row['fast_seconds']:>10.4f}{row['speedup']:>9.1f}  {row['identical']}")
        sim = result["simulator"]
        print(f"simulator: {sim['symbols_per_second'] / 1e6:.2f} M symbols/s")
        if args.out:
            write_json(args.out, result)
    elif args.command == "pipeline":
        m = cmd_pipeline(args.config, args.seed, args.symbols, args.outdir, args.epsilon,
                         args.block_n, args.toeplitz_seed, args.sequences, args.seq_bits,
                         args.alpha, args.workers)
        print(m["table"])
        print(f"manifest: {Path(args.outdir) / 'manifest.json'}")
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _run(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except PrecisionError as exc:
        print(f"precision error: {exc}", file=sys.stderr)
        return EXIT_PRECISION
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
    except ManifestError as exc:
        print(f"manifest error: {exc}", file=sys.stderr)
    except ExtractionError as exc:
        print(f"extraction error: {exc}", file=sys.stderr)
    except (SequenceError, SequenceTooShort) as exc:
        print(f"sequence length error: {exc}", file=sys.stderr)
    except FileNotFoundError as exc:
        print(f"file error: {exc.filename}: no such file", file=sys.stderr)
    except (ValueError, json.JSONDecodeError, KeyError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
    return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
