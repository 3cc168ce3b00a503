"""On-disk formats: source config, symbol/bit files and their JSON manifests.

Symbol files hold one byte per symbol and bit files hold packed bits, most
significant bit first; both are headerless. Each data file ``X`` has a
sidecar manifest ``X.json`` recording how it was made and its exact size.
"""
from __future__ import annotations

import configparser
import datetime as _dt
import json
import math
from decimal import Decimal
from pathlib import Path
from typing import Union

import numpy as np

from . import __version__
from .extractor import BitBlock
from .model import SourceConfig
from .simulator import RawSymbolStream

__all__ = [
    "ConfigError",
    "ManifestError",
    "load_config",
    "dump_config",
    "config_from_mapping",
    "manifest_path",
    "new_manifest",
    "write_manifest",
    "read_manifest",
    "verify_manifest",
    "write_symbols",
    "read_symbols",
    "write_bits",
    "read_bits",
    "write_json",
]

PathLike = Union[str, Path]

_NS_PER_S = 1e9


class ConfigError(ValueError):
    pass


class ManifestError(ValueError):
    pass


def _float(section, key, default=None):
    if key not in section:
        if default is None:
            raise ConfigError(f"config is missing required key {key!r}")
        return default
    try:
        return float(section[key])
    except ValueError:
        raise ConfigError(f"config key {key!r} is not a number: {section[key]!r}") from None


def _ns(section, key, default=None) -> float:
    """Nanoseconds to seconds, rounded once so ``40.96`` gives exactly ``40.96e-9``."""
    _float(section, key, default)
    if key not in section:
        return default
    return float(Decimal(section[key].strip()).scaleb(-9))


def config_from_mapping(section) -> SourceConfig:
    """Build a config from ``period_ns``, ``bin_count``, ``dead_time_ns``,
    ``dark_rate_cps``, ``efficiency`` and either ``mu`` or ``lambda_rate_cps``."""
    known = {"period_ns", "bin_count", "dead_time_ns", "dark_rate_cps", "efficiency",
             "mu", "lambda_rate_cps"}
    unknown = set(section) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    period = _ns(section, "period_ns")
    bins = _float(section, "bin_count")
    if bins != int(bins):
        raise ConfigError(f"bin_count must be an integer, got {section['bin_count']!r}")
    efficiency = _float(section, "efficiency", 1.0)
    dead = _ns(section, "dead_time_ns", 0.0)
    dark = _float(section, "dark_rate_cps", 0.0)
    if ("mu" in section) == ("lambda_rate_cps" in section):
        raise ConfigError("config must give exactly one of 'mu' or 'lambda_rate_cps'")
    try:
        if "mu" in section:
            return SourceConfig.from_mu(_float(section, "mu"), period, int(bins), efficiency,
                                        dead, dark)
        return SourceConfig(_float(section, "lambda_rate_cps"), efficiency, period, int(bins),
                            dead, dark)
    except ValueError as exc:
        raise ConfigError(f"invalid source parameters: {exc}") from None


def load_config(path: PathLike) -> SourceConfig:
    """Read a flat ``key = value`` file; a ``[source]`` header is optional."""
    text = Path(path).read_text()
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        if not any(line.strip().startswith("[") for line in text.splitlines()):
            text = "[source]\n" + text
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from None
    if not parser.has_section("source"):
        raise ConfigError(f"config {path} has no [source] section")
    return config_from_mapping(dict(parser["source"]))


def dump_config(config: SourceConfig) -> str:
    return (f"period_ns = {config.period * _NS_PER_S!r}\n"
            f"bin_count = {config.num_bins}\n"
            f"dead_time_ns = {config.dead_time * _NS_PER_S!r}\n"
            f"dark_rate_cps = {config.dark_rate!r}\n"
            f"efficiency = {config.efficiency!r}\n"
            f"lambda_rate_cps = {config.lambda_rate!r}\n")


def manifest_path(data_path: PathLike) -> Path:
    data_path = Path(data_path)
    return data_path.with_name(data_path.name + ".json")


def new_manifest(kind: str, **fields) -> dict:
    out = {"tool": "photonqrng", "version": __version__, "kind": kind,
           "created": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")}
    out.update(fields)
    return out


def write_json(path: PathLike, data: dict) -> None:
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def write_manifest(data_path: PathLike, manifest: dict) -> Path:
    path = manifest_path(data_path)
    write_json(path, manifest)
    return path


def read_manifest(data_path: PathLike) -> dict:
    path = manifest_path(data_path)
    if not path.exists():
        raise ManifestError(f"missing manifest {path} for {data_path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest {path} is not valid JSON: {exc}") from None


def verify_manifest(manifest: dict, base: PathLike) -> None:
    """Every referenced file exists with the recorded byte length."""
    base = Path(base)
    for name, entry in manifest.get("files", {}).items():
        path = base / entry["path"]
        if not path.exists():
            raise ManifestError(f"{name} file {path} listed in manifest does not exist")
        size = path.stat().st_size
        if size != entry["bytes"]:
            raise ManifestError(f"length mismatch: {path} has {size} bytes, manifest records {entry['bytes']}")


def write_symbols(path: PathLike, stream: RawSymbolStream, **extra) -> dict:
    if stream.config.num_bins > 256:
        raise ValueError("symbol files store one byte per symbol; num_bins must be <= 256")
    path = Path(path)
    path.write_bytes(stream.symbols.astype(np.uint8).tobytes())
    manifest = new_manifest(
        "symbols",
        files={"symbols": {"path": path.name, "bytes": stream.detections_recorded}},
        **stream.metadata(), **extra)
    write_manifest(path, manifest)
    return manifest


def read_symbols(path: PathLike) -> RawSymbolStream:
    path = Path(path)
    manifest = read_manifest(path)
    verify_manifest(manifest, path.parent)
    if manifest["files"]["symbols"]["bytes"] != manifest["detections_recorded"]:
        raise ManifestError("length mismatch: symbol count differs from detections_recorded")
    config = SourceConfig(**manifest["config"])
    symbols = np.fromfile(path, dtype=np.uint8)
    return RawSymbolStream(symbols, config, manifest.get("rng_seed"),
                           periods_elapsed=manifest["periods_elapsed"],
                           spad_counts=manifest.get("spad_counts", 0),
                           reference_offset=manifest.get("reference_offset", 0.0),
                           shards=manifest.get("shards", []))


def write_bits(path: PathLike, bits: BitBlock, kind: str = "bits", **extra) -> dict:
    path = Path(path)
    path.write_bytes(bits.to_bytes())
    manifest = new_manifest(kind, bits=bits.length,
                            files={"bits": {"path": path.name, "bytes": len(bits.packed)}},
                            **extra)
    write_manifest(path, manifest)
    return manifest


def read_bits(path: PathLike, require_manifest: bool = False) -> BitBlock:
    """Packed bits; the manifest fixes the exact length when it exists."""
    path = Path(path)
    data = np.fromfile(path, dtype=np.uint8)
    if manifest_path(path).exists():
        manifest = read_manifest(path)
        verify_manifest(manifest, path.parent)
        length = manifest["bits"]
        if math.ceil(length / 8) != data.size:
            raise ManifestError(f"length mismatch: {data.size} bytes cannot hold {length} bits")
        return BitBlock(data, length)
    if require_manifest:
        raise ManifestError(f"missing manifest for {path}")
    return BitBlock(data, data.size * 8)
