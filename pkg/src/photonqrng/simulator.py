"""Monte Carlo model of the laser -> SPAD -> TDC chain.

Photon arrivals (already thinned by the detection efficiency) and dark counts
are merged into one Poisson stream, gated by a non-paralyzable dead time and
then timed against a periodic external reference. The first surviving
detection in each reference period is written out as its bin index.

Arrivals are produced in fixed-size chunks from one ``numpy`` generator, so a
(config, seed) pair always yields the same event sequence no matter which
operation consumes it.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numba
import numpy as np

from .model import SourceConfig

__all__ = [
    "DetectionEvents",
    "RawSymbolStream",
    "generate_arrivals",
    "apply_dead_time",
    "record_symbols",
    "simulate",
    "simulate_sharded",
    "nonparalyzable_rate",
    "saturation_rate",
    "symbol_dtype",
]

CHUNK_EVENTS = 1 << 18


@dataclass
class DetectionEvents:
    """Time-sorted detection instants (seconds) with dark-count flags."""

    timestamps: np.ndarray
    is_dark: np.ndarray

    def __post_init__(self):
        self.timestamps = np.ascontiguousarray(self.timestamps, dtype=np.float64)
        self.is_dark = np.ascontiguousarray(self.is_dark, dtype=bool)
        if self.timestamps.shape != self.is_dark.shape:
            raise ValueError("timestamps and is_dark must have the same length")

    def __len__(self):
        return self.timestamps.size

    def __getitem__(self, index):
        return DetectionEvents(self.timestamps[index], self.is_dark[index])

    @classmethod
    def from_times(cls, times: Sequence[float]) -> "DetectionEvents":
        times = np.asarray(times, dtype=np.float64)
        return cls(times, np.zeros(times.size, dtype=bool))


def symbol_dtype(num_bins: int):
    return np.uint8 if num_bins <= 256 else np.uint16 if num_bins <= 65536 else np.uint32


@dataclass
class RawSymbolStream:
    """Recorded bin indices plus what is needed to reproduce them."""

    symbols: np.ndarray
    config: SourceConfig
    rng_seed: Optional[int]
    periods_elapsed: int
    spad_counts: int = 0
    reference_offset: float = 0.0
    shards: list = field(default_factory=list)

    def __post_init__(self):
        self.symbols = np.asarray(self.symbols)
        if self.symbols.size and int(self.symbols.max()) >= self.config.num_bins:
            raise ValueError("symbol outside [0, num_bins)")
        if self.detections_recorded > self.periods_elapsed:
            raise ValueError("more recorded detections than reference periods")

    @property
    def detections_recorded(self) -> int:
        return int(self.symbols.size)

    @property
    def duration(self) -> float:
        return self.periods_elapsed * self.config.period

    @property
    def detection_rate(self) -> float:
        """Recorded symbols per second of simulated time."""
        return self.detections_recorded / self.duration if self.periods_elapsed else 0.0

    @property
    def spad_count_rate(self) -> float:
        """Detector output pulses per second (after dead time)."""
        return self.spad_counts / self.duration if self.periods_elapsed else 0.0

    @property
    def raw_bit_rate(self) -> float:
        return self.detection_rate * math.log2(self.config.num_bins)

    def histogram(self) -> np.ndarray:
        return np.bincount(self.symbols, minlength=self.config.num_bins)

    def metadata(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "rng_seed": self.rng_seed,
            "periods_elapsed": self.periods_elapsed,
            "detections_recorded": self.detections_recorded,
            "spad_counts": self.spad_counts,
            "reference_offset": self.reference_offset,
            "shards": list(self.shards),
        }


def nonparalyzable_rate(rate_in: float, dead_time: float) -> float:
    """Output rate of a non-paralyzable counter, ``r / (1 + r tau)``."""
    return rate_in / (1.0 + rate_in * dead_time)


def saturation_rate(config: SourceConfig) -> float:
    """Count rate the detector approaches as the input rate grows."""
    return math.inf if config.dead_time == 0.0 else 1.0 / config.dead_time


def _total_rate(config: SourceConfig) -> float:
    return config.detected_rate + config.dark_rate


def _arrival_chunks(config: SourceConfig, rng: np.random.Generator,
                    chunk: int = CHUNK_EVENTS) -> Iterator[tuple]:
    rate = _total_rate(config)
    p_dark = config.dark_rate / rate
    t0 = 0.0
    while True:
        u = rng.random(chunk)
        # inversion sampling; 1 - u lies in (0, 1]
        gaps = -np.log1p(-u) / rate
        times = t0 + np.cumsum(gaps)
        if p_dark > 0.0:
            dark = rng.random(chunk) < p_dark
        else:
            dark = np.zeros(chunk, dtype=bool)
        t0 = times[-1]
        yield times, dark


def generate_arrivals(config: SourceConfig, rng_seed: Optional[int], duration: float) -> DetectionEvents:
    """Merged photon and dark-count arrivals on ``[0, duration)``."""
    if not duration > 0:
        raise ValueError(f"duration must be > 0, got {duration!r}")
    if _total_rate(config) == 0.0:
        return DetectionEvents.from_times([])
    rng = np.random.default_rng(rng_seed)
    times, flags = [], []
    for t, d in _arrival_chunks(config, rng):
        if t[-1] >= duration:
            cut = np.searchsorted(t, duration, side="left")
            times.append(t[:cut])
            flags.append(d[:cut])
            break
        times.append(t)
        flags.append(d)
    return DetectionEvents(np.concatenate(times), np.concatenate(flags))


@numba.njit(cache=True, nogil=True)
def _dead_time_mask(times, dead_time):
    keep = np.zeros(times.size, dtype=np.bool_)
    ready = -np.inf
    for k in range(times.size):
        if times[k] >= ready:
            keep[k] = True
            ready = times[k] + dead_time
    return keep


def apply_dead_time(events: DetectionEvents, dead_time: float) -> DetectionEvents:
    """Drop every event closer than ``dead_time`` to the last kept one."""
    if dead_time < 0:
        raise ValueError("dead_time must be >= 0")
    if dead_time == 0.0 or len(events) == 0:
        return events
    return events[_dead_time_mask(events.timestamps, float(dead_time))]


@numba.njit(cache=True, nogil=True)
def _chain(times, offset, period, num_bins, dead_time, ready, last_period,
           out, filled, target):
    """Dead time + first-hit recording over one chunk of arrivals.

    Returns (filled, ready, last_period, kept, stop_index); stop_index is the
    index after the event that completed ``target`` symbols, else times.size.
    """
    kept = 0
    for k in range(times.size):
        t = times[k]
        if t < ready:
            continue
        ready = t + dead_time
        kept += 1
        x = (t - offset) / period
        if x < 0.0:
            continue
        p = np.int64(math.floor(x))
        if p == last_period:
            continue
        last_period = p
        b = np.int64((x - p) * num_bins)
        if b >= num_bins:
            b = num_bins - 1
        out[filled] = b
        filled += 1
        if filled == target:
            return filled, ready, last_period, kept, k + 1
    return filled, ready, last_period, kept, times.size


def _check_offset(config: SourceConfig, reference_offset: float) -> float:
    if not (0.0 <= reference_offset < config.period):
        raise ValueError(f"reference_offset must lie in [0, period), got {reference_offset!r}")
    return float(reference_offset)


def record_symbols(events: DetectionEvents, config: SourceConfig,
                   reference_offset: float = 0.0) -> RawSymbolStream:
    """Time already-gated detections against the reference clock.

    Periods start at ``reference_offset + j * period`` for ``j >= 0``; events
    before the first period start are ignored. ``periods_elapsed`` runs up to
    and including the period of the last event.
    """
    offset = _check_offset(config, reference_offset)
    times = events.timestamps
    out = np.empty(times.size, dtype=np.int64)
    # dead_time 0 here: gating is the caller's job
    filled, _, last_period, _, _ = _chain(times, offset, config.period, config.num_bins,
                                          0.0, -np.inf, -1, out, 0, -1)
    if times.size and times[-1] >= offset:
        periods = int(math.floor((times[-1] - offset) / config.period)) + 1
    else:
        periods = 0
    return RawSymbolStream(out[:filled].astype(symbol_dtype(config.num_bins)), config,
                           rng_seed=None, periods_elapsed=periods, spad_counts=len(events),
                           reference_offset=offset)


def simulate(config: SourceConfig, rng_seed: Optional[int], target_symbols: int,
             reference_offset: float = 0.0) -> RawSymbolStream:
    """Run the full chain until ``target_symbols`` detections are recorded.

    Equivalent to ``record_symbols(apply_dead_time(generate_arrivals(...)))``
    truncated at the period of the last requested symbol, but streams the
    arrivals chunk by chunk so memory stays bounded.
    """
    if int(target_symbols) != target_symbols or target_symbols <= 0:
        raise ValueError(f"target_symbols must be a positive integer, got {target_symbols!r}")
    if _total_rate(config) == 0.0:
        raise ValueError("photon and dark-count rates are both zero; simulation would not terminate")
    offset = _check_offset(config, reference_offset)
    target = int(target_symbols)
    rng = np.random.default_rng(rng_seed)
    out = np.empty(target, dtype=np.int64)
    filled, ready, last_period, kept = 0, -np.inf, -1, 0
    for times, _ in _arrival_chunks(config, rng):
        filled, ready, last_period, k, _ = _chain(
            times, offset, config.period, config.num_bins, config.dead_time,
            ready, last_period, out, filled, target)
        kept += k
        if filled == target:
            break
    return RawSymbolStream(out.astype(symbol_dtype(config.num_bins)), config, rng_seed,
                           periods_elapsed=int(last_period) + 1, spad_counts=kept,
                           reference_offset=offset)


def simulate_sharded(config: SourceConfig, seeds: Sequence[int], target_symbols: int,
                     reference_offset: float = 0.0, workers: int = 1) -> RawSymbolStream:
    """Split ``target_symbols`` over independent seeds and concatenate.

    Shard boundaries (seed, first symbol index, count, periods) go into
    ``RawSymbolStream.shards``.
    """
    seeds = list(seeds)
    if not seeds:
        raise ValueError("need at least one seed")
    base, extra = divmod(int(target_symbols), len(seeds))
    counts = [base + (1 if i < extra else 0) for i in range(len(seeds))]
    jobs = [(s, c) for s, c in zip(seeds, counts) if c > 0]

    def run(job):
        return simulate(config, job[0], job[1], reference_offset)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, jobs))
    else:
        parts = [run(j) for j in jobs]
    shards, start = [], 0
    for (seed, count), part in zip(jobs, parts):
        shards.append({"seed": seed, "start": start, "count": count,
                       "periods": part.periods_elapsed})
        start += count
    return RawSymbolStream(
        np.concatenate([p.symbols for p in parts]), config, rng_seed=None,
        periods_elapsed=sum(p.periods_elapsed for p in parts),
        spad_counts=sum(p.spad_counts for p in parts),
        reference_offset=reference_offset, shards=shards)
