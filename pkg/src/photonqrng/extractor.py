"""Toeplitz-matrix hashing over GF(2).

An m x n Toeplitz matrix is fixed by ``n + m - 1`` seed bits. Entry (j, i),
row j of the output and column i of the input, is ``seed[j - i + n - 1]``:
seed bits ``0 .. n-1`` run right to left along the first row and bits
``n .. n+m-2`` down the first column. Both hashing paths below use this
layout and must agree bit for bit.

Since the matrix is constant along diagonals, the product is the middle
slice of the convolution ``seed * x``::

    y[j] = sum_i seed[j + n - 1 - i] x[i]  (mod 2)

``toeplitz_apply_fast`` evaluates that convolution with a real FFT and
checks that every coefficient rounds cleanly. ``toeplitz_apply_naive`` XORs
matrix columns on 64-bit words and needs no floating point.
"""
from __future__ import annotations

import logging
import math
import os
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .model import EntropyReport
from .simulator import RawSymbolStream

__all__ = [
    "BitBlock",
    "ToeplitzSeed",
    "ExtractionPlan",
    "ExtractionError",
    "PrecisionError",
    "PrecisionWarning",
    "symbols_to_bits",
    "toeplitz_matrix",
    "toeplitz_apply_naive",
    "toeplitz_apply_fast",
    "ToeplitzHasher",
    "plan_extraction",
    "reference_geometry",
    "extract_stream",
    "collision_fraction",
    "benchmark",
    "default_workers",
    "DEFAULT_BLOCK_N",
    "DEFAULT_EPSILON",
    "REFERENCE_BLOCK_N",
    "REFERENCE_BLOCK_M",
]

log = logging.getLogger(__name__)

DEFAULT_BLOCK_N = 1 << 20
DEFAULT_EPSILON = 2.0 ** -100
REFERENCE_BLOCK_N = 33_600_000
REFERENCE_BLOCK_M = 29_500_000
ROUNDING_TOLERANCE = 0.25


class ExtractionError(ValueError):
    """Requested geometry cannot produce any output."""


class PrecisionError(ArithmeticError):
    """FFT coefficients failed the rounding check and no fallback was allowed."""


class PrecisionWarning(RuntimeWarning):
    pass


def default_workers() -> int:
    """Thread count from ``PHOTONQRNG_THREADS``, else 1."""
    value = os.environ.get("PHOTONQRNG_THREADS")
    if not value:
        return 1
    try:
        workers = int(value)
    except ValueError:
        raise ValueError(f"PHOTONQRNG_THREADS must be an integer, got {value!r}") from None
    return max(workers, 1)


class BitBlock:
    """Packed bit string, most significant bit first within each byte."""

    __slots__ = ("packed", "length")

    def __init__(self, packed, length: Optional[int] = None):
        packed = np.frombuffer(bytes(packed), dtype=np.uint8) if isinstance(packed, (bytes, bytearray)) \
            else np.ascontiguousarray(packed, dtype=np.uint8)
        if length is None:
            length = packed.size * 8
        if packed.size != (length + 7) // 8:
            raise ValueError(f"{packed.size} bytes cannot hold exactly {length} bits")
        pad = packed.size * 8 - length
        if pad and packed[-1] & ((1 << pad) - 1):
            raise ValueError("trailing pad bits must be zero")
        self.packed = packed
        self.length = int(length)

    @classmethod
    def from_bits(cls, bits) -> "BitBlock":
        bits = np.asarray(bits, dtype=np.uint8)
        if bits.ndim != 1:
            raise ValueError("bits must be one-dimensional")
        if bits.size and bits.max() > 1:
            raise ValueError("bits must be 0 or 1")
        return cls(np.packbits(bits), bits.size)

    @classmethod
    def zeros(cls, length: int) -> "BitBlock":
        return cls(np.zeros((length + 7) // 8, dtype=np.uint8), length)

    def bits(self) -> np.ndarray:
        return np.unpackbits(self.packed, count=self.length)

    def slice_bits(self, start: int, count: int) -> np.ndarray:
        """Unpacked bits ``[start, start + count)``."""
        if start < 0 or start + count > self.length:
            raise IndexError("bit slice out of range")
        first = start // 8
        chunk = np.unpackbits(self.packed[first:(start + count + 7) // 8])
        return chunk[start - 8 * first:start - 8 * first + count]

    def to_bytes(self) -> bytes:
        return self.packed.tobytes()

    def __len__(self):
        return self.length

    def __eq__(self, other):
        if not isinstance(other, BitBlock):
            return NotImplemented
        return self.length == other.length and np.array_equal(self.packed, other.packed)

    def __xor__(self, other: "BitBlock") -> "BitBlock":
        if self.length != other.length:
            raise ValueError("length mismatch")
        return BitBlock(self.packed ^ other.packed, self.length)

    def __repr__(self):
        return f"BitBlock(length={self.length})"


BitsLike = Union[BitBlock, np.ndarray, Sequence[int]]


def _as_bits(block: BitsLike) -> np.ndarray:
    if isinstance(block, BitBlock):
        return block.bits()
    bits = np.asarray(block, dtype=np.uint8)
    if bits.ndim != 1:
        raise ValueError("bits must be one-dimensional")
    return bits


def symbols_to_bits(stream: Union[RawSymbolStream, np.ndarray], num_bins: Optional[int] = None) -> BitBlock:
    """Write each symbol as ``log2(num_bins)`` bits, most significant first."""
    if isinstance(stream, RawSymbolStream):
        symbols = stream.symbols
        num_bins = stream.config.num_bins
    else:
        symbols = np.asarray(stream)
        if num_bins is None:
            raise ValueError("num_bins is required for a bare symbol array")
    if num_bins < 2 or num_bins & (num_bins - 1):
        raise ValueError(f"num_bins must be a power of two, got {num_bins}")
    width = num_bins.bit_length() - 1
    if symbols.size and int(symbols.max()) >= num_bins:
        raise ValueError("symbol outside [0, num_bins)")
    if width == 8:
        return BitBlock(symbols.astype(np.uint8), symbols.size * 8)
    shifts = np.arange(width - 1, -1, -1, dtype=np.uint32)
    bits = (symbols.astype(np.uint32)[:, None] >> shifts) & 1
    return BitBlock.from_bits(bits.ravel())


@dataclass(frozen=True, eq=False)
class ToeplitzSeed:
    n: int
    m: int
    seed_bits: np.ndarray
    generator_seed: Optional[int] = None

    def __post_init__(self):
        if not (0 < self.m <= self.n):
            raise ValueError(f"need 0 < m <= n, got n={self.n}, m={self.m}")
        bits = np.ascontiguousarray(self.seed_bits, dtype=np.uint8)
        if bits.shape != (self.n + self.m - 1,):
            raise ValueError(f"seed must hold n + m - 1 = {self.n + self.m - 1} bits, got {bits.size}")
        if bits.size and bits.max() > 1:
            raise ValueError("seed bits must be 0 or 1")
        bits.setflags(write=False)
        object.__setattr__(self, "seed_bits", bits)

    @classmethod
    def random(cls, n: int, m: int, generator_seed: int) -> "ToeplitzSeed":
        rng = np.random.default_rng(generator_seed)
        return cls(n, m, rng.integers(0, 2, size=n + m - 1, dtype=np.uint8), generator_seed)

    def geometry(self) -> dict:
        return {"n": self.n, "m": self.m, "generator_seed": self.generator_seed}

    def __eq__(self, other):
        if not isinstance(other, ToeplitzSeed):
            return NotImplemented
        return (self.n, self.m) == (other.n, other.m) and np.array_equal(self.seed_bits, other.seed_bits)


def toeplitz_matrix(seed: ToeplitzSeed) -> np.ndarray:
    """Dense ``m x n`` 0/1 matrix; only sensible at small sizes."""
    j = np.arange(seed.m)[:, None]
    i = np.arange(seed.n)[None, :]
    return seed.seed_bits[j - i + seed.n - 1]


def _check_input(seed: ToeplitzSeed, block: BitsLike) -> np.ndarray:
    bits = _as_bits(block)
    if bits.size != seed.n:
        raise ValueError(f"input has {bits.size} bits, seed expects n={seed.n}")
    return bits


def _shifted_words(bits: np.ndarray, words: int) -> list:
    # shifted[r][q] holds bits[64 q + r .. 64 q + r + 63], bit k of the word = bits[64 q + r + k]
    out = []
    padded = np.zeros(64 * words + 64, dtype=np.uint8)
    padded[:bits.size] = bits
    for r in range(64):
        chunk = padded[r:r + 64 * words]
        out.append(np.packbits(chunk, bitorder="little").view("<u8"))
    return out


def toeplitz_apply_naive(seed: ToeplitzSeed, block: BitsLike) -> BitBlock:
    """Exact matrix-vector product, XOR-ing the columns selected by the input.

    Column i is the seed window ``seed[n-1-i : n-1-i+m]``; it is read as
    64-bit words from one of 64 pre-shifted copies of the seed.
    """
    x = _check_input(seed, block)
    n, m = seed.n, seed.m
    mw = (m + 63) // 64
    shifted = _shifted_words(seed.seed_bits, (n + m - 1 + 63) // 64 + 1)
    acc = np.zeros(mw, dtype="<u8")
    for i in np.flatnonzero(x):
        start = n - 1 - int(i)
        q, r = divmod(start, 64)
        acc ^= shifted[r][q:q + mw]
    out = np.unpackbits(acc.view(np.uint8), bitorder="little", count=m)
    return BitBlock.from_bits(out)


def _fft_size(length: int) -> int:
    return 1 << max(length - 1, 1).bit_length()


class ToeplitzHasher:
    """FFT hashing with the seed spectrum computed once and reused per block."""

    def __init__(self, seed: ToeplitzSeed, rounding_tolerance: float = ROUNDING_TOLERANCE,
                 fallback: bool = True):
        self.seed = seed
        self.rounding_tolerance = rounding_tolerance
        self.fallback = fallback
        self.size = _fft_size(seed.n + seed.m - 1)
        self._seed_spectrum = np.fft.rfft(seed.seed_bits.astype(np.float64), self.size)
        self.fallbacks = 0
        self.max_rounding_error = 0.0

    def hash_bits(self, x: np.ndarray) -> np.ndarray:
        n, m = self.seed.n, self.seed.m
        if x.size != n:
            raise ValueError(f"input has {x.size} bits, seed expects n={n}")
        # circular length >= n + m - 1 leaves indices n-1 .. n+m-2 alias free
        spectrum = np.fft.rfft(x.astype(np.float64), self.size)
        coeffs = np.fft.irfft(spectrum * self._seed_spectrum, self.size)[n - 1:n - 1 + m]
        rounded = np.rint(coeffs)
        err = float(np.max(np.abs(coeffs - rounded))) if m else 0.0
        self.max_rounding_error = max(self.max_rounding_error, err)
        if not err < self.rounding_tolerance:
            msg = (f"FFT coefficient off an integer by {err:.3g} "
                   f"(tolerance {self.rounding_tolerance}) at n={n}, m={m}")
            if not self.fallback:
                raise PrecisionError(msg)
            warnings.warn(msg + "; using exact path", PrecisionWarning, stacklevel=3)
            self.fallbacks += 1
            return toeplitz_apply_naive(self.seed, x).bits()
        return (rounded.astype(np.int64) & 1).astype(np.uint8)

    def __call__(self, block: BitsLike) -> BitBlock:
        return BitBlock.from_bits(self.hash_bits(_check_input(self.seed, block)))


def toeplitz_apply_fast(seed: ToeplitzSeed, block: BitsLike,
                        rounding_tolerance: float = ROUNDING_TOLERANCE,
                        fallback: bool = True) -> BitBlock:
    """FFT-convolution hash, bit-identical to :func:`toeplitz_apply_naive`.

    If any needed coefficient lies ``rounding_tolerance`` or further from an
    integer, a :class:`PrecisionWarning` is issued and the exact path is used,
    or :class:`PrecisionError` is raised when ``fallback`` is False.
    """
    return ToeplitzHasher(seed, rounding_tolerance, fallback)(block)


@dataclass(frozen=True)
class ExtractionPlan:
    n: int
    m: int
    epsilon: Optional[float]
    min_entropy_per_bit: float

    @property
    def ratio(self) -> float:
        return self.m / self.n


def plan_extraction(report: Union[EntropyReport, float], n: int,
                    epsilon: Optional[float] = DEFAULT_EPSILON) -> ExtractionPlan:
    """Output length for an n-bit block: ``floor(n h - 2 log2(1/epsilon))``.

    ``h`` is the per-bit min-entropy bound. ``epsilon=None`` drops the
    security term and leaves the plain ``m/n <= h`` rule.
    """
    h = report.min_entropy_bound_per_bit if isinstance(report, EntropyReport) else float(report)
    if int(n) != n or n <= 0:
        raise ValueError(f"block length n must be a positive integer, got {n!r}")
    if not (0.0 <= h <= 1.0):
        raise ValueError(f"per-bit min-entropy must lie in [0, 1], got {h!r}")
    penalty = 0.0
    if epsilon is not None:
        if not (0.0 < epsilon <= 1.0):
            raise ValueError(f"epsilon must lie in (0, 1], got {epsilon!r}")
        penalty = -2.0 * math.log2(epsilon)
    m = min(math.floor(n * h - penalty), int(n))
    if m <= 0:
        raise ExtractionError(
            f"no output: n={n} bits at {h:.4f} bits/bit carry {n * h:.1f} bits of min-entropy, "
            f"security term needs {penalty:.1f}; increase the block length")
    return ExtractionPlan(int(n), int(m), epsilon, h)


def reference_geometry(min_entropy_per_bit: float) -> ExtractionPlan:
    """The reference block sizes, after checking their ratio against the bound."""
    if REFERENCE_BLOCK_M / REFERENCE_BLOCK_N > min_entropy_per_bit:
        raise ExtractionError(
            f"ratio {REFERENCE_BLOCK_M / REFERENCE_BLOCK_N:.4f} exceeds min-entropy {min_entropy_per_bit:.4f}")
    return ExtractionPlan(REFERENCE_BLOCK_N, REFERENCE_BLOCK_M, None, min_entropy_per_bit)


def extract_stream(raw: BitBlock, seed: ToeplitzSeed, workers: Optional[int] = None,
                   hasher: Optional[ToeplitzHasher] = None) -> BitBlock:
    """Hash consecutive n-bit blocks with one seed and concatenate the outputs.

    A trailing partial block is dropped. Blocks may be hashed on several
    threads; output order always follows input order.
    """
    hasher = hasher or ToeplitzHasher(seed)
    n, m = seed.n, seed.m
    blocks = raw.length // n
    if blocks == 0:
        return BitBlock.zeros(0)
    workers = default_workers() if workers is None else max(int(workers), 1)

    def work(k):
        return hasher.hash_bits(raw.slice_bits(k * n, n))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outs = list(pool.map(work, range(blocks)))
    else:
        outs = [work(k) for k in range(blocks)]
    out = BitBlock.from_bits(np.concatenate(outs))
    assert out.length == blocks * m
    return out


def collision_fraction(n: int, m: int, x: BitsLike, y: BitsLike) -> float:
    """Fraction of all ``2**(n+m-1)`` seeds under which x and y collide.

    Exhaustive, so only for toy sizes. Uses linearity: the hashes collide
    exactly when the hash of ``x XOR y`` is zero, and output bit j of that
    hash is the parity of the seed bits ``j + n - 1 - i`` over the set bits
    ``i`` of the difference.
    """
    total_bits = n + m - 1
    if total_bits > 26:
        raise ValueError("exhaustive enumeration limited to n + m - 1 <= 26")
    d = _as_bits(x) ^ _as_bits(y)
    if d.size != n:
        raise ValueError("inputs must have n bits")
    seeds = np.arange(1 << total_bits, dtype=np.uint64)
    collide = np.ones(seeds.size, dtype=bool)
    for j in range(m):
        mask = 0
        for i in np.flatnonzero(d):
            mask |= 1 << (j + n - 1 - int(i))
        parity = np.bitwise_count(seeds & np.uint64(mask)) & 1
        collide &= parity == 0
    return float(collide.mean())


def benchmark(block_ns: Iterable[int], ratio: float = 0.875, trials: int = 1,
              rng_seed: int = 0) -> list:
    """Time naive and FFT hashing on random blocks; one row per block length."""
    rng = np.random.default_rng(rng_seed)
    rows = []
    for n in block_ns:
        m = max(1, int(n * ratio))
        seed = ToeplitzSeed.random(n, m, int(rng.integers(2**63)))
        inputs = [rng.integers(0, 2, n, dtype=np.uint8) for _ in range(trials)]
        t0 = time.perf_counter()
        slow = [toeplitz_apply_naive(seed, x) for x in inputs]
        t_naive = (time.perf_counter() - t0) / trials
        t0 = time.perf_counter()
        hasher = ToeplitzHasher(seed)
        fast = [hasher(x) for x in inputs]
        t_fast = (time.perf_counter() - t0) / trials
        rows.append({
            "n": n, "m": m,
            "naive_seconds": t_naive, "fast_seconds": t_fast,
            "naive_bits_per_second": n / t_naive, "fast_bits_per_second": n / t_fast,
            "speedup": t_naive / t_fast,
            "identical": all(a == b for a, b in zip(slow, fast)),
        })
        log.info("n=%d m=%d naive %.3fs fast %.4fs", n, m, t_naive, t_fast)
    return rows
