"""Eight tests from the NIST SP 800-22 battery, plus multi-sequence aggregation.

Every test takes a 1-D array of 0/1 values (or a ``BitBlock``) and returns a
:class:`TestResult`. Tests that produce several p-values report the smallest.
Sequences below a test's minimum length raise :class:`SequenceTooShort`
unless ``strict=False`` is passed (used for worked examples).
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .special import erfc, igamc, normal_cdf

__all__ = [
    "TestResult",
    "BatteryReport",
    "SequenceTooShort",
    "test_frequency",
    "test_block_frequency",
    "test_runs",
    "test_longest_run",
    "test_cumulative_sums",
    "test_dft_spectral",
    "test_serial",
    "test_approximate_entropy",
    "TESTS",
    "proportion_threshold",
    "run_battery",
    "format_table",
]

ALPHA = 0.01


class SequenceTooShort(ValueError):
    def __init__(self, test: str, length: int, minimum: int):
        super().__init__(f"{test} needs at least {minimum} bits, got {length}")
        self.test = test
        self.minimum = minimum


@dataclass(frozen=True)
class TestResult:
    __test__ = False  # not a pytest class

    test_name: str
    p_value: float
    alpha: float = ALPHA
    sub_p_values: tuple = ()

    def __post_init__(self):
        if not (0.0 <= self.p_value <= 1.0):
            raise ValueError(f"p-value {self.p_value!r} outside [0, 1]")

    @property
    def passed(self) -> bool:
        return self.p_value >= self.alpha


def _bits(seq) -> np.ndarray:
    if hasattr(seq, "bits") and callable(seq.bits):
        seq = seq.bits()
    bits = np.asarray(seq, dtype=np.int8)
    if bits.ndim != 1:
        raise ValueError("sequence must be one-dimensional")
    return bits


def _require(name: str, bits: np.ndarray, minimum: int, strict: bool) -> None:
    if strict and bits.size < minimum:
        raise SequenceTooShort(name, bits.size, minimum)
    if bits.size == 0:
        raise SequenceTooShort(name, 0, 1)


def _clip(p: float) -> float:
    return min(max(p, 0.0), 1.0)


def test_frequency(seq, alpha: float = ALPHA, strict: bool = True) -> TestResult:
    """Monobit test: p = erfc(|S_n| / sqrt(2n))."""
    bits = _bits(seq)
    _require("frequency", bits, 100, strict)
    s = abs(2 * int(bits.sum()) - bits.size) / math.sqrt(bits.size)
    return TestResult("Frequency", _clip(erfc(s / math.sqrt(2.0))), alpha)


def test_block_frequency(seq, block_len: int = 128, alpha: float = ALPHA,
                         strict: bool = True) -> TestResult:
    bits = _bits(seq)
    _require("block frequency", bits, 100, strict)
    if block_len < 1:
        raise ValueError("block_len must be positive")
    blocks = bits.size // block_len
    if blocks == 0:
        raise SequenceTooShort("block frequency", bits.size, block_len)
    pi = bits[:blocks * block_len].reshape(blocks, block_len).mean(axis=1)
    chi2 = 4.0 * block_len * float(np.sum((pi - 0.5) ** 2))
    return TestResult("Block Frequency", _clip(igamc(blocks / 2.0, chi2 / 2.0)), alpha)


def test_runs(seq, alpha: float = ALPHA, strict: bool = True) -> TestResult:
    bits = _bits(seq)
    _require("runs", bits, 100, strict)
    n = bits.size
    pi = bits.sum() / n
    # frequency prerequisite; the runs statistic is meaningless for a biased sequence
    if abs(pi - 0.5) >= 2.0 / math.sqrt(n):
        return TestResult("Runs", 0.0, alpha)
    v_obs = 1 + int(np.count_nonzero(bits[1:] != bits[:-1]))
    num = abs(v_obs - 2.0 * n * pi * (1.0 - pi))
    den = 2.0 * math.sqrt(2.0 * n) * pi * (1.0 - pi)
    return TestResult("Runs", _clip(erfc(num / den)), alpha)


# (block length M, run-length classes low..high, class probabilities)
_LONGEST_RUN_TABLES = [
    (750_000, 10_000, 10, 16, (0.0882, 0.2092, 0.2483, 0.1933, 0.1208, 0.0675, 0.0727)),
    (6_272, 128, 4, 9, (0.1174, 0.2430, 0.2493, 0.1752, 0.1027, 0.1124)),
    (128, 8, 1, 4, (0.2148, 0.3672, 0.2305, 0.1875)),
]


def _longest_runs(blocks: np.ndarray) -> np.ndarray:
    # longest run of ones per row
    padded = np.zeros((blocks.shape[0], blocks.shape[1] + 2), dtype=np.int8)
    padded[:, 1:-1] = blocks
    edges = np.diff(padded, axis=1)
    rows_s, cols_s = np.nonzero(edges == 1)
    _, cols_e = np.nonzero(edges == -1)
    lengths = cols_e - cols_s
    best = np.zeros(blocks.shape[0], dtype=np.int64)
    np.maximum.at(best, rows_s, lengths)
    return best


def test_longest_run(seq, alpha: float = ALPHA, strict: bool = True) -> TestResult:
    bits = _bits(seq)
    _require("longest run", bits, 128, True)  # no class table below 128 bits
    for min_n, m, low, high, probs in _LONGEST_RUN_TABLES:
        if bits.size >= min_n:
            break
    blocks = bits.size // m
    longest = _longest_runs(bits[:blocks * m].reshape(blocks, m))
    nu = np.bincount(np.clip(longest, low, high) - low, minlength=high - low + 1)
    expected = blocks * np.asarray(probs)
    chi2 = float(np.sum((nu - expected) ** 2 / expected))
    k = len(probs) - 1
    return TestResult("Longest Run", _clip(igamc(k / 2.0, chi2 / 2.0)), alpha)


def _trunc_div(a: int, b: int) -> int:
    return int(a / b)


def _cusum_p(z: int, n: int) -> float:
    # summation limits truncate toward zero, as in the reference description
    sq = math.sqrt(n)
    total = 1.0
    for k in range(_trunc_div(_trunc_div(-n, z) + 1, 4), _trunc_div(_trunc_div(n, z) - 1, 4) + 1):
        total -= normal_cdf((4 * k + 1) * z / sq) - normal_cdf((4 * k - 1) * z / sq)
    for k in range(_trunc_div(_trunc_div(-n, z) - 3, 4), _trunc_div(_trunc_div(n, z) - 1, 4) + 1):
        total += normal_cdf((4 * k + 3) * z / sq) - normal_cdf((4 * k + 1) * z / sq)
    return _clip(total)


def test_cumulative_sums(seq, alpha: float = ALPHA, strict: bool = True) -> TestResult:
    """Forward and backward random-walk excursions; the worse p is reported."""
    bits = _bits(seq)
    _require("cumulative sums", bits, 100, strict)
    n = bits.size
    walk = np.cumsum(2 * bits.astype(np.int64) - 1)
    z_fwd = int(np.max(np.abs(walk)))
    # backward walk partial sums are total - walk[k-1]
    total = int(walk[-1])
    back = total - np.concatenate(([0], walk[:-1]))
    z_bwd = int(np.max(np.abs(back)))
    ps = (_cusum_p(z_fwd, n), _cusum_p(z_bwd, n))
    return TestResult("Cumulative Sums", min(ps), alpha, ps)


def test_dft_spectral(seq, alpha: float = ALPHA, strict: bool = True) -> TestResult:
    bits = _bits(seq)
    _require("DFT spectral", bits, 1000, strict)
    n = bits.size
    x = 2.0 * bits - 1.0
    modulus = np.abs(np.fft.rfft(x)[:n // 2])
    threshold = math.sqrt(math.log(1.0 / 0.05) * n)
    n0 = 0.95 * n / 2.0
    n1 = float(np.count_nonzero(modulus < threshold))
    d = (n1 - n0) / math.sqrt(n * 0.95 * 0.05 / 4.0)
    return TestResult("FFT", _clip(erfc(abs(d) / math.sqrt(2.0))), alpha)


def _pattern_counts(bits: np.ndarray, m: int) -> np.ndarray:
    """Counts of every overlapping m-bit pattern with wrap-around."""
    if m == 0:
        return np.array([bits.size])
    ext = np.concatenate((bits, bits[:m - 1])).astype(np.int64)
    idx = np.zeros(bits.size, dtype=np.int64)
    for k in range(m):
        idx = (idx << 1) | ext[k:k + bits.size]
    return np.bincount(idx, minlength=1 << m)


def _psi_sq(bits: np.ndarray, m: int) -> float:
    if m <= 0:
        return 0.0
    counts = _pattern_counts(bits, m).astype(np.float64)
    return float((1 << m) / bits.size * np.sum(counts ** 2) - bits.size)


def test_serial(seq, m_len: int = 2, alpha: float = ALPHA, strict: bool = True) -> TestResult:
    """Two p-values from the first and second differences of psi^2; the worse is reported."""
    bits = _bits(seq)
    _require("serial", bits, 100, strict)
    if m_len < 2:
        raise ValueError("serial test needs m_len >= 2")
    if strict and m_len >= int(math.log2(bits.size)) - 2:
        raise SequenceTooShort("serial", bits.size, 1 << (m_len + 3))
    psi = [_psi_sq(bits, m_len - k) for k in range(3)]
    # cancellation can leave a tiny negative statistic
    d1 = max(psi[0] - psi[1], 0.0)
    d2 = max(psi[0] - 2.0 * psi[1] + psi[2], 0.0)
    ps = (_clip(igamc(2.0 ** (m_len - 2), d1 / 2.0)), _clip(igamc(2.0 ** (m_len - 3), d2 / 2.0)))
    return TestResult("Serial", min(ps), alpha, ps)


def _phi(bits: np.ndarray, m: int) -> float:
    counts = _pattern_counts(bits, m)
    c = counts[counts > 0] / bits.size
    return float(np.sum(c * np.log(c)))


def test_approximate_entropy(seq, m_len: int = 2, alpha: float = ALPHA,
                             strict: bool = True) -> TestResult:
    bits = _bits(seq)
    _require("approximate entropy", bits, 100, strict)
    if m_len < 1:
        raise ValueError("approximate entropy needs m_len >= 1")
    if strict and m_len >= int(math.log2(bits.size)) - 5:
        raise SequenceTooShort("approximate entropy", bits.size, 1 << (m_len + 6))
    n = bits.size
    ap_en = _phi(bits, m_len) - _phi(bits, m_len + 1)
    chi2 = 2.0 * n * (math.log(2.0) - ap_en)
    return TestResult("Approximate Entropy", _clip(igamc(2.0 ** (m_len - 1), chi2 / 2.0)), alpha)


TESTS: dict[str, Callable[..., TestResult]] = {
    "Frequency": test_frequency,
    "Block Frequency": test_block_frequency,
    "Cumulative Sums": test_cumulative_sums,
    "Runs": test_runs,
    "Longest Run": test_longest_run,
    "FFT": test_dft_spectral,
    "Approximate Entropy": test_approximate_entropy,
    "Serial": test_serial,
}


def proportion_threshold(alpha: float, sequences: int) -> float:
    """Three-sigma lower bound on the pass proportion, ``(1-a) - 3 sqrt(a(1-a)/S)``."""
    return (1.0 - alpha) - 3.0 * math.sqrt(alpha * (1.0 - alpha) / sequences)


@dataclass
class BatteryReport:
    alpha: float
    sequences: int
    proportion_threshold: float
    results: dict = field(default_factory=dict)

    def proportion(self, name: str) -> float:
        rs = self.results[name]
        return sum(r.passed for r in rs) / len(rs)

    def worst_p_value(self, name: str) -> float:
        return min(r.p_value for r in self.results[name])

    def passed(self, name: str) -> bool:
        return self.proportion(name) >= self.proportion_threshold

    def flagged(self) -> list:
        return [name for name in self.results if not self.passed(name)]

    def summary(self) -> list:
        return [{"test": name, "worst_p_value": self.worst_p_value(name),
                 "proportion": self.proportion(name), "passed": self.passed(name)}
                for name in self.results]

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "sequences": self.sequences,
            "proportion_threshold": self.proportion_threshold,
            "summary": self.summary(),
            "p_values": {name: [r.p_value for r in rs] for name, rs in self.results.items()},
        }


def run_battery(sequences: Sequence, alpha: float = ALPHA, workers: int = 1,
                tests: Optional[dict] = None) -> BatteryReport:
    """Run every test on every sequence and aggregate pass proportions."""
    sequences = list(sequences)
    if len(sequences) < 2:
        raise ValueError("the battery needs at least two sequences")
    tests = TESTS if tests is None else tests

    def one(seq):
        bits = _bits(seq)
        return {name: fn(bits, alpha=alpha) for name, fn in tests.items()}

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_seq = list(pool.map(one, sequences))
    else:
        per_seq = [one(s) for s in sequences]
    report = BatteryReport(alpha, len(sequences), proportion_threshold(alpha, len(sequences)))
    for name in tests:
        report.results[name] = [r[name] for r in per_seq]
    return report


def format_table(report: BatteryReport) -> str:
    lines = [f"{'Statistical test':<26}{'P-value':>10}{'Proportion':>12}  Result",
             "-" * 56]
    for row in report.summary():
        lines.append(f"{row['test']:<26}{row['worst_p_value']:>10.6f}{row['proportion']:>12.3f}  "
                     f"{'Pass' if row['passed'] else 'Fail'}")
    lines.append(f"alpha = {report.alpha}, proportion threshold = {report.proportion_threshold:.4f} "
                 f"over {report.sequences} sequences")
    return "\n".join(lines)
