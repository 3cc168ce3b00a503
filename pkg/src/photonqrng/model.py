"""Source/detector probability model and min-entropy estimates.

A CW laser seen through a detector of efficiency ``eta`` delivers a Poisson
number of photons per reference period with mean ``mu = lambda * T * eta``.
Only the earliest photon of a period is recorded, so the bin distribution
decays exponentially across the period; its largest entry fixes the
min-entropy of one raw symbol.

Bin indices are 1-based in the formula-level functions (``first_hit_given_k``)
and 0-based in every array returned here.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "SourceConfig",
    "BinDistribution",
    "EntropyReport",
    "poisson_pmf",
    "poisson_truncation",
    "first_hit_given_k",
    "raw_symbol_distribution",
    "series_symbol_distribution",
    "p1_upper_bound",
    "min_entropy_lower_bound",
    "empirical_min_entropy",
    "entropy_report",
    "reference_config",
]


def _check_mu(mu: float) -> float:
    mu = float(mu)
    if not math.isfinite(mu) or mu <= 0.0:
        raise ValueError(f"mean photon number must be finite and > 0, got {mu!r}")
    return mu


def _check_bins(num_bins: int) -> int:
    if int(num_bins) != num_bins or num_bins < 2:
        raise ValueError(f"num_bins must be an integer >= 2, got {num_bins!r}")
    return int(num_bins)


@dataclass(frozen=True)
class SourceConfig:
    """Physical parameters of the laser -> SPAD -> TDC chain (SI units)."""

    lambda_rate: float
    efficiency: float
    period: float
    num_bins: int
    dead_time: float = 0.0
    dark_rate: float = 0.0

    def __post_init__(self):
        _check_bins(self.num_bins)
        object.__setattr__(self, "num_bins", int(self.num_bins))
        if not (0.0 < self.efficiency <= 1.0):
            raise ValueError(f"efficiency must lie in (0, 1], got {self.efficiency!r}")
        if not (math.isfinite(self.period) and self.period > 0.0):
            raise ValueError(f"period must be finite and > 0, got {self.period!r}")
        for name in ("lambda_rate", "dead_time", "dark_rate"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0.0):
                raise ValueError(f"{name} must be finite and >= 0, got {value!r}")

    @classmethod
    def from_mu(cls, mu: float, period: float, num_bins: int, efficiency: float = 1.0,
                dead_time: float = 0.0, dark_rate: float = 0.0) -> "SourceConfig":
        """Build a config whose detected mean photon number per period is ``mu``."""
        mu = _check_mu(mu)
        return cls(lambda_rate=mu / (period * efficiency), efficiency=efficiency,
                   period=period, num_bins=num_bins, dead_time=dead_time,
                   dark_rate=dark_rate)

    @property
    def bin_width(self) -> float:
        return self.period / self.num_bins

    @property
    def mu(self) -> float:
        return self.lambda_rate * self.period * self.efficiency

    @property
    def detected_rate(self) -> float:
        """Photon detection rate before dead time, excluding dark counts."""
        return self.lambda_rate * self.efficiency

    def to_dict(self) -> dict:
        return asdict(self)


def reference_config(efficiency: float = 1.0) -> SourceConfig:
    """Operating point of the reference device at 13.9 Mcps.

    The efficiency is not given separately from ``mu``; it only rescales
    ``lambda_rate``.
    """
    return SourceConfig.from_mu(1.52, period=40.96e-9, num_bins=256,
                                efficiency=efficiency, dead_time=45e-9,
                                dark_rate=15.0)


@dataclass(frozen=True)
class BinDistribution:
    """Probability of the recorded detection falling in each time bin."""

    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.ndim != 1 or probs.size < 2:
            raise ValueError("probs must be a 1-D vector with at least two bins")
        if np.any(probs < 0.0) or np.any(probs > 1.0):
            raise ValueError("bin probabilities must lie in [0, 1]")
        if abs(probs.sum() - 1.0) > 1e-12:
            raise ValueError(f"bin probabilities sum to {probs.sum()!r}, not 1")
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @property
    def num_bins(self) -> int:
        return self.probs.size

    def max_prob(self) -> float:
        return float(self.probs.max())

    def min_entropy(self) -> float:
        return -math.log2(self.max_prob())

    def __len__(self):
        return self.probs.size


def poisson_pmf(k: int, mu: float) -> float:
    """Probability of exactly ``k`` photons when the mean is ``mu``."""
    mu = _check_mu(mu)
    if int(k) != k or k < 0:
        raise ValueError(f"k must be a nonnegative integer, got {k!r}")
    return math.exp(-mu + k * math.log(mu) - math.lgamma(k + 1))


def poisson_truncation(mu: float) -> int:
    """Last photon number kept when summing over the Poisson tail.

    The omitted tail is below 1e-15 for all ``mu`` used here.
    """
    return int(math.ceil(mu + 40.0 * math.sqrt(mu) + 40.0))


def first_hit_given_k(i: int, k: int, num_bins: int) -> float:
    """P(earliest of ``k`` uniform photons lands in bin ``i``), ``i`` 1-based."""
    num_bins = _check_bins(num_bins)
    if int(i) != i or not (1 <= i <= num_bins):
        raise ValueError(f"bin index must be in 1..{num_bins}, got {i!r}")
    if int(k) != k or k < 1:
        raise ValueError(f"photon number must be >= 1, got {k!r}")
    return (1.0 - (i - 1) / num_bins) ** k - (1.0 - i / num_bins) ** k


def _effective_mu(config: SourceConfig, include_dark: bool) -> float:
    mu = config.mu
    if include_dark:
        # dark counts are a second Poisson process, also uniform in time
        mu += config.dark_rate * config.period
    return mu


def raw_symbol_distribution(config: SourceConfig, include_dark: bool = False) -> BinDistribution:
    """Distribution of the recorded bin given at least one photon in the period.

    Closed form of the photon-number mixture::

        P_i = (exp(-mu (i-1)/N) - exp(-mu i/N)) / (1 - exp(-mu))

    Dead time is not part of this model. ``include_dark`` folds the dark
    count rate into ``mu``; by default it is left out, as in the entropy bound.
    """
    mu = _check_mu(_effective_mu(config, include_dark))
    n = config.num_bins
    i = np.arange(n, dtype=np.float64)
    probs = np.exp(-mu * i / n) * (-math.expm1(-mu / n)) / (-math.expm1(-mu))
    # absorb the last-ulp residue so the vector sums to one
    probs /= probs.sum()
    return BinDistribution(probs)


def series_symbol_distribution(mu: float, num_bins: int, kmax: Optional[int] = None) -> np.ndarray:
    """Truncated photon-number sum of first-hit probabilities (reference path)."""
    mu = _check_mu(mu)
    num_bins = _check_bins(num_bins)
    if kmax is None:
        kmax = max(200, poisson_truncation(mu))
    k = np.arange(1, kmax + 1, dtype=np.float64)
    log_pk = -mu + k * math.log(mu) - np.array([math.lgamma(x + 1.0) for x in k])
    pk = np.exp(log_pk)
    edges = 1.0 - np.arange(num_bins + 1, dtype=np.float64) / num_bins
    hits = edges[:-1, None] ** k[None, :] - edges[1:, None] ** k[None, :]
    return hits @ pk / (-math.expm1(-mu))


def p1_upper_bound(mu: float, num_bins: int) -> float:
    """Upper bound ``mu / (N (1 - e^-mu))`` on the first-bin probability."""
    mu = _check_mu(mu)
    num_bins = _check_bins(num_bins)
    return mu / (num_bins * -math.expm1(-mu))


def min_entropy_lower_bound(mu: float, num_bins: int) -> tuple[float, float]:
    """Lower bound on raw min-entropy as ``(bits_per_symbol, bits_per_bit)``.

    Per-bit entropy divides by ``log2(num_bins)``, the number of raw bits a
    symbol is written as.
    """
    mu = _check_mu(mu)
    num_bins = _check_bins(num_bins)
    per_symbol = math.log2(num_bins) + math.log2(-math.expm1(-mu)) - math.log2(mu)
    return per_symbol, per_symbol / math.log2(num_bins)


def empirical_min_entropy(histogram: Sequence[int]) -> float:
    """Min-entropy in bits of the observed bin frequencies."""
    counts = np.asarray(histogram, dtype=np.float64)
    if counts.ndim != 1 or counts.size == 0:
        raise ValueError("histogram must be a non-empty 1-D sequence of counts")
    if np.any(counts < 0):
        raise ValueError("histogram counts must be nonnegative")
    total = counts.sum()
    if total <= 0:
        raise ValueError("histogram is empty (total count is zero)")
    # max(.., 0.0) maps -0.0 to 0.0 for a single occupied bin
    return max(-math.log2(counts.max() / total), 0.0)


@dataclass
class EntropyReport:
    mu: float
    num_bins: int
    p1_bound: float
    min_entropy_bound_per_symbol: float
    min_entropy_bound_per_bit: float
    extraction_ratio: float
    exact_p1: float
    empirical_min_entropy_per_symbol: Optional[float] = None
    histogram: Optional[list] = field(default=None, repr=False)

    def __post_init__(self):
        if not (0.0 <= self.extraction_ratio <= self.min_entropy_bound_per_bit):
            raise ValueError(
                f"extraction ratio {self.extraction_ratio!r} outside "
                f"[0, {self.min_entropy_bound_per_bit!r}]")

    @property
    def empirical_min_entropy_per_bit(self) -> Optional[float]:
        if self.empirical_min_entropy_per_symbol is None:
            return None
        return self.empirical_min_entropy_per_symbol / math.log2(self.num_bins)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["empirical_min_entropy_per_bit"] = self.empirical_min_entropy_per_bit
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "EntropyReport":
        data = dict(data)
        data.pop("empirical_min_entropy_per_bit", None)
        return cls(**data)


def entropy_report(config: SourceConfig, histogram: Optional[Sequence[int]] = None,
                   extraction_ratio: Optional[float] = None) -> EntropyReport:
    """Collect the model bound and, if given, the empirical estimate.

    ``extraction_ratio`` defaults to the per-bit bound itself.
    """
    mu = config.mu
    per_symbol, per_bit = min_entropy_lower_bound(mu, config.num_bins)
    if extraction_ratio is None:
        extraction_ratio = per_bit
    empirical = None
    hist_list = None
    if histogram is not None:
        counts = np.asarray(histogram)
        if counts.size != config.num_bins:
            raise ValueError(f"histogram has {counts.size} bins, config has {config.num_bins}")
        empirical = empirical_min_entropy(counts)
        hist_list = [int(c) for c in counts]
    return EntropyReport(
        mu=mu,
        num_bins=config.num_bins,
        p1_bound=p1_upper_bound(mu, config.num_bins),
        min_entropy_bound_per_symbol=per_symbol,
        min_entropy_bound_per_bit=per_bit,
        extraction_ratio=float(extraction_ratio),
        exact_p1=raw_symbol_distribution(config).max_prob(),
        empirical_min_entropy_per_symbol=empirical,
        histogram=hist_list,
    )
