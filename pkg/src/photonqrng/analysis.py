"""Histogram consistency checks and bit-rate bookkeeping."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .special import chi2_sf

__all__ = [
    "ChiSquareResult",
    "chi_square_gof",
    "chi_square_homogeneity",
    "linear_fit",
    "max_bin_deviation",
    "RateReport",
    "rate_report",
]


@dataclass(frozen=True)
class ChiSquareResult:
    statistic: float
    dof: int
    p_value: float


def chi_square_gof(counts: Sequence[int], probs: Sequence[float]) -> ChiSquareResult:
    """Pearson goodness of fit of observed counts to bin probabilities."""
    counts = np.asarray(counts, dtype=np.float64)
    probs = np.asarray(probs, dtype=np.float64)
    if counts.shape != probs.shape:
        raise ValueError("counts and probs must have the same shape")
    expected = counts.sum() * probs
    if np.any(expected <= 0):
        raise ValueError("every bin needs a positive expected count")
    stat = float(np.sum((counts - expected) ** 2 / expected))
    dof = counts.size - 1
    return ChiSquareResult(stat, dof, chi2_sf(stat, dof))


def chi_square_homogeneity(*histograms: Sequence[int]) -> ChiSquareResult:
    """Test that several histograms share one underlying distribution.

    Bins empty in every histogram are dropped before counting degrees of
    freedom.
    """
    table = np.asarray(histograms, dtype=np.float64)
    if table.ndim != 2 or table.shape[0] < 2:
        raise ValueError("need at least two histograms of equal length")
    table = table[:, table.sum(axis=0) > 0]
    rows = table.sum(axis=1, keepdims=True)
    cols = table.sum(axis=0, keepdims=True)
    expected = rows * cols / table.sum()
    stat = float(np.sum((table - expected) ** 2 / expected))
    dof = (table.shape[0] - 1) * (table.shape[1] - 1)
    return ChiSquareResult(stat, dof, chi2_sf(stat, dof))


def linear_fit(x: Sequence[float], y: Sequence[float]) -> tuple[float, float, float]:
    """Least-squares line ``y = slope x + intercept``; returns (slope, intercept, r2)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid ** 2) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), float(r2)


def max_bin_deviation(counts: Sequence[int]) -> float:
    """Largest |frequency - 1/N| over the bins of a histogram."""
    counts = np.asarray(counts, dtype=np.float64)
    return float(np.max(np.abs(counts / counts.sum() - 1.0 / counts.size)))


@dataclass(frozen=True)
class RateReport:
    spad_count_rate: float
    bits_per_symbol: float
    nominal_raw_bit_rate: float
    raw_bit_rate: float
    extraction_ratio: float
    final_bit_rate: float

    def to_dict(self) -> dict:
        return asdict(self)


def rate_report(spad_count_rate: float, num_bins: int, n: int, m: int,
                observed_raw_bit_rate: Optional[float] = None) -> RateReport:
    """Raw and extracted bit rates implied by a count rate and block geometry.

    The final rate scales the observed raw rate when one is supplied (readout
    losses are not modelled), otherwise the nominal count-rate figure.
    """
    bits = math.log2(num_bins)
    nominal = spad_count_rate * bits
    raw = nominal if observed_raw_bit_rate is None else float(observed_raw_bit_rate)
    ratio = m / n
    return RateReport(spad_count_rate, bits, nominal, raw, ratio, raw * ratio)
