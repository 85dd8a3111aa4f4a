"""Batch statistics and the asymptotic reference curves used for plots."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Iterable, Sequence, Tuple

import numpy as np

Z95 = 1.959963984540054


def wilson_interval(successes: int, trials: int, z: float = Z95) -> Tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    p = successes / trials
    denom = 1 + z * z / trials
    centre = (p + z * z / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    # clamp so the interval always contains p despite rounding at 0 and 1
    return min(max(0.0, centre - half), p), max(min(1.0, centre + half), p)


@dataclass(frozen=True)
class BatchSummary:
    trials: int
    mean_phases: float
    median_phases: float
    p95_phases: float
    agreement_rate: float
    agreement_ci: Tuple[float, float]
    validity_rate: float
    validity_ci: Tuple[float, float]
    mean_q: float
    violations: int


def summarize(results: Sequence) -> BatchSummary:
    if not results:
        raise ValueError("cannot summarize an empty batch")
    phases = np.array(sorted(r.phases_used for r in results), dtype=float)
    k = len(results)
    agree = sum(1 for r in results if r.agreement)
    valid = sum(1 for r in results if r.validity_ok)
    return BatchSummary(
        trials=k,
        mean_phases=float(phases.mean()),
        median_phases=float(np.median(phases)),
        p95_phases=float(np.percentile(phases, 95)),
        agreement_rate=agree / k,
        agreement_ci=wilson_interval(agree, k),
        validity_rate=valid / k,
        validity_ci=wilson_interval(valid, k),
        mean_q=sum(r.q for r in results) / k,
        violations=sum(len(r.violations) for r in results),
    )


def reference_curves(n: int, x: float, log_base: float = 2.0) -> Tuple[float, float, float]:
    """Unscaled round-complexity shapes at t (or q) = x.

    Returns (new protocol's upper bound min(x^2 log n / n, x / log n),
    local-coin baseline x / log n, adaptive lower bound x / sqrt(n log n)).
    """
    if x < 0 or 3 * x >= n:
        raise ValueError(f"need 0 <= x < n/3, got x={x}, n={n}")
    log_n = math.log(n, log_base)
    upper_cc = x / log_n
    upper_new = min(x * x * log_n / n, upper_cc)
    lower_bb = x / math.sqrt(n * log_n)
    return upper_new, upper_cc, lower_bb


def curves_csv(n: int, xs: Iterable[float], log_base: float = 2.0) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x", "upper_new", "upper_cc", "lower_bb"])
    for x in xs:
        w.writerow([x, *(repr(v) for v in reference_curves(n, x, log_base))])
    return buf.getvalue()


def fit_scale(ys: Sequence[float], curve: Sequence[float]) -> float:
    """Single multiplicative constant k minimising squared log error of
    y ~ k * curve; presentation only. Points with a zero on either side are
    skipped."""
    pairs = [(y, c) for y, c in zip(ys, curve) if y > 0 and c > 0]
    if not pairs:
        raise ValueError("no positive points to fit")
    return math.exp(sum(math.log(y) - math.log(c) for y, c in pairs) / len(pairs))
