"""Per-run measurements and the aggregate statistics used in reports.

The two core metrics per connection setup are the virtual time from the
first IKE_SA_INIT transmission until establishment, and the total bytes
both endpoints put on the wire (retransmissions and restarts included).
Percentiles use the nearest-rank definition (1-based index ceil(p/100 * n)
of the sorted sample) so results are reproducible bit-for-bit.
"""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass


class EmptySample(ValueError):
    pass


class DegenerateSample(ValueError):
    """Correlation is undefined: one of the samples has zero variance."""


class NotEstablished(RuntimeError):
    """The run ended without a security association."""


def setup_time(trace) -> float:
    """Milliseconds from the first datagram emission to establishment."""
    if not trace.success or trace.established_time is None:
        raise NotEstablished("run terminated before the handshake completed")
    return trace.established_time - trace.first_tx_time


def ecdf(samples) -> list[tuple[float, float]]:
    """Empirical CDF as (value, cumulative fraction) steps; ends at 1.0."""
    if not samples:
        raise EmptySample("ecdf of an empty sample")
    ordered = sorted(samples)
    n = len(ordered)
    points = []
    for i, value in enumerate(ordered, start=1):
        if i == n or ordered[i] != value:
            points.append((value, i / n))
    return points


def percentile(samples, p: float):
    """Nearest-rank percentile: element at 1-based index ceil(p/100 * n)."""
    if not samples:
        raise EmptySample("percentile of an empty sample")
    if not 0 <= p <= 100:
        raise ValueError("p must be within 0..100")
    ordered = sorted(samples)
    rank = max(1, math.ceil(p / 100.0 * len(ordered)))
    return ordered[rank - 1]


def pearson(a, b) -> float:
    """Product-moment correlation of two equal-length samples."""
    a, b = list(a), list(b)
    if len(a) != len(b):
        raise ValueError("samples must have equal length")
    if len(a) < 2:
        raise ValueError("at least two pairs required")
    try:
        return statistics.correlation(a, b)
    except statistics.StatisticsError as exc:
        raise DegenerateSample(str(exc)) from None


@dataclass(frozen=True)
class RunRecord:
    """Measurements of one connection-setup iteration."""

    scenario_id: str
    suite_id: str
    iteration: int
    seed: int
    loss_rate: float
    rtt_ms: float
    success: bool
    setup_time_ms: float | None
    total_bytes: int
    datagrams: int
    retransmissions: int
    restarts: int


@dataclass(frozen=True)
class SummaryStats:
    mean: float
    median: float
    p95: float
    p99: float
    min: float
    max: float

    @classmethod
    def from_samples(cls, samples) -> "SummaryStats":
        if not samples:
            raise EmptySample("summary of an empty sample")
        return cls(
            mean=statistics.fmean(samples),
            median=percentile(samples, 50),
            p95=percentile(samples, 95),
            p99=percentile(samples, 99),
            min=min(samples),
            max=max(samples),
        )
