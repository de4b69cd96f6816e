"""Trace reductions (fairness, loss, utilization, occupancy) and model scoring.

All reductions are pure functions of a trace plus configuration, evaluated
over the analysis window (a suffix of the run).  Throughput uses the
cumulative goodput series, window-differenced, which is robust to event
burstiness.
"""

import math
from bisect import bisect_left
from dataclasses import dataclass
from typing import Sequence

from .trace import RunTrace

FRACTION_OF_CAPACITY = "of-capacity"
FRACTION_OF_TOTAL = "of-total"


@dataclass(frozen=True)
class MetricsSummary:
    per_flow_throughput_bps: tuple
    bbr_fraction: float
    jfi: float
    loss_rate: float
    utilization: float
    buffer_occupancy: float
    window_s: float


@dataclass(frozen=True)
class ModelScore:
    mse: float
    rmse: float
    residuals: tuple             # predicted - measured, per grid point


def jfi(throughputs: Sequence[float]) -> float:
    """Jain's fairness index: (sum x)^2 / (n * sum x^2)."""
    if len(throughputs) == 0:
        raise ValueError("jfi of an empty set is undefined")
    if any(x < 0 for x in throughputs):
        raise ValueError("jfi requires nonnegative throughputs")
    peak = max(throughputs)
    if peak <= 0:
        raise ValueError("jfi requires a positive total throughput")
    # Normalize by the peak before squaring: JFI is scale-invariant and this
    # keeps the sums well away from float under/overflow.
    scaled = [x / peak for x in throughputs]
    total = math.fsum(scaled)
    sq = math.fsum(x * x for x in scaled)
    return total * total / (len(throughputs) * sq)


def bbr_fraction(throughputs_bps: Sequence[float], is_bbr: Sequence[bool],
                 capacity_bps: float, mode: str = FRACTION_OF_CAPACITY) -> float:
    """Aggregate share of the BBR flows, normalized by capacity or by total."""
    if not any(is_bbr):
        raise ValueError("bbr_fraction requires at least one BBR flow")
    bbr_total = math.fsum(x for x, b in zip(throughputs_bps, is_bbr) if b)
    if mode == FRACTION_OF_CAPACITY:
        return bbr_total / capacity_bps
    if mode == FRACTION_OF_TOTAL:
        total = math.fsum(throughputs_bps)
        return bbr_total / total if total > 0 else 0.0
    raise ValueError(f"unknown mode {mode!r}")


def score_model(predicted: Sequence[tuple], measured: Sequence[tuple]) -> ModelScore:
    """Mean squared error between two aligned (buffer_bdp, value) curves."""
    if len(predicted) != len(measured):
        raise ValueError(
            f"curves differ in length: {len(predicted)} vs {len(measured)}"
        )
    if len(predicted) == 0:
        raise ValueError("cannot score empty curves")
    residuals = []
    for (xp, yp), (xm, ym) in zip(predicted, measured):
        if xp != xm:
            raise ValueError(f"misaligned buffer grids: {xp} vs {xm}")
        residuals.append(yp - ym)
    mse = math.fsum(r * r for r in residuals) / len(residuals)
    return ModelScore(mse=mse, rmse=math.sqrt(mse), residuals=tuple(residuals))


def _window_indices(times: Sequence[float], window_s: float) -> tuple:
    """Indices (start, end) of the trailing analysis window."""
    if len(times) < 2:
        raise ValueError("trace has fewer than two samples")
    if not window_s > 0:
        raise ValueError(f"analysis window must be positive, got {window_s}")
    t_end = times[-1]
    start = bisect_left(times, t_end - window_s)
    if start >= len(times) - 1:
        raise ValueError(
            f"analysis window {window_s}s leaves fewer than two samples"
        )
    return start, len(times) - 1


def per_flow_throughput_bps(trace: RunTrace, window_s: float) -> tuple:
    a, b = _window_indices(trace.sample_times, window_s)
    dt = trace.sample_times[b] - trace.sample_times[a]
    return tuple(
        (series[b] - series[a]) * 8.0 / dt for series in trace.cum_goodput_bytes
    )


def loss_rate(trace: RunTrace, window_s: float) -> float:
    """Dropped / sent bytes within the window (equals the packet ratio)."""
    a, b = _window_indices(trace.sample_times, window_s)
    sent = sum(s[b] - s[a] for s in trace.cum_sent_bytes)
    dropped = sum(s[b] - s[a] for s in trace.cum_dropped_bytes)
    return dropped / sent if sent > 0 else 0.0


def utilization(trace: RunTrace, window_s: float) -> float:
    """Delivered payload bits over capacity * window."""
    a, b = _window_indices(trace.sample_times, window_s)
    dt = trace.sample_times[b] - trace.sample_times[a]
    delivered = sum(s[b] - s[a] for s in trace.cum_goodput_bytes)
    return delivered * 8.0 / (trace.capacity_bps * dt)


def buffer_occupancy(trace: RunTrace, window_s: float) -> float:
    """Time-average queue occupancy as a fraction of the buffer limit."""
    a, b = _window_indices(trace.sample_times, window_s)
    mean_q = math.fsum(trace.queue_bytes[a:b + 1]) / (b - a + 1)
    return mean_q / trace.buffer_limit_bytes


def summarize(trace: RunTrace, window_s: float,
              fraction_mode: str = FRACTION_OF_CAPACITY) -> MetricsSummary:
    rates = per_flow_throughput_bps(trace, window_s)
    is_bbr = [k.is_bbr for k in trace.flow_kinds]
    frac = (
        bbr_fraction(rates, is_bbr, trace.capacity_bps, fraction_mode)
        if any(is_bbr) else float("nan")
    )
    return MetricsSummary(
        per_flow_throughput_bps=rates,
        bbr_fraction=frac,
        jfi=jfi(rates),
        loss_rate=loss_rate(trace, window_s),
        utilization=utilization(trace, window_s),
        buffer_occupancy=buffer_occupancy(trace, window_s),
        window_s=window_s,
    )


def mean_stderr(values: Sequence[float]) -> tuple:
    """Mean and standard error across trials."""
    n = len(values)
    if n == 0:
        raise ValueError("no values")
    mean = math.fsum(values) / n
    if n == 1:
        return mean, 0.0
    var = math.fsum((v - mean) ** 2 for v in values) / (n - 1)
    return mean, math.sqrt(var / n)
