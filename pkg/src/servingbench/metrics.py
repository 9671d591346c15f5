"""Summary metrics and time series over request records.

Latency statistics are computed over successful records only; failures are
accounted separately as a rate.  Percentiles use the nearest-rank method
(sorted value at index ceil(q*n)-1), with no interpolation.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

from .errors import InsufficientDataError, ParameterError
from .loadgen import RequestRecord


@dataclass(frozen=True)
class LatencySummary:
    p50: float | None
    p95: float | None
    p99: float | None
    min: float | None
    avg: float | None
    max: float | None
    rps: float
    failure_rate: float
    total: int
    failures: int
    duration: float


@dataclass(frozen=True)
class TimeSeriesPoint:
    window_start: float
    rps: float
    error_rate: float
    avg_response: float | None


def percentile(values: list[float], q: float) -> float:
    """Nearest-rank percentile: sorted value at index ceil(q*n)-1."""
    if not values:
        raise InsufficientDataError("percentile of empty list")
    if not 0.0 < q <= 1.0:
        raise ParameterError(f"q must be in (0, 1], got {q}")
    ordered = sorted(values)
    return ordered[math.ceil(q * len(ordered)) - 1]


def summarize(records: list[RequestRecord],
              latency_from: str = "sent") -> LatencySummary:
    """One-run summary.  ``latency_from="scheduled"`` measures latency from
    the scheduled send time instead of the actual send time, which is the
    coordinated-omission-safe choice for open-loop runs."""
    if not records:
        raise InsufficientDataError("summarize needs at least 1 record")
    if latency_from not in ("sent", "scheduled"):
        raise ParameterError(f"unknown latency_from {latency_from!r}")
    total = len(records)
    failures = sum(1 for r in records if not r.is_success)
    if latency_from == "sent":
        lat = [r.response_time for r in records
               if r.is_success and r.response_time is not None]
    else:
        lat = [(r.completed_at - r.scheduled_at) * 1000.0 for r in records
               if r.is_success and r.completed_at is not None]
    first_send = min(r.sent_at for r in records)
    ends = [r.completed_at for r in records if r.completed_at is not None]
    duration = (max(ends) - first_send) if ends else 0.0
    rps = total / duration if duration > 0 else 0.0
    if lat:
        return LatencySummary(
            p50=percentile(lat, 0.50), p95=percentile(lat, 0.95),
            p99=percentile(lat, 0.99), min=min(lat),
            avg=math.fsum(lat) / len(lat), max=max(lat),
            rps=rps, failure_rate=failures / total,
            total=total, failures=failures, duration=duration)
    return LatencySummary(p50=None, p95=None, p99=None, min=None, avg=None,
                          max=None, rps=rps, failure_rate=failures / total,
                          total=total, failures=failures, duration=duration)


def timeseries(records: list[RequestRecord],
               window: float) -> list[TimeSeriesPoint]:
    """Contiguous fixed-width windows from t=0 to run end.  Successes are
    bucketed by completion time, failures by detection time."""
    if window <= 0:
        raise ParameterError(f"window must be > 0, got {window}")
    if not records:
        return []
    end = max(r.completed_at for r in records if r.completed_at is not None)
    n_windows = max(1, math.ceil(end / window))
    ok = [0] * n_windows
    bad = [0] * n_windows
    resp_sum = [0.0] * n_windows
    for r in records:
        if r.completed_at is None:
            continue
        w = min(int(r.completed_at / window), n_windows - 1)
        if r.is_success:
            ok[w] += 1
            if r.response_time is not None:
                resp_sum[w] += r.response_time
        else:
            bad[w] += 1
    return [TimeSeriesPoint(
        window_start=i * window,
        rps=ok[i] / window,
        error_rate=bad[i] / window,
        avg_response=(resp_sum[i] / ok[i]) if ok[i] else None,
    ) for i in range(n_windows)]


def write_records_csv(records: list[RequestRecord], path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["index", "scheduled_at", "sent_at", "completed_at",
                    "status", "response_time_ms", "payload_id"])
        for r in records:
            w.writerow([r.index, r.scheduled_at, r.sent_at,
                        "" if r.completed_at is None else r.completed_at,
                        r.status,
                        "" if r.response_time is None else r.response_time,
                        r.payload_id])


def summary_to_dict(s: LatencySummary) -> dict:
    return {"p50": s.p50, "p95": s.p95, "p99": s.p99, "min": s.min,
            "avg": s.avg, "max": s.max, "rps": s.rps,
            "failure_rate": s.failure_rate, "total": s.total,
            "failures": s.failures, "duration": s.duration}


def timeseries_to_list(points: list[TimeSeriesPoint]) -> list[dict]:
    return [{"window_start": p.window_start, "rps": p.rps,
             "error_rate": p.error_rate, "avg_response": p.avg_response}
            for p in points]
