"""Render figures from servingbench report JSON.

All math (KDE, PDF, summaries, time series) lives in the report; this
module only draws what it is given. Output files are written atomically
(temp file + rename) so a crashed render never leaves a partial image.
"""

from __future__ import annotations

import json
import os
import tempfile

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

SUPPORTED_SCHEMA_VERSIONS = (1,)

EVENT_MARKER_GID = "event-marker"


class SchemaError(ValueError):
    """The report's schema_version is missing or unsupported."""


class MissingSectionError(ValueError):
    """The report lacks the section this figure kind needs."""


def load_report(path: str) -> dict:
    with open(path, encoding="utf-8") as f:
        report = json.load(f)
    version = report.get("schema_version")
    if version not in SUPPORTED_SCHEMA_VERSIONS:
        raise SchemaError(
            f"unsupported schema_version {version!r}; "
            f"this build supports {list(SUPPORTED_SCHEMA_VERSIONS)}")
    return report


def save_atomic(fig, out_path: str) -> None:
    """Write the figure next to its destination, then rename into place."""
    directory = os.path.dirname(os.path.abspath(out_path)) or "."
    suffix = os.path.splitext(out_path)[1] or ".png"
    fd, tmp = tempfile.mkstemp(suffix=suffix, dir=directory)
    os.close(fd)
    try:
        fig.savefig(tmp, format=suffix.lstrip("."))
        os.replace(tmp, out_path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    finally:
        plt.close(fig)


def plot_density(report: dict, out_path: str):
    """Histogram + KDE curve + theoretical PDF curve, one layer each."""
    fit = report.get("fit")
    if not fit:
        raise MissingSectionError("report has no 'fit' section")
    fig, ax = plt.subplots(figsize=(8, 5))
    lefts = [b[0] for b in fit["histogram"]]
    widths = [b[1] - b[0] for b in fit["histogram"]]
    heights = [b[2] for b in fit["histogram"]]
    bars = ax.bar(lefts, heights, width=widths, align="edge", alpha=0.35,
                  color="tab:gray", label="histogram")
    kde_line, = ax.plot(fit["grid"], fit["kde_values"], color="tab:blue",
                        lw=2, label="KDE")
    pdf_line, = ax.plot(fit["grid"], fit["pdf_values"], color="tab:red",
                        lw=2, linestyle="--", label="theoretical PDF")
    ax.set_xlabel("inter-arrival time (s)")
    ax.set_ylabel("density (1/s)")
    ax.legend(handles=[bars, kde_line, pdf_line])
    ax.set_title("Empirical vs theoretical arrival density")
    fig.tight_layout()
    save_atomic(fig, out_path)
    return fig


def _plan_events(report: dict) -> list[dict]:
    plan = report.get("config_echo", {}).get("plan")
    return plan or []


def plot_resilience(report: dict, out_path: str):
    """Stacked RPS / error-rate / avg-response panels with one vertical
    marker per disruption event."""
    series = report.get("timeseries")
    if not series:
        raise MissingSectionError("report has no 'timeseries' section")
    starts = [p["window_start"] for p in series]
    fig, axes = plt.subplots(3, 1, figsize=(9, 7), sharex=True)
    axes[0].plot(starts, [p["rps"] for p in series], color="tab:blue")
    axes[0].set_ylabel("RPS")
    axes[1].plot(starts, [p["error_rate"] for p in series], color="tab:red")
    axes[1].set_ylabel("errors/s")
    axes[2].plot(starts, [p["avg_response"] for p in series],
                 color="tab:green")
    axes[2].set_ylabel("avg response (ms)")
    axes[2].set_xlabel("run time (s)")
    for event in _plan_events(report):
        for ax in axes:
            line = ax.axvline(event["at"], color="black", linestyle=":",
                              alpha=0.7)
            line.set_gid(EVENT_MARKER_GID)
        axes[0].annotate(event["kind"], xy=(event["at"], 1.0),
                         xycoords=("data", "axes fraction"),
                         fontsize=7, rotation=90, va="top", ha="right")
    axes[0].set_title("Service behavior under disruption")
    fig.tight_layout()
    save_atomic(fig, out_path)
    return fig


def plot_profiles(report: dict, out_path: str):
    """Per-sample latency and throughput vs batch size, one line per
    backend profile, log scale."""
    profiles = report.get("profiles")
    if not profiles:
        raise MissingSectionError("report has no 'profiles' section")
    fig, (ax_lat, ax_thr) = plt.subplots(1, 2, figsize=(11, 5))
    for name in sorted(profiles):
        row = profiles[name]
        sizes = sorted(int(b) for b in row["latency_ms"])
        ax_lat.plot(sizes, [row["latency_ms"][str(b)] for b in sizes],
                    marker="o", label=name)
        ax_thr.plot(sizes, [row["throughput_sps"][str(b)] for b in sizes],
                    marker="o", label=name)
    for ax, ylabel in ((ax_lat, "latency per sample (ms)"),
                       (ax_thr, "throughput (samples/s)")):
        ax.set_xscale("log", base=2)
        ax.set_yscale("log")
        ax.set_xlabel("batch size")
        ax.set_ylabel(ylabel)
        ax.legend(fontsize=8)
    ax_lat.set_title("Latency vs batch size")
    ax_thr.set_title("Throughput vs batch size")
    fig.tight_layout()
    save_atomic(fig, out_path)
    return fig
