"""Statistical validation of generated traffic.

Compares empirical samples against the theoretical distribution of their
arrival process: moments, density-normalized histogram, Gaussian-kernel KDE,
theoretical PDF, and density-gap metrics (max-abs and trapezoidal L1).

The fit comparison reflects the sample about zero before smoothing
(``boundary="reflect"``) because inter-arrival times live on [0, inf) and an
uncorrected Gaussian KDE loses roughly half its mass at the origin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .arrivals import ArrivalProcess, EXPONENTIAL, SampleStats, empirical_stats
from .errors import InsufficientDataError, ParameterError

AUTO = "auto"

_trapezoid = getattr(np, "trapezoid", None) or np.trapz  # numpy < 2 fallback

DEFAULT_GRID_POINTS = 512
DEFAULT_HISTOGRAM_BINS = 50


@dataclass(frozen=True)
class DensityCurve:
    grid: list[float]
    values: list[float]


@dataclass(frozen=True)
class FitReport:
    empirical: SampleStats
    theoretical_mean: float
    theoretical_variance: float
    max_abs_density_gap: float
    l1_density_gap: float
    bandwidth: float
    kde_curve: DensityCurve
    pdf_curve: DensityCurve
    histogram: list[tuple[float, float, float]]


def default_grid(process: ArrivalProcess,
                 points: int = DEFAULT_GRID_POINTS) -> list[float]:
    """Evenly spaced grid on (0, 6*mean]; x=0 is excluded so shape
    parameters below 1 never evaluate the PDF at its singularity."""
    hi = 6.0 * process.target_mean
    return list(np.linspace(0.0, hi, points + 1)[1:])


def theoretical_pdf(process: ArrivalProcess, grid: list[float]) -> DensityCurve:
    if len(grid) == 0:
        raise ParameterError("grid must be non-empty")
    g = np.asarray(grid, dtype=float)
    if np.any(g < 0) or np.any(np.diff(g) <= 0):
        raise ParameterError("grid must be non-negative and strictly increasing")
    if process.kind == EXPONENTIAL:
        lam = process.rate_lambda
        vals = lam * np.exp(-lam * g)
    else:
        alpha, theta = process.shape_alpha, process.scale_theta
        norm = math.gamma(alpha) * theta**alpha
        with np.errstate(divide="ignore"):
            vals = g ** (alpha - 1.0) * np.exp(-g / theta) / norm
        if g[0] == 0.0:
            if alpha < 1.0:
                # Singular at the origin: report the nearest finite value.
                vals[0] = vals[1] if len(g) > 1 else 0.0
            elif alpha == 1.0:
                vals[0] = 1.0 / theta
            else:
                vals[0] = 0.0
    return DensityCurve(grid=list(g), values=[float(v) for v in vals])


def silverman_bandwidth(samples: list[float]) -> float:
    """0.9 * min(sd, IQR/1.34) * n^(-1/5)."""
    x = np.asarray(samples, dtype=float)
    sd = float(x.std(ddof=1))
    q75, q25 = np.percentile(x, [75, 25])
    spread = min(sd, (q75 - q25) / 1.34)
    return 0.9 * spread * len(x) ** (-0.2)


def kde(samples: list[float], bandwidth: float | str, grid: list[float],
        boundary: str | None = None) -> DensityCurve:
    """Gaussian-kernel density estimate on the grid.

    bandwidth is a width in seconds or AUTO (Silverman's rule).  With
    ``boundary="reflect"`` the sample is mirrored about zero, which restores
    the mass an ordinary KDE smears below the origin.
    """
    if len(samples) < 2:
        raise InsufficientDataError("kde needs at least 2 samples")
    if bandwidth == AUTO:
        h = silverman_bandwidth(samples)
    else:
        h = float(bandwidth)
        if h <= 0:
            raise ParameterError(f"bandwidth must be > 0, got {bandwidth}")
    x = np.asarray(samples, dtype=float)
    g = np.asarray(grid, dtype=float)
    z = (g[:, None] - x[None, :]) / h
    dens = np.exp(-0.5 * z * z)
    if boundary == "reflect":
        zr = (g[:, None] + x[None, :]) / h
        dens = dens + np.exp(-0.5 * zr * zr)
    vals = dens.mean(axis=1) / (h * math.sqrt(2.0 * math.pi))
    return DensityCurve(grid=list(g), values=[float(v) for v in vals])


def histogram(samples: list[float],
              bin_count: int) -> list[tuple[float, float, float]]:
    """Density-normalized histogram: (bin_left, bin_right, height) tuples."""
    if bin_count < 1:
        raise ParameterError(f"bin_count must be >= 1, got {bin_count}")
    if len(samples) == 0:
        raise InsufficientDataError("histogram needs at least 1 sample")
    heights, edges = np.histogram(samples, bins=bin_count, density=True)
    return [(float(edges[i]), float(edges[i + 1]), float(heights[i]))
            for i in range(bin_count)]


def fit_report(samples: list[float], process: ArrivalProcess,
               grid: list[float] | None = None,
               histogram_bins: int = DEFAULT_HISTOGRAM_BINS) -> FitReport:
    """Empirical vs theoretical comparison for one traffic run."""
    if grid is None:
        grid = default_grid(process)
    pdf_curve = theoretical_pdf(process, grid)
    h = silverman_bandwidth(samples)
    kde_curve = kde(samples, h, grid, boundary="reflect")
    k = np.asarray(kde_curve.values)
    p = np.asarray(pdf_curve.values)
    gap = np.abs(k - p)
    return FitReport(
        empirical=empirical_stats(samples),
        theoretical_mean=process.theoretical_mean(),
        theoretical_variance=process.theoretical_variance(),
        max_abs_density_gap=float(gap.max()),
        l1_density_gap=float(_trapezoid(gap, np.asarray(grid))),
        bandwidth=h,
        kde_curve=kde_curve,
        pdf_curve=pdf_curve,
        histogram=histogram(samples, histogram_bins),
    )


def fit_report_to_dict(fit: FitReport) -> dict:
    return {
        "empirical": {"count": fit.empirical.count, "mean": fit.empirical.mean,
                      "variance": fit.empirical.variance},
        "theoretical_mean": fit.theoretical_mean,
        "theoretical_variance": fit.theoretical_variance,
        "max_abs_density_gap": fit.max_abs_density_gap,
        "l1_density_gap": fit.l1_density_gap,
        "bandwidth": fit.bandwidth,
        "grid": fit.kde_curve.grid,
        "kde_values": fit.kde_curve.values,
        "pdf_values": fit.pdf_curve.values,
        "histogram": [list(b) for b in fit.histogram],
    }
