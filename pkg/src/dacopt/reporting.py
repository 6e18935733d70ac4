"""Delimited output, log-log slope fits, and the figures rendered alongside.

CSV bytes are deterministic: floats are written in shortest round-trip form
and no timestamps or timings enter the table.  Figures (matplotlib, Agg) are
a rendering of the same rows for quick inspection; the CSV stays the
canonical artifact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class FitRefusedError(ValueError):
    """Too few successful sweep points for a slope fit."""


def format_value(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: str, header: list, rows: list):
    lines = [",".join(header)]
    for row in rows:
        if len(row) != len(header):
            raise ValueError("row width does not match the header")
        lines.append(",".join(format_value(v) for v in row))
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    stderr: float
    points: int


def fit_loglog(x, y) -> SlopeFit:
    """Least-squares slope of log10(y) against log10(x) with its standard error."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 4:
        raise FitRefusedError(f"need at least 4 points for a slope fit, got {x.size}")
    if np.any(x <= 0) or np.any(y <= 0):
        raise FitRefusedError("log-log fit needs strictly positive data")
    lx, ly = np.log10(x), np.log10(y)
    n = lx.size
    xbar = lx.mean()
    sxx = float(np.sum((lx - xbar) ** 2))
    if sxx == 0.0:
        raise FitRefusedError("degenerate grid: all abscissae equal")
    slope = float(np.sum((lx - xbar) * (ly - ly.mean())) / sxx)
    intercept = float(ly.mean() - slope * xbar)
    resid = ly - (intercept + slope * lx)
    dof = max(n - 2, 1)
    stderr = float(math.sqrt(float(np.sum(resid ** 2)) / dof / sxx))
    return SlopeFit(slope=slope, intercept=intercept, stderr=stderr, points=n)


def _matplotlib():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def render_solve_figure(report, path: str, title: str = "solve"):
    """Semilogy convergence curves (constraint residual, distance, gap)."""
    plt = _matplotlib()
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    r = np.asarray(report.constraint_residual_history, dtype=float)
    if r.size:
        ax.semilogy(np.maximum(r, 1e-300), label="constraint residual")
    if report.distance_history is not None and len(report.distance_history):
        ax.semilogy(np.maximum(report.distance_history, 1e-300), label="distance to optimum")
    if report.objective_gap_history is not None and len(report.objective_gap_history):
        gaps = np.abs(np.asarray(report.objective_gap_history, dtype=float))
        ax.semilogy(np.maximum(gaps, 1e-300), label="|objective gap|")
    ax.set_xlabel("recorded iteration")
    ax.set_ylabel("magnitude")
    ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_sweep_figure(x, y, fit: SlopeFit, path: str,
                        xlabel: str = "parameter", ylabel: str = "count",
                        title: str = "sweep"):
    """Log-log scatter of the sweep with the fitted power law."""
    plt = _matplotlib()
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    ax.loglog(x, y, "o", label="measured")
    grid = np.geomspace(x.min(), x.max(), 64)
    ax.loglog(grid, 10 ** fit.intercept * grid ** fit.slope, "-",
              label=f"slope {fit.slope:.3f} +/- {fit.stderr:.3f}")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
