"""Static SVG figures for finished runs.

Output is byte-stable: a fixed hash salt for element ids and no creation
date in the metadata.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .diagnostics import FitResult, TimeSeries  # noqa: E402

_RC = {
    "svg.hashsalt": "blowup-lab",
    "svg.fonttype": "path",
    "figure.figsize": (5.5, 3.8),
    "axes.linewidth": 0.6,
    "font.size": 9,
    "lines.linewidth": 1.1,
}
_METADATA = {"Date": None, "Creator": None}


def _save(fig, path: Path) -> Path:
    fig.savefig(path, format="svg", metadata=_METADATA)
    plt.close(fig)
    return path


def plot_b_loglog(series: TimeSeries, fit: Optional[FitResult], path, K: float) -> Path:
    """log-log plot of B(t) with the fitted power law over its window."""
    path = Path(path)
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        keep = (series.t > 0) & (series["B"] > 0)
        ax.loglog(series.t[keep], series["B"][keep], color="0.15", label="B(t)")
        if fit is not None:
            lo, hi = fit.window
            tt = np.geomspace(lo, hi, 50)
            ax.loglog(tt, np.exp(fit.intercept) * tt**fit.slope, "--", color="tab:red",
                      label=f"fit: exponent {fit.slope:.5f} (target {1.0 / (2.0 - K):.5f})")
        ax.set_xlabel("t")
        ax.set_ylabel("B")
        ax.set_title(f"profile model, K = {K:g}")
        ax.legend(frameon=False, loc="upper left")
        fig.tight_layout()
        return _save(fig, path)


def plot_inverse_q(series: TimeSeries, fit: Optional[FitResult], t_star: Optional[float],
                   path) -> Path:
    """1/Q against t with the fitted line and the extrapolated root."""
    path = Path(path)
    with plt.rc_context(_RC):
        fig, (ax, inset) = plt.subplots(1, 2, figsize=(8.0, 3.6))
        keep = series["Q"] > 0
        t, inv = series.t[keep], 1.0 / series["Q"][keep]
        ax.semilogy(t, inv, color="0.15")
        ax.set_xlabel("t")
        ax.set_ylabel("1/Q")
        ax.set_title("whole run")
        if fit is not None:
            lo, hi = fit.window
            sel = (t >= lo) & (t <= hi)
            inset.plot(t[sel], inv[sel], ".", ms=3, color="0.15", label="samples")
            end = t_star if t_star is not None else hi
            tt = np.linspace(lo, end, 50)
            inset.plot(tt, fit.intercept + fit.slope * tt, "--", color="tab:red",
                       label=f"fit, r$^2$ = {fit.r_squared:.5f}")
            if t_star is not None:
                inset.plot([t_star], [0.0], "v", color="tab:red", ms=7,
                           label=f"T* = {t_star:.8g}")
            inset.axhline(0.0, color="0.6", lw=0.5)
            inset.legend(frameon=False, fontsize=7)
        inset.set_xlabel("t")
        inset.set_title("final decade of Q")
        fig.tight_layout()
        return _save(fig, path)
