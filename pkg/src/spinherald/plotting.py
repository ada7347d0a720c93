"""Report figures. Everything renders off-screen with the Agg backend."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .analysis import ScalingFit, cumulative_variance  # noqa: E402
from .dicke import JzDistribution  # noqa: E402

GOLDEN = (np.sqrt(5) - 1.0) / 2.0
COLUMN_WIDTH = 3.4
COLORS = ["#d95f02", "#1b9e77", "#7570b3", "#e7298a"]

STYLE = {
    "axes.prop_cycle": matplotlib.cycler(color=COLORS),
    "axes.labelsize": 9,
    "font.size": 8,
    "font.family": "serif",
    "mathtext.fontset": "stix",
    "legend.fontsize": 7,
    "legend.frameon": False,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "figure.figsize": [COLUMN_WIDTH, COLUMN_WIDTH * GOLDEN],
    "figure.dpi": 150,
    "savefig.dpi": 200,
    "lines.linewidth": 1.2,
    "lines.markersize": 3,
}


def new_figure(scale: float = 1.0):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(COLUMN_WIDTH * scale, COLUMN_WIDTH * scale * GOLDEN))
    return fig, ax


def save(fig, path: str | Path) -> Path:
    path = Path(path)
    with plt.rc_context(STYLE):
        fig.tight_layout()
        fig.savefig(path)
    plt.close(fig)
    return path


def plot_noise_scaling(fit: ScalingFit, path, sum_sq: float = 0.0):
    """Binned phase variance against atom number with the fitted parts."""
    bins = fit.bins
    n = bins["n_mean"]
    v = bins["variance"]
    err = np.sqrt(2.0 / (bins["count"] - 1)) * v
    grid = np.linspace(0, n.max() * 1.1, 200)
    with plt.rc_context(STYLE):
        fig, ax = new_figure()
        ax.errorbar(n, v, yerr=err, fmt="o", color="k", label="binned var($\\phi$)")
        ax.plot(grid, fit.variance(grid), color=COLORS[0], label="fit")
        own = fit.c_lin * grid / (1.0 + sum_sq)
        ax.plot(grid, own, "--", color=COLORS[1], label="projection noise")
        ax.fill_between(grid, 0, fit.c_const + fit.c_quad * grid**2, color=COLORS[0], alpha=0.25,
                        lw=0, label="constant + quadratic")
        ax.set_xlabel("atom number $N_a$")
        ax.set_ylabel("var($\\phi$)")
        ax.legend(loc="upper left")
        return save(fig, path)


def plot_cumulative_variance(z_values, click, path):
    """Running sample variance of Z for the click and no-click sets."""
    click = np.asarray(click, dtype=bool)
    nc_n, nc_v = cumulative_variance(z_values, ~click)
    c_n, c_v = cumulative_variance(z_values, click)
    with plt.rc_context(STYLE):
        fig, ax = new_figure()
        ax.plot(c_n, c_v, color=COLORS[0], label="click")
        ax.set_xlabel("observations with a click")
        ax.set_ylabel("var($Z$)")
        top = ax.twiny()
        top.plot(nc_n, nc_v, color=COLORS[1], label="no click")
        top.set_xlabel("observations without a click")
        ax.axhline(1.0, color="0.5", lw=0.6)
        lines = ax.get_lines()[:1] + top.get_lines()
        ax.legend(lines, [l.get_label() for l in lines], loc="upper right")
        return save(fig, path)


def plot_marginals(dists: dict[str, JzDistribution], path):
    """Population-difference marginals of the rotated states."""
    with plt.rc_context(STYLE):
        fig, ax = new_figure()
        styles = ["-", "--", ":", "-."]
        for (label, dist), ls in zip(dists.items(), styles):
            ax.plot(dist.delta_n, dist.probabilities, ls, label=label)
        ax.set_xlabel("$\\Delta N$")
        ax.set_ylabel("probability")
        ax.legend()
        return save(fig, path)


def plot_posterior(probabilities, path):
    p = np.asarray(probabilities)
    with plt.rc_context(STYLE):
        fig, ax = new_figure()
        ax.bar(np.arange(len(p)), p, color=COLORS[2])
        ax.set_yscale("log")
        ax.set_xlabel("excitations $n$")
        ax.set_ylabel("$p(n\\,|\\,$1 click$)$")
        return save(fig, path)
