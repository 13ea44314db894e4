"""Figures written next to the metrics CSV: convergence curve and network layout."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.collections import LineCollection  # noqa: E402

STYLE = {
    "font.size": 10,
    "axes.labelsize": 10,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "lines.linewidth": 1.2,
    "svg.fonttype": "none",
    "svg.hashsalt": "bdasg",
    "path.simplify": False,
}


def _figure(width=6.0):
    golden = (np.sqrt(5.0) - 1.0) / 2.0
    return plt.subplots(figsize=(width, width * golden))


def _save(fig, path):
    path = Path(path)
    try:
        fig.savefig(path, format="svg", metadata={"Date": None})
    except OSError as exc:
        raise OSError(f"cannot write figure to {path}: {exc}") from exc
    finally:
        plt.close(fig)


def render_convergence_plot(metrics, path, log_scale=True, field="mean_opt_err"):
    """Mean error against iteration with a shaded one-standard-deviation band.

    The mean curve carries the SVG id ``<field>`` and the band ``<field>_band``.
    Falls back to the consensus error when no baseline was configured.
    """
    if len(metrics.k) == 0:
        raise ValueError("no metrics to plot")
    mean = np.asarray(metrics.mean[field], dtype=float)
    if np.isnan(mean).all():
        field = "consensus_err"
        mean = np.asarray(metrics.mean[field], dtype=float)
    std = np.asarray(metrics.std[field], dtype=float)
    k = np.asarray(metrics.k)
    labels = {
        "mean_opt_err": r"$\|\bar{x}(k) - x^*\|$",
        "consensus_err": r"$\|X^\dagger(k)\|_F$",
        "tracker_dispersion": r"$\|Y^\dagger(k)\|_F$",
        "objective_gap": r"$b(\bar{x}(k)) - b(x^*)$",
    }
    with plt.rc_context(STYLE):
        fig, ax = _figure()
        lo = mean - std
        if log_scale:
            # keep the band inside the positive axis range
            floor = np.nanmin(mean[mean > 0]) * 1e-3 if (mean > 0).any() else 1e-300
            lo = np.maximum(lo, floor)
        band = ax.fill_between(k, lo, mean + std, alpha=0.25, linewidth=0, color="C0")
        band.set_gid(f"{field}_band")
        (line,) = ax.plot(k, mean, color="C0", label=f"mean over {metrics.trials} trial(s)")
        line.set_gid(field)
        if log_scale:
            ax.set_yscale("log")
        ax.set_xlabel("iteration $k$")
        ax.set_ylabel(labels.get(field, field))
        ax.set_title(f"BDASG convergence  [config {metrics.config_hash or 'n/a'}]")
        ax.grid(True, which="major", alpha=0.3)
        ax.legend(loc="upper right", frameon=False)
        fig.tight_layout()
        _save(fig, path)


def layout(graph) -> np.ndarray:
    """2-D node positions: circle for ring-like graphs, Laplacian eigenmap otherwise."""
    n = graph.n
    deg = np.asarray(graph.degrees)
    if n <= 2 or (deg == 2).all():
        t = 2 * np.pi * np.arange(n) / max(n, 1)
        return np.column_stack([np.cos(t), np.sin(t)])
    if deg.max() == n - 1 and (np.sort(deg)[:-1] == 1).all():
        hub = int(np.argmax(deg))
        others = [i for i in range(n) if i != hub]
        t = 2 * np.pi * np.arange(len(others)) / len(others)
        pos = np.zeros((n, 2))
        pos[others] = np.column_stack([np.cos(t), np.sin(t)])
        return pos
    A = np.zeros((n, n))
    for i, j in graph.edges:
        A[i, j] = A[j, i] = 1.0
    L = np.diag(A.sum(1)) - A
    _, vecs = np.linalg.eigh(L)
    pos = vecs[:, 1:3]
    return pos / np.abs(pos).max()


def render_topology_plot(graph, path, title=None):
    pos = layout(graph)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 4.5))
        segs = [(pos[i], pos[j]) for i, j in graph.edges]
        ax.add_collection(LineCollection(segs, colors="0.6", linewidths=0.6, gid="edges"))
        ax.scatter(pos[:, 0], pos[:, 1], s=18, c=graph.degrees, cmap="viridis", zorder=3, gid="nodes")
        ax.set_aspect("equal")
        ax.axis("off")
        ax.set_title(title or f"n={graph.n}, sigma2={graph.sigma2:.3f}")
        fig.tight_layout()
        _save(fig, path)
