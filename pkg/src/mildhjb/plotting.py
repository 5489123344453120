"""Figures for the CLI report path (Agg backend, written to files)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed metadata keeps repeated runs byte-identical
_PNG_META = {"Software": None}


def _save(fig, path):
    fig.savefig(path, dpi=110, metadata=_PNG_META)
    plt.close(fig)
    return str(path)


def _plot_value_2d(v, path, title):
    X, Y = np.meshgrid(v.axes[0], v.axes[1], indexing="ij")
    panels = [("v", v.values)]
    if v.gradient_values is not None:
        panels.append(("g_1", v.gradient_values[..., 0]))
    fig, axes = plt.subplots(1, len(panels), figsize=(5 * len(panels), 4), squeeze=False)
    for ax, (name, z) in zip(axes[0], panels):
        cs = ax.contourf(X, Y, z, levels=20, cmap="viridis")
        fig.colorbar(cs, ax=ax)
        ax.set_title(name if title is None else f"{title}: {name}")
        ax.set_xlabel("x_1")
        ax.set_ylabel("x_2")
    fig.tight_layout()
    return _save(fig, path)


def plot_value(v, path, title=None):
    """Value and B-gradient: contours on 2-d grids, otherwise a line along the first axis.

    Higher-dimensional grids are cut through the midpoint of the remaining axes.
    """
    if len(v.axes) == 2:
        return _plot_value_2d(v, path, title)
    x = v.axes[0]
    sl = (slice(None),) + tuple(len(a) // 2 for a in v.axes[1:])
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(6, 5), sharex=True)
    ax1.plot(x, v.values[sl], color="C0", lw=1.5)
    ax1.set_ylabel("v")
    if title:
        ax1.set_title(title)
    if v.gradient_values is not None:
        g = v.gradient_values[sl]
        for k in range(g.shape[-1]):
            ax2.plot(x, g[..., k], lw=1.2, label=f"g_{k + 1}")
        ax2.legend(frameon=False)
    ax2.set_xlabel("x_1")
    ax2.set_ylabel("grad_B v")
    for ax in (ax1, ax2):
        ax.grid(alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)


def plot_convergence(trace, path, title=None):
    fig, ax = plt.subplots(figsize=(6, 3.5))
    d = np.asarray(trace.deltas, float)
    k = np.arange(1, len(d) + 1)
    ax.semilogy(k[d > 0], d[d > 0], "o-", ms=3, lw=1)
    ax.set_xlabel("iteration")
    ax.set_ylabel("sup-norm delta")
    if title:
        ax.set_title(title)
    ax.grid(alpha=0.3, which="both")
    fig.tight_layout()
    return _save(fig, path)


def plot_smoothing(times, finite, lifted, fit, path):
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.loglog(times, finite, "o", ms=4, label="finite")
    if lifted is not None:
        ax.loglog(times, lifted, "x", ms=5, label="lifted")
    t = np.geomspace(min(times), max(times), 50)
    ax.loglog(t, fit.kappa0 * t ** (-fit.gamma), "k--", lw=1,
              label=f"fit gamma={fit.gamma:.3f}")
    ax.set_xlabel("t")
    ax.set_ylabel("|Lambda(t)|")
    ax.legend(frameon=False)
    ax.grid(alpha=0.3, which="both")
    fig.tight_layout()
    return _save(fig, path)
