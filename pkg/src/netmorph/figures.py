"""Figure rendering for the report paths.

Everything here draws to files with the Agg backend; nothing opens a
window. Figures are diagnostic companions to the delimited output, not a
data format, so no attempt is made at byte-stable PNGs.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .graph import Network
from .grids import Grid

__all__ = [
    "plot_network",
    "plot_energy",
    "plot_profile_1d",
    "plot_heatmap",
    "plot_particles",
]


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_network(
    net: Network,
    C: np.ndarray,
    Q: np.ndarray | None = None,
    path="network.png",
    title: str | None = None,
) -> Path:
    """Draw edges with width proportional to conductivity.

    Edge color encodes flux magnitude when Q is given. Sources are drawn as
    filled circles scaled by |S|, red for injection and blue for withdrawal.
    """
    pos = np.asarray(net.positions, dtype=float)
    if pos.shape[1] == 1:
        pos = np.column_stack([pos[:, 0], np.zeros(len(pos))])
    C = np.asarray(C, dtype=float)
    cmax = C.max() if C.size and C.max() > 0 else 1.0

    fig, ax = plt.subplots(figsize=(6, 5))
    qmag = np.abs(Q) if Q is not None else np.zeros(len(net.edges))
    qmax = qmag.max() if qmag.size and qmag.max() > 0 else 1.0
    cmap = plt.get_cmap("viridis")
    for k, (u, v) in enumerate(net.edges):
        i, j = net.index_of[u], net.index_of[v]
        lw = 0.5 + 4.0 * C[k] / cmax
        color = cmap(qmag[k] / qmax) if Q is not None else "0.3"
        alpha = 1.0 if C[k] > 1e-12 * cmax else 0.15
        ax.plot(
            [pos[i, 0], pos[j, 0]], [pos[i, 1], pos[j, 1]],
            lw=lw, color=color, alpha=alpha, solid_capstyle="round", zorder=1,
        )
    S = net.sources
    smax = np.abs(S).max() if np.abs(S).max() > 0 else 1.0
    sizes = 30.0 + 120.0 * np.abs(S) / smax
    colors = np.where(S > 0, "crimson", np.where(S < 0, "steelblue", "0.6"))
    ax.scatter(pos[:, 0], pos[:, 1], s=sizes, c=colors, zorder=2, edgecolors="k", linewidths=0.5)
    ax.set_aspect("equal")
    ax.set_xticks([])
    ax.set_yticks([])
    if title:
        ax.set_title(title)
    return _save(fig, path)


def plot_energy(times, energy, path="energy.png", ylabel="energy") -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(np.asarray(times), np.asarray(energy), lw=1.5)
    ax.set_xlabel("t")
    ax.set_ylabel(ylabel)
    ax.grid(True, alpha=0.3)
    return _save(fig, path)


def plot_profile_1d(grid: Grid, fields: dict, path="profile.png", xlabel="x") -> Path:
    """Overlay named 1D cell fields against cell centers."""
    x = grid.axis_centers(0)
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, values in fields.items():
        ax.plot(x, np.asarray(values).reshape(-1), lw=1.5, label=name)
    ax.set_xlabel(xlabel)
    ax.legend()
    ax.grid(True, alpha=0.3)
    return _save(fig, path)


def plot_heatmap(grid: Grid, field, path="field.png", title: str | None = None) -> Path:
    """Render a 2D cell field as an image in physical coordinates."""
    arr = np.asarray(field, dtype=float).reshape(grid.shape)
    fig, ax = plt.subplots(figsize=(6, 5))
    im = ax.imshow(
        arr.T,
        origin="lower",
        extent=(grid.lo[0], grid.hi[0], grid.lo[1], grid.hi[1]),
        aspect="equal",
        cmap="magma",
    )
    fig.colorbar(im, ax=ax, shrink=0.85)
    if title:
        ax.set_title(title)
    return _save(fig, path)


def plot_particles(grid: Grid, positions, thetas, C, path="particles.png") -> Path:
    """Quiver of particle directions scaled by their conductivities."""
    positions = np.asarray(positions, dtype=float)
    thetas = np.asarray(thetas, dtype=float)
    C = np.asarray(C, dtype=float)
    mag = C / C.max() if C.size and C.max() > 0 else np.ones_like(C)
    fig, ax = plt.subplots(figsize=(6, 5))
    ax.quiver(
        positions[:, 0], positions[:, 1],
        thetas[:, 0] * mag, thetas[:, 1] * mag,
        mag, cmap="viridis",
        angles="xy", scale_units="xy", scale=8.0 / max(grid.hi[0] - grid.lo[0], 1e-9),
        width=0.004, pivot="mid",
    )
    ax.set_xlim(grid.lo[0], grid.hi[0])
    ax.set_ylim(grid.lo[1], grid.hi[1])
    ax.set_aspect("equal")
    return _save(fig, path)
