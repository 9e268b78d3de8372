"""Figure output. Every figure is written next to a CSV of the data it shows."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .data import SignalSet  # noqa: E402
from .evaluation import Projection2D  # noqa: E402


def raw_grid(real: SignalSet, syn: SignalSet, path, n: int = 4) -> None:
    """Side-by-side line plots: real samples on the left, synthetic on the right."""
    n = max(1, min(n, len(real), len(syn)))
    fig, axes = plt.subplots(n, 2, figsize=(8, 1.8 * n), sharex=True, squeeze=False)
    for i in range(n):
        for j, (s, title) in enumerate(((real, "real"), (syn, "synthetic"))):
            ax = axes[i, j]
            for c in range(s.n_channels):
                ax.plot(s.values[i, c, 0], lw=1)
            if i == 0:
                ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def projection(proj: Projection2D, path) -> None:
    fig, ax = plt.subplots(figsize=(5, 5))
    for tag, colour in (("real", "tab:red"), ("synthetic", "tab:blue")):
        m = proj.origin == tag
        ax.scatter(proj.points[m, 0], proj.points[m, 1], s=6, alpha=0.5, c=colour, label=tag)
    ax.set_title(proj.method.upper())
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    proj.to_csv(Path(path).with_suffix(".csv"))


def fusion(grid: np.ndarray, path, title: str = "") -> None:
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.imshow(grid, origin="lower", aspect="auto", cmap="inferno")
    ax.set_xlabel("timestep bin")
    ax.set_ylabel("value bin")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    np.savetxt(Path(path).with_suffix(".csv"), grid, fmt="%d", delimiter=",")


def confusion(cm, path, title: str = "") -> None:
    cm = np.asarray(cm)
    fig, ax = plt.subplots(figsize=(4, 4))
    ax.imshow(cm, cmap="Blues")
    for (i, j), v in np.ndenumerate(cm):
        ax.text(j, i, str(v), ha="center", va="center", fontsize=8)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def coherence_heatmap(values: np.ndarray, periods: np.ndarray, path) -> None:
    fig, ax = plt.subplots(figsize=(6, 3))
    ax.imshow(values, origin="lower", aspect="auto", vmin=0, vmax=1, cmap="jet",
              extent=(0, values.shape[1], 0, len(periods)))
    ticks = np.linspace(0, len(periods) - 1, min(5, len(periods))).astype(int)
    ax.set_yticks(ticks + 0.5, [f"{periods[t]:.1f}" for t in ticks])
    ax.set_ylabel("period")
    ax.set_xlabel("time")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
