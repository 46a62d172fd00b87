"""Self-contained SVG charts, rendered deterministically with matplotlib's SVG backend."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("svg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

plt.rcParams["svg.hashsalt"] = "agmarl"
plt.rcParams["svg.fonttype"] = "none"


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    return path


def heatmap(path, rows, cols, m, label: str) -> Path:
    m = np.asarray(m, dtype=float)
    fig, ax = plt.subplots(figsize=(1.2 + 0.7 * max(len(cols), 1), 1.0 + 0.45 * max(len(rows), 1)))
    im = ax.imshow(m if m.size else np.zeros((1, 1)), cmap="viridis", aspect="auto")
    ax.set_xticks(range(len(cols)), [str(c) for c in cols])
    ax.set_yticks(range(len(rows)), rows)
    ax.set_xlabel("node")
    for (i, j), v in np.ndenumerate(m):
        ax.text(j, i, f"{v:g}", ha="center", va="center", color="w", fontsize=7)
    fig.colorbar(im, ax=ax, label=label)
    fig.tight_layout()
    return _save(fig, path)


def stacked_bars(path, apps, nodes, values) -> Path:
    values = np.asarray(values, dtype=float)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    bottom = np.zeros(len(nodes))
    x = np.arange(len(nodes))
    for a, row in zip(apps, values):
        ax.bar(x, row, bottom=bottom, label=a)
        bottom += row
    ax.set_xticks(x, [str(n) for n in nodes])
    ax.set_xlabel("node")
    ax.set_ylabel("requested mCPU")
    if apps:
        ax.legend(fontsize=7)
    fig.tight_layout()
    return _save(fig, path)


def scatter_grid(path, columns: dict) -> Path:
    names = list(columns)
    k = len(names)
    fig, axes = plt.subplots(k, k, figsize=(1.6 * k, 1.6 * k), squeeze=False)
    for i, yi in enumerate(names):
        for j, xj in enumerate(names):
            ax = axes[i][j]
            if i == j:
                ax.hist(columns[xj], bins=20)
            else:
                ax.scatter(columns[xj], columns[yi], s=2)
            ax.tick_params(labelsize=5)
            if i == k - 1:
                ax.set_xlabel(xj, fontsize=6)
            if j == 0:
                ax.set_ylabel(yi, fontsize=6)
    fig.tight_layout()
    return _save(fig, path)
