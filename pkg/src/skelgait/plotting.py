"""Report figures. Everything renders off-screen to files."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .evalproto import ConditionReport  # noqa: E402

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "figure.dpi": 120,
    "savefig.bbox": "tight",
}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, metadata={"Software": None} if path.suffix == ".png" else None)
    plt.close(fig)
    return path


def loss_curve(history: Sequence[Sequence[float]], path) -> Path:
    """Total, triplet and arcface loss against iteration."""
    h = np.asarray(history, dtype=float)
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(5, 3))
        ax.plot(h[:, 0], h[:, 1], color="k", lw=1.2, label="total")
        ax.plot(h[:, 0], h[:, 2], color="tab:blue", lw=0.8, label="triplet")
        ax.plot(h[:, 0], h[:, 3], color="tab:orange", lw=0.8, label="arcface")
        ax.set_xlabel("iteration")
        ax.set_ylabel("loss")
        ax.set_yscale("log")
        ax.legend(frameon=False)
        return _save(fig, path)


def cross_view_heatmap(rep: ConditionReport, path) -> Path:
    with plt.rc_context(RC):
        n = len(rep.views)
        fig, ax = plt.subplots(figsize=(1.2 + 0.45 * n, 1.0 + 0.4 * n))
        im = ax.imshow(100 * rep.matrix, vmin=0, vmax=100, cmap="viridis", origin="upper")
        ax.set_xticks(range(n), [str(v) for v in rep.views])
        ax.set_yticks(range(n), [str(v) for v in rep.views])
        ax.set_xlabel("probe view (deg)")
        ax.set_ylabel("gallery view (deg)")
        ax.set_title(f"{rep.condition}: mean {100 * rep.mean:.1f}% (excl. identical view)")
        if n <= 11:
            for i in range(n):
                for j in range(n):
                    ax.text(j, i, f"{100 * rep.matrix[i, j]:.0f}", ha="center", va="center",
                            color="w" if rep.matrix[i, j] < 0.6 else "k", fontsize=6)
        fig.colorbar(im, ax=ax, label="rank-1 (%)")
        return _save(fig, path)


def gallery_sweep(acc: Mapping[int, float], path) -> Path:
    sizes = sorted(acc)
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4, 3))
        ax.plot(sizes, [100 * acc[s] for s in sizes], "o-", color="k", ms=3)
        ax.set_xlabel("gallery size (identities)")
        ax.set_ylabel("rank-1 (%)")
        ax.set_ylim(0, 102)
        return _save(fig, path)
