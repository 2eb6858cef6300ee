"""Report figures rendered to files next to the JSON/CSV metric output."""

from __future__ import annotations

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def confusion_heatmap(matrix: np.ndarray, labels, cond_number: float,
                      path) -> None:
    fig, ax = plt.subplots(figsize=(1.2 + 0.6 * len(labels),
                                    1.0 + 0.6 * len(labels)))
    vmax = np.abs(matrix).max() or 1.0
    im = ax.imshow(matrix, cmap="RdBu_r", vmin=-vmax, vmax=vmax)
    ax.set_xticks(range(len(labels)), labels, rotation=45, ha="right",
                  fontsize=8)
    ax.set_yticks(range(len(labels)), labels, fontsize=8)
    ax.set_xlabel("measured label")
    ax.set_ylabel("intervened label")
    ax.set_title(f"condition number {cond_number:.2f}", fontsize=9)
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def training_curves(history: list, path) -> None:
    epochs = [rec["epoch"] for rec in history]
    bounds = [rec["bound"] for rec in history]
    accs = [rec["accuracy"] for rec in history]
    fig, ax1 = plt.subplots(figsize=(6, 3.5))
    ax1.plot(epochs, bounds, color="tab:blue", label="bound")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("bound (nats)", color="tab:blue")
    if any(a is not None for a in accs):
        ax2 = ax1.twinx()
        ax2.plot(epochs, accs, color="tab:orange", label="accuracy")
        ax2.set_ylabel("held-out accuracy", color="tab:orange")
        ax2.set_ylim(0, 1)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def diversity_panel(maps: dict, path) -> None:
    """One variance image per attribute, shared color scale."""
    names = list(maps)
    vmax = max(m.max() for m in maps.values()) or 1.0
    fig, axes = plt.subplots(1, len(names),
                             figsize=(2.2 * len(names), 2.6), squeeze=False)
    for ax, name in zip(axes[0], names):
        ax.imshow(maps[name], cmap="Greens", vmin=0, vmax=vmax)
        ax.set_title(name, fontsize=8)
        ax.axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def gradient_norm_traces(detached: np.ndarray, reparam: np.ndarray,
                         path) -> None:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(reparam, color="tab:blue", alpha=0.8,
            label=f"reparameterized (sd {reparam.std(ddof=1):.3g})")
    ax.plot(detached, color="tab:orange", alpha=0.8,
            label=f"detached (sd {detached.std(ddof=1):.3g})")
    ax.set_xlabel("step")
    ax.set_ylabel("classifier gradient norm")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
