"""Matplotlib figures for the experiment outputs (rendered off-screen)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path) -> str:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return str(path)


def plot_lipschitz(rows, path) -> str:
    """Mean ratios against ``N``, one line per ``K``; log scale for the ``P`` panel."""
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.6))
    for K in sorted({r["K"] for r in rows}):
        sub = sorted((r for r in rows if r["K"] == K), key=lambda r: r["N"])
        Ns = [r["N"] for r in sub]
        for key, ls in (("dP1_dT1", "-"), ("dP2_dT2", "--")):
            axes[0].plot(Ns, [r[key] for r in sub], ls, marker="o", label=f"K={K} {key}")
        for key, ls in (("dpi1_dT1", "-"), ("dpi2_dT2", "--")):
            axes[1].plot(Ns, [r[key] for r in sub], ls, marker="o", label=f"K={K} {key}")
    axes[0].set_yscale("log")
    axes[0].set_title("||dP|| / ||dT||")
    axes[1].set_title("||dpi|| / ||dT||")
    for ax in axes:
        ax.set_xlabel("N")
        ax.legend(fontsize=7)
    return _save(fig, path)


def plot_convergence(raw, M_grid, path) -> str:
    """Box plots of relative errors per ``M`` for both estimators."""
    M_grid = [int(m) for m in M_grid]
    ests = ["multi-trajectory", "ensemble"]
    fig, ax = plt.subplots(figsize=(7, 4))
    width = 0.35
    pos = np.arange(len(M_grid))
    for i, (est, color) in enumerate(zip(ests, ("tab:blue", "tab:orange"))):
        data = [[r["rel_error"] for r in raw if r["M"] == M and r["estimator"] == est] for M in M_grid]
        bp = ax.boxplot(data, positions=pos + (i - 0.5) * width, widths=width * 0.9, patch_artist=True, showfliers=False)
        for box in bp["boxes"]:
            box.set_facecolor(color)
            box.set_alpha(0.6)
        ax.plot([], [], color=color, lw=6, alpha=0.6, label=est)
    ax.set_xticks(pos)
    ax.set_xticklabels([str(m) for m in M_grid])
    ax.set_yscale("log")
    ax.set_xlabel("M")
    ax.set_ylabel("relative error")
    ax.legend()
    return _save(fig, path)


def plot_sync(trajectories: dict, K: int, path) -> str:
    """Space-time rasters (time down, sites across), one panel per estimate."""
    keys = list(trajectories)
    fig, axes = plt.subplots(1, len(keys), figsize=(2.6 * len(keys), 4.5), squeeze=False)
    for ax, key in zip(axes[0], keys):
        traj = np.asarray(trajectories[key]) + 1
        ax.imshow(traj, aspect="auto", interpolation="nearest", cmap="viridis", vmin=1, vmax=K)
        ax.set_title(key, fontsize=8)
        ax.set_xlabel("site")
        ax.set_ylabel("t")
    return _save(fig, path)
