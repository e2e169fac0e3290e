"""Figures written next to the CSV outputs. Uses the non-interactive Agg backend."""
from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .gridworld import GridSpec  # noqa: E402

# fixed metadata so repeated runs give identical image files
_META = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata=_META)
    plt.close(fig)
    return path


def cell_grid(spec: GridSpec, values: np.ndarray) -> np.ndarray:
    """Lay per-state values out on the maze grid, NaN on walls."""
    grid = np.full((spec.height, spec.width), np.nan)
    for (x, y), v in zip(spec.open_cells, values):
        grid[y, x] = v
    return grid


def plot_eigenfunctions(spec: GridSpec, F: np.ndarray, values, path, max_panels: int = 8):
    k = min(F.shape[1], max_panels)
    cols = min(k, 4)
    rows = int(np.ceil(k / cols))
    fig, axes = plt.subplots(rows, cols, figsize=(2.6 * cols, 2.6 * rows), squeeze=False)
    for i, ax in enumerate(axes.flat):
        ax.axis("off")
        if i < k:
            ax.imshow(cell_grid(spec, F[:, i]), cmap="coolwarm", interpolation="nearest")
            ax.set_title(f"f{i}  ev={values[i]:.4f}", fontsize=8)
    return _save(fig, path)


def plot_train_log(rows, path):
    """``rows`` of (step, attractive, repulsive, total)."""
    arr = np.asarray(rows, float)
    fig, ax = plt.subplots(figsize=(5, 3.2))
    if arr.size:
        for j, name in ((1, "attractive"), (2, "repulsive"), (3, "total")):
            ax.plot(arr[:, 0], arr[:, j], label=name)
        ax.set_yscale("symlog", linthresh=1e-3)
    ax.set_xlabel("training step")
    ax.set_ylabel("loss")
    ax.legend(frameon=False, fontsize=8)
    return _save(fig, path)


def plot_beta_sweep(betas, gaps, path, default_beta=None):
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.plot(betas, gaps, "o-")
    if default_beta is not None:
        ax.axvline(default_beta, color="0.6", ls="--", lw=1)
    ax.set_xscale("log")
    ax.set_xlabel("beta")
    ax.set_ylabel("objective gap")
    return _save(fig, path)


def plot_gap_vs_n(records, path):
    """``records`` of (label, n, gap); mean over repeats per label and n."""
    groups = defaultdict(lambda: defaultdict(list))
    for label, n, gap in records:
        groups[label][n].append(gap)
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    for label in sorted(groups):
        ns = sorted(groups[label])
        ax.plot(ns, [np.mean(groups[label][n]) for n in ns], "o-", label=label)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("transitions")
    ax.set_ylabel("objective gap")
    ax.legend(frameon=False, fontsize=8)
    return _save(fig, path)


def plot_success_curves(curves, path, title=""):
    """``curves`` maps a reward kind to a list of per-seed ``(steps, success)`` lists."""
    fig, ax = plt.subplots(figsize=(5, 3.2))
    for kind in curves:
        runs = np.asarray([[v for _, v in c] for c in curves[kind]], float)
        steps = [s for s, _ in curves[kind][0]]
        mean = runs.mean(axis=0)
        ax.plot(steps, mean, label=kind)
        if len(runs) > 1:
            sd = runs.std(axis=0)
            ax.fill_between(steps, mean - sd, mean + sd, alpha=0.15)
    ax.set_ylim(-0.02, 1.02)
    ax.set_xlabel("environment steps")
    ax.set_ylabel("success rate")
    if title:
        ax.set_title(title, fontsize=9)
    ax.legend(frameon=False, fontsize=8)
    return _save(fig, path)


def plot_heatmap(grid: np.ndarray, path, goal=None, title=""):
    fig, ax = plt.subplots(figsize=(3.6, 3.4))
    im = ax.imshow(grid, cmap="viridis", interpolation="nearest")
    if goal is not None:
        ax.plot(goal[0], goal[1], "r*", ms=10)
    ax.axis("off")
    if title:
        ax.set_title(title, fontsize=9)
    fig.colorbar(im, ax=ax, fraction=0.046)
    return _save(fig, path)
