"""Matplotlib figures written next to the JSON outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .grid import GridImage  # noqa: E402
from .program import Program  # noqa: E402

_META = {"Software": None}


def _grid_lines(ax, img: GridImage):
    for k in range(1, img.grid_n):
        pos = k * img.cell_m - 0.5
        ax.axhline(pos, color="white", lw=0.3, alpha=0.4)
        ax.axvline(pos, color="white", lw=0.3, alpha=0.4)


def cover_map(program: Program) -> np.ndarray:
    """(N, N) array holding the index of the last pair covering each cell, or -1."""
    out = np.full((program.grid_n, program.grid_n), -1)
    for h, (s, _) in enumerate(program.pairs):
        for t, u in s.cells():
            out[t - 1, u - 1] = h
    return out


def plot_synthesis(image: GridImage, structure: GridImage, program: Program, path, title=None):
    fig, axes = plt.subplots(1, 3, figsize=(10, 3.6))
    axes[0].imshow(image.pixels, interpolation="nearest")
    axes[0].set_title("input")
    axes[1].imshow(structure.pixels, interpolation="nearest")
    axes[1].set_title("structure rendering")
    cmap = plt.get_cmap("tab20", max(len(program), 1))
    cov = np.ma.masked_less(cover_map(program), 0)
    axes[2].imshow(cov, cmap=cmap, vmin=-0.5, vmax=max(len(program), 1) - 0.5, interpolation="nearest")
    axes[2].set_title(f"covers ({len(program)} loops)")
    for ax in axes[:2]:
        _grid_lines(ax, image)
    for ax in axes:
        ax.set_xticks([])
        ax.set_yticks([])
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_META)
    plt.close(fig)


def plot_completion(partial: GridImage, structure: GridImage, completed: GridImage, path, truth: GridImage | None = None):
    panels = [("partial", partial), ("structure + partial", structure), ("completed", completed)]
    if truth is not None:
        panels.append(("original", truth))
    fig, axes = plt.subplots(1, len(panels), figsize=(3.4 * len(panels), 3.6))
    for ax, (name, img) in zip(axes, panels):
        ax.imshow(img.pixels, interpolation="nearest")
        _grid_lines(ax, img)
        ax.set_title(name)
        ax.set_xticks([])
        ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_META)
    plt.close(fig)


def plot_corpus_report(report: dict, path):
    """Per-instance distributions of the structure metrics."""
    records = report["instances"]
    keys = [k for k in ("cover_f1", "covered_pixel_accuracy") if any(r.get(k) is not None for r in records)]
    fig, axes = plt.subplots(1, len(keys) + 1, figsize=(4 * (len(keys) + 1), 3.2))
    axes = np.atleast_1d(axes)
    bins = np.linspace(0, 1, 21)
    for ax, key in zip(axes, keys):
        vals = [r[key] for r in records if r.get(key) is not None]
        ax.hist(vals, bins=bins, color="#3b6ea5", edgecolor="white")
        ax.axvline(np.mean(vals), color="#c0392b", lw=1.2, label=f"mean {np.mean(vals):.3f}")
        ax.set_xlabel(key.replace("_", " "))
        ax.set_ylabel("instances")
        ax.legend(frameon=False, fontsize=8)
    ax = axes[-1]
    ax.plot([r["runtime_ms"] for r in records], "o", ms=3, color="#555555")
    ax.set_xlabel("instance")
    ax.set_ylabel("runtime [ms]")
    fig.suptitle(f"{report['mode']}: {len(records)} instances")
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_META)
    plt.close(fig)
