"""Report rendering: key=value text, CSV rows, and matplotlib figures.

Every writer here is deterministic for fixed inputs (sorted keys, no
timestamps), so CLI reruns are byte-identical.
"""

from __future__ import annotations

import csv

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def format_value(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_metrics_text(metrics: dict, path) -> None:
    """Flat key=value report, keys sorted for stable bytes."""
    with open(path, "w") as fh:
        for key in sorted(metrics):
            fh.write(f"{key}={format_value(metrics[key])}\n")


def write_csv(rows: list[dict], path) -> None:
    """CSV with the union of row keys as header (sorted)."""
    keys = sorted({k for row in rows for k in row})
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: format_value(row.get(k, "")) for k in keys})


def save_depth_figure(depth: np.ndarray, path, title: str | None = None) -> None:
    """Color-mapped depth preview with a colorbar."""
    fig, ax = plt.subplots(figsize=(5, 4), dpi=110)
    shown = np.ma.masked_invalid(np.asarray(depth, dtype=np.float64))
    im = ax.imshow(shown, cmap="turbo")
    fig.colorbar(im, ax=ax, fraction=0.046)
    if title:
        ax.set_title(title)
    ax.set_xticks([])
    ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def save_mask_figure(mask: np.ndarray, path, title: str | None = None) -> None:
    fig, ax = plt.subplots(figsize=(5, 4), dpi=110)
    im = ax.imshow(np.asarray(mask, dtype=np.float64), cmap="gray", vmin=0.0, vmax=1.0)
    fig.colorbar(im, ax=ax, fraction=0.046)
    if title:
        ax.set_title(title)
    ax.set_xticks([])
    ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def save_metrics_figure(metrics: dict, path) -> None:
    """Bar chart of the numeric entries of a metrics dict."""
    items = [(k, v) for k, v in sorted(metrics.items())
             if isinstance(v, (int, float)) and np.isfinite(v)]
    fig, ax = plt.subplots(figsize=(max(4, 1.2 * len(items)), 3.5), dpi=110)
    if items:
        names, values = zip(*items)
        ax.bar(range(len(values)), values, color="#4878cf")
        ax.set_xticks(range(len(values)))
        ax.set_xticklabels(names, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("value")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def save_trend_figure(rows: list[dict], x_key: str, y_keys: list[str], path,
                      logy: bool = False) -> None:
    """Line plot of selected columns against one x column."""
    fig, ax = plt.subplots(figsize=(5, 3.5), dpi=110)
    xs = [float(r[x_key]) for r in rows]
    for y in y_keys:
        ax.plot(xs, [float(r[y]) for r in rows], marker="o", label=y)
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(x_key)
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
