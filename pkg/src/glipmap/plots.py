"""Matplotlib figures written next to the CSV outputs (Agg backend, PNG)."""

from __future__ import annotations

from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .grid import ExposureGrid, SensorSet  # noqa: E402

RC = {
    "font.size": 9,
    "axes.titlesize": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "savefig.dpi": 120,
}


def plot_maps(truth: ExposureGrid, predicted: ExposureGrid, error: ExposureGrid, path,
              sensors: SensorSet | None = None, title: str | None = None):
    """Reference, reconstruction and absolute error side by side."""
    top = max(float(truth.values.max()), float(predicted.values.max())) or 1.0
    with plt.rc_context(RC):
        fig, axes = plt.subplots(1, 3, figsize=(9.6, 3.4), constrained_layout=True)
        panels = [(truth, "reference"), (predicted, "reconstruction"), (error, "|error|")]
        for ax, (g, name) in zip(axes, panels):
            vmax = top if g is not error else (float(g.values.max()) or 1.0)
            im = ax.imshow(g.values, cmap="viridis", vmin=0.0, vmax=vmax, origin="upper",
                           interpolation="nearest")
            ax.set_title(name)
            ax.set_xticks([])
            ax.set_yticks([])
            fig.colorbar(im, ax=ax, shrink=0.8, label="V/m")
        if sensors is not None and len(sensors):
            rc = np.array(sensors.cells())
            axes[1].scatter(rc[:, 1], rc[:, 0], s=4, c="w", marker="x", linewidths=0.6)
        if title:
            fig.suptitle(title)
        fig.savefig(path)
        plt.close(fig)


def plot_density(rows, path, metric: str = "mse_vm"):
    """Mean metric against sensor count, one line per method, +-1 std band."""
    series = defaultdict(list)
    for row in rows:
        if row.get("status") != "mean":
            continue
        std = row.get(metric + "_std", "")
        series[row["method"]].append((int(row["sensor_count"]), float(row[metric]),
                                      float(std) if std not in ("", None) else 0.0))
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4.8, 3.4), constrained_layout=True)
        for method, pts in sorted(series.items()):
            pts.sort()
            n, m, s = (np.array(v) for v in zip(*pts))
            ax.plot(n, m, marker="o", ms=3, label=method)
            ax.fill_between(n, np.maximum(m - s, m * 1e-3), m + s, alpha=0.15)
        ax.set_yscale("log")
        ax.set_xlabel("sensors")
        ax.set_ylabel(f"held-out {metric}")
        if series:
            ax.legend(frameon=False)
        ax.grid(alpha=0.3, lw=0.5)
        fig.savefig(path)
        plt.close(fig)


def plot_loss(curve, path):
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4.0, 3.0), constrained_layout=True)
        it, v = zip(*curve) if curve else ((), ())
        ax.semilogy(it, v, lw=1)
        ax.set_xlabel("epoch")
        ax.set_ylabel("masked loss")
        fig.savefig(path)
        plt.close(fig)
