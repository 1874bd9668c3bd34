"""Report figures written next to the CSV/JSON outputs.

PNG metadata is stripped so reruns on identical data give identical files.
"""

from __future__ import annotations

import io

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.family": "DejaVu Sans",
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "legend.fontsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
    "savefig.dpi": 100,
}

PALETTE = ["#1f4e79", "#c0504d", "#9bbb59", "#8064a2", "#f79646"]


def _render(fig) -> bytes:
    buf = io.BytesIO()
    fig.savefig(buf, format="png", metadata={"Software": None}, bbox_inches="tight")
    plt.close(fig)
    return buf.getvalue()


def segmentation_figure(image, filtered, mask, truth=None, title: str = "") -> bytes:
    panels = [("input", image.data, "gray"), ("filtered", filtered.data, "magma"), ("mask", mask.bits, "gray")]
    if truth is not None:
        panels.append(("ground truth", truth.bits, "gray"))
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(panels), figsize=(2.4 * len(panels), 2.6))
        for ax, (label, data, cmap) in zip(axes, panels):
            ax.imshow(data, cmap=cmap, vmin=0, vmax=1, interpolation="nearest")
            ax.set_title(label)
            ax.set_xticks([])
            ax.set_yticks([])
        if truth is not None:
            axes[2].contour(truth.bits, levels=[0.5], colors=PALETTE[1], linewidths=0.8)
        if title:
            fig.suptitle(title)
        return _render(fig)


def sweep_figure(rows: list[dict]) -> bytes:
    alphas = np.array([r["alpha"] for r in rows])
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.2, 2.8))
        for key, color in (("dice", PALETTE[0]), ("iou", PALETTE[1])):
            values = [np.nan if r[key] is None else r[key] for r in rows]
            ax.plot(alphas, values, marker="o", color=color, label=key.upper() if key == "iou" else "Dice")
        ax.set_xscale("symlog", linthresh=0.1)
        ax.set_xlabel("smoothness weight alpha")
        ax.set_ylabel("score")
        ax.set_ylim(-0.02, 1.02)
        ax.legend(frameon=False)
        return _render(fig)


def timing_figure(summary: list[dict]) -> bytes:
    names = [s["solver_name"] for s in summary]
    means = [s["mean_ms"] for s in summary]
    stds = [s["std_ms"] for s in summary]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.2, 2.8))
        ax.bar(names, means, yerr=stds, color=PALETTE[: len(names)], capsize=3)
        ax.set_yscale("log")
        ax.set_ylabel("wall-clock time [ms]")
        return _render(fig)


def loss_figure(history: list[float]) -> bytes:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.2, 2.8))
        ax.plot(np.arange(len(history)), history, color=PALETTE[0])
        ax.set_xlabel("epoch")
        ax.set_ylabel("relaxed loss")
        return _render(fig)
