"""Static R^2-curve figures.

SVG output is byte-stable: the renderer's id salt is fixed and the
creation-date metadata is dropped.
"""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "svg.hashsalt": "coordloc",
    "svg.fonttype": "path",
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 7,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
}

SPLIT_STYLE = {"train": "-", "test": "--"}


def new(width=6.0, height=3.6):
    fig, ax = plt.subplots(figsize=(width, height))
    return fig, ax


def save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None}, bbox_inches="tight")
    plt.close(fig)


def plot_r2_curves(curves_by_arm: dict, path, title: str = ""):
    """One mean line plus min-max band per (arm, split).

    ``curves_by_arm[arm][split]`` is a ``(folds, epochs)`` array.  Each line
    carries the SVG id ``<arm>:<split>``.
    """
    with matplotlib.rc_context(RC):
        fig, ax = new()
        colors = plt.rcParams["axes.prop_cycle"].by_key()["color"]
        for k, (arm, splits) in enumerate(curves_by_arm.items()):
            color = colors[k % len(colors)]
            for split in ("train", "test"):
                if split not in splits:
                    continue
                y = np.asarray(splits[split], dtype=np.float64)
                epochs = np.arange(1, y.shape[1] + 1)
                band = ax.fill_between(epochs, y.min(axis=0), y.max(axis=0), color=color, alpha=0.12, lw=0)
                band.set_gid(f"{arm}:{split}:range")
                (line,) = ax.plot(epochs, y.mean(axis=0), SPLIT_STYLE[split], color=color, lw=1.4,
                                  label=f"{arm} ({split})")
                line.set_gid(f"{arm}:{split}")
        ax.set_xlabel("epoch")
        ax.set_ylabel("R²")
        if title:
            ax.set_title(title)
        ax.legend(loc="lower right", frameon=False)
        save(fig, path)
