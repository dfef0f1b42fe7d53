"""Report figures written to image files (Agg backend, no display needed)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
}

METRIC_TITLES = {
    "ue2d": "2D undersegmentation error",
    "sa2d": "2D segmentation accuracy",
    "br2d": "2D boundary recall",
    "ue3d": "3D undersegmentation error",
    "sa3d": "3D segmentation accuracy",
    "br3d": "3D boundary recall",
    "mean_duration": "mean duration (frames)",
}


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, metadata={"Software": None})  # no version stamp, stable bytes
    plt.close(fig)
    return path


def plot_build_diagnostics(lengths, occluded_fraction, path):
    """Trajectory length histogram next to the occluded-pixel fraction per frame."""
    lengths = np.asarray(lengths)
    occ = np.asarray(occluded_fraction, dtype=np.float64)
    with plt.rc_context(STYLE):
        fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(7.0, 2.8))
        if len(lengths):
            bins = np.arange(1, int(lengths.max()) + 2) - 0.5
            ax0.hist(lengths, bins=bins, color="0.35")
        ax0.set_xlabel("trajectory length (frames)")
        ax0.set_ylabel("trajectories")
        frames = np.arange(1, len(occ) + 1)
        ax1.plot(frames, occ, marker="o", ms=3, color="C3")
        ax1.set_xlabel("frame")
        ax1.set_ylabel("occluded fraction")
        ax1.set_ylim(0, max(0.05, float(occ.max(initial=0)) * 1.1))
        fig.tight_layout()
        return _save(fig, path)


def plot_metric_sweep(rows, path, x="supervoxels", metrics=None):
    """One panel per metric against ``x`` (usually the supervoxel count)."""
    if not rows:
        raise ValueError("no rows to plot")
    metrics = list(metrics or METRIC_TITLES)
    xs = np.array([float(r[x]) for r in rows])
    order = np.argsort(xs, kind="stable")
    ncols = min(4, len(metrics))
    nrows = -(-len(metrics) // ncols)
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(nrows, ncols, figsize=(2.4 * ncols, 2.2 * nrows), squeeze=False)
        for ax, name in zip(axes.flat, metrics):
            ys = np.array([float(r[name]) for r in rows])
            ax.plot(xs[order], ys[order], marker="o", ms=3, color="C0")
            ax.set_title(METRIC_TITLES.get(name, name))
            ax.set_xlabel(x)
        for ax in list(axes.flat)[len(metrics):]:
            ax.set_visible(False)
        fig.tight_layout()
        return _save(fig, path)
