"""Visualizations of trajectory labelings: boundary overlays and average-color frames."""

from __future__ import annotations

import colorsys

import numpy as np

from .io import DimensionError, lab_to_rgb
from .metrics import boundary_mask
from .trajectories import g_rasterize

BOUNDARY_RGB = (255, 255, 255)
TINT = 0.35

_MASK64 = (1 << 64) - 1


def _splitmix64(x):
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def label_color(label):
    """Fixed RGB color for a label id (hashed hue, constant saturation/value)."""
    hue = _splitmix64(int(label)) / float(1 << 64)
    r, g, b = colorsys.hsv_to_rgb(hue, 0.85, 0.95)
    return np.array([r, g, b]) * 255.0


def label_palette(labels):
    uniq = np.unique(labels)
    return uniq, np.stack([label_color(k) for k in uniq.tolist()]) if len(uniq) else np.zeros((0, 3))


def render_overlay(frame, labels, tint=TINT):
    """Tint each pixel by its label color and mark label boundaries.

    Boundary pixels are those with a 4-neighbor of a different label; they
    are painted white.  Returns a uint8 RGB image.
    """
    frame = np.asarray(frame, dtype=np.float64)
    labels = np.asarray(labels)
    if frame.ndim == 2:
        frame = np.repeat(frame[..., None], 3, axis=2)
    if frame.shape[:2] != labels.shape:
        raise DimensionError(f"frame {frame.shape[:2]} and labels {labels.shape} differ")
    uniq, pal = label_palette(labels)
    colors = pal[np.searchsorted(uniq, labels)]
    out = (1.0 - tint) * frame + tint * colors
    out[boundary_mask(labels)] = BOUNDARY_RGB
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def render_avgcolor(trajs, mean_colors, frame_index):
    """Regenerate frame ``frame_index`` from per-trajectory mean Lab colors."""
    if not 1 <= frame_index <= trajs.F:
        raise IndexError(f"frame {frame_index} outside [1, {trajs.F}]")
    mean_colors = np.asarray(mean_colors, dtype=np.float64)
    if mean_colors.shape != (trajs.num_trajectories, 3):
        raise DimensionError(f"expected ({trajs.num_trajectories}, 3) colors, got {mean_colors.shape}")
    lab = g_rasterize(trajs, frame_index, mean_colors, fill=0.0)
    return lab_to_rgb(lab)


def mean_abs_error(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"{a.shape} vs {b.shape}")
    return float(np.mean(np.abs(a - b)))
