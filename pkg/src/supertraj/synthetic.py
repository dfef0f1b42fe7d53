"""Synthetic sequences with analytic flow and ground truth."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .io import sobel_edge_fallback

PRESETS = ("global-translate", "two-region", "occluder")


@dataclass
class SyntheticSequence:
    frames: list
    fwd_flows: list
    bwd_flows: list
    edges: list
    gt_labels: list
    gt_tracks: np.ndarray  # (F, H*W, 2) positions of frame-1 pixels, NaN once lost
    preset: str = ""

    @property
    def shape(self):
        return len(self.frames), self.frames[0].shape[0], self.frames[0].shape[1]


class _Texture:
    """Smooth random color texture defined on the continuous plane."""

    def __init__(self, rng, base, amplitude, n_waves=6):
        self.base = np.asarray(base, dtype=np.float64)
        self.amplitude = amplitude
        self.freq = rng.uniform(1 / 14, 1 / 5, size=(3, n_waves, 2)) * rng.choice([-1, 1], size=(3, n_waves, 2))
        self.phase = rng.uniform(0, 2 * np.pi, size=(3, n_waves))
        self.weight = rng.uniform(0.5, 1.0, size=(3, n_waves))
        self.weight /= self.weight.sum(axis=1, keepdims=True)

    def __call__(self, x, y):
        out = np.empty(np.shape(x) + (3,))
        for ch in range(3):
            arg = 2 * np.pi * (self.freq[ch, :, 0] * x[..., None] + self.freq[ch, :, 1] * y[..., None]) + self.phase[ch]
            out[..., ch] = self.base[ch] + self.amplitude * (self.weight[ch] * np.sin(arg)).sum(axis=-1)
        return np.clip(np.rint(out), 0, 255)


def generate_synthetic(preset, width, height, frames, motion=(2.0, 1.0), motion2=(0.0, 0.0), seed=0,
                       rect_size=None):
    """Build a textured sequence whose flows follow an exact motion model.

    * ``global-translate``: the whole image content moves by ``motion`` per frame.
    * ``two-region``: left half content moves by ``motion``, right half by
      ``motion2``; the region border is fixed.
    * ``occluder``: a textured rectangle moving by ``motion`` covers a
      background moving by ``motion2``.
    """
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}")
    if width < 2 or height < 2 or frames < 1:
        raise ValueError("degenerate dimensions")
    limit = min(width, height) / frames
    for m in (motion, motion2):
        if np.hypot(*m) >= limit:
            raise ValueError(f"per-frame motion {tuple(m)} too large for {width}x{height}x{frames}")

    rng = np.random.default_rng(seed)
    H, W, F = height, width, frames
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    m1 = np.asarray(motion, dtype=np.float64)
    m2 = np.asarray(motion2, dtype=np.float64)

    if preset == "global-translate":
        tex_a = _Texture(rng, (128, 128, 128), 110)
        tex_b = tex_a
        m2 = m1

        def region_a(f):  # f is 0-based
            return np.ones((H, W), dtype=bool)
    elif preset == "two-region":
        tex_a = _Texture(rng, (200, 70, 60), 40)
        tex_b = _Texture(rng, (50, 80, 200), 40)
        split = W // 2

        def region_a(f):
            return xx < split
    else:
        tex_a = _Texture(rng, (210, 180, 40), 40)
        tex_b = _Texture(rng, (40, 90, 170), 50)
        rw, rh = rect_size if rect_size is not None else (max(2, W * 3 // 8), max(2, H * 3 // 8))
        travel = m1 * (F - 1)
        x0 = (W - rw - travel[0]) / 2.0
        y0 = (H - rh - travel[1]) / 2.0

        def region_a(f):
            lx = xx - f * m1[0]
            ly = yy - f * m1[1]
            return (lx >= x0) & (lx < x0 + rw) & (ly >= y0) & (ly < y0 + rh)

    frames_out, fwd, bwd, gts = [], [], [], []
    for f in range(F):
        a = region_a(f)
        img = np.where(a[..., None], tex_a(xx - f * m1[0], yy - f * m1[1]),
                       tex_b(xx - f * m2[0], yy - f * m2[1]))
        frames_out.append(img)
        gts.append(np.where(a, 2, 1).astype(np.int64) if preset != "global-translate"
                   else np.ones((H, W), dtype=np.int64))
        motion_here = np.where(a[..., None], m1, m2)
        if f < F - 1:
            fwd.append(motion_here.copy())
        if f > 0:
            bwd.append(-motion_here)

    tracks = np.full((F, H * W, 2), np.nan)
    a0 = region_a(0).ravel()
    p0 = np.stack([xx.ravel(), yy.ravel()], axis=1)
    alive = np.ones(H * W, dtype=bool)
    for f in range(F):
        p = p0 + np.where(a0[:, None], m1, m2) * f
        inside = (p[:, 0] >= 0) & (p[:, 0] <= W - 1) & (p[:, 1] >= 0) & (p[:, 1] <= H - 1)
        if preset != "global-translate":
            ci = np.clip(np.floor(p[:, 0] + 0.5).astype(int), 0, W - 1)
            ri = np.clip(np.floor(p[:, 1] + 0.5).astype(int), 0, H - 1)
            inside &= region_a(f)[ri, ci] == a0
        alive &= inside
        tracks[f, alive] = p[alive]

    edges = [sobel_edge_fallback(fr) for fr in frames_out]
    return SyntheticSequence(frames_out, fwd, bwd, edges, gts, tracks, preset)


def add_flow_noise(seq, sigma, seed=0):
    """Copy of ``seq`` with i.i.d. Gaussian noise added to every flow component."""
    rng = np.random.default_rng(seed)
    fwd = [fl + rng.normal(0.0, sigma, fl.shape) for fl in seq.fwd_flows]
    bwd = [fl + rng.normal(0.0, sigma, fl.shape) for fl in seq.bwd_flows]
    return replace(seq, fwd_flows=fwd, bwd_flows=bwd)


def translate_trajectory_count(width, height, frames, motion):
    """Trajectory count for exact integer global translation.

    Frame 1 spawns every pixel; each later frame spawns the entering band,
    i.e. the cells not reached by an in-bounds previous pixel.
    """
    dx, dy = (abs(int(round(v))) for v in motion)
    kept = max(width - dx, 0) * max(height - dy, 0)
    return width * height + (frames - 1) * (width * height - kept)
