"""File formats and raster ingestion.

Rasters are plain numpy arrays throughout the package:

* image frames: ``(H, W, 3)`` float64, RGB in [0, 255]
* flow fields: ``(H, W, 2)`` float64, channels ``(u, v)`` in pixels
* edge maps: ``(H, W)`` float64 in [0, 1]
* label rasters: ``(H, W)`` integer arrays
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage
from skimage import color as skcolor

FLO_TAG = 202021.25
FLO_MAGIC = b"PIEH"
FLO_UNKNOWN = 1e9

STRJ_MAGIC = b"STRJ"
STLB_MAGIC = b"STLB"
FORMAT_VERSION = 1

_STRJ_HEADER = struct.Struct("<4sIIIIQ")
_STLB_HEADER = struct.Struct("<4sIQ")


class FormatError(ValueError):
    """A file does not follow the expected binary or image layout."""


class DimensionError(ValueError):
    """Raster dimensions disagree with each other or with the caller."""


class InvalidDataError(ValueError):
    """A file is well formed but carries values the pipeline cannot use."""


# -- optical flow -----------------------------------------------------------


def read_flow_file(path, expected_shape=None):
    """Read a Middlebury ``.flo`` file into an ``(H, W, 2)`` float64 array."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 12 or raw[:4] != FLO_MAGIC:
        raise FormatError(f"{path}: bad magic tag, not a .flo file")
    width, height = struct.unpack_from("<ii", raw, 4)
    if width <= 0 or height <= 0:
        raise FormatError(f"{path}: invalid dimensions {width}x{height}")
    n = 2 * width * height
    if len(raw) < 12 + 4 * n:
        raise FormatError(f"{path}: truncated flow data")
    data = np.frombuffer(raw, dtype="<f4", count=n, offset=12)
    flow = data.reshape(height, width, 2).astype(np.float64)
    if expected_shape is not None and tuple(expected_shape) != (height, width):
        raise DimensionError(
            f"{path}: flow is {height}x{width}, expected {expected_shape[0]}x{expected_shape[1]}"
        )
    if not np.all(np.isfinite(flow)) or np.any(np.abs(flow) >= FLO_UNKNOWN):
        raise InvalidDataError(f"{path}: flow contains unknown/non-finite values")
    return flow


def write_flow_file(path, flow):
    flow = np.asarray(flow)
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise DimensionError(f"flow must be (H, W, 2), got {flow.shape}")
    height, width = flow.shape[:2]
    with open(path, "wb") as fh:
        fh.write(FLO_MAGIC)
        fh.write(struct.pack("<ii", width, height))
        fh.write(np.ascontiguousarray(flow, dtype="<f4").tobytes())


# -- images, edges, labels --------------------------------------------------


def read_image(path):
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr


def write_image(path, frame):
    arr = np.clip(np.rint(np.asarray(frame, dtype=np.float64)), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


def read_edge_map(path):
    """Load a single-channel 8- or 16-bit image as an edge map in [0, 1]."""
    with Image.open(path) as im:
        mode = im.mode
        arr = np.asarray(im)
    if arr.ndim != 2:
        raise FormatError(f"{path}: edge map must be single-channel, got mode {mode}")
    if arr.dtype == np.uint8 or mode in ("L", "P"):
        scale = 255.0
    elif arr.dtype == np.uint16 or mode.startswith("I;16"):
        scale = 65535.0
    elif mode == "I" and arr.max(initial=0) <= 65535:
        scale = 65535.0
    else:
        raise FormatError(f"{path}: unsupported edge-map bit depth (mode {mode})")
    return np.clip(arr.astype(np.float64) / scale, 0.0, 1.0)


def write_edge_map(path, edges):
    arr = np.rint(np.clip(np.asarray(edges, dtype=np.float64), 0, 1) * 65535).astype(np.uint16)
    Image.fromarray(arr).save(path)


def sobel_edge_fallback(frame):
    """Edge strength from the luminance gradient, scaled to [0, 1].

    The magnitude is normalized by its 99th percentile (falling back to the
    maximum when most pixels are flat) and clamped.
    """
    frame = np.asarray(frame, dtype=np.float64)
    lum = frame @ np.array([0.299, 0.587, 0.114])
    gx = ndimage.sobel(lum, axis=1, mode="nearest")
    gy = ndimage.sobel(lum, axis=0, mode="nearest")
    mag = np.hypot(gx, gy)
    scale = np.percentile(mag, 99)
    if scale <= 0:
        scale = mag.max()
    if scale <= 0:
        return np.zeros_like(mag)
    return np.clip(mag / scale, 0.0, 1.0)


def write_label_png(path, labels):
    labels = np.asarray(labels)
    if labels.min(initial=0) < 0 or labels.max(initial=0) > 65535:
        raise InvalidDataError("label values must fit in 16 bits")
    Image.fromarray(labels.astype(np.uint16)).save(path)


def read_label_png(path):
    with Image.open(path) as im:
        arr = np.asarray(im)
    if arr.ndim != 2:
        raise FormatError(f"{path}: label raster must be single-channel")
    return arr.astype(np.int64)


def rgb_to_lab(frame):
    """sRGB in [0, 255] to CIELAB (D65)."""
    return skcolor.rgb2lab(np.asarray(frame, dtype=np.float64) / 255.0, illuminant="D65")


def lab_to_rgb(lab):
    rgb = skcolor.lab2rgb(np.asarray(lab, dtype=np.float64), illuminant="D65")
    return np.clip(rgb * 255.0, 0.0, 255.0)


# -- trajectory and label files ----------------------------------------------


def write_trajectories(trajs, attrs, path):
    """Write the STRJ binary trajectory file (little-endian).

    Layout per trajectory: u32 start_frame, u32 length, ``length`` (x, y)
    float32 pairs, then ``length`` (L, a, b) float32 triples.
    """
    T = trajs.num_trajectories
    lengths = trajs.length.astype(np.int64)
    rec_bytes = 8 + 20 * lengths
    rec_start = np.zeros(T, dtype=np.int64)
    if T:
        rec_start[1:] = np.cumsum(rec_bytes)[:-1]
    body = np.zeros(int(rec_bytes.sum()), dtype=np.uint8)

    heads = np.empty((T, 2), dtype="<u4")
    heads[:, 0] = trajs.start
    heads[:, 1] = lengths
    _scatter(body, heads.view(np.uint8).reshape(T, 8), rec_start)

    offs = trajs.offsets[:-1]
    coord_bytes = np.ascontiguousarray(trajs.coords, dtype="<f4").view(np.uint8).reshape(-1, 8)
    color_bytes = np.ascontiguousarray(attrs.colors, dtype="<f4").view(np.uint8).reshape(-1, 12)
    traj_of = np.repeat(np.arange(T), lengths)
    k = np.arange(trajs.coords.shape[0]) - np.repeat(offs, lengths)
    coord_pos = rec_start[traj_of] + 8 + 8 * k
    color_pos = rec_start[traj_of] + 8 + 8 * lengths[traj_of] + 12 * k
    _scatter(body, coord_bytes, coord_pos)
    _scatter(body, color_bytes, color_pos)

    with open(path, "wb") as fh:
        fh.write(_STRJ_HEADER.pack(STRJ_MAGIC, FORMAT_VERSION, trajs.F, trajs.H, trajs.W, T))
        fh.write(body.tobytes())


def read_trajectories(path):
    from .trajectories import TrajectoryAttributes, TrajectorySet

    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _STRJ_HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, F, H, W, T = _STRJ_HEADER.unpack_from(raw, 0)
    if magic != STRJ_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    buf = np.frombuffer(raw, dtype=np.uint8, offset=_STRJ_HEADER.size)

    # record positions depend on each length, so walk the headers first
    starts = np.empty(T, dtype=np.int64)
    lengths = np.empty(T, dtype=np.int64)
    rec_start = np.empty(T, dtype=np.int64)
    pos = 0
    n = len(buf)
    for t in range(T):
        if pos + 8 > n:
            raise FormatError(f"{path}: truncated at trajectory {t} of {T}")
        s, ln = struct.unpack_from("<II", buf, pos)
        rec_start[t] = pos
        starts[t] = s
        lengths[t] = ln
        pos += 8 + 20 * ln
    if pos > n:
        raise FormatError(f"{path}: truncated trajectory data")
    if pos != n:
        raise FormatError(f"{path}: {n - pos} trailing bytes; header count {T} does not match")

    traj_of = np.repeat(np.arange(T), lengths)
    offsets = np.zeros(T + 1, dtype=np.int64)
    np.cumsum(lengths, out=offsets[1:])
    k = np.arange(int(offsets[-1])) - np.repeat(offsets[:-1], lengths)
    coord_pos = rec_start[traj_of] + 8 + 8 * k
    color_pos = rec_start[traj_of] + 8 + 8 * lengths[traj_of] + 12 * k
    coords = _gather(buf, coord_pos, 8).view("<f4").reshape(-1, 2).astype(np.float32)
    colors = _gather(buf, color_pos, 12).view("<f4").reshape(-1, 3).astype(np.float32)

    trajs = TrajectorySet(F=F, H=H, W=W, start=starts, length=lengths, coords=coords)
    attrs = TrajectoryAttributes(colors=colors, edges=None, offsets=offsets)
    return trajs, attrs


def write_labels(labels, path):
    labels = np.asarray(labels)
    with open(path, "wb") as fh:
        fh.write(_STLB_HEADER.pack(STLB_MAGIC, FORMAT_VERSION, labels.shape[0]))
        fh.write(np.ascontiguousarray(labels, dtype="<u4").tobytes())


def read_labels(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _STLB_HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, T = _STLB_HEADER.unpack_from(raw, 0)
    if magic != STLB_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if len(raw) != _STLB_HEADER.size + 4 * T:
        raise FormatError(f"{path}: label count does not match header ({T})")
    return np.frombuffer(raw, dtype="<u4", offset=_STLB_HEADER.size).astype(np.int64)


def _scatter(dst, rows, positions):
    width = rows.shape[1]
    idx = positions[:, None] + np.arange(width)
    dst[idx.ravel()] = rows.ravel()


def _gather(src, positions, width):
    idx = positions[:, None] + np.arange(width)
    return np.ascontiguousarray(src[idx.ravel()]).reshape(-1, width)


# -- dataset directories ------------------------------------------------------

FRAME_DIR = "frames"
FWD_DIR = "flow_fwd"
BWD_DIR = "flow_bwd"
EDGE_DIR = "edges"
GT_DIR = "gt"


def frame_name(index, ext):
    return f"{index:05d}.{ext}"


def list_frames(directory):
    directory = Path(directory)
    names = sorted(p for p in directory.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg", ".ppm", ".bmp"))
    return names


def load_dataset(root, use_edges=True):
    """Load ``frames/``, ``flow_fwd/``, ``flow_bwd/`` and optional ``edges/``.

    Forward flow ``flow_fwd/NNNNN.flo`` maps frame N to N+1 (N = 1..F-1);
    backward flow ``flow_bwd/NNNNN.flo`` maps frame N to N-1 (N = 2..F).
    Missing edge maps are replaced by :func:`sobel_edge_fallback`.
    """
    root = Path(root)
    frame_dir = root / FRAME_DIR
    if not frame_dir.is_dir():
        raise FileNotFoundError(f"missing frame directory {frame_dir}")
    frame_paths = list_frames(frame_dir)
    if not frame_paths:
        raise FileNotFoundError(f"no frames in {frame_dir}")
    frames = [read_image(p) for p in frame_paths]
    shape = frames[0].shape[:2]
    for p, fr in zip(frame_paths, frames):
        if fr.shape[:2] != shape:
            raise DimensionError(f"{p}: frame size {fr.shape[:2]} differs from {shape}")
    F = len(frames)
    fwd, bwd = [], []
    for f in range(1, F):
        fp = root / FWD_DIR / frame_name(f, "flo")
        bp = root / BWD_DIR / frame_name(f + 1, "flo")
        for p in (fp, bp):
            if not p.exists():
                raise FileNotFoundError(f"missing flow file for frame {f if p is fp else f + 1}: {p}")
        fwd.append(read_flow_file(fp, shape))
        bwd.append(read_flow_file(bp, shape))
    edges = []
    edge_dir = root / EDGE_DIR
    for f, fr in enumerate(frames, start=1):
        ep = edge_dir / frame_name(f, "png")
        if use_edges and ep.exists():
            em = read_edge_map(ep)
            if em.shape != shape:
                raise DimensionError(f"{ep}: edge map size {em.shape} differs from {shape}")
            edges.append(em)
        else:
            edges.append(sobel_edge_fallback(fr))
    return frames, fwd, bwd, edges


def load_label_dir(directory):
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"missing label directory {directory}")
    paths = sorted(p for p in directory.iterdir() if p.suffix.lower() == ".png")
    if not paths:
        raise FileNotFoundError(f"no label rasters in {directory}")
    vol = [read_label_png(p) for p in paths]
    shape = vol[0].shape
    for p, lab in zip(paths, vol):
        if lab.shape != shape:
            raise DimensionError(f"{p}: size {lab.shape} differs from {shape}")
    return np.stack(vol)


def save_dataset(root, seq):
    """Write a :class:`~supertraj.synthetic.SyntheticSequence` to disk."""
    root = Path(root)
    for sub in (FRAME_DIR, FWD_DIR, BWD_DIR, EDGE_DIR, GT_DIR):
        (root / sub).mkdir(parents=True, exist_ok=True)
    for f, frame in enumerate(seq.frames, start=1):
        write_image(root / FRAME_DIR / frame_name(f, "png"), frame)
        write_edge_map(root / EDGE_DIR / frame_name(f, "png"), seq.edges[f - 1])
        write_label_png(root / GT_DIR / frame_name(f, "png"), seq.gt_labels[f - 1])
    for f, flow in enumerate(seq.fwd_flows, start=1):
        write_flow_file(root / FWD_DIR / frame_name(f, "flo"), flow)
    for f, flow in enumerate(seq.bwd_flows, start=2):
        write_flow_file(root / BWD_DIR / frame_name(f, "flo"), flow)
    return root


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return Path(path)
