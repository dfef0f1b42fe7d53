"""Dense point trajectories from forward/backward optical flow.

Trajectories are stored run-length style: trajectory ``i`` is visible on
frames ``start[i] .. start[i] + length[i] - 1`` (1-based) and its coordinates
occupy rows ``offsets[i] : offsets[i + 1]`` of ``coords``.  Coordinates are
``(x, y)`` with ``x`` along the columns.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .io import DimensionError, rgb_to_lab

DEFAULT_GAMMA = 1.5
DEFAULT_BETA = 4.0
DEFAULT_SIGMA = 20.0


@dataclass
class TrajectorySet:
    F: int
    H: int
    W: int
    start: np.ndarray
    length: np.ndarray
    coords: np.ndarray
    _views: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.start = np.asarray(self.start, dtype=np.int64)
        self.length = np.asarray(self.length, dtype=np.int64)
        self.coords = np.asarray(self.coords, dtype=np.float32).reshape(-1, 2)
        self.offsets = np.zeros(len(self.start) + 1, dtype=np.int64)
        np.cumsum(self.length, out=self.offsets[1:])
        if self.offsets[-1] != self.coords.shape[0]:
            raise ValueError("coordinate count does not match trajectory lengths")

    @property
    def num_trajectories(self):
        return len(self.start)

    @property
    def end(self):
        """Last visible frame (inclusive, 1-based)."""
        return self.start + self.length - 1

    def check_frame(self, frame):
        if not 1 <= frame <= self.F:
            raise IndexError(f"frame {frame} outside [1, {self.F}]")

    def frame_view(self, frame):
        """Ids (ascending) and float64 ``(x, y)`` of trajectories visible at ``frame``."""
        self.check_frame(frame)
        view = self._views.get(frame)
        if view is None:
            ids = np.flatnonzero((self.start <= frame) & (self.end >= frame))
            rows = self.offsets[ids] + (frame - self.start[ids])
            view = (ids, self.coords[rows].astype(np.float64))
            self._views[frame] = view
        return view

    def trajectory(self, i):
        return self.coords[self.offsets[i]:self.offsets[i + 1]]

    def visibility(self, i):
        v = np.zeros(self.F, dtype=bool)
        v[self.start[i] - 1:self.start[i] - 1 + self.length[i]] = True
        return v


@dataclass
class TrajectoryAttributes:
    """Per-sample colors (Lab, float32) and edge strengths, aligned with coords."""

    colors: np.ndarray
    edges: np.ndarray | None
    offsets: np.ndarray

    def __post_init__(self):
        self.colors = np.asarray(self.colors, dtype=np.float32).reshape(-1, 3)
        if self.edges is not None:
            self.edges = np.asarray(self.edges, dtype=np.float64)

    @property
    def mean_color(self):
        lengths = np.diff(self.offsets)
        sums = np.add.reduceat(self.colors.astype(np.float64), self.offsets[:-1], axis=0) if len(lengths) else np.zeros((0, 3))
        # reduceat misbehaves on zero-length runs; those cannot occur here
        return sums / lengths[:, None]


# -- raster sampling ----------------------------------------------------------


def round_half_up(v):
    return np.floor(np.asarray(v, dtype=np.float64) + 0.5).astype(np.int64)


def bilinear(raster, x, y):
    """Bilinear sample of ``raster`` at real positions, clamped to the border."""
    raster = np.asarray(raster)
    H, W = raster.shape[:2]
    x = np.clip(np.asarray(x, dtype=np.float64), 0, W - 1)
    y = np.clip(np.asarray(y, dtype=np.float64), 0, H - 1)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    fx = x - x0
    fy = y - y0
    if raster.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    top = raster[y0, x0] * (1 - fx) + raster[y0, x1] * fx
    bot = raster[y1, x0] * (1 - fx) + raster[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def nearest(raster, x, y):
    raster = np.asarray(raster)
    H, W = raster.shape[:2]
    c = np.clip(round_half_up(x), 0, W - 1)
    r = np.clip(round_half_up(y), 0, H - 1)
    return raster[r, c]


def in_domain(x, y, H, W):
    return (x >= 0) & (x <= W - 1) & (y >= 0) & (y <= H - 1)


# -- consistency test --------------------------------------------------------


def consistency_terms(lab_f, lab_p, backward_flow_f, forward_flow_p, edges_p, edges_f, beta=DEFAULT_BETA):
    """Flow, color and edge distance rasters on frame f's pixel grid.

    ``lab_f``/``lab_p`` are Lab images.  Pixels whose backward position
    leaves the image get infinite flow and color distance.
    """
    shapes = {np.shape(lab_f)[:2], np.shape(lab_p)[:2], np.shape(backward_flow_f)[:2],
              np.shape(forward_flow_p)[:2], np.shape(edges_p), np.shape(edges_f)}
    if len(shapes) != 1:
        raise DimensionError(f"raster dimensions disagree: {sorted(shapes)}")
    H, W = np.shape(edges_f)
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    bx = xx + backward_flow_f[..., 0]
    by = yy + backward_flow_f[..., 1]
    inside = in_domain(bx, by, H, W)
    fwd = bilinear(forward_flow_p, bx, by)
    d_flow = np.hypot(bx + fwd[..., 0] - xx, by + fwd[..., 1] - yy)
    d_color = np.linalg.norm(bilinear(lab_p, bx, by) - lab_f, axis=-1)
    d_edge = np.exp(beta * np.maximum(bilinear(edges_p, bx, by), edges_f))
    d_flow[~inside] = np.inf
    d_color[~inside] = np.inf
    return d_flow, d_color, d_edge


def consistency_distance(frame_f, frame_p, backward_flow_f, forward_flow_p, edges_p, edges_f,
                         beta=DEFAULT_BETA, sigma=DEFAULT_SIGMA, mode="joint", lab=False):
    """Joint flow/color/edge distance ``(D_flow + D_color / sigma) * D_edge``.

    Frames are RGB unless ``lab`` is set.  ``mode="flow"`` returns the plain
    forward-backward residual (the classic flow-only check).
    """
    if beta <= 0 or sigma <= 0:
        raise ValueError("beta and sigma must be positive")
    if not lab:
        frame_f = rgb_to_lab(frame_f)
        frame_p = rgb_to_lab(frame_p)
    d_flow, d_color, d_edge = consistency_terms(frame_f, frame_p, backward_flow_f, forward_flow_p,
                                                edges_p, edges_f, beta)
    if mode == "flow":
        return d_flow
    with np.errstate(invalid="ignore"):
        dist = (d_flow + d_color / sigma) * d_edge
    dist[np.isinf(d_flow)] = np.inf
    return dist


def occlusion_mask(dist, gamma=DEFAULT_GAMMA):
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    return np.asarray(dist) >= gamma


# -- trajectory construction ----------------------------------------------------


@dataclass
class BuildResult:
    trajectories: TrajectorySet
    attributes: TrajectoryAttributes
    occlusion: np.ndarray  # (F, H, W) bool, frame 1 all True
    terminated: np.ndarray  # per frame: trajectories ended entering that frame
    spawned: np.ndarray  # per frame: trajectories started at that frame

    def __iter__(self):
        return iter((self.trajectories, self.attributes, self.occlusion))


def build_trajectories(frames, fwd_flows, bwd_flows, edges, gamma=DEFAULT_GAMMA, beta=DEFAULT_BETA,
                       sigma=DEFAULT_SIGMA, mode="joint"):
    """Chain flows into trajectories, breaking them where the flow is inconsistent.

    Each live trajectory advances by bilinearly sampled forward flow.  It ends
    when it leaves the image, lands on a pixel flagged by the frame's
    occlusion mask, or its own round trip (forward step followed by the
    backward flow at the arrival point, plus the color and edge terms) fails
    the same ``gamma`` test.  Every raster cell left unclaimed by the
    survivors spawns a new trajectory, so each frame is fully covered.
    """
    F = len(frames)
    if F == 0:
        raise ValueError("need at least one frame")
    if len(fwd_flows) != F - 1 or len(bwd_flows) != F - 1 or len(edges) != F:
        raise DimensionError("need F frames and edge maps, F-1 forward and F-1 backward flows")
    H, W = np.shape(frames[0])[:2]
    for r in list(frames) + list(fwd_flows) + list(bwd_flows) + list(edges):
        if np.shape(r)[:2] != (H, W):
            raise DimensionError(f"raster of size {np.shape(r)[:2]} in a {H}x{W} sequence")
    if gamma <= 0 or beta <= 0 or sigma <= 0:
        raise ValueError("gamma, beta and sigma must be positive")

    labs = [rgb_to_lab(fr) for fr in frames]
    edges = [np.asarray(e, dtype=np.float64) for e in edges]

    yy, xx = np.mgrid[0:H, 0:W]
    grid = np.stack([xx.ravel(), yy.ravel()], axis=1).astype(np.float64)
    ids = np.arange(H * W, dtype=np.int64)
    pos = grid.copy()
    next_id = H * W

    rec_ids = [ids]
    rec_pos = [pos]
    masks = np.zeros((F, H, W), dtype=bool)
    masks[0] = True
    terminated = np.zeros(F, dtype=np.int64)
    spawned = np.zeros(F, dtype=np.int64)
    spawned[0] = H * W

    for f in range(1, F):
        p = f - 1
        fwd, bwd = fwd_flows[p], bwd_flows[p]
        dist = consistency_distance(labs[f], labs[p], bwd, fwd, edges[p], edges[f],
                                    beta=beta, sigma=sigma, mode=mode, lab=True)
        masks[f] = occlusion_mask(dist, gamma)

        step = bilinear(fwd, pos[:, 0], pos[:, 1])
        adv = (pos + step).astype(np.float32).astype(np.float64)
        keep = in_domain(adv[:, 0], adv[:, 1], H, W)
        keep[keep] = ~nearest(masks[f], adv[keep, 0], adv[keep, 1])
        if keep.any():
            d_own = _track_distance(pos[keep], adv[keep], labs[p], labs[f], bwd, edges[p], edges[f],
                                    beta, sigma, mode)
            keep[np.flatnonzero(keep)[d_own >= gamma]] = False

        terminated[f] = np.count_nonzero(~keep)
        ids = ids[keep]
        pos = adv[keep]
        claimed = np.zeros(H * W, dtype=bool)
        claimed[round_half_up(pos[:, 1]) * W + round_half_up(pos[:, 0])] = True
        fresh = np.flatnonzero(~claimed)
        spawned[f] = len(fresh)
        ids = np.concatenate([ids, np.arange(next_id, next_id + len(fresh), dtype=np.int64)])
        pos = np.concatenate([pos, grid[fresh]])
        next_id += len(fresh)
        rec_ids.append(ids)
        rec_pos.append(pos)

    all_ids = np.concatenate(rec_ids)
    all_frames = np.concatenate([np.full(len(r), f + 1, dtype=np.int64) for f, r in enumerate(rec_ids)])
    all_pos = np.concatenate(rec_pos)
    order = np.lexsort((all_frames, all_ids))
    sid, sframe, spos = all_ids[order], all_frames[order], all_pos[order]
    T = next_id
    length = np.bincount(sid, minlength=T)
    first = np.zeros(T + 1, dtype=np.int64)
    np.cumsum(length, out=first[1:])
    start = sframe[first[:-1]]

    colors = np.empty((len(sid), 3), dtype=np.float64)
    edge_vals = np.empty(len(sid), dtype=np.float64)
    for f in range(F):
        sel = sframe == f + 1
        colors[sel] = bilinear(labs[f], spos[sel, 0], spos[sel, 1])
        edge_vals[sel] = bilinear(edges[f], spos[sel, 0], spos[sel, 1])

    trajs = TrajectorySet(F=F, H=H, W=W, start=start, length=length, coords=spos.astype(np.float32))
    attrs = TrajectoryAttributes(colors=colors.astype(np.float32), edges=edge_vals, offsets=trajs.offsets)
    return BuildResult(trajs, attrs, masks, terminated, spawned)


def _track_distance(pos_p, pos_f, lab_p, lab_f, bwd_f, edges_p, edges_f, beta, sigma, mode):
    back = bilinear(bwd_f, pos_f[:, 0], pos_f[:, 1])
    d_flow = np.linalg.norm(pos_f + back - pos_p, axis=1)
    if mode == "flow":
        return d_flow
    d_color = np.linalg.norm(bilinear(lab_f, pos_f[:, 0], pos_f[:, 1]) - bilinear(lab_p, pos_p[:, 0], pos_p[:, 1]), axis=1)
    e = np.maximum(bilinear(edges_p, pos_p[:, 0], pos_p[:, 1]), bilinear(edges_f, pos_f[:, 0], pos_f[:, 1]))
    return (d_flow + d_color / sigma) * np.exp(beta * e)


def attach_edges(trajs, attrs, edges):
    """Sample per-frame edge maps along every trajectory (bilinear)."""
    vals = np.empty(trajs.coords.shape[0], dtype=np.float64)
    for f in range(1, trajs.F + 1):
        ids, xy = trajs.frame_view(f)
        rows = trajs.offsets[ids] + (f - trajs.start[ids])
        vals[rows] = bilinear(edges[f - 1], xy[:, 0], xy[:, 1])
    attrs.edges = vals
    return attrs


# -- raster conversions g() and h() -------------------------------------------


def _cell_winners(ids, xy, H, W):
    """Conflict winner per occupied cell: nearest to the cell center, then lowest id."""
    c = np.clip(round_half_up(xy[:, 0]), 0, W - 1)
    r = np.clip(round_half_up(xy[:, 1]), 0, H - 1)
    d2 = (xy[:, 0] - c) ** 2 + (xy[:, 1] - r) ** 2
    flat = r * W + c
    order = np.lexsort((ids, d2, flat))
    flat_sorted = flat[order]
    lead = np.ones(len(order), dtype=bool)
    lead[1:] = flat_sorted[1:] != flat_sorted[:-1]
    win = order[lead]
    return flat[win], win


def fill_nearest(key, owner):
    """Breadth-first hole filling over 4-neighbors, ties broken by smallest key.

    ``key`` is float with ``inf`` on holes; ``owner`` carries the payload.
    Both are updated in place and returned.
    """
    H, W = key.shape
    if not np.isfinite(key).any():
        return key, owner
    while not np.isfinite(key).all():
        cand_key = np.full((4, H, W), np.inf)
        cand_own = np.full((4, H, W), -1, dtype=owner.dtype)
        cand_key[0, 1:, :], cand_own[0, 1:, :] = key[:-1, :], owner[:-1, :]
        cand_key[1, :, 1:], cand_own[1, :, 1:] = key[:, :-1], owner[:, :-1]
        cand_key[2, :, :-1], cand_own[2, :, :-1] = key[:, 1:], owner[:, 1:]
        cand_key[3, :-1, :], cand_own[3, :-1, :] = key[1:, :], owner[1:, :]
        best = np.argmin(cand_key, axis=0)
        bk = np.take_along_axis(cand_key, best[None], 0)[0]
        bo = np.take_along_axis(cand_own, best[None], 0)[0]
        hole = ~np.isfinite(key) & np.isfinite(bk)
        if not hole.any():
            break
        key[hole] = bk[hole]
        owner[hole] = bo[hole]
    return key, owner


def owner_raster(trajs, frame, tie_values=None):
    """Trajectory id responsible for each pixel at ``frame`` (holes filled).

    ``tie_values`` (per trajectory scalars) decide hole-filling ties; by
    default the owner id itself is used.  Cells stay -1 only when no
    trajectory is visible.
    """
    ids, xy = trajs.frame_view(frame)
    H, W = trajs.H, trajs.W
    owner = np.full(H * W, -1, dtype=np.int64)
    key = np.full(H * W, np.inf)
    if len(ids):
        flat, win = _cell_winners(ids, xy, H, W)
        owner[flat] = ids[win]
        tv = ids if tie_values is None else np.asarray(tie_values)[ids]
        # ranks keep the tie order but are always finite
        key[flat] = np.unique(tv[win], return_inverse=True)[1].ravel()
    key = key.reshape(H, W)
    owner = owner.reshape(H, W)
    fill_nearest(key, owner)
    return owner


def g_rasterize(trajs, frame, values, fill=0):
    """Paint per-trajectory ``values`` into an ``(H, W[, C])`` raster at ``frame``."""
    values = np.asarray(values)
    scalar = values.ndim == 1
    owner = owner_raster(trajs, frame, tie_values=values if scalar else None)
    shape = (trajs.H, trajs.W) + values.shape[1:]
    out = np.full(shape, fill, dtype=values.dtype)
    ok = owner >= 0
    out[ok] = values[owner[ok]]
    return out


def h_sample(trajs, frame, raster, nearest_neighbor=None):
    """Sample ``raster`` at every trajectory visible at ``frame``.

    Returns ``(ids, values)``.  Integer and boolean rasters are sampled by
    nearest neighbor, everything else bilinearly.
    """
    raster = np.asarray(raster)
    if raster.shape[:2] != (trajs.H, trajs.W):
        raise DimensionError(f"raster {raster.shape[:2]} does not match {trajs.H}x{trajs.W}")
    ids, xy = trajs.frame_view(frame)
    if nearest_neighbor is None:
        nearest_neighbor = raster.dtype.kind in "biu"
    if nearest_neighbor:
        return ids, nearest(raster, xy[:, 0], xy[:, 1])
    return ids, bilinear(raster, xy[:, 0], xy[:, 1])


def check_coverage(trajs):
    """True when every pixel of every frame has an owning trajectory."""
    return all((owner_raster(trajs, f) >= 0).all() for f in range(1, trajs.F + 1))
