"""Trajectory-level relations: neighbors, connectivity cost, clustering energies."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .trajectories import round_half_up


@dataclass
class EnergyParams:
    s: float
    m: float = 10.0
    beta: float = 4.0

    def __post_init__(self):
        if self.s < 2:
            raise ValueError(f"spacing s must be >= 2, got {self.s}")
        if self.m <= 0 or self.beta <= 0:
            raise ValueError("m and beta must be positive")


@dataclass
class NeighborGraph:
    """Symmetric CSR adjacency; ``first_frame`` is aligned with ``indices``."""

    indptr: np.ndarray
    indices: np.ndarray
    first_frame: np.ndarray
    _lists: list | None = field(default=None, init=False, repr=False)

    @property
    def num_nodes(self):
        return len(self.indptr) - 1

    @property
    def num_edges(self):
        return len(self.indices) // 2

    def neighbors(self, i):
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    @property
    def adjacency(self):
        """Neighbor lists as plain Python lists (fast for scalar loops)."""
        if self._lists is None:
            ind = self.indices.tolist()
            ptr = self.indptr.tolist()
            self._lists = [ind[ptr[i]:ptr[i + 1]] for i in range(self.num_nodes)]
        return self._lists


def build_neighbor_graph(trajs):
    """Link trajectories whose rounded cells coincide or touch (4-adjacency) in some frame."""
    H, W, T = trajs.H, trajs.W, trajs.num_trajectories
    us, vs, fs = [], [], []
    for f in range(1, trajs.F + 1):
        ids, xy = trajs.frame_view(f)
        if len(ids) == 0:
            continue
        flat = np.clip(round_half_up(xy[:, 1]), 0, H - 1) * W + np.clip(round_half_up(xy[:, 0]), 0, W - 1)
        order = np.argsort(flat, kind="stable")
        flat_s, ids_s = flat[order], ids[order]
        lead = np.ones(len(flat_s), dtype=bool)
        lead[1:] = flat_s[1:] != flat_s[:-1]
        group_start = np.maximum.accumulate(np.where(lead, np.arange(len(flat_s)), 0))
        rank = np.arange(len(flat_s)) - group_start
        G = int(rank.max()) + 1
        members = np.full((H * W, G), -1, dtype=np.int64)
        members[flat_s, rank] = ids_s
        cells = np.arange(H * W)
        right = cells[(cells % W) < W - 1]
        down = cells[cells < (H - 1) * W]
        for a in range(G):
            for b in range(G):
                if a < b:
                    u, v = members[:, a], members[:, b]
                    _collect(us, vs, fs, u, v, f)
                for src, dst in ((right, right + 1), (down, down + W)):
                    _collect(us, vs, fs, members[src, a], members[dst, b], f)

    if us:
        u = np.concatenate(us)
        v = np.concatenate(vs)
        fr = np.concatenate(fs)
    else:
        u = v = fr = np.zeros(0, dtype=np.int64)
    lo, hi = np.minimum(u, v), np.maximum(u, v)
    code = lo * max(T, 1) + hi
    order = np.lexsort((fr, code))
    code, fr = code[order], fr[order]
    keep = np.ones(len(code), dtype=bool)
    keep[1:] = code[1:] != code[:-1]
    code, fr = code[keep], fr[keep]
    lo, hi = code // max(T, 1), code % max(T, 1)

    src = np.concatenate([lo, hi])
    dst = np.concatenate([hi, lo])
    ff = np.concatenate([fr, fr])
    order = np.lexsort((dst, src))
    src, dst, ff = src[order], dst[order], ff[order]
    indptr = np.zeros(T + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=T), out=indptr[1:])
    return NeighborGraph(indptr, dst, ff)


def _collect(us, vs, fs, u, v, f):
    ok = (u >= 0) & (v >= 0)
    us.append(u[ok])
    vs.append(v[ok])
    fs.append(np.full(int(ok.sum()), f, dtype=np.int64))


# -- connectivity ----------------------------------------------------------------


def label_frame_counts(labels, trajs, n_labels=None):
    """``counts[l, f-1]`` = number of trajectories labeled ``l`` visible at frame f."""
    labels = np.asarray(labels, dtype=np.int64)
    if n_labels is None:
        n_labels = int(labels.max(initial=0)) + 1
    diff = np.zeros((n_labels, trajs.F + 1), dtype=np.int64)
    np.add.at(diff, (labels, trajs.start - 1), 1)
    np.add.at(diff, (labels, trajs.end), -1)
    return np.cumsum(diff, axis=1)[:, :trajs.F]


def set_visibility(label, labels, trajs, exclude=None, counts=None):
    """Frames where some member of the label set (optionally minus one trajectory) is visible."""
    if counts is None:
        members = np.flatnonzero(np.asarray(labels) == label)
        v = np.zeros(trajs.F, dtype=bool)
        for j in members:
            if j != exclude:
                v[trajs.start[j] - 1:trajs.end[j]] = True
        return v
    row = counts[label].copy() if label < len(counts) else np.zeros(trajs.F, dtype=np.int64)
    if exclude is not None and labels[exclude] == label:
        row[trajs.start[exclude] - 1:trajs.end[exclude]] -= 1
    return row > 0


def disconnectivity(i, label, labels, graph, trajs):
    """Per-frame flag: no neighbor of ``i`` carrying ``label`` is visible there."""
    d = np.ones(trajs.F, dtype=bool)
    for k in graph.neighbors(i):
        if k != i and labels[k] == label:
            d[trajs.start[k] - 1:trajs.end[k]] = False
    return d


def connectivity_cost(i, label, labels, graph, trajs, counts=None):
    """Frames where the label set is visible but ``i`` has no visible neighbor in it."""
    v_set = set_visibility(label, labels, trajs, exclude=i, counts=counts)
    if not v_set.any():
        return 0
    d = disconnectivity(i, label, labels, graph, trajs)
    return int(np.count_nonzero(d & v_set))


class Connectivity:
    """Mutable labeling with incremental per-label visibility, for repeated cost queries."""

    def __init__(self, trajs, graph, labels, n_labels=None):
        self.trajs = trajs
        self.labels = np.array(labels, dtype=np.int64)
        if n_labels is None:
            n_labels = int(self.labels.max(initial=0)) + 1
        self.counts = label_frame_counts(self.labels, trajs, n_labels)
        self.adj = graph.adjacency
        self.s0 = (trajs.start - 1).tolist()
        self.e = trajs.end.tolist()
        self.F = trajs.F

    def cost(self, i, label):
        if label >= len(self.counts):
            return 0  # nobody carries it
        row = self.counts[label]
        s0, e = self.s0[i], self.e[i]
        if self.labels[i] == label:
            row = row.copy()
            row[s0:e] -= 1
        v_set = row > 0
        covered = np.zeros(self.F, dtype=bool)
        lab = self.labels
        for k in self.adj[i]:
            if lab[k] == label:
                covered[self.s0[k]:self.e[k]] = True
        return int(np.count_nonzero(v_set & ~covered))

    def assign(self, i, label):
        old = self.labels[i]
        if old == label:
            return
        if label >= len(self.counts):
            grow = np.zeros((label + 1 - len(self.counts), self.F), dtype=self.counts.dtype)
            self.counts = np.vstack([self.counts, grow])
        s0, e = self.s0[i], self.e[i]
        self.counts[old, s0:e] -= 1
        self.counts[label, s0:e] += 1
        self.labels[i] = label


def total_disconnection(labels, graph, trajs):
    """Sum over labeled trajectories of the cost against the rest of their own label."""
    conn = Connectivity(trajs, graph, labels)
    return sum(conn.cost(i, int(l)) for i, l in enumerate(conn.labels.tolist()) if l > 0)


def cost_bruteforce_oracle(i, label, labels, trajs):
    """Connectivity cost recomputed from raw coordinates with plain set scans."""
    F = trajs.F
    vis = [range(int(s), int(s + n)) for s, n in zip(trajs.start, trajs.length)]
    cells = {}
    for j in range(trajs.num_trajectories):
        pts = trajs.trajectory(j)
        for k, f in enumerate(vis[j]):
            x, y = float(pts[k, 0]), float(pts[k, 1])
            cells[(j, f)] = (math.floor(y + 0.5), math.floor(x + 0.5))
    by_frame = {}
    for (j, f), cell in cells.items():
        by_frame.setdefault(f, {}).setdefault(cell, []).append(j)

    nbrs = set()
    for f in vis[i]:
        r, c = cells[(i, f)]
        grid = by_frame[f]
        for cell in ((r, c), (r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
            for k in grid.get(cell, ()):
                if k != i:
                    nbrs.add(k)

    total = 0
    for f in range(1, F + 1):
        set_visible = any(labels[j] == label and f in vis[j] for j in range(len(vis)) if j != i)
        connected = any(labels[k] == label and f in vis[k] for k in nbrs)
        if set_visible and not connected:
            total += 1
    return total


# -- energies ---------------------------------------------------------------------


@dataclass
class ClusterState:
    """Running centroid of a trajectory cluster (per-frame position, mean color)."""

    label: int
    pos_sum: np.ndarray
    pos_count: np.ndarray
    color_sum: np.ndarray
    n: int = 0
    members: list = field(default_factory=list)

    @classmethod
    def empty(cls, label, F):
        return cls(label, np.zeros((F, 2)), np.zeros(F, dtype=np.int64), np.zeros(3), 0, [])

    @classmethod
    def from_members(cls, label, members, trajs, mean_colors):
        state = cls.empty(label, trajs.F)
        for i in members:
            state.add(i, trajs, mean_colors)
        return state

    def add(self, i, trajs, mean_colors):
        s0 = trajs.start[i] - 1
        pts = trajs.coords[trajs.offsets[i]:trajs.offsets[i + 1]]
        self.pos_sum[s0:s0 + len(pts)] += pts
        self.pos_count[s0:s0 + len(pts)] += 1
        self.color_sum += mean_colors[i]
        self.n += 1
        self.members.append(int(i))

    @property
    def positions(self):
        with np.errstate(invalid="ignore", divide="ignore"):
            return self.pos_sum / self.pos_count[:, None]

    @property
    def color(self):
        return self.color_sum / self.n


def energy_to_centroid(i, centroid, trajs, mean_colors, params):
    """Spatial plus color energy of trajectory ``i`` against a cluster centroid.

    The spatial part averages squared offsets over frames where both are
    defined; with no such frame the energy is infinite.
    """
    s0 = trajs.start[i] - 1
    n = trajs.length[i]
    cnt = centroid.pos_count[s0:s0 + n]
    ok = cnt > 0
    if not ok.any():
        return math.inf
    pts = trajs.coords[trajs.offsets[i]:trajs.offsets[i] + n][ok].astype(np.float64)
    d = pts - centroid.pos_sum[s0:s0 + n][ok] / cnt[ok, None]
    e_s = np.mean(np.sum(d * d, axis=1)) / (params.s * params.s)
    dc = mean_colors[i] - centroid.color_sum / centroid.n
    e_c = np.sum(dc * dc) / (params.m * params.m)
    return float(e_s + e_c)


def edge_energy(i, j, trajs, attrs, beta):
    """Mean of ``exp(beta * max(b_i, b_j))`` over co-visible frames; ``exp(beta)`` if none."""
    lo = max(trajs.start[i], trajs.start[j])
    hi = min(trajs.end[i], trajs.end[j])
    if hi < lo or attrs.edges is None:
        return math.exp(beta) if hi < lo else 1.0
    bi = attrs.edges[trajs.offsets[i] + lo - trajs.start[i]:trajs.offsets[i] + hi - trajs.start[i] + 1]
    bj = attrs.edges[trajs.offsets[j] + lo - trajs.start[j]:trajs.offsets[j] + hi - trajs.start[j] + 1]
    return float(np.mean(np.exp(beta * np.maximum(bi, bj))))


def total_energy(i, centroid, j, trajs, attrs, mean_colors, params):
    return energy_to_centroid(i, centroid, trajs, mean_colors, params) + edge_energy(i, j, trajs, attrs, params.beta)
