"""Super-trajectory clustering: seeding, TNIC region growing, connectivity iteration, post-processing."""

from __future__ import annotations

import heapq
import itertools
import logging
import math
from collections import Counter, deque
from dataclasses import dataclass, field

import numpy as np
from skimage.measure import label as connected_components

from .primitives import ClusterState, Connectivity, EnergyParams, total_disconnection, total_energy
from .trajectories import g_rasterize, h_sample, owner_raster

log = logging.getLogger(__name__)

DEFAULT_MAX_ITER = 10


class ConfigError(ValueError):
    pass


def default_threshold(s):
    return math.ceil(s * s / 2)


def default_min_region(s):
    return math.ceil(s * s / 4)


# -- seeds ---------------------------------------------------------------------------


@dataclass
class SeedSet:
    seeds: list = field(default_factory=list)  # (trajectory id, selection frame)

    def __len__(self):
        return len(self.seeds)

    def __iter__(self):
        return iter(self.seeds)

    @property
    def ids(self):
        return np.array([i for i, _ in self.seeds], dtype=np.int64)

    @property
    def frames(self):
        return np.array([f for _, f in self.seeds], dtype=np.int64)


def grid_positions(n, s):
    """Centers of ``n // s`` windows of width ``s``, the grid centered in ``[0, n)``."""
    count = max(1, n // s)
    offset = (n - count * s) // 2 + s // 2
    return [min(offset + a * s, n - 1) for a in range(count)]


def box_sums(U, s):
    """Sum of ``U`` over the ``s x s`` window centered at each pixel (zero outside)."""
    H, W = U.shape
    P = np.zeros((H + 1, W + 1))
    P[1:, 1:] = U.cumsum(0).cumsum(1)
    half = s // 2
    r = np.arange(H)
    c = np.arange(W)
    r0, r1 = np.clip(r - half, 0, H), np.clip(r - half + s, 0, H)
    c0, c1 = np.clip(c - half, 0, W), np.clip(c - half + s, 0, W)
    return P[r1][:, c1] - P[r0][:, c1] - P[r1][:, c0] + P[r0][:, c0]


def bisection_order(F):
    """Frames probed after frame 1: F, then midpoints of the widest gaps (earliest first)."""
    if F < 2:
        return []
    order = [F]
    heap = [(-(F - 1), 1, F)]
    while heap:
        _, a, b = heapq.heappop(heap)
        m = (a + b + 1) // 2
        if m in (a, b):
            continue
        order.append(m)
        heapq.heappush(heap, (-(m - a), a, m))
        heapq.heappush(heap, (-(b - m), m, b))
    return order


def init_seeds(trajs, s, th=None):
    """Grid seeds on frame 1, then greedy window seeds on later frames.

    Later frames are visited in bisection order.  At each probed frame the
    uncovered-trajectory indicator is rasterized and box-filtered; windows
    holding at least ``th`` uncovered pixels yield seeds.  A gap stops being
    subdivided once its midpoint frame yields no seed.
    """
    H, W = trajs.H, trajs.W
    s = int(s)
    if s < 2:
        raise ConfigError(f"spacing s must be >= 2, got {s}")
    if s > min(H, W):
        raise ConfigError(f"spacing s={s} exceeds frame size {H}x{W}")
    th = default_threshold(s) if th is None else th
    T = trajs.num_trajectories

    seeds = SeedSet()
    seeded = set()
    owner = owner_raster(trajs, 1)
    for r in grid_positions(H, s):
        for c in grid_positions(W, s):
            i = int(owner[r, c])
            if i >= 0 and i not in seeded:
                seeded.add(i)
                seeds.seeds.append((i, 1))

    covered = np.zeros(T, dtype=bool)
    covered[trajs.frame_view(1)[0]] = True
    half = s // 2

    def probe(f):
        u = (~covered).astype(np.float64)
        U = g_rasterize(trajs, f, u, fill=0.0)
        own = owner_raster(trajs, f, tie_values=u)
        zeroed = np.zeros((H, W), dtype=bool)
        found = 0
        while True:
            S = box_sums(U, s)
            idx = int(np.argmax(S))
            if S.flat[idx] < th:
                break
            r, c = divmod(idx, W)
            r0, r1 = max(0, r - half), min(H, r - half + s)
            c0, c1 = max(0, c - half), min(W, c - half + s)
            pr, pc = _nearest_uncovered(U, r, c, r0, r1, c0, c1)
            i = int(own[pr, pc])
            if i >= 0 and i not in seeded:
                seeded.add(i)
                seeds.seeds.append((i, f))
                found += 1
            U[r0:r1, c0:c1] = 0.0
            zeroed[r0:r1, c0:c1] = True
        ids, hit = h_sample(trajs, f, zeroed)
        covered[ids[hit]] = True
        return found

    F = trajs.F
    if F >= 2:
        probe(F)
        heap = [(-(F - 1), 1, F)]
        while heap:
            _, a, b = heapq.heappop(heap)
            m = (a + b + 1) // 2
            if m in (a, b):
                continue
            if probe(m):
                heapq.heappush(heap, (-(m - a), a, m))
                heapq.heappush(heap, (-(b - m), m, b))
    return seeds


def _nearest_uncovered(U, r, c, r0, r1, c0, c1):
    if U[r, c] > 0:
        return r, c
    rr, cc = np.nonzero(U[r0:r1, c0:c1] > 0)
    d = (rr + r0 - r) ** 2 + (cc + c0 - c) ** 2
    k = int(np.argmin(d))  # row-major first among equals
    return int(rr[k] + r0), int(cc[k] + c0)


# -- TNIC -----------------------------------------------------------------------------


def tnic(trajs, attrs, graph, L_init, params, n_labels=None, mean_colors=None):
    """Priority-queue growth of labeled trajectory groups over the neighbor graph.

    Candidates carry the centroid energy plus the edge energy towards the
    labeled neighbor that pushed them; the smallest energy pops first and
    equal energies pop in insertion order.  Trajectories not reachable from
    any labeled group keep label 0.
    """
    L = np.asarray(L_init, dtype=np.int64)
    K = int(L.max(initial=0)) if n_labels is None else int(n_labels)
    if K == 0 or not L.any():
        raise ValueError("TNIC needs at least one labeled seed")
    if mean_colors is None:
        mean_colors = attrs.mean_color
    states = [None] + [ClusterState.empty(k, trajs.F) for k in range(1, K + 1)]
    for i in np.flatnonzero(L).tolist():
        states[L[i]].add(i, trajs, mean_colors)

    adj = graph.adjacency
    labels = L.tolist()
    heap = []
    tick = itertools.count()
    for k in range(1, K + 1):
        st = states[k]
        for i in list(st.members):
            for j in adj[i]:
                if labels[j] == 0:
                    e = total_energy(j, st, i, trajs, attrs, mean_colors, params)
                    heapq.heappush(heap, (e, next(tick), j, k))
    while heap:
        _, _, j, k = heapq.heappop(heap)
        if labels[j] != 0:
            continue
        labels[j] = k
        st = states[k]
        st.add(j, trajs, mean_colors)
        for n in adj[j]:
            if labels[n] == 0:
                e = total_energy(n, st, j, trajs, attrs, mean_colors, params)
                heapq.heappush(heap, (e, next(tick), n, k))
    return np.array(labels, dtype=np.int64)


# -- fully connected growth (outer iteration) -----------------------------------------


def grow_fully_connected(L_star, L, graph, trajs, n_labels):
    """Extend each fully connected set with same-label neighbors of zero connectivity cost.

    Works to a fixpoint per label: a rejected candidate is revisited whenever
    one of its neighbors joins the set.
    """
    conn = Connectivity(trajs, graph, L_star, n_labels + 1)
    adj = conn.adj
    L = np.asarray(L).tolist()
    for k in range(1, n_labels + 1):
        queue = deque()
        queued = set()
        for i in np.flatnonzero(conn.labels == k).tolist():
            for j in adj[i]:
                if L[j] == k and conn.labels[j] == 0 and j not in queued:
                    queue.append(j)
                    queued.add(j)
        while queue:
            j = queue.popleft()
            queued.discard(j)
            if conn.labels[j] != 0:
                continue
            if conn.cost(j, k) == 0:
                conn.assign(j, k)
                for n in adj[j]:
                    if L[n] == k and conn.labels[n] == 0 and n not in queued:
                        queue.append(n)
                        queued.add(n)
    return conn.labels


@dataclass
class ClusteringResult:
    labels: np.ndarray
    raw_labels: np.ndarray  # last TNIC output, before post-processing
    fully_connected: np.ndarray  # final L*
    cnt_history: list
    iterations: int
    n_labels: int
    fallback: int = 0
    disconnection_before: int | None = None
    disconnection_after: int | None = None
    seeds: SeedSet | None = None
    graph: object = None


def super_trajectory_clustering(trajs, attrs, graph, seeds, params, max_iter=DEFAULT_MAX_ITER,
                                min_region=None, measure=True):
    """Alternate TNIC with growth of the fully connected labeling until it stalls."""
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    ids = seeds.ids if isinstance(seeds, SeedSet) else np.asarray(seeds, dtype=np.int64)
    K = len(ids)
    if K == 0:
        raise ValueError("empty seed set")
    mean_colors = attrs.mean_color
    L_star = np.zeros(trajs.num_trajectories, dtype=np.int64)
    L_star[ids] = np.arange(1, K + 1)
    cnt = K
    history = [cnt]
    it = 0
    L = L_star
    while True:
        L = tnic(trajs, attrs, graph, L_star, params, n_labels=K, mean_colors=mean_colors)
        L_star = grow_fully_connected(L_star, L, graph, trajs, K)
        new_cnt = int(np.count_nonzero(L_star))
        history.append(new_cnt)
        it += 1
        log.debug("iteration %d: %d fully connected trajectories", it, new_cnt)
        if new_cnt <= cnt or it >= max_iter:
            break
        cnt = new_cnt

    if min_region is None:
        min_region = default_min_region(params.s)
    final, fallback = post_process(trajs, L, graph, min_region, n_labels=K)
    result = ClusteringResult(final, L, L_star, history, it, K, fallback)
    if measure:
        result.disconnection_before = total_disconnection(L, graph, trajs)
        result.disconnection_after = total_disconnection(final, graph, trajs)
    return result


# -- post-processing ------------------------------------------------------------------


def filter_small_regions(raster, min_region):
    """Merge small isolated fragments of a label into a neighboring region.

    A 4-connected region is merged when it is smaller than ``min_region``, is
    not the largest region of its own label in this raster, and its label
    covers at least ``min_region`` pixels in total (labels that are only
    appearing or vanishing are left alone); label-0 regions are always merged.  Regions are visited in raster-scan order of
    their first pixel and each joins its currently largest nonzero neighbor
    region (ties: smaller label, then earlier region).
    """
    raster = np.asarray(raster)
    H, W = raster.shape
    comp = connected_components(raster, background=-1, connectivity=1)
    flat = comp.ravel()
    n = int(flat.max())
    first = np.full(n + 1, H * W)
    np.minimum.at(first, flat, np.arange(H * W))
    rank = np.empty(n + 1, dtype=np.int64)
    rank[0] = -1
    rank[1:][np.argsort(first[1:], kind="stable")] = np.arange(n)
    comp = rank[comp]
    flat = comp.ravel()
    size = np.bincount(flat, minlength=n).tolist()
    order_first = np.sort(first[1:])
    lab = raster.ravel()[order_first].tolist()

    adj = [set() for _ in range(n)]
    for a, b in ((comp[:, :-1], comp[:, 1:]), (comp[:-1, :], comp[1:, :])):
        diff = a != b
        pairs = np.unique(np.stack([a[diff], b[diff]], axis=1), axis=0) if diff.any() else []
        for u, v in pairs:
            adj[u].add(int(v))
            adj[v].add(int(u))

    main, total = {}, {}
    for c in range(n):
        total[lab[c]] = total.get(lab[c], 0) + size[c]
        if lab[c] not in main or size[c] > size[main[lab[c]]]:
            main[lab[c]] = c
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for c in range(n):
        if parent[c] != c or (lab[c] != 0 and (size[c] >= min_region or main[lab[c]] == c
                                                or total[lab[c]] < min_region)):
            continue
        cand = {find(x) for x in adj[c]}
        cand.discard(c)
        cand = [x for x in cand if lab[x] != 0]
        if not cand:
            continue
        t = min(cand, key=lambda x: (-size[x], lab[x], x))
        parent[c] = t
        size[t] += size[c]
        adj[t] |= adj[c]
    roots = np.array([lab[find(c)] for c in range(n)], dtype=raster.dtype)
    return roots[comp]


def post_process(trajs, L_hat, graph, min_region, n_labels=None):
    """Clean per-frame label rasters and resolve trajectories left with mixed labels.

    Returns ``(labels, fallback_count)``.  Each frame is rasterized, small
    isolated fragments are merged away and labels are sampled back.  A
    trajectory whose samples all agree with its incoming label keeps it.
    Every other trajectory, in id order, picks among the labels it carried
    (incoming label plus sampled labels) that do not raise the summed
    disconnection of the affected clusters; the label sampled in the most
    frames wins, then the larger disconnection drop, its own connectivity
    cost, its incoming label and the smallest label.
    Connected runs still holding a minority label then try to switch
    together, again only when that does not raise disconnection.
    Unlabeled trajectories also consider their neighbors' labels and, with
    no labeled neighbor at all, join the nearest labeled trajectory.
    """
    L_hat = np.asarray(L_hat, dtype=np.int64)
    T = trajs.num_trajectories
    K = int(L_hat.max(initial=0)) if n_labels is None else int(n_labels)
    carried = [Counter() for _ in range(T)]
    for f in range(1, trajs.F + 1):
        raster = filter_small_regions(g_rasterize(trajs, f, L_hat), min_region)
        ids, vals = h_sample(trajs, f, raster)
        for j, v in zip(ids.tolist(), vals.tolist()):
            carried[j][v] += 1
    previous = L_hat.tolist()
    pending = [j for j in range(T) if set(carried[j]) != {previous[j]} or previous[j] == 0]
    for j in pending:
        carried[j].pop(0, None)
        if previous[j] > 0:
            carried[j][previous[j]] += 0

    n_rows = max(K, int(L_hat.max(initial=0))) + 1
    conn = Connectivity(trajs, graph, L_hat, n_rows)
    members = [[] for _ in range(n_rows)]
    for i, k in enumerate(previous):
        members[k].append(i)
    members = [set(m) for m in members]

    def local(labs):
        return sum(conn.cost(i, k) for k in labs if k > 0 for i in members[k])

    touched = list(pending)
    progress = True
    while pending and progress:
        progress = False
        rest = []
        for j in pending:
            cands = set(carried[j])
            if previous[j] == 0:
                cands |= {int(conn.labels[n]) for n in conn.adj[j]} - {0}
            if not cands:
                rest.append(j)
                continue
            old = int(conn.labels[j])
            scored = []
            for k in sorted(cands):
                base = local({old, k})
                conn.assign(j, k)
                members[old].discard(j)
                members[k].add(j)
                delta = local({old, k}) - base
                if delta <= 0 or old == 0:
                    scored.append((-carried[j][k], delta, conn.cost(j, k), k != previous[j], k))
                conn.assign(j, old)
                members[k].discard(j)
                members[old].add(j)
            best = min(scored)[-1]
            conn.assign(j, best)
            members[old].discard(j)
            members[best].add(j)
            progress = True
        pending = rest

    # Connected runs that all prefer another label can be stuck when each
    # single step would strand a neighbor; try moving them together.
    want = {}
    for j in touched:
        if carried[j] and conn.labels[j] > 0:
            (k, c), = carried[j].most_common(1)
            if k != conn.labels[j] and c > carried[j][int(conn.labels[j])]:
                want[j] = k
    seen = set()
    for j0 in sorted(want):
        if j0 in seen:
            continue
        old, k = int(conn.labels[j0]), want[j0]
        group, queue = [], deque([j0])
        seen.add(j0)
        while queue:
            j = queue.popleft()
            group.append(j)
            for n in conn.adj[j]:
                n = int(n)
                if n not in seen and want.get(n) == k and conn.labels[n] == old:
                    seen.add(n)
                    queue.append(n)
        base = local({old, k})
        for j in group:
            conn.assign(j, k)
            members[old].discard(j)
            members[k].add(j)
        if local({old, k}) > base:
            for j in group:
                conn.assign(j, old)
                members[k].discard(j)
                members[old].add(j)

    labels = conn.labels
    for j in pending:
        labels[j] = _nearest_labeled(trajs, labels, j)
    if pending:
        log.info("post-process: %d trajectories labeled by nearest-trajectory fallback", len(pending))
    return labels, len(pending)


def _nearest_labeled(trajs, labels, j):
    pts = trajs.trajectory(j)
    for k, f in enumerate(range(trajs.start[j], trajs.end[j] + 1)):
        ids, xy = trajs.frame_view(f)
        ok = labels[ids] > 0
        if ok.any():
            d = np.sum((xy[ok] - pts[k]) ** 2, axis=1)
            return int(labels[ids[ok][int(np.argmin(d))]])
    nz = labels[labels > 0]
    return int(nz.min()) if len(nz) else 1


def label_volume(trajs, labels):
    """Per-frame pixel labels ``(F, H, W)`` via rasterization."""
    return np.stack([g_rasterize(trajs, f, labels) for f in range(1, trajs.F + 1)])


def run_clustering(trajs, attrs, s, m=10.0, beta=4.0, th=None, min_region=None, max_iter=DEFAULT_MAX_ITER,
                   graph=None, measure=True):
    """Seeds, neighbor graph and the full clustering loop in one call."""
    from .primitives import build_neighbor_graph

    params = EnergyParams(s=s, m=m, beta=beta)
    if graph is None:
        graph = build_neighbor_graph(trajs)
    seeds = init_seeds(trajs, s, th)
    result = super_trajectory_clustering(trajs, attrs, graph, seeds, params, max_iter=max_iter,
                                         min_region=min_region, measure=measure)
    result.seeds = seeds
    result.graph = graph
    return result
