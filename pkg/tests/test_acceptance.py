"""Acceptance gate: one test per criterion, each reporting a PASS/FAIL line in the summary."""

import time

import numpy as np
import pytest
from conftest import built, clustered, record
from oracles import (br_bruteforce, per_frame, same_partition, sa_bruteforce, snic_single_frame,
                     ue_bruteforce)

from supertraj import cli, metrics
from supertraj.clustering import label_volume, run_clustering
from supertraj.io import sobel_edge_fallback
from supertraj.primitives import Connectivity, build_neighbor_graph, connectivity_cost, cost_bruteforce_oracle
from supertraj.synthetic import PRESETS, add_flow_noise, generate_synthetic
from supertraj.trajectories import TrajectorySet, build_trajectories

EXACT_TOL = 1e-6
RUNTIME_LIMIT = 5.0
NOISE = 0.5
UE_MAX = 0.10
SA_MIN = 0.90


def test_c1_exact_flow_fidelity():
    W, H, F, motion = 64, 64, 10, (2.0, 1.0)
    seq = generate_synthetic("global-translate", W, H, F, motion)
    t0 = time.perf_counter()
    res = build_trajectories(seq.frames, seq.fwd_flows, seq.bwd_flows, seq.edges)
    elapsed = time.perf_counter() - t0
    trajs = res.trajectories

    dx, dy = 2, 1
    expected_T = W * H + (F - 1) * (W * H - (W - dx) * (H - dy))
    worst = 0.0
    for i in range(trajs.num_trajectories):
        pts = trajs.trajectory(i).astype(np.float64)
        steps = np.arange(len(pts))[:, None]
        worst = max(worst, float(np.abs(pts - (pts[0] + steps * np.array(motion))).max()))
    # frame-1 trajectories are exactly the analytic tracks while in view
    n0 = W * H
    for f in range(1, F + 1):
        ids, xy = trajs.frame_view(f)
        first = ids < n0
        ref = seq.gt_tracks[f - 1, ids[first]]
        worst = max(worst, float(np.abs(xy[first] - ref).max()))
        assert np.isnan(seq.gt_tracks[f - 1]).any(axis=1).sum() == n0 - first.sum()
    ok = trajs.num_trajectories == expected_T and worst <= EXACT_TOL and elapsed < RUNTIME_LIMIT
    record(1, "exact-flow fidelity", ok,
           f"T={trajs.num_trajectories} (analytic {expected_T}), max error {worst:.1e} px, {elapsed:.2f} s")
    assert ok


def test_c2_threshold_monotonicity():
    counts = []
    for seed in range(10):
        seq = add_flow_noise(generate_synthetic("global-translate", 64, 64, 10, (2.0, 1.0), seed=seed), NOISE, seed)
        t = [build_trajectories(seq.frames, seq.fwd_flows, seq.bwd_flows, seq.edges, gamma=g)
             .trajectories.num_trajectories for g in (0.9, 1.5)]
        counts.append(t)
    wins = sum(a >= b for a, b in counts)
    record(2, "threshold monotonicity", wins == 10,
           f"{wins}/10 seeds with T(0.9) >= T(1.5); e.g. {counts[0][0]} vs {counts[0][1]}")
    assert wins == 10


def _random_image(rng, kind, size=48):
    if kind == 0:
        return rng.integers(0, 256, (size, size, 3)).astype(np.float64)
    if kind == 1:
        yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
        img = np.empty((size, size, 3))
        for ch in range(3):
            f = rng.uniform(0.05, 0.3, 2)
            img[..., ch] = 128 + 100 * np.sin(f[0] * xx + f[1] * yy + rng.uniform(0, 6))
        return np.rint(img)
    img = np.empty((size, size, 3))
    img[:] = rng.integers(0, 256, 3)
    for _ in range(4):
        r0, c0 = rng.integers(0, size - 8, 2)
        h, w = rng.integers(6, size // 2, 2)
        img[r0:r0 + h, c0:c0 + w] = rng.integers(0, 256, 3)
    return img


def test_c3_single_frame_reduction():
    rng = np.random.default_rng(2024)
    total = agree = 0
    for k in range(21):
        img = _random_image(rng, k % 3)
        edges = sobel_edge_fallback(img)
        res = build_trajectories([img], [], [], [edges])
        for s in (8, 12, 16):
            cl = run_clustering(res.trajectories, res.attributes, s)
            got = label_volume(res.trajectories, cl.labels)[0]
            total += 1
            agree += same_partition(got, snic_single_frame(img, edges, s))
    record(3, "single-frame reduction", agree == total, f"{agree}/{total} rasters equal to the SNIC oracle")
    assert agree == total


def _random_instance(rng):
    F = int(rng.integers(1, 21))
    H = W = int(rng.integers(3, 14))
    T = int(rng.integers(2, 200))
    start = rng.integers(1, F + 1, T)
    length = np.array([rng.integers(1, F - s + 2) for s in start])
    coords = []
    for n in length:
        p = rng.uniform(0, [W - 1, H - 1])
        for _ in range(n):
            coords.append(p.copy())
            p = np.clip(p + rng.normal(0, 1.0, 2), 0, [W - 1, H - 1])
    trajs = TrajectorySet(F=F, H=H, W=W, start=start, length=length, coords=np.array(coords))
    labels = rng.integers(0, 6, T)
    return trajs, labels


def test_c4_cost_oracle_equivalence():
    rng = np.random.default_rng(7)
    checked = mismatches = 0
    for _ in range(100):
        trajs, labels = _random_instance(rng)
        graph = build_neighbor_graph(trajs)
        conn = Connectivity(trajs, graph, labels)
        for _ in range(5):
            i = int(rng.integers(trajs.num_trajectories))
            lab = int(rng.integers(1, 6))
            want = cost_bruteforce_oracle(i, lab, labels, trajs)
            got = connectivity_cost(i, lab, labels, graph, trajs)
            checked += 1
            mismatches += (got != want) or (conn.cost(i, lab) != want)
    record(4, "cost oracle equivalence", mismatches == 0, f"{checked - mismatches}/{checked} queries exact")
    assert mismatches == 0


RUNS = [(p, seed) for p in PRESETS for seed in range(5)]


def _run(preset, seed):
    motion = (2.0, 1.0) if preset == "global-translate" else (2.0, 0.0)
    return clustered(preset, s=12, motion=motion, seed=seed)


def test_c5_monotone_convergence():
    bad = []
    for preset, seed in RUNS:
        _, _, cl = _run(preset, seed)
        hist = cl.cnt_history
        ok = all(b >= a for a, b in zip(hist, hist[1:])) and cl.iterations <= 10 and not (cl.labels == 0).any()
        if not ok:
            bad.append((preset, seed, hist))
    record(5, "monotone convergence", not bad, f"{len(RUNS) - len(bad)}/{len(RUNS)} runs")
    assert not bad


def test_c6_disconnection_reduction():
    pairs = []
    for preset, seed in RUNS:
        _, _, cl = _run(preset, seed)
        pairs.append((cl.disconnection_before, cl.disconnection_after))
    seq, res = built("occluder", 48, 48, 8, (2.0, 0.0), seed=11)
    seq = add_flow_noise(seq, NOISE, 3)
    noisy = build_trajectories(seq.frames, seq.fwd_flows, seq.bwd_flows, seq.edges)
    cl = run_clustering(noisy.trajectories, noisy.attributes, 16)
    pairs.append((cl.disconnection_before, cl.disconnection_after))
    ok = all(after <= before for before, after in pairs)
    drop = sum(b - a for b, a in pairs)
    record(6, "disconnection reduction", ok, f"{sum(a <= b for b, a in pairs)}/{len(pairs)} inputs, total drop {drop}")
    assert ok


def test_c7_metric_correctness():
    rng = np.random.default_rng(99)
    bad = 0
    for _ in range(100):
        shape = tuple(int(v) for v in rng.integers(1, [4, 9, 9]))
        pred = rng.integers(0, int(rng.integers(1, 6)), shape)
        gt = rng.integers(0, int(rng.integers(1, 5)), shape)
        want = (per_frame(ue_bruteforce, pred, gt), per_frame(sa_bruteforce, pred, gt),
                per_frame(br_bruteforce, pred, gt, 1), ue_bruteforce(pred, gt), sa_bruteforce(pred, gt),
                br_bruteforce(pred, gt, 1))
        rep = metrics.evaluate(pred, gt)
        got = (rep.ue2d, rep.sa2d, rep.br2d, rep.ue3d, rep.sa3d, rep.br3d)
        bad += got != want
        same = metrics.evaluate(gt, gt)
        bad += (same.ue2d, same.sa2d, same.br2d, same.ue3d, same.sa3d, same.br3d) != (0.0, 1.0, 1.0, 0.0, 1.0, 1.0)
    record(7, "metric correctness", bad == 0, f"{200 - bad}/200 comparisons exact")
    assert bad == 0


def test_c8_end_to_end_quality():
    seq = generate_synthetic("two-region", 64, 64, 10, (2.0, 0.0), (0.0, 0.0))
    res = build_trajectories(seq.frames, seq.fwd_flows, seq.bwd_flows, seq.edges)
    cl = run_clustering(res.trajectories, res.attributes, 16)
    rep = metrics.evaluate(label_volume(res.trajectories, cl.labels), np.stack(seq.gt_labels))

    static = generate_synthetic("global-translate", 64, 64, 10, (0.0, 0.0))
    sres = build_trajectories(static.frames, static.fwd_flows, static.bwd_flows, static.edges)
    scl = run_clustering(sres.trajectories, sres.attributes, 16)
    duration = metrics.mean_duration(label_volume(sres.trajectories, scl.labels))
    ok = rep.ue3d <= UE_MAX and rep.sa3d >= SA_MIN and duration == 10
    record(8, "end-to-end quality", ok,
           f"two-region UE3D={rep.ue3d:.4f} SA3D={rep.sa3d:.4f}; static mean duration {duration}")
    assert ok


def _cli_outputs(workdir, data):
    strj = workdir / "t.strj"
    assert cli.main(["build", str(data), "-o", str(strj)]) == 0
    assert cli.main(["cluster", str(strj), "-o", str(workdir / "out"), "--data", str(data), "-s", "12"]) == 0
    files = [strj, workdir / "out" / "labels.stlb"] + sorted((workdir / "out" / "labels").iterdir())
    return {f.relative_to(workdir).as_posix(): f.read_bytes() for f in files}


def test_c9_determinism(tmp_path, capsys):
    data = tmp_path / "data"
    assert cli.main(["synth", "occluder", "40", "40", "6", "--motion", "2", "1", "-o", str(data)]) == 0
    runs = []
    for k in range(3):
        work = tmp_path / f"run{k}"
        work.mkdir()
        runs.append(_cli_outputs(work, data))
    ok = runs[0] == runs[1] == runs[2] and len(runs[0]) > 2
    record(9, "determinism", ok, f"{len(runs[0])} files byte-identical across 3 runs")
    assert ok


@pytest.mark.parametrize("preset", PRESETS)
def test_presets_cluster_without_zero_labels(preset):
    _, _, cl = _run(preset, 0)
    assert cl.labels.min() >= 1 and cl.labels.max() <= cl.n_labels
