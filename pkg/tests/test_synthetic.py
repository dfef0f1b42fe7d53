import numpy as np
import pytest

from supertraj.synthetic import PRESETS, add_flow_noise, generate_synthetic, translate_trajectory_count
from supertraj.trajectories import bilinear


def test_global_translate_flows():
    seq = generate_synthetic("global-translate", 32, 24, 6, (2.0, 1.0))
    assert len(seq.fwd_flows) == len(seq.bwd_flows) == 5
    for fw, bw in zip(seq.fwd_flows, seq.bwd_flows):
        assert np.all(fw == (2.0, 1.0)) and np.all(bw == (-2.0, -1.0))
    assert seq.shape == (6, 24, 32)


@pytest.mark.parametrize("preset", PRESETS)
def test_flows_round_trip_exactly(preset):
    seq = generate_synthetic(preset, 40, 40, 5, (2.0, 1.0), (0.0, 0.0), seed=3)
    yy, xx = np.mgrid[0:40, 0:40].astype(float)
    for f in range(4):
        fw = seq.fwd_flows[f]
        x1, y1 = xx + fw[..., 0], yy + fw[..., 1]
        inside = (x1 >= 0) & (x1 <= 39) & (y1 >= 0) & (y1 <= 39)
        back = bilinear(seq.bwd_flows[f], x1, y1)
        # exact where the target pixel moved with the same motion
        same = np.all(back == -fw, axis=-1) & inside
        assert same.mean() > 0.8
        res = np.hypot(x1 + back[..., 0] - xx, y1 + back[..., 1] - yy)
        assert np.all(res[same] == 0)


def test_two_region_labels_and_deterministic_texture():
    a = generate_synthetic("two-region", 32, 32, 4, (2.0, 0.0), seed=5)
    b = generate_synthetic("two-region", 32, 32, 4, (2.0, 0.0), seed=5)
    c = generate_synthetic("two-region", 32, 32, 4, (2.0, 0.0), seed=6)
    for gt in a.gt_labels:
        assert sorted(np.unique(gt)) == [1, 2]
    assert all(np.array_equal(x, y) for x, y in zip(a.frames, b.frames))
    assert not np.array_equal(a.frames[0], c.frames[0])
    assert all(f.min() >= 0 and f.max() <= 255 for f in a.frames)


def test_occluder_rectangle_moves():
    seq = generate_synthetic("occluder", 48, 48, 5, (2.0, 0.0))
    areas = [int((g == 2).sum()) for g in seq.gt_labels]
    assert len(set(areas)) == 1 and areas[0] > 0
    cols = [np.flatnonzero((g == 2).any(axis=0)).min() for g in seq.gt_labels]
    assert np.all(np.diff(cols) == 2)


def test_errors():
    with pytest.raises(ValueError):
        generate_synthetic("spiral", 8, 8, 2)
    with pytest.raises(ValueError):
        generate_synthetic("global-translate", 16, 16, 8, (2.0, 1.0))
    with pytest.raises(ValueError):
        generate_synthetic("global-translate", 1, 16, 2)


def test_noise_and_counts():
    seq = generate_synthetic("global-translate", 16, 16, 3, (1.0, 0.0))
    noisy = add_flow_noise(seq, 0.5, seed=1)
    assert not np.array_equal(noisy.fwd_flows[0], seq.fwd_flows[0])
    assert np.array_equal(noisy.frames[0], seq.frames[0])
    assert translate_trajectory_count(64, 64, 10, (2, 1)) == 4096 + 9 * (4096 - 62 * 63)
