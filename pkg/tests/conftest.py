import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from supertraj.clustering import run_clustering  # noqa: E402
from supertraj.synthetic import generate_synthetic  # noqa: E402
from supertraj.trajectories import build_trajectories  # noqa: E402

ACCEPTANCE_LINES = []


def record(number, title, passed, detail=""):
    ACCEPTANCE_LINES.append((number, title, passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(ACCEPTANCE_LINES):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] {number}. {title}: {detail}")


_CACHE = {}


def built(preset, width=48, height=48, frames=8, motion=(2.0, 0.0), seed=0, **kw):
    key = (preset, width, height, frames, tuple(motion), seed, tuple(sorted(kw.items())))
    if key not in _CACHE:
        seq = generate_synthetic(preset, width, height, frames, motion, seed=seed)
        _CACHE[key] = (seq, build_trajectories(seq.frames, seq.fwd_flows, seq.bwd_flows, seq.edges, **kw))
    return _CACHE[key]


def clustered(preset, s=12, **kw):
    key = ("cl", preset, s, tuple(sorted(kw.items())))
    if key not in _CACHE:
        seq, res = built(preset, **kw)
        _CACHE[key] = (seq, res, run_clustering(res.trajectories, res.attributes, s))
    return _CACHE[key]


@pytest.fixture
def small_two_region():
    return built("two-region", 32, 32, 5, (2.0, 0.0))
