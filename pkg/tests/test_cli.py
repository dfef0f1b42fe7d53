import json

import numpy as np
import pytest

from supertraj import io
from supertraj.cli import main


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli") / "data"
    assert main(["synth", "two-region", "32", "32", "6", "--motion", "2", "0", "-o", str(root)]) == 0
    return root


def test_synth_file_counts(tmp_path, capsys):
    out = tmp_path / "d"
    assert main(["synth", "global-translate", "24", "24", "10", "-o", str(out)]) == 0
    assert len(list((out / io.FRAME_DIR).glob("*.png"))) == 10
    assert len(list((out / io.FWD_DIR).glob("*.flo"))) == 9
    assert len(list((out / io.BWD_DIR).glob("*.flo"))) == 9
    assert len(list((out / io.GT_DIR).glob("*.png"))) == 10
    assert "10 frames" in capsys.readouterr().out


def test_build_static_scene(tmp_path, capsys):
    data = tmp_path / "static"
    main(["synth", "global-translate", "20", "16", "4", "--motion", "0", "0", "-o", str(data)])
    capsys.readouterr()
    rep = tmp_path / "rep"
    assert main(["build", str(data), "-o", str(tmp_path / "t.strj"), "--report-dir", str(rep)]) == 0
    out = capsys.readouterr().out
    assert "trajectories: 320" in out and "mean length: 4.0000" in out
    assert "config digest:" in out
    lines = (rep / "build_frames.csv").read_text().splitlines()
    assert lines[0] == "frame,occluded_fraction,spawned,terminated" and len(lines) == 5
    assert (rep / "build_diagnostics.png").stat().st_size > 0


def test_build_missing_flow_is_user_error(tmp_path, dataset, capsys):
    broken = tmp_path / "broken"
    import shutil

    shutil.copytree(dataset, broken)
    (broken / io.FWD_DIR / io.frame_name(3, "flo")).unlink()
    assert main(["build", str(broken), "-o", str(tmp_path / "x.strj")]) == 2
    assert "frame 3" in capsys.readouterr().err


def test_bad_config_is_user_error(tmp_path, dataset, capsys):
    cfg = tmp_path / "c.toml"
    cfg.write_text("gamma = -1\n")
    assert main(["--config", str(cfg), "build", str(dataset), "-o", str(tmp_path / "x.strj")]) == 2
    assert "gamma" in capsys.readouterr().err


def test_single_frame_cluster_count(tmp_path, capsys):
    data = tmp_path / "one"
    main(["synth", "global-translate", "64", "64", "1", "-o", str(data)])
    main(["build", str(data), "-o", str(tmp_path / "t.strj")])
    capsys.readouterr()
    assert main(["cluster", str(tmp_path / "t.strj"), "--data", str(data), "-s", "16", "-o",
                 str(tmp_path / "c")]) == 0
    assert "clusters: 16" in capsys.readouterr().out
    assert len(np.unique(io.read_labels(tmp_path / "c" / "labels.stlb"))) == 16


def test_metrics_pred_equals_gt(tmp_path, dataset, capsys):
    gt = dataset / io.GT_DIR
    assert main(["metrics", "--pred", str(gt), "--gt", str(gt), "--json", str(tmp_path / "m.json"),
                 "--csv", str(tmp_path / "m.csv")]) == 0
    rep = json.loads((tmp_path / "m.json").read_text())
    vals = [rep[k] for k in ("ue2d", "sa2d", "br2d", "ue3d", "sa3d", "br3d", "mean_duration", "supervoxels")]
    assert vals == [0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 6.0, 2]
    assert len((tmp_path / "m.csv").read_text().splitlines()) == 2


def test_metrics_sweep_csv_and_plot(tmp_path, dataset, capsys):
    csv_path, png = tmp_path / "sweep.csv", tmp_path / "sweep.png"
    assert main(["metrics", "--sweep", "8,12,16,24", "--data", str(dataset), "--csv", str(csv_path),
                 "--plot", str(png)]) == 0
    rows = csv_path.read_text().splitlines()
    assert len(rows) == 5 and rows[0].startswith("s,ue2d")
    assert [r.split(",")[0] for r in rows[1:]] == ["8", "12", "16", "24"]
    assert png.stat().st_size > 0


def test_metrics_errors(tmp_path, dataset):
    nogt = tmp_path / "nogt"
    import shutil

    shutil.copytree(dataset, nogt)
    shutil.rmtree(nogt / io.GT_DIR)
    assert main(["metrics", "--sweep", "8", "--data", str(nogt)]) == 2
    assert main(["metrics", "--pred", str(dataset / io.GT_DIR)]) == 2
    assert main(["metrics", "--sweep", "8,x", "--data", str(dataset)]) == 2


def test_render_deterministic(tmp_path, dataset):
    strj = tmp_path / "t.strj"
    main(["build", str(dataset), "-o", str(strj)])
    main(["cluster", str(strj), "--data", str(dataset), "-s", "8", "-o", str(tmp_path / "c")])
    outputs = []
    for run in range(2):
        out = tmp_path / f"ov{run}"
        assert main(["render", str(strj), "--labels", str(tmp_path / "c" / "labels.stlb"), "--data",
                     str(dataset), "-o", str(out)]) == 0
        outputs.append([p.read_bytes() for p in sorted(out.glob("*.png"))])
    assert len(outputs[0]) == 6 and outputs[0] == outputs[1]
    assert main(["render", str(strj), "--mode", "avgcolor", "-o", str(tmp_path / "avg")]) == 0
    assert len(list((tmp_path / "avg").glob("*.png"))) == 6
    assert main(["render", str(strj), "-o", str(tmp_path / "x")]) == 2
