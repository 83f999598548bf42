import json

import pytest

from plvo.cli import main
from plvo.config import PipelineConfig
from plvo.cli import run_sweep
from plvo.sim.simulator import SceneSpec, SensorSpec, TrajectorySpec


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("ds") / "arc"
    assert main(["simulate", "--seed", "1", "--frames", "20", "--out", str(out)]) == 0
    return out


def test_simulate_is_byte_identical(dataset, tmp_path, capsys):
    again = tmp_path / "again"
    assert main(["simulate", "--seed", "1", "--frames", "20", "--out", str(again)]) == 0
    a = sorted(p.relative_to(dataset) for p in dataset.rglob("*") if p.is_file())
    b = sorted(p.relative_to(again) for p in again.rglob("*") if p.is_file())
    assert a == b and len(a) > 3
    for rel in a:
        assert (dataset / rel).read_bytes() == (again / rel).read_bytes()


def test_run_then_evaluate(dataset, tmp_path, capsys):
    run_dir = tmp_path / "run"
    assert main(["run", "--dataset", str(dataset), "--mode", "A", "--out", str(run_dir)]) == 0
    summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert summary["frames"] == 20 and summary["fallback_frames"] == 0
    lines = (run_dir / "diagnostics.jsonl").read_text().splitlines()
    assert len(lines) == 20 and json.loads(lines[0])["status"] == "tracked"

    rc = main(["evaluate", str(run_dir / "trajectory.txt"), str(dataset / "groundtruth.txt"),
               "--interval", "0.2", "--diagnostics", str(run_dir / "diagnostics.jsonl"), "--out", str(run_dir)])
    assert rc == 0
    metrics = json.loads((run_dir / "metrics.json").read_text())
    assert metrics["rpe_trans_rmse"] < 1e-6 and metrics["final_error"] < 1e-5
    assert metrics["losses"] == 0


def test_evaluate_groundtruth_against_itself(dataset, capsys):
    gt = str(dataset / "groundtruth.txt")
    assert main(["evaluate", gt, gt, "--interval", "0.2"]) == 0
    metrics = json.loads(capsys.readouterr().out)
    assert metrics["rpe_trans_rmse"] < 1e-12 and metrics["final_error"] < 1e-12


def test_usage_and_data_errors(tmp_path, capsys):
    assert main([]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "usage"
    assert main(["run", "--mode", "C", "--dataset", "x", "--out", "y"]) == 2
    assert json.loads(capsys.readouterr().err)["error"] == "usage"
    assert main(["run", "--dataset", str(tmp_path / "missing"), "--out", str(tmp_path / "o")]) == 1
    assert "error" in json.loads(capsys.readouterr().err)


def test_small_sweep(tmp_path, capsys):
    rc = main(["sweep", "--seeds", "1", "--probs", "0.1", "--frames", "8", "--out", str(tmp_path)])
    assert rc == 0
    result = json.loads((tmp_path / "sweep.json").read_text())
    assert result["seeds"] == [0] and len(result["cells"]) == 1
    assert "B<=A" in capsys.readouterr().err
    direct = run_sweep(SceneSpec(), TrajectorySpec(frames=8), SensorSpec(), PipelineConfig(), [0.1], [0])
    assert direct["cells"][0]["drift_A"] == pytest.approx(result["cells"][0]["drift_A"])
