import json
import os
import subprocess
import sys

import pytest

from hecta.cli import main


@pytest.fixture
def scn(tmp_path):
    assert main(["gen", "--preset", "sce5", "--variant", "1", "--seed", "3", "--time-limit", "5",
                 "--out", str(tmp_path / "gen")]) == 0
    (path,) = [p for p in (tmp_path / "gen").iterdir() if p.suffix == ".scn"]
    return str(path)


def read(path):
    with open(path, "rb") as fh:
        return fh.read()


def test_gen_writes_manifest(tmp_path, scn):
    man = json.loads(read(tmp_path / "gen" / "manifest.json"))
    assert man["command"] == "gen" and man["seeds"] == [3]
    assert os.path.basename(scn) in man["outputs"]
    assert man["kernel_backend"] in ("cython", "numpy")
    assert main(["gen", "--preset", "zhongfu", "--out", str(tmp_path / "z")]) == 0


def test_usage_and_input_errors(tmp_path, capsys):
    assert main([]) == 2
    assert main(["gen", "--preset", "nope"]) == 2
    assert main(["train", "--scenario", str(tmp_path / "missing.scn"), "--out", str(tmp_path / "t")]) == 3
    bad = tmp_path / "bad.scn"
    bad.write_text("{}")
    assert main(["eval", "--scenario", str(bad), "--policy", "greedy", "--out", str(tmp_path / "e")]) == 3
    assert main(["eval", "--scenario", "zhongfu", "--policy", "checkpoint", "--out", str(tmp_path / "e")]) == 3
    assert main(["plot", "--out", str(tmp_path / "p")]) == 3
    assert main(["rerun", str(tmp_path / "none.json")]) == 3
    assert "error" in capsys.readouterr().err


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numerical_abort_exit_code(tmp_path, scn):
    assert main(["train", "--scenario", scn, "--episodes", "6", "--batch-size", "2", "--hidden", "8",
                 "--mixer-hidden", "8", "--lr0", "inf", "--quiet", "--out", str(tmp_path / "t")]) == 4


def test_train_eval_trace_plot_rerun(tmp_path, scn):
    t = tmp_path / "train"
    argv = ["train", "--scenario", scn, "--episodes", "8", "--batch-size", "3", "--hidden", "8",
            "--mixer-hidden", "8", "--quiet", "--checkpoint-every", "4", "--out", str(t)]
    assert main(argv) == 0
    man = json.loads(read(t / "manifest.json"))
    assert set(man["outputs"]) == {"checkpoint.prm", "metrics.csv", "checkpoint_000004.prm", "checkpoint_000008.prm"}
    assert man["scenario_sha256"]
    assert main(["rerun", str(t / "manifest.json"), "--out", str(tmp_path / "again")]) == 0
    for name in ("metrics.csv", "checkpoint.prm"):
        assert read(t / name) == read(tmp_path / "again" / name)

    e = tmp_path / "eval"
    assert main(["eval", "--scenario", scn, "--policy", "checkpoint", "--checkpoint", str(t / "checkpoint.prm"),
                 "--seeds", "3", "--out", str(e)]) == 0
    assert main(["eval", "--scenario", scn, "--policy", "greedy", "--time-limits", "3,5", "--out", str(e / "g")]) == 0
    rows = read(e / "g" / "eval.csv").decode().splitlines()
    assert rows[0] == "policy,time_limit,mode,n,mean,std,ci95" and len(rows) == 3

    tr = tmp_path / "trace"
    assert main(["trace", "--scenario", scn, "--policy", "greedy", "--out", str(tr)]) == 0
    p = tmp_path / "plot"
    assert main(["plot", "--metrics", str(t / "metrics.csv"), "--trajectory", str(tr / "trajectory.csv"),
                 "--scenario", scn, "--eval", str(e / "g" / "eval.csv"), "--window", "3", "--out", str(p)]) == 0
    svgs = sorted(x.name for x in p.iterdir() if x.suffix == ".svg")
    assert svgs == ["tcr_bars.svg", "training_curve.svg", "trajectory.svg"]
    first = read(p / "trajectory.svg")
    assert main(["rerun", str(p / "manifest.json"), "--out", str(tmp_path / "plot2")]) == 0
    assert read(tmp_path / "plot2" / "trajectory.svg") == first


def test_robust(tmp_path, scn):
    assert main(["robust", "--scenario", scn, "--policy", "greedy", "--variants", "2",
                 "--kinds", "TaskType,ObstaclePosition", "--out", str(tmp_path / "r")]) == 0
    rows = read(tmp_path / "r" / "robust.csv").decode().splitlines()
    assert rows[0] == "policy,TaskType,ObstaclePosition"


def test_hecta_out_env(tmp_path, scn):
    env = dict(os.environ, HECTA_OUT=str(tmp_path / "root"))
    r = subprocess.run([sys.executable, "-m", "hecta.cli", "trace", "--scenario", scn, "--policy", "random"],
                       env=env, capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert (tmp_path / "root" / "trace" / "trajectory.csv").exists()
