import json
import subprocess
import sys

import numpy as np

from lapmotion.cli import main
from lapmotion.core import load_correspondences, load_predictions


def synth(tmp_path, name="scene.csv", *extra):
    path = tmp_path / name
    assert main(["synth", "--n", "200", "--seed", "3", "--out", str(path), *extra]) == 0
    return path


def test_synth_and_prune(tmp_path, capsys):
    scene = synth(tmp_path)
    cs = load_correspondences(scene)
    assert len(cs) == 200 and np.count_nonzero(cs.labels == 0) == 100
    out = tmp_path / "pred.csv"
    assert main(["prune", str(scene), "--out", str(out), "--histogram", "5"]) == 0
    err = capsys.readouterr().err
    assert "f1=" in err
    assert len(err.strip().splitlines()) == 6
    assert load_predictions(out).shape == (200,)


def test_prune_to_stdout_jsonl_input(tmp_path, capsys):
    scene = synth(tmp_path, "scene.jsonl")
    assert main(["prune", str(scene), "--k-e", "64", "--eta", "5"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "index,residual,inlier"
    assert len(lines) == 201


def test_prune_jsonl_output(tmp_path):
    scene = synth(tmp_path)
    out = tmp_path / "pred.jsonl"
    assert main(["prune", str(scene), "--out", str(out)]) == 0
    row = json.loads(out.read_text().splitlines()[0])
    assert set(row) >= {"index", "residual", "inlier", "smoothed"}


def test_eval(tmp_path, capsys):
    scene = synth(tmp_path)
    pred = tmp_path / "pred.csv"
    main(["prune", str(scene), "--out", str(pred)])
    capsys.readouterr()
    assert main(["eval", "--pred", str(pred), "--truth", str(scene)]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["n"] == 200
    assert 0 <= report["f1"] <= 1


def test_sweep(tmp_path, capsys):
    out, dat = tmp_path / "sweep.csv", tmp_path / "sweep.dat"
    assert main(["sweep", "--vary", "epsilon", "--values", "0.01,0.05", "--seeds", "0-1",
                 "--n", "150", "--out", str(out), "--gnuplot", str(dat)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "value,precision,recall,f1" and len(lines) == 3
    assert dat.exists()


def test_graph_export(tmp_path):
    scene = synth(tmp_path)
    out = tmp_path / "g.json"
    assert main(["graph", str(scene), "--out", str(out), "--k", "4"]) == 0
    obj = json.loads(out.read_text())
    assert obj["n"] == 200 and obj["k"] == 4


def test_gradcheck(capsys):
    assert main(["gradcheck", "--instances", "3"]) == 0
    assert "lc_backward" in capsys.readouterr().out


def test_errors_exit_nonzero(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("x,y,u,v\n0,0,2,0\n")
    assert main(["prune", str(bad)]) == 2
    assert "error" in capsys.readouterr().err
    assert main(["prune", str(tmp_path / "missing.csv")]) == 2


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "lapmotion", "synth", "--n", "20",
                           "--out", str(tmp_path / "s.csv")], capture_output=True)
    assert proc.returncode == 0
