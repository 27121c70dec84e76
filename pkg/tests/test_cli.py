import csv
import io
import json
import subprocess
import sys

import pytest

from rangepose.cli import main
from rangepose.core import PoseClass
from rangepose.imageio import read_grid
from rangepose.report import parse_report


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def faces(tmp_path_factory):
    root = tmp_path_factory.mktemp("faces")
    for label, name in [("frontal", "f"), ("y:+38", "y"), ("x:+18", "x")]:
        assert main(["synth", "--label", label, "--out", str(root / f"{name}.rgz")]) == 0
    return root


def test_synth_single(capsys, tmp_path):
    code, out, _ = run(capsys, "synth", "--label", "z:-18", "--noise", "0.2", "--out", tmp_path / "a.rgz")
    assert code == 0
    truth = json.loads(out)
    assert truth["label"] == "Z"
    assert read_grid(tmp_path / "a.rgz").shape == (101, 101)


def test_synth_corpus(capsys, tmp_path):
    code, out, _ = run(capsys, "synth", "--subjects", 2, "--schedule", "x:+5", "yx:+42/-10", "--out", tmp_path)
    assert code == 0 and "2 subjects" in out
    lines = (tmp_path / "manifest.txt").read_text().splitlines()
    assert len([ln for ln in lines if ln.strip() and not ln.startswith("#")]) == 2 * 4


def test_preprocess(capsys, faces, tmp_path):
    out = tmp_path / "p.rgz"
    code, _, _ = run(capsys, "preprocess", faces / "f.rgz", "--stages", "crop", "--out", out)
    assert code == 0
    img = read_grid(out)
    assert img.n_valid <= read_grid(faces / "f.rgz").n_valid


def test_curvature_formats(capsys, faces, tmp_path):
    code, out, _ = run(capsys, "curvature", faces / "f.rgz", "--hk", tmp_path / "hk")
    assert code == 0
    rows = out.splitlines()
    assert len(rows) == 101 and set("".join(rows)) <= set(".012345678")
    assert read_grid(tmp_path / "hk.K.rgz").shape == (101, 101)
    _, out, _ = run(capsys, "curvature", faces / "f.rgz", "--format", "json")
    d = json.loads(out)
    assert d["shape"] == [101, 101] and sum(d["counts"].values()) == sum(c != "." for c in "".join(rows))
    _, out, _ = run(capsys, "curvature", faces / "f.rgz", "--format", "csv")
    table = list(csv.DictReader(io.StringIO(out)))
    assert len(table) == sum(d["counts"].values())


def test_landmarks(capsys, faces):
    code, out, _ = run(capsys, "landmarks", faces / "f.rgz")
    assert code == 0
    lines = out.splitlines()
    assert lines[0].startswith("nose 50 50 ") and [ln.split()[0] for ln in lines[1:]] == ["corner", "corner"]
    _, out, _ = run(capsys, "landmarks", faces / "f.rgz", "--json")
    assert json.loads(out)["nose"]["u"] == 50


@pytest.mark.parametrize("probe, want", [("f", PoseClass.FRONTAL), ("y", PoseClass.ROTATED_Y), ("x", PoseClass.ROTATED_X)])
def test_pose(capsys, faces, probe, want):
    code, out, _ = run(capsys, "pose", "--frontal", faces / "f.rgz", "--probe", faces / f"{probe}.rgz")
    assert code == 0 and out.strip() == want.value


def test_pose_threshold_override(capsys, faces):
    _, out, _ = run(capsys, "pose", "--frontal", faces / "f.rgz", "--probe", faces / "x.rgz", "--set", "pose.e=50")
    assert out.strip() == "FRONTAL"


def test_eval_and_formats(capsys, tmp_path):
    main(["synth", "--subjects", "1", "--schedule", "y:+10", "x:-18", "--out", str(tmp_path)])
    capsys.readouterr()
    manifest = tmp_path / "manifest.txt"
    code, out, _ = run(capsys, "eval", "--manifest", manifest)
    assert code == 0 and parse_report(out, "text").images == 2
    code, _, _ = run(capsys, "eval", "--manifest", manifest, "--out", tmp_path / "r.json")
    rep = parse_report((tmp_path / "r.json").read_bytes(), "json")
    assert rep.accuracy == 1.0
    _, out, _ = run(capsys, "eval", "--manifest", manifest, "--format", "csv")
    assert out.splitlines()[0] == "axis,angle,images,correct"


def test_eval_reports_broken_files(capsys, tmp_path):
    main(["synth", "--subjects", "1", "--schedule", "y:+10", "--out", str(tmp_path)])
    (tmp_path / "s000" / "y_p10.rgz").write_bytes(b"RGZ1 garbage")
    capsys.readouterr()
    code, out, err = run(capsys, "eval", "--manifest", tmp_path / "manifest.txt")
    assert code == 1 and "s000/y_p10.rgz" in err
    assert "ERROR" in out


@pytest.mark.parametrize("argv", [
    ["landmarks", "nope.rgz"],
    ["pose", "--frontal", "nope.rgz", "--probe", "nope.rgz"],
    ["eval", "--manifest", "nope.txt"],
    ["synth", "--label", "w:+3", "--out", "x.rgz"],
    ["landmarks", "nope.rgz", "--set", "pose.e"],
])
def test_failures_exit_nonzero(capsys, tmp_path, monkeypatch, argv):
    monkeypatch.chdir(tmp_path)
    code, _, err = run(capsys, *argv)
    assert code == 1 and err.startswith("rangepose ")


def test_bad_config_file(capsys, faces, tmp_path):
    (tmp_path / "c.json").write_text('{"pose": {"bogus": 1}}')
    code, _, err = run(capsys, "landmarks", faces / "f.rgz", "--config", tmp_path / "c.json")
    assert code == 1 and "bogus" in err


def test_module_entry_point(faces):
    res = subprocess.run([sys.executable, "-m", "rangepose", "landmarks", str(faces / "f.rgz")],
                         capture_output=True, text=True, check=False)
    assert res.returncode == 0 and res.stdout.startswith("nose ")
