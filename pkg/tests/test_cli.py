import subprocess
import sys

import numpy as np
import pytest

from rangethermal import cli
from rangethermal.io_formats import parse_key_values, read_depth, read_report, read_temperature, read_tracks


@pytest.fixture(scope="module")
def sim(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert cli.main(["simulate", "--out", str(out), "--seed", "3", "--calib-views", "8", "--sequence", "20"]) == 0
    return out


def _fuse(sim, tmp_path, method):
    out = tmp_path / f"{method}.csv"
    argv = ["fuse", "--method", method, "--calib", str(sim / "calib.txt"), "--depth", str(sim / "depth.pgm"),
            "--thermal", str(sim / "thermal.csv"), "--out", str(out)]
    assert cli.main(argv) == 0
    return out


def _mae(tmp_path, fused, truth, name):
    report = tmp_path / f"{name}.txt"
    assert cli.main(["evaluate", "--fused", str(fused), "--truth", str(truth), "--report", str(report)]) == 0
    return float(read_report(report)["mean_abs_error"])


@pytest.mark.parametrize("command", [[], ["simulate"], ["calibrate"], ["fuse"], ["evaluate"], ["track"]])
def test_help_everywhere(command, capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(command + ["--help"])
    assert exc.value.code == 0
    assert "usage:" in capsys.readouterr().out


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "rangethermal", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "simulate" in r.stdout


def test_simulate_outputs(sim):
    for name in ("scene.txt", "truth_thermal.csv", "truth_depth.pgm", "depth.pgm", "thermal.csv", "calib.txt"):
        assert (sim / name).exists()
    assert read_depth(sim / "depth.pgm").shape == (120, 160)
    assert read_temperature(sim / "thermal.csv").shape == (16, 16)
    assert len(list((sim / "pairs").glob("*_depth.pgm"))) == 8
    assert len(list((sim / "frames").glob("*_thermal.csv"))) == 25


def test_simulate_deterministic(tmp_path):
    for d in ("a", "b"):
        assert cli.main(["simulate", "--out", str(tmp_path / d), "--seed", "5"]) == 0
    for name in ("depth.pgm", "thermal.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_fuse_dimensions(sim, tmp_path):
    fused = read_temperature(_fuse(sim, tmp_path, "nearest"))
    assert fused.shape == read_depth(sim / "depth.pgm").shape


def test_pipeline_reproduces_error_ordering(sim, tmp_path):
    truth = sim / "truth_thermal.csv"
    mae = {m: _mae(tmp_path, _fuse(sim, tmp_path, m), truth, m) for m in ("nearest", "bilinear", "depth", "segment")}
    assert mae["segment"] < mae["depth"] < mae["bilinear"]
    assert mae["depth"] < mae["nearest"]


def test_evaluate_identical_is_zero(sim, tmp_path):
    truth = sim / "truth_thermal.csv"
    report = tmp_path / "r.txt"
    assert cli.main(["evaluate", "--fused", str(truth), "--truth", str(truth), "--report", str(report), "--bins", "10"]) == 0
    kv = read_report(report)
    assert float(kv["mean_abs_error"]) == 0.0 and int(kv["valid_pixels"]) == 19200
    lines = (tmp_path / "r.curve.csv").read_text().splitlines()
    assert lines[0] == "rank,cumulative_error" and len(lines) == 11


def test_calibrate_recovers_rig(sim, tmp_path):
    out = tmp_path / "calib.txt"
    assert cli.main(["calibrate", "--pairs", str(sim / "pairs"), "--translation", "0.04,0,0", "--out", str(out)]) == 0
    kv = parse_key_values(out.read_text())
    got = [float(kv[f"angles.a{i}"]) for i in (1, 2, 3)]
    np.testing.assert_allclose(got, [0.05, -0.03, 0.02], atol=0.01)


def test_track_finds_one_person(sim, tmp_path):
    out = tmp_path / "tracks.csv"
    assert cli.main(["track", "--calib", str(sim / "frames" / "calib.txt"), "--frames", str(sim / "frames"), "--out", str(out)]) == 0
    rows = read_tracks(out)
    people = {r[1] for r in rows if r[5]}
    others = {r[1] for r in rows if r[5] is False}
    assert len(people) == 1 and len(others) == 1
    assert sum(1 for r in rows if r[1] in people) == 20


@pytest.mark.parametrize(
    "argv",
    [
        ["fuse", "--calib", "missing.txt", "--depth", "d.pgm", "--thermal", "t.csv", "--out", "o.csv"],
        ["evaluate", "--fused", "nope.csv", "--truth", "nope.csv", "--report", "r.txt"],
        ["calibrate", "--pairs", ".", "--translation", "1,2", "--out", "c.txt"],
    ],
)
def test_errors_exit_nonzero_with_one_line(argv, capsys, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    try:
        code = cli.main(argv)
    except SystemExit as e:  # argparse usage errors
        code = e.code
    assert code != 0
    err = capsys.readouterr().err.strip().splitlines()
    assert err and err[-1].startswith("rangethermal") and ": error: " in err[-1]


def test_dimension_mismatch(sim, tmp_path, capsys):
    argv = ["fuse", "--calib", str(sim / "calib.txt"), "--depth", str(sim / "depth.pgm"),
            "--thermal", str(sim / "truth_thermal.csv"), "--out", str(tmp_path / "o.csv")]
    assert cli.main(argv) == 1
    assert "thermal image is 160x120" in capsys.readouterr().err


def test_no_subcommand(capsys):
    assert cli.main([]) == 2


def test_print_defaults_and_config_override(tmp_path, capsys, monkeypatch):
    assert cli.main(["--print-defaults"]) == 0
    kv = parse_key_values(capsys.readouterr().out)
    assert kv["fusion.method"] == "segment" and float(kv["detection.t_min"]) == 26.0
    cfg = tmp_path / "cfg.txt"
    cfg.write_text("fusion.method = nearest\n")
    monkeypatch.setenv(cli.CONFIG_ENV, str(cfg))
    assert cli.main(["--print-defaults"]) == 0
    assert parse_key_values(capsys.readouterr().out)["fusion.method"] == "nearest"
    bad = tmp_path / "bad.txt"
    bad.write_text("fusion.flavour = 1\n")
    assert cli.main(["--config", str(bad), "--print-defaults"]) == 1


def test_flag_overrides_config(sim, tmp_path):
    cfg = tmp_path / "cfg.txt"
    cfg.write_text("fusion.method = nearest\n")
    out_cfg, out_flag = tmp_path / "a.csv", tmp_path / "b.csv"
    base = ["--calib", str(sim / "calib.txt"), "--depth", str(sim / "depth.pgm"), "--thermal", str(sim / "thermal.csv")]
    assert cli.main(["--config", str(cfg), "fuse", *base, "--out", str(out_cfg)]) == 0
    assert cli.main(["--config", str(cfg), "fuse", *base, "--method", "segment", "--out", str(out_flag)]) == 0
    nearest = read_temperature(out_cfg)
    assert np.isin(nearest[np.isfinite(nearest)], read_temperature(sim / "thermal.csv")).all()
    assert not np.array_equal(nearest, read_temperature(out_flag), equal_nan=True)
