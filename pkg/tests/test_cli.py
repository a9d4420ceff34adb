import argparse
import json

import numpy as np
import pytest

from gridsynth.cli import build_parser, main, resolve_config
from gridsynth.grid import save_png
from gridsynth.program import read_program

from conftest import tiles_image


@pytest.fixture
def image(tmp_path):
    labels = np.zeros((6, 6), dtype=int)
    labels[1::2, 1::2] = 1
    path = tmp_path / "img.png"
    save_png(tiles_image(labels, cell_m=4, seed=2), path)
    return path


def _files(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.is_file()}


def test_synth_outputs(tmp_path, image, capsys):
    rc = main(["synth", str(image), "--grid-n", "6", "--cell-m", "4", "--eps", "0", "--out", str(tmp_path / "o"), "--render"])
    assert rc == 0
    out = tmp_path / "o"
    summary = json.loads((out / "img.json").read_text())
    assert summary["program"] == "img.prog" and "threads" not in summary["config"]
    assert read_program(out / "img.prog").grid_n == 6
    assert (out / "img_struct.png").exists()
    assert json.loads(capsys.readouterr().out)["command"] == "synth"


def test_synth_deterministic_across_threads(tmp_path, image):
    common = ["synth", str(image), "--grid-n", "6", "--cell-m", "4", "--render"]
    assert main(common + ["--out", str(tmp_path / "a"), "--threads", "1"]) == 0
    assert main(common + ["--out", str(tmp_path / "b"), "--threads", "4"]) == 0
    assert _files(tmp_path / "a") == _files(tmp_path / "b")


def test_gen_deterministic(tmp_path):
    args = ["gen", "--count", "3", "--k", "3", "--seed", "5"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b"), "--threads", "3"]) == 0
    assert _files(tmp_path / "a") == _files(tmp_path / "b")


def test_wrong_dimensions_exit_2(tmp_path, image, capsys):
    rc = main(["synth", str(image), "--grid-n", "5", "--cell-m", "4", "--out", str(tmp_path)])
    assert rc == 2
    assert "expected 20x20" in capsys.readouterr().err


def test_missing_grid_exit_2(tmp_path, image):
    assert main(["synth", str(image), "--out", str(tmp_path)]) == 2


def test_bad_program_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.prog"
    bad.write_text("gridsynth-program v1 N=3 M=1\nloop n=9 a=1 b=0 n2=1 a2=1 b2=0 comp=cell:1,1\n")
    assert main(["render", str(bad), "--out", str(tmp_path / "x.png")]) == 2
    assert "line 2" in capsys.readouterr().err


def test_oracle_budget_exit_3(tmp_path, image, capsys):
    rc = main(["oracle", str(image), "--grid-n", "6", "--cell-m", "4", "--k", "4", "--out", str(tmp_path)])
    assert rc == 3
    assert "candidate count" in capsys.readouterr().err


def test_oracle_small(tmp_path):
    path = tmp_path / "s.png"
    save_png(tiles_image([[0, 1, 0], [1, 0, 1], [0, 1, 0]], cell_m=3), path)
    rc = main(["oracle", str(path), "--grid-n", "3", "--cell-m", "3", "--k", "2", "--eps", "0", "--out", str(tmp_path)])
    assert rc == 0
    rep = json.loads((tmp_path / "s_oracle.json").read_text())
    assert rep["oracle_objective"] >= rep["greedy_objective"]
    assert "oracle_ms" not in rep


def test_render_and_extrapolate(tmp_path):
    prog = tmp_path / "p.prog"
    prog.write_text("gridsynth-program v1 N=6 M=1\nloop n=2 a=2 b=0 n2=1 a2=1 b2=0 comp=raw:ff0000\n")
    assert main(["extrapolate", str(prog), "--out", str(tmp_path / "e.prog")]) == 0
    assert read_program(tmp_path / "e.prog").sketches[0].n == 3
    assert main(["render", str(tmp_path / "e.prog"), "--out", str(tmp_path / "r.png")]) == 0


def test_complete_command(tmp_path, image):
    mask = tmp_path / "img.mask"
    mask.write_text("gridsynth-mask v1 N=6\n" + "111111\n" * 4 + "000000\n" * 2)
    rc = main(["complete", str(image), str(mask), "--grid-n", "6", "--cell-m", "4", "--eps", "0", "--out", str(tmp_path / "c")])
    assert rc == 0
    assert (tmp_path / "c" / "img_completed.png").exists()


def test_eval_command_with_figures(tmp_path):
    assert main(["gen", "--count", "2", "--k", "2", "--no-noise", "--out", str(tmp_path / "corp")]) == 0
    rc = main(["eval", str(tmp_path / "corp"), "--calibrate", "--figures", "--out", str(tmp_path / "rep")])
    assert rc == 0
    rep = json.loads((tmp_path / "rep" / "report.json").read_text())
    assert rep["aggregate"]["count"] == 2
    assert (tmp_path / "rep" / "report.png").exists()


def _args(argv):
    return build_parser().parse_args(argv)


def test_config_precedence(tmp_path):
    cfgfile = tmp_path / "c.ini"
    cfgfile.write_text("eps = 0.3\nk = 4  # comment\n")
    env = {"GRIDSYNTH_EPS": "0.2", "GRIDSYNTH_K": "7", "GRIDSYNTH_LAMBDA": "0.5"}
    cfg = resolve_config(_args(["synth", "x.png", "--config", str(cfgfile), "--k", "2"]), env)
    assert cfg["k"] == 2  # flag beats file and env
    assert cfg["eps"] == 0.3  # file beats env
    assert cfg["lambda"] == 0.5  # env beats default
    assert cfg["min_cover"] == 1  # default
    assert resolve_config(_args(["synth", "x.png"]), {})["eps"] == 0.15


def test_config_errors(tmp_path):
    from gridsynth.cli import UsageError

    bad = tmp_path / "c.ini"
    bad.write_text("nonsense = 1\n")
    with pytest.raises(UsageError):
        resolve_config(_args(["synth", "x.png", "--config", str(bad)]), {})
    with pytest.raises(UsageError):
        resolve_config(_args(["synth", "x.png"]), {"GRIDSYNTH_K": "many"})


def test_parser_rejects_unknown_command():
    with pytest.raises(SystemExit):
        build_parser().parse_args(["frobnicate"])
    assert isinstance(build_parser(), argparse.ArgumentParser)
