import csv
import json

import pytest

from topobench import config as cfgmod
from topobench.cli import main


def _write_cfg(tmp_path, methods, **over):
    cfg = cfgmod.RunConfig(case="cantilever", methods=methods, scale=0.04, ndim=2,
                           out_dir=str(tmp_path / "out"),
                           overrides={m: {"convergence": {"max_iter": 8}} for m in methods}, **over)
    return cfgmod.dump(cfg, tmp_path / "run.yaml")


def test_run_writes_one_history_and_field_per_method(tmp_path):
    path = _write_cfg(tmp_path, ["simp1", "vartop"])
    assert main(["run", "--config", str(path)]) == 0
    out = tmp_path / "out"
    assert sorted(p.name for p in out.glob("*_history.csv")) == ["simp1_history.csv",
                                                                  "vartop_history.csv"]
    assert len(list(out.glob("*.vtk"))) == 2
    with open(out / "summary.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert [r[0] for r in rows[1:]] == ["simp1", "vartop"]
    assert (out / "summary.txt").exists() and (out / "config.yaml").exists()
    assert not (out / "errors.json").exists()


def test_run_is_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    a.mkdir(), b.mkdir()
    for d in (a, b):
        assert main(["run", "--config", str(_write_cfg(d, ["simp3"]))]) == 0
    assert (a / "out/simp3_history.csv").read_bytes() == (b / "out/simp3_history.csv").read_bytes()


def test_command_line_flags_override_config(tmp_path, capsys):
    path = _write_cfg(tmp_path, ["simp1"])
    assert main(["validate", "--config", str(path), "--methods", "beso,levelset"]) == 0
    assert "beso, levelset" in capsys.readouterr().out


@pytest.mark.parametrize("argv", [["--methods", ""], ["--methods", "simp9"], ["--scale", "1.5"]])
def test_bad_arguments_exit_with_status_two(tmp_path, argv):
    assert main(["validate", "--case", "cantilever", *argv]) == 2


def test_large_runs_need_explicit_opt_in(tmp_path, capsys):
    rc = main(["run", "--case", "cantilever", "--scale", "1.0", "--out", str(tmp_path)])
    assert rc == 2
    assert "--allow-large" in capsys.readouterr().err


def test_export_writes_schema_and_template(tmp_path):
    assert main(["export", "--case", "gripper", "--scale", "0.1", "--out", str(tmp_path)]) == 0
    schema = json.loads((tmp_path / "config.schema.json").read_text())
    assert schema["properties"]["schema_version"]["const"] == cfgmod.SCHEMA_VERSION
    cfg = cfgmod.load(tmp_path / "config.yaml")
    assert cfg.method_config("simp1") == cfgmod.RunConfig("gripper", ["simp1"]).method_config("simp1")


def test_report_prints_summary(tmp_path, capsys):
    path = _write_cfg(tmp_path, ["simp1"])
    main(["run", "--config", str(path)])
    capsys.readouterr()
    assert main(["report", "--out", str(tmp_path / "out")]) == 0
    assert "simp1" in capsys.readouterr().out
    assert main(["report", "--out", str(tmp_path / "nowhere")]) == 1
