from __future__ import annotations

import json
import subprocess
import sys

import pytest

from qcert import cli
from qcert.errors import TruncationExhausted


def test_kappa_demo_stdout(capsys):
    assert cli.main(["kappa-demo", "--a", "0.1", "--b", "0.1", "--t", "4"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("# schema: qcert.kappa-demo/v1")
    header, row = out.strip().splitlines()[-2:]
    values = dict(zip(header.split(","), row.split(",")))
    assert float(values["kappa"]) == pytest.approx(100.0)


def test_bound_calc_defaults_to_json(capsys):
    assert cli.main(["bound-calc", "--sigma", "0.25,0.25,0.25,0.25", "--eps", "0.1"]) == 0
    data = json.loads(capsys.readouterr().out)
    assert data["rows"][0]["lower"] == pytest.approx(800)


def test_out_file_and_format(tmp_path):
    out = tmp_path / "doob.json"
    assert cli.main(["doob", "--d", "4", "--n", "5", "--trials", "10", "--format", "json", "--out", str(out)]) == 0
    assert json.loads(out.read_text())["schema"] == "qcert.doob/v1"


def test_config_merge(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"d": 4, "n": 3, "trials": 10, "seed": 7}))
    assert cli.main(["doob", "--config", str(cfg), "--n", "6"]) == 0
    text = capsys.readouterr().out
    row = text.strip().splitlines()[-1].split(",")
    assert row[:3] == ["6", "4", "10"]


@pytest.mark.parametrize(
    "argv",
    [
        ["doob", "--d", "0"],
        ["doob", "--eps", "2"],
        ["no-such-command"],
        ["doob", "--n-values", "1,x"],
        ["bound-calc"],
        ["bound-calc", "--sigma", "0.5,0.5", "--eps", "0"],
    ],
)
def test_invalid_config_exit_2(argv):
    with pytest.raises(SystemExit) as info:
        raise SystemExit(cli.main(argv))
    assert info.value.code == 2


def test_bad_config_file(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.main(["doob", "--config", str(bad)]) == 2
    bad.write_text(json.dumps({"colour": "red"}))
    assert cli.main(["doob", "--config", str(bad)]) == 2


def test_budget_exit_3():
    assert cli.main(["tv-scan", "--family", "paninski", "--d", "4", "--n", "4",
                     "--path", "exhaustive", "--strategy", "haar"]) == 3
    assert cli.main(["tv-scan", "--d", "4", "--n", "30", "--path", "estimator"]) == 3


def test_truncation_exit_4(monkeypatch):
    def boom(cfg):
        raise TruncationExhausted("no acceptable draw", 10)

    monkeypatch.setattr(cli, "run", boom)
    assert cli.main(["doob"]) == 4


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "qcert", "kappa-demo", "--format", "json"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["rows"][0]["expected_kappa"] == pytest.approx(100.0)
