import csv
import json
import subprocess
import sys

import jsonschema
import pytest

from rauzylab import cli
from rauzylab.cli import ExperimentManifest, SystemSpec, load_schema, main
from rauzylab.errors import PrecisionError

PI3 = "a b c / c b a"
PI4 = "a b c d / d c b a"


def test_perm_info(capsys):
    assert main(["perm-info", PI4]) == 0
    out = capsys.readouterr().out
    assert "genus           2" in out and "Sigma size      1" in out and "yes" in out


def test_induct_trace_and_tie(capsys):
    assert main(["induct", "a b / b a", "--lambda", "3,5", "--steps", "5"]) == 2
    cap = capsys.readouterr()
    assert "3,5 -> 3,2 -> 1,2 -> 1,1" in cap.out
    assert "tie at step 4" in cap.err


def test_rauzy_class_json(tmp_path):
    out = tmp_path / "rc.json"
    assert main(["rauzy-class", PI3, "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    jsonschema.validate(doc, load_schema("result"))
    members = doc["result"]["members"]
    assert len(members) == 3 and {m["genus"] for m in members} == {1}
    assert doc["result"]["invariants"]["size"] == 3


def test_cap_exit_code(capsys):
    assert main(["rauzy-class", PI4, "--cap", "2"]) == 3
    assert "cap exceeded" in capsys.readouterr().err


def test_precision_exit_code(monkeypatch, capsys):
    def boom(_):
        raise PrecisionError("needs more bits")

    monkeypatch.setitem(cli.DISPATCH, "orbit", boom)
    assert main(["orbit", PI3]) == 4
    assert "precision error" in capsys.readouterr().err


def test_bad_manifest(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"system": {"permutation": PI3}, "experiment": {"kind": "nope"}}))
    assert main(["run", str(bad)]) == 2
    assert main(["run", str(tmp_path / "missing.json")]) == 2
    assert "invalid manifest" in capsys.readouterr().err


def test_manifest_round_trip():
    m = ExperimentManifest(SystemSpec(PI4, ["top", "bottom"], "float", 128), "survival",
                           {"delta": 0.05, "N": 5, "samples": 1000}, 2**64 - 1, {"csv": "x.csv"})
    again = ExperimentManifest.from_json(json.loads(m.dumps()))
    assert again == m and again.dumps() == m.dumps()


def test_rerun_is_byte_identical(tmp_path):
    man = tmp_path / "m.json"
    first = tmp_path / "a.csv"
    assert main(["orbit", PI4, "--lambda", "1/3,1/5,1/7,1/11", "--steps", "40", "--csv", str(first),
                 "--save-manifest", str(man)]) == 0
    data = json.loads(man.read_text())
    data["outputs"]["csv"] = str(tmp_path / "b.csv")
    man.write_text(json.dumps(data))
    assert main(["run", str(man), "--quiet"]) == 0
    assert first.read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_weakmix_scan_csv(tmp_path):
    out = tmp_path / "scan.csv"
    argv = ["weakmix-scan", "a b / b a", "--lambda", "1,phi", "--t-grid=-1+phi,1/3,1/2,2/7",
            "--visits", "30", "--gamma0", "top,bottom", "--csv", str(out)]
    assert main(argv) == 0
    rows = list(csv.DictReader(out.open()))
    assert [r["verdict"] for r in rows] == ["eigenvalue-candidate", "not-candidate", "not-candidate", "not-candidate"]
    assert set(rows[0]) == {"t", "t_float", "visits_used", "tail_max_distance", "verdict", "integral"}


def test_weakmix_scan_excluded(capsys):
    assert main(["weakmix-scan", PI3, "--t-grid", "3", "--visits", "5"]) == 0
    assert "short-circuited  True" in capsys.readouterr().out


def test_suspend(tmp_path):
    out = tmp_path / "s.json"
    assert main(["suspend", "a b / b a", "--lambda", "3/10,7/10", "--tau", "1,-1", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    jsonschema.validate(doc, load_schema("result"))
    assert doc["result"]["datum"]["heights"] == {"a": "1", "b": "1"}


def test_console_script_runs():
    res = subprocess.run([sys.executable, "-m", "rauzylab.cli", "perm-info", PI3],
                         capture_output=True, text=True, check=False)
    assert res.returncode == 0 and "genus" in res.stdout


@pytest.mark.slow
def test_lyapunov_small(tmp_path):
    out = tmp_path / "l.json"
    assert main(["lyapunov", PI3, "--steps", "2000", "--batches", "20", "--out", str(out)]) == 0
    res = json.loads(out.read_text())["result"]
    assert len(res["exponents"]) == 2 and res["pairing_ok"]
