import csv
import json
import subprocess
import sys
from pathlib import Path

import pytest

from transmute_lab.cli import format_value, main
from transmute_lab.config import load_config

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def _write(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def _spectrum(**extra):
    doc = {"experiment": "spectrum-check", "id": "spec", "grid": {"domain": [[0, 3.141592653589793]], "nodes": 129},
           "params": {"k_count": 5}, "tolerances": {"rel_err": 5e-2}}
    doc.update(extra)
    return doc


def _wave():
    return {"experiment": "wave-check", "id": "wave", "grid": {"domain": [[0, 3.141592653589793]], "nodes": 129},
            "metric": {"preset": "diagonal-poly"}, "params": {"T": 1.0, "samples": 10},
            "tolerances": {"rel_err": 1e-2}}


def test_format_value():
    assert format_value(0.1) == "0.10000000000000001"
    assert float(format_value(1 / 3)) == 1 / 3
    assert format_value(3) == "3" and format_value(True) == "true"
    assert format_value(float("nan")) == "nan"


# --- validation ------------------------------------------------------------------


def test_validate_shipped_configs(capsys):
    for path in sorted(CONFIGS.glob("c*.json")):
        assert main(["validate", str(path)]) == 0, path.name
    assert "ok: c01-spectrum" in capsys.readouterr().out


def test_validate_rejects_aliasing(capsys):
    assert main(["validate", str(CONFIGS / "invalid-aliasing.json")]) == 2
    assert "aliasing" in capsys.readouterr().err


@pytest.mark.parametrize("change", [
    {"metric": {"preset": "no-such-metric"}},
    {"grid": {"domain": [[0, 1]], "nodes": 5}},
    {"grid": {"domain": [[1, 0]], "nodes": 33}},
    {"tolerances": {"rel_err": -1.0}},
    {"id": "../escape"},
    {"unexpected_key": 1},
    {"experiment": "not-an-experiment"},
])
def test_config_errors_exit_2(tmp_path, change):
    path = _write(tmp_path, _spectrum(**change))
    with pytest.raises(ValueError):
        load_config(path)
    assert main(["run", path, "--out", str(tmp_path / "out")]) == 2
    assert not (tmp_path / "out").exists()


def test_unreadable_config_exit_2(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["validate", str(bad)]) == 2
    assert main(["validate", str(tmp_path / "missing.json")]) == 2


def test_window_required(tmp_path):
    doc = {"experiment": "heat-moments", "grid": {"domain": [[0, 3.14]], "nodes": 65}}
    assert main(["validate", _write(tmp_path, doc)]) == 2


def test_unknown_solver_rejected(tmp_path):
    assert main(["validate", _write(tmp_path, _spectrum(params={"solver": "magic"}))]) == 2


def test_bad_arguments_exit_2(tmp_path):
    path = _write(tmp_path, _spectrum())
    assert main(["run", path, "--jobs", "0"]) == 2
    assert main(["frobnicate"]) == 2


# --- running ----------------------------------------------------------------------


def test_run_pass_and_fail(tmp_path, capsys):
    path = _write(tmp_path, _spectrum())
    assert main(["run", path, "--out", str(tmp_path / "a")]) == 0
    assert "PASS C1" in capsys.readouterr().out
    assert (tmp_path / "a" / "spec_timing.csv").exists()
    strict = _write(tmp_path, _spectrum(tolerances={"rel_err": 1e-12}), "strict.json")
    assert main(["run", strict, "--out", str(tmp_path / "b")]) == 1
    with open(tmp_path / "b" / "spec_gates.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert rows[0]["criterion"] == "C1" and rows[0]["passed"] == "false"


def test_outputs_byte_identical_and_well_formed(tmp_path):
    path = _write(tmp_path, _wave())
    for d in ("r1", "r2"):
        assert main(["run", path, "--out", str(tmp_path / d)]) == 0
    names = sorted(p.name for p in (tmp_path / "r1").iterdir())
    assert names == ["wave.csv", "wave_gates.csv", "wave_traces.csv"]  # no wall-clock values, no timing file
    for name in ("wave.csv", "wave_gates.csv", "wave_traces.csv"):
        a = (tmp_path / "r1" / name).read_bytes()
        assert a == (tmp_path / "r2" / name).read_bytes(), name
        assert b"\r" not in a
    with open(tmp_path / "r1" / "wave_traces.csv", newline="") as fh:
        reader = csv.reader(fh)
        assert next(reader) == ["experiment_id", "t", "node_index", "value"]
        rows = list(reader)
    assert {r[0] for r in rows} == {"wave:leapfrog", "wave:spectral"}
    for r in rows[:50]:
        float(r[1]), int(r[2])
        assert format_value(float(r[3])) == r[3]  # 17 significant digits round-trip


def test_plots_flag(tmp_path, monkeypatch):
    path = _write(tmp_path, _spectrum())
    assert main(["run", path, "--plots", "--out", str(tmp_path / "p")]) == 0
    assert list((tmp_path / "p").glob("*.png"))
    monkeypatch.setitem(sys.modules, "matplotlib", None)  # import now raises ImportError
    assert main(["run", path, "--plots", "--out", str(tmp_path / "q")]) == 0
    assert not list((tmp_path / "q").glob("*.png"))
    assert (tmp_path / "q" / "spec.csv").exists()


def test_module_entry_point(tmp_path):
    path = _write(tmp_path, _spectrum())
    proc = subprocess.run([sys.executable, "-m", "transmute_lab.cli", "validate", path],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0 and proc.stdout.startswith("ok: spec")
