import json
import subprocess
import sys

import numpy as np
import pytest

from gmsfem_wave import __version__
from gmsfem_wave.cli import (ConfigError, load_config, main, read_pressure_snapshot, resolve_config,
                             write_pressure_snapshot, write_vtk)
from gmsfem_wave.analysis import read_error_table
from gmsfem_wave.solver import read_energy_trace

SMALL = {
    "mesh": {"n": 2, "r": 2},
    "medium": {"type": "layered", "seed": 5, "layers": 4, "contrast": 4.0},
    "source": {"f0": 10.0, "delta": 0.1},
    "selection": {"boundary": 2, "interior": 3},
    "time": {"T": 0.05},
    "pml": {"width": 2},
    "table": {"boundary": [1, 2], "interior": [0, 4]},
}


def _config(tmp_path, name="cfg.json", **over):
    cfg = json.loads(json.dumps(SMALL))
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(cfg.get(k), dict):
            cfg[k].update(v)
        else:
            cfg[k] = v
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def test_defaults_resolve():
    cfg = resolve_config(load_config())
    assert cfg["mesh"] == {"n": 8, "r": 3}
    assert cfg["source"]["delta"] == "2h"
    assert cfg["time"]["T"] == 0.2


@pytest.mark.parametrize("bad", [
    {"mesh": {"n": 0}},
    {"mesh": {"r": -1}},
    {"medium": {"type": "marble"}},
    {"medium": {"type": "layered", "colour": 3}},
    {"medium": {"type": "raster", "kappa": "/nonexistent"}},
    {"selection": {"boundary": 0, "interior": 1}},
    {"selection": "everything"},
    {"time": {"T": -1}},
    {"mode": "implicit"},
    {"pml": {"reflection": 2.0}},
    {"version": 99},
    {"bogus": 1},
])
def test_invalid_configs(bad):
    raw = json.loads(json.dumps(SMALL))
    raw.update(bad)
    with pytest.raises(ConfigError):
        resolve_config(raw)


def test_config_errors_exit_2(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "missing.json")]) == 2
    p = tmp_path / "broken.json"
    p.write_text("{not json")
    assert main(["mesh-info", "--config", str(p)]) == 2
    assert main(["run", "--config", _config(tmp_path, selection={"boundary": 9, "interior": 0}),
                 "--out", str(tmp_path / "o")]) == 2
    assert "configuration error" in capsys.readouterr().err


def test_seed_override():
    assert resolve_config(dict(SMALL), seed=42)["medium"]["seed"] == 42


def test_mesh_info(tmp_path, capsys):
    assert main(["mesh-info", "--config", _config(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "fine" in out.lower()


def test_offline_is_byte_identical(tmp_path):
    cfg = _config(tmp_path)
    for d in ("a", "b"):
        assert main(["offline", "--config", cfg, "--out", str(tmp_path / d)]) == 0
    a, b = (tmp_path / d / "offline.bin" for d in ("a", "b"))
    assert a.read_bytes() == b.read_bytes()
    man = json.loads((tmp_path / "a" / "offline.json").read_text())
    # 16 initial + 24 centroid edges, 8 of them split, 2 functions each; 3 modes per element
    assert man["dim_V"] == (40 + 8) * 2 + 24 * 3
    assert man["dim_Q"] == 24 * 4 + 8 * 2
    assert man["version"] == __version__


def test_run_with_stored_offline_space(tmp_path):
    cfg = _config(tmp_path, output={"snapshot_every": 5, "vtk": True}, time={"T": 0.1, "dt": 0.005})
    off = tmp_path / "space.bin"
    assert main(["offline", "--config", cfg, "--offline", str(off), "--out", str(tmp_path)]) == 0
    out = tmp_path / "run"
    assert main(["run", "--config", cfg, "--offline", str(off), "--out", str(out)]) == 0
    man = json.loads((out / "manifest.json").read_text())
    e = read_energy_trace(out / "energy.txt")
    assert e.shape == (man["n_steps"] + 1, 5)
    step, t, p = read_pressure_snapshot(out / "pressure_000005.txt")
    assert step == 5 and len(p) == 384
    assert (out / "pressure_000005.vtk").read_text().startswith("# vtk DataFile")
    assert set(man["files"]) >= {"energy.txt", "pressure_000005.txt"}
    # a space built for another medium is refused
    assert main(["run", "--config", cfg, "--seed", "6", "--offline", str(off), "--out", str(out)]) == 2
    # tampering with the file is detected
    data = bytearray(off.read_bytes())
    data[-1] ^= 1
    off.write_bytes(bytes(data))
    assert main(["run", "--config", cfg, "--offline", str(off), "--out", str(out)]) == 2


def test_fine_and_identity_runs_agree(tmp_path):
    fine = _config(tmp_path, "f.json", mode="fine", time={"T": 0.05, "dt": 0.002})
    ident = _config(tmp_path, "g.json", mode="gmsfem", selection="identity", time={"T": 0.05, "dt": 0.002})
    assert main(["run", "--config", fine, "--out", str(tmp_path / "f")]) == 0
    assert main(["run", "--config", ident, "--out", str(tmp_path / "g")]) == 0
    a = np.load(tmp_path / "f" / "final_state.npz")
    b = np.load(tmp_path / "g" / "final_state.npz")
    assert np.abs(a["p"] - b["p"]).max() <= 1e-12 * np.abs(a["p"]).max()
    assert np.abs(a["v"] - b["v"]).max() <= 1e-12 * np.abs(a["v"]).max()


def test_coupled_mode(tmp_path):
    cfg = _config(tmp_path, mode="coupled-rt0")
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "c")]) == 0
    man = json.loads((tmp_path / "c" / "manifest.json").read_text())
    assert man["mode"] == "coupled-rt0"


def test_instability_exit_3(tmp_path):
    cfg = _config(tmp_path, mode="fine", time={"T": 20.0, "dt": 0.1})
    with np.errstate(over="ignore", invalid="ignore"):
        assert main(["run", "--config", cfg, "--out", str(tmp_path / "u")]) == 3


def test_table_and_empty_table(tmp_path):
    assert main(["table", "--config", _config(tmp_path), "--out", str(tmp_path / "t")]) == 0
    rows = read_error_table(tmp_path / "t" / "table.csv")
    assert [r.row()[:2] for r in rows] == [(1, 0), (1, 4), (2, 0), (2, 4)]
    assert all(r.rel_err_p >= 0 for r in rows)
    empty = _config(tmp_path, "e.json", table={"boundary": [], "interior": []})
    assert main(["table", "--config", empty, "--out", str(tmp_path / "e")]) == 0
    assert read_error_table(tmp_path / "e" / "table.csv") == []


def test_pml_demo(tmp_path):
    cfg = _config(tmp_path, time={"T": 0.1, "dt": 0.004})
    assert main(["pml-demo", "--config", cfg, "--out", str(tmp_path / "p")]) == 0
    man = json.loads((tmp_path / "p" / "manifest.json").read_text())
    assert man["mode"] == "pml"
    assert man["interior_energy_peak"] >= man["interior_energy_final"] >= 0
    assert (tmp_path / "p" / "pressure_000020.txt").exists()


def test_snapshot_roundtrip(tmp_path):
    p = np.random.default_rng(0).standard_normal(7)
    write_pressure_snapshot(tmp_path / "s.txt", 3, 0.125, p)
    step, t, q = read_pressure_snapshot(tmp_path / "s.txt")
    assert (step, t) == (3, 0.125) and np.array_equal(p, q)
    (tmp_path / "bad.txt").write_text("# step 1 time 0 n 5\n1\n2\n")
    with pytest.raises(ValueError):
        read_pressure_snapshot(tmp_path / "bad.txt")


def test_vtk_writer(tmp_path):
    v = np.array([[0, 0], [1, 0], [0, 1]], float)
    write_vtk(tmp_path / "t.vtk", v, np.array([[0, 1, 2]]), {"pressure": np.array([2.5])})
    lines = (tmp_path / "t.vtk").read_text().splitlines()
    assert lines[0].startswith("# vtk DataFile Version")
    assert "CELL_DATA 1" in lines
    assert lines[-1].strip() == "2.5"


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "gmsfem_wave", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and __version__ in r.stdout
