import csv
import json

import numpy as np
import pytest

from mixedroute.cli import main
from mixedroute.experiments import read_csv
from mixedroute.network import format_network, format_trips, grid_network


def _csvs(d):
    return {p.name: p.read_bytes() for p in sorted(d.glob("*.csv"))}


@pytest.fixture
def grid_files(tmp_path):
    net, ods = grid_network(seed=2)
    n = tmp_path / "grid_net.tntp"
    t = tmp_path / "grid_trips.tntp"
    n.write_text(format_network(net))
    t.write_text(format_trips(ods))
    return n, t


def test_ue_writes_links_and_trace(tmp_path, capsys):
    assert main(["ue", "--out", str(tmp_path)]) == 0
    with open(tmp_path / "ue_links.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [float(r["flow"]) for r in rows] == pytest.approx([4000, 0, 0, 4000, 4000], abs=1.0)
    assert (tmp_path / "ue_trace.csv").exists()
    assert "avg_time_min=80.0" in capsys.readouterr().out


def test_so_gamma_one(tmp_path):
    assert main(["so", "--gamma", "1", "--out", str(tmp_path)]) == 0
    with open(tmp_path / "so_routes.csv") as fh:
        flows = sorted(float(r["cav_flow"]) for r in csv.DictReader(fh))
    assert flows == pytest.approx([500, 1750, 1750], abs=5)
    for name in ("so_links.csv", "outer_trace.csv", "so_trace.csv"):
        assert (tmp_path / name).exists()


def test_so_from_tntp_files_matches_builtin(tmp_path, grid_files):
    n, t = grid_files
    assert main(["so", "--gamma", "0.5", "--net", str(n), "--trips", str(t), "--out", str(tmp_path / "a")]) == 0
    assert main(["so", "--gamma", "0.5", "--grid-seed", "2", "--out", str(tmp_path / "b")]) == 0
    # trips files list O-D pairs by origin, so summation order differs from the generator's
    a, b = (np.loadtxt(tmp_path / d / "so_links.csv", delimiter=",", skiprows=1) for d in "ab")
    np.testing.assert_allclose(a, b, rtol=1e-6, atol=1e-6)


def test_sweep_outputs(tmp_path):
    assert main(["sweep", "--gamma-step", "0.25", "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "sweep_time.csv")
    assert [r["gamma"] for r in rows] == [0.0, 0.25, 0.5, 0.75, 1.0]
    svgs = sorted(p.name for p in tmp_path.glob("*.svg"))
    assert len(svgs) == 4 and all(s.startswith("sweep_time_") for s in svgs)


def test_braess_subcommand(tmp_path):
    assert main(["braess", "--out", str(tmp_path)]) == 0
    t = read_csv(tmp_path / "braess_time.csv")
    assert len(t) == 21
    assert t[-1]["cav_time_savings_pct"] == pytest.approx(18.9, abs=0.7)
    assert len(read_csv(tmp_path / "braess_energy_cv.csv")) == 21
    assert len(list(tmp_path.glob("*.svg"))) == 8


def test_check_subcommand(tmp_path, capsys):
    assert main(["check", "--out", str(tmp_path)]) == 0
    with open(tmp_path / "check.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["check"] for r in rows] == ["gradient_time", "gradient_energy_cv", "oracle_total_time"]
    assert all(r["passed"] == "true" for r in rows)
    assert "FAIL" not in capsys.readouterr().out


@pytest.mark.parametrize("cmd", [["ue"], ["so", "--gamma", "0.3"], ["sweep", "--gamma-step", "0.5"],
                                 ["so", "--gamma", "0.6", "--objective", "energy-cv", "--grid-seed", "2"]])
def test_repeat_runs_byte_identical(tmp_path, cmd):
    assert main(cmd + ["--out", str(tmp_path / "a")]) == 0
    assert main(cmd + ["--out", str(tmp_path / "b")]) == 0
    a, b = _csvs(tmp_path / "a"), _csvs(tmp_path / "b")
    assert a and a == b


def test_config_override(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"electricity_price": 0.2}))
    assert main(["so", "--gamma", "0", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0


@pytest.mark.parametrize("argv", [
    ["so", "--gamma", "1.5"],
    ["ue", "--net", "missing.tntp", "--trips", "missing.tntp"],
    ["ue", "--net", "x.tntp"],
    ["ue", "--routes-per-od", "0"],
    ["braess", "--grid-seed", "1"],
])
def test_input_errors_exit_1(tmp_path, argv, capsys):
    assert main(argv + ["--out", str(tmp_path)]) == 1
    assert "error:" in capsys.readouterr().err


def test_bad_config_exit_1(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text("{not json")
    assert main(["ue", "--config", str(cfg), "--out", str(tmp_path)]) == 1


def test_malformed_network_exit_1(tmp_path, grid_files):
    n, t = grid_files
    lines = n.read_text().splitlines()
    lines[5] = "1 abc " + lines[5].split(" ", 2)[2]
    n.write_text("\n".join(lines) + "\n")
    assert main(["ue", "--net", str(n), "--trips", str(t), "--out", str(tmp_path)]) == 1


def test_nonconvergence_exit_2(tmp_path, monkeypatch):
    import mixedroute.cli as cli
    from mixedroute.stackelberg import EquilibriumConfig
    from mixedroute.ue import UeConfig
    monkeypatch.setattr(cli, "EquilibriumConfig",
                        lambda: EquilibriumConfig(max_outer_iterations=1, ue=UeConfig(max_iterations=2)))
    assert main(["so", "--gamma", "0.5", "--out", str(tmp_path)]) == 2
    assert (tmp_path / "so_links.csv").exists()
