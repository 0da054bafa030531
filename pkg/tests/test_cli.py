"""Command-line interface: commands, outputs, exit codes, determinism."""

import csv

import pytest

from gridflex import bundled
from gridflex.cli import main
from gridflex.ingest import save_scenario


@pytest.fixture(scope="module")
def scenario_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("scenario")
    sc = bundled.swisslike(horizon=3)
    cfg_path = save_scenario(sc, root)
    # small sweeps keep the CLI tests quick
    with open(cfg_path, "a") as fh:
        fh.write("n_dirs = 8\nenvelope_step = 1\nenvelope_window = 1\n")
    return root


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_opf_writes_outputs(scenario_dir, tmp_path, capsys):
    out = tmp_path / "res"
    code = main(
        ["--config", str(scenario_dir / "gridflex.cfg"), "--command", "opf", "--out", str(out)]
    )
    assert code == 0
    assert (out / "setpoints.csv").exists()
    assert (out / "state.csv").exists()
    rows = read_rows(out / "breakdown.csv")
    assert {r["term"] for r in rows} >= {"losses", "voltage_dev", "total"}


def test_opf_byte_identical_reruns(scenario_dir, tmp_path):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    cfg = str(scenario_dir / "gridflex.cfg")
    assert main(["--config", cfg, "--command", "opf", "--out", str(out1)]) == 0
    assert main(["--config", cfg, "--command", "opf", "--out", str(out2)]) == 0
    for name in ("setpoints.csv", "state.csv", "breakdown.csv"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


def test_envelope_csv_schema(scenario_dir, tmp_path):
    out = tmp_path / "env"
    cfg = str(scenario_dir / "gridflex.cfg")
    code = main(
        ["--config", cfg, "--command", "envelope", "--n-dirs", "8", "--out", str(out), "--svg"]
    )
    assert code == 0
    for cls in ("fast", "slow"):
        rows = read_rows(out / f"envelope_{cls}.csv")
        assert len(rows) == 8
        assert list(rows[0]) == ["service_class", "theta_rad", "dp_kw", "dq_kvar", "status"]
        assert all(r["status"] == "Optimal" for r in rows)
        assert all(r["service_class"] == cls for r in rows)
    assert (out / "envelope.svg").exists()
    assert b"<svg" in (out / "envelope.svg").read_bytes()[:300]


def test_coordinate_tso_leader(scenario_dir, tmp_path):
    out = tmp_path / "coord"
    cfg = str(scenario_dir / "gridflex.cfg")
    code = main(
        ["--config", cfg, "--command", "coordinate", "--scheme", "tso_leader",
         "--n-dirs", "8", "--out", str(out)]
    )
    assert code == 0
    assert (out / "envelope_fast.csv").exists()
    services = read_rows(out / "services.csv")
    assert any(r["operator"] == "dso" and r["speed"] == "slow" for r in services)


def test_coordinate_dso_leader_writes_schedule(scenario_dir, tmp_path):
    out = tmp_path / "coord2"
    cfg = str(scenario_dir / "gridflex.cfg")
    code = main(
        ["--config", cfg, "--command", "coordinate", "--scheme", "dso_leader",
         "--n-dirs", "8", "--out", str(out)]
    )
    assert code == 0
    assert (out / "setpoints.csv").exists()
    assert (out / "envelope_slow.csv").exists()


def test_verify_clean_then_tampered(scenario_dir, tmp_path, capsys):
    out = tmp_path / "v"
    cfg = str(scenario_dir / "gridflex.cfg")
    assert main(["--config", cfg, "--command", "opf", "--out", str(out)]) == 0
    assert main(["--config", cfg, "--command", "verify", "--out", str(out)]) == 0
    capsys.readouterr()

    # tamper: 700 kW of extra draw overloads the LV feeder head
    setpoints = out / "setpoints.csv"
    lines = setpoints.read_text().splitlines()
    cells = lines[1].split(",")
    cells[2] = "-700.0"
    lines[1] = ",".join(cells)
    setpoints.write_text("\n".join(lines) + "\n")
    code = main(["--config", cfg, "--command", "verify", "--out", str(out)])
    assert code == 1
    err = capsys.readouterr().err
    assert "violation" in err
    rows = read_rows(out / "verification.csv")
    assert rows, "violations must be listed in the report"


def test_bad_config_exit_code(tmp_path, capsys):
    cfg = tmp_path / "broken.cfg"
    cfg.write_text("slack_node = A\nnot_a_key = 1\n")
    code = main(["--config", str(cfg), "--command", "opf", "--out", str(tmp_path / "o")])
    assert code == 2
    assert "ParseError" in capsys.readouterr().err


def test_bundled_writer(tmp_path):
    from gridflex.bundled import main as bundled_main

    assert bundled_main([str(tmp_path), "--horizon", "2"]) == 0
    assert (tmp_path / "twobus" / "gridflex.cfg").exists()
    assert (tmp_path / "swisslike" / "timeseries.csv").exists()
