"""File formats: config parsing, CSV schemas, scenario round trip."""

import numpy as np
import pytest

from gridflex import bundled
from gridflex.errors import CrossRefError, ParseError, ValidationError
from gridflex.ingest import (
    load_scenario,
    parse_config,
    read_coefficients_csv,
    save_scenario,
    scenarios_identical,
    write_coefficients_csv,
    write_csv,
)
from gridflex.sensitivity import coefficients_from_reference
from gridflex.network import Branch, MvNetwork, Node


def test_roundtrip_twobus(tmp_path):
    sc = bundled.twobus()
    cfg_path = save_scenario(sc, tmp_path / "twobus")
    loaded = load_scenario(cfg_path)
    assert scenarios_identical(sc, loaded)
    # a second save/load cycle is byte-stable
    cfg2 = save_scenario(loaded, tmp_path / "again")
    assert scenarios_identical(loaded, load_scenario(cfg2))


def test_roundtrip_swisslike_reference_grids(tmp_path):
    sc = bundled.swisslike(horizon=4)
    cfg_path = save_scenario(sc, tmp_path / "sw")
    loaded = load_scenario(cfg_path)
    assert scenarios_identical(sc, loaded)


def test_roundtrip_coefficient_grids(tmp_path):
    sc = bundled.lossless_curtailment()
    cfg_path = save_scenario(sc, tmp_path / "lc")
    loaded = load_scenario(cfg_path)
    # coefficient-path grids round trip their tables and operating points
    la, lb = sc.lv_grids["LVC"], loaded.lv_grids["LVC"]
    assert np.array_equal(la.models[0].k_vp, lb.models[0].k_vp)
    assert np.array_equal(la.ops[0].v0, lb.ops[0].v0)
    assert la.ops[0].p_slack == lb.ops[0].p_slack


def test_unknown_config_key(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("slack_node = A\nfrobnicate = 1\n")
    with pytest.raises(ParseError, match="frobnicate"):
        parse_config(cfg)


def test_bad_scheme_rejected(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("slack_node = A\nscheme = telepathy\n")
    with pytest.raises(ParseError, match="telepathy"):
        parse_config(cfg)


def test_missing_column_named(tmp_path):
    sc = bundled.swisslike(horizon=2)
    save_scenario(sc, tmp_path)
    res = (tmp_path / "resources.csv").read_text().splitlines()
    header = res[0].replace("s_kva,", "").replace(",s_kva", "")
    rows = [",".join(r.split(",")[:8] + r.split(",")[9:]) for r in res[1:]]
    (tmp_path / "resources.csv").write_text("\n".join([header] + rows) + "\n")
    with pytest.raises(ParseError, match="s_kva"):
        load_scenario(tmp_path / "gridflex.cfg")


def test_link_to_unknown_grid(tmp_path):
    sc = bundled.swisslike(horizon=2)
    cfg_path = save_scenario(sc, tmp_path)
    text = (tmp_path / "links.csv").read_text() + "M4,LV9\n"
    (tmp_path / "links.csv").write_text(text)
    with pytest.raises(CrossRefError, match="LV9"):
        load_scenario(cfg_path)


def test_timeseries_unknown_element(tmp_path):
    sc = bundled.twobus()
    cfg_path = save_scenario(sc, tmp_path)
    text = (tmp_path / "timeseries.csv").read_text() + "0,GHOST,1.0,0.0\n"
    (tmp_path / "timeseries.csv").write_text(text)
    with pytest.raises(CrossRefError, match="GHOST"):
        load_scenario(cfg_path)


def test_validation_error_aggregates(tmp_path):
    sc = bundled.twobus()
    cfg_path = save_scenario(sc, tmp_path)
    # break radiality: duplicate the branch
    text = (tmp_path / "branches.csv").read_text()
    (tmp_path / "branches.csv").write_text(text + "A,B,0.01,0.01,2\n")
    with pytest.raises(ValidationError, match="radial"):
        load_scenario(cfg_path)


def test_ev_defaults_applied(tmp_path):
    sc = bundled.swisslike(horizon=2)
    save_scenario(sc, tmp_path)
    lines = (tmp_path / "resources.csv").read_text().splitlines()
    out = [lines[0]]
    for line in lines[1:]:
        cells = line.split(",")
        if cells[3] == "EV_STORAGE":
            cells[4] = ""  # dp_lo_kw blank -> 8 kW study default
            cells[5] = ""
        out.append(",".join(cells))
    (tmp_path / "resources.csv").write_text("\n".join(out) + "\n")
    loaded = load_scenario(tmp_path / "gridflex.cfg")
    ev = [r for r in loaded.resources if r.kind.value == "EV_STORAGE"][0]
    assert ev.dp_min_kw == -8.0 and ev.dp_max_kw == 8.0


def test_full_precision_floats(tmp_path):
    value = 0.1234567890123456789
    write_csv(tmp_path / "f.csv", ("x",), [(value,)])
    text = (tmp_path / "f.csv").read_text().splitlines()[1]
    assert float(text) == value


def test_coefficients_csv_roundtrip(tmp_path):
    lv = MvNetwork(
        name="lv",
        nodes=(Node("s"), Node("a"), Node("b")),
        branches=(Branch("s", "a", 0.04, 0.01, 0.5), Branch("a", "b", 0.05, 0.02, 0.4)),
        slack="s",
        base_kv=0.4,
    )
    model = coefficients_from_reference(lv, {"a": (-0.02, -0.01)})
    path = tmp_path / "coeff.csv"
    write_coefficients_csv(model, path)
    back = read_coefficients_csv(str(path), "lv")
    assert back.node_ids == model.node_ids
    assert back.injectors == model.injectors
    assert np.array_equal(back.k_vp, model.k_vp)
    assert np.array_equal(back.k_iq, model.k_iq)


def test_config_requires_slack(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("name = x\n")
    with pytest.raises(ParseError, match="slack_node"):
        parse_config(cfg)
