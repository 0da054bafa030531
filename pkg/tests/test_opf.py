"""Combined MV+LV operation problem: structure, optimality, verification."""

import dataclasses
import math

import numpy as np
import pytest

from gridflex import bundled
from gridflex.errors import InconsistentScenario
from gridflex.network import (
    Branch,
    MvNetwork,
    Node,
    ObjectiveWeights,
    Resource,
    ResourceKind,
    TimeSeries,
    TransformerLink,
    losses,
)
from gridflex.opf import (
    OpfScenario,
    assemble_lv_grids,
    baseline_mv_state,
    build_combined_program,
    objective_breakdown,
    slice_scenario,
    solve_schedule,
    verify_against_oracle,
)


def mv_with_lv(
    horizon=1,
    pv_box=(-20.0, 0.0),
    pv_q=(-10.0, 10.0),
    lv_vmax=1.10,
    mv_imax=1.0,
    ev=False,
):
    mv = MvNetwork(
        name="mv3",
        nodes=(Node("N0", 0.9, 1.1), Node("N1", 0.9, 1.1), Node("N2", 0.9, 1.1)),
        branches=(
            Branch("N0", "N1", 0.01, 0.02, mv_imax),
            Branch("N1", "N2", 0.015, 0.02, mv_imax),
        ),
        slack="N0",
        transformers=(TransformerLink("N2", "LV1"),),
        base_kva=1000.0,
    )
    lv = MvNetwork(
        name="LV1",
        nodes=(Node("s", 0.9, lv_vmax), Node("a", 0.9, lv_vmax), Node("b", 0.9, lv_vmax)),
        branches=(Branch("s", "a", 0.03, 0.01, 0.5), Branch("a", "b", 0.04, 0.015, 0.4)),
        slack="s",
        base_kv=0.4,
    )
    resources = [
        Resource(
            id="pv1",
            lv_grid="LV1",
            lv_node="b",
            kind=ResourceKind.PV,
            dp_min_kw=pv_box[0],
            dp_max_kw=pv_box[1],
            dq_min_kvar=pv_q[0],
            dq_max_kvar=pv_q[1],
            s_kva=60.0,
            pf_limit=0.9,
            ramp_kw_per_hr=360.0,
        )
    ]
    baselines = {"pv1": np.tile([0.05, 0.0], (horizon, 1))}
    if ev:
        resources.append(
            Resource(
                id="ev1",
                lv_grid="LV1",
                lv_node="a",
                kind=ResourceKind.EV_STORAGE,
                dp_min_kw=-4.0,
                dp_max_kw=4.0,
                s_kva=8.0,
                ramp_kw_per_hr=48.0,
                eta=0.92,
                capacity_kwh=40.0,
                soc0=0.5,
            )
        )
        baselines["ev1"] = np.tile([-0.004, 0.0], (horizon, 1))
    series = TimeSeries(
        step_minutes=10.0,
        horizon=horizon,
        mv_injections={
            "N1": np.tile([-0.2, -0.05], (horizon, 1)),
            "N2": np.tile([-0.1, -0.02], (horizon, 1)),
        },
        resource_baselines=baselines,
        lv_background={"LV1": {"a": np.tile([-0.03, -0.01], (horizon, 1))}},
    )
    resources = tuple(resources)
    return OpfScenario(
        name="mv3lv",
        network=mv,
        lv_grids=assemble_lv_grids({"LV1": lv}, resources, series),
        resources=resources,
        series=series,
        weights=ObjectiveWeights(w_l=1.0, w_v=100.0, w_lim=100.0),
        slack_v_bounds=(1.0, 1.0),
    )


# ---------------------------------------------------------------------------
# program structure
# ---------------------------------------------------------------------------


def test_no_resources_means_no_delta_columns(twobus_sc):
    built = build_combined_program(twobus_sc)
    assert built.program.vars_named("dp[") == 0
    assert built.program.vars_named("dq[") == 0
    assert built.program.vars_named("v[") == 2 * twobus_sc.series.horizon


def test_storage_adds_one_soc_var_and_chain_row_per_step():
    plain = mv_with_lv(horizon=4, ev=False)
    with_ev = mv_with_lv(horizon=4, ev=True)
    b0 = build_combined_program(plain)
    b1 = build_combined_program(with_ev)
    assert b1.program.vars_named("soc[") - b0.program.vars_named("soc[") == 4
    assert b1.program.rows_tagged("soc_chain") - b0.program.rows_tagged("soc_chain") == 4


def test_tiny_instance_row_and_cone_counts():
    # hand enumeration for 1 step, 2 MV nodes / 1 branch, one 3-node LV grid
    # with one PV: equalities are 2 slack definitions, 2 nodal balances,
    # 1 voltage drop, 2 transformer-flow rows; inequalities are 2 voltage
    # hinge rows per MV node (4), 1 ampacity hinge, 2 band rows per LV node
    # (6), 2 ampacity rows per LV branch (4), 2 power-factor rows; one
    # rotated cone per MV branch and one apparent-power cone per inverter.
    mv = MvNetwork(
        name="tiny",
        nodes=(Node("N0"), Node("N1")),
        branches=(Branch("N0", "N1", 0.01, 0.01, 1.0),),
        slack="N0",
        transformers=(TransformerLink("N1", "LV1"),),
    )
    lv = MvNetwork(
        name="LV1",
        nodes=(Node("s"), Node("a"), Node("b")),
        branches=(Branch("s", "a", 0.03, 0.01, 0.5), Branch("a", "b", 0.04, 0.015, 0.4)),
        slack="s",
        base_kv=0.4,
    )
    pv = Resource(
        id="pv1",
        lv_grid="LV1",
        lv_node="b",
        kind=ResourceKind.PV,
        dp_min_kw=-10.0,
        dp_max_kw=0.0,
        s_kva=30.0,
        ramp_kw_per_hr=100.0,
    )
    series = TimeSeries(
        step_minutes=10.0,
        horizon=1,
        mv_injections={"N1": np.array([[-0.1, -0.02]])},
        resource_baselines={"pv1": np.array([[0.02, 0.0]])},
    )
    sc = OpfScenario(
        name="tiny",
        network=mv,
        lv_grids=assemble_lv_grids({"LV1": lv}, (pv,), series),
        resources=(pv,),
        series=series,
    )
    prog = build_combined_program(sc).program
    assert len(prog.eqs) == 2 + 2 + 1 + 2
    assert prog.rows_tagged("v_hinge") == 4
    assert prog.rows_tagged("l_hinge") == 1
    assert prog.rows_tagged("lv_v_") == 6
    assert prog.rows_tagged("lv_i_") == 4
    assert prog.rows_tagged("pf_") == 2
    assert len(prog.rotated) == 1
    assert len(prog.socs) == 1


def test_inconsistent_scenario_lists_defects():
    sc = mv_with_lv(horizon=2)
    broken = dataclasses.replace(
        sc,
        lv_grids={
            "LV1": dataclasses.replace(
                sc.lv_grids["LV1"], models=sc.lv_grids["LV1"].models[:1]
            )
        },
    )
    with pytest.raises(InconsistentScenario) as exc:
        build_combined_program(broken)
    assert any("LV1" in d for d in exc.value.defects)


# ---------------------------------------------------------------------------
# solve_schedule
# ---------------------------------------------------------------------------


def test_zero_flex_reproduces_oracle(twobus_sc):
    res = solve_schedule(twobus_sc)
    assert res.max_cone_gap <= 1e-6
    r = np.array([b.r for b in twobus_sc.network.branches])
    for t in range(twobus_sc.series.horizon):
        ora = baseline_mv_state(twobus_sc, t)
        assert np.max(np.abs(np.sqrt(res.mv_states[t].v) - np.sqrt(ora.v))) <= 1e-6
        assert float(res.mv_states[t].l @ r) == pytest.approx(
            losses(twobus_sc.network, ora), abs=1e-6
        )


def test_lv_overvoltage_forces_curtailment():
    # LV ceiling just below the baseline voltage at the PV node: the hard
    # LV band forces curtailment while MV penalties stay at zero
    from gridflex.opf import SecurityLimits

    base = mv_with_lv(horizon=1, pv_q=(-2.0, 2.0))
    node_b = base.lv_grids["LV1"].models[0].node_ids.index("b")
    # coupled baseline voltage at node b, at the actual MV attachment voltage
    v_mv = baseline_mv_state(base, 0).v[base.network.node_index()["N2"]]
    drop_b = base.lv_grids["LV1"].ops[0].drop[node_b]
    v_b = 0.5 * (v_mv + 1.0) - drop_b
    limits = SecurityLimits.from_networks(base.network, base.lv_grids)
    lv_vmax = limits.lv_vmax["LV1"].copy()
    lv_vmax[node_b] = v_b - 0.001
    limits = dataclasses.replace(limits, lv_vmax={"LV1": lv_vmax})
    tight = dataclasses.replace(base, limits=limits)
    res = solve_schedule(tight)
    assert res.max_cone_gap <= 1e-6
    assert np.all(res.vdev <= 1e-9)
    assert res.dp[0, 0] < -1e-4  # PV curtails
    rep = verify_against_oracle(res, tight, limit_tolerance=2e-4)
    assert not rep.violations


def test_all_weights_zero_still_optimal():
    sc = mv_with_lv(horizon=1)
    sc = dataclasses.replace(
        sc,
        weights=ObjectiveWeights(w_l=0, w_v=0, w_lim=0, w_p=0, w_q=0),
        relaxation_gap_threshold=math.inf,
    )
    res = solve_schedule(sc)
    assert res.objective == pytest.approx(0.0, abs=1e-12)


def test_breakdown_accounting(swisslike12_schedule):
    sc, res = swisslike12_schedule
    br = objective_breakdown(res)
    assert br.voltage_dev == pytest.approx(0.0, abs=1e-9)
    assert br.flow_dev == pytest.approx(0.0, abs=1e-9)
    assert res.objective == sum(br.costs.values())  # identity by construction
    assert res.objective == pytest.approx(res.solution.objective, abs=1e-7)
    assert all(v >= 0 for v in br.costs.values())


def test_constructed_overvoltage_costs_two_currency_units():
    # the loss weight must outprice the relaxation's fake-loss escape
    # (w_l * r > w_v * (r^2 + x^2)) so the hinge arithmetic is exact
    sc = bundled.twobus(horizon=1)
    st = baseline_mv_state(sc, 0)
    vmax = math.sqrt(st.v[1] - 0.02)  # put the ceiling 0.02 p.u.^2 below
    net = dataclasses.replace(
        sc.network, nodes=(sc.network.nodes[0], Node("B", 0.9, vmax))
    )
    sc = dataclasses.replace(
        sc, network=net, weights=ObjectiveWeights(w_l=5.0, w_v=100.0, w_lim=100.0)
    )
    res = solve_schedule(sc)
    assert res.max_cone_gap <= 1e-6
    assert res.breakdown.costs["voltage_dev"] == pytest.approx(2.0, abs=1e-6)


def test_voltage_penalty_monotone_in_weight():
    sc = bundled.twobus(horizon=1)
    st = baseline_mv_state(sc, 0)
    vmax = math.sqrt(st.v[1] - 0.01)
    net = dataclasses.replace(sc.network, nodes=(sc.network.nodes[0], Node("B", 0.9, vmax)))
    terms = []
    for w_v in (10.0, 100.0, 1000.0):
        sc_w = dataclasses.replace(
            sc,
            network=net,
            weights=ObjectiveWeights(w_l=1.0, w_v=w_v, w_lim=100.0),
            relaxation_gap_threshold=math.inf,  # unfixable violation: gap expected
        )
        terms.append(solve_schedule(sc_w).breakdown.voltage_dev)
    assert terms[0] >= terms[1] >= terms[2] - 1e-12


def test_soc_chain_and_bounds(swisslike12_schedule):
    sc, res = swisslike12_schedule
    dt_hr = sc.series.step_hours
    for res_obj in sc.storage_resources():
        soc = res.soc[res_obj.id]
        assert np.all(soc >= res_obj.soc_min - 1e-8)
        assert np.all(soc <= res_obj.soc_max + 1e-8)
        c = res_obj.eta * dt_hr * sc.network.base_kva / res_obj.capacity_kwh
        k = res.resource_ids.index(res_obj.id)
        p = sc.resource_baseline_pu(res_obj.id)[:, 0] + res.dp[:, k]
        prev = res_obj.soc0
        for t in range(sc.series.horizon):
            expect = prev - c * p[t]
            assert soc[t] == pytest.approx(expect, abs=1e-7)
            prev = soc[t]


def test_inverter_limits_respected(swisslike12_schedule):
    sc, res = swisslike12_schedule
    kva = sc.network.base_kva
    for k, rid in enumerate(res.resource_ids):
        r = sc.resources[k]
        base = sc.resource_baseline_pu(rid)
        p = base[:, 0] + res.dp[:, k]
        q = base[:, 1] + res.dq[:, k]
        s_lim = math.sqrt(sc.inverter_overrating) * r.s_kva / kva
        assert np.all(np.hypot(p, q) <= s_lim + 1e-8)
        if r.kind is ResourceKind.PV:
            tau = math.tan(math.acos(r.pf_limit))
            assert np.all(np.abs(q) <= tau * p + 1e-8)


def test_relaxation_gap_flagged_when_loose():
    sc = mv_with_lv(horizon=1)
    sc = dataclasses.replace(
        sc,
        weights=ObjectiveWeights(w_l=0, w_v=0, w_lim=0),
        relaxation_gap_threshold=1e-9,
    )
    with pytest.warns(UserWarning, match="cone gap"):
        res = solve_schedule(sc)
    assert res.relaxation_loose


def test_schedule_deviation_terms():
    # schedule below the physical import: the deviation is irreducible with
    # no flexibility, so the breakdown must report it exactly
    sc = bundled.twobus(horizon=2)
    sched = np.array([[0.05, 0.01], [0.05, 0.01]])
    series = dataclasses.replace(sc.series, tso_schedule=sched)
    sc = dataclasses.replace(
        sc,
        series=series,
        weights=ObjectiveWeights(w_l=1.0, w_v=100.0, w_lim=100.0, w_p=2.0, w_q=2.0),
    )
    res = solve_schedule(sc)
    assert res.max_cone_gap <= 1e-6
    dev_p = sum(abs(res.mv_states[t].slack_p - sched[t, 0]) for t in range(2))
    assert dev_p > 0.05
    assert res.breakdown.p_sched_dev == pytest.approx(dev_p, abs=1e-9)
    assert res.breakdown.costs["p_sched_dev"] == pytest.approx(2.0 * dev_p, abs=1e-9)


# ---------------------------------------------------------------------------
# verification
# ---------------------------------------------------------------------------


def test_verify_flags_tampered_setpoints():
    sc = mv_with_lv(horizon=1, mv_imax=0.4)
    res = solve_schedule(sc)
    rep = verify_against_oracle(res, sc)
    assert not [v for v in rep.violations if v.kind == "imax"]
    tampered = dataclasses.replace(res, dp=res.dp - 0.35)  # 350 kW of extra LV draw
    rep2 = verify_against_oracle(tampered, sc)
    assert any(v.kind == "imax" and v.scope == "mv" for v in rep2.violations)


def test_verify_reports_lv_exactly(swisslike12_schedule):
    sc, res = swisslike12_schedule
    rep = verify_against_oracle(res, sc)
    assert rep.lv_exact
    assert rep.mv_voltage_diff <= 1e-5
    assert rep.lv_voltage_diff <= 1e-3  # sqrt-coupling linearization scale
    assert not rep.violations


# ---------------------------------------------------------------------------
# slicing
# ---------------------------------------------------------------------------


def test_slice_scenario_reanchors_soc():
    sc = mv_with_lv(horizon=6, ev=True)
    sub = slice_scenario(sc, 3, 6)
    assert sub.series.horizon == 3
    ev = [r for r in sub.resources if r.id == "ev1"][0]
    c = ev.eta * sc.series.step_hours * sc.network.base_kva / ev.capacity_kwh
    consumed = float(np.sum(sc.resource_baseline_pu("ev1")[:3, 0]))
    assert ev.soc0 == pytest.approx(0.5 - c * consumed)
    assert len(sub.lv_grids["LV1"].ops) == 3


def test_slice_validates_range(twobus_sc):
    with pytest.raises(ValueError):
        slice_scenario(twobus_sc, 3, 2)
