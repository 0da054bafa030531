"""Grid model: validation, DistFlow oracle, per-unit round trip."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridflex.errors import NonConvergence
from gridflex.network import (
    Branch,
    MvNetwork,
    Node,
    NodeInjection,
    Resource,
    ResourceKind,
    TimeSeries,
    TransformerLink,
    from_physical,
    losses,
    solve_distflow_fixed_point,
    to_physical,
    tree_order,
    validate_network,
)


def three_node_feeder() -> MvNetwork:
    return MvNetwork(
        name="feeder3",
        nodes=(Node("N0"), Node("N1"), Node("N2")),
        branches=(Branch("N0", "N1", 0.01, 0.02, 1.0), Branch("N1", "N2", 0.02, 0.01, 0.8)),
        slack="N0",
    )


def two_bus(r=0.01, x=0.01) -> MvNetwork:
    return MvNetwork(
        name="twobus",
        nodes=(Node("A"), Node("B")),
        branches=(Branch("A", "B", r, x, 2.0),),
        slack="A",
    )


# ---------------------------------------------------------------------------
# validate_network
# ---------------------------------------------------------------------------


def test_valid_feeder_has_empty_report():
    report = validate_network(three_node_feeder())
    assert report.ok
    assert report.issues == ()


def test_cycle_reports_radiality():
    net = MvNetwork(
        name="cycle",
        nodes=(Node("N0"), Node("N1"), Node("N2")),
        branches=(
            Branch("N0", "N1", 0.01, 0.01, 1.0),
            Branch("N1", "N2", 0.01, 0.01, 1.0),
            Branch("N2", "N0", 0.01, 0.01, 1.0),
        ),
        slack="N0",
    )
    assert "RadialityViolated" in validate_network(net).codes()


def test_zero_ampacity_reported():
    net = MvNetwork(
        name="bad",
        nodes=(Node("N0"), Node("N1")),
        branches=(Branch("N0", "N1", 0.01, 0.01, 0.0),),
        slack="N0",
    )
    assert "NonPositiveAmpacity" in validate_network(net).codes()


def test_disconnected_and_bad_links_reported():
    net = MvNetwork(
        name="frag",
        nodes=(Node("N0"), Node("N1"), Node("N2"), Node("N3")),
        branches=(Branch("N0", "N1", 0.01, 0.01, 1.0), Branch("N2", "N3", 0.01, 0.01, 1.0)),
        slack="N0",
        transformers=(TransformerLink("NX", "LV1"), TransformerLink("N1", "LV1")),
    )
    codes = validate_network(net).codes()
    assert "Disconnected" in codes
    assert "RadialityViolated" in codes
    assert "BadTransformerLink" in codes
    assert "DuplicateTransformerGrid" in codes


def test_validation_never_raises_on_bad_bands():
    net = MvNetwork(
        name="band",
        nodes=(Node("N0", vmin=1.1, vmax=0.9), Node("N1", vmin=-1.0, vmax=float("nan"))),
        branches=(Branch("N0", "N1", -0.01, float("inf"), 1.0),),
        slack="N0",
    )
    codes = validate_network(net).codes()
    assert "BadVoltageBand" in codes
    assert "NegativeResistance" in codes
    assert "NonFiniteImpedance" in codes


# ---------------------------------------------------------------------------
# DistFlow oracle
# ---------------------------------------------------------------------------


def test_no_load_flat_state():
    net = three_node_feeder()
    st_ = solve_distflow_fixed_point(net, [], slack_v=1.0)
    assert np.allclose(st_.v, 1.0)
    assert np.allclose(st_.l, 0.0)
    assert np.allclose(st_.p_flow, 0.0)
    assert st_.slack_p == pytest.approx(0.0, abs=1e-15)


def test_two_bus_reference_values():
    # fixed-point solution of the exact DistFlow equalities, frozen from an
    # independent run of the same recursion at 1e-14 tolerance
    net = two_bus()
    st_ = solve_distflow_fixed_point(net, [NodeInjection("B", pc=0.1, qc=0.02)], slack_v=1.0)
    assert st_.v[1] == pytest.approx(0.997598, abs=5e-7)
    assert st_.l[0] == pytest.approx(0.010425, abs=5e-7)
    assert st_.residual <= 1e-10


def test_oracle_residual_and_power_balance():
    net = three_node_feeder()
    inj = [
        NodeInjection("N1", pc=0.2, qc=0.05),
        NodeInjection("N2", pg=0.05, qc=0.02),
    ]
    st_ = solve_distflow_fixed_point(net, inj, slack_v=1.02)
    assert st_.residual <= 1e-10
    # slack import covers net load plus losses
    net_load = 0.2 - 0.05
    assert st_.slack_p - net_load == pytest.approx(losses(net, st_), abs=1e-9)


def test_overload_raises_nonconvergence():
    net = two_bus()
    with pytest.raises(NonConvergence):
        solve_distflow_fixed_point(net, [NodeInjection("B", pc=30.0)], slack_v=1.0)


def test_transformer_offtake_counts_as_load():
    net = three_node_feeder()
    net = MvNetwork(
        name=net.name,
        nodes=net.nodes,
        branches=net.branches,
        slack=net.slack,
        transformers=(TransformerLink("N2", "LV1"),),
    )
    st_ = solve_distflow_fixed_point(
        net, [], slack_v=1.0, transformer_offtakes={"LV1": (0.1, 0.02)}
    )
    direct = solve_distflow_fixed_point(net, [NodeInjection("N2", pc=0.1, qc=0.02)], slack_v=1.0)
    assert np.allclose(st_.v, direct.v, atol=1e-12)
    assert st_.tr_p[0] == 0.1 and st_.tr_q[0] == 0.02
    assert st_.slack_p == pytest.approx(direct.slack_p, abs=1e-12)


def test_oracle_deterministic():
    net = three_node_feeder()
    inj = [NodeInjection("N2", pc=0.15, qc=0.03)]
    a = solve_distflow_fixed_point(net, inj)
    b = solve_distflow_fixed_point(net, inj)
    assert np.array_equal(a.v, b.v) and np.array_equal(a.l, b.l)


def test_branch_orientation_independent():
    # reversing the stored direction of a branch must not change the physics
    net = three_node_feeder()
    flipped = MvNetwork(
        name="flipped",
        nodes=net.nodes,
        branches=(net.branches[0], Branch("N2", "N1", 0.02, 0.01, 0.8)),
        slack="N0",
    )
    inj = [NodeInjection("N2", pc=0.1, qc=0.02)]
    a = solve_distflow_fixed_point(net, inj)
    b = solve_distflow_fixed_point(flipped, inj)
    assert np.allclose(a.v, b.v, atol=1e-12)
    assert np.allclose(a.l, b.l, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(
    p=st.floats(min_value=-0.3, max_value=0.5),
    q=st.floats(min_value=-0.2, max_value=0.2),
    slack_v=st.floats(min_value=0.9, max_value=1.1),
)
def test_power_balance_property(p, q, slack_v):
    net = two_bus(r=0.015, x=0.02)
    st_ = solve_distflow_fixed_point(net, [NodeInjection("B", pc=p, qc=q)], slack_v=slack_v)
    assert st_.residual <= 1e-10
    assert st_.slack_p - p == pytest.approx(losses(net, st_), abs=1e-9)


# ---------------------------------------------------------------------------
# per-unit round trip
# ---------------------------------------------------------------------------


@settings(max_examples=30, deadline=None)
@given(
    r=st.floats(min_value=1e-6, max_value=10.0),
    x=st.floats(min_value=-5.0, max_value=5.0),
    imax=st.floats(min_value=1e-6, max_value=10.0),
    base_kva=st.floats(min_value=10.0, max_value=1e6),
    base_kv=st.floats(min_value=0.4, max_value=150.0),
)
def test_per_unit_round_trip(r, x, imax, base_kva, base_kv):
    net = MvNetwork(
        name="rt",
        nodes=(Node("A"), Node("B")),
        branches=(Branch("A", "B", r, x, imax),),
        slack="A",
        base_kva=base_kva,
        base_kv=base_kv,
    )
    back = from_physical(to_physical(net))
    b0, b1 = net.branches[0], back.branches[0]
    assert b1.r == pytest.approx(b0.r, rel=1e-12)
    assert b1.x == pytest.approx(b0.x, rel=1e-12, abs=1e-300)
    assert b1.i_max == pytest.approx(b0.i_max, rel=1e-12)


# ---------------------------------------------------------------------------
# domain type invariants
# ---------------------------------------------------------------------------


def test_resource_invariants_enforced():
    ok = Resource(
        id="ev1",
        lv_grid="LV1",
        lv_node="n2",
        kind=ResourceKind.EV_STORAGE,
        dp_min_kw=-8.0,
        dp_max_kw=8.0,
        dq_min_kvar=0.0,
        dq_max_kvar=0.0,
        s_kva=10.0,
        ramp_kw_per_hr=48.0,
        eta=0.92,
        capacity_kwh=40.0,
    )
    assert ok.is_storage
    with pytest.raises(ValueError):
        Resource("bad", "LV1", "n2", ResourceKind.PV, dp_min_kw=1.0, dp_max_kw=-1.0, s_kva=5.0)
    with pytest.raises(ValueError):
        Resource(
            "bad2",
            "LV1",
            "n2",
            ResourceKind.EV_STORAGE,
            dp_min_kw=-1.0,
            dp_max_kw=1.0,
            s_kva=5.0,
            capacity_kwh=10.0,
            soc_min=0.9,
            soc_max=0.1,
        )


def test_timeseries_shape_checks():
    with pytest.raises(ValueError):
        TimeSeries(step_minutes=10, horizon=2, mv_injections={"N1": np.zeros((3, 2))})
    ts = TimeSeries(step_minutes=10, horizon=2, mv_injections={"N1": np.zeros((2, 2))})
    assert ts.step_hours == pytest.approx(1 / 6)


def test_tree_order_orients_away_from_slack():
    net = three_node_feeder()
    order = tree_order(net)
    assert order.node_ids[order.slack_index] == "N0"
    assert order.parent_branch[order.slack_index] == -1
    # every non-slack node has exactly one feeding branch
    assert sorted(order.branch_to) == [1, 2]
