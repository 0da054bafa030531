"""Bundled synthetic scenarios.

Two scenarios ship with the package: ``twobus``, a 2-node verification
instance, and ``swisslike``, a synthetic feeder mirroring the study
parameters of the deployment the tooling targets (about 15 MV nodes, three
LV grids, 200 kWp of PV with 10% curtailment capability, 12 EV charging
points with 0.1-0.9 SOC bands, 10-minute steps, 0.90 power-factor control).
Profiles are generated deterministically from a fixed seed; real measurement
data is proprietary and is not reproduced.

Smaller constructed instances used by the verification suite (two-resource
envelope oracle, lossless curtailment feeder) also live here so tests and
examples share one source.
"""

from __future__ import annotations

import math
from dataclasses import replace

import numpy as np

from .network import (
    Branch,
    MvNetwork,
    Node,
    ObjectiveWeights,
    Resource,
    ResourceKind,
    TimeSeries,
    TransformerLink,
)
from .opf import LvGridModel, OpfScenario, assemble_lv_grids
from .sensitivity import LvOperatingPoint, SensitivityModel

__all__ = [
    "twobus",
    "swisslike",
    "two_resource",
    "lossless_curtailment",
    "zero_flexibility",
]

SEED = 20200901  # typical day in September 2020


# ---------------------------------------------------------------------------
# profiles
# ---------------------------------------------------------------------------


def _hours(T: int, step_minutes: float) -> np.ndarray:
    return np.arange(T) * step_minutes / 60.0


def _residential_shape(hours: np.ndarray, phase: float) -> np.ndarray:
    base = 0.55
    morning = 0.30 * np.exp(-(((hours % 24) - 7.8) / 2.0) ** 2)
    evening = 0.50 * np.exp(-(((hours % 24) - 19.3) / 2.6) ** 2)
    wobble = 0.04 * np.sin(2 * math.pi * hours / 24 * 3 + phase)
    return base + morning + evening + wobble


def _pv_shape(hours: np.ndarray) -> np.ndarray:
    h = hours % 24
    up = np.clip(np.sin((h - 6.3) / 12.4 * math.pi), 0.0, None)
    return up**2


def _ev_profile(rng, T: int, step_minutes: float, level_kw: float) -> np.ndarray:
    """Charging blocks (injection-negative), overnight or evening."""
    hours = _hours(T, step_minutes)
    p = np.zeros(T)
    if rng.random() < 0.6:
        start = rng.uniform(21.0, 23.0)
        dur = rng.uniform(5.0, 7.5)
    else:
        start = rng.uniform(16.5, 18.5)
        dur = rng.uniform(3.0, 5.0)
    h = hours % 24
    mask = ((h - start) % 24.0) < dur
    p[mask] = -level_kw
    return p


# ---------------------------------------------------------------------------
# twobus
# ---------------------------------------------------------------------------


def twobus(horizon: int = 4) -> OpfScenario:
    """2-node verification instance: slack plus one load node, no LV grids."""
    net = MvNetwork(
        name="twobus",
        nodes=(Node("A", 0.9, 1.1), Node("B", 0.9, 1.1)),
        branches=(Branch("A", "B", 0.01, 0.01, 2.0),),
        slack="A",
        base_kva=1000.0,
        base_kv=20.0,
    )
    t = np.arange(horizon)
    p = -(0.10 + 0.01 * (t % 4))  # consumption, p.u.
    q = -(0.02 + 0.002 * (t % 3))
    series = TimeSeries(
        step_minutes=10.0,
        horizon=horizon,
        mv_injections={"B": np.column_stack([p, q])},
    )
    return OpfScenario(
        name="twobus",
        network=net,
        lv_grids={},
        resources=(),
        series=series,
        weights=ObjectiveWeights(w_l=1.0, w_v=100.0, w_lim=100.0),
        slack_v0=1.0,
        slack_v_bounds=(1.0, 1.0),
    )


# ---------------------------------------------------------------------------
# swisslike
# ---------------------------------------------------------------------------

_MV_BRANCHES = (
    # spine
    ("M0", "M1", 0.006, 0.008, 1.2),
    ("M1", "M2", 0.006, 0.008, 1.2),
    ("M2", "M3", 0.007, 0.009, 1.0),
    ("M3", "M4", 0.007, 0.009, 0.9),
    ("M4", "M5", 0.008, 0.010, 0.8),
    # laterals
    ("M2", "M6", 0.010, 0.009, 0.5),
    ("M6", "M7", 0.012, 0.010, 0.5),
    ("M3", "M8", 0.009, 0.008, 0.5),
    ("M8", "M9", 0.011, 0.009, 0.5),
    ("M5", "M10", 0.010, 0.009, 0.5),
    ("M10", "M11", 0.012, 0.010, 0.4),
    ("M1", "M12", 0.008, 0.008, 0.6),
    ("M12", "M13", 0.010, 0.009, 0.5),
    ("M13", "M14", 0.012, 0.010, 0.5),
)

_MV_LOADS_KW = {
    "M1": 260.0,
    "M2": 180.0,
    "M4": 310.0,
    "M5": 190.0,
    "M6": 150.0,
    "M7": 120.0,
    "M8": 220.0,
    "M9": 140.0,
    "M10": 170.0,
    "M11": 110.0,
    "M12": 200.0,
    "M13": 160.0,
    "M14": 130.0,
}


def _lv_feeder(name: str, seed_r: float) -> MvNetwork:
    r = seed_r
    return MvNetwork(
        name=name,
        nodes=tuple(Node(nid, 0.90, 1.10) for nid in ("s", "n1", "n2", "n3", "n4", "n5")),
        branches=(
            Branch("s", "n1", r, 0.3 * r, 0.10),
            Branch("n1", "n2", 1.2 * r, 0.35 * r, 0.08),
            Branch("n1", "n3", 1.4 * r, 0.40 * r, 0.08),
            Branch("n3", "n4", 1.1 * r, 0.32 * r, 0.06),
            Branch("n2", "n5", 1.3 * r, 0.36 * r, 0.06),
        ),
        slack="s",
        base_kva=5000.0,
        base_kv=0.4,
    )


def swisslike(horizon: int = 144, *, with_schedule: bool = False) -> OpfScenario:
    """Synthetic feeder with study-like parameters.

    15 MV nodes, three LV grids, 200 kWp of PV (10% curtailment), 12 EV
    charging points (+-4 kW around their charging blocks within an 8 kW
    connection, SOC 0.1-0.9, 80 kWh), two slow demand-response loads, 10-min
    steps. Deterministic profiles from a fixed seed.
    """
    rng = np.random.default_rng(SEED)
    base_kva = 5000.0
    net = MvNetwork(
        name="swisslike",
        nodes=tuple(Node(f"M{i}", 0.95, 1.05) for i in range(15)),
        branches=tuple(Branch(*b) for b in _MV_BRANCHES),
        slack="M0",
        transformers=(
            TransformerLink("M7", "LV1"),
            TransformerLink("M9", "LV2"),
            TransformerLink("M14", "LV3"),
        ),
        base_kva=base_kva,
        base_kv=20.0,
    )
    lv_nets = {
        "LV1": _lv_feeder("LV1", 0.20),
        "LV2": _lv_feeder("LV2", 0.16),
        "LV3": _lv_feeder("LV3", 0.22),
    }

    pvs = (
        ("pv1", "LV1", "n3", 60.0),
        ("pv2", "LV2", "n2", 80.0),
        ("pv3", "LV3", "n4", 60.0),
    )
    resources: list[Resource] = []
    for rid, gid, nid, kwp in pvs:
        resources.append(
            Resource(
                id=rid,
                lv_grid=gid,
                lv_node=nid,
                kind=ResourceKind.PV,
                dp_min_kw=-0.10 * kwp,
                dp_max_kw=0.0,
                dq_min_kvar=-0.45 * kwp,
                dq_max_kvar=0.45 * kwp,
                s_kva=kwp,
                pf_limit=0.90,
                ramp_kw_per_hr=6.0 * kwp,  # inverter control, fast
            )
        )
    ev_nodes = ("n1", "n2", "n4", "n5")
    for i in range(12):
        gid = ("LV1", "LV2", "LV3")[i % 3]
        resources.append(
            Resource(
                id=f"ev{i + 1}",
                lv_grid=gid,
                lv_node=ev_nodes[(i // 3) % 4],
                kind=ResourceKind.EV_STORAGE,
                dp_min_kw=-4.0,
                dp_max_kw=4.0,
                dq_min_kvar=0.0,
                dq_max_kvar=0.0,
                s_kva=8.0,
                pf_limit=0.90,
                ramp_kw_per_hr=48.0,  # full swing within one 10-min step
                eta=0.92,
                capacity_kwh=80.0,
                soc_min=0.1,
                soc_max=0.9,
                soc0=0.35,
            )
        )
    for rid, gid, nid in (("dr1", "LV1", "n5"), ("dr2", "LV3", "n2")):
        resources.append(
            Resource(
                id=rid,
                lv_grid=gid,
                lv_node=nid,
                kind=ResourceKind.LOAD,
                dp_min_kw=-5.0,
                dp_max_kw=5.0,
                dq_min_kvar=0.0,
                dq_max_kvar=0.0,
                s_kva=8.0,
                pf_limit=0.90,
                ramp_kw_per_hr=3.0,  # slow demand response
            )
        )

    hours = _hours(horizon, 10.0)
    mv_injections = {}
    for nid, peak in _MV_LOADS_KW.items():
        shape = _residential_shape(hours, phase=rng.uniform(0, 2 * math.pi))
        p_kw = peak * shape * rng.uniform(0.95, 1.05)
        mv_injections[nid] = np.column_stack([-p_kw, -0.25 * p_kw]) / base_kva

    lv_background = {}
    for gid in lv_nets:
        per_node = {}
        for nid in ("n1", "n2", "n3", "n4", "n5"):
            peak = rng.uniform(4.0, 11.0)
            shape = _residential_shape(hours, phase=rng.uniform(0, 2 * math.pi))
            per_node[nid] = np.column_stack([-peak * shape, -0.3 * peak * shape]) / base_kva
        lv_background[gid] = per_node

    resource_baselines = {}
    pv_shape = _pv_shape(hours)
    for rid, gid, nid, kwp in pvs:
        p_kw = 0.92 * kwp * pv_shape
        resource_baselines[rid] = np.column_stack([p_kw, np.zeros(horizon)]) / base_kva
    for res in resources:
        if res.kind is ResourceKind.EV_STORAGE:
            p_kw = _ev_profile(rng, horizon, 10.0, level_kw=4.0)
            resource_baselines[res.id] = np.column_stack([p_kw, np.zeros(horizon)]) / base_kva
        elif res.kind is ResourceKind.LOAD:
            resource_baselines[res.id] = np.zeros((horizon, 2))

    schedule = None
    if with_schedule:
        # flat import schedule at the daily mean baseline exchange
        total_kw = sum(-v[:, 0] for v in mv_injections.values()) * base_kva
        schedule = np.column_stack(
            [np.full(horizon, total_kw.mean()), np.full(horizon, 0.25 * total_kw.mean())]
        ) / base_kva

    series = TimeSeries(
        step_minutes=10.0,
        horizon=horizon,
        mv_injections=mv_injections,
        resource_baselines=resource_baselines,
        lv_background=lv_background,
        tso_schedule=schedule,
    )
    lv_grids = assemble_lv_grids(lv_nets, tuple(resources), series)
    return OpfScenario(
        name="swisslike",
        network=net,
        lv_grids=lv_grids,
        resources=tuple(resources),
        series=series,
        weights=ObjectiveWeights(w_l=1.0, w_v=100.0, w_lim=100.0),
        slack_v0=1.0,
        slack_v_bounds=(1.0, 1.0),
    )


# ---------------------------------------------------------------------------
# constructed verification instances
# ---------------------------------------------------------------------------


def two_resource(horizon: int = 1) -> OpfScenario:
    """Two flexible resources with generous grid limits.

    Designed for brute-force envelope comparison: losses are small and no
    grid limit binds, so the reachable set is essentially the summed box.
    """
    net = MvNetwork(
        name="two_resource",
        nodes=(Node("A", 0.9, 1.1), Node("B", 0.9, 1.1)),
        branches=(Branch("A", "B", 0.003, 0.003, 2.0),),
        slack="A",
        transformers=(TransformerLink("B", "LV"),),
        base_kva=1000.0,
        base_kv=20.0,
    )
    lv = MvNetwork(
        name="LV",
        nodes=(Node("s", 0.85, 1.15), Node("a", 0.85, 1.15), Node("b", 0.85, 1.15)),
        branches=(Branch("s", "a", 0.02, 0.008, 1.0), Branch("a", "b", 0.02, 0.008, 1.0)),
        slack="s",
        base_kva=1000.0,
        base_kv=0.4,
    )
    # one active-power and one reactive-power resource keep the search space
    # two-dimensional, so a planar grid search is an exhaustive oracle
    r1 = Resource(
        id="flex_a",
        lv_grid="LV",
        lv_node="a",
        kind=ResourceKind.LOAD,
        dp_min_kw=-10.0,
        dp_max_kw=10.0,
        dq_min_kvar=0.0,
        dq_max_kvar=0.0,
        s_kva=40.0,
        pf_limit=0.2,
        ramp_kw_per_hr=100.0,
    )
    r2 = Resource(
        id="flex_b",
        lv_grid="LV",
        lv_node="b",
        kind=ResourceKind.LOAD,
        dp_min_kw=0.0,
        dp_max_kw=0.0,
        dq_min_kvar=-6.0,
        dq_max_kvar=8.0,
        s_kva=40.0,
        pf_limit=0.2,
        ramp_kw_per_hr=100.0,
    )
    series = TimeSeries(
        step_minutes=10.0,
        horizon=horizon,
        mv_injections={"B": np.tile([-0.08, -0.02], (horizon, 1))},
        resource_baselines={
            "flex_a": np.tile([-0.005, -0.001], (horizon, 1)),
            "flex_b": np.tile([-0.004, -0.001], (horizon, 1)),
        },
        lv_background={"LV": {"a": np.tile([-0.006, -0.002], (horizon, 1))}},
    )
    lv_grids = assemble_lv_grids({"LV": lv}, (r1, r2), series)
    return OpfScenario(
        name="two_resource",
        network=net,
        lv_grids=lv_grids,
        resources=(r1, r2),
        series=series,
        weights=ObjectiveWeights(w_l=1.0, w_v=100.0, w_lim=100.0),
        slack_v0=1.0,
        slack_v_bounds=(1.0, 1.0),
    )


def lossless_curtailment(overvoltage_kw: float = 5.0) -> OpfScenario:
    """Lossless MV feeder whose LV grid needs exactly ``overvoltage_kw`` of
    PV curtailment to respect its hard voltage ceiling.

    The LV grid is coefficient-based with a hand-set voltage sensitivity, so
    the required curtailment is exact by construction; the schedule-deviation
    term pulls the operation problem to the minimal remedy.
    """
    base_kva = 1000.0
    k_vp = 0.5  # p.u. voltage per p.u. injection at node "a"
    net = MvNetwork(
        name="lossless",
        nodes=(Node("A", 0.9, 1.1), Node("B", 0.9, 1.1)),
        branches=(Branch("A", "B", 0.0, 0.0, 2.0),),
        slack="A",
        transformers=(TransformerLink("B", "LVC"),),
        base_kva=base_kva,
        base_kv=20.0,
    )
    vmax_lv = 1.05
    over = k_vp * overvoltage_kw / base_kva
    model = SensitivityModel(
        grid="LVC",
        node_ids=("s", "a"),
        branch_labels=("s-a",),
        injectors=("a",),
        k_vp=np.array([[0.0], [k_vp]]),
        k_vq=np.array([[0.0], [0.2]]),
        k_ip=np.array([[-0.9]]),
        k_iq=np.array([[-0.2]]),
    )
    op = LvOperatingPoint(
        grid="LVC",
        step=0,
        v0=np.array([1.0, vmax_lv + over]),
        i0=np.array([0.012]),
        drop=np.array([0.0, 1.0 - (vmax_lv + over)]),  # negative drop: PV raises voltage
        p_slack=-0.008,
        q_slack=0.001,
    )
    pv = Resource(
        id="pv",
        lv_grid="LVC",
        lv_node="a",
        kind=ResourceKind.PV,
        dp_min_kw=-10.0,
        dp_max_kw=0.0,
        dq_min_kvar=0.0,
        dq_max_kvar=0.0,
        s_kva=30.0,
        pf_limit=0.90,
        ramp_kw_per_hr=100.0,
    )
    horizon = 1
    baseline_mv_load = np.tile([-0.05, -0.015], (horizon, 1))
    series = TimeSeries(
        step_minutes=10.0,
        horizon=horizon,
        mv_injections={"B": baseline_mv_load},
        resource_baselines={"pv": np.tile([0.012, 0.0], (horizon, 1))},
        # baseline exchange: MV load plus LV boundary draw (MV itself lossless)
        tso_schedule=np.tile([0.05 + op.p_slack, 0.015 + op.q_slack], (horizon, 1)),
    )
    lv_grids = {
        "LVC": LvGridModel(
            grid="LVC",
            models=(model,) * horizon,
            ops=(op,) * horizon,
        )
    }
    from .opf import SecurityLimits

    limits = SecurityLimits(
        mv_vmin2=np.array([0.9**2, 0.9**2]),
        mv_vmax2=np.array([1.1**2, 1.1**2]),
        mv_lmax=np.array([4.0]),
        lv_vmin={"LVC": np.array([0.90, 0.90])},
        lv_vmax={"LVC": np.array([1.10, vmax_lv])},
        lv_imax={"LVC": np.array([math.inf])},
    )
    sc = OpfScenario(
        name="lossless",
        network=net,
        lv_grids=lv_grids,
        resources=(pv,),
        series=series,
        weights=ObjectiveWeights(w_l=1.0, w_v=100.0, w_lim=100.0, w_p=1.0, w_q=1.0),
        limits=limits,
        slack_v0=1.0,
        slack_v_bounds=(1.0, 1.0),
        relaxation_gap_threshold=math.inf,  # r = x = 0 leaves branch current free
    )
    return sc


def zero_flexibility(sc: OpfScenario) -> OpfScenario:
    """Variant of ``sc`` with every flexibility box collapsed to zero."""
    frozen = tuple(
        replace(r, dp_min_kw=0.0, dp_max_kw=0.0, dq_min_kvar=0.0, dq_max_kvar=0.0)
        for r in sc.resources
    )
    return replace(sc, resources=frozen)


def main(argv=None) -> int:
    """Write the bundled scenarios as CSV bundles: ``python -m gridflex.bundled DIR``."""
    import argparse

    from .ingest import save_scenario

    parser = argparse.ArgumentParser(description="write the bundled scenarios to disk")
    parser.add_argument("out_dir")
    parser.add_argument("--horizon", type=int, default=144, help="swisslike horizon (steps)")
    args = parser.parse_args(argv)
    for name, sc in (("twobus", twobus()), ("swisslike", swisslike(horizon=args.horizon))):
        path = save_scenario(sc, f"{args.out_dir}/{name}")
        print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
