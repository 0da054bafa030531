"""Combined multi-period MV+LV optimal operation.

The MV network is modeled by the second-order-cone relaxation of the DistFlow
equations in squared variables; each attached LV grid enters through its
linear sensitivity model, coupled via the MV/LV transformer flows and the
linearized square-root voltage relation. MV security is soft (piecewise
linear penalty epigraphs on squared-voltage and squared-current excess),
LV security is hard, inverters carry power-factor bands and over-rated
apparent-power cones, and storage resources are tied across steps by state
of charge chains.

One builder assembles both faces of the formulation: the penalty-based
operation problem solved here, and the hard-constrained flexibility problem
that :mod:`gridflex.envelope` maximizes over. The whole horizon is solved as
one program; a window option provides a rolling-horizon fallback for very
long horizons.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np

from .conic import ConicProgram, Expr, Solution, SolverSettings, solve
from .errors import InconsistentScenario, OracleFailure
from .network import (
    MvNetwork,
    MvState,
    ObjectiveWeights,
    Resource,
    ResourceKind,
    TimeSeries,
    solve_distflow_fixed_point,
    tree_order,
    validate_network,
)
from .sensitivity import (
    LvOperatingPoint,
    LvState,
    SensitivityModel,
    coefficients_from_reference,
    couple_lv_voltage,
    feeder_rating,
    operating_point_from_reference,
    predict_state,
)

__all__ = [
    "LvGridModel",
    "SecurityLimits",
    "OpfScenario",
    "CombinedProgram",
    "ObjectiveBreakdown",
    "ScheduleResult",
    "Violation",
    "VerificationReport",
    "BuildOptions",
    "build_program",
    "build_combined_program",
    "decode_schedule",
    "solve_schedule",
    "assemble_lv_grids",
    "objective_breakdown",
    "verify_against_oracle",
    "baseline_mv_state",
]

_WIDE_V = (0.25, 4.0)  # sanity box for penalized squared MV voltages


@dataclass(frozen=True)
class LvGridModel:
    """Modeling data of one LV grid: a sensitivity model per step.

    ``models``/``ops`` have one entry per horizon step; the same model object
    may be shared across steps (coefficients are refreshed only when the
    operating point moves beyond the trust radius). ``reference_net`` and
    ``background`` are kept when the grid was built from a full LV model so
    that verification can re-run the exact LV load flow.
    """

    grid: str
    models: tuple[SensitivityModel, ...]
    ops: tuple[LvOperatingPoint, ...]
    reference_net: MvNetwork | None = None
    background: Mapping[str, np.ndarray] | None = None
    trust_radius_pu: float = math.inf


@dataclass(frozen=True)
class SecurityLimits:
    """Hard security limits per element.

    MV limits live in the squared domain used by the conic formulation,
    LV limits in magnitude domain (the LV model is linear in magnitudes).
    """

    mv_vmin2: np.ndarray
    mv_vmax2: np.ndarray
    mv_lmax: np.ndarray
    lv_vmin: Mapping[str, np.ndarray]
    lv_vmax: Mapping[str, np.ndarray]
    lv_imax: Mapping[str, np.ndarray]

    @classmethod
    def from_networks(cls, net: MvNetwork, lv_grids: Mapping[str, LvGridModel]) -> "SecurityLimits":
        lv_vmin, lv_vmax, lv_imax = {}, {}, {}
        for gid, lv in lv_grids.items():
            model = lv.models[0]
            if lv.reference_net is not None:
                nodes = lv.reference_net.nodes
                lv_vmin[gid] = np.array([n.vmin for n in nodes])
                lv_vmax[gid] = np.array([n.vmax for n in nodes])
                lv_imax[gid] = np.array([b.i_max for b in lv.reference_net.branches])
            else:
                lv_vmin[gid] = np.full(len(model.node_ids), 0.9)
                lv_vmax[gid] = np.full(len(model.node_ids), 1.1)
                lv_imax[gid] = np.full(len(model.branch_labels), math.inf)
        return cls(
            mv_vmin2=np.array([n.vmin**2 for n in net.nodes]),
            mv_vmax2=np.array([n.vmax**2 for n in net.nodes]),
            mv_lmax=np.array([b.i_max**2 for b in net.branches]),
            lv_vmin=lv_vmin,
            lv_vmax=lv_vmax,
            lv_imax=lv_imax,
        )


@dataclass(frozen=True)
class OpfScenario:
    """Everything needed to build the combined problem for one horizon."""

    name: str
    network: MvNetwork
    lv_grids: Mapping[str, LvGridModel]
    resources: tuple[Resource, ...]
    series: TimeSeries
    weights: ObjectiveWeights = ObjectiveWeights()
    limits: SecurityLimits | None = None
    slack_v0: float = 1.0  # magnitude, p.u.
    slack_v_bounds: tuple[float, float] = (0.95, 1.05)  # magnitudes
    relaxation_gap_threshold: float = 1e-4
    inverter_overrating: float = 1.1

    def security_limits(self) -> SecurityLimits:
        return self.limits or SecurityLimits.from_networks(self.network, self.lv_grids)

    def storage_resources(self) -> tuple[Resource, ...]:
        return tuple(r for r in self.resources if r.is_storage)

    def resource_baseline_pu(self, rid: str) -> np.ndarray:
        base = self.series.resource_baselines.get(rid)
        if base is None:
            return np.zeros((self.series.horizon, 2))
        return np.asarray(base, dtype=float)

    def validate(self) -> list[str]:
        """Collect scenario defects; empty list means buildable."""
        defects: list[str] = []
        net_report = validate_network(self.network)
        defects.extend(f"network: {i.message}" for i in net_report.issues)
        T = self.series.horizon
        linked = {t.lv_grid for t in self.network.transformers}
        for gid in linked:
            if gid not in self.lv_grids:
                defects.append(f"transformer links LV grid {gid!r} but no model is provided")
        for gid, lv in self.lv_grids.items():
            if gid not in linked:
                defects.append(f"LV grid {gid!r} has a model but no transformer link")
            if len(lv.models) != T or len(lv.ops) != T:
                defects.append(
                    f"LV grid {gid!r}: {len(lv.models)} models / {len(lv.ops)} operating "
                    f"points for horizon {T}"
                )
            for step, (m, op) in enumerate(zip(lv.models, lv.ops)):
                if len(op.v0) != len(m.node_ids) or len(op.i0) != len(m.branch_labels):
                    defects.append(f"LV grid {gid!r} step {step}: operating point shape mismatch")
                    break
        ids = set()
        for r in self.resources:
            if r.id in ids:
                defects.append(f"duplicate resource id {r.id!r}")
            ids.add(r.id)
            lv = self.lv_grids.get(r.lv_grid)
            if lv is None:
                defects.append(f"resource {r.id!r} hosted in unknown LV grid {r.lv_grid!r}")
                continue
            for m in lv.models:
                if r.lv_node not in m.injectors:
                    defects.append(
                        f"resource {r.id!r}: node {r.lv_node!r} is not an injector of "
                        f"LV grid {r.lv_grid!r}"
                    )
                    break
        for rid in self.series.resource_baselines:
            if rid not in ids:
                defects.append(f"baseline series for unknown resource {rid!r}")
        known_nodes = set(self.network.node_ids())
        for nid in self.series.mv_injections:
            if nid not in known_nodes:
                defects.append(f"injection series for unknown MV node {nid!r}")
        if self.series.tso_schedule is not None and self.series.tso_schedule.shape != (T, 2):
            defects.append("TSO schedule must be one (p, q) pair per step")
        if not self.slack_v_bounds[0] <= self.slack_v0 <= self.slack_v_bounds[1]:
            defects.append("slack_v0 outside slack_v_bounds")
        return defects


# ---------------------------------------------------------------------------
# Builder
# ---------------------------------------------------------------------------


@dataclass
class CombinedIndex:
    """Variable index map of a built program, for decoding solutions."""

    T: int
    node_ids: tuple[str, ...]
    branch_labels: tuple[str, ...]
    grid_order: tuple[str, ...]
    resource_ids: tuple[str, ...]
    storage_ids: tuple[str, ...]
    v: np.ndarray
    l: np.ndarray
    fp: np.ndarray
    fq: np.ndarray
    tr_p: np.ndarray
    tr_q: np.ndarray
    slack_p: np.ndarray
    slack_q: np.ndarray
    dp: np.ndarray
    dq: np.ndarray
    soc: np.ndarray
    vdev: np.ndarray | None = None
    ldev: np.ndarray | None = None
    sdev_p: np.ndarray | None = None
    sdev_q: np.ndarray | None = None
    denv_p: np.ndarray | None = None
    denv_q: np.ndarray | None = None
    lguard: np.ndarray | None = None


@dataclass(frozen=True)
class CombinedProgram:
    program: ConicProgram
    index: CombinedIndex


@dataclass(frozen=True)
class BuildOptions:
    """Which face of the formulation to assemble.

    The operation problem uses soft MV security (penalty epigraphs) and a
    bounded slack voltage; the flexibility problem uses hard security
    everywhere, pins the slack voltage, freezes ineligible resources, adds
    per-step ramp caps, and tracks the slack-exchange deviation from a given
    baseline.
    """

    hard_mv_security: bool = False
    pin_slack_voltage: bool = False
    frozen_resources: frozenset[str] = frozenset()
    ramp_caps: bool = False
    box_override_pu: Mapping[str, np.ndarray] | None = None  # rid -> (T, 2, 2)
    baseline_slack_pq: np.ndarray | None = None  # (T, 2), enables denv vars
    l_anchor: np.ndarray | None = None  # (T, n_branches): adds |l - anchor| epigraphs


def _pf_literal_rows(res: Resource, baseline: np.ndarray, base_kva: float) -> bool:
    """Use the signed power-factor band rows for this resource?

    The signed band ``|q| <= tan(acos(pf)) * p`` is the generator form; it is
    correct whenever the total injection cannot go negative, and for PV it
    additionally encodes that output cannot be curtailed below zero. For
    resources that can consume (storage, load) the signed band is nonconvex,
    so a symmetric band on the largest attainable |p| is used instead.
    """
    if res.kind is ResourceKind.PV:
        return True
    return bool(np.min(baseline[:, 0]) + res.dp_min_kw / base_kva >= -1e-12)


def build_program(sc: OpfScenario, opts: BuildOptions) -> CombinedProgram:
    """Assemble the conic program for scenario ``sc`` under ``opts``.

    Raises :class:`InconsistentScenario` listing every defect when the
    scenario does not validate. The objective is left at zero when
    ``opts.baseline_slack_pq`` is given (the caller sets a direction
    objective); otherwise the operation objective is installed.
    """
    defects = sc.validate()
    if defects:
        raise InconsistentScenario(defects)

    net = sc.network
    order = tree_order(net)
    limits = sc.security_limits()
    T = sc.series.horizon
    n = len(net.nodes)
    nb = len(net.branches)
    base_kva = net.base_kva
    node_ids = net.node_ids()
    node_pos = net.node_index()
    r = np.array([b.r for b in net.branches])
    x = np.array([b.x for b in net.branches])
    bf, bt = order.branch_from, order.branch_to
    si = order.slack_index
    out_branches: list[list[int]] = [[] for _ in range(n)]
    for bi in range(nb):
        out_branches[bf[bi]].append(bi)

    grid_order = tuple(t.lv_grid for t in net.transformers)
    grids_at_node: list[list[int]] = [[] for _ in range(n)]
    for gi, link in enumerate(net.transformers):
        grids_at_node[node_pos[link.mv_node]].append(gi)

    resources = sc.resources
    rids = tuple(res.id for res in resources)
    storage = sc.storage_resources()
    sids = tuple(res.id for res in storage)

    inj_p = np.zeros((T, n))
    inj_q = np.zeros((T, n))
    for nid, series in sc.series.mv_injections.items():
        inj_p[:, node_pos[nid]] += series[:, 0]
        inj_q[:, node_pos[nid]] += series[:, 1]

    prog = ConicProgram(sc.name)
    ix = CombinedIndex(
        T=T,
        node_ids=node_ids,
        branch_labels=net.branch_labels(),
        grid_order=grid_order,
        resource_ids=rids,
        storage_ids=sids,
        v=np.empty((T, n), dtype=int),
        l=np.empty((T, nb), dtype=int),
        fp=np.empty((T, nb), dtype=int),
        fq=np.empty((T, nb), dtype=int),
        tr_p=np.empty((T, len(grid_order)), dtype=int),
        tr_q=np.empty((T, len(grid_order)), dtype=int),
        slack_p=np.empty(T, dtype=int),
        slack_q=np.empty(T, dtype=int),
        dp=np.empty((T, len(resources)), dtype=int),
        dq=np.empty((T, len(resources)), dtype=int),
        soc=np.empty((T, len(storage)), dtype=int),
    )

    v_slack_lo, v_slack_hi = sc.slack_v_bounds
    if opts.pin_slack_voltage:
        v_slack_lo = v_slack_hi = sc.slack_v0

    # -- variables ----------------------------------------------------------
    for t in range(T):
        for i, nid in enumerate(node_ids):
            if i == si:
                lo, hi = v_slack_lo**2, v_slack_hi**2
            elif opts.hard_mv_security:
                lo, hi = limits.mv_vmin2[i], limits.mv_vmax2[i]
            else:
                lo, hi = _WIDE_V
            ix.v[t, i] = prog.add_var(f"v[{t},{nid}]", lo, hi)
        for b, lbl in enumerate(ix.branch_labels):
            hi = limits.mv_lmax[b] if opts.hard_mv_security else math.inf
            ix.l[t, b] = prog.add_var(f"l[{t},{lbl}]", 0.0, hi)
            ix.fp[t, b] = prog.add_var(f"fp[{t},{lbl}]")
            ix.fq[t, b] = prog.add_var(f"fq[{t},{lbl}]")
        for gi, gid in enumerate(grid_order):
            ix.tr_p[t, gi] = prog.add_var(f"tr_p[{t},{gid}]")
            ix.tr_q[t, gi] = prog.add_var(f"tr_q[{t},{gid}]")
        ix.slack_p[t] = prog.add_var(f"slack_p[{t}]")
        ix.slack_q[t] = prog.add_var(f"slack_q[{t}]")
        for k, res in enumerate(resources):
            if res.id in opts.frozen_resources:
                plo = phi = qlo = qhi = 0.0
            elif opts.box_override_pu and res.id in opts.box_override_pu:
                box = opts.box_override_pu[res.id]
                plo, phi = box[t, 0]
                qlo, qhi = box[t, 1]
            else:
                plo, phi = res.dp_min_kw / base_kva, res.dp_max_kw / base_kva
                qlo, qhi = res.dq_min_kvar / base_kva, res.dq_max_kvar / base_kva
            ix.dp[t, k] = prog.add_var(f"dp[{t},{res.id}]", plo, phi)
            ix.dq[t, k] = prog.add_var(f"dq[{t},{res.id}]", qlo, qhi)
        for k, res in enumerate(storage):
            ix.soc[t, k] = prog.add_var(f"soc[{t},{res.id}]", res.soc_min, res.soc_max)

    if not opts.hard_mv_security:
        ix.vdev = np.empty((T, n), dtype=int)
        ix.ldev = np.empty((T, nb), dtype=int)
        for t in range(T):
            for i, nid in enumerate(node_ids):
                ix.vdev[t, i] = prog.add_var(f"vdev[{t},{nid}]", 0.0)
            for b, lbl in enumerate(ix.branch_labels):
                ix.ldev[t, b] = prog.add_var(f"ldev[{t},{lbl}]", 0.0)

    schedule = sc.series.tso_schedule
    want_sched_dev = (
        opts.baseline_slack_pq is None
        and schedule is not None
        and (sc.weights.w_p > 0 or sc.weights.w_q > 0)
    )
    if want_sched_dev:
        ix.sdev_p = np.array([prog.add_var(f"sdev_p[{t}]", 0.0) for t in range(T)])
        ix.sdev_q = np.array([prog.add_var(f"sdev_q[{t}]", 0.0) for t in range(T)])
    if opts.baseline_slack_pq is not None:
        ix.denv_p = np.array([prog.add_var(f"denv_p[{t}]") for t in range(T)])
        ix.denv_q = np.array([prog.add_var(f"denv_q[{t}]") for t in range(T)])
    if opts.l_anchor is not None:
        ix.lguard = np.empty((T, nb), dtype=int)
        for t in range(T):
            for b, lbl in enumerate(ix.branch_labels):
                ix.lguard[t, b] = prog.add_var(f"lguard[{t},{lbl}]", 0.0)

    V = prog.var

    # -- constraints --------------------------------------------------------
    for t in range(T):
        # nodal balance, slack exchange definition
        for i in range(n):
            p_out = Expr()
            q_out = Expr()
            for b in out_branches[i]:
                p_out = p_out + V(ix.fp[t, b])
                q_out = q_out + V(ix.fq[t, b])
            for gi in grids_at_node[i]:
                p_out = p_out + V(ix.tr_p[t, gi])
                q_out = q_out + V(ix.tr_q[t, gi])
            if i == si:
                prog.add_eq(V(ix.slack_p[t]) - p_out, -inj_p[t, i], tag=f"slack_def_p[{t}]")
                prog.add_eq(V(ix.slack_q[t]) - q_out, -inj_q[t, i], tag=f"slack_def_q[{t}]")
            else:
                pb = order.parent_branch[i]
                arr_p = V(ix.fp[t, pb]) - r[pb] * V(ix.l[t, pb])
                arr_q = V(ix.fq[t, pb]) - x[pb] * V(ix.l[t, pb])
                prog.add_eq(arr_p - p_out, -inj_p[t, i], tag=f"balance_p[{t},{node_ids[i]}]")
                prog.add_eq(arr_q - q_out, -inj_q[t, i], tag=f"balance_q[{t},{node_ids[i]}]")
        # voltage drop and relaxed branch cones
        for b, lbl in enumerate(ix.branch_labels):
            prog.add_eq(
                V(ix.v[t, bt[b]])
                - V(ix.v[t, bf[b]])
                + 2.0 * r[b] * V(ix.fp[t, b])
                + 2.0 * x[b] * V(ix.fq[t, b])
                - (r[b] ** 2 + x[b] ** 2) * V(ix.l[t, b]),
                0.0,
                tag=f"voltage_drop[{t},{lbl}]",
            )
            prog.add_rotated_cone(
                V(ix.v[t, bf[b]]),
                V(ix.l[t, b]),
                [V(ix.fp[t, b]), V(ix.fq[t, b])],
                tag=f"branch_cone[{t},{lbl}]",
            )
        # MV security hinges (soft mode only)
        if not opts.hard_mv_security:
            for i, nid in enumerate(node_ids):
                prog.add_le(
                    V(ix.v[t, i]) - V(ix.vdev[t, i]),
                    limits.mv_vmax2[i],
                    tag=f"v_hinge_hi[{t},{nid}]",
                )
                prog.add_le(
                    -V(ix.v[t, i]) - V(ix.vdev[t, i]),
                    -limits.mv_vmin2[i],
                    tag=f"v_hinge_lo[{t},{nid}]",
                )
            for b, lbl in enumerate(ix.branch_labels):
                prog.add_le(
                    V(ix.l[t, b]) - V(ix.ldev[t, b]),
                    limits.mv_lmax[b],
                    tag=f"l_hinge[{t},{lbl}]",
                )
        # LV grids
        for gi, gid in enumerate(grid_order):
            lv = sc.lv_grids[gid]
            model, op = lv.models[t], lv.ops[t]
            mv_i = node_pos[net.transformers[gi].mv_node]
            vm = V(ix.v[t, mv_i])
            # resource deltas aggregated per injector column
            col_dp: dict[int, Expr] = {}
            col_dq: dict[int, Expr] = {}
            for k, res in enumerate(resources):
                if res.lv_grid != gid:
                    continue
                j = model.injector_index(res.lv_node)
                col_dp[j] = col_dp.get(j, Expr()) + V(ix.dp[t, k])
                col_dq[j] = col_dq.get(j, Expr()) + V(ix.dq[t, k])
            # transformer flow rows: boundary draw = baseline + delta
            dp_expr = Expr()
            dq_expr = Expr()
            for j, e in col_dp.items():
                dp_expr = dp_expr - e
                if model.loss_p_dp is not None:
                    dp_expr = dp_expr + model.loss_p_dp[j] * e
                    dq_expr = dq_expr + model.loss_q_dp[j] * e
            for j, e in col_dq.items():
                dq_expr = dq_expr - e
                if model.loss_p_dq is not None:
                    dp_expr = dp_expr + model.loss_p_dq[j] * e
                    dq_expr = dq_expr + model.loss_q_dq[j] * e
            prog.add_eq(V(ix.tr_p[t, gi]) - dp_expr, op.p_slack, tag=f"lv_tr_p[{t},{gid}]")
            prog.add_eq(V(ix.tr_q[t, gi]) - dq_expr, op.q_slack, tag=f"lv_tr_q[{t},{gid}]")
            # LV node voltages: 0.5 (v_mv + 1) - drop + K dP + K dQ within band
            vmin = limits.lv_vmin[gid]
            vmax = limits.lv_vmax[gid]
            for i_lv, nid in enumerate(model.node_ids):
                expr = 0.5 * vm
                for j, e in col_dp.items():
                    if model.k_vp[i_lv, j]:
                        expr = expr + model.k_vp[i_lv, j] * e
                for j, e in col_dq.items():
                    if model.k_vq[i_lv, j]:
                        expr = expr + model.k_vq[i_lv, j] * e
                off = 0.5 - op.drop[i_lv]
                prog.add_le(expr, vmax[i_lv] - off, tag=f"lv_v_hi[{t},{gid},{nid}]")
                prog.add_ge(expr, vmin[i_lv] - off, tag=f"lv_v_lo[{t},{gid},{nid}]")
            # LV branch currents within ampacity
            imax = limits.lv_imax[gid]
            for b_lv, lbl in enumerate(model.branch_labels):
                if not math.isfinite(imax[b_lv]):
                    continue
                expr = Expr()
                for j, e in col_dp.items():
                    if model.k_ip[b_lv, j]:
                        expr = expr + model.k_ip[b_lv, j] * e
                for j, e in col_dq.items():
                    if model.k_iq[b_lv, j]:
                        expr = expr + model.k_iq[b_lv, j] * e
                prog.add_le(expr, imax[b_lv] - op.i0[b_lv], tag=f"lv_i_hi[{t},{gid},{lbl}]")
                prog.add_ge(expr, -imax[b_lv] - op.i0[b_lv], tag=f"lv_i_lo[{t},{gid},{lbl}]")
        # inverter constraints
        for k, res in enumerate(resources):
            base = sc.resource_baseline_pu(res.id)
            p0, q0 = base[t]
            dpv, dqv = V(ix.dp[t, k]), V(ix.dq[t, k])
            tau = math.tan(math.acos(res.pf_limit))
            if _pf_literal_rows(res, base, base_kva):
                prog.add_le(dqv - tau * dpv, tau * p0 - q0, tag=f"pf_hi[{t},{res.id}]")
                prog.add_le(-dqv - tau * dpv, tau * p0 + q0, tag=f"pf_lo[{t},{res.id}]")
            else:
                # consumption-capable resource: symmetric band on the largest
                # attainable |p| (the signed band is nonconvex there)
                cap = max(
                    abs(p0 + res.dp_min_kw / base_kva), abs(p0 + res.dp_max_kw / base_kva)
                )
                prog.add_le(dqv, tau * cap - q0, tag=f"pf_hi[{t},{res.id}]")
                prog.add_le(-dqv, tau * cap + q0, tag=f"pf_lo[{t},{res.id}]")
            radius = math.sqrt(sc.inverter_overrating) * res.s_kva / base_kva
            prog.add_soc(
                Expr(const=radius),
                [dpv + p0, dqv + q0],
                tag=f"inverter_cone[{t},{res.id}]",
            )
        # ramp caps between consecutive steps (flexibility face only)
        if opts.ramp_caps and t >= 1:
            dt_hr = sc.series.step_hours
            for k, res in enumerate(resources):
                if res.id in opts.frozen_resources:
                    continue
                cap = res.ramp_kw_per_hr * dt_hr / base_kva
                for arr, sym in ((ix.dp, "p"), (ix.dq, "q")):
                    step_expr = V(arr[t, k]) - V(arr[t - 1, k])
                    prog.add_le(step_expr, cap, tag=f"ramp_{sym}_hi[{t},{res.id}]")
                    prog.add_ge(step_expr, -cap, tag=f"ramp_{sym}_lo[{t},{res.id}]")
        # storage chains
        dt_hr = sc.series.step_hours
        for k, res in enumerate(storage):
            kk = rids.index(res.id)
            c = res.eta * dt_hr * base_kva / res.capacity_kwh
            p0 = sc.resource_baseline_pu(res.id)[t, 0]
            expr = V(ix.soc[t, k]) + c * V(ix.dp[t, kk])
            if t == 0:
                prog.add_eq(expr, res.soc0 - c * p0, tag=f"soc_chain[{t},{res.id}]")
            else:
                prog.add_eq(expr - V(ix.soc[t - 1, k]), -c * p0, tag=f"soc_chain[{t},{res.id}]")
        # schedule deviation epigraphs
        if want_sched_dev:
            sp, sq = schedule[t]
            prog.add_le(V(ix.slack_p[t]) - V(ix.sdev_p[t]), sp, tag=f"sched_dev_p_hi[{t}]")
            prog.add_le(-V(ix.slack_p[t]) - V(ix.sdev_p[t]), -sp, tag=f"sched_dev_p_lo[{t}]")
            prog.add_le(V(ix.slack_q[t]) - V(ix.sdev_q[t]), sq, tag=f"sched_dev_q_hi[{t}]")
            prog.add_le(-V(ix.slack_q[t]) - V(ix.sdev_q[t]), -sq, tag=f"sched_dev_q_lo[{t}]")
        # slack-exchange deviation from a fixed baseline (flexibility face)
        if opts.baseline_slack_pq is not None:
            bp, bq = opts.baseline_slack_pq[t]
            prog.add_eq(V(ix.denv_p[t]) - V(ix.slack_p[t]), -bp, tag=f"denv_def_p[{t}]")
            prog.add_eq(V(ix.denv_q[t]) - V(ix.slack_q[t]), -bq, tag=f"denv_def_q[{t}]")
        # branch-current anchoring epigraphs (flexibility face)
        if opts.l_anchor is not None:
            for b, lbl in enumerate(ix.branch_labels):
                l0 = float(opts.l_anchor[t, b])
                prog.add_le(
                    V(ix.l[t, b]) - V(ix.lguard[t, b]), l0, tag=f"l_guard_hi[{t},{lbl}]"
                )
                prog.add_le(
                    -V(ix.l[t, b]) - V(ix.lguard[t, b]), -l0, tag=f"l_guard_lo[{t},{lbl}]"
                )

    # -- objective ----------------------------------------------------------
    if opts.baseline_slack_pq is None:
        w = sc.weights
        obj = Expr()
        for t in range(T):
            for b in range(nb):
                if w.w_l and r[b]:
                    obj = obj + (w.w_l * r[b]) * V(ix.l[t, b])
            if not opts.hard_mv_security:
                for i in range(n):
                    obj = obj + w.w_v * V(ix.vdev[t, i])
                for b in range(nb):
                    obj = obj + w.w_lim * V(ix.ldev[t, b])
            if want_sched_dev:
                obj = obj + w.w_p * V(ix.sdev_p[t]) + w.w_q * V(ix.sdev_q[t])
        prog.set_objective(obj)

    return CombinedProgram(program=prog, index=ix)


def build_combined_program(sc: OpfScenario) -> CombinedProgram:
    """Build the penalty-based combined operation problem."""
    return build_program(sc, BuildOptions())


# ---------------------------------------------------------------------------
# Solving and decoding
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ObjectiveBreakdown:
    """Raw per-term magnitudes of the operation objective and their costs."""

    losses: float
    voltage_dev: float
    flow_dev: float
    p_sched_dev: float
    q_sched_dev: float
    weights: ObjectiveWeights

    @property
    def costs(self) -> dict[str, float]:
        w = self.weights
        return {
            "losses": w.w_l * self.losses,
            "voltage_dev": w.w_v * self.voltage_dev,
            "flow_dev": w.w_lim * self.flow_dev,
            "p_sched_dev": w.w_p * self.p_sched_dev,
            "q_sched_dev": w.w_q * self.q_sched_dev,
        }

    @property
    def total(self) -> float:
        return sum(self.costs.values())


@dataclass(frozen=True)
class ScheduleResult:
    """Decoded multi-period schedule.

    All reported states are exact affine evaluations of the model at the
    decision values; ``max_cone_gap`` is the largest branch relaxation gap
    ``v l - (P^2 + Q^2)`` over the horizon.
    """

    scenario: str
    resource_ids: tuple[str, ...]
    dp: np.ndarray  # (T, n_res) p.u.
    dq: np.ndarray
    mv_states: tuple[MvState, ...]
    lv_states: Mapping[str, tuple[LvState, ...]]
    soc: Mapping[str, np.ndarray]
    vdev: np.ndarray
    ldev: np.ndarray
    breakdown: ObjectiveBreakdown
    objective: float
    max_cone_gap: float
    relaxation_loose: bool
    solution: Solution

    def setpoints_kw(self, base_kva: float) -> dict[str, np.ndarray]:
        return {
            rid: np.column_stack([self.dp[:, k] * base_kva, self.dq[:, k] * base_kva])
            for k, rid in enumerate(self.resource_ids)
        }


def decode_schedule(sc: OpfScenario, built: CombinedProgram, sol: Solution) -> ScheduleResult:
    """Turn a solver point into domain states and the objective breakdown."""
    ix = built.index
    x = sol.x
    net = sc.network
    order = tree_order(net)
    limits = sc.security_limits()
    r = np.array([b.r for b in net.branches])
    T = ix.T

    dp = x[ix.dp]
    dq = x[ix.dq]
    v = x[ix.v]
    l = x[ix.l]
    fp = x[ix.fp]
    fq = x[ix.fq]

    gaps = v[:, order.branch_from] * l - (fp**2 + fq**2)
    max_gap = float(np.max(np.abs(gaps), initial=0.0))

    mv_states = []
    for t in range(T):
        mv_states.append(
            MvState(
                node_ids=ix.node_ids,
                branch_labels=ix.branch_labels,
                v=v[t].copy(),
                l=l[t].copy(),
                p_flow=fp[t].copy(),
                q_flow=fq[t].copy(),
                tr_grids=ix.grid_order,
                tr_p=x[ix.tr_p[t]].copy(),
                tr_q=x[ix.tr_q[t]].copy(),
                slack_p=float(x[ix.slack_p[t]]),
                slack_q=float(x[ix.slack_q[t]]),
                residual=float(np.max(np.abs(gaps[t]), initial=0.0)),
            )
        )

    lv_states: dict[str, tuple[LvState, ...]] = {}
    node_pos = net.node_index()
    for gi, gid in enumerate(ix.grid_order):
        lv = sc.lv_grids[gid]
        mv_i = node_pos[net.transformers[gi].mv_node]
        per_step = []
        for t in range(T):
            deltas_p: dict[str, float] = {}
            deltas_q: dict[str, float] = {}
            for k, rid in enumerate(ix.resource_ids):
                res = sc.resources[k]
                if res.lv_grid != gid:
                    continue
                deltas_p[res.lv_node] = deltas_p.get(res.lv_node, 0.0) + float(dp[t, k])
                deltas_q[res.lv_node] = deltas_q.get(res.lv_node, 0.0) + float(dq[t, k])
            # anchor the LV baseline at the solved MV voltage via the
            # linearized square root before evaluating the affine model
            op = lv.ops[t]
            anchored = replace(op, v0=couple_lv_voltage(float(v[t, mv_i]), op.drop))
            per_step.append(predict_state(lv.models[t], anchored, deltas_p, deltas_q))
        lv_states[gid] = tuple(per_step)

    soc = {rid: x[ix.soc[:, k]].copy() for k, rid in enumerate(ix.storage_ids)}

    vdev = np.maximum(0.0, np.maximum(v - limits.mv_vmax2, limits.mv_vmin2 - v))
    ldev = np.maximum(0.0, l - limits.mv_lmax)

    sched = sc.series.tso_schedule
    if sched is not None:
        pdev = float(np.sum(np.abs(x[ix.slack_p] - sched[:, 0])))
        qdev = float(np.sum(np.abs(x[ix.slack_q] - sched[:, 1])))
    else:
        pdev = qdev = 0.0

    breakdown = ObjectiveBreakdown(
        losses=float(np.sum(l @ r)),
        voltage_dev=float(np.sum(vdev)),
        flow_dev=float(np.sum(ldev)),
        p_sched_dev=pdev,
        q_sched_dev=qdev,
        weights=sc.weights,
    )

    return ScheduleResult(
        scenario=sc.name,
        resource_ids=ix.resource_ids,
        dp=dp,
        dq=dq,
        mv_states=tuple(mv_states),
        lv_states=lv_states,
        soc=soc,
        vdev=vdev,
        ldev=ldev,
        breakdown=breakdown,
        objective=breakdown.total,
        max_cone_gap=max_gap,
        relaxation_loose=max_gap > sc.relaxation_gap_threshold,
        solution=sol,
    )


def solve_schedule(
    sc: OpfScenario, settings: SolverSettings | None = None
) -> ScheduleResult:
    """Build, solve and decode the combined operation problem.

    The penalty formulation prices MV violations instead of forbidding them,
    so an infeasible status signals data errors (e.g. an LV baseline outside
    its own hard band) and raises :class:`SolveFailed`. A loose relaxation
    (cone gap above the scenario threshold) is flagged on the result and
    warned about, not raised.
    """
    built = build_program(sc, BuildOptions())
    sol = solve(built.program, settings or SolverSettings(feas_tol=1e-8, gap_tol=1e-8))
    sol.require_optimal()
    result = decode_schedule(sc, built, sol)
    if result.relaxation_loose:
        warnings.warn(
            f"scenario {sc.name}: max cone gap {result.max_cone_gap:.3e} exceeds "
            f"threshold {sc.relaxation_gap_threshold:.1e}; branch-flow states may "
            "be physically loose",
            stacklevel=2,
        )
    return result


def objective_breakdown(res: ScheduleResult) -> ObjectiveBreakdown:
    """Per-term magnitudes and costs of the operation objective."""
    return res.breakdown


# ---------------------------------------------------------------------------
# Oracle verification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    step: int
    scope: str  # "mv" or LV grid id
    element: str
    kind: str  # vmax | vmin | imax
    amount: float  # magnitude above the limit, p.u.


@dataclass(frozen=True)
class VerificationReport:
    """Outcome of re-simulating a schedule with the exact oracles."""

    mv_voltage_diff: float  # max |V| discrepancy, p.u.
    mv_flow_diff: float  # max branch P/Q discrepancy, p.u.
    lv_voltage_diff: float  # vs exact LV load flow where available
    lv_exact: bool
    violations: tuple[Violation, ...]
    oracle_states: tuple[MvState, ...]

    @property
    def ok(self) -> bool:
        return not self.violations


def _lv_exact_offtake(
    sc: OpfScenario, gid: str, t: int, dp_t: np.ndarray, dq_t: np.ndarray, slack_v: float
):
    """Exact LV re-simulation; returns (offtake_p, offtake_q, vmag, imag)."""
    lv = sc.lv_grids[gid]
    inj: dict[str, tuple[float, float]] = {}
    if lv.background:
        for nid, series in lv.background.items():
            p, q = series[t]
            inj[nid] = (inj.get(nid, (0.0, 0.0))[0] + p, inj.get(nid, (0.0, 0.0))[1] + q)
    for k, res in enumerate(sc.resources):
        if res.lv_grid != gid:
            continue
        base = sc.resource_baseline_pu(res.id)[t]
        p = base[0] + dp_t[k]
        q = base[1] + dq_t[k]
        old = inj.get(res.lv_node, (0.0, 0.0))
        inj[res.lv_node] = (old[0] + p, old[1] + q)
    state = solve_distflow_fixed_point(lv.reference_net, inj, slack_v=slack_v)
    return state.slack_p, state.slack_q, np.sqrt(state.v), np.sqrt(state.l)


def verify_against_oracle(
    res: ScheduleResult, sc: OpfScenario, *, limit_tolerance: float = 1e-7
) -> VerificationReport:
    """Re-simulate the returned setpoints with the exact power-flow oracles.

    The MV network is re-solved with the fixed-point oracle at the schedule's
    slack voltage; LV grids with a reference model are re-solved exactly
    (coupled through the relaxed-voltage magnitude at their MV node),
    otherwise their linear predictions stand in. Reports the worst
    voltage/flow discrepancies and every hard-limit violation exceeding
    ``limit_tolerance``.
    """
    net = sc.network
    order = tree_order(net)
    limits = sc.security_limits()
    T = len(res.mv_states)
    si = order.slack_index

    v_diff = 0.0
    f_diff = 0.0
    lv_diff = 0.0
    lv_exact_any = False
    violations: list[Violation] = []
    oracle_states: list[MvState] = []

    for t in range(T):
        claimed = res.mv_states[t]
        # LV side first: offtakes for the MV oracle
        offtakes: dict[str, tuple[float, float]] = {}
        lv_v: dict[str, np.ndarray] = {}
        lv_i: dict[str, np.ndarray] = {}
        for gi, gid in enumerate(claimed.tr_grids):
            lv = sc.lv_grids[gid]
            if lv.reference_net is not None and lv.background is not None:
                mv_i = net.node_index()[net.transformers[gi].mv_node]
                head_v = float(claimed.v[mv_i])
                try:
                    op_, oq_, vmag, imag = _lv_exact_offtake(
                        sc, gid, t, res.dp[t], res.dq[t], head_v
                    )
                except Exception as exc:
                    raise OracleFailure(
                        f"LV re-simulation failed for {gid} step {t}: {exc}"
                    ) from exc
                offtakes[gid] = (op_, oq_)
                lv_v[gid] = vmag
                lv_i[gid] = imag
                lv_exact_any = True
                pred = res.lv_states[gid][t]
                lv_diff = max(lv_diff, float(np.max(np.abs(pred.v - vmag), initial=0.0)))
            else:
                offtakes[gid] = (float(claimed.tr_p[gi]), float(claimed.tr_q[gi]))
                pred = res.lv_states[gid][t]
                lv_v[gid] = pred.v
                lv_i[gid] = np.abs(pred.i)

        inj = {
            nid: (series[t, 0], series[t, 1]) for nid, series in sc.series.mv_injections.items()
        }
        exact = solve_distflow_fixed_point(
            net, inj, slack_v=float(claimed.v[si]), transformer_offtakes=offtakes
        )
        oracle_states.append(exact)
        v_diff = max(v_diff, float(np.max(np.abs(np.sqrt(exact.v) - np.sqrt(claimed.v)))))
        f_diff = max(
            f_diff,
            float(np.max(np.abs(exact.p_flow - claimed.p_flow), initial=0.0)),
            float(np.max(np.abs(exact.q_flow - claimed.q_flow), initial=0.0)),
        )

        violations.extend(
            _state_violations(sc, limits, t, exact, lv_v, lv_i, limit_tolerance)
        )

    return VerificationReport(
        mv_voltage_diff=v_diff,
        mv_flow_diff=f_diff,
        lv_voltage_diff=lv_diff,
        lv_exact=lv_exact_any,
        violations=tuple(violations),
        oracle_states=tuple(oracle_states),
    )


def slice_scenario(sc: OpfScenario, start: int, stop: int) -> OpfScenario:
    """Restrict a scenario to steps ``[start, stop)``.

    Storage enters the window at its baseline SOC (initial SOC propagated
    through the baseline profile up to ``start``), so a sliced solve is
    consistent with resources having followed their baseline beforehand.
    """
    T = sc.series.horizon
    if not 0 <= start < stop <= T:
        raise ValueError(f"bad slice [{start}, {stop}) for horizon {T}")
    if (start, stop) == (0, T):
        return sc
    new_resources = []
    for res in sc.resources:
        if res.is_storage and start > 0:
            c = res.eta * sc.series.step_hours * sc.network.base_kva / res.capacity_kwh
            consumed = float(np.sum(sc.resource_baseline_pu(res.id)[:start, 0]))
            soc_entry = res.soc0 - c * consumed
            soc_entry = min(max(soc_entry, res.soc_min), res.soc_max)
            new_resources.append(replace(res, soc0=soc_entry))
        else:
            new_resources.append(res)
    series = TimeSeries(
        step_minutes=sc.series.step_minutes,
        horizon=stop - start,
        mv_injections={k: v[start:stop] for k, v in sc.series.mv_injections.items()},
        resource_baselines={
            k: v[start:stop] for k, v in sc.series.resource_baselines.items()
        },
        lv_background={
            gid: {nid: v[start:stop] for nid, v in per_node.items()}
            for gid, per_node in sc.series.lv_background.items()
        },
        tso_schedule=(
            sc.series.tso_schedule[start:stop] if sc.series.tso_schedule is not None else None
        ),
    )
    lv_grids = {
        gid: replace(lv, models=lv.models[start:stop], ops=lv.ops[start:stop])
        for gid, lv in sc.lv_grids.items()
    }
    return replace(sc, resources=tuple(new_resources), series=series, lv_grids=lv_grids)


def _state_violations(
    sc: OpfScenario,
    limits: SecurityLimits,
    t: int,
    exact: MvState,
    lv_v: Mapping[str, np.ndarray],
    lv_i: Mapping[str, np.ndarray],
    tol: float,
) -> list[Violation]:
    """Hard-limit violations of an exact MV state plus LV magnitudes."""
    out: list[Violation] = []
    vmag_mv = np.sqrt(exact.v)
    vmin = np.sqrt(limits.mv_vmin2)
    vmax = np.sqrt(limits.mv_vmax2)
    for i, nid in enumerate(exact.node_ids):
        if vmag_mv[i] > vmax[i] + tol:
            out.append(Violation(t, "mv", nid, "vmax", float(vmag_mv[i] - vmax[i])))
        if vmag_mv[i] < vmin[i] - tol:
            out.append(Violation(t, "mv", nid, "vmin", float(vmin[i] - vmag_mv[i])))
    imag_mv = np.sqrt(exact.l)
    imax_mv = np.sqrt(limits.mv_lmax)
    for b, lbl in enumerate(exact.branch_labels):
        if imag_mv[b] > imax_mv[b] + tol:
            out.append(Violation(t, "mv", lbl, "imax", float(imag_mv[b] - imax_mv[b])))
    for gid, vmags in lv_v.items():
        model = sc.lv_grids[gid].models[t]
        vmin_lv = limits.lv_vmin[gid]
        vmax_lv = limits.lv_vmax[gid]
        imax_lv = limits.lv_imax[gid]
        for i, nid in enumerate(model.node_ids):
            if vmags[i] > vmax_lv[i] + tol:
                out.append(Violation(t, gid, nid, "vmax", float(vmags[i] - vmax_lv[i])))
            if vmags[i] < vmin_lv[i] - tol:
                out.append(Violation(t, gid, nid, "vmin", float(vmin_lv[i] - vmags[i])))
        for b, lbl in enumerate(model.branch_labels):
            if math.isfinite(imax_lv[b]) and lv_i[gid][b] > imax_lv[b] + tol:
                out.append(Violation(t, gid, lbl, "imax", float(lv_i[gid][b] - imax_lv[b])))
    return out


def verify_setpoints(
    sc: OpfScenario,
    dp: np.ndarray,
    dq: np.ndarray,
    *,
    limit_tolerance: float = 1e-7,
) -> VerificationReport:
    """Re-simulate raw (dp, dq) setpoint arrays with the exact oracles.

    Used by the command-line ``verify`` path, where setpoints come from a
    file rather than a solved schedule. LV grids with a reference model are
    re-solved exactly; coefficient-based grids are evaluated through their
    linear model. The slack voltage is the scenario baseline.
    """
    from .sensitivity import boundary_deltas

    net = sc.network
    limits = sc.security_limits()
    node_pos = net.node_index()
    T = sc.series.horizon
    violations: list[Violation] = []
    oracle_states: list[MvState] = []
    lv_exact_any = False

    for t in range(T):
        offtakes: dict[str, tuple[float, float]] = {}
        lv_v: dict[str, np.ndarray] = {}
        lv_i: dict[str, np.ndarray] = {}
        for gi, link in enumerate(net.transformers):
            gid = link.lv_grid
            lv = sc.lv_grids[gid]
            model, op = lv.models[t], lv.ops[t]
            if lv.reference_net is not None and lv.background is not None:
                op_, oq_, vmag, imag = _lv_exact_offtake(sc, gid, t, dp[t], dq[t], 1.0)
                offtakes[gid] = (op_, oq_)
                lv_v[gid] = vmag
                lv_i[gid] = imag
                lv_exact_any = True
            else:
                vp = np.zeros(len(model.injectors))
                vq = np.zeros(len(model.injectors))
                for k, res in enumerate(sc.resources):
                    if res.lv_grid != gid:
                        continue
                    j = model.injector_index(res.lv_node)
                    vp[j] += dp[t, k]
                    vq[j] += dq[t, k]
                dps, dqs = boundary_deltas(model, vp, vq)
                offtakes[gid] = (op.p_slack + dps, op.q_slack + dqs)
                lv_v[gid] = op.v0 + model.k_vp @ vp + model.k_vq @ vq
                lv_i[gid] = np.abs(op.i0 + model.k_ip @ vp + model.k_iq @ vq)
        inj = {nid: (s[t, 0], s[t, 1]) for nid, s in sc.series.mv_injections.items()}
        exact = solve_distflow_fixed_point(
            net, inj, slack_v=sc.slack_v0**2, transformer_offtakes=offtakes
        )
        oracle_states.append(exact)
        # re-evaluate LV voltages at the exact MV attachment voltages
        # (offtakes are only weakly head-dependent, so one pass suffices)
        for gi, link in enumerate(net.transformers):
            gid = link.lv_grid
            lv = sc.lv_grids[gid]
            v_m = float(exact.v[node_pos[link.mv_node]])
            if lv.reference_net is not None and lv.background is not None:
                _, _, vmag, imag = _lv_exact_offtake(sc, gid, t, dp[t], dq[t], v_m)
                lv_v[gid] = vmag
                lv_i[gid] = imag
            else:
                shift = 0.5 * (v_m + 1.0) - 1.0
                lv_v[gid] = lv_v[gid] + shift
        violations.extend(_state_violations(sc, limits, t, exact, lv_v, lv_i, limit_tolerance))

    return VerificationReport(
        mv_voltage_diff=0.0,
        mv_flow_diff=0.0,
        lv_voltage_diff=0.0,
        lv_exact=lv_exact_any,
        violations=tuple(violations),
        oracle_states=tuple(oracle_states),
    )


def assemble_lv_grids(
    lv_nets: Mapping[str, MvNetwork],
    resources: tuple[Resource, ...],
    series: TimeSeries,
    *,
    with_loss_sensitivity: bool = False,
    trust_radius_fraction: float = 0.2,
    eps: float = 1e-4,
) -> dict[str, LvGridModel]:
    """Build per-step LV grid models from reference LV networks.

    For each grid and step, the operating point comes from the exact LV load
    flow at the step's background plus resource baselines. Coefficients are
    computed once and reused while the per-node injections stay within the
    trust radius (a fraction of the feeder's head ampacity); beyond it they
    are recomputed around the current step.
    """
    out: dict[str, LvGridModel] = {}
    T = series.horizon
    for gid, lv_net in lv_nets.items():
        background = dict(series.lv_background.get(gid, {}))
        res_here = [r for r in resources if r.lv_grid == gid]

        def step_injections(t: int) -> dict[str, tuple[float, float]]:
            inj: dict[str, tuple[float, float]] = {}
            for nid, s in background.items():
                p, q = float(s[t, 0]), float(s[t, 1])
                old = inj.get(nid, (0.0, 0.0))
                inj[nid] = (old[0] + p, old[1] + q)
            for r in res_here:
                base = series.resource_baselines.get(r.id)
                p, q = (float(base[t, 0]), float(base[t, 1])) if base is not None else (0.0, 0.0)
                old = inj.get(r.lv_node, (0.0, 0.0))
                inj[r.lv_node] = (old[0] + p, old[1] + q)
            return inj

        trust = trust_radius_fraction * feeder_rating(lv_net)
        models: list[SensitivityModel] = []
        ops: list[LvOperatingPoint] = []
        anchor_inj: dict[str, tuple[float, float]] | None = None
        model: SensitivityModel | None = None
        for t in range(T):
            inj = step_injections(t)
            if model is None or _injection_distance(inj, anchor_inj) > trust:
                model = coefficients_from_reference(
                    lv_net,
                    inj,
                    eps=eps,
                    with_loss_sensitivity=with_loss_sensitivity,
                    step=t,
                )
                anchor_inj = inj
            ops.append(operating_point_from_reference(lv_net, inj, step=t))
            models.append(model)
        out[gid] = LvGridModel(
            grid=gid,
            models=tuple(models),
            ops=tuple(ops),
            reference_net=lv_net,
            background=background,
            trust_radius_pu=trust,
        )
    return out


def _injection_distance(
    a: Mapping[str, tuple[float, float]], b: Mapping[str, tuple[float, float]] | None
) -> float:
    if b is None:
        return math.inf
    keys = set(a) | set(b)
    return max(
        (
            max(
                abs(a.get(k, (0.0, 0.0))[0] - b.get(k, (0.0, 0.0))[0]),
                abs(a.get(k, (0.0, 0.0))[1] - b.get(k, (0.0, 0.0))[1]),
            )
            for k in keys
        ),
        default=0.0,
    )


def baseline_mv_state(sc: OpfScenario, t: int, slack_v: float | None = None) -> MvState:
    """Exact MV state at baseline (all deltas zero) for step ``t``."""
    offtakes = {
        gid: (sc.lv_grids[gid].ops[t].p_slack, sc.lv_grids[gid].ops[t].q_slack)
        for gid in (link.lv_grid for link in sc.network.transformers)
    }
    inj = {nid: (s[t, 0], s[t, 1]) for nid, s in sc.series.mv_injections.items()}
    return solve_distflow_fixed_point(
        sc.network,
        inj,
        slack_v=(slack_v if slack_v is not None else sc.slack_v0**2),
        transformer_offtakes=offtakes,
    )
