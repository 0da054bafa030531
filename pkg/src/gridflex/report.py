"""Delimited outputs and figures for schedules, envelopes and verification.

All CSVs are written atomically with 17-significant-digit floats so repeated
runs with identical inputs produce byte-identical files. Figures are rendered
with matplotlib (Agg) to SVG next to the delimited output when requested.
"""

from __future__ import annotations

import math
import os
from pathlib import Path
from typing import Mapping

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .coordination import ServiceCatalog
from .envelope import FlexEnvelope
from .ingest import write_csv
from .opf import OpfScenario, ScheduleResult, VerificationReport

__all__ = [
    "emit_schedule",
    "emit_envelope",
    "emit_verification",
    "emit_services",
    "read_setpoints_csv",
    "schedule_figure",
    "envelope_figure",
]


def emit_schedule(sc: OpfScenario, res: ScheduleResult, out_dir: str | os.PathLike) -> list[str]:
    """Write setpoints.csv, state.csv and breakdown.csv; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    kva = sc.network.base_kva
    T = sc.series.horizon

    rows = []
    for t in range(T):
        for k, rid in enumerate(res.resource_ids):
            soc = res.soc[rid][t] if rid in res.soc else ""
            rows.append(
                (t, rid, float(res.dp[t, k] * kva), float(res.dq[t, k] * kva), soc)
            )
    setpoints = out / "setpoints.csv"
    write_csv(setpoints, ("t", "resource_id", "dp_kw", "dq_kvar", "soc"), rows)

    state_rows = []
    for t, st in enumerate(res.mv_states):
        for i, nid in enumerate(st.node_ids):
            state_rows.append((t, "mv", nid, "v_pu2", float(st.v[i])))
        for b, lbl in enumerate(st.branch_labels):
            state_rows.append((t, "mv", lbl, "l_pu2", float(st.l[b])))
            state_rows.append((t, "mv", lbl, "p_pu", float(st.p_flow[b])))
            state_rows.append((t, "mv", lbl, "q_pu", float(st.q_flow[b])))
        for gi, gid in enumerate(st.tr_grids):
            state_rows.append((t, "mv", gid, "tr_p_pu", float(st.tr_p[gi])))
            state_rows.append((t, "mv", gid, "tr_q_pu", float(st.tr_q[gi])))
        state_rows.append((t, "mv", "", "slack_p_pu", float(st.slack_p)))
        state_rows.append((t, "mv", "", "slack_q_pu", float(st.slack_q)))
        for gid, states in res.lv_states.items():
            lv = states[t]
            model = sc.lv_grids[gid].models[t]
            for i, nid in enumerate(model.node_ids):
                state_rows.append((t, gid, nid, "v_pu", float(lv.v[i])))
            for b, lbl in enumerate(model.branch_labels):
                state_rows.append((t, gid, lbl, "i_pu", float(lv.i[b])))
    state = out / "state.csv"
    write_csv(state, ("t", "scope", "element", "quantity", "value"), state_rows)

    br = res.breakdown
    raw = {
        "losses": br.losses,
        "voltage_dev": br.voltage_dev,
        "flow_dev": br.flow_dev,
        "p_sched_dev": br.p_sched_dev,
        "q_sched_dev": br.q_sched_dev,
    }
    weights = {
        "losses": br.weights.w_l,
        "voltage_dev": br.weights.w_v,
        "flow_dev": br.weights.w_lim,
        "p_sched_dev": br.weights.w_p,
        "q_sched_dev": br.weights.w_q,
    }
    bd_rows = [
        (term, float(raw[term]), float(weights[term]), float(br.costs[term])) for term in raw
    ]
    bd_rows.append(("total", "", "", float(br.total)))
    breakdown = out / "breakdown.csv"
    write_csv(breakdown, ("term", "raw", "weight", "cost"), bd_rows)
    return [str(setpoints), str(state), str(breakdown)]


def read_setpoints_csv(path: str | os.PathLike, sc: OpfScenario) -> tuple[np.ndarray, np.ndarray]:
    """Read a setpoints.csv back into (dp, dq) p.u. arrays for ``sc``."""
    import csv as _csv

    from .errors import CrossRefError, ParseError

    rid_pos = {r.id: k for k, r in enumerate(sc.resources)}
    T = sc.series.horizon
    dp = np.zeros((T, len(sc.resources)))
    dq = np.zeros_like(dp)
    with open(path, newline="") as fh:
        reader = _csv.DictReader(fh)
        for ln, row in enumerate(reader, start=2):
            rid = (row.get("resource_id") or "").strip()
            if rid not in rid_pos:
                raise CrossRefError(f"{path}: unknown resource {rid!r}")
            try:
                t = int(row["t"])
                dp[t, rid_pos[rid]] = float(row["dp_kw"]) / sc.network.base_kva
                dq[t, rid_pos[rid]] = float(row["dq_kvar"]) / sc.network.base_kva
            except (KeyError, ValueError, IndexError) as exc:
                raise ParseError(f"bad row: {exc}", file=str(path), line=ln) from None
    return dp, dq


def emit_envelope(env: FlexEnvelope, base_kva: float, out_dir: str | os.PathLike) -> str:
    """Write one envelope CSV; file name carries the service class."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = [
        (
            env.service.speed.value,
            float(p.theta),
            float(p.dp * base_kva) if math.isfinite(p.dp) else "",
            float(p.dq * base_kva) if math.isfinite(p.dq) else "",
            p.status.value,
        )
        for p in env.points
    ]
    path = out / f"envelope_{env.service.speed.value}.csv"
    write_csv(path, ("service_class", "theta_rad", "dp_kw", "dq_kvar", "status"), rows)
    return str(path)


def emit_verification(rep: VerificationReport, out_dir: str | os.PathLike) -> str:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = [(v.step, v.scope, v.element, v.kind, float(v.amount)) for v in rep.violations]
    path = out / "verification.csv"
    write_csv(path, ("t", "scope", "element", "kind", "amount_pu"), rows)
    return str(path)


def emit_services(catalog: ServiceCatalog, out_dir: str | os.PathLike) -> str:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = [("tso", "fast", s) for s in catalog.tso_fast]
    rows += [("tso", "slow", s) for s in catalog.tso_slow]
    rows += [("dso", "fast", s) for s in catalog.dso_fast]
    rows += [("dso", "slow", s) for s in catalog.dso_slow]
    path = out / "services.csv"
    write_csv(path, ("operator", "speed", "service"), rows)
    return str(path)


# ---------------------------------------------------------------------------
# figures
# ---------------------------------------------------------------------------


def schedule_figure(sc: OpfScenario, res: ScheduleResult, path: str | os.PathLike) -> str:
    """Losses (kWh) and security violation cost per step, stacked axes."""
    kva = sc.network.base_kva
    dt_hr = sc.series.step_hours
    r = np.array([b.r for b in sc.network.branches])
    losses_kwh = np.array([float(st.l @ r) for st in res.mv_states]) * kva * dt_hr
    viol_cost = sc.weights.violation_cost_rate * (
        res.vdev.sum(axis=1) + res.ldev.sum(axis=1)
    )
    hours = np.arange(sc.series.horizon) * dt_hr

    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(8, 5), sharex=True)
    ax1.plot(hours, losses_kwh, color="tab:blue")
    ax1.set_ylabel("losses [kWh/step]")
    ax1.grid(alpha=0.3)
    ax2.plot(hours, viol_cost, color="tab:red")
    ax2.set_ylabel("violation cost")
    ax2.set_xlabel("hour of horizon")
    ax2.grid(alpha=0.3)
    fig.suptitle(f"{sc.name}: operation summary")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return str(path)


def envelope_figure(
    envelopes: Mapping[str, FlexEnvelope], base_kva: float, path: str | os.PathLike
) -> str:
    """Overlay of the P-Q flexibility regions, one polygon per service class."""
    fig, ax = plt.subplots(figsize=(6, 6))
    colors = {"fast": "tab:red", "slow": "tab:blue"}
    for label, env in envelopes.items():
        pts = env.vertices() * base_kva
        if len(pts) == 0:
            continue
        order = np.argsort(np.arctan2(pts[:, 1], pts[:, 0]))
        loop = np.vstack([pts[order], pts[order][:1]])
        ax.plot(loop[:, 0], loop[:, 1], "o-", ms=3, label=label, color=colors.get(label))
    ax.plot([0], [0], "k+", ms=12, label="baseline")
    ax.set_xlabel("delta P at P-SS [kW]")
    ax.set_ylabel("delta Q at P-SS [kvar]")
    ax.grid(alpha=0.3)
    ax.legend()
    ax.set_title("aggregated flexibility at the primary substation")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return str(path)
