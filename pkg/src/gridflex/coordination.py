"""TSO/DSO coordination schemes sequencing OPF and envelope computations.

Two schemes are supported. Under the TSO-leader scheme the DSO pre-qualifies
the full resource flexibility: the hard-constrained envelopes are computed on
the unconsumed boxes and offered as such. Under the DSO-leader scheme the DSO
first clears its own needs with the combined operation problem; the residual
envelopes are then swept around the post-dispatch operating point with each
resource box translated by its consumed setpoint (the absolute capability is
unchanged, the offerable deltas shrink on the consumed side and grid security
caps any give-back).

The service taxonomy carried here is informational labeling for exports; it
does not alter the computations.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
import numpy as np

from .conic import SolverSettings
from .errors import UnknownScheme
from .envelope import FAST, SLOW, FlexEnvelope, sweep_envelope
from .network import TimeSeries
from .opf import LvGridModel, OpfScenario, ScheduleResult, assemble_lv_grids, solve_schedule
from .sensitivity import shift_operating_point

__all__ = [
    "SchemeKind",
    "CoordinationScheme",
    "TSO_LEADER",
    "DSO_LEADER",
    "parse_scheme",
    "ServiceCatalog",
    "DEFAULT_SERVICE_CATALOG",
    "TsoLeaderResult",
    "DsoLeaderResult",
    "run_tso_leader",
    "run_dso_leader",
]


class SchemeKind(str, Enum):
    TSO_LEADER = "tso_leader"
    DSO_LEADER = "dso_leader"


@dataclass(frozen=True)
class CoordinationScheme:
    """A scheme kind plus its ordered process list."""

    kind: SchemeKind
    processes: tuple[str, ...]

    def __post_init__(self):
        if not self.processes:
            raise ValueError("a coordination scheme needs at least one process")
        if len(set(self.processes)) != len(self.processes):
            raise ValueError("process list must not repeat steps")


TSO_LEADER = CoordinationScheme(
    kind=SchemeKind.TSO_LEADER,
    processes=(
        "dso_prequalification_sweep",
        "offer_envelopes_to_tso_market",
        "tso_activation_within_envelopes",
    ),
)

DSO_LEADER = CoordinationScheme(
    kind=SchemeKind.DSO_LEADER,
    processes=(
        "dso_combined_optimal_operation",
        "residual_envelope_aggregation",
        "offer_envelopes_to_tso_market",
    ),
)


def parse_scheme(name: str) -> CoordinationScheme:
    try:
        kind = SchemeKind(name)
    except ValueError:
        valid = ", ".join(k.value for k in SchemeKind)
        raise UnknownScheme(f"unknown scheme {name!r}; expected one of: {valid}") from None
    return TSO_LEADER if kind is SchemeKind.TSO_LEADER else DSO_LEADER


@dataclass(frozen=True)
class ServiceCatalog:
    """Fast/slow service labels per operator, attached to envelope exports."""

    tso_fast: tuple[str, ...]
    tso_slow: tuple[str, ...]
    dso_fast: tuple[str, ...]
    dso_slow: tuple[str, ...]


DEFAULT_SERVICE_CATALOG = ServiceCatalog(
    tso_fast=(
        "inertia (not market-available)",
        "primary frequency response (FCR, FFR, EFR)",
        "secondary reserves (aFRR)",
        "ramping response",
    ),
    tso_slow=(
        "tertiary response (mFRR)",
        "tertiary response (RR)",
        "voltage and reactive power",
        "congestion",
        "black start",
        "balancing capacity reserves",
    ),
    dso_fast=(),
    dso_slow=("voltage", "congestion", "peak shaving", "load levelling"),
)


@dataclass(frozen=True)
class TsoLeaderResult:
    scheme: CoordinationScheme
    fast: FlexEnvelope
    slow: FlexEnvelope


@dataclass(frozen=True)
class DsoLeaderResult:
    scheme: CoordinationScheme
    schedule: ScheduleResult
    fast: FlexEnvelope
    slow: FlexEnvelope


def run_tso_leader(
    sc: OpfScenario,
    n_dirs: int = 32,
    *,
    step: int | None = 0,
    window: int | None = None,
    settings: SolverSettings | None = None,
) -> TsoLeaderResult:
    """Pre-qualified fast and slow envelopes on the full flexibility boxes."""
    kw = dict(step=step, settings=settings)
    if window is not None:
        kw["window"] = window
    fast = sweep_envelope(sc, n_dirs, FAST, **kw)
    slow = sweep_envelope(sc, n_dirs, SLOW, **kw)
    return TsoLeaderResult(scheme=TSO_LEADER, fast=fast, slow=slow)


def _residual_scenario(
    sc: OpfScenario, schedule: ScheduleResult
) -> tuple[OpfScenario, dict[str, np.ndarray]]:
    """Scenario re-centered on the dispatched setpoints, plus box overrides.

    Baselines absorb the dispatched deltas; each box is translated by the
    consumed amount so the absolute capability stays put. LV grids backed by
    a reference network are re-assembled exactly (operating points per step,
    coefficients refreshed under the trust-radius rule); coefficient-only
    grids get linearly shifted operating points.
    """
    T = sc.series.horizon
    kva = sc.network.base_kva
    rid_pos = {rid: k for k, rid in enumerate(schedule.resource_ids)}

    baselines = dict(sc.series.resource_baselines)
    box_override: dict[str, np.ndarray] = {}
    for res in sc.resources:
        k = rid_pos[res.id]
        delta = np.column_stack([schedule.dp[:, k], schedule.dq[:, k]])
        base = sc.resource_baseline_pu(res.id)
        baselines[res.id] = base + delta
        box = np.empty((T, 2, 2))
        box[:, 0, 0] = res.dp_min_kw / kva - delta[:, 0]
        box[:, 0, 1] = res.dp_max_kw / kva - delta[:, 0]
        box[:, 1, 0] = res.dq_min_kvar / kva - delta[:, 1]
        box[:, 1, 1] = res.dq_max_kvar / kva - delta[:, 1]
        box_override[res.id] = box

    series = TimeSeries(
        step_minutes=sc.series.step_minutes,
        horizon=T,
        mv_injections=sc.series.mv_injections,
        resource_baselines=baselines,
        lv_background=sc.series.lv_background,
        tso_schedule=sc.series.tso_schedule,
    )

    lv_grids: dict[str, LvGridModel] = {}
    reference_nets = {
        gid: lv.reference_net
        for gid, lv in sc.lv_grids.items()
        if lv.reference_net is not None
    }
    if reference_nets:
        lv_grids.update(
            assemble_lv_grids(
                reference_nets,
                sc.resources,
                series,
                with_loss_sensitivity=sc.lv_grids[next(iter(reference_nets))].models[0].loss_p_dp
                is not None,
            )
        )
    for gid, lv in sc.lv_grids.items():
        if gid in lv_grids:
            continue
        new_ops = []
        for t, (model, op) in enumerate(zip(lv.models, lv.ops)):
            dp_t: dict[str, float] = {}
            dq_t: dict[str, float] = {}
            for res in sc.resources:
                if res.lv_grid != gid:
                    continue
                k = rid_pos[res.id]
                dp_t[res.lv_node] = dp_t.get(res.lv_node, 0.0) + float(schedule.dp[t, k])
                dq_t[res.lv_node] = dq_t.get(res.lv_node, 0.0) + float(schedule.dq[t, k])
            new_ops.append(shift_operating_point(model, op, dp_t, dq_t))
        lv_grids[gid] = replace(lv, ops=tuple(new_ops))

    residual = replace(sc, name=f"{sc.name}+dso_dispatch", series=series, lv_grids=lv_grids)
    return residual, box_override


def run_dso_leader(
    sc: OpfScenario,
    n_dirs: int = 32,
    *,
    step: int | None = 0,
    window: int | None = None,
    settings: SolverSettings | None = None,
) -> DsoLeaderResult:
    """Combined OPF first, then residual fast/slow envelopes."""
    schedule = solve_schedule(sc)
    residual, box_override = _residual_scenario(sc, schedule)
    kw = dict(step=step, box_override=box_override, settings=settings)
    if window is not None:
        kw["window"] = window
    fast = sweep_envelope(residual, n_dirs, FAST, **kw)
    slow = sweep_envelope(residual, n_dirs, SLOW, **kw)
    return DsoLeaderResult(scheme=DSO_LEADER, schedule=schedule, fast=fast, slow=slow)
