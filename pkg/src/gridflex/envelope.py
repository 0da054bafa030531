"""Aggregated fast/slow P-Q flexibility envelopes at the primary substation.

The reachable set of slack-exchange deviations (dp, dq) is convex, so its
boundary is traced by maximizing directional objectives ``alpha dp + beta dq``
over the hard-constrained combined MV+LV problem: full boxes for eligible
resources, frozen deltas for resources too slow for the service class,
per-step ramp caps, SOC chains, and hard voltage/ampacity limits on both
grids (pre-qualification semantics: an envelope point can never violate the
distribution grid).

Deviations are measured import-positive against the exact baseline power flow
at a pinned slack voltage. Each direction is evaluated in two phases. The
conic solve picks the resource setpoints; its objective carries a small loss
guard that removes the relaxation's incentive to inflate branch currents
(fake losses raise the apparent import under maximization). The reported
envelope point is then the exact fixed-point power flow re-evaluated at those
setpoints, so every point is a physically consistent exchange deviation and
the baseline is reproduced exactly when no resource moves.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from .conic import Expr, SolverSettings, Status, solve
from .errors import (
    InvalidDirection,
    InvalidThreshold,
    MismatchedScenario,
    NonConvergence,
    SolveFailed,
)
from .network import Resource, solve_distflow_fixed_point
from .opf import BuildOptions, OpfScenario, baseline_mv_state, build_program, slice_scenario

DEFAULT_WINDOW = 6  # steps of ramp/SOC context on each side of the reported step

# Envelope solves tolerate loose voltage-drop equality residuals (p.u.^2
# rows with 1e-4-scale current coefficients); support accuracy is governed
# by the duality gap, which stays orders of magnitude tighter.
ENVELOPE_SETTINGS = SolverSettings(feas_tol=1e-5, gap_tol=1e-6)

__all__ = [
    "ServiceSpeed",
    "ServiceClass",
    "FAST",
    "SLOW",
    "Direction",
    "Classification",
    "classify_resources",
    "EnvelopePoint",
    "FlexEnvelope",
    "envelope_baseline",
    "max_direction",
    "sweep_envelope",
    "EnvelopeComparison",
    "envelope_report",
    "convex_hull",
    "polygon_area",
    "hull_excess",
]

DEFAULT_RAMP_THRESHOLD_KW_PER_HR = 4.0


class ServiceSpeed(str, Enum):
    FAST = "fast"
    SLOW = "slow"


@dataclass(frozen=True)
class ServiceClass:
    """Service family, split by ramp capability at ``ramp_threshold``."""

    speed: ServiceSpeed
    ramp_threshold_kw_per_hr: float = DEFAULT_RAMP_THRESHOLD_KW_PER_HR

    def __post_init__(self):
        if not self.ramp_threshold_kw_per_hr > 0:
            raise InvalidThreshold(
                f"ramp threshold must be positive, got {self.ramp_threshold_kw_per_hr}"
            )


FAST = ServiceClass(ServiceSpeed.FAST)
SLOW = ServiceClass(ServiceSpeed.SLOW)


@dataclass(frozen=True)
class Direction:
    """Objective direction in the (dp, dq) plane."""

    alpha: float
    beta: float

    def __post_init__(self):
        if not (math.isfinite(self.alpha) and math.isfinite(self.beta)):
            raise InvalidDirection("direction components must be finite")
        if math.hypot(self.alpha, self.beta) == 0.0:
            raise InvalidDirection("direction (0, 0) has no maximizer")

    @classmethod
    def from_angle(cls, theta: float) -> "Direction":
        return cls(math.cos(theta), math.sin(theta))

    @property
    def theta(self) -> float:
        return math.atan2(self.beta, self.alpha)


@dataclass(frozen=True)
class Classification:
    fast_eligible: tuple[str, ...]
    slow_only: tuple[str, ...]


def classify_resources(
    resources: Sequence[Resource], ramp_threshold_kw_per_hr: float = DEFAULT_RAMP_THRESHOLD_KW_PER_HR
) -> Classification:
    """Partition resources by ramp capability.

    A resource is fast-eligible iff its ramp capability reaches the
    threshold; every resource can serve slow products.
    """
    if not ramp_threshold_kw_per_hr > 0:
        raise InvalidThreshold(f"ramp threshold must be positive, got {ramp_threshold_kw_per_hr}")
    fast = tuple(r.id for r in resources if r.ramp_kw_per_hr >= ramp_threshold_kw_per_hr)
    slow_only = tuple(r.id for r in resources if r.ramp_kw_per_hr < ramp_threshold_kw_per_hr)
    return Classification(fast_eligible=fast, slow_only=slow_only)


@dataclass(frozen=True)
class EnvelopePoint:
    """One support point of the envelope, p.u. deltas at the P-SS."""

    theta: float
    alpha: float
    beta: float
    dp: float
    dq: float
    status: Status
    setpoints_dp: Mapping[str, np.ndarray] = field(default_factory=dict)  # rid -> (T,)
    setpoints_dq: Mapping[str, np.ndarray] = field(default_factory=dict)

    @property
    def support(self) -> float:
        return self.alpha * self.dp + self.beta * self.dq

    @property
    def ok(self) -> bool:
        return self.status is Status.OPTIMAL


@dataclass(frozen=True)
class FlexEnvelope:
    """Swept flexibility region for one service class.

    ``step`` is the horizon step the deltas are reported at (None for the
    horizon-sum mode). Points are ordered by increasing angle; failed
    directions keep their slot with a non-optimal status.
    """

    scenario: str
    service: ServiceClass
    step: int | None
    n_dirs: int
    baseline_pq: np.ndarray  # (T, 2) exact baseline exchange
    points: tuple[EnvelopePoint, ...]

    def ok_points(self) -> tuple[EnvelopePoint, ...]:
        return tuple(p for p in self.points if p.ok)

    def vertices(self) -> np.ndarray:
        return np.array([[p.dp, p.dq] for p in self.ok_points()]).reshape(-1, 2)

    @property
    def area(self) -> float:
        return polygon_area(convex_hull(self.vertices()))


def envelope_baseline(sc: OpfScenario) -> np.ndarray:
    """Exact baseline exchange at the P-SS per step, import-positive."""
    T = sc.series.horizon
    out = np.zeros((T, 2))
    for t in range(T):
        st = baseline_mv_state(sc, t)
        out[t] = (st.slack_p, st.slack_q)
    return out


GUARD_MARGIN = 1e-6
GUARD_FLOOR = 1e-4


def _loss_guard(sc: OpfScenario, d: Direction, margin: float = GUARD_MARGIN):
    """Per-branch charges on ``l`` that make inflated currents unprofitable.

    Inflating ``l`` on branch b raises the apparent import by ``r_b`` (and the
    reactive import by ``x_b``) per unit, so a maximization along (alpha,
    beta) profits ``alpha r_b + beta x_b`` from fake losses. Charging exactly
    that profit plus a resolution-level sliver zeroes the incentive. The
    remaining drift of currents on profit-free branches is pinned separately
    by a symmetric charge on ``|l - l_baseline|`` (see ``lguard``): a
    two-sided anchor resists current changes instead of rewarding
    loss-reducing resource moves, which a one-sided floor would.
    """
    guards = []
    for b in sc.network.branches:
        profit = max(0.0, d.alpha * b.r + d.beta * b.x)
        guards.append(profit * (1.0 + margin))
    return guards


def _oracle_eval(
    sc: OpfScenario,
    t: int,
    dp_t: Mapping[str, float],
    dq_t: Mapping[str, float],
):
    """Exact MV state at step ``t`` for per-resource deltas.

    LV grids enter through their linear boundary-flow model (the same model
    the optimization used); the MV network is the exact fixed-point power
    flow at the pinned slack voltage. Returns the MV state plus the predicted
    LV voltages/currents per grid for feasibility checks.
    """
    from .sensitivity import boundary_deltas, couple_lv_voltage

    offtakes: dict[str, tuple[float, float]] = {}
    lv_deltas: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    for link in sc.network.transformers:
        gid = link.lv_grid
        lv = sc.lv_grids[gid]
        model, op = lv.models[t], lv.ops[t]
        vp = np.zeros(len(model.injectors))
        vq = np.zeros(len(model.injectors))
        for res in sc.resources:
            if res.lv_grid != gid:
                continue
            j = model.injector_index(res.lv_node)
            vp[j] += dp_t.get(res.id, 0.0)
            vq[j] += dq_t.get(res.id, 0.0)
        dps, dqs = boundary_deltas(model, vp, vq)
        offtakes[gid] = (op.p_slack + dps, op.q_slack + dqs)
        lv_deltas[gid] = (vp, vq)
    inj = {nid: (s[t, 0], s[t, 1]) for nid, s in sc.series.mv_injections.items()}
    state = solve_distflow_fixed_point(
        sc.network, inj, slack_v=sc.slack_v0**2, transformer_offtakes=offtakes
    )
    lv_v: dict[str, np.ndarray] = {}
    lv_i: dict[str, np.ndarray] = {}
    node_pos = sc.network.node_index()
    for gi, link in enumerate(sc.network.transformers):
        gid = link.lv_grid
        lv = sc.lv_grids[gid]
        model, op = lv.models[t], lv.ops[t]
        vp, vq = lv_deltas[gid]
        v_m = float(state.v[node_pos[link.mv_node]])
        lv_v[gid] = couple_lv_voltage(v_m, op.drop) + model.k_vp @ vp + model.k_vq @ vq
        lv_i[gid] = op.i0 + model.k_ip @ vp + model.k_iq @ vq
    return state, lv_v, lv_i


def _point_feasible(sc: OpfScenario, state, lv_v, lv_i, slack_feas: float = 1e-9) -> bool:
    """Hard security check of an oracle-evaluated candidate state."""
    limits = sc.security_limits()
    if np.any(state.v > limits.mv_vmax2 + slack_feas) or np.any(
        state.v < limits.mv_vmin2 - slack_feas
    ):
        return False
    if np.any(state.l > limits.mv_lmax + slack_feas):
        return False
    for gid, v in lv_v.items():
        if np.any(v > limits.lv_vmax[gid] + slack_feas) or np.any(
            v < limits.lv_vmin[gid] - slack_feas
        ):
            return False
        imax = limits.lv_imax[gid]
        finite = np.isfinite(imax)
        if np.any(np.abs(lv_i[gid][finite]) > imax[finite] + slack_feas):
            return False
    return True


def _effective_box(
    sc: OpfScenario,
    res: Resource,
    t: int,
    box_override: Mapping[str, np.ndarray] | None,
    frozen: frozenset[str],
) -> tuple[float, float, float, float]:
    if res.id in frozen:
        return (0.0, 0.0, 0.0, 0.0)
    if box_override and res.id in box_override:
        b = box_override[res.id][t]
        return (float(b[0, 0]), float(b[0, 1]), float(b[1, 0]), float(b[1, 1]))
    kva = sc.network.base_kva
    return (
        res.dp_min_kw / kva,
        res.dp_max_kw / kva,
        res.dq_min_kvar / kva,
        res.dq_max_kvar / kva,
    )


def _resource_step_feasible(
    sc: OpfScenario,
    res: Resource,
    t: int,
    cand_dp: float,
    cand_dq: float,
    dp_path: np.ndarray,
    dq_path: np.ndarray,
    box: tuple[float, float, float, float],
    ramped: bool,
) -> bool:
    """Resource-local checks for changing one step's delta to a candidate."""
    from .opf import _pf_literal_rows

    plo, phi, qlo, qhi = box
    tol = 1e-9
    if not (plo - tol <= cand_dp <= phi + tol and qlo - tol <= cand_dq <= qhi + tol):
        return False
    baseline = sc.resource_baseline_pu(res.id)
    base = baseline[t]
    p_tot = base[0] + cand_dp
    q_tot = base[1] + cand_dq
    kva = sc.network.base_kva
    tau = math.tan(math.acos(res.pf_limit))
    if _pf_literal_rows(res, baseline, kva):
        if not (-tau * p_tot - tol <= q_tot <= tau * p_tot + tol):
            return False
    else:
        cap = max(abs(base[0] + res.dp_min_kw / kva), abs(base[0] + res.dp_max_kw / kva))
        if abs(q_tot) > tau * cap + tol:
            return False
    radius = math.sqrt(sc.inverter_overrating) * res.s_kva / kva
    if math.hypot(p_tot, q_tot) > radius + tol:
        return False
    if ramped:
        dt_hr = sc.series.step_hours
        cap_step = res.ramp_kw_per_hr * dt_hr / kva
        for tn in (t - 1, t + 1):
            if 0 <= tn < len(dp_path):
                if abs(cand_dp - dp_path[tn]) > cap_step + tol:
                    return False
                if abs(cand_dq - dq_path[tn]) > cap_step + tol:
                    return False
    if res.is_storage:
        c = res.eta * sc.series.step_hours * sc.network.base_kva / res.capacity_kwh
        base_p = sc.resource_baseline_pu(res.id)[:, 0]
        soc = res.soc0
        for tt in range(len(dp_path)):
            d = cand_dp if tt == t else dp_path[tt]
            soc -= c * (base_p[tt] + d)
            if not res.soc_min - tol <= soc <= res.soc_max + tol:
                return False
    return True


def _polish_point(
    sc: OpfScenario,
    d: Direction,
    t: int,
    frozen: frozenset[str],
    setpoints_dp: Mapping[str, np.ndarray],
    setpoints_dq: Mapping[str, np.ndarray],
    boxes: Mapping[str, tuple[float, float, float, float]],
    baseline_t: np.ndarray,
    max_rounds: int = 3,
) -> tuple[float, float]:
    """Greedy box-corner improvement of the objective-step deltas.

    The conic solve cannot credit support that arrives purely through the
    network loss coupling (its guard must neutralize exactly that term to
    stay tight), so the achieved setpoints may sit a few 1e-5 p.u. below the
    true support in coupling-dominated directions. This pass re-evaluates
    box-end candidates per resource through the exact oracle, accepting only
    hard-feasible improvements, and returns the final exchange deviation.
    """
    dp_t = {rid: float(col[t]) for rid, col in setpoints_dp.items()}
    dq_t = {rid: float(col[t]) for rid, col in setpoints_dq.items()}
    state, lv_v, lv_i = _oracle_eval(sc, t, dp_t, dq_t)
    best = (
        d.alpha * (state.slack_p - baseline_t[0]) + d.beta * (state.slack_q - baseline_t[1]),
        state.slack_p - baseline_t[0],
        state.slack_q - baseline_t[1],
    )
    for _ in range(max_rounds):
        improved = False
        for res in sc.resources:
            if res.id in frozen:
                continue
            plo, phi, qlo, qhi = boxes[res.id]
            cands = {(plo, dq_t[res.id]), (phi, dq_t[res.id])}
            if qhi > qlo:
                cands |= {(dp_t[res.id], qlo), (dp_t[res.id], qhi)}
            for cand_dp, cand_dq in cands:
                if (
                    abs(cand_dp - dp_t[res.id]) < 1e-12
                    and abs(cand_dq - dq_t[res.id]) < 1e-12
                ):
                    continue
                if not _resource_step_feasible(
                    sc,
                    res,
                    t,
                    cand_dp,
                    cand_dq,
                    setpoints_dp[res.id],
                    setpoints_dq[res.id],
                    boxes[res.id],
                    ramped=True,
                ):
                    continue
                trial_dp = dict(dp_t)
                trial_dq = dict(dq_t)
                trial_dp[res.id] = cand_dp
                trial_dq[res.id] = cand_dq
                try:
                    st2, v2, i2 = _oracle_eval(sc, t, trial_dp, trial_dq)
                except NonConvergence:
                    continue
                if not _point_feasible(sc, st2, v2, i2):
                    continue
                sup = d.alpha * (st2.slack_p - baseline_t[0]) + d.beta * (
                    st2.slack_q - baseline_t[1]
                )
                if sup > best[0] + 1e-12:
                    best = (sup, st2.slack_p - baseline_t[0], st2.slack_q - baseline_t[1])
                    dp_t, dq_t = trial_dp, trial_dq
                    improved = True
        if not improved:
            break
    for rid in dp_t:
        setpoints_dp[rid][t] = dp_t[rid]
        setpoints_dq[rid][t] = dq_t[rid]
    return best[1], best[2]


def _flex_options(
    sc: OpfScenario,
    svc: ServiceClass,
    baseline: np.ndarray,
    box_override=None,
    l_anchor: np.ndarray | None = None,
) -> BuildOptions:
    cls = classify_resources(sc.resources, svc.ramp_threshold_kw_per_hr)
    frozen = frozenset(cls.slow_only) if svc.speed is ServiceSpeed.FAST else frozenset()
    return BuildOptions(
        hard_mv_security=True,
        pin_slack_voltage=True,
        frozen_resources=frozen,
        ramp_caps=True,
        box_override_pu=box_override,
        baseline_slack_pq=baseline,
        l_anchor=l_anchor,
    )


def _baseline_profile(sc: OpfScenario) -> tuple[np.ndarray, np.ndarray]:
    """Exact baseline exchange (T, 2) and branch currents (T, n_br)."""
    T = sc.series.horizon
    pq = np.zeros((T, 2))
    l0 = np.zeros((T, len(sc.network.branches)))
    for t in range(T):
        st = baseline_mv_state(sc, t)
        pq[t] = (st.slack_p, st.slack_q)
        l0[t] = st.l
    return pq, l0


def max_direction(
    sc: OpfScenario,
    d: Direction,
    svc: ServiceClass = SLOW,
    *,
    step: int | None = 0,
    window: int | None = DEFAULT_WINDOW,
    baseline: np.ndarray | None = None,
    box_override: Mapping[str, np.ndarray] | None = None,
    settings: SolverSettings | None = None,
) -> EnvelopePoint:
    """Support point of the flexibility region along direction ``d``.

    ``step`` selects the reported step; deltas at neighboring steps stay free
    within ramp and SOC coupling, and ``window`` bounds how many neighbor
    steps participate (deltas outside the window are frozen at baseline;
    ``None`` couples the whole horizon). ``step=None`` maximizes the horizon
    sum instead. Raises :class:`SolveFailed` when the solve does not reach
    optimality; an infeasible status means the baseline itself violates the
    hard limits and is reported as such rather than hidden.
    """
    T = sc.series.horizon
    if step is not None and not 0 <= step < T:
        raise ValueError(f"step {step} outside horizon {T}")

    lo, hi = 0, T
    if step is not None and window is not None:
        lo, hi = max(0, step - window), min(T, step + window + 1)
    sub = slice_scenario(sc, lo, hi)
    local_step = None if step is None else step - lo
    sub_baseline, l_anchor = _baseline_profile(sub)
    if baseline is not None:
        sub_baseline = np.asarray(baseline, dtype=float)[lo:hi]
    sub_override = None
    if box_override is not None:
        sub_override = {rid: box[lo:hi] for rid, box in box_override.items()}

    built = build_program(
        sub, _flex_options(sub, svc, sub_baseline, sub_override, l_anchor=l_anchor)
    )
    prog, ix = built.program, built.index

    steps = range(ix.T) if local_step is None else (local_step,)
    obj = Expr()
    for t in steps:
        obj = obj + (-d.alpha) * prog.var(ix.denv_p[t]) + (-d.beta) * prog.var(ix.denv_q[t])
    guards = _loss_guard(sc, d)
    anchor_w = [GUARD_FLOOR * (b.r + abs(b.x)) for b in sc.network.branches]
    for t in range(ix.T):
        for b, g in enumerate(guards):
            if g:
                obj = obj + g * prog.var(ix.l[t, b])
            if anchor_w[b]:
                obj = obj + anchor_w[b] * prog.var(ix.lguard[t, b])
    prog.set_objective(obj)

    sol = solve(prog, settings or ENVELOPE_SETTINGS)
    if sol.status is not Status.OPTIMAL:
        msg = f"direction (alpha={d.alpha:.4f}, beta={d.beta:.4f}) ended {sol.status.value}"
        if sol.status is Status.INFEASIBLE:
            msg += "; the baseline operating point violates the hard security limits"
        raise SolveFailed(msg, sol)

    local_dp = {rid: sol.x[ix.dp[:, k]].copy() for k, rid in enumerate(ix.resource_ids)}
    local_dq = {rid: sol.x[ix.dq[:, k]].copy() for k, rid in enumerate(ix.resource_ids)}
    cls = classify_resources(sub.resources, svc.ramp_threshold_kw_per_hr)
    frozen = frozenset(cls.slow_only) if svc.speed is ServiceSpeed.FAST else frozenset()

    # report the exact power-flow deviation at the chosen setpoints; in
    # single-step mode additionally polish coupling-dominated directions
    try:
        if local_step is None:
            dp = dq = 0.0
            for t_loc in range(sub.series.horizon):
                state, _, _ = _oracle_eval(
                    sub,
                    t_loc,
                    {rid: float(col[t_loc]) for rid, col in local_dp.items()},
                    {rid: float(col[t_loc]) for rid, col in local_dq.items()},
                )
                dp += state.slack_p - float(sub_baseline[t_loc, 0])
                dq += state.slack_q - float(sub_baseline[t_loc, 1])
        else:
            boxes = {
                res.id: _effective_box(sub, res, local_step, sub_override, frozen)
                for res in sub.resources
            }
            dp, dq = _polish_point(
                sub,
                d,
                local_step,
                frozen,
                local_dp,
                local_dq,
                boxes,
                sub_baseline[local_step],
            )
    except NonConvergence as exc:
        raise SolveFailed(
            f"direction (alpha={d.alpha:.4f}, beta={d.beta:.4f}): exact re-evaluation "
            f"of the optimal setpoints diverged: {exc}",
            sol,
        ) from exc

    def padded(col: np.ndarray) -> np.ndarray:
        full = np.zeros(T)
        full[lo:hi] = col
        return full

    point = EnvelopePoint(
        theta=d.theta,
        alpha=d.alpha,
        beta=d.beta,
        dp=float(dp),
        dq=float(dq),
        status=sol.status,
        setpoints_dp={rid: padded(col) for rid, col in local_dp.items()},
        setpoints_dq={rid: padded(col) for rid, col in local_dq.items()},
    )

    # Ramp-locked slow-only resources have no objective pull in directions
    # they serve only through loss coupling; the solver may park them
    # anywhere on a near-flat face, costing a sliver of true support. The
    # frozen (fast-eligible-only) dispatch is always slow-feasible, so keep
    # whichever of the two supports is larger.
    if svc.speed is ServiceSpeed.SLOW and cls.slow_only:
        frozen_point = max_direction(
            sc,
            d,
            ServiceClass(ServiceSpeed.FAST, svc.ramp_threshold_kw_per_hr),
            step=step,
            window=window,
            baseline=baseline,
            box_override=box_override,
            settings=settings,
        )
        if frozen_point.support > point.support:
            point = EnvelopePoint(
                theta=d.theta,
                alpha=d.alpha,
                beta=d.beta,
                dp=frozen_point.dp,
                dq=frozen_point.dq,
                status=frozen_point.status,
                setpoints_dp=frozen_point.setpoints_dp,
                setpoints_dq=frozen_point.setpoints_dq,
            )
    return point


def _worker_count() -> int:
    raw = os.environ.get("GRIDFLEX_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def sweep_envelope(
    sc: OpfScenario,
    n_dirs: int = 32,
    svc: ServiceClass = SLOW,
    *,
    step: int | None = 0,
    window: int | None = DEFAULT_WINDOW,
    box_override: Mapping[str, np.ndarray] | None = None,
    settings: SolverSettings | None = None,
    baseline: np.ndarray | None = None,
) -> FlexEnvelope:
    """Trace the envelope at ``n_dirs`` equally spaced angles.

    Directions solve independently (``GRIDFLEX_THREADS`` caps concurrency)
    and are assembled in angle order, so the result is deterministic
    regardless of completion order. A failed direction is kept as a
    non-optimal point instead of aborting the sweep.
    """
    if n_dirs < 4:
        raise ValueError(f"need at least 4 directions, got {n_dirs}")
    if baseline is None:
        baseline = envelope_baseline(sc)

    def one(j: int) -> EnvelopePoint:
        d = Direction.from_angle(2.0 * math.pi * j / n_dirs)
        try:
            return max_direction(
                sc,
                d,
                svc,
                step=step,
                window=window,
                baseline=baseline,
                box_override=box_override,
                settings=settings,
            )
        except SolveFailed as exc:
            status = exc.solution.status if exc.solution is not None else Status.NUMERICAL_FAILURE
            return EnvelopePoint(
                theta=d.theta, alpha=d.alpha, beta=d.beta, dp=math.nan, dq=math.nan, status=status
            )

    workers = _worker_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            points = list(pool.map(one, range(n_dirs)))
    else:
        points = [one(j) for j in range(n_dirs)]
    return FlexEnvelope(
        scenario=sc.name,
        service=svc,
        step=step,
        n_dirs=n_dirs,
        baseline_pq=baseline,
        points=tuple(points),
    )


# ---------------------------------------------------------------------------
# Geometry
# ---------------------------------------------------------------------------


def convex_hull(points: np.ndarray) -> np.ndarray:
    """Convex hull by monotone chain; returns counter-clockwise vertices.

    Degenerate inputs (empty, single point, collinear) return what is left
    after deduplication, which downstream treats as a zero-area polygon.
    """
    pts = np.unique(np.asarray(points, dtype=float).reshape(-1, 2), axis=0)
    if len(pts) <= 2:
        return pts
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    def half(iterable):
        out: list[np.ndarray] = []
        for p in iterable:
            while len(out) >= 2 and cross(out[-2], out[-1], p) <= 0:
                out.pop()
            out.append(p)
        return out

    lower = half(pts)
    upper = half(pts[::-1])
    hull = np.array(lower[:-1] + upper[:-1])
    return hull if len(hull) >= 3 else pts[:2]


def polygon_area(vertices: np.ndarray) -> float:
    """Shoelace area of an ordered polygon; degenerate inputs give 0."""
    v = np.asarray(vertices, dtype=float).reshape(-1, 2)
    if len(v) < 3:
        return 0.0
    x, y = v[:, 0], v[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def hull_excess(hull: np.ndarray, point: np.ndarray) -> float:
    """Distance of ``point`` outside the hull (0 when inside or on it)."""
    hull = np.asarray(hull, dtype=float).reshape(-1, 2)
    p = np.asarray(point, dtype=float)
    if len(hull) == 0:
        return math.inf
    if len(hull) == 1:
        return float(np.linalg.norm(p - hull[0]))
    if len(hull) == 2:
        return _segment_distance(hull[0], hull[1], p)
    # inside iff left of every ccw edge; outside distance via the edges
    excess = 0.0
    inside = True
    for a, b in zip(hull, np.roll(hull, -1, axis=0)):
        edge = b - a
        n = np.linalg.norm(edge)
        if n == 0:
            continue
        side = float(edge[0] * (p[1] - a[1]) - edge[1] * (p[0] - a[0])) / n
        if side < 0:
            inside = False
    if inside:
        return 0.0
    for a, b in zip(hull, np.roll(hull, -1, axis=0)):
        d = _segment_distance(a, b, p)
        excess = d if excess == 0.0 else min(excess, d)
    return excess


def _segment_distance(a: np.ndarray, b: np.ndarray, p: np.ndarray) -> float:
    ab = b - a
    denom = float(np.dot(ab, ab))
    t = 0.0 if denom == 0 else float(np.clip(np.dot(p - a, ab) / denom, 0.0, 1.0))
    return float(np.linalg.norm(p - (a + t * ab)))


# ---------------------------------------------------------------------------
# Comparison
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EnvelopeComparison:
    """Fast/slow comparison: areas, per-direction ratios, containment.

    Containment is verified support-wise: a convex set is contained in
    another iff its support function never exceeds the other's, so comparing
    the per-direction supports of the two sweeps is the exact finite test.
    ``hull_excess`` additionally reports the worst distance of a fast point
    outside the polygon through the slow points; that metric also picks up
    harmless optimal-face degeneracy (two different maximizers on one
    support line) and inscribed-polygon sagitta on curved boundary arcs, so
    it is diagnostic, not the verdict.
    """

    fast_area: float
    slow_area: float
    thetas: np.ndarray
    support_fast: np.ndarray
    support_slow: np.ndarray
    ratio: np.ndarray
    contained: bool
    support_excess: float  # worst support_fast - support_slow over directions
    hull_excess: float


def envelope_report(
    fast: FlexEnvelope, slow: FlexEnvelope, *, tolerance: float = 1e-6
) -> EnvelopeComparison:
    """Compare a fast and a slow envelope of the same scenario sweep."""
    if fast.scenario != slow.scenario or fast.step != slow.step:
        raise MismatchedScenario(
            f"cannot compare envelopes of {fast.scenario!r}@{fast.step} and "
            f"{slow.scenario!r}@{slow.step}"
        )
    if fast.baseline_pq.shape != slow.baseline_pq.shape or not np.allclose(
        fast.baseline_pq, slow.baseline_pq, atol=1e-9
    ):
        raise MismatchedScenario("envelopes were swept around different baselines")
    if fast.n_dirs != slow.n_dirs:
        raise MismatchedScenario("envelopes were swept at different granularities")

    thetas = np.array([p.theta for p in slow.points])
    sf = np.array([(p.support if p.ok else math.nan) for p in fast.points])
    ss = np.array([(p.support if p.ok else math.nan) for p in slow.points])
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(np.abs(ss) > 1e-12, sf / ss, np.nan)

    both = ~(np.isnan(sf) | np.isnan(ss))
    support_excess = float(np.max(sf[both] - ss[both], initial=-math.inf))

    hull_slow = convex_hull(slow.vertices())
    hx = 0.0
    for p in fast.ok_points():
        hx = max(hx, hull_excess(hull_slow, np.array([p.dp, p.dq])))
    return EnvelopeComparison(
        fast_area=fast.area,
        slow_area=slow.area,
        thetas=thetas,
        support_fast=sf,
        support_slow=ss,
        ratio=ratio,
        contained=support_excess <= tolerance,
        support_excess=support_excess,
        hull_excess=hx,
    )
