"""Radial MV network model, resources, time series, and an exact power-flow oracle.

The network is described in per unit on a single system base. Power flow is
expressed in branch-flow (DistFlow) variables: squared node voltage ``v_i``,
squared branch current ``l_ij`` and sending-end flows ``P_ij``, ``Q_ij``. The
oracle solves the nonconvex DistFlow equalities by a backward/forward sweep
fixed point on the tree; it is used to initialize operating points, to verify
optimizer output, and as the independent reference in tests.

Sign conventions (fixed here for the whole package):
  * nodal injections are generation-positive; consumption enters negatively,
  * the slack exchange ``slack_p``/``slack_q`` is import-positive: a positive
    value means power flowing from the upstream grid into this network,
  * transformer offtakes ``tr_p``/``tr_q`` are positive when the linked LV
    grid consumes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping

import numpy as np

from .errors import NonConvergence, UnknownNode

__all__ = [
    "Node",
    "Branch",
    "TransformerLink",
    "MvNetwork",
    "NodeInjection",
    "MvState",
    "ResourceKind",
    "Resource",
    "ObjectiveWeights",
    "TimeSeries",
    "ValidationIssue",
    "ValidationReport",
    "validate_network",
    "tree_order",
    "solve_distflow_fixed_point",
    "PhysicalBranch",
    "PhysicalNetwork",
    "to_physical",
    "from_physical",
]


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Node:
    """MV node with its voltage security band in p.u. magnitude."""

    id: str
    vmin: float = 0.9
    vmax: float = 1.1


@dataclass(frozen=True)
class Branch:
    """Series branch; ``r``/``x`` in p.u., ``i_max`` in p.u. current."""

    from_node: str
    to_node: str
    r: float
    x: float
    i_max: float


@dataclass(frozen=True)
class TransformerLink:
    """Coupling of an MV node to a model-less LV grid."""

    mv_node: str
    lv_grid: str


@dataclass(frozen=True)
class MvNetwork:
    """Radial MV network on a single per-unit base.

    ``base_kva`` and ``base_kv`` fix the physical interpretation of the
    per-unit data (single-phase equivalent: Z_base = V_base^2 / S_base,
    I_base = S_base / V_base).
    """

    name: str
    nodes: tuple[Node, ...]
    branches: tuple[Branch, ...]
    slack: str
    transformers: tuple[TransformerLink, ...] = ()
    base_kva: float = 1000.0
    base_kv: float = 20.0

    def node_ids(self) -> tuple[str, ...]:
        return tuple(n.id for n in self.nodes)

    def node_index(self) -> dict[str, int]:
        return {n.id: k for k, n in enumerate(self.nodes)}

    def branch_labels(self) -> tuple[str, ...]:
        return tuple(f"{b.from_node}-{b.to_node}" for b in self.branches)


@dataclass(frozen=True)
class NodeInjection:
    """Generation and consumption at one node for one time step, in p.u."""

    node: str
    pg: float = 0.0
    pc: float = 0.0
    qg: float = 0.0
    qc: float = 0.0

    @property
    def p(self) -> float:
        return self.pg - self.pc

    @property
    def q(self) -> float:
        return self.qg - self.qc


@dataclass(frozen=True)
class MvState:
    """Power-flow state of the MV network in DistFlow variables.

    Arrays are aligned with the network's node/branch order. ``residual`` is
    the worst branch defect ``|v_i l_ij - (P_ij^2 + Q_ij^2)|`` of the state.
    """

    node_ids: tuple[str, ...]
    branch_labels: tuple[str, ...]
    v: np.ndarray
    l: np.ndarray
    p_flow: np.ndarray
    q_flow: np.ndarray
    tr_grids: tuple[str, ...]
    tr_p: np.ndarray
    tr_q: np.ndarray
    slack_p: float
    slack_q: float
    residual: float


class ResourceKind(str, Enum):
    PV = "PV"
    EV_STORAGE = "EV_STORAGE"
    LOAD = "LOAD"


@dataclass(frozen=True)
class Resource:
    """Flexible resource hosted at an LV node.

    Flexibility is a box around the baseline injection: ``dp_min_kw`` <=
    delta-P <= ``dp_max_kw`` (likewise for Q). ``ramp_kw_per_hr`` is the
    resource's ramp capability, used both to classify fast/slow eligibility
    and as the per-step ramp cap in envelope estimation. Storage fields are
    meaningful only for ``EV_STORAGE``.
    """

    id: str
    lv_grid: str
    lv_node: str
    kind: ResourceKind
    dp_min_kw: float
    dp_max_kw: float
    dq_min_kvar: float = 0.0
    dq_max_kvar: float = 0.0
    s_kva: float = 10.0
    pf_limit: float = 0.95
    ramp_kw_per_hr: float = 0.0
    eta: float = 1.0
    capacity_kwh: float = 0.0
    soc_min: float = 0.1
    soc_max: float = 0.9
    soc0: float = 0.5

    def __post_init__(self):
        if self.dp_min_kw > self.dp_max_kw or self.dq_min_kvar > self.dq_max_kvar:
            raise ValueError(f"resource {self.id}: flexibility bounds out of order")
        if self.s_kva <= 0:
            raise ValueError(f"resource {self.id}: s_kva must be positive")
        if not 0.0 < self.pf_limit <= 1.0:
            raise ValueError(f"resource {self.id}: pf_limit must be in (0, 1]")
        if self.ramp_kw_per_hr < 0:
            raise ValueError(f"resource {self.id}: ramp must be nonnegative")
        if self.is_storage:
            if not 0.0 < self.eta <= 1.0:
                raise ValueError(f"resource {self.id}: eta must be in (0, 1]")
            if self.capacity_kwh <= 0:
                raise ValueError(f"resource {self.id}: storage needs capacity_kwh > 0")
            if not 0.0 <= self.soc_min < self.soc_max <= 1.0:
                raise ValueError(f"resource {self.id}: SOC band out of order")
            if not self.soc_min <= self.soc0 <= self.soc_max:
                raise ValueError(f"resource {self.id}: initial SOC outside band")

    @property
    def is_storage(self) -> bool:
        return self.kind is ResourceKind.EV_STORAGE


@dataclass(frozen=True)
class ObjectiveWeights:
    """Weights of the multi-objective operation cost.

    ``w_l`` prices technical losses, ``w_v``/``w_lim`` price voltage and
    congestion violations, ``w_p``/``w_q`` price deviations from the TSO
    schedule. ``violation_cost_rate`` converts raw violation magnitudes to
    currency in reports (100 currency units per p.u. step by default).
    """

    w_l: float = 1.0
    w_v: float = 100.0
    w_lim: float = 100.0
    w_p: float = 0.0
    w_q: float = 0.0
    violation_cost_rate: float = 100.0

    def __post_init__(self):
        for name in ("w_l", "w_v", "w_lim", "w_p", "w_q", "violation_cost_rate"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")


@dataclass(frozen=True)
class TimeSeries:
    """Baseline injections over a uniform-step horizon, all in p.u.

    ``mv_injections`` maps MV node id to a (T, 2) array of net (p, q);
    ``resource_baselines`` maps resource id to its (T, 2) baseline injection;
    ``lv_background`` maps LV grid id -> LV node id -> (T, 2) background
    injection (non-flexible LV load or generation). ``tso_schedule`` is an
    optional (T, 2) scheduled exchange at the primary substation.
    """

    step_minutes: float
    horizon: int
    mv_injections: Mapping[str, np.ndarray] = field(default_factory=dict)
    resource_baselines: Mapping[str, np.ndarray] = field(default_factory=dict)
    lv_background: Mapping[str, Mapping[str, np.ndarray]] = field(default_factory=dict)
    tso_schedule: np.ndarray | None = None

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1 step")
        if self.step_minutes <= 0:
            raise ValueError("step length must be positive")
        for name, series in self._all_series():
            arr = np.asarray(series, dtype=float)
            if arr.shape != (self.horizon, 2):
                raise ValueError(f"series {name!r} must have shape ({self.horizon}, 2)")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"series {name!r} contains non-finite values")

    def _all_series(self):
        for nid, s in self.mv_injections.items():
            yield nid, s
        for rid, s in self.resource_baselines.items():
            yield rid, s
        for gid, per_node in self.lv_background.items():
            for nid, s in per_node.items():
                yield f"{gid}:{nid}", s
        if self.tso_schedule is not None:
            yield "tso_schedule", self.tso_schedule

    @property
    def step_hours(self) -> float:
        return self.step_minutes / 60.0


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ValidationIssue:
    code: str
    message: str


@dataclass(frozen=True)
class ValidationReport:
    issues: tuple[ValidationIssue, ...]

    @property
    def ok(self) -> bool:
        return not self.issues

    def codes(self) -> tuple[str, ...]:
        return tuple(i.code for i in self.issues)

    def __str__(self) -> str:
        if self.ok:
            return "network ok"
        return "\n".join(f"[{i.code}] {i.message}" for i in self.issues)


def validate_network(net: MvNetwork) -> ValidationReport:
    """Check every structural invariant of ``net``; never raises.

    The report is empty exactly when the network is usable: connected radial
    graph, positive ampacities, finite impedances with ``r >= 0``, ordered
    voltage bands, one existing slack, and well-formed transformer links.
    """
    issues: list[ValidationIssue] = []
    emit = lambda code, msg: issues.append(ValidationIssue(code, msg))

    ids = [n.id for n in net.nodes]
    seen = set()
    for nid in ids:
        if nid in seen:
            emit("DuplicateNode", f"node id {nid!r} appears more than once")
        seen.add(nid)

    if net.slack not in seen:
        emit("UnknownSlack", f"slack node {net.slack!r} is not in the node list")

    for n in net.nodes:
        if not (math.isfinite(n.vmin) and math.isfinite(n.vmax)):
            emit("BadVoltageBand", f"node {n.id}: non-finite voltage band")
        elif not 0.0 < n.vmin < n.vmax:
            emit("BadVoltageBand", f"node {n.id}: requires 0 < vmin < vmax")

    for b in net.branches:
        label = f"{b.from_node}-{b.to_node}"
        if b.from_node not in seen or b.to_node not in seen:
            emit("DanglingBranch", f"branch {label} references an unknown node")
        if not (math.isfinite(b.r) and math.isfinite(b.x)):
            emit("NonFiniteImpedance", f"branch {label}: r/x must be finite")
        if math.isfinite(b.r) and b.r < 0:
            emit("NegativeResistance", f"branch {label}: r must be nonnegative")
        if not b.i_max > 0:
            emit("NonPositiveAmpacity", f"branch {label}: i_max must be positive")

    if len(net.branches) != len(net.nodes) - 1:
        emit(
            "RadialityViolated",
            f"{len(net.branches)} branches for {len(net.nodes)} nodes "
            f"(a radial network needs |branches| = |nodes| - 1)",
        )

    # Connectivity via BFS over an adjacency map; only meaningful if the
    # branch endpoints resolved.
    if not any(i.code == "DanglingBranch" for i in issues) and net.slack in seen:
        adj: dict[str, list[str]] = {nid: [] for nid in seen}
        for b in net.branches:
            adj[b.from_node].append(b.to_node)
            adj[b.to_node].append(b.from_node)
        reached = {net.slack}
        frontier = [net.slack]
        while frontier:
            nxt = []
            for u in frontier:
                for w in adj[u]:
                    if w not in reached:
                        reached.add(w)
                        nxt.append(w)
            frontier = nxt
        if len(reached) != len(seen):
            missing = sorted(seen - reached)
            emit("Disconnected", f"nodes unreachable from slack: {', '.join(missing)}")

    grids = set()
    for t in net.transformers:
        if t.mv_node not in seen:
            emit("BadTransformerLink", f"link to {t.lv_grid!r}: MV node {t.mv_node!r} unknown")
        if t.lv_grid in grids:
            emit("DuplicateTransformerGrid", f"LV grid {t.lv_grid!r} linked more than once")
        grids.add(t.lv_grid)

    return ValidationReport(tuple(issues))


# ---------------------------------------------------------------------------
# Tree orientation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TreeOrder:
    """Orientation of a radial network away from the slack.

    ``branch_from``/``branch_to`` give the oriented endpoints of each branch
    (parent side first); ``branch_order`` lists branch indices sorted from the
    root towards the leaves, so iterating it in reverse visits every branch
    after all branches below it.
    """

    node_ids: tuple[str, ...]
    slack_index: int
    branch_from: np.ndarray
    branch_to: np.ndarray
    branch_order: np.ndarray
    parent_branch: np.ndarray  # per node: index of the branch feeding it, -1 at slack


def tree_order(net: MvNetwork) -> TreeOrder:
    """Orient ``net`` away from its slack; requires a valid radial network."""
    index = net.node_index()
    n = len(net.nodes)
    adj: list[list[tuple[int, int]]] = [[] for _ in range(n)]  # (neighbor, branch)
    for bi, b in enumerate(net.branches):
        u, w = index[b.from_node], index[b.to_node]
        adj[u].append((w, bi))
        adj[w].append((u, bi))

    slack = index[net.slack]
    branch_from = np.full(len(net.branches), -1, dtype=int)
    branch_to = np.full(len(net.branches), -1, dtype=int)
    parent_branch = np.full(n, -1, dtype=int)
    order: list[int] = []
    visited = np.zeros(n, dtype=bool)
    visited[slack] = True
    frontier = [slack]
    while frontier:
        nxt = []
        for u in frontier:
            for w, bi in adj[u]:
                if not visited[w]:
                    visited[w] = True
                    branch_from[bi] = u
                    branch_to[bi] = w
                    parent_branch[w] = bi
                    order.append(bi)
                    nxt.append(w)
        frontier = nxt
    if not visited.all() or (branch_from < 0).any():
        raise ValueError("network is not a connected radial tree; run validate_network")
    return TreeOrder(
        node_ids=net.node_ids(),
        slack_index=slack,
        branch_from=branch_from,
        branch_to=branch_to,
        branch_order=np.array(order, dtype=int),
        parent_branch=parent_branch,
    )


# ---------------------------------------------------------------------------
# DistFlow oracle
# ---------------------------------------------------------------------------


def _injection_arrays(
    net: MvNetwork, injections: Iterable[NodeInjection] | Mapping[str, tuple[float, float]]
) -> tuple[np.ndarray, np.ndarray]:
    index = net.node_index()
    p = np.zeros(len(net.nodes))
    q = np.zeros(len(net.nodes))
    if isinstance(injections, Mapping):
        items = ((nid, pq[0], pq[1]) for nid, pq in injections.items())
    else:
        items = ((inj.node, inj.p, inj.q) for inj in injections)
    for nid, pi, qi in items:
        if nid not in index:
            raise UnknownNode(f"injection references unknown node {nid!r}")
        p[index[nid]] += pi
        q[index[nid]] += qi
    return p, q


def solve_distflow_fixed_point(
    net: MvNetwork,
    injections: Iterable[NodeInjection] | Mapping[str, tuple[float, float]],
    slack_v: float = 1.0,
    *,
    transformer_offtakes: Mapping[str, tuple[float, float]] | None = None,
    tol: float = 1e-14,
    max_sweeps: int = 200,
) -> MvState:
    """Solve the exact DistFlow equalities by backward/forward sweeps.

    ``injections`` are net nodal injections (generation positive);
    ``transformer_offtakes`` optionally maps LV grid id to the (p, q) power
    the LV grid draws through its transformer, added as consumption at the
    linked MV node and reported per transformer in the state.

    Returns a state whose branch residuals ``|v_i l_ij - (P^2 + Q^2)|`` are at
    machine precision (well under 1e-10). Raises :class:`NonConvergence` when
    the sweep iteration diverges or fails to settle within ``max_sweeps``,
    which signals loading beyond deliverable power or bad data.
    """
    if slack_v <= 0:
        raise ValueError("slack_v must be positive (squared voltage)")
    p_inj, q_inj = _injection_arrays(net, injections)

    tr_grids = tuple(t.lv_grid for t in net.transformers)
    tr_p = np.zeros(len(tr_grids))
    tr_q = np.zeros(len(tr_grids))
    if transformer_offtakes:
        known = set(tr_grids)
        for gid in transformer_offtakes:
            if gid not in known:
                raise UnknownNode(f"offtake references unknown LV grid {gid!r}")
        index = net.node_index()
        for ti, t in enumerate(net.transformers):
            if t.lv_grid in transformer_offtakes:
                op, oq = transformer_offtakes[t.lv_grid]
                tr_p[ti], tr_q[ti] = op, oq
                p_inj[index[t.mv_node]] -= op
                q_inj[index[t.mv_node]] -= oq

    order = tree_order(net)
    nb = len(net.branches)
    r = np.array([b.r for b in net.branches])
    x = np.array([b.x for b in net.branches])
    bf, bt = order.branch_from, order.branch_to

    v = np.full(len(net.nodes), float(slack_v))
    l = np.zeros(nb)
    P = np.zeros(nb)
    Q = np.zeros(nb)

    children: list[list[int]] = [[] for _ in range(len(net.nodes))]
    for bi in range(nb):
        children[bf[bi]].append(bi)

    for sweep in range(max_sweeps):
        prev = (P.copy(), Q.copy(), l.copy(), v.copy())
        with np.errstate(over="ignore", invalid="ignore"):
            # backward: sending-end flows, leaves first
            for bi in order.branch_order[::-1]:
                to = bt[bi]
                need_p = -p_inj[to] + sum(P[c] for c in children[to])
                need_q = -q_inj[to] + sum(Q[c] for c in children[to])
                P[bi] = need_p + r[bi] * l[bi]
                Q[bi] = need_q + x[bi] * l[bi]
            # current magnitudes from sending-end voltage of previous forward pass
            l = (P * P + Q * Q) / v[bf]
            # forward: voltages, root first
            v[order.slack_index] = slack_v
            for bi in order.branch_order:
                v[bt[bi]] = (
                    v[bf[bi]]
                    - 2.0 * (r[bi] * P[bi] + x[bi] * Q[bi])
                    + (r[bi] ** 2 + x[bi] ** 2) * l[bi]
                )
        if not np.all(np.isfinite(v)) or np.any(v <= 0) or not np.all(np.isfinite(l)):
            raise NonConvergence(
                f"voltage collapse after {sweep + 1} sweeps; "
                "load exceeds deliverable power or data is inconsistent"
            )
        delta = max(
            np.max(np.abs(P - prev[0]), initial=0.0),
            np.max(np.abs(Q - prev[1]), initial=0.0),
            np.max(np.abs(l - prev[2]), initial=0.0),
            np.max(np.abs(v - prev[3]), initial=0.0),
        )
        if delta < tol:
            break
    else:
        raise NonConvergence(f"no fixed point within {max_sweeps} sweeps (last delta {delta:.3e})")

    residual = float(np.max(np.abs(v[bf] * l - (P * P + Q * Q)), initial=0.0))
    out = [c for c in children[order.slack_index]]
    slack_p = float(sum(P[c] for c in out) - p_inj[order.slack_index])
    slack_q = float(sum(Q[c] for c in out) - q_inj[order.slack_index])
    return MvState(
        node_ids=net.node_ids(),
        branch_labels=net.branch_labels(),
        v=v,
        l=l,
        p_flow=P,
        q_flow=Q,
        tr_grids=tr_grids,
        tr_p=tr_p,
        tr_q=tr_q,
        slack_p=slack_p,
        slack_q=slack_q,
        residual=residual,
    )


def losses(net: MvNetwork, state: MvState) -> float:
    """Total resistive losses ``sum r_ij l_ij`` of a state, in p.u."""
    r = np.array([b.r for b in net.branches])
    return float(np.dot(r, state.l))


# ---------------------------------------------------------------------------
# Per-unit round trip
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PhysicalBranch:
    from_node: str
    to_node: str
    r_ohm: float
    x_ohm: float
    i_max_a: float


@dataclass(frozen=True)
class PhysicalNetwork:
    name: str
    nodes: tuple[Node, ...]
    branches: tuple[PhysicalBranch, ...]
    slack: str
    transformers: tuple[TransformerLink, ...]
    base_kva: float
    base_kv: float


def to_physical(net: MvNetwork) -> PhysicalNetwork:
    """Convert p.u. impedances/ampacities to ohm/ampere on the network base."""
    v_base = net.base_kv * 1e3
    s_base = net.base_kva * 1e3
    z_base = v_base * v_base / s_base
    i_base = s_base / v_base
    return PhysicalNetwork(
        name=net.name,
        nodes=net.nodes,
        branches=tuple(
            PhysicalBranch(b.from_node, b.to_node, b.r * z_base, b.x * z_base, b.i_max * i_base)
            for b in net.branches
        ),
        slack=net.slack,
        transformers=net.transformers,
        base_kva=net.base_kva,
        base_kv=net.base_kv,
    )


def from_physical(phys: PhysicalNetwork) -> MvNetwork:
    """Inverse of :func:`to_physical`."""
    v_base = phys.base_kv * 1e3
    s_base = phys.base_kva * 1e3
    z_base = v_base * v_base / s_base
    i_base = s_base / v_base
    return MvNetwork(
        name=phys.name,
        nodes=phys.nodes,
        branches=tuple(
            Branch(b.from_node, b.to_node, b.r_ohm / z_base, b.x_ohm / z_base, b.i_max_a / i_base)
            for b in phys.branches
        ),
        slack=phys.slack,
        transformers=phys.transformers,
        base_kva=phys.base_kva,
        base_kv=phys.base_kv,
    )
