"""Model-less LV grid representation via voltage/current sensitivity coefficients.

An LV grid is reduced to a linear map around an operating point: node voltage
and branch current changes are affine in the active/reactive injection changes
of a fixed set of injector nodes. Coefficients come from one of two routes:

* from a reference LV network model, by central finite differences on the
  exact load-flow oracle of :mod:`gridflex.network`;
* from monitoring data, by ordinary least squares on observed
  (dP, dQ) -> (dV, dI) samples.

The coupling of an LV grid to its MV attachment node uses the linearization
``|V| ~ 0.5 (v + 1)`` of the square root of the squared MV voltage, which is
accurate to 5e-3 over the +-10% voltage band (see
:func:`sqrt_linearization_error`).

Voltage magnitudes are in p.u., currents in p.u., and the transformer-flow
deltas follow lossless aggregation by default: the LV boundary draw drops by
exactly the sum of injection increases. Optional loss-sensitivity terms
capture the second-order LV loss response when a reference model is used.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    InvalidPerturbation,
    NonConvergence,
    OracleFailure,
    RankDeficient,
    Underdetermined,
    UnknownNode,
)
from .network import MvNetwork, solve_distflow_fixed_point, tree_order

__all__ = [
    "LvOperatingPoint",
    "SensitivityModel",
    "LvState",
    "EstimationReport",
    "operating_point_from_reference",
    "coefficients_from_reference",
    "coefficients_from_measurements",
    "predict_state",
    "shift_operating_point",
    "couple_lv_voltage",
    "sqrt_linearization_error",
    "feeder_rating",
]


@dataclass(frozen=True)
class LvOperatingPoint:
    """Measured or simulated LV state the linear model is anchored to.

    ``v0``/``drop`` are per node (model node order), ``i0`` per branch.
    ``drop`` is the voltage drop relative to the MV/LV transformer primary,
    so a node that sits above the transformer voltage (local PV) has a
    negative drop. ``p_slack``/``q_slack`` are the baseline boundary flows
    drawn from the MV side, consumption positive.
    """

    grid: str
    step: int
    v0: np.ndarray
    i0: np.ndarray
    drop: np.ndarray
    p_slack: float = 0.0
    q_slack: float = 0.0

    def __post_init__(self):
        if np.any(np.asarray(self.v0) <= 0):
            raise ValueError("operating-point voltages must be positive")
        if np.any(np.asarray(self.i0) < 0):
            raise ValueError("operating-point current magnitudes must be nonnegative")
        for a in (self.v0, self.i0, self.drop):
            if not np.all(np.isfinite(a)):
                raise ValueError("operating point contains non-finite values")


@dataclass(frozen=True)
class SensitivityModel:
    """Linear LV grid model: coefficient tables indexed (observed, injector).

    ``k_vp[i, k]`` is the voltage response of node ``i`` to active injection
    at injector ``k`` (p.u. per p.u.), ``k_ip[b, k]`` the current response of
    branch ``b``. ``loss_*`` tables are optional transformer-flow loss
    sensitivities; when absent the boundary flow follows lossless
    aggregation. ``around`` stamps the operating point the coefficients were
    computed at (None for measurement-based models).
    """

    grid: str
    node_ids: tuple[str, ...]
    branch_labels: tuple[str, ...]
    injectors: tuple[str, ...]
    k_vp: np.ndarray
    k_vq: np.ndarray
    k_ip: np.ndarray
    k_iq: np.ndarray
    loss_p_dp: np.ndarray | None = None
    loss_p_dq: np.ndarray | None = None
    loss_q_dp: np.ndarray | None = None
    loss_q_dq: np.ndarray | None = None
    around: LvOperatingPoint | None = None

    def __post_init__(self):
        n, m, b = len(self.node_ids), len(self.injectors), len(self.branch_labels)
        if self.k_vp.shape != (n, m) or self.k_vq.shape != (n, m):
            raise ValueError("voltage coefficient tables have wrong shape")
        if self.k_ip.shape != (b, m) or self.k_iq.shape != (b, m):
            raise ValueError("current coefficient tables have wrong shape")
        for t in (self.k_vp, self.k_vq, self.k_ip, self.k_iq):
            if not np.all(np.isfinite(t)):
                raise ValueError("coefficient tables must be finite")
        node_pos = {nid: i for i, nid in enumerate(self.node_ids)}
        diag = [
            self.k_vp[node_pos[k], j]
            for j, k in enumerate(self.injectors)
            if k in node_pos
        ]
        if any(d < 0 for d in diag):
            warnings.warn(
                f"LV grid {self.grid}: negative diagonal voltage sensitivity; "
                "unusual for resistive LV feeders",
                stacklevel=2,
            )

    def injector_index(self, node: str) -> int:
        try:
            return self.injectors.index(node)
        except ValueError:
            raise UnknownNode(f"node {node!r} is not an injector of LV grid {self.grid}") from None


@dataclass(frozen=True)
class LvState:
    """Affine evaluation of the LV model at a given injection change."""

    grid: str
    step: int
    v: np.ndarray
    i: np.ndarray
    dp_slack: float
    dq_slack: float


@dataclass(frozen=True)
class EstimationReport:
    """Least-squares fit quality: per-element residual RMS and rank info."""

    samples: int
    rank: int
    regressors: int
    v_rms: np.ndarray
    i_rms: np.ndarray


# ---------------------------------------------------------------------------
# Reference-model route
# ---------------------------------------------------------------------------


def _lv_magnitudes(net: MvNetwork, injections: Mapping[str, tuple[float, float]], slack_v: float):
    state = solve_distflow_fixed_point(net, injections, slack_v=slack_v)
    return np.sqrt(state.v), np.sqrt(state.l), state.slack_p, state.slack_q


def operating_point_from_reference(
    lv_net: MvNetwork,
    injections: Mapping[str, tuple[float, float]],
    slack_v: float = 1.0,
    step: int = 0,
) -> LvOperatingPoint:
    """Run the exact LV load flow and package it as an operating point."""
    try:
        vmag, imag, p_sl, q_sl = _lv_magnitudes(lv_net, injections, slack_v)
    except NonConvergence as exc:
        raise OracleFailure(f"LV load flow failed for grid {lv_net.name}: {exc}") from exc
    head = np.sqrt(slack_v)
    return LvOperatingPoint(
        grid=lv_net.name,
        step=step,
        v0=vmag,
        i0=imag,
        drop=head - vmag,
        p_slack=p_sl,
        q_slack=q_sl,
    )


def coefficients_from_reference(
    lv_net: MvNetwork,
    injections: Mapping[str, tuple[float, float]],
    *,
    slack_v: float = 1.0,
    eps: float = 1e-4,
    injectors: Sequence[str] | None = None,
    with_loss_sensitivity: bool = False,
    step: int = 0,
) -> SensitivityModel:
    """Central-difference sensitivity coefficients around an LV load flow.

    Each injector node is perturbed by ``+-eps`` p.u. in P and in Q; the
    coefficient is the central difference of the exact load-flow voltage and
    current magnitudes. The slack-node rows are exactly zero because the
    slack voltage is held fixed by the oracle.
    """
    if eps <= 0:
        raise InvalidPerturbation(f"perturbation must be positive, got {eps}")
    base = dict(injections)
    index = lv_net.node_index()
    if injectors is None:
        injectors = tuple(nid for nid in lv_net.node_ids() if nid != lv_net.slack)
    else:
        injectors = tuple(injectors)
        for nid in injectors:
            if nid not in index:
                raise UnknownNode(f"injector {nid!r} not in LV grid {lv_net.name}")

    around = operating_point_from_reference(lv_net, base, slack_v, step=step)
    n, nb, m = len(lv_net.nodes), len(lv_net.branches), len(injectors)
    k_vp = np.zeros((n, m))
    k_vq = np.zeros((n, m))
    k_ip = np.zeros((nb, m))
    k_iq = np.zeros((nb, m))
    lp_dp = np.zeros(m)
    lp_dq = np.zeros(m)
    lq_dp = np.zeros(m)
    lq_dq = np.zeros(m)

    def perturbed(node: str, dp: float, dq: float):
        inj = dict(base)
        p0, q0 = inj.get(node, (0.0, 0.0))
        inj[node] = (p0 + dp, q0 + dq)
        try:
            return _lv_magnitudes(lv_net, inj, slack_v)
        except NonConvergence as exc:
            raise OracleFailure(
                f"LV load flow diverged while perturbing {node!r} by ({dp:g}, {dq:g})"
            ) from exc

    for j, node in enumerate(injectors):
        vp, ip, pp, qp = perturbed(node, eps, 0.0)
        vm, im, pm, qm = perturbed(node, -eps, 0.0)
        k_vp[:, j] = (vp - vm) / (2 * eps)
        k_ip[:, j] = (ip - im) / (2 * eps)
        # slack-flow derivative is -1 plus the loss response; keep the loss part
        lp_dp[j] = (pp - pm) / (2 * eps) + 1.0
        lq_dp[j] = (qp - qm) / (2 * eps)

        vp, ip, pp, qp = perturbed(node, 0.0, eps)
        vm, im, pm, qm = perturbed(node, 0.0, -eps)
        k_vq[:, j] = (vp - vm) / (2 * eps)
        k_iq[:, j] = (ip - im) / (2 * eps)
        lp_dq[j] = (pp - pm) / (2 * eps)
        lq_dq[j] = (qp - qm) / (2 * eps) + 1.0

    return SensitivityModel(
        grid=lv_net.name,
        node_ids=lv_net.node_ids(),
        branch_labels=lv_net.branch_labels(),
        injectors=injectors,
        k_vp=k_vp,
        k_vq=k_vq,
        k_ip=k_ip,
        k_iq=k_iq,
        loss_p_dp=lp_dp if with_loss_sensitivity else None,
        loss_p_dq=lp_dq if with_loss_sensitivity else None,
        loss_q_dp=lq_dp if with_loss_sensitivity else None,
        loss_q_dq=lq_dq if with_loss_sensitivity else None,
        around=around,
    )


# ---------------------------------------------------------------------------
# Measurement route
# ---------------------------------------------------------------------------


def coefficients_from_measurements(
    dp: np.ndarray,
    dq: np.ndarray,
    dv: np.ndarray,
    di: np.ndarray | None = None,
    *,
    grid: str,
    injectors: Sequence[str],
    node_ids: Sequence[str],
    branch_labels: Sequence[str] = (),
    ridge: float = 0.0,
) -> tuple[SensitivityModel, EstimationReport]:
    """Least-squares coefficients from (dP, dQ) -> (dV, dI) samples.

    ``dp``/``dq`` are (S, n_injectors) injection deviations, ``dv`` the
    matching (S, n_nodes) voltage deviations and ``di`` the optional
    (S, n_branches) current deviations. Requires S >= 2 * n_injectors;
    raises :class:`RankDeficient` naming the dependent regressor columns
    when the samples are collinear and no ridge term is given.
    """
    dp = np.asarray(dp, dtype=float)
    dq = np.asarray(dq, dtype=float)
    dv = np.asarray(dv, dtype=float)
    injectors = tuple(injectors)
    node_ids = tuple(node_ids)
    branch_labels = tuple(branch_labels)
    m = len(injectors)
    s = dp.shape[0]
    if dp.shape != (s, m) or dq.shape != (s, m) or dv.shape[0] != s:
        raise ValueError("sample arrays have inconsistent shapes")
    if dv.shape[1] != len(node_ids):
        raise ValueError("dv columns must match node_ids")
    if di is not None:
        di = np.asarray(di, dtype=float)
        if di.shape != (s, len(branch_labels)):
            raise ValueError("di columns must match branch_labels")
    for a in (dp, dq, dv) + ((di,) if di is not None else ()):
        if not np.all(np.isfinite(a)):
            raise ValueError("samples must be finite")

    if s < 2 * m:
        raise Underdetermined(
            f"{s} samples for {m} injectors; need at least {2 * m} "
            "(one per regressor column)"
        )

    X = np.hstack([dp, dq])
    rank = np.linalg.matrix_rank(X)
    if rank < 2 * m and ridge <= 0:
        import scipy.linalg

        _, _, piv = scipy.linalg.qr(X, mode="economic", pivoting=True)
        labels = tuple(
            (f"P:{injectors[j]}" if j < m else f"Q:{injectors[j - m]}") for j in piv[rank:]
        )
        raise RankDeficient(
            f"regressor matrix has rank {rank} < {2 * m}; dependent columns: "
            + ", ".join(labels),
            columns=labels,
        )

    if ridge > 0:
        gram = X.T @ X + ridge * np.eye(2 * m)
        solve_rhs = lambda Y: np.linalg.solve(gram, X.T @ Y)
    else:
        solve_rhs = lambda Y: np.linalg.lstsq(X, Y, rcond=None)[0]

    kv = solve_rhs(dv)  # (2m, n_nodes)
    k_vp, k_vq = kv[:m].T.copy(), kv[m:].T.copy()
    v_rms = np.sqrt(np.mean((dv - X @ kv) ** 2, axis=0))
    if di is not None and branch_labels:
        ki = solve_rhs(di)
        k_ip, k_iq = ki[:m].T.copy(), ki[m:].T.copy()
        i_rms = np.sqrt(np.mean((di - X @ ki) ** 2, axis=0))
    else:
        k_ip = np.zeros((len(branch_labels), m))
        k_iq = np.zeros((len(branch_labels), m))
        i_rms = np.zeros(len(branch_labels))

    model = SensitivityModel(
        grid=grid,
        node_ids=node_ids,
        branch_labels=branch_labels,
        injectors=injectors,
        k_vp=k_vp,
        k_vq=k_vq,
        k_ip=k_ip,
        k_iq=k_iq,
    )
    report = EstimationReport(samples=s, rank=int(rank), regressors=2 * m, v_rms=v_rms, i_rms=i_rms)
    return model, report


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def _delta_vectors(
    model: SensitivityModel, dp: Mapping[str, float], dq: Mapping[str, float]
) -> tuple[np.ndarray, np.ndarray]:
    vp = np.zeros(len(model.injectors))
    vq = np.zeros(len(model.injectors))
    for node, val in dp.items():
        vp[model.injector_index(node)] += val
    for node, val in dq.items():
        vq[model.injector_index(node)] += val
    return vp, vq


def boundary_deltas(model: SensitivityModel, dp_vec: np.ndarray, dq_vec: np.ndarray) -> tuple[float, float]:
    """Transformer-flow deltas for injector deltas, consumption positive.

    Lossless aggregation (minus the sum of injection increases) plus the
    optional loss-sensitivity correction.
    """
    dps = -float(np.sum(dp_vec))
    dqs = -float(np.sum(dq_vec))
    if model.loss_p_dp is not None:
        dps += float(model.loss_p_dp @ dp_vec + model.loss_p_dq @ dq_vec)
        dqs += float(model.loss_q_dp @ dp_vec + model.loss_q_dq @ dq_vec)
    return dps, dqs


def predict_state(
    model: SensitivityModel,
    op: LvOperatingPoint,
    dp: Mapping[str, float],
    dq: Mapping[str, float] | None = None,
) -> LvState:
    """Evaluate the affine LV model at injection deltas ``dp``/``dq``."""
    dq = dq or {}
    vp, vq = _delta_vectors(model, dp, dq)
    v = op.v0 + model.k_vp @ vp + model.k_vq @ vq
    i = op.i0 + model.k_ip @ vp + model.k_iq @ vq
    dps, dqs = boundary_deltas(model, vp, vq)
    return LvState(grid=model.grid, step=op.step, v=v, i=i, dp_slack=dps, dq_slack=dqs)


def shift_operating_point(
    model: SensitivityModel,
    op: LvOperatingPoint,
    dp: Mapping[str, float],
    dq: Mapping[str, float] | None = None,
) -> LvOperatingPoint:
    """Re-center an operating point after deltas have been dispatched."""
    state = predict_state(model, op, dp, dq)
    dv = state.v - op.v0
    return replace(
        op,
        v0=state.v,
        i0=np.maximum(state.i, 0.0),
        drop=op.drop - dv,
        p_slack=op.p_slack + state.dp_slack,
        q_slack=op.q_slack + state.dq_slack,
    )


def couple_lv_voltage(v_mv: float | np.ndarray, drop: float | np.ndarray):
    """LV base voltage from the squared MV voltage: ``0.5 (v + 1) - drop``."""
    v_mv = np.asarray(v_mv, dtype=float)
    if np.any(v_mv <= 0):
        raise ValueError("squared MV voltage must be positive")
    out = 0.5 * (v_mv + 1.0) - np.asarray(drop, dtype=float)
    return float(out) if out.ndim == 0 else out


def sqrt_linearization_error(v: float | np.ndarray):
    """Absolute error of the ``0.5 (v + 1)`` linearization of ``sqrt(v)``."""
    v = np.asarray(v, dtype=float)
    out = np.abs(0.5 * (v + 1.0) - np.sqrt(v))
    return float(out) if out.ndim == 0 else out


def feeder_rating(lv_net: MvNetwork) -> float:
    """Deliverable-power scale of a feeder: summed head-branch ampacity, p.u.

    Used to express perturbation trust radii as a fraction of what the feeder
    can carry.
    """
    order = tree_order(lv_net)
    return float(
        sum(b.i_max for b, f in zip(lv_net.branches, order.branch_from) if f == order.slack_index)
    )
