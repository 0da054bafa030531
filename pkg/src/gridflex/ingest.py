"""File formats, configuration, and scenario assembly.

A scenario is a flat key=value config file plus a set of CSV files::

    nodes.csv        id,vmin,vmax
    branches.csv     from,to,r_pu,x_pu,imax_pu
    links.csv        mv_node,lv_grid
    resources.csv    id,lv_grid,lv_node,kind,dp_lo_kw,dp_hi_kw,dq_lo_kvar,
                     dq_hi_kvar,s_kva,pf_lim,ramp_kw_per_hr,eta,cap_kwh,
                     soc_min,soc_max,soc0
    timeseries.csv   t,element_id,p_kw,q_kvar
    coefficients.csv observed,injector,kvp,kvq,kip,kiq
    operating point  t,kind,element,value_pu   (kind: v0|drop|i0|p_slack|q_slack)
    schedule.csv     t,p_kw,q_kvar

Power columns are signed net injections in kW/kvar, generation positive.
``element_id`` in the time series resolves to an MV node, a resource id, or
an LV background load written as ``<lv_grid>:<lv_node>``. Each LV grid is
declared either by a reference model (``lv.<grid>.nodes_csv`` etc., from
which operating points and sensitivity coefficients are computed) or by
coefficient tables (``lv.<grid>.coefficients_csv`` plus
``lv.<grid>.operating_point_csv``). Unknown config keys are errors.

Numeric output uses 17 significant digits, so writing and re-reading a
scenario reproduces every float bit-exactly.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import CrossRefError, ParseError, UnknownScheme, ValidationError
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
    "ScenarioConfig",
    "parse_config",
    "load_scenario",
    "save_scenario",
    "write_csv",
    "format_float",
    "read_coefficients_csv",
    "write_coefficients_csv",
    "scenarios_identical",
]

_KNOWN_KEYS = {
    "name",
    "nodes_csv",
    "branches_csv",
    "links_csv",
    "resources_csv",
    "timeseries_csv",
    "tso_schedule_csv",
    "slack_node",
    "base_kva",
    "base_kv",
    "step_minutes",
    "slack_v",
    "slack_vmin",
    "slack_vmax",
    "w_l",
    "w_v",
    "w_lim",
    "w_p",
    "w_q",
    "violation_cost_rate",
    "pf_limit_default",
    "inverter_overrating",
    "ramp_threshold_kw_per_hr",
    "scheme",
    "n_dirs",
    "envelope_step",
    "envelope_window",
    "relaxation_gap_threshold",
    "feas_tol",
    "gap_tol",
    "trust_radius_fraction",
    "with_loss_sensitivity",
}
_LV_SUBKEYS = {"nodes_csv", "branches_csv", "slack", "coefficients_csv", "operating_point_csv"}


@dataclass
class LvGridConfig:
    grid: str
    nodes_csv: str | None = None
    branches_csv: str | None = None
    slack: str | None = None
    coefficients_csv: str | None = None
    operating_point_csv: str | None = None

    @property
    def is_reference(self) -> bool:
        return self.nodes_csv is not None


@dataclass
class ScenarioConfig:
    """Parsed configuration; paths are resolved relative to the config file."""

    path: str
    name: str = "scenario"
    nodes_csv: str = "nodes.csv"
    branches_csv: str = "branches.csv"
    links_csv: str | None = None
    resources_csv: str | None = None
    timeseries_csv: str = "timeseries.csv"
    tso_schedule_csv: str | None = None
    slack_node: str = ""
    base_kva: float = 1000.0
    base_kv: float = 20.0
    step_minutes: float = 10.0
    slack_v: float = 1.0
    slack_vmin: float = 0.95
    slack_vmax: float = 1.05
    w_l: float = 1.0
    w_v: float = 100.0
    w_lim: float = 100.0
    w_p: float = 0.0
    w_q: float = 0.0
    violation_cost_rate: float = 100.0
    pf_limit_default: float = 0.95
    inverter_overrating: float = 1.1
    ramp_threshold_kw_per_hr: float = 4.0
    scheme: str = "tso_leader"
    n_dirs: int = 32
    envelope_step: int = 0
    envelope_window: int = 6
    relaxation_gap_threshold: float = 1e-4
    feas_tol: float = 1e-8
    gap_tol: float = 1e-8
    trust_radius_fraction: float = 0.2
    with_loss_sensitivity: bool = False
    lv_grids: dict[str, LvGridConfig] = field(default_factory=dict)

    def resolve(self, rel: str | None) -> str | None:
        if rel is None:
            return None
        return str(Path(self.path).parent / rel)


def parse_config(path: str | os.PathLike) -> ScenarioConfig:
    """Parse a flat ``key = value`` config file; unknown keys are errors."""
    path = str(path)
    cfg = ScenarioConfig(path=path)
    floats = {
        "base_kva",
        "base_kv",
        "step_minutes",
        "slack_v",
        "slack_vmin",
        "slack_vmax",
        "w_l",
        "w_v",
        "w_lim",
        "w_p",
        "w_q",
        "violation_cost_rate",
        "pf_limit_default",
        "inverter_overrating",
        "ramp_threshold_kw_per_hr",
        "relaxation_gap_threshold",
        "feas_tol",
        "gap_tol",
        "trust_radius_fraction",
    }
    ints = {"n_dirs", "envelope_step", "envelope_window"}
    bools = {"with_loss_sensitivity"}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise ParseError(f"cannot read config: {exc}", file=path)
    for ln, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError("expected 'key = value'", file=path, line=ln)
        key, value = (part.strip() for part in line.split("=", 1))
        if key.startswith("lv."):
            parts = key.split(".")
            if len(parts) != 3 or parts[2] not in _LV_SUBKEYS:
                raise ParseError(f"unknown LV key {key!r}", file=path, line=ln)
            _, grid, sub = parts
            lvc = cfg.lv_grids.setdefault(grid, LvGridConfig(grid=grid))
            setattr(lvc, sub, value)
            continue
        if key not in _KNOWN_KEYS:
            raise ParseError(f"unknown key {key!r}", file=path, line=ln)
        try:
            if key in floats:
                setattr(cfg, key, float(value))
            elif key in ints:
                setattr(cfg, key, int(value))
            elif key in bools:
                if value.lower() not in ("true", "false", "0", "1"):
                    raise ValueError(value)
                setattr(cfg, key, value.lower() in ("true", "1"))
            else:
                setattr(cfg, key, value)
        except ValueError:
            raise ParseError(f"bad value for {key}: {value!r}", file=path, line=ln) from None
    if not cfg.slack_node:
        raise ParseError("slack_node is required", file=path)
    try:
        parse_scheme_name(cfg.scheme)
    except UnknownScheme as exc:
        raise ParseError(str(exc), file=path) from None
    return cfg


def parse_scheme_name(name: str):
    from .coordination import parse_scheme

    return parse_scheme(name)


# ---------------------------------------------------------------------------
# CSV primitives
# ---------------------------------------------------------------------------


def format_float(x: float) -> str:
    return f"{x:.17g}"


def write_csv(path: str | os.PathLike, header: Iterable[str], rows: Iterable[Iterable]) -> None:
    """Write a CSV atomically (temp file then rename), full float precision."""
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(header))
        for row in rows:
            writer.writerow(
                [format_float(v) if isinstance(v, float) else v for v in row]
            )
    os.replace(tmp, path)


class _CsvTable:
    """CSV reader with required columns and located error reporting."""

    def __init__(self, path: str, required: tuple[str, ...], optional: tuple[str, ...] = ()):
        self.path = path
        try:
            with open(path, newline="") as fh:
                reader = csv.DictReader(fh)
                if reader.fieldnames is None:
                    raise ParseError("empty file", file=path)
                fields = [f.strip() for f in reader.fieldnames]
                for col in required:
                    if col not in fields:
                        raise ParseError(f"missing column {col!r}", file=path, line=1, column=col)
                known = set(required) | set(optional)
                for col in fields:
                    if col not in known:
                        raise ParseError(f"unknown column {col!r}", file=path, line=1, column=col)
                self.rows = [
                    ({k.strip(): (v or "").strip() for k, v in row.items()}, ln)
                    for ln, row in enumerate(reader, start=2)
                ]
        except OSError as exc:
            raise ParseError(f"cannot read file: {exc}", file=path)

    def value(self, row: dict, ln: int, col: str) -> str:
        v = row.get(col, "")
        if v == "":
            raise ParseError("empty value", file=self.path, line=ln, column=col)
        return v

    def number(self, row: dict, ln: int, col: str, default: float | None = None) -> float:
        v = row.get(col, "")
        if v == "":
            if default is None:
                raise ParseError("empty value", file=self.path, line=ln, column=col)
            return default
        try:
            out = float(v)
        except ValueError:
            raise ParseError(f"not a number: {v!r}", file=self.path, line=ln, column=col) from None
        if not math.isfinite(out):
            raise ParseError(f"non-finite value: {v!r}", file=self.path, line=ln, column=col)
        return out


def _read_network(
    name: str, nodes_csv: str, branches_csv: str, slack: str, base_kva: float, base_kv: float,
    links: tuple[TransformerLink, ...] = (),
) -> MvNetwork:
    nt = _CsvTable(nodes_csv, ("id", "vmin", "vmax"))
    nodes = tuple(
        Node(t.value(r, ln, "id"), t.number(r, ln, "vmin"), t.number(r, ln, "vmax"))
        for t in (nt,)
        for r, ln in nt.rows
    )
    bt = _CsvTable(branches_csv, ("from", "to", "r_pu", "x_pu", "imax_pu"))
    branches = tuple(
        Branch(
            bt.value(r, ln, "from"),
            bt.value(r, ln, "to"),
            bt.number(r, ln, "r_pu"),
            bt.number(r, ln, "x_pu"),
            bt.number(r, ln, "imax_pu"),
        )
        for r, ln in bt.rows
    )
    return MvNetwork(
        name=name,
        nodes=nodes,
        branches=branches,
        slack=slack,
        transformers=links,
        base_kva=base_kva,
        base_kv=base_kv,
    )


def _read_links(path: str) -> tuple[TransformerLink, ...]:
    t = _CsvTable(path, ("mv_node", "lv_grid"))
    return tuple(
        TransformerLink(t.value(r, ln, "mv_node"), t.value(r, ln, "lv_grid")) for r, ln in t.rows
    )


_RESOURCE_COLUMNS = (
    "id",
    "lv_grid",
    "lv_node",
    "kind",
    "dp_lo_kw",
    "dp_hi_kw",
    "dq_lo_kvar",
    "dq_hi_kvar",
    "s_kva",
    "pf_lim",
    "ramp_kw_per_hr",
    "eta",
    "cap_kwh",
    "soc_min",
    "soc_max",
    "soc0",
)


def _read_resources(path: str, pf_default: float) -> tuple[Resource, ...]:
    t = _CsvTable(path, _RESOURCE_COLUMNS[:9], _RESOURCE_COLUMNS[9:])
    out = []
    for r, ln in t.rows:
        kind_raw = t.value(r, ln, "kind")
        try:
            kind = ResourceKind(kind_raw)
        except ValueError:
            raise ParseError(
                f"unknown resource kind {kind_raw!r}", file=path, line=ln, column="kind"
            ) from None
        # study defaults: EV connection limits of 8 kW when left blank
        ev = kind is ResourceKind.EV_STORAGE
        dp_lo = t.number(r, ln, "dp_lo_kw", default=-8.0 if ev else None)
        dp_hi = t.number(r, ln, "dp_hi_kw", default=8.0 if ev else None)
        rid = t.value(r, ln, "id")
        if ":" in rid:
            raise ParseError("resource ids must not contain ':'", file=path, line=ln, column="id")
        try:
            out.append(
                Resource(
                    id=rid,
                    lv_grid=t.value(r, ln, "lv_grid"),
                    lv_node=t.value(r, ln, "lv_node"),
                    kind=kind,
                    dp_min_kw=dp_lo,
                    dp_max_kw=dp_hi,
                    dq_min_kvar=t.number(r, ln, "dq_lo_kvar", default=0.0),
                    dq_max_kvar=t.number(r, ln, "dq_hi_kvar", default=0.0),
                    s_kva=t.number(r, ln, "s_kva"),
                    pf_limit=t.number(r, ln, "pf_lim", default=pf_default),
                    ramp_kw_per_hr=t.number(r, ln, "ramp_kw_per_hr", default=0.0),
                    eta=t.number(r, ln, "eta", default=1.0),
                    capacity_kwh=t.number(r, ln, "cap_kwh", default=0.0),
                    soc_min=t.number(r, ln, "soc_min", default=0.1),
                    soc_max=t.number(r, ln, "soc_max", default=0.9),
                    soc0=t.number(r, ln, "soc0", default=0.5),
                )
            )
        except ValueError as exc:
            raise ParseError(str(exc), file=path, line=ln) from None
    return tuple(out)


def _read_timeseries(
    path: str,
    base_kva: float,
    step_minutes: float,
    mv_nodes: set[str],
    resource_ids: set[str],
    lv_nodes: Mapping[str, set[str]],
    schedule_csv: str | None,
) -> TimeSeries:
    t = _CsvTable(path, ("t", "element_id", "p_kw", "q_kvar"))
    raw: dict[str, list[tuple[int, float, float]]] = {}
    horizon = 0
    for r, ln in t.rows:
        try:
            step = int(t.value(r, ln, "t"))
        except ValueError:
            raise ParseError("t must be an integer step index", file=path, line=ln, column="t")
        if step < 0:
            raise ParseError("t must be nonnegative", file=path, line=ln, column="t")
        horizon = max(horizon, step + 1)
        eid = t.value(r, ln, "element_id")
        raw.setdefault(eid, []).append(
            (step, t.number(r, ln, "p_kw"), t.number(r, ln, "q_kvar"))
        )
    if horizon == 0:
        raise ParseError("time series has no rows", file=path)

    mv: dict[str, np.ndarray] = {}
    res: dict[str, np.ndarray] = {}
    background: dict[str, dict[str, np.ndarray]] = {}
    for eid, entries in raw.items():
        series = np.zeros((horizon, 2))
        for step, p, q in entries:
            series[step, 0] += p / base_kva
            series[step, 1] += q / base_kva
        if eid in mv_nodes:
            mv[eid] = series
        elif eid in resource_ids:
            res[eid] = series
        elif ":" in eid:
            gid, _, nid = eid.partition(":")
            if gid not in lv_nodes or nid not in lv_nodes[gid]:
                raise CrossRefError(
                    f"{path}: time series references unknown LV element {eid!r}"
                )
            background.setdefault(gid, {})[nid] = series
        else:
            raise CrossRefError(f"{path}: time series references unknown element {eid!r}")

    schedule = None
    if schedule_csv is not None:
        st = _CsvTable(schedule_csv, ("t", "p_kw", "q_kvar"))
        schedule = np.zeros((horizon, 2))
        for r, ln in st.rows:
            step = int(st.value(r, ln, "t"))
            if not 0 <= step < horizon:
                raise ParseError(
                    f"schedule step {step} outside horizon {horizon}",
                    file=schedule_csv,
                    line=ln,
                    column="t",
                )
            schedule[step] = (
                st.number(r, ln, "p_kw") / base_kva,
                st.number(r, ln, "q_kvar") / base_kva,
            )
    return TimeSeries(
        step_minutes=step_minutes,
        horizon=horizon,
        mv_injections=mv,
        resource_baselines=res,
        lv_background=background,
        tso_schedule=schedule,
    )


# ---------------------------------------------------------------------------
# Coefficient tables
# ---------------------------------------------------------------------------


def write_coefficients_csv(model: SensitivityModel, path: str | os.PathLike) -> None:
    """Export a sensitivity model in the interchange schema.

    Node rows fill kvp/kvq, branch rows (labeled ``from-to``) fill kip/kiq.
    Loss-sensitivity terms are not part of the interchange format.
    """
    rows = []
    for i, nid in enumerate(model.node_ids):
        for j, inj in enumerate(model.injectors):
            rows.append((nid, inj, float(model.k_vp[i, j]), float(model.k_vq[i, j]), "", ""))
    for b, lbl in enumerate(model.branch_labels):
        for j, inj in enumerate(model.injectors):
            rows.append((lbl, inj, "", "", float(model.k_ip[b, j]), float(model.k_iq[b, j])))
    write_csv(path, ("observed", "injector", "kvp", "kvq", "kip", "kiq"), rows)


def read_coefficients_csv(path: str, grid: str) -> SensitivityModel:
    """Read a sensitivity model; tables must be complete per observed element."""
    t = _CsvTable(path, ("observed", "injector", "kvp", "kvq", "kip", "kiq"))
    node_rows: dict[tuple[str, str], tuple[float, float]] = {}
    branch_rows: dict[tuple[str, str], tuple[float, float]] = {}
    nodes: list[str] = []
    branches: list[str] = []
    injectors: list[str] = []
    for r, ln in t.rows:
        obs = t.value(r, ln, "observed")
        inj = t.value(r, ln, "injector")
        if inj not in injectors:
            injectors.append(inj)
        if r.get("kvp", "") != "":
            node_rows[(obs, inj)] = (t.number(r, ln, "kvp"), t.number(r, ln, "kvq"))
            if obs not in nodes:
                nodes.append(obs)
        elif r.get("kip", "") != "":
            branch_rows[(obs, inj)] = (t.number(r, ln, "kip"), t.number(r, ln, "kiq"))
            if obs not in branches:
                branches.append(obs)
        else:
            raise ParseError("row has neither kvp/kvq nor kip/kiq", file=path, line=ln)
    k_vp = np.zeros((len(nodes), len(injectors)))
    k_vq = np.zeros_like(k_vp)
    k_ip = np.zeros((len(branches), len(injectors)))
    k_iq = np.zeros_like(k_ip)
    for i, nid in enumerate(nodes):
        for j, inj in enumerate(injectors):
            if (nid, inj) not in node_rows:
                raise CrossRefError(f"{path}: missing coefficient row ({nid}, {inj})")
            k_vp[i, j], k_vq[i, j] = node_rows[(nid, inj)]
    for b, lbl in enumerate(branches):
        for j, inj in enumerate(injectors):
            if (lbl, inj) not in branch_rows:
                raise CrossRefError(f"{path}: missing coefficient row ({lbl}, {inj})")
            k_ip[b, j], k_iq[b, j] = branch_rows[(lbl, inj)]
    return SensitivityModel(
        grid=grid,
        node_ids=tuple(nodes),
        branch_labels=tuple(branches),
        injectors=tuple(injectors),
        k_vp=k_vp,
        k_vq=k_vq,
        k_ip=k_ip,
        k_iq=k_iq,
    )


_OP_KINDS = ("v0", "drop", "i0", "p_slack", "q_slack")


def _read_operating_points(
    path: str, grid: str, model: SensitivityModel, horizon: int
) -> tuple[LvOperatingPoint, ...]:
    t = _CsvTable(path, ("t", "kind", "element", "value_pu"))
    per_step: dict[int, dict] = {}
    for r, ln in t.rows:
        step = int(t.value(r, ln, "t"))
        kind = t.value(r, ln, "kind")
        if kind not in _OP_KINDS:
            raise ParseError(f"unknown kind {kind!r}", file=path, line=ln, column="kind")
        value = t.number(r, ln, "value_pu")
        element = r.get("element", "")
        slot = per_step.setdefault(
            step,
            {
                "v0": np.full(len(model.node_ids), np.nan),
                "drop": np.full(len(model.node_ids), np.nan),
                "i0": np.full(len(model.branch_labels), np.nan),
                "p_slack": 0.0,
                "q_slack": 0.0,
            },
        )
        if kind in ("v0", "drop"):
            if element not in model.node_ids:
                raise CrossRefError(f"{path}: unknown LV node {element!r} in grid {grid}")
            slot[kind][model.node_ids.index(element)] = value
        elif kind == "i0":
            if element not in model.branch_labels:
                raise CrossRefError(f"{path}: unknown LV branch {element!r} in grid {grid}")
            slot[kind][model.branch_labels.index(element)] = value
        else:
            slot[kind] = value

    def build(step: int, slot: dict) -> LvOperatingPoint:
        for key in ("v0", "drop", "i0"):
            if np.any(np.isnan(slot[key])):
                raise CrossRefError(
                    f"{path}: incomplete {key} data for grid {grid} at step {step}"
                )
        return LvOperatingPoint(
            grid=grid,
            step=step,
            v0=slot["v0"],
            i0=slot["i0"],
            drop=slot["drop"],
            p_slack=slot["p_slack"],
            q_slack=slot["q_slack"],
        )

    if set(per_step) == {0} and horizon > 1:
        # a single block is reused for every step
        base = build(0, per_step[0])
        return tuple(replace(base, step=t) for t in range(horizon))
    missing = [t for t in range(horizon) if t not in per_step]
    if missing:
        raise CrossRefError(
            f"{path}: operating point missing for steps {missing[:5]} of grid {grid}"
        )
    return tuple(build(t, per_step[t]) for t in range(horizon))


def _write_operating_points(path: str, lv: LvGridModel, model: SensitivityModel) -> None:
    rows = []
    constant = all(
        np.array_equal(op.v0, lv.ops[0].v0)
        and np.array_equal(op.i0, lv.ops[0].i0)
        and np.array_equal(op.drop, lv.ops[0].drop)
        and op.p_slack == lv.ops[0].p_slack
        and op.q_slack == lv.ops[0].q_slack
        for op in lv.ops
    )
    ops = lv.ops[:1] if constant else lv.ops
    for step, op in enumerate(ops):
        for i, nid in enumerate(model.node_ids):
            rows.append((step, "v0", nid, float(op.v0[i])))
            rows.append((step, "drop", nid, float(op.drop[i])))
        for b, lbl in enumerate(model.branch_labels):
            rows.append((step, "i0", lbl, float(op.i0[b])))
        rows.append((step, "p_slack", "", float(op.p_slack)))
        rows.append((step, "q_slack", "", float(op.q_slack)))
    write_csv(path, ("t", "kind", "element", "value_pu"), rows)


# ---------------------------------------------------------------------------
# Scenario load / save
# ---------------------------------------------------------------------------


def load_scenario(cfg: ScenarioConfig | str | os.PathLike) -> OpfScenario:
    """Load, cross-check and assemble a scenario from its files.

    All grid and scenario validations run; any defect raises
    :class:`ValidationError` with the full list.
    """
    if not isinstance(cfg, ScenarioConfig):
        cfg = parse_config(cfg)

    links = _read_links(cfg.resolve(cfg.links_csv)) if cfg.links_csv else ()
    net = _read_network(
        cfg.name,
        cfg.resolve(cfg.nodes_csv),
        cfg.resolve(cfg.branches_csv),
        cfg.slack_node,
        cfg.base_kva,
        cfg.base_kv,
        links,
    )
    for link in links:
        if link.lv_grid not in cfg.lv_grids:
            raise CrossRefError(
                f"transformer link references LV grid {link.lv_grid!r} with no lv.* config"
            )

    resources = (
        _read_resources(cfg.resolve(cfg.resources_csv), cfg.pf_limit_default)
        if cfg.resources_csv
        else ()
    )

    reference_nets: dict[str, MvNetwork] = {}
    coefficient_models: dict[str, SensitivityModel] = {}
    lv_node_sets: dict[str, set[str]] = {}
    for gid, lvc in cfg.lv_grids.items():
        if lvc.is_reference:
            if not (lvc.branches_csv and lvc.slack):
                raise CrossRefError(
                    f"LV grid {gid!r}: reference model needs nodes_csv, branches_csv and slack"
                )
            lv_net = _read_network(
                gid,
                cfg.resolve(lvc.nodes_csv),
                cfg.resolve(lvc.branches_csv),
                lvc.slack,
                cfg.base_kva,
                0.4,
            )
            reference_nets[gid] = lv_net
            lv_node_sets[gid] = set(lv_net.node_ids())
        else:
            if not (lvc.coefficients_csv and lvc.operating_point_csv):
                raise CrossRefError(
                    f"LV grid {gid!r}: needs either a reference model or coefficient "
                    "and operating-point files"
                )
            model = read_coefficients_csv(cfg.resolve(lvc.coefficients_csv), gid)
            coefficient_models[gid] = model
            lv_node_sets[gid] = set(model.node_ids)

    series = _read_timeseries(
        cfg.resolve(cfg.timeseries_csv),
        cfg.base_kva,
        cfg.step_minutes,
        set(net.node_ids()),
        {r.id for r in resources},
        lv_node_sets,
        cfg.resolve(cfg.tso_schedule_csv),
    )

    lv_grids: dict[str, LvGridModel] = {}
    if reference_nets:
        lv_grids.update(
            assemble_lv_grids(
                reference_nets,
                resources,
                series,
                with_loss_sensitivity=cfg.with_loss_sensitivity,
                trust_radius_fraction=cfg.trust_radius_fraction,
            )
        )
    for gid, model in coefficient_models.items():
        ops = _read_operating_points(
            cfg.resolve(cfg.lv_grids[gid].operating_point_csv), gid, model, series.horizon
        )
        lv_grids[gid] = LvGridModel(grid=gid, models=(model,) * series.horizon, ops=ops)

    sc = OpfScenario(
        name=cfg.name,
        network=net,
        lv_grids=lv_grids,
        resources=resources,
        series=series,
        weights=ObjectiveWeights(
            w_l=cfg.w_l,
            w_v=cfg.w_v,
            w_lim=cfg.w_lim,
            w_p=cfg.w_p,
            w_q=cfg.w_q,
            violation_cost_rate=cfg.violation_cost_rate,
        ),
        slack_v0=cfg.slack_v,
        slack_v_bounds=(cfg.slack_vmin, cfg.slack_vmax),
        relaxation_gap_threshold=cfg.relaxation_gap_threshold,
        inverter_overrating=cfg.inverter_overrating,
    )
    defects = sc.validate()
    if defects:
        raise ValidationError(defects)
    return sc


def save_scenario(sc: OpfScenario, out_dir: str | os.PathLike, cfg: ScenarioConfig | None = None) -> str:
    """Serialize a scenario to CSVs plus a config file; returns the config path.

    Reference-backed LV grids are written as LV network files (operating
    points and coefficients are recomputed deterministically on load);
    coefficient-based grids are written as coefficient plus operating-point
    tables.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    kva = sc.network.base_kva

    write_csv(
        out / "nodes.csv",
        ("id", "vmin", "vmax"),
        [(n.id, n.vmin, n.vmax) for n in sc.network.nodes],
    )
    write_csv(
        out / "branches.csv",
        ("from", "to", "r_pu", "x_pu", "imax_pu"),
        [(b.from_node, b.to_node, b.r, b.x, b.i_max) for b in sc.network.branches],
    )
    lines = {
        "name": sc.name,
        "nodes_csv": "nodes.csv",
        "branches_csv": "branches.csv",
        "timeseries_csv": "timeseries.csv",
        "slack_node": sc.network.slack,
        "base_kva": format_float(kva),
        "base_kv": format_float(sc.network.base_kv),
        "step_minutes": format_float(sc.series.step_minutes),
        "slack_v": format_float(sc.slack_v0),
        "slack_vmin": format_float(sc.slack_v_bounds[0]),
        "slack_vmax": format_float(sc.slack_v_bounds[1]),
        "w_l": format_float(sc.weights.w_l),
        "w_v": format_float(sc.weights.w_v),
        "w_lim": format_float(sc.weights.w_lim),
        "w_p": format_float(sc.weights.w_p),
        "w_q": format_float(sc.weights.w_q),
        "violation_cost_rate": format_float(sc.weights.violation_cost_rate),
        "inverter_overrating": format_float(sc.inverter_overrating),
        "relaxation_gap_threshold": format_float(sc.relaxation_gap_threshold),
    }
    if sc.network.transformers:
        write_csv(
            out / "links.csv",
            ("mv_node", "lv_grid"),
            [(t.mv_node, t.lv_grid) for t in sc.network.transformers],
        )
        lines["links_csv"] = "links.csv"

    if sc.resources:
        write_csv(
            out / "resources.csv",
            _RESOURCE_COLUMNS,
            [
                (
                    r.id,
                    r.lv_grid,
                    r.lv_node,
                    r.kind.value,
                    r.dp_min_kw,
                    r.dp_max_kw,
                    r.dq_min_kvar,
                    r.dq_max_kvar,
                    r.s_kva,
                    r.pf_limit,
                    r.ramp_kw_per_hr,
                    r.eta,
                    r.capacity_kwh,
                    r.soc_min,
                    r.soc_max,
                    r.soc0,
                )
                for r in sc.resources
            ],
        )
        lines["resources_csv"] = "resources.csv"

    ts_rows = []
    for nid, series in sc.series.mv_injections.items():
        for t in range(sc.series.horizon):
            ts_rows.append((t, nid, series[t, 0] * kva, series[t, 1] * kva))
    for rid, series in sc.series.resource_baselines.items():
        for t in range(sc.series.horizon):
            ts_rows.append((t, rid, series[t, 0] * kva, series[t, 1] * kva))
    for gid, per_node in sc.series.lv_background.items():
        for nid, series in per_node.items():
            for t in range(sc.series.horizon):
                ts_rows.append((t, f"{gid}:{nid}", series[t, 0] * kva, series[t, 1] * kva))
    write_csv(out / "timeseries.csv", ("t", "element_id", "p_kw", "q_kvar"), ts_rows)

    if sc.series.tso_schedule is not None:
        write_csv(
            out / "schedule.csv",
            ("t", "p_kw", "q_kvar"),
            [
                (t, sc.series.tso_schedule[t, 0] * kva, sc.series.tso_schedule[t, 1] * kva)
                for t in range(sc.series.horizon)
            ],
        )
        lines["tso_schedule_csv"] = "schedule.csv"

    for gid, lv in sc.lv_grids.items():
        if lv.reference_net is not None:
            write_csv(
                out / f"lv_{gid}_nodes.csv",
                ("id", "vmin", "vmax"),
                [(n.id, n.vmin, n.vmax) for n in lv.reference_net.nodes],
            )
            write_csv(
                out / f"lv_{gid}_branches.csv",
                ("from", "to", "r_pu", "x_pu", "imax_pu"),
                [
                    (b.from_node, b.to_node, b.r, b.x, b.i_max)
                    for b in lv.reference_net.branches
                ],
            )
            lines[f"lv.{gid}.nodes_csv"] = f"lv_{gid}_nodes.csv"
            lines[f"lv.{gid}.branches_csv"] = f"lv_{gid}_branches.csv"
            lines[f"lv.{gid}.slack"] = lv.reference_net.slack
        else:
            model = lv.models[0]
            write_coefficients_csv(model, out / f"lv_{gid}_coefficients.csv")
            _write_operating_points(str(out / f"lv_{gid}_op.csv"), lv, model)
            lines[f"lv.{gid}.coefficients_csv"] = f"lv_{gid}_coefficients.csv"
            lines[f"lv.{gid}.operating_point_csv"] = f"lv_{gid}_op.csv"

    cfg_path = out / "gridflex.cfg"
    extra = ""
    if cfg is not None:
        extras = {
            "scheme": cfg.scheme,
            "n_dirs": str(cfg.n_dirs),
            "envelope_step": str(cfg.envelope_step),
            "envelope_window": str(cfg.envelope_window),
            "ramp_threshold_kw_per_hr": format_float(cfg.ramp_threshold_kw_per_hr),
            "feas_tol": format_float(cfg.feas_tol),
            "gap_tol": format_float(cfg.gap_tol),
        }
        extra = "".join(f"{k} = {v}\n" for k, v in extras.items())
    tmp = cfg_path.with_suffix(".tmp")
    tmp.write_text("".join(f"{k} = {v}\n" for k, v in lines.items()) + extra)
    os.replace(tmp, cfg_path)
    return str(cfg_path)


# ---------------------------------------------------------------------------
# Comparison helper
# ---------------------------------------------------------------------------


def _series_equal(a: Mapping[str, np.ndarray], b: Mapping[str, np.ndarray]) -> bool:
    return set(a) == set(b) and all(np.array_equal(a[k], b[k]) for k in a)


def scenarios_identical(a: OpfScenario, b: OpfScenario) -> bool:
    """Field-for-field equality, tolerating no numeric drift."""
    if a.network != b.network or a.resources != b.resources:
        return False
    sa, sb = a.series, b.series
    if (sa.step_minutes, sa.horizon) != (sb.step_minutes, sb.horizon):
        return False
    if not _series_equal(sa.mv_injections, sb.mv_injections):
        return False
    if not _series_equal(sa.resource_baselines, sb.resource_baselines):
        return False
    if set(sa.lv_background) != set(sb.lv_background):
        return False
    for gid in sa.lv_background:
        if not _series_equal(sa.lv_background[gid], sb.lv_background[gid]):
            return False
    if (sa.tso_schedule is None) != (sb.tso_schedule is None):
        return False
    if sa.tso_schedule is not None and not np.array_equal(sa.tso_schedule, sb.tso_schedule):
        return False
    if a.weights != b.weights or a.slack_v0 != b.slack_v0:
        return False
    if a.slack_v_bounds != b.slack_v_bounds:
        return False
    if set(a.lv_grids) != set(b.lv_grids):
        return False
    for gid in a.lv_grids:
        la, lb = a.lv_grids[gid], b.lv_grids[gid]
        if len(la.models) != len(lb.models):
            return False
        for ma, mb in zip(la.models, lb.models):
            if ma.node_ids != mb.node_ids or ma.injectors != mb.injectors:
                return False
            if not (
                np.array_equal(ma.k_vp, mb.k_vp)
                and np.array_equal(ma.k_vq, mb.k_vq)
                and np.array_equal(ma.k_ip, mb.k_ip)
                and np.array_equal(ma.k_iq, mb.k_iq)
            ):
                return False
        for oa, ob in zip(la.ops, lb.ops):
            if not (
                np.array_equal(oa.v0, ob.v0)
                and np.array_equal(oa.i0, ob.i0)
                and np.array_equal(oa.drop, ob.drop)
                and oa.p_slack == ob.p_slack
                and oa.q_slack == ob.q_slack
            ):
                return False
    return True
