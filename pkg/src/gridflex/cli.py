"""Command-line interface.

One invocation runs one command against a scenario config::

    gridflex --config scenario.cfg --command opf --out results/
    gridflex --config scenario.cfg --command envelope --n-dirs 32 --svg
    gridflex --config scenario.cfg --command coordinate --scheme dso_leader
    gridflex --config scenario.cfg --command verify --out results/

``opf`` writes setpoints.csv, state.csv and breakdown.csv; ``envelope``
writes envelope_fast.csv and envelope_slow.csv; ``coordinate`` runs the
configured coordination scheme and writes its outputs plus the service
taxonomy labels; ``verify`` re-simulates the setpoints.csv found in the
output directory with the exact power-flow oracle and exits nonzero when a
hard limit is violated. ``--svg`` additionally renders matplotlib figures
next to the delimited output. ``GRIDFLEX_THREADS`` caps concurrent envelope
direction solves. Exit codes: 0 success, 1 verification failure, 2 errors.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .conic import SolverSettings
from .coordination import (
    DEFAULT_SERVICE_CATALOG,
    SchemeKind,
    parse_scheme,
    run_dso_leader,
    run_tso_leader,
)
from .envelope import FAST, SLOW, ServiceClass, ServiceSpeed, sweep_envelope
from .errors import GridflexError
from .ingest import ScenarioConfig, load_scenario, parse_config
from .opf import solve_schedule, verify_against_oracle, verify_setpoints

COMMANDS = ("opf", "envelope", "coordinate", "verify")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="gridflex",
        description="Combined MV+LV optimal operation and P-Q flexibility envelopes",
    )
    p.add_argument("--config", required=True, help="scenario config file")
    p.add_argument("--command", required=True, choices=COMMANDS)
    p.add_argument("--n-dirs", type=int, default=None, help="envelope granularity override")
    p.add_argument(
        "--scheme",
        choices=[k.value for k in SchemeKind],
        default=None,
        help="coordination scheme override",
    )
    p.add_argument("--out", default=None, help="output directory (default: beside the config)")
    p.add_argument("--svg", action="store_true", help="also render figures as SVG")
    return p


def _service_classes(cfg: ScenarioConfig) -> tuple[ServiceClass, ServiceClass]:
    fast = ServiceClass(ServiceSpeed.FAST, cfg.ramp_threshold_kw_per_hr)
    slow = ServiceClass(ServiceSpeed.SLOW, cfg.ramp_threshold_kw_per_hr)
    return fast, slow


def run(cfg: ScenarioConfig, command: str, out_dir: str, *, n_dirs: int | None = None,
        scheme: str | None = None, svg: bool = False) -> int:
    """Execute one command; returns the process exit status."""
    from . import report

    sc = load_scenario(cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    settings = SolverSettings(feas_tol=cfg.feas_tol, gap_tol=cfg.gap_tol)
    n = n_dirs if n_dirs is not None else cfg.n_dirs
    fast_cls, slow_cls = _service_classes(cfg)
    written: list[str] = []

    if command == "opf":
        res = solve_schedule(sc, settings)
        written += report.emit_schedule(sc, res, out)
        if svg:
            written.append(report.schedule_figure(sc, res, out / "schedule.svg"))
    elif command == "envelope":
        kw = dict(step=cfg.envelope_step, window=cfg.envelope_window)
        fast_env = sweep_envelope(sc, n, fast_cls, **kw)
        slow_env = sweep_envelope(sc, n, slow_cls, **kw)
        written.append(report.emit_envelope(fast_env, sc.network.base_kva, out))
        written.append(report.emit_envelope(slow_env, sc.network.base_kva, out))
        if svg:
            written.append(
                report.envelope_figure(
                    {"fast": fast_env, "slow": slow_env},
                    sc.network.base_kva,
                    out / "envelope.svg",
                )
            )
    elif command == "coordinate":
        kind = parse_scheme(scheme if scheme is not None else cfg.scheme).kind
        kw = dict(step=cfg.envelope_step, window=cfg.envelope_window)
        if kind is SchemeKind.TSO_LEADER:
            result = run_tso_leader(sc, n, **kw)
        else:
            result = run_dso_leader(sc, n, **kw)
            written += report.emit_schedule(sc, result.schedule, out)
        written.append(report.emit_envelope(result.fast, sc.network.base_kva, out))
        written.append(report.emit_envelope(result.slow, sc.network.base_kva, out))
        written.append(report.emit_services(DEFAULT_SERVICE_CATALOG, out))
        if svg:
            written.append(
                report.envelope_figure(
                    {"fast": result.fast, "slow": result.slow},
                    sc.network.base_kva,
                    out / "envelope.svg",
                )
            )
    elif command == "verify":
        setpoints = out / "setpoints.csv"
        if setpoints.exists():
            dp, dq = report.read_setpoints_csv(setpoints, sc)
            rep = verify_setpoints(sc, dp, dq, limit_tolerance=1e-6)
        else:
            res = solve_schedule(sc, settings)
            rep = verify_against_oracle(res, sc, limit_tolerance=1e-6)
        written.append(report.emit_verification(rep, out))
        for path in written:
            print(f"wrote {path}")
        if rep.violations:
            for v in rep.violations[:20]:
                print(
                    f"violation: step={v.step} scope={v.scope} element={v.element} "
                    f"kind={v.kind} amount={v.amount:.6g} p.u.",
                    file=sys.stderr,
                )
            print(f"error: verification failed with {len(rep.violations)} violations",
                  file=sys.stderr)
            return 1
        print("verification ok: no hard-limit violations")
        return 0
    else:  # pragma: no cover - argparse restricts choices
        raise ValueError(command)

    for path in written:
        print(f"wrote {path}")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = parse_config(args.config)
        out_dir = args.out if args.out else str(Path(args.config).parent / "out")
        return run(
            cfg,
            args.command,
            out_dir,
            n_dirs=args.n_dirs,
            scheme=args.scheme,
            svg=args.svg,
        )
    except GridflexError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
