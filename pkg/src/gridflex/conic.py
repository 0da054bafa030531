"""Standard-form convex program container and conic solver front end.

A :class:`ConicProgram` holds decision variables with bounds, a linear
objective, linear equality/inequality rows, and second-order-cone constraints
in two forms: rotated (``u * w >= ||z||^2`` with ``u, w >= 0``) and standard
(``t >= ||z||``). Every row carries a short tag naming the constraint family
it came from, which diagnostics and structural tests key on.

Solving lowers the program to the conic form ``min q'x  s.t.  Ax + s = b,
s in K`` and hands it to Clarabel, a primal-dual interior-point method over
the product of zero, nonnegative and second-order cones. Clarabel applies
Ruiz row/column equilibration internally before factorization. Solutions are
verified against the contract tolerances with this module's own residual
computation before being reported optimal.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import MissingVariable

__all__ = [
    "Expr",
    "ConicProgram",
    "SolverSettings",
    "Status",
    "Solution",
    "Residuals",
    "residuals",
    "solve",
]

INF = float("inf")


class Expr:
    """Sparse affine expression ``sum coeff_i * x_i + const``."""

    __slots__ = ("coeffs", "const")

    def __init__(self, coeffs: Mapping[int, float] | None = None, const: float = 0.0):
        self.coeffs: dict[int, float] = dict(coeffs) if coeffs else {}
        self.const = float(const)

    @staticmethod
    def of(other: "Expr | float | int") -> "Expr":
        if isinstance(other, Expr):
            return other
        return Expr(const=float(other))

    def copy(self) -> "Expr":
        return Expr(self.coeffs, self.const)

    def __add__(self, other: "Expr | float | int") -> "Expr":
        other = Expr.of(other)
        out = self.copy()
        for i, c in other.coeffs.items():
            out.coeffs[i] = out.coeffs.get(i, 0.0) + c
        out.const += other.const
        return out

    __radd__ = __add__

    def __sub__(self, other: "Expr | float | int") -> "Expr":
        return self + (-Expr.of(other))

    def __rsub__(self, other: "Expr | float | int") -> "Expr":
        return Expr.of(other) + (-self)

    def __neg__(self) -> "Expr":
        return Expr({i: -c for i, c in self.coeffs.items()}, -self.const)

    def __mul__(self, k: float | int) -> "Expr":
        k = float(k)
        return Expr({i: k * c for i, c in self.coeffs.items()}, k * self.const)

    __rmul__ = __mul__

    def value(self, x: np.ndarray) -> float:
        return self.const + sum(c * x[i] for i, c in self.coeffs.items())

    def __repr__(self) -> str:
        terms = " + ".join(f"{c:g}*x{i}" for i, c in sorted(self.coeffs.items()))
        if self.const or not terms:
            terms = f"{terms} + {self.const:g}" if terms else f"{self.const:g}"
        return terms


@dataclass(frozen=True)
class _LinearRow:
    expr: Expr
    rhs: float
    tag: str


@dataclass(frozen=True)
class _RotatedCone:
    u: Expr
    w: Expr
    z: tuple[Expr, ...]
    tag: str


@dataclass(frozen=True)
class _StandardCone:
    t: Expr
    z: tuple[Expr, ...]
    tag: str


class ConicProgram:
    """Mutable builder for a standard-form program; immutable once solved.

    Construction-time checks keep rows well formed (finite data, known
    variables, ordered bounds); anything structural beyond that is the
    caller's responsibility.
    """

    def __init__(self, name: str = ""):
        self.name = name
        self.var_names: list[str] = []
        self.lb: list[float] = []
        self.ub: list[float] = []
        self.eqs: list[_LinearRow] = []
        self.ineqs: list[_LinearRow] = []  # expr <= rhs
        self.rotated: list[_RotatedCone] = []
        self.socs: list[_StandardCone] = []
        self.objective: Expr = Expr()

    # -- construction -------------------------------------------------------

    def add_var(self, name: str, lb: float = -INF, ub: float = INF) -> int:
        if math.isnan(lb) or math.isnan(ub) or lb > ub:
            raise ValueError(f"variable {name!r}: bad bounds [{lb}, {ub}]")
        self.var_names.append(name)
        self.lb.append(float(lb))
        self.ub.append(float(ub))
        return len(self.var_names) - 1

    def var(self, i: int) -> Expr:
        self._check_index(i)
        return Expr({i: 1.0})

    def _check_index(self, i: int):
        if not 0 <= i < len(self.var_names):
            raise MissingVariable(f"no variable with index {i}")

    def _check_expr(self, e: Expr):
        for i, c in e.coeffs.items():
            self._check_index(i)
            if not math.isfinite(c):
                raise ValueError(f"non-finite coefficient on {self.var_names[i]}")
        if not math.isfinite(e.const):
            raise ValueError("non-finite constant in expression")

    def add_eq(self, expr: Expr, rhs: float = 0.0, tag: str = ""):
        self._check_expr(expr)
        self.eqs.append(_LinearRow(expr, float(rhs), tag))

    def add_le(self, expr: Expr, rhs: float = 0.0, tag: str = ""):
        """Add ``expr <= rhs``."""
        self._check_expr(expr)
        self.ineqs.append(_LinearRow(expr, float(rhs), tag))

    def add_ge(self, expr: Expr, rhs: float = 0.0, tag: str = ""):
        self.add_le(-expr, -float(rhs), tag)

    def add_rotated_cone(self, u: Expr, w: Expr, z: Sequence[Expr], tag: str = ""):
        """Add ``u * w >= ||z||^2`` with ``u, w >= 0``."""
        u, w = Expr.of(u), Expr.of(w)
        z = tuple(Expr.of(zi) for zi in z)
        for e in (u, w, *z):
            self._check_expr(e)
        self.rotated.append(_RotatedCone(u, w, z, tag))

    def add_soc(self, t: Expr, z: Sequence[Expr], tag: str = ""):
        """Add ``t >= ||z||_2``."""
        t = Expr.of(t)
        z = tuple(Expr.of(zi) for zi in z)
        for e in (t, *z):
            self._check_expr(e)
        self.socs.append(_StandardCone(t, z, tag))

    def set_objective(self, expr: Expr):
        """Set the linear objective to be minimized."""
        self._check_expr(expr)
        self.objective = expr.copy()

    # -- introspection ------------------------------------------------------

    @property
    def num_vars(self) -> int:
        return len(self.var_names)

    def rows_tagged(self, prefix: str) -> int:
        """Count linear rows whose tag starts with ``prefix``."""
        return sum(1 for r in self.eqs if r.tag.startswith(prefix)) + sum(
            1 for r in self.ineqs if r.tag.startswith(prefix)
        )

    def vars_named(self, prefix: str) -> int:
        return sum(1 for n in self.var_names if n.startswith(prefix))

    def dump(self) -> str:
        """Plain-text standard-form listing for debugging.

        Format: one ``var`` line per variable (name, bounds), a ``min`` line,
        then ``eq``/``le`` rows and ``rcone``/``soc`` blocks with their tags.
        """
        out = [f"program {self.name or '(unnamed)'}"]
        for i, name in enumerate(self.var_names):
            out.append(f"var x{i} {name} in [{self.lb[i]:g}, {self.ub[i]:g}]")
        out.append(f"min {self.objective!r}")
        for r in self.eqs:
            out.append(f"eq  {r.expr!r} == {r.rhs:g}  # {r.tag}")
        for r in self.ineqs:
            out.append(f"le  {r.expr!r} <= {r.rhs:g}  # {r.tag}")
        for c in self.rotated:
            zs = ", ".join(repr(z) for z in c.z)
            out.append(f"rcone ({c.u!r}) * ({c.w!r}) >= ||{zs}||^2  # {c.tag}")
        for c in self.socs:
            zs = ", ".join(repr(z) for z in c.z)
            out.append(f"soc {c.t!r} >= ||{zs}||  # {c.tag}")
        return "\n".join(out)


# ---------------------------------------------------------------------------
# Residuals
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Residuals:
    """Worst violation per constraint class at a candidate point.

    ``bounds``, ``linear_eq`` and ``linear_ineq`` are absolute violations of
    the corresponding rows. ``cone`` mixes the two cone forms: standard cones
    contribute ``||z|| - t`` and rotated cones the product gap
    ``||z||^2 - u*w`` (and any negativity of u or w). ``worst`` names the
    class and tag of the single largest violation.
    """

    bounds: float
    linear_eq: float
    linear_ineq: float
    cone: float
    worst: str

    @property
    def max_violation(self) -> float:
        return max(self.bounds, self.linear_eq, self.linear_ineq, self.cone)


def residuals(prog: ConicProgram, candidate: np.ndarray | Sequence[float]) -> Residuals:
    """Evaluate all constraint classes of ``prog`` at ``candidate``."""
    x = np.asarray(candidate, dtype=float)
    if x.shape != (prog.num_vars,):
        raise MissingVariable(
            f"candidate covers {x.shape[0] if x.ndim == 1 else 'wrong-shape'} of "
            f"{prog.num_vars} variables"
        )
    worst = ("", 0.0)

    def track(v, kind, tag):
        nonlocal worst
        if v > worst[1]:
            worst = (f"{kind}:{tag}" if tag else kind, v)

    b = 0.0
    for i in range(prog.num_vars):
        vb = max(prog.lb[i] - x[i], x[i] - prog.ub[i], 0.0)
        if vb > b:
            b = vb
            track(vb, "bound", prog.var_names[i])
    eq = 0.0
    for r in prog.eqs:
        v = abs(r.expr.value(x) - r.rhs)
        eq = max(eq, v)
        track(v, "eq", r.tag)
    ineq = 0.0
    for r in prog.ineqs:
        v = max(0.0, r.expr.value(x) - r.rhs)
        ineq = max(ineq, v)
        track(v, "le", r.tag)
    cone = 0.0
    for c in prog.rotated:
        u, w = c.u.value(x), c.w.value(x)
        zz = sum(z.value(x) ** 2 for z in c.z)
        v = max(zz - u * w, -u, -w, 0.0)
        cone = max(cone, v)
        track(v, "rcone", c.tag)
    for c in prog.socs:
        v = max(0.0, math.hypot(*(z.value(x) for z in c.z)) - c.t.value(x))
        cone = max(cone, v)
        track(v, "soc", c.tag)
    return Residuals(bounds=b, linear_eq=eq, linear_ineq=ineq, cone=cone, worst=worst[0])


# ---------------------------------------------------------------------------
# Solve
# ---------------------------------------------------------------------------


class Status(Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    NUMERICAL_FAILURE = "NumericalFailure"


@dataclass(frozen=True)
class SolverSettings:
    """Contract tolerances for :func:`solve`.

    ``feas_tol`` is relative: a row with right-hand side ``b`` may be violated
    by ``feas_tol * (1 + |b|)``. The backend is driven an order of magnitude
    tighter than the contract so verified solutions have margin.
    """

    feas_tol: float = 1e-6
    gap_tol: float = 1e-6
    max_iters: int = 200
    verbose: bool = False
    equilibrate: bool = True


@dataclass(frozen=True)
class Solution:
    status: Status
    x: np.ndarray
    objective: float
    objective_dual: float
    primal_residual: float
    dual_residual: float
    gap: float
    iterations: int
    wall_time: float
    message: str = ""

    def require_optimal(self) -> "Solution":
        from .errors import SolveFailed

        if self.status is not Status.OPTIMAL:
            raise SolveFailed(f"solve ended {self.status.value}: {self.message}", self)
        return self


def _lower(prog: ConicProgram):
    """Assemble (q, A, b, cones) in Clarabel's ``Ax + s = b, s in K`` form."""
    import clarabel

    n = prog.num_vars
    q = np.zeros(n)
    for i, c in prog.objective.coeffs.items():
        q[i] += c

    rows: list[tuple[int, int, float]] = []  # (row, col, coeff)
    b: list[float] = []
    cones = []
    nrow = 0

    def emit(expr: Expr, rhs: float):
        # s_row = rhs - expr(x)
        nonlocal nrow
        for i, c in expr.coeffs.items():
            if c != 0.0:
                rows.append((nrow, i, c))
        b.append(rhs - expr.const)
        nrow += 1

    for r in prog.eqs:
        emit(r.expr, r.rhs)
    if prog.eqs:
        cones.append(clarabel.ZeroConeT(len(prog.eqs)))

    n_nonneg = 0
    for r in prog.ineqs:
        emit(r.expr, r.rhs)
        n_nonneg += 1
    for i in range(n):
        if prog.ub[i] < INF:
            emit(Expr({i: 1.0}), prog.ub[i])
            n_nonneg += 1
        if prog.lb[i] > -INF:
            emit(Expr({i: -1.0}), -prog.lb[i])
            n_nonneg += 1
    if n_nonneg:
        cones.append(clarabel.NonnegativeConeT(n_nonneg))

    for c in prog.socs:
        emit(-c.t, 0.0)
        for z in c.z:
            emit(-z, 0.0)
        cones.append(clarabel.SecondOrderConeT(1 + len(c.z)))
    for c in prog.rotated:
        # (u + w, u - w, 2 z) in Q  <=>  u w >= ||z||^2, u, w >= 0
        emit(-(c.u + c.w), 0.0)
        emit(-(c.u - c.w), 0.0)
        for z in c.z:
            emit(z * (-2.0), 0.0)
        cones.append(clarabel.SecondOrderConeT(2 + len(c.z)))

    if rows:
        ri, ci, vv = zip(*rows)
    else:
        ri = ci = vv = ()
    A = sp.csc_matrix((vv, (ri, ci)), shape=(nrow, n))
    return q, A, np.array(b, dtype=float), cones


def solve(prog: ConicProgram, settings: SolverSettings | None = None) -> Solution:
    """Solve ``prog`` to the contract tolerances.

    Deterministic: the backend runs single-threaded on fixed data, so repeated
    solves of an identical program return identical results. A point reported
    ``Optimal`` has been re-checked with :func:`residuals`; if the backend
    claims success but the contract check fails, the status is downgraded to
    ``NumericalFailure`` with the worst row named in the message.
    """
    import clarabel

    settings = settings or SolverSettings()
    q, A, b, cones = _lower(prog)

    cs = clarabel.DefaultSettings()
    cs.verbose = settings.verbose
    cs.max_iter = settings.max_iters
    cs.max_threads = 1
    cs.equilibrate_enable = settings.equilibrate
    # drive the backend at full accuracy regardless of the contract; the
    # contract check below decides what counts as Optimal. Aggressive
    # iterative refinement keeps unscaled residuals honest on badly scaled
    # rows (the backend terminates on equilibrated residuals).
    cs.tol_feas = 1e-10
    cs.tol_gap_abs = 1e-10
    cs.tol_gap_rel = 1e-10
    cs.iterative_refinement_abstol = 1e-14
    cs.iterative_refinement_reltol = 1e-14

    t0 = time.perf_counter()
    try:
        solver = clarabel.DefaultSolver(sp.csc_matrix((prog.num_vars, prog.num_vars)), q, A, b, cones, cs)
        raw = solver.solve()
    except BaseException as exc:  # Clarabel panics surface as BaseException
        return Solution(
            status=Status.NUMERICAL_FAILURE,
            x=np.full(prog.num_vars, np.nan),
            objective=math.nan,
            objective_dual=math.nan,
            primal_residual=math.inf,
            dual_residual=math.inf,
            gap=math.inf,
            iterations=0,
            wall_time=time.perf_counter() - t0,
            message=f"backend failure: {exc}",
        )
    wall = time.perf_counter() - t0

    name = str(raw.status)
    x = np.asarray(raw.x, dtype=float)
    obj = float(raw.obj_val)
    gap = abs(float(raw.obj_val) - float(raw.obj_val_dual)) / max(1.0, abs(float(raw.obj_val)))

    if name in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
        return Solution(
            status=Status.INFEASIBLE,
            x=x,
            objective=math.nan,
            objective_dual=math.nan,
            primal_residual=math.inf,
            dual_residual=float(raw.r_dual),
            gap=math.nan,
            iterations=raw.iterations,
            wall_time=wall,
            message="primal infeasibility certificate found "
            f"(dual ray with residual {raw.r_dual:.2e})",
        )
    if name in ("DualInfeasible", "AlmostDualInfeasible"):
        return Solution(
            status=Status.UNBOUNDED,
            x=x,
            objective=-math.inf,
            objective_dual=math.nan,
            primal_residual=float(raw.r_prim),
            dual_residual=math.inf,
            gap=math.nan,
            iterations=raw.iterations,
            wall_time=wall,
            message="dual infeasibility certificate found (unbounded ray)",
        )
    if name not in ("Solved", "AlmostSolved", "MaxIterations", "InsufficientProgress"):
        return Solution(
            status=Status.NUMERICAL_FAILURE,
            x=x,
            objective=obj,
            objective_dual=float(raw.obj_val_dual),
            primal_residual=float(raw.r_prim),
            dual_residual=float(raw.r_dual),
            gap=gap,
            iterations=raw.iterations,
            wall_time=wall,
            message=f"backend status {name}",
        )

    res = residuals(prog, x)
    rhs_mag = [abs(r.rhs) for r in prog.eqs] + [abs(r.rhs) for r in prog.ineqs]
    scale = 1.0 + max(rhs_mag, default=0.0)
    feas_ok = res.max_violation <= settings.feas_tol * scale
    gap_ok = gap <= settings.gap_tol or math.isnan(gap)
    if feas_ok and gap_ok:
        status = Status.OPTIMAL
        message = "" if name == "Solved" else f"backend reports {name}; contract check passed"
    else:
        status = Status.NUMERICAL_FAILURE
        message = (
            f"contract check failed ({name}): violation {res.max_violation:.3e} at "
            f"{res.worst}, gap {gap:.3e}"
        )
    return Solution(
        status=status,
        x=x,
        objective=obj,
        objective_dual=float(raw.obj_val_dual),
        primal_residual=res.max_violation,
        dual_residual=float(raw.r_dual),
        gap=gap,
        iterations=raw.iterations,
        wall_time=wall,
        message=message,
    )
