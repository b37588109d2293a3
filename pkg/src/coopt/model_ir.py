"""Solver-agnostic optimization models and the solving contract.

A :class:`ModelIR` is a minimization problem with bounded variables, a
linear plus diagonal-quadratic objective and sparse linear rows. Variables
and rows are addressed by symbol keys: tuples such as ``("pg", g, t)`` or
``("balance", i, t)`` with 0-based integer indices.

Backends:

``highs``
    HiGHS for LP and MILP. Mixed-integer models with a quadratic objective
    are piecewise-linearized, solved as a MILP, and then polished by fixing
    the integers and re-solving the exact QP.
``scip``
    SCIP for everything with integers, quadratic objective handled natively
    through an epigraph constraint.

Continuous QPs (including every polish step) go to Clarabel's interior point
solver unless ``SolveOptions.qp_solver`` is ``"highs"``, which selects the
HiGHS active-set method instead; that one is exact at vertices but can take
tens of thousands of iterations on the stochastic models.

The backend is picked by ``SolveOptions.backend`` or the ``COOPT_SOLVER``
environment variable; the default is ``highs``.
"""

from __future__ import annotations

import logging
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

log = logging.getLogger(__name__)

__all__ = [
    "ModelIR",
    "SolveResult",
    "SolveOptions",
    "SolverError",
    "BackendUnavailable",
    "NonConvexModel",
    "UnboundedQuadraticVariable",
    "IncumbentInfeasibleAfterFix",
    "solve",
    "piecewise_linearize",
    "fix_integers_and_resolve",
    "kkt_residuals",
    "write_lp",
]

INF = math.inf
LE, EQ, GE = "<=", "==", ">="


class SolverError(RuntimeError):
    pass


class BackendUnavailable(SolverError):
    pass


class NonConvexModel(SolverError):
    pass


class UnboundedQuadraticVariable(SolverError):
    pass


class IncumbentInfeasibleAfterFix(SolverError):
    pass


class ModelIR:
    """Mutable model builder; treat as frozen once handed to :func:`solve`."""

    def __init__(self, name: str = ""):
        self.name = name
        self.lb: list[float] = []
        self.ub: list[float] = []
        self.is_int: list[bool] = []
        self.obj: list[float] = []
        self.quad: dict[int, float] = {}
        self.obj_const = 0.0
        self.var_keys: list[tuple] = []
        self.symbol_index: dict[tuple, int] = {}
        self.row_keys: list[tuple] = []
        self.row_index: dict[tuple, int] = {}
        self.sense: list[str] = []
        self.rhs: list[float] = []
        self.tracked: list[bool] = []
        self._ri: list[int] = []
        self._ci: list[int] = []
        self._v: list[float] = []
        self.dims: dict[str, tuple[str, ...]] = {}
        self.meta: dict = {}

    # -- building -----------------------------------------------------
    def declare(self, family: str, *dims: str) -> None:
        """Register index labels used when naming a family in LP exports."""
        self.dims[family] = dims

    def add_var(self, key: tuple, lb: float = 0.0, ub: float = INF, binary: bool = False, obj: float = 0.0) -> int:
        if key in self.symbol_index:
            raise KeyError(f"duplicate variable {key}")
        j = len(self.lb)
        if binary:
            lb, ub = max(lb, 0.0), min(ub, 1.0)
        self.lb.append(float(lb))
        self.ub.append(float(ub))
        self.is_int.append(bool(binary))
        self.obj.append(float(obj))
        self.var_keys.append(key)
        self.symbol_index[key] = j
        return j

    def add_obj(self, col: int, coef: float) -> None:
        self.obj[col] += coef

    def add_quad(self, col: int, coef: float) -> None:
        """Add ``coef * x_col**2`` to the objective."""
        if coef:
            self.quad[col] = self.quad.get(col, 0.0) + coef

    def add_row(self, key: tuple, terms, sense: str, rhs: float, tracked: bool = False) -> int:
        """Add ``sum(coef * x) <sense> rhs``; ``terms`` is an iterable of ``(col, coef)``."""
        if sense not in (LE, EQ, GE):
            raise ValueError(f"bad sense {sense!r}")
        if key in self.row_index:
            raise KeyError(f"duplicate row {key}")
        r = len(self.rhs)
        n = len(self.lb)
        for c, v in terms:
            if not 0 <= c < n:
                raise IndexError(f"row {key} references unknown column {c}")
            if v:
                self._ri.append(r)
                self._ci.append(c)
                self._v.append(float(v))
        self.row_keys.append(key)
        self.row_index[key] = r
        self.sense.append(sense)
        self.rhs.append(float(rhs))
        self.tracked.append(bool(tracked))
        return r

    # -- queries --------------------------------------------------------
    def var(self, key: tuple) -> int:
        return self.symbol_index[key]

    def row(self, key: tuple) -> int:
        return self.row_index[key]

    @property
    def n_vars(self) -> int:
        return len(self.lb)

    @property
    def n_rows(self) -> int:
        return len(self.rhs)

    @property
    def n_int(self) -> int:
        return sum(self.is_int)

    def count_rows(self, family: str) -> int:
        return sum(1 for k in self.row_keys if k[0] == family)

    def count_vars(self, family: str) -> int:
        return sum(1 for k in self.var_keys if k[0] == family)

    def family(self, name: str) -> dict[tuple, int]:
        return {k: j for k, j in self.symbol_index.items() if k[0] == name}

    def matrix(self) -> sp.csr_matrix:
        return sp.csr_matrix((self._v, (self._ri, self._ci)), shape=(self.n_rows, self.n_vars))

    def row_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        rhs = np.array(self.rhs)
        sense = np.array(self.sense)
        lo = np.where(sense == LE, -INF, rhs)
        hi = np.where(sense == GE, INF, rhs)
        return lo, hi

    def objective_value(self, x) -> float:
        x = np.asarray(x, dtype=float)
        val = self.obj_const + float(np.dot(self.obj, x))
        for j, q in self.quad.items():
            val += q * x[j] ** 2
        return val

    def copy(self) -> ModelIR:
        m = ModelIR(self.name)
        for attr in ("lb", "ub", "is_int", "obj", "var_keys", "row_keys", "sense", "rhs", "tracked", "_ri", "_ci", "_v"):
            setattr(m, attr, list(getattr(self, attr)))
        m.quad = dict(self.quad)
        m.obj_const = self.obj_const
        m.symbol_index = dict(self.symbol_index)
        m.row_index = dict(self.row_index)
        m.dims = dict(self.dims)
        m.meta = dict(self.meta)
        return m

    def check_convex(self) -> None:
        for j, q in self.quad.items():
            if q < 0:
                raise NonConvexModel(f"negative quadratic coefficient on {self.var_keys[j]}")
            if self.is_int[j]:
                raise NonConvexModel(f"quadratic term on integer variable {self.var_keys[j]}")

    def name_of(self, key: tuple) -> str:
        labels = self.dims.get(key[0], ())
        parts = [key[0]]
        for k, idx in enumerate(key[1:]):
            label = labels[k] if k < len(labels) else "x"
            parts.append(f"{label}{idx + 1}" if isinstance(idx, (int, np.integer)) else f"{label}{idx}")
        return "_".join(parts)

    def summary(self) -> str:
        return f"{self.name}: {self.n_vars} vars ({self.n_int} binary), {self.n_rows} rows, {len(self.quad)} quadratic terms"


@dataclass
class SolveOptions:
    gap: float = 1e-6
    time_limit: float | None = None
    threads: int = 1
    backend: str | None = None
    pwl_segments: int = 16
    qp_solver: str = "clarabel"
    feasibility_tol: float = 1e-7
    seed: int = 0
    verbose: bool = False

    def resolved_backend(self) -> str:
        name = (self.backend or os.environ.get("COOPT_SOLVER") or "highs").lower()
        if name not in ("highs", "scip"):
            raise BackendUnavailable(f"unknown backend {name!r}")
        return name


@dataclass
class SolveResult:
    status: str  # optimal | infeasible | unbounded | limit
    objective: float
    x: np.ndarray | None
    model: ModelIR = field(repr=False)
    row_duals: np.ndarray | None = field(default=None, repr=False)
    col_duals: np.ndarray | None = field(default=None, repr=False)
    solve_seconds: float = 0.0
    backend: str = ""
    mip_gap: float | None = None
    notes: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status == "optimal"

    @property
    def has_solution(self) -> bool:
        return self.x is not None

    def __getitem__(self, key: tuple) -> float:
        return float(self.x[self.model.symbol_index[key]])

    def get(self, key: tuple, default: float = 0.0) -> float:
        j = self.model.symbol_index.get(key)
        return default if j is None or self.x is None else float(self.x[j])

    @property
    def primal(self) -> dict[tuple, float]:
        if self.x is None:
            return {}
        return {k: float(self.x[j]) for k, j in self.model.symbol_index.items()}

    @property
    def duals(self) -> dict[tuple, float]:
        """Duals of tracked rows (``d objective / d rhs``); empty unless available."""
        if self.row_duals is None:
            return {}
        m = self.model
        return {m.row_keys[r]: float(self.row_duals[r]) for r in range(m.n_rows) if m.tracked[r]}

    def dual(self, key: tuple) -> float:
        if self.row_duals is None:
            raise KeyError("no duals available")
        return float(self.row_duals[self.model.row_index[key]])


# -- HiGHS ----------------------------------------------------------------

def _highs():
    try:
        import highspy
    except ImportError as exc:  # pragma: no cover
        raise BackendUnavailable("highspy is not installed") from exc
    return highspy


def _column_scale(A: sp.csc_matrix, is_int, threshold: float = 10.0) -> np.ndarray:
    peak = np.zeros(A.shape[1])
    absA = abs(A).tocsc()
    nz = np.diff(absA.indptr) > 0
    if nz.any():
        peak[nz] = absA.max(axis=0).toarray().ravel()[nz]
    scale = np.where(peak > threshold, peak, 1.0)
    scale[np.asarray(is_int, dtype=bool)] = 1.0
    return scale


def _solve_highs(model: ModelIR, opts: SolveOptions, integer: bool, quad: bool) -> SolveResult:
    highspy = _highs()
    h = highspy.Highs()
    h.setOptionValue("output_flag", bool(opts.verbose))
    h.setOptionValue("threads", int(opts.threads))
    h.setOptionValue("random_seed", int(opts.seed))
    h.setOptionValue("primal_feasibility_tolerance", opts.feasibility_tol)
    h.setOptionValue("dual_feasibility_tolerance", opts.feasibility_tol)
    h.setOptionValue("mip_feasibility_tolerance", opts.feasibility_tol)
    h.setOptionValue("mip_rel_gap", opts.gap)
    h.setOptionValue("mip_abs_gap", min(opts.gap, 1e-6) * 1e-3)
    if opts.time_limit is not None:
        h.setOptionValue("time_limit", float(opts.time_limit))

    A = model.matrix().tocsc()
    lo, hi = model.row_bounds()
    inf = highspy.kHighsInf
    # Column equilibration: a continuous column x with large entries is
    # replaced by x' = s*x. The active-set QP solver stalls otherwise on
    # DC angle columns (coefficients of order baseMVA/x).
    scale = _column_scale(A, model.is_int)
    A = A @ sp.diags(1.0 / scale)
    A = A.tocsc()
    lp = highspy.HighsLp()
    lp.num_col_ = model.n_vars
    lp.num_row_ = model.n_rows
    lp.col_cost_ = np.array(model.obj, dtype=float) / scale
    lp.col_lower_ = np.clip(np.array(model.lb, dtype=float) * scale, -inf, inf)
    lp.col_upper_ = np.clip(np.array(model.ub, dtype=float) * scale, -inf, inf)
    lp.row_lower_ = np.clip(lo, -inf, inf)
    lp.row_upper_ = np.clip(hi, -inf, inf)
    lp.offset_ = model.obj_const
    lp.a_matrix_.format_ = highspy.MatrixFormat.kColwise
    lp.a_matrix_.start_ = A.indptr.astype(np.int32)
    lp.a_matrix_.index_ = A.indices.astype(np.int32)
    lp.a_matrix_.value_ = A.data.astype(float)
    if integer:
        lp.integrality_ = [
            highspy.HighsVarType.kInteger if f else highspy.HighsVarType.kContinuous for f in model.is_int
        ]
    h.passModel(lp)
    if quad:
        cols = sorted(model.quad)
        start = np.zeros(model.n_vars + 1, dtype=np.int32)
        for j in cols:
            start[j + 1] = 1
        start = np.cumsum(start).astype(np.int32)
        h.passHessian(
            model.n_vars,
            len(cols),
            highspy.HessianFormat.kTriangular,
            start,
            np.array(cols, dtype=np.int32),
            np.array([2.0 * model.quad[j] / scale[j] ** 2 for j in cols]),
        )
    t0 = time.perf_counter()
    h.run()
    elapsed = time.perf_counter() - t0
    ms = h.getModelStatus()
    M = highspy.HighsModelStatus
    if ms == M.kUnboundedOrInfeasible:
        h.setOptionValue("presolve", "off")
        h.run()
        elapsed = time.perf_counter() - t0
        ms = h.getModelStatus()
    status = {
        M.kOptimal: "optimal",
        M.kInfeasible: "infeasible",
        M.kUnbounded: "unbounded",
        M.kUnboundedOrInfeasible: "infeasible",
        M.kTimeLimit: "limit",
        M.kIterationLimit: "limit",
        M.kSolutionLimit: "limit",
        M.kInterrupt: "limit",
    }.get(ms)
    if status is None:
        raise SolverError(f"HiGHS returned {h.modelStatusToString(ms)}")
    info = h.getInfo()
    sol = h.getSolution()
    x = None
    if status == "optimal" or (status == "limit" and info.primal_solution_status == 2):
        x = np.array(sol.col_value, dtype=float) / scale
    row_duals = col_duals = None
    if status == "optimal" and not integer and sol.dual_valid:
        row_duals = np.array(sol.row_dual, dtype=float)
        col_duals = np.array(sol.col_dual, dtype=float) * scale
    objective = model.objective_value(x) if x is not None else math.nan
    gap = float(info.mip_gap) if integer else None
    return SolveResult(status, objective, x, model, row_duals, col_duals, elapsed, "highs", gap)


_SNAP = 1e-8


def _solve_clarabel(model: ModelIR, opts: SolveOptions) -> SolveResult:
    """Continuous convex QP through Clarabel's interior point method.

    Rows are split into an equality block and one-sided inequality blocks;
    the conic multipliers are folded back into ``d objective / d rhs`` duals
    so callers see the same convention as the HiGHS path.
    """
    try:
        import clarabel
    except ImportError as exc:  # pragma: no cover
        raise BackendUnavailable("clarabel is not installed") from exc
    n = model.n_vars
    A = model.matrix().tocsr()
    lo, hi = model.row_bounds()
    lb = np.array(model.lb, dtype=float)
    ub = np.array(model.ub, dtype=float)
    eq = np.isfinite(lo) & np.isfinite(hi) & (lo == hi)
    up = np.isfinite(hi) & ~eq
    dn = np.isfinite(lo) & ~eq
    fixed = np.isfinite(lb) & (lb == ub)
    cub = np.isfinite(ub) & ~fixed
    clb = np.isfinite(lb) & ~fixed
    eye = sp.identity(n, format="csr")
    M = sp.vstack([A[eq], eye[fixed], A[up], -A[dn], eye[cub], -eye[clb]]).tocsc()
    b = np.concatenate([hi[eq], ub[fixed], hi[up], -lo[dn], ub[cub], -lb[clb]])
    n_zero = int(eq.sum() + fixed.sum())
    P = sp.diags([2.0 * model.quad.get(j, 0.0) for j in range(n)]).tocsc()
    P = sp.triu(P).tocsc()
    settings = clarabel.DefaultSettings()
    settings.verbose = bool(opts.verbose)
    settings.tol_gap_abs = settings.tol_gap_rel = 1e-10
    settings.tol_feas = min(1e-10, opts.feasibility_tol)
    if opts.time_limit is not None:
        settings.time_limit = float(opts.time_limit)
    cones = [clarabel.ZeroConeT(n_zero), clarabel.NonnegativeConeT(M.shape[0] - n_zero)]
    t0 = time.perf_counter()
    sol = clarabel.DefaultSolver(P, np.array(model.obj, dtype=float), M, b, cones, settings).solve()
    elapsed = time.perf_counter() - t0
    name = str(sol.status).split(".")[-1]
    status = {
        "Solved": "optimal",
        "AlmostSolved": "optimal",
        "PrimalInfeasible": "infeasible",
        "AlmostPrimalInfeasible": "infeasible",
        "DualInfeasible": "unbounded",
        "AlmostDualInfeasible": "unbounded",
        "MaxTime": "limit",
        "MaxIterations": "limit",
    }.get(name)
    if status is None:
        raise SolverError(f"Clarabel returned {name}")
    res = SolveResult(status, math.nan, None, model, solve_seconds=elapsed, backend="clarabel")
    if name.startswith("Almost"):
        res.notes.append(f"clarabel status {name}")
    if status != "optimal":
        return res
    x = np.clip(np.array(sol.x, dtype=float), lb, ub)
    # Interior iterates stop a hair inside active bounds; put them back on.
    x = np.where(np.abs(x - lb) <= _SNAP, lb, x)
    x = np.where(np.abs(x - ub) <= _SNAP, ub, x)
    z = np.array(sol.z, dtype=float)
    y = np.zeros(model.n_rows)
    cut = np.cumsum([0, eq.sum(), fixed.sum(), up.sum(), dn.sum()])
    y[eq] = -z[cut[0]:cut[1]]
    y[up] -= z[cut[2]:cut[3]]
    y[dn] += z[cut[3]:cut[4]]
    grad = np.array(model.obj, dtype=float) + 2.0 * np.array([model.quad.get(j, 0.0) for j in range(n)]) * x
    res.x = x
    res.objective = model.objective_value(x)
    res.row_duals = y
    res.col_duals = grad - A.T @ y
    return res


def _solve_continuous(model: ModelIR, opts: SolveOptions) -> SolveResult:
    if model.quad and opts.qp_solver == "clarabel":
        return _solve_clarabel(model, opts)
    if opts.qp_solver not in ("clarabel", "highs"):
        raise BackendUnavailable(f"unknown QP solver {opts.qp_solver!r}")
    return _solve_highs(model, opts, False, bool(model.quad))


# -- SCIP -----------------------------------------------------------------

def _solve_scip(model: ModelIR, opts: SolveOptions) -> SolveResult:
    try:
        import pyscipopt as scip
    except ImportError as exc:
        raise BackendUnavailable("pyscipopt is not installed") from exc
    m = scip.Model()
    if not opts.verbose:
        m.hideOutput()
    m.setParam("limits/gap", opts.gap)
    m.setParam("numerics/feastol", opts.feasibility_tol)
    m.setParam("randomization/randomseedshift", int(opts.seed))
    if opts.time_limit is not None:
        m.setParam("limits/time", float(opts.time_limit))
    xs = []
    for j in range(model.n_vars):
        lb = None if model.lb[j] == -INF else model.lb[j]
        ub = None if model.ub[j] == INF else model.ub[j]
        xs.append(m.addVar(name=f"x{j}", vtype="B" if model.is_int[j] and lb == 0 and ub == 1 else ("I" if model.is_int[j] else "C"), lb=lb, ub=ub))
    A = model.matrix()
    for r in range(model.n_rows):
        s, e = A.indptr[r], A.indptr[r + 1]
        expr = scip.quicksum(A.data[k] * xs[A.indices[k]] for k in range(s, e))
        sense, rhs = model.sense[r], model.rhs[r]
        if sense == LE:
            m.addCons(expr <= rhs)
        elif sense == GE:
            m.addCons(expr >= rhs)
        else:
            m.addCons(expr == rhs)
    lin = scip.quicksum(model.obj[j] * xs[j] for j in range(model.n_vars) if model.obj[j])
    if model.quad:
        w = m.addVar(name="quad_epigraph", lb=0.0, ub=None)
        m.addCons(scip.quicksum(q * xs[j] * xs[j] for j, q in model.quad.items()) <= w)
        m.setObjective(lin + w, "minimize")
    else:
        m.setObjective(lin, "minimize")
    t0 = time.perf_counter()
    m.optimize()
    elapsed = time.perf_counter() - t0
    st = m.getStatus()
    status = {"optimal": "optimal", "gaplimit": "optimal", "infeasible": "infeasible", "unbounded": "unbounded", "inforunbd": "infeasible"}.get(
        st, "limit"
    )
    x = None
    if m.getNSols() > 0 and status in ("optimal", "limit"):
        best = m.getBestSol()
        x = np.array([m.getSolVal(best, v) for v in xs])
        x[np.array(model.is_int, dtype=bool)] = np.round(x[np.array(model.is_int, dtype=bool)])
    objective = model.objective_value(x) if x is not None else math.nan
    return SolveResult(status, objective, x, model, None, None, elapsed, "scip", m.getGap() if x is not None else None)


# -- public contract ----------------------------------------------------------

def solve(model: ModelIR, options: SolveOptions | None = None) -> SolveResult:
    """Solve ``model``; duals are returned only for purely continuous models."""
    opts = options or SolveOptions()
    model.check_convex()
    integer = model.n_int > 0
    quad = bool(model.quad)
    backend = opts.resolved_backend()
    if not integer:
        res = _solve_continuous(model, opts)
    elif backend == "scip":
        res = _solve_scip(model, opts)
    elif not quad:
        res = _solve_highs(model, opts, True, False)
    else:
        lin = piecewise_linearize(model, opts.pwl_segments)
        log.info("%s: piecewise-linearized with K=%d, objective bound %.3g", model.name, opts.pwl_segments, lin.meta["pwl_bound"])
        approx = _solve_highs(lin, opts, True, False)
        if approx.x is None:
            return SolveResult(approx.status, math.nan, None, model, solve_seconds=approx.solve_seconds, backend="highs")
        x = approx.x[: model.n_vars]
        polished = fix_integers_and_resolve(model, SolveResult(approx.status, model.objective_value(x), x, model), opts)
        polished.status = approx.status
        polished.row_duals = polished.col_duals = None
        polished.model = model
        polished.solve_seconds += approx.solve_seconds
        polished.mip_gap = approx.mip_gap
        polished.notes.append(f"pwl K={opts.pwl_segments} bound={lin.meta['pwl_bound']:.3g}, polished by QP resolve")
        res = polished
    log.debug("%s -> %s obj=%.9g in %.2fs", model.summary(), res.status, res.objective, res.solve_seconds)
    return res


def piecewise_linearize(model: ModelIR, segments: int = 16) -> ModelIR:
    """Replace every ``q * x**2`` term by ``segments`` chord segments over the bounds of ``x``.

    Segment ``k`` carries the chord slope of ``x**2`` on its sub-interval; the
    added error per term is at most ``q * (ub - lb)**2 / (4 * segments**2)``
    and always an over-estimate. Original columns keep their indices.
    """
    if segments < 1:
        raise ValueError("segments must be >= 1")
    out = model.copy()
    out.quad = {}
    bound = 0.0
    out.declare("pwl", "x", "k")
    for j, q in sorted(model.quad.items()):
        lo, hi = model.lb[j], model.ub[j]
        if not (math.isfinite(lo) and math.isfinite(hi)):
            raise UnboundedQuadraticVariable(f"{model.var_keys[j]} needs finite bounds for linearization")
        width = (hi - lo) / segments
        out.obj_const += q * lo * lo
        cols = []
        for k in range(segments):
            slope = 2.0 * lo + (2 * k + 1) * width
            cols.append(out.add_var(("pwl", j, k), 0.0, width, obj=q * slope))
        out.add_row(("pwl_link", j), [(j, 1.0)] + [(c, -1.0) for c in cols], EQ, lo)
        bound += q * width * width / 4.0
    out.meta["pwl_bound"] = bound
    out.meta["pwl_segments"] = segments
    return out


def fix_integers_and_resolve(model: ModelIR, incumbent: SolveResult, options: SolveOptions | None = None) -> SolveResult:
    """Fix integer columns at the incumbent and re-solve the continuous restriction.

    The returned result carries duals for every row (tracked ones are exposed
    through :attr:`SolveResult.duals`).
    """
    opts = options or SolveOptions()
    if incumbent.x is None:
        raise IncumbentInfeasibleAfterFix("incumbent has no primal solution")
    fixed = model.copy()
    xi = np.asarray(incumbent.x, dtype=float)
    for j in range(model.n_vars):
        if model.is_int[j]:
            v = float(np.round(xi[j]))
            fixed.lb[j] = fixed.ub[j] = v
            fixed.is_int[j] = False
    fixed.check_convex()
    res = _solve_continuous(fixed, opts)
    if res.status != "optimal":
        raise IncumbentInfeasibleAfterFix(f"continuous restriction is {res.status}")
    inc_obj = incumbent.objective
    if math.isfinite(inc_obj) and res.objective > inc_obj + max(abs(inc_obj), 1.0) * max(opts.gap, 1e-7) * 10:
        res.notes.append(f"resolve objective {res.objective:.9g} above incumbent {inc_obj:.9g}")
        log.warning("fixed-integer resolve objective %.9g exceeds incumbent %.9g", res.objective, inc_obj)
    res.model = model
    return res


def kkt_residuals(model: ModelIR, result: SolveResult) -> dict[str, float]:
    """Largest violations of primal feasibility, stationarity and complementarity.

    Sign convention: row duals are ``d objective / d rhs`` (so ``<=`` rows
    have non-positive duals at a minimum) and reduced costs are
    ``c + 2 q x - A^T y``.
    """
    if result.row_duals is None or result.x is None:
        raise ValueError("result has no duals")
    x, y = result.x, result.row_duals
    A = model.matrix()
    lb, ub = np.array(model.lb), np.array(model.ub)
    grad = np.array(model.obj, dtype=float)
    for j, q in model.quad.items():
        grad[j] += 2.0 * q * x[j]
    d = grad - A.T @ y
    act = A @ x
    lo, hi = model.row_bounds()
    primal = max(
        float(np.max(np.maximum(lo - act, 0.0), initial=0.0)),
        float(np.max(np.maximum(act - hi, 0.0), initial=0.0)),
        float(np.max(np.maximum(lb - x, 0.0), initial=0.0)),
        float(np.max(np.maximum(x - ub, 0.0), initial=0.0)),
    )
    scale = 1.0
    at_lb = np.isfinite(lb) & (np.abs(x - lb) <= 1e-7 * np.maximum(1.0, np.abs(lb)))
    at_ub = np.isfinite(ub) & (np.abs(x - ub) <= 1e-7 * np.maximum(1.0, np.abs(ub)))
    # columns: d >= 0 allowed at lb, d <= 0 at ub, fixed columns free
    viol = np.where(at_lb & at_ub, 0.0, np.where(at_lb, np.maximum(-d, 0.0), np.where(at_ub, np.maximum(d, 0.0), np.abs(d))))
    stationarity = float(np.max(viol, initial=0.0)) / scale
    sense = np.array(model.sense)
    rhs = np.array(model.rhs)
    slack = np.where(sense == EQ, 0.0, np.abs(act - rhs))
    sign_viol = np.where(sense == LE, np.maximum(y, 0.0), np.where(sense == GE, np.maximum(-y, 0.0), 0.0))
    comp = float(np.max(np.abs(y) * slack, initial=0.0))
    return {
        "primal": primal,
        "stationarity": stationarity,
        "complementarity": comp,
        "dual_sign": float(np.max(sign_viol, initial=0.0)),
    }


def write_lp(model: ModelIR, path: str | Path) -> None:
    """Write ``model`` in CPLEX LP format using symbol-derived names."""
    names = [model.name_of(k) for k in model.var_keys]
    A = model.matrix()

    def fmt(v):
        return repr(float(v))

    def linear(cols_vals):
        parts = []
        for c, v in cols_vals:
            parts.append(f"{'-' if v < 0 else '+'} {fmt(abs(v))} {names[c]}")
        return " ".join(parts) if parts else "0 " + (names[0] if names else "")

    lines = ["\\ " + model.summary(), "Minimize", " obj: " + linear([(j, v) for j, v in enumerate(model.obj) if v])]
    if model.quad:
        q = " + ".join(f"{fmt(2.0 * v)} {names[j]} ^ 2" for j, v in sorted(model.quad.items()))
        lines[-1] += f" + [ {q} ] / 2"
    if model.obj_const:
        lines[-1] += f" {'+' if model.obj_const >= 0 else '-'} {fmt(abs(model.obj_const))}"
    lines.append("Subject To")
    for r in range(model.n_rows):
        s, e = A.indptr[r], A.indptr[r + 1]
        body = linear(zip(A.indices[s:e], A.data[s:e]))
        op = {"<=": "<=", ">=": ">=", "==": "="}[model.sense[r]]
        lines.append(f" {model.name_of(model.row_keys[r])}: {body} {op} {fmt(model.rhs[r])}")
    lines.append("Bounds")
    for j, n in enumerate(names):
        lo, hi = model.lb[j], model.ub[j]
        lo_s = "-inf" if lo == -INF else fmt(lo)
        hi_s = "+inf" if hi == INF else fmt(hi)
        if lo == hi:
            lines.append(f" {n} = {fmt(lo)}")
        else:
            lines.append(f" {lo_s} <= {n} <= {hi_s}")
    ints = [names[j] for j in range(model.n_vars) if model.is_int[j]]
    if ints:
        lines.append("Generals")
        for k in range(0, len(ints), 8):
            lines.append(" " + " ".join(ints[k : k + 8]))
    lines.append("End")
    Path(path).write_text("\n".join(lines) + "\n")
