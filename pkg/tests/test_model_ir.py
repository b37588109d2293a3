import itertools
import math

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from coopt.model_ir import (
    INF,
    BackendUnavailable,
    IncumbentInfeasibleAfterFix,
    ModelIR,
    NonConvexModel,
    SolveOptions,
    UnboundedQuadraticVariable,
    fix_integers_and_resolve,
    kkt_residuals,
    piecewise_linearize,
    solve,
    write_lp,
)

BACKENDS = ["highs", "scip"]


def test_one_variable_lp():
    m = ModelIR("lp1")
    x = m.add_var(("x",), -INF, INF, obj=1.0)
    m.add_row(("floor",), [(x, 1.0)], ">=", 3.0, tracked=True)
    r = solve(m)
    assert r.ok and r.objective == pytest.approx(3.0, abs=1e-9)
    assert r.dual(("floor",)) == pytest.approx(1.0, abs=1e-9)


@pytest.mark.parametrize("qp_solver", ["clarabel", "highs"])
def test_one_variable_qp(qp_solver):
    m = ModelIR("qp1")
    x = m.add_var(("x",), 0.0, 4.0, obj=-2.0)
    m.add_quad(x, 1.0)
    r = solve(m, SolveOptions(qp_solver=qp_solver))
    assert r.ok
    assert r[("x",)] == pytest.approx(1.0, abs=1e-7)
    assert r.objective == pytest.approx(-1.0, abs=1e-9)


def test_single_chord_slope():
    m = ModelIR()
    x = m.add_var(("x",), 0.0, 2.0)
    m.add_quad(x, 1.0)
    lin = piecewise_linearize(m, 1)
    assert lin.obj[lin.var(("pwl", x, 0))] == pytest.approx(2.0)
    assert not lin.quad


def _chord_value(lo, hi, K, v):
    """Piecewise-linear interpolation of v**2 on K equal pieces (independent of the builder)."""
    knots = np.linspace(lo, hi, K + 1)
    return float(np.interp(v, knots, knots**2))


def test_chord_bound_closed_form():
    m = ModelIR()
    x = m.add_var(("x",), 0.0, 10.0)
    m.add_quad(x, 1.0)
    lin = piecewise_linearize(m, 8)
    assert lin.meta["pwl_bound"] == pytest.approx(100 / 256)
    grid = np.linspace(0, 10, 20001)
    err = max(_chord_value(0, 10, 8, v) - v * v for v in grid)
    assert err <= 100 / 256 + 1e-12
    assert err == pytest.approx(100 / 256, rel=1e-3)


def _micro_quadratic():
    """Two binaries choosing which of two plants runs; quadratic fuel cost."""
    m = ModelIR("microq")
    u1 = m.add_var(("u", 1), binary=True, obj=3.0)
    u2 = m.add_var(("u", 2), binary=True, obj=1.0)
    p1 = m.add_var(("p", 1), 0.0, 10.0, obj=1.0)
    p2 = m.add_var(("p", 2), 0.0, 10.0, obj=2.0)
    m.add_quad(p1, 0.3)
    m.add_quad(p2, 0.1)
    m.add_row(("cap", 1), [(p1, 1.0), (u1, -10.0)], "<=", 0.0)
    m.add_row(("cap", 2), [(p2, 1.0), (u2, -10.0)], "<=", 0.0)
    m.add_row(("demand",), [(p1, 1.0), (p2, 1.0)], "==", 7.0, tracked=True)
    return m


def _micro_quadratic_oracle():
    best = math.inf
    for u1, u2 in itertools.product([0, 1], repeat=2):
        for k in range(0, 70001):
            p1 = k * 1e-4
            p2 = 7.0 - p1
            if p1 > 10 * u1 + 1e-12 or p2 > 10 * u2 + 1e-12 or p2 < 0:
                continue
            best = min(best, 3 * u1 + u2 + p1 + 0.3 * p1**2 + 2 * p2 + 0.1 * p2**2)
    return best


def test_micro_quadratic_native_vs_linearized():
    m = _micro_quadratic()
    ref = _micro_quadratic_oracle()
    native = solve(m, SolveOptions(backend="scip"))
    assert native.objective == pytest.approx(ref, abs=1e-6)
    lin = piecewise_linearize(m, 64)
    approx = solve(lin, SolveOptions(backend="highs"))
    bound = lin.meta["pwl_bound"]
    assert native.objective - 1e-9 <= approx.objective <= native.objective + bound + 1e-9
    polished = solve(m, SolveOptions(backend="highs"))
    assert polished.objective == pytest.approx(ref, abs=1e-6)


def test_fix_integers_noop_without_binaries():
    m = ModelIR()
    x = m.add_var(("x",), 0.0, 4.0, obj=-2.0)
    m.add_quad(x, 1.0)
    a = solve(m)
    b = fix_integers_and_resolve(m, a)
    assert b.objective == pytest.approx(a.objective, abs=1e-12)
    assert np.allclose(a.x, b.x, atol=1e-12)


def test_fix_integers_then_exclude_incumbent():
    m = _micro_quadratic()
    inc = solve(m)
    assert inc[("u", 2)] == pytest.approx(1.0)
    bad = m.copy()
    bad.ub[bad.var(("p", 2))] = 0.0  # with u fixed, demand can no longer be met
    bad.ub[bad.var(("p", 1))] = 0.0
    with pytest.raises(IncumbentInfeasibleAfterFix):
        fix_integers_and_resolve(bad, inc)


def test_marginal_cost_dual_after_fix():
    m = _micro_quadratic()
    inc = solve(m)
    fixed = fix_integers_and_resolve(m, inc)
    lam = fixed.dual(("demand",))
    p1, p2 = fixed[("p", 1)], fixed[("p", 2)]
    # every running, unconstrained plant sits at marginal cost = price
    if 1e-6 < p2 < 10 - 1e-6:
        assert lam == pytest.approx(2 + 0.2 * p2, abs=1e-6)
    if 1e-6 < p1 < 10 - 1e-6:
        assert lam == pytest.approx(1 + 0.6 * p1, abs=1e-6)


def _random_lp(rng, n=5, m=4):
    """Feasible bounded LP built around a known interior point."""
    A = rng.integers(-3, 4, size=(m, n)).astype(float)
    x0 = rng.uniform(0, 2, n)
    rhs = A @ x0 + rng.uniform(0.1, 1.0, m)
    c = rng.integers(-5, 6, size=n).astype(float)
    return A, rhs, c


@pytest.mark.parametrize("seed", range(6))
def test_lp_matches_scipy(seed):
    rng = np.random.default_rng(seed)
    A, rhs, c = _random_lp(rng)
    m = ModelIR()
    cols = [m.add_var(("x", j), 0.0, 3.0, obj=c[j]) for j in range(len(c))]
    for r in range(A.shape[0]):
        m.add_row(("r", r), list(zip(cols, A[r])), "<=", rhs[r], tracked=True)
    ours = solve(m)
    ref = linprog(c, A_ub=A, b_ub=rhs, bounds=[(0, 3)] * len(c), method="highs")
    assert ours.objective == pytest.approx(ref.fun, abs=1e-8)
    # row duals agree with one-sided finite differences where the basis is stable
    for r in range(A.shape[0]):
        eps = 1e-4
        b2 = rhs.copy()
        b2[r] += eps
        bumped = linprog(c, A_ub=A, b_ub=b2, bounds=[(0, 3)] * len(c), method="highs").fun
        b3 = rhs.copy()
        b3[r] -= eps
        dropped = linprog(c, A_ub=A, b_ub=b3, bounds=[(0, 3)] * len(c), method="highs").fun
        fwd, bwd = (bumped - ref.fun) / eps, (ref.fun - dropped) / eps
        if abs(fwd - bwd) < 1e-6:
            assert ours.dual(("r", r)) == pytest.approx(fwd, abs=1e-5)
    kkt = kkt_residuals(m, ours)
    assert max(kkt.values()) <= 1e-6


def _brute_milp(A, rhs, c_bin, c_cont, ub_cont):
    """Enumerate the binaries and solve each continuous LP with scipy."""
    nb = len(c_bin)
    best = math.inf
    for bits in itertools.product([0, 1], repeat=nb):
        bits = np.array(bits, dtype=float)
        res = linprog(c_cont, A_ub=A[:, nb:], b_ub=rhs - A[:, :nb] @ bits, bounds=[(0, ub_cont)] * len(c_cont),
                      method="highs")
        if res.status == 0:
            best = min(best, float(c_bin @ bits + res.fun))
    return best


@settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(seed=st.integers(0, 10_000), backend=st.sampled_from(BACKENDS))
def test_milp_matches_enumeration(seed, backend):
    rng = np.random.default_rng(seed)
    nb, nc, nr = 3, 3, 4
    A = rng.integers(-4, 5, size=(nr, nb + nc)).astype(float)
    rhs = rng.integers(0, 8, size=nr).astype(float)
    c = rng.integers(-6, 7, size=nb + nc).astype(float)
    m = ModelIR()
    cols = [m.add_var(("b", j), binary=True, obj=c[j]) for j in range(nb)]
    cols += [m.add_var(("c", j), 0.0, 2.0, obj=c[nb + j]) for j in range(nc)]
    for r in range(nr):
        m.add_row(("r", r), list(zip(cols, A[r])), "<=", rhs[r])
    ref = _brute_milp(A, rhs, c[:nb], c[nb:], 2.0)
    res = solve(m, SolveOptions(backend=backend))
    if math.isinf(ref):
        assert res.status == "infeasible"
    else:
        assert res.ok and res.objective == pytest.approx(ref, abs=1e-6)
        fixed = fix_integers_and_resolve(m, res)
        assert abs(fixed.objective - res.objective) <= 1e-6 * max(1.0, abs(res.objective))


@settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(seed=st.integers(0, 10_000))
def test_miqp_fix_resolve_preserves_objective(seed):
    rng = np.random.default_rng(seed)
    m = ModelIR()
    u = [m.add_var(("u", k), binary=True, obj=float(rng.uniform(0, 5))) for k in range(3)]
    p = [m.add_var(("p", k), 0.0, 10.0, obj=float(rng.uniform(0, 3))) for k in range(3)]
    for k in range(3):
        m.add_quad(p[k], float(rng.uniform(0.01, 0.5)))
        m.add_row(("cap", k), [(p[k], 1.0), (u[k], -10.0)], "<=", 0.0)
    m.add_row(("dem",), [(pk, 1.0) for pk in p], "==", float(rng.uniform(1, 25)), tracked=True)
    for backend in BACKENDS:
        res = solve(m, SolveOptions(backend=backend))
        fixed = fix_integers_and_resolve(m, res)
        assert abs(fixed.objective - res.objective) <= 1e-6 * max(1.0, abs(res.objective))
        # complementary slackness of the continuous restriction
        fm = m.copy()
        for j in u:
            fm.lb[j] = fm.ub[j] = round(res.x[j])
            fm.is_int[j] = False
        assert kkt_residuals(fm, fixed)["complementarity"] <= 1e-6


def test_backends_agree_on_micro_quadratic():
    m = _micro_quadratic()
    a = solve(m, SolveOptions(backend="highs"))
    b = solve(m, SolveOptions(backend="scip"))
    assert a.objective == pytest.approx(b.objective, abs=1e-6)


def test_env_var_selects_backend(monkeypatch):
    monkeypatch.setenv("COOPT_SOLVER", "scip")
    assert SolveOptions().resolved_backend() == "scip"
    monkeypatch.setenv("COOPT_SOLVER", "gurobi")
    with pytest.raises(BackendUnavailable):
        SolveOptions().resolved_backend()


def test_status_codes():
    m = ModelIR()
    x = m.add_var(("x",), 0.0, 1.0, obj=1.0)
    m.add_row(("r",), [(x, 1.0)], ">=", 2.0)
    assert solve(m).status == "infeasible"
    u = ModelIR()
    y = u.add_var(("y",), -INF, INF, obj=1.0)
    u.add_row(("r",), [(y, 1.0)], "<=", 0.0)
    assert solve(u).status in ("unbounded", "infeasible")


def test_nonconvex_rejected():
    m = ModelIR()
    x = m.add_var(("x",), 0.0, 1.0)
    m.add_quad(x, -1.0)
    with pytest.raises(NonConvexModel):
        solve(m)


def test_unbounded_quadratic_cannot_be_linearized():
    m = ModelIR()
    x = m.add_var(("x",), 0.0, INF)
    m.add_quad(x, 1.0)
    with pytest.raises(UnboundedQuadraticVariable):
        piecewise_linearize(m, 4)


def test_badly_scaled_qp_on_both_qp_paths():
    # DC-flow-like coefficients in the thousands next to unit costs
    m = ModelIR()
    th = m.add_var(("th",), -1.0, 1.0)
    f = m.add_var(("f",), -5.0, 5.0)
    g = m.add_var(("g",), 0.0, 10.0, obj=1.0)
    m.add_quad(g, 0.1)
    m.add_row(("law",), [(f, 1.0), (th, -2000.0)], "==", 0.0)
    m.add_row(("bal",), [(g, 1.0), (f, -1.0)], "==", 0.0, tracked=True)
    m.add_row(("need",), [(f, 1.0)], ">=", 3.0)
    a = solve(m, SolveOptions(qp_solver="clarabel"))
    b = solve(m, SolveOptions(qp_solver="highs"))
    assert a.objective == pytest.approx(3 + 0.9, abs=1e-8)
    assert b.objective == pytest.approx(3 + 0.9, abs=1e-8)
    assert a.dual(("bal",)) == pytest.approx(1.6, abs=1e-6)
    assert b.dual(("bal",)) == pytest.approx(1.6, abs=1e-6)


def test_duplicate_keys_and_bad_rows():
    m = ModelIR()
    m.add_var(("x",))
    with pytest.raises(KeyError):
        m.add_var(("x",))
    with pytest.raises(IndexError):
        m.add_row(("r",), [(5, 1.0)], "<=", 0.0)
    with pytest.raises(ValueError):
        m.add_row(("r",), [(0, 1.0)], "<>", 0.0)


def test_write_lp(tmp_path):
    m = _micro_quadratic()
    m.declare("u", "k")
    p = tmp_path / "m.lp"
    write_lp(m, p)
    text = p.read_text()
    assert "Minimize" in text and "Subject To" in text and "End" in text
    assert "u_k2" in text  # names are 1-based
