from fractions import Fraction

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from pricinglab.lp import LinearProgram, solve_lp


def highs(lp: LinearProgram):
    """Independent reference solve with scipy's HiGHS."""
    c = -np.asarray(lp.c, float) if lp.maximize else np.asarray(lp.c, float)
    A = np.asarray(lp.A, float).reshape(len(lp.b), lp.n)
    b = np.asarray(lp.b, float)
    ub_rows, ub_rhs, eq_rows, eq_rhs = [], [], [], []
    for row, rhs, s in zip(A, b, lp.senses):
        if s == "<=":
            ub_rows.append(row); ub_rhs.append(rhs)
        elif s == ">=":
            ub_rows.append(-row); ub_rhs.append(-rhs)
        else:
            eq_rows.append(row); eq_rhs.append(rhs)
    bounds = [(None if l == float("-inf") else l, None if u == float("inf") else u)
              for l, u in zip(lp.lb, lp.ub)]
    r = linprog(c, A_ub=ub_rows or None, b_ub=ub_rhs or None, A_eq=eq_rows or None,
                b_eq=eq_rhs or None, bounds=bounds, method="highs")
    status = {0: "optimal", 2: "infeasible", 3: "unbounded"}[r.status]
    obj = None if status != "optimal" else (-r.fun if lp.maximize else r.fun)
    return status, obj


def feasible(lp, x, tol=1e-9):
    A = np.asarray(lp.A, float).reshape(len(lp.b), lp.n)
    ax = A @ x
    for v, rhs, s in zip(ax, lp.b, lp.senses):
        if s == "<=" and v > rhs + tol or s == ">=" and v < rhs - tol or s == "=" and abs(v - rhs) > tol:
            return False
    return bool(np.all(x >= np.asarray(lp.lb, float) - tol) and np.all(x <= np.asarray(lp.ub, float) + tol))


def exactly_feasible(lp, x):
    for row, rhs, s in zip(lp.A, lp.b, lp.senses):
        v = sum(a * xi for a, xi in zip(row, x))
        if s == "<=" and v > rhs or s == ">=" and v < rhs or s == "=" and v != rhs:
            return False
    return all(xi >= 0 and (u == float("inf") or xi <= u) for xi, u in zip(x, lp.ub))


# ---------------------------------------------------------------- small examples

def test_single_variable_box():
    r = solve_lp(LinearProgram([1], [[1]], [1]))
    assert r.status == "optimal" and r.x[0] == pytest.approx(1.0) and r.certified


def test_simplex_objective():
    r = solve_lp(LinearProgram([1, 1], [[1, 1]], [1]))
    assert r.status == "optimal" and r.objective == pytest.approx(1.0)
    assert r.gap <= 1e-7


def test_infeasible():
    r = solve_lp(LinearProgram([1], [[1], [1]], [2, 1], [">=", "<="]))
    assert r.status == "infeasible"


def test_unbounded():
    r = solve_lp(LinearProgram([1, 0], [[1, -1]], [1]))
    assert r.status == "unbounded"


def test_minimize_free_and_bounded_variables():
    # minimize x - y with x free, -2 <= y <= 3, x + y >= 1, x >= -5
    lp = LinearProgram([1, -1], [[1, 1], [1, 0]], [1, -5], [">=", ">="],
                       lb=[float("-inf"), -2], ub=[float("inf"), 3], maximize=False)
    r = solve_lp(lp)
    status, obj = highs(lp)
    assert r.status == status == "optimal"
    assert r.objective == pytest.approx(obj, abs=1e-9)


def test_equality_rows_and_exact_mode():
    lp = LinearProgram([Fraction(3), Fraction(2)], [[1, 1], [1, -1]], [Fraction(4), Fraction(1, 3)],
                       ["=", "<="])
    r = solve_lp(lp, exact=True)
    assert r.status == "optimal"
    assert r.objective == Fraction(3) * Fraction(13, 6) + 2 * Fraction(11, 6)
    assert all(isinstance(v, Fraction) for v in r.x)
    assert r.gap == 0


def test_bad_shapes_rejected():
    with pytest.raises(ValueError):
        LinearProgram([1, 2], [[1]], [1])
    with pytest.raises(ValueError):
        LinearProgram([1], [[1]], [1], ["<"])


def test_degenerate_cycling_example():
    # Beale's classic cycling example for Dantzig's rule without anti-cycling
    c = [0.75, -150, 0.02, -6]
    A = [[0.25, -60, -0.04, 9], [0.5, -90, -0.02, 3], [0, 0, 1, 0]]
    b = [0, 0, 1]
    r = solve_lp(LinearProgram(c, A, b))
    assert r.status == "optimal" and r.objective == pytest.approx(0.05, abs=1e-12)


def test_iteration_cap_is_reported():
    rng = np.random.default_rng(0)
    A = rng.random((30, 30))
    r = solve_lp(LinearProgram(np.ones(30), A, np.ones(30)), max_iter=2)
    assert r.status == "iteration_limit" and r.message


# ---------------------------------------------------------------- random LPs vs HiGHS

@st.composite
def random_lp(draw):
    m = draw(st.integers(1, 6))
    n = draw(st.integers(1, 6))
    ints = st.integers(-5, 5)
    A = [[draw(ints) for _ in range(n)] for _ in range(m)]
    b = [draw(ints) for _ in range(m)]
    c = [draw(ints) for _ in range(n)]
    senses = [draw(st.sampled_from(["<=", "=", ">="])) for _ in range(m)]
    ub = [draw(st.sampled_from([float("inf"), 3])) for _ in range(n)]
    return LinearProgram(c, A, b, senses, ub=ub, maximize=draw(st.booleans()))


@given(random_lp())
@settings(max_examples=300, deadline=None, suppress_health_check=[HealthCheck.too_slow])
def test_random_lps_agree_with_highs(lp):
    r = solve_lp(lp)
    status, obj = highs(lp)
    assert r.status == status
    if status == "optimal":
        assert r.objective == pytest.approx(obj, abs=1e-7)
        assert feasible(lp, np.asarray(r.x, float))
        assert r.certified and r.gap <= 1e-7


@given(random_lp())
@settings(max_examples=60, deadline=None)
def test_exact_mode_agrees_with_float(lp):
    lp_exact = LinearProgram([Fraction(v) for v in lp.c], [[Fraction(v) for v in row] for row in lp.A],
                             [Fraction(v) for v in lp.b], lp.senses,
                             ub=[u if u == float("inf") else Fraction(u) for u in lp.ub],
                             maximize=lp.maximize)
    a = solve_lp(lp)
    e = solve_lp(lp_exact, exact=True)
    assert a.status == e.status
    if e.status == "optimal":
        assert float(e.objective) == pytest.approx(a.objective, abs=1e-9)
        assert exactly_feasible(lp_exact, e.x)


def test_stackelberg_candidate_lps_agree_with_highs():
    from pricinglab.equilibrium import _commitment_lp, _leader_matrices
    from pricinglab.stage_game import MarketModel
    L, F = _leader_matrices(MarketModel.bertrand(30), False)
    for j in range(30):
        lp = _commitment_lp(L, F, j, 30)
        r = solve_lp(lp)
        status, obj = highs(lp)
        assert r.status == status
        if status == "optimal":
            assert r.objective == pytest.approx(obj, abs=1e-8)
            assert r.certified
