"""Solver unit tests: pinned examples, independent oracles, and invariants."""

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eamod.lp_solver import (
    LinearProgram,
    Status,
    duals_for,
    parse_lp_text,
    solve_lp,
    solve_milp,
    write_lp_text,
)

INF = math.inf


def lp(c, a, senses, b, lo, hi, integer=None, names=None):
    return LinearProgram.from_dense(c, a, senses, b, lo, hi, integer=integer,
                                    names=names)


# -- pinned single-purpose examples -------------------------------------------

def test_min_x_above_three():
    out = solve_lp(lp([1.0], [[1.0]], [">"], [3.0], [0.0], [10.0]))
    assert out.status is Status.Optimal
    assert out.objective == pytest.approx(3.0, abs=1e-9)
    assert out.x[0] == pytest.approx(3.0, abs=1e-9)
    # raising the rhs by one raises the optimum by one
    assert out.duals[0] == pytest.approx(1.0, abs=1e-9)


def test_shared_budget_dual():
    out = solve_lp(lp([-1.0, -1.0], [[1.0, 1.0]], ["<"], [1.0],
                      [0.0, 0.0], [INF, INF]))
    assert out.status is Status.Optimal
    assert out.objective == pytest.approx(-1.0, abs=1e-9)
    assert out.duals[0] == pytest.approx(-1.0, abs=1e-9)


def test_conflicting_row_and_bound_is_infeasible():
    out = solve_lp(lp([0.0], [[1.0]], ["<"], [-1.0], [0.0], [INF]))
    assert out.status is Status.Infeasible
    assert out.objective is None and out.x is None


def test_unbounded_ray():
    out = solve_lp(lp([-1.0], [[1.0]], [">"], [0.0], [0.0], [INF]))
    assert out.status is Status.Unbounded


def test_integer_rounds_down_not_to_nearest():
    out = solve_milp(lp([-1.0], [[2.0]], ["<"], [3.0], [0.0], [5.0],
                        integer=[True]))
    assert out.status is Status.Optimal
    assert out.x[0] == pytest.approx(1.0, abs=1e-9)
    assert out.objective == pytest.approx(-1.0, abs=1e-9)
    assert out.best_bound == pytest.approx(-1.0, abs=1e-9)
    assert out.duals is None


def test_fractional_box_has_no_integer_point():
    prob = LinearProgram(n_vars=1, objective=np.zeros(1),
                         row_starts=np.array([], dtype=int),
                         col_index=np.array([], dtype=int),
                         values=np.array([]), senses=[], rhs=np.array([]),
                         lower=np.array([0.4]), upper=np.array([0.6]),
                         integer=np.array([True]))
    assert solve_milp(prob).status is Status.Infeasible


def test_equality_row_and_negative_bounds():
    out = solve_lp(lp([1.0, 0.0], [[1.0, 1.0]], ["="], [-2.0],
                      [-5.0, -5.0], [5.0, 5.0]))
    assert out.status is Status.Optimal
    assert out.objective == pytest.approx(-5.0)
    assert out.x[0] == pytest.approx(-5.0)
    assert out.x[1] == pytest.approx(3.0)


def test_beale_cycling_instance_terminates_at_optimum():
    # the classic degenerate instance that cycles under naive Dantzig pricing
    c = [-0.75, 150.0, -0.02, 6.0]
    a = [[0.25, -60.0, -0.04, 9.0],
         [0.5, -90.0, -0.02, 3.0],
         [0.0, 0.0, 1.0, 0.0]]
    out = solve_lp(lp(c, a, ["<", "<", "<"], [0.0, 0.0, 1.0],
                      [0.0] * 4, [INF] * 4))
    assert out.status is Status.Optimal
    assert out.objective == pytest.approx(-0.05, abs=1e-9)


def test_fixed_variable_via_equal_bounds():
    out = solve_lp(lp([1.0, 1.0], [[1.0, 1.0]], [">"], [4.0],
                      [2.5, 0.0], [2.5, INF]))
    assert out.status is Status.Optimal
    assert out.x[0] == pytest.approx(2.5)
    assert out.x[1] == pytest.approx(1.5)


def test_free_variable_lp():
    out = solve_lp(lp([1.0], [[1.0]], [">"], [-7.0], [-INF], [INF]))
    assert out.status is Status.Optimal
    assert out.objective == pytest.approx(-7.0)


# -- random instances against independent oracles ------------------------------

def random_lp(rng, n_max=5, m_max=5, integers=False):
    n = int(rng.integers(2, n_max + 1))
    m = int(rng.integers(1, m_max + 1))
    a = rng.integers(-4, 5, size=(m, n)).astype(float)
    c = rng.integers(-5, 6, size=n).astype(float)
    x0 = rng.integers(0, 4, size=n).astype(float)
    senses = [("<", "=", ">")[int(s)] for s in rng.integers(0, 3, size=m)]
    b = a @ x0
    for i, s in enumerate(senses):
        slackness = float(rng.integers(0, 3))
        if s == "<":
            b[i] += slackness
        elif s == ">":
            b[i] -= slackness
    lo = np.zeros(n)
    hi = np.full(n, float(rng.integers(4, 9)))
    integer = np.zeros(n, dtype=bool)
    if integers:
        integer[: int(rng.integers(1, n + 1))] = True
    return lp(c, a, senses, b, lo, hi, integer=integer)


def enumerate_vertices(problem):
    """Brute-force vertex enumeration for small dense LPs with finite bounds."""
    n = problem.n_vars
    a_rows, b_rows = [], []
    dense = np.zeros((problem.n_rows, n))
    dense[problem.row_starts, problem.col_index] = problem.values
    forced = []
    for i, s in enumerate(problem.senses):
        if s == "<":
            a_rows.append(dense[i]); b_rows.append(problem.rhs[i])
        elif s == ">":
            a_rows.append(-dense[i]); b_rows.append(-problem.rhs[i])
        else:
            forced.append((dense[i], problem.rhs[i]))
    for j in range(n):
        e = np.zeros(n); e[j] = 1.0
        a_rows.append(e); b_rows.append(problem.upper[j])
        a_rows.append(-e); b_rows.append(-problem.lower[j])
    a_all = np.array(a_rows); b_all = np.array(b_rows)
    best = None
    eq_a = (np.array([f[0] for f in forced]).reshape(len(forced), n)
            if forced else np.zeros((0, n)))
    eq_b = np.array([f[1] for f in forced])
    for size in range(n + 1):
        for combo in itertools.combinations(range(len(a_all)), size):
            sys_a = np.vstack([eq_a, a_all[list(combo)]])
            sys_b = np.concatenate([eq_b, b_all[list(combo)]])
            x, _, rank, _ = np.linalg.lstsq(sys_a, sys_b, rcond=None)
            if rank < n:
                continue
            if np.all(a_all @ x <= b_all + 1e-7) \
                    and np.all(np.abs(eq_a @ x - eq_b) <= 1e-7):
                val = float(problem.objective @ x)
                if best is None or val < best:
                    best = val
    return best


def test_vertex_enumeration_oracle():
    rng = np.random.default_rng(417)
    checked = 0
    for _ in range(120):
        problem = random_lp(rng, n_max=3, m_max=4)
        out = solve_lp(problem)
        best = enumerate_vertices(problem)
        if out.status is Status.Optimal:
            assert best is not None
            assert out.objective == pytest.approx(best, abs=1e-6)
            checked += 1
        elif out.status is Status.Infeasible:
            assert best is None
    assert checked >= 50


def test_strong_duality_and_residuals_on_random_lps():
    rng = np.random.default_rng(99)
    optimal = 0
    for _ in range(200):
        out = solve_lp(random_lp(rng))
        if out.status is Status.Optimal:
            optimal += 1
            scale = 1.0 + abs(out.objective)
            assert abs(out.objective - out.dual_objective) <= 1e-6 * scale
            assert out.primal_residual <= 1e-6
            assert out.complementarity <= 1e-6 * scale
    assert optimal >= 150


def test_against_scipy_linprog():
    scipy_opt = pytest.importorskip("scipy.optimize")
    rng = np.random.default_rng(2024)
    agreements = 0
    for _ in range(150):
        problem = random_lp(rng)
        dense = np.zeros((problem.n_rows, problem.n_vars))
        dense[problem.row_starts, problem.col_index] = problem.values
        a_ub, b_ub, a_eq, b_eq = [], [], [], []
        for i, s in enumerate(problem.senses):
            if s == "<":
                a_ub.append(dense[i]); b_ub.append(problem.rhs[i])
            elif s == ">":
                a_ub.append(-dense[i]); b_ub.append(-problem.rhs[i])
            else:
                a_eq.append(dense[i]); b_eq.append(problem.rhs[i])
        ref = scipy_opt.linprog(
            problem.objective,
            A_ub=np.array(a_ub) if a_ub else None,
            b_ub=np.array(b_ub) if b_ub else None,
            A_eq=np.array(a_eq) if a_eq else None,
            b_eq=np.array(b_eq) if b_eq else None,
            bounds=list(zip(problem.lower, problem.upper)), method="highs")
        out = solve_lp(problem)
        if ref.status == 0:
            assert out.status is Status.Optimal
            assert out.objective == pytest.approx(ref.fun, abs=1e-6, rel=1e-6)
            agreements += 1
        elif ref.status == 2:
            assert out.status is Status.Infeasible
    assert agreements >= 100


def test_duals_match_finite_difference_sensitivities():
    rng = np.random.default_rng(7)
    checked = 0
    for _ in range(80):
        problem = random_lp(rng, n_max=4, m_max=3)
        out = solve_lp(problem)
        if out.status is not Status.Optimal:
            continue
        h = 1e-5
        for i in range(problem.n_rows):
            up = problem.rhs.copy(); up[i] += h
            dn = problem.rhs.copy(); dn[i] -= h
            p_up = LinearProgram(problem.n_vars, problem.objective,
                                 problem.row_starts, problem.col_index,
                                 problem.values, problem.senses, up,
                                 problem.lower, problem.upper, problem.integer)
            p_dn = LinearProgram(problem.n_vars, problem.objective,
                                 problem.row_starts, problem.col_index,
                                 problem.values, problem.senses, dn,
                                 problem.lower, problem.upper, problem.integer)
            o_up, o_dn = solve_lp(p_up), solve_lp(p_dn)
            if o_up.status is not Status.Optimal or o_dn.status is not Status.Optimal:
                continue
            fwd = (o_up.objective - out.objective) / h
            bwd = (out.objective - o_dn.objective) / h
            if abs(fwd - bwd) > 1e-4:
                continue  # kink in the value function: dual not unique
            central = (o_up.objective - o_dn.objective) / (2 * h)
            assert out.duals[i] == pytest.approx(central, abs=1e-5)
            checked += 1
    assert checked >= 40


def brute_force_milp(problem):
    dense = np.zeros((problem.n_rows, problem.n_vars))
    dense[problem.row_starts, problem.col_index] = problem.values
    cont = ~problem.integer
    assert not np.any(cont), "oracle assumes pure integer"
    ranges = [range(int(problem.lower[j]), int(problem.upper[j]) + 1)
              for j in range(problem.n_vars)]
    best = None
    for point in itertools.product(*ranges):
        x = np.array(point, dtype=float)
        ok = True
        for i, s in enumerate(problem.senses):
            lhs = dense[i] @ x
            if s == "<" and lhs > problem.rhs[i] + 1e-9:
                ok = False
            elif s == ">" and lhs < problem.rhs[i] - 1e-9:
                ok = False
            elif s == "=" and abs(lhs - problem.rhs[i]) > 1e-9:
                ok = False
        if ok:
            val = float(problem.objective @ x)
            if best is None or val < best:
                best = val
    return best


def test_branch_and_bound_matches_enumeration():
    rng = np.random.default_rng(11)
    solved = 0
    for _ in range(60):
        n = int(rng.integers(2, 5))
        m = int(rng.integers(1, 4))
        a = rng.integers(-3, 4, size=(m, n)).astype(float)
        c = rng.integers(-5, 6, size=n).astype(float)
        x0 = rng.integers(0, 3, size=n).astype(float)
        senses = [("<", ">")[int(s)] for s in rng.integers(0, 2, size=m)]
        b = a @ x0 + np.array([1.0 if s == "<" else -1.0 for s in senses]) \
            * rng.integers(0, 2, size=m)
        problem = lp(c, a, senses, b, np.zeros(n), np.full(n, 3.0),
                     integer=[True] * n)
        out = solve_milp(problem)
        best = brute_force_milp(problem)
        if best is None:
            assert out.status is Status.Infeasible
        else:
            assert out.status is Status.Optimal
            assert out.objective == pytest.approx(best, abs=1e-6)
            solved += 1
        if out.bound_history:
            diffs = np.diff(out.bound_history)
            assert np.all(diffs >= -1e-9)  # best-first: bounds never regress
        root = solve_lp(problem)
        if root.status is Status.Optimal and out.status is Status.Optimal:
            assert out.objective >= root.objective - 1e-9
    assert solved >= 30


def test_mixed_integer_keeps_continuous_exact():
    # one integer, one continuous: x int, y cont, max x + 2y, y <= 2.5 - x
    out = solve_milp(lp([-1.0, -2.0], [[1.0, 1.0]], ["<"], [2.5],
                        [0.0, 0.0], [10.0, 10.0], integer=[True, False]))
    assert out.status is Status.Optimal
    assert out.x[0] == pytest.approx(0.0, abs=1e-9)
    assert out.x[1] == pytest.approx(2.5, abs=1e-9)
    assert out.objective == pytest.approx(-5.0, abs=1e-9)


def test_node_limit_reports_iteration_limit():
    rng = np.random.default_rng(5)
    n = 8
    c = -np.ones(n)
    a = rng.integers(2, 7, size=(1, n)).astype(float)
    b = [float(a.sum() * 1.5)]
    problem = lp(c, a, ["<"], b, np.zeros(n), np.full(n, 3.0),
                 integer=[True] * n)
    out = solve_milp(problem, node_limit=1)
    assert out.status in (Status.Optimal, Status.IterationLimit)
    full = solve_milp(problem)
    assert full.status is Status.Optimal
    if out.objective is not None:
        assert out.objective >= full.objective - 1e-9


def test_duals_for_reads_fixing_rows():
    class Linked:
        pass

    problem = lp([1.0, 3.0], [[1.0, 0.0], [1.0, 1.0]], ["=", ">"],
                 [2.0, 5.0], [0.0, 0.0], [10.0, 10.0])
    linked = Linked()
    linked.linking_rows = {("fleet", 0): 0}
    out = solve_lp(problem)
    assert out.status is Status.Optimal
    pi = duals_for(linked, [("fleet", 0)], out)
    # with x fixed at 2, each unit of xbar substitutes cost-3 service: pi = 1-3
    assert pi[("fleet", 0)] == pytest.approx(-2.0, abs=1e-9)


# -- interchange format ---------------------------------------------------------

def test_lp_text_round_trip_fixed():
    problem = lp([1.0, -2.0, 0.5], [[1.0, 3.0, 0.0], [0.0, 1.0, -1.0]],
                 [">", "<"], [3.0, 4.0], [0.0, -INF, 1.0], [10.0, INF, 1.0],
                 integer=[True, False, False],
                 names=["pax_0_1", "reb_1_0", "charge_0"])
    text = write_lp_text(problem)
    parsed = parse_lp_text(text)
    assert parsed.names == problem.names
    a, b = solve_lp(problem), solve_lp(parsed)
    assert a.objective == pytest.approx(b.objective, abs=1e-9)
    assert list(parsed.integer) == list(problem.integer)


@settings(deadline=None, max_examples=40, derandomize=True)
@given(st.integers(0, 10 ** 6))
def test_lp_text_round_trip_random(seed):
    rng = np.random.default_rng(seed)
    problem = random_lp(rng, integers=bool(seed % 2))
    text = write_lp_text(problem)
    parsed = parse_lp_text(text)
    a, b = solve_lp(problem), solve_lp(parsed)
    assert a.status is b.status
    if a.status is Status.Optimal:
        assert a.objective == pytest.approx(b.objective, abs=1e-7)


@settings(deadline=None, max_examples=60, derandomize=True)
@given(st.integers(0, 10 ** 6))
def test_duality_gap_property(seed):
    rng = np.random.default_rng(seed)
    out = solve_lp(random_lp(rng))
    if out.status is Status.Optimal:
        assert abs(out.objective - out.dual_objective) \
            <= 1e-6 * (1.0 + abs(out.objective))


def test_single_use_and_concurrent_instances():
    import concurrent.futures

    problems = [lp([1.0], [[1.0]], [">"], [float(k)], [0.0], [100.0])
                for k in range(12)]
    with concurrent.futures.ThreadPoolExecutor(max_workers=4) as pool:
        outs = list(pool.map(solve_lp, problems))
    for k, out in enumerate(outs):
        assert out.status is Status.Optimal
        assert out.objective == pytest.approx(float(k))
