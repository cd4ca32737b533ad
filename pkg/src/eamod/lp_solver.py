"""Bounded-variable revised simplex with a best-first branch-and-bound layer.

The solver works on the equality form A x + S s = b obtained by adding one
slack per inequality row; variable bounds are handled natively (nonbasic
variables rest at a bound, never expanded into rows).  Phase 1 minimizes the
sum of artificial variables (big-M free); slacks whose sign already fits are
crashed into the starting basis so artificials only cover equality rows and
misfit inequalities.  Pricing is Dantzig with a switch to Bland's rule after
2*rows consecutive degenerate pivots, which guarantees termination.
"""

from __future__ import annotations

import enum
import heapq
import math
import re
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidParameter

FEAS_TOL = 1e-7
OPT_TOL = 1e-7
PIV_TOL = 1e-8
INT_TOL = 1e-6
REFACTOR_EVERY = 240

LESS, EQUAL, GREATER = "<", "=", ">"
_SENSES = (LESS, EQUAL, GREATER)


class Status(enum.Enum):
    Optimal = "Optimal"
    Infeasible = "Infeasible"
    Unbounded = "Unbounded"
    IterationLimit = "IterationLimit"


@dataclass
class LinearProgram:
    """Sparse LP/MILP in triplet form, minimization sense.

    Rows are ``A x (sense) rhs`` with senses in {'<', '=', '>'}; bounds may be
    +-inf.  ``integer`` flags columns the branch-and-bound layer must make
    integral.
    """

    n_vars: int
    objective: np.ndarray
    row_starts: np.ndarray  # COO triplets
    col_index: np.ndarray
    values: np.ndarray
    senses: list
    rhs: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    integer: np.ndarray
    names: Optional[list] = None
    row_names: Optional[list] = None

    def __post_init__(self) -> None:
        self.objective = np.asarray(self.objective, dtype=float)
        self.row_starts = np.asarray(self.row_starts, dtype=np.int64)
        self.col_index = np.asarray(self.col_index, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=float)
        self.rhs = np.asarray(self.rhs, dtype=float)
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        self.integer = np.asarray(self.integer, dtype=bool)
        if not (len(self.objective) == len(self.lower) == len(self.upper)
                == len(self.integer) == self.n_vars):
            raise InvalidParameter("objective/bounds/integer lengths must equal n_vars")
        if len(self.senses) != len(self.rhs):
            raise InvalidParameter("senses and rhs lengths differ")
        for s in self.senses:
            if s not in _SENSES:
                raise InvalidParameter(f"row sense must be one of {_SENSES}, got {s!r}")
        if not (len(self.row_starts) == len(self.col_index) == len(self.values)):
            raise InvalidParameter("triplet arrays must have equal lengths")
        if np.any(self.lower > self.upper + 1e-12):
            raise InvalidParameter("lower bound exceeds upper bound")
        for arr, label in ((self.values, "matrix values"), (self.rhs, "rhs"),
                           (self.objective, "objective")):
            if len(arr) and not np.all(np.isfinite(arr)):
                raise InvalidParameter(f"{label} must be finite")

    @property
    def n_rows(self) -> int:
        return len(self.rhs)

    def name_of(self, j: int) -> str:
        if self.names is not None:
            return str(self.names[j])
        return f"x{j}"

    @classmethod
    def from_dense(cls, c, a, senses, rhs, lower, upper, integer=None, names=None):
        a = np.asarray(a, dtype=float)
        rows, cols = np.nonzero(a)
        n = len(c)
        if integer is None:
            integer = np.zeros(n, dtype=bool)
        return cls(n_vars=n, objective=np.asarray(c, dtype=float),
                   row_starts=rows, col_index=cols, values=a[rows, cols],
                   senses=list(senses), rhs=np.asarray(rhs, dtype=float),
                   lower=np.asarray(lower, dtype=float),
                   upper=np.asarray(upper, dtype=float),
                   integer=np.asarray(integer, dtype=bool), names=names)


@dataclass
class SolveOutcome:
    status: Status
    objective: Optional[float]
    x: Optional[np.ndarray]
    duals: Optional[np.ndarray]
    reduced_costs: Optional[np.ndarray]
    iterations: int
    wall_time: float
    dual_objective: Optional[float] = None
    primal_residual: float = 0.0
    complementarity: float = 0.0
    best_bound: Optional[float] = None
    nodes: int = 0
    bound_history: Optional[list] = None
    message: str = ""
    _names: Optional[list] = None

    @property
    def primal(self) -> dict:
        """Value map keyed by variable name."""
        if self.x is None:
            return {}
        if self._names is None:
            return {f"x{j}": float(v) for j, v in enumerate(self.x)}
        return {self._names[j]: float(v) for j, v in enumerate(self.x)}


class _Csc:
    """Minimal CSC matrix with the three products the simplex needs."""

    def __init__(self, n_rows: int, n_cols: int, rows, cols, vals):
        order = np.lexsort((rows, cols))
        rows = np.asarray(rows)[order]
        cols = np.asarray(cols)[order]
        vals = np.asarray(vals, dtype=float)[order]
        # combine duplicate (row, col) entries
        if len(rows):
            key_change = np.empty(len(rows), dtype=bool)
            key_change[0] = True
            key_change[1:] = (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])
            idx = np.flatnonzero(key_change)
            vals = np.add.reduceat(vals, idx)
            rows, cols = rows[idx], cols[idx]
        self.n_rows, self.n_cols = n_rows, n_cols
        self.indices = rows
        self.data = vals
        self.indptr = np.zeros(n_cols + 1, dtype=np.int64)
        np.add.at(self.indptr, cols + 1, 1)
        np.cumsum(self.indptr, out=self.indptr)

    def col(self, j: int):
        lo, hi = self.indptr[j], self.indptr[j + 1]
        return self.indices[lo:hi], self.data[lo:hi]

    def t_dot(self, y: np.ndarray) -> np.ndarray:
        """A^T y as a dense vector."""
        out = np.zeros(self.n_cols)
        if len(self.data) == 0:
            return out
        prods = self.data * y[self.indices]
        starts = self.indptr[:-1]
        nonempty = self.indptr[1:] > starts
        safe = np.minimum(starts, len(prods) - 1)
        sums = np.add.reduceat(prods, safe)
        out[nonempty] = sums[nonempty]
        return out

    def dot(self, x: np.ndarray) -> np.ndarray:
        """A x as a dense vector."""
        if len(self.data) == 0:
            return np.zeros(self.n_rows)
        col_of = np.repeat(np.arange(self.n_cols), np.diff(self.indptr))
        return np.bincount(self.indices, weights=self.data * x[col_of],
                           minlength=self.n_rows)

    def dense_cols(self, cols) -> np.ndarray:
        out = np.zeros((self.n_rows, len(cols)))
        for k, j in enumerate(cols):
            idx, val = self.col(j)
            out[idx, k] = val
        return out


_BASIC, _NB_LOWER, _NB_UPPER, _NB_FREE = 0, 1, 2, 3


class _Simplex:
    """One single-use revised-simplex run over the equality form."""

    def __init__(self, problem: LinearProgram, lower: np.ndarray, upper: np.ndarray,
                 max_iterations: Optional[int] = None):
        self.prob = problem
        m = problem.n_rows
        n = problem.n_vars
        self.m, self.n_struct = m, n

        rows = [problem.row_starts]
        cols = [problem.col_index]
        vals = [problem.values]
        slack_of_row = {}
        lo = [lower]
        hi = [upper]
        next_col = n
        for i, sense in enumerate(problem.senses):
            if sense == EQUAL:
                continue
            rows.append([i])
            cols.append([next_col])
            vals.append([1.0])
            if sense == LESS:
                lo.append([0.0]); hi.append([math.inf])
            else:
                lo.append([-math.inf]); hi.append([0.0])
            slack_of_row[i] = next_col
            next_col += 1
        self.slack_of_row = slack_of_row
        self.n_real = next_col  # structural + slack columns
        self.lo = np.concatenate(lo)
        self.hi = np.concatenate(hi)

        # one artificial per row; unused ones stay fixed at zero
        art_rows = np.arange(m)
        self.art0 = self.n_real
        rows.append(art_rows)
        cols.append(np.arange(self.art0, self.art0 + m))
        self.art_sign = np.ones(m)
        self.art_vals_slot = len(vals)
        vals.append(np.ones(m))  # signs patched once the residual is known
        self.lo = np.concatenate([self.lo, np.zeros(m)])
        self.hi = np.concatenate([self.hi, np.zeros(m)])

        self._coo = (np.concatenate([np.asarray(r) for r in rows]),
                     np.concatenate([np.asarray(c) for c in cols]),
                     vals)
        self.n_total = self.art0 + m
        self.b = problem.rhs.astype(float)
        self.max_iterations = (max_iterations if max_iterations is not None
                               else 20000 + 30 * (m + n))
        self.iterations = 0
        self.message = ""

    # -- setup ---------------------------------------------------------------

    def _start(self):
        lo, hi = self.lo, self.hi
        status = np.full(self.n_total, _NB_LOWER, dtype=np.int8)
        x = np.zeros(self.n_total)
        finite_lo = np.isfinite(lo)
        finite_hi = np.isfinite(hi)
        at_lower = finite_lo
        at_upper = ~finite_lo & finite_hi
        free = ~finite_lo & ~finite_hi
        status[at_lower] = _NB_LOWER
        status[at_upper] = _NB_UPPER
        status[free] = _NB_FREE
        x[at_lower] = lo[at_lower]
        x[at_upper] = hi[at_upper]
        x[free] = 0.0

        # residual with every real column at its resting value
        rows, cols, vals = self._coo
        vals_flat = np.concatenate(vals)
        keep = cols < self.n_real
        resid = self.b - np.bincount(
            rows[keep], weights=vals_flat[keep] * x[cols[keep]], minlength=self.m)

        basis = np.empty(self.m, dtype=np.int64)
        b_inv = np.zeros((self.m, self.m))
        art_used = np.zeros(self.m, dtype=bool)
        for i in range(self.m):
            sense = self.prob.senses[i]
            r = resid[i]
            slack = self.slack_of_row.get(i)
            fits = (slack is not None
                    and ((sense == LESS and r >= -FEAS_TOL)
                         or (sense == GREATER and r <= FEAS_TOL)))
            if fits:
                basis[i] = slack
                x[slack] = r
                status[slack] = _BASIC
                b_inv[i, i] = 1.0
            else:
                j = self.art0 + i
                sign = 1.0 if r >= 0.0 else -1.0
                self.art_sign[i] = sign
                basis[i] = j
                x[j] = abs(r)
                self.hi[j] = math.inf
                status[j] = _BASIC
                b_inv[i, i] = sign
                art_used[i] = True

        vals[self.art_vals_slot] = self.art_sign
        self.A = _Csc(self.m, self.n_total, rows, cols, np.concatenate(vals))
        self.basis = basis
        self.b_inv = b_inv
        self.x = x
        self.var_status = status
        return art_used

    # -- core pivoting loop ----------------------------------------------------

    def _iterate(self, c: np.ndarray, phase: int):
        """Runs simplex to optimality for cost vector c; returns a Status."""
        m = self.m
        degen_run = 0
        bland = False
        since_refactor = 0
        while True:
            if self.iterations >= self.max_iterations:
                self.message = f"iteration cap {self.max_iterations} reached in phase {phase}"
                return Status.IterationLimit
            y = c[self.basis] @ self.b_inv
            d = c - self.A.t_dot(y)

            movable = (self.hi - self.lo) > 0.0
            nb_low = (self.var_status == _NB_LOWER) & movable & (d < -OPT_TOL)
            nb_up = (self.var_status == _NB_UPPER) & movable & (d > OPT_TOL)
            nb_free = (self.var_status == _NB_FREE) & (np.abs(d) > OPT_TOL)
            eligible = nb_low | nb_up | nb_free
            if not np.any(eligible):
                return Status.Optimal

            if bland:
                q = int(np.flatnonzero(eligible)[0])
            else:
                score = np.where(eligible, np.abs(d), 0.0)
                q = int(np.argmax(score))
            sigma = 1.0 if (nb_low[q] or (nb_free[q] and d[q] < 0.0)) else -1.0

            rows_q, vals_q = self.A.col(q)
            w = self.b_inv[:, rows_q] @ vals_q

            xb = self.x[self.basis]
            lob = self.lo[self.basis]
            hib = self.hi[self.basis]
            denom = sigma * w
            limits = np.full(m, math.inf)
            pos = denom > PIV_TOL
            neg = denom < -PIV_TOL
            with np.errstate(invalid="ignore"):
                limits[pos] = (xb[pos] - lob[pos]) / denom[pos]
                limits[neg] = (xb[neg] - hib[neg]) / denom[neg]
            limits[~np.isfinite(lob) & pos] = math.inf
            limits[~np.isfinite(hib) & neg] = math.inf
            limits = np.maximum(limits, 0.0)

            span = self.hi[q] - self.lo[q]
            theta_flip = span if math.isfinite(span) else math.inf
            min_limit = limits.min() if m else math.inf
            theta = min(theta_flip, min_limit)

            if not math.isfinite(theta):
                # confirm against a fresh inverse before declaring: an
                # accumulated product-form error can fake an open direction
                if since_refactor > 0:
                    since_refactor = 0
                    if not self._refactor():
                        self.message = "singular basis during refactorization"
                        return Status.IterationLimit
                    continue
                if phase == 1:
                    self.message = "unbounded phase-1 direction (numerical breakdown)"
                    return Status.IterationLimit
                return Status.Unbounded

            self.iterations += 1
            if theta <= 1e-11:
                degen_run += 1
                if degen_run > 2 * m:
                    bland = True
            else:
                degen_run = 0
                bland = False

            if theta_flip <= min_limit:  # bound flip, basis unchanged
                self.x[self.basis] = xb - sigma * theta * w
                self.x[q] = self.hi[q] if sigma > 0 else self.lo[q]
                self.var_status[q] = _NB_UPPER if sigma > 0 else _NB_LOWER
                continue

            tied = np.flatnonzero(limits <= theta + 1e-9 * (1.0 + abs(theta)))
            if bland:
                r = int(tied[np.argmin(self.basis[tied])])
            else:
                r = int(tied[np.argmax(np.abs(denom[tied]))])

            piv = w[r]
            if abs(piv) <= 1e-7 and since_refactor > 0:
                # dividing by a near-zero pivot amplifies product-form error;
                # retry the step from a fresh factorization instead
                since_refactor = 0
                if not self._refactor():
                    self.message = "singular basis during refactorization"
                    return Status.IterationLimit
                continue

            leave = self.basis[r]
            self.x[self.basis] = xb - sigma * theta * w
            self.x[q] = (self.lo[q] if self.var_status[q] == _NB_LOWER
                         else self.hi[q] if self.var_status[q] == _NB_UPPER
                         else 0.0) + sigma * theta
            # the leaving variable exits onto the bound it ran into
            self.var_status[leave] = _NB_LOWER if denom[r] > 0 else _NB_UPPER
            self.x[leave] = self.lo[leave] if denom[r] > 0 else self.hi[leave]
            self.var_status[q] = _BASIC
            self.basis[r] = q

            self.b_inv[r, :] /= piv
            w_other = w.copy()
            w_other[r] = 0.0
            self.b_inv -= np.outer(w_other, self.b_inv[r, :])

            since_refactor += 1
            if since_refactor >= REFACTOR_EVERY:
                since_refactor = 0
                if not self._refactor():
                    self.message = "singular basis during refactorization"
                    return Status.IterationLimit

    def _refactor(self) -> bool:
        bmat = self.A.dense_cols(self.basis)
        try:
            self.b_inv = np.linalg.inv(bmat)
        except np.linalg.LinAlgError:
            return False
        nonbasic_mask = np.ones(self.n_total, dtype=bool)
        nonbasic_mask[self.basis] = False
        x_nb = np.where(nonbasic_mask, self.x, 0.0)
        self.x[self.basis] = self.b_inv @ (self.b - self.A.dot(x_nb))
        return True

    def _iterate_confirmed(self, c: np.ndarray, phase: int) -> Status:
        """Run to optimality; an Optimal claim must survive a fresh inverse.

        Pricing against a drifted product-form inverse can miss improving
        columns and stall at a false optimum, so re-price after
        refactorization until no further pivots happen.
        """
        status = self._iterate(c, phase)
        for _ in range(3):
            if status is not Status.Optimal or not self._refactor():
                return status
            before = self.iterations
            status = self._iterate(c, phase)
            if self.iterations == before:
                return status
        return status

    def _purge_artificials(self):
        """Pivot zero-valued artificials out of the basis where possible."""
        for r in range(self.m):
            j = self.basis[r]
            if j < self.art0:
                continue
            row_of_binv = self.b_inv[r]
            v = self.A.t_dot(row_of_binv)
            candidates = np.flatnonzero(
                (np.abs(v) > PIV_TOL)
                & (np.arange(self.n_total) < self.n_real)
                & (self.var_status != _BASIC)
                & ((self.hi - self.lo) > 0.0))
            if len(candidates) == 0:
                # redundant row: the artificial stays basic, pinned at zero
                self.hi[j] = 0.0
                continue
            q = int(candidates[np.argmax(np.abs(v[candidates]))])
            rows_q, vals_q = self.A.col(q)
            w = self.b_inv[:, rows_q] @ vals_q
            piv = w[r]
            if abs(piv) <= PIV_TOL:
                self.hi[j] = 0.0
                continue
            self.var_status[j] = _NB_LOWER
            self.x[j] = 0.0
            self.hi[j] = 0.0
            self.var_status[q] = _BASIC
            self.basis[r] = q
            self.b_inv[r, :] /= piv
            w_other = w.copy()
            w_other[r] = 0.0
            self.b_inv -= np.outer(w_other, self.b_inv[r, :])

    # -- public entry ----------------------------------------------------------

    def solve(self) -> SolveOutcome:
        t0 = time.perf_counter()
        art_used = self._start()

        if np.any(art_used):
            c1 = np.zeros(self.n_total)
            c1[self.art0:] = 1.0
            # artificials not in the starting basis stay fixed at zero
            unused = np.flatnonzero(~art_used) + self.art0
            self.hi[unused] = 0.0
            status = self._iterate_confirmed(c1, phase=1)
            if status is not Status.Optimal:
                return self._finish(status, t0, feasible=False)
            phase1_obj = float(self.x[self.art0:].sum())
            if phase1_obj > FEAS_TOL * (1.0 + np.abs(self.b).sum()):
                return self._finish(Status.Infeasible, t0, feasible=False)
            self._purge_artificials()
            self.hi[self.art0:] = 0.0

        c2 = np.zeros(self.n_total)
        c2[:self.n_struct] = self.prob.objective
        status = self._iterate_confirmed(c2, phase=2)
        return self._finish(status, t0, feasible=status in (Status.Optimal,))

    def _finish(self, status: Status, t0: float, feasible: bool) -> SolveOutcome:
        wall = time.perf_counter() - t0
        if status in (Status.Infeasible, Status.Unbounded) or not feasible:
            return SolveOutcome(status=status, objective=None, x=None, duals=None,
                                reduced_costs=None, iterations=self.iterations,
                                wall_time=wall, message=self.message,
                                _names=self.prob.names)
        c2 = np.zeros(self.n_total)
        c2[:self.n_struct] = self.prob.objective
        y = c2[self.basis] @ self.b_inv
        d = c2 - self.A.t_dot(y)
        x_struct = self.x[:self.n_struct].copy()
        obj = float(self.prob.objective @ x_struct)

        # dual objective: y^T b plus reduced-cost contributions of nonbasic
        # variables resting at finite bounds
        dual_obj = float(y @ self.b)
        nb = self.var_status != _BASIC
        rest = np.where(np.isfinite(self.x), self.x, 0.0)
        dual_obj += float((d[nb] * rest[nb]).sum())

        ax = self.A.dot(np.where(np.arange(self.n_total) < self.n_real, self.x, 0.0))
        art_part = np.zeros(self.m)
        for i in range(self.m):
            j = self.art0 + i
            art_part[i] = self.art_sign[i] * self.x[j]
        row_resid = np.abs(ax + art_part - self.b).max() if self.m else 0.0
        lo_v = np.maximum(self.lo[:self.n_real] - self.x[:self.n_real], 0.0)
        hi_v = np.maximum(self.x[:self.n_real] - self.hi[:self.n_real], 0.0)
        bound_resid = max(lo_v.max() if len(lo_v) else 0.0,
                          hi_v.max() if len(hi_v) else 0.0)

        compl = 0.0
        for i, s in enumerate(self.prob.senses):
            if s == EQUAL:
                continue
            slack_val = self.x[self.slack_of_row[i]]
            compl = max(compl, abs(y[i] * slack_val))

        return SolveOutcome(status=status, objective=obj, x=x_struct,
                            duals=y.copy(), reduced_costs=d[:self.n_struct].copy(),
                            iterations=self.iterations, wall_time=wall,
                            dual_objective=dual_obj,
                            primal_residual=float(max(row_resid, bound_resid)),
                            complementarity=float(compl),
                            message=self.message, _names=self.prob.names)


def solve_lp(problem: LinearProgram, lower=None, upper=None,
             max_iterations: Optional[int] = None) -> SolveOutcome:
    """Solve the LP relaxation of ``problem`` (bounds may be overridden)."""
    lo = problem.lower if lower is None else np.asarray(lower, dtype=float)
    hi = problem.upper if upper is None else np.asarray(upper, dtype=float)
    if np.any(lo > hi + 1e-12):
        return SolveOutcome(status=Status.Infeasible, objective=None, x=None,
                            duals=None, reduced_costs=None, iterations=0,
                            wall_time=0.0, message="crossed bounds",
                            _names=problem.names)
    return _Simplex(problem, lo.copy(), hi.copy(), max_iterations).solve()


def solve_milp(problem: LinearProgram, gap_tol: float = 1e-9,
               node_limit: int = 100000) -> SolveOutcome:
    """Best-first branch-and-bound over the integer-flagged columns.

    Branches on the most fractional variable (ties to the lowest index); node
    order is best bound first with an insertion counter for determinism, so
    two runs over the same problem explore identical trees.
    """
    t0 = time.perf_counter()
    int_cols = np.flatnonzero(problem.integer)
    root = solve_lp(problem)
    if root.status is not Status.Optimal or len(int_cols) == 0:
        root.best_bound = root.objective
        return root

    incumbent: Optional[SolveOutcome] = None
    incumbent_obj = math.inf
    heap = []
    seq = 0
    heapq.heappush(heap, (root.objective, seq, problem.lower.copy(),
                          problem.upper.copy(), root))
    nodes = 0
    iterations = root.iterations
    status_on_exit = Status.Optimal
    best_bound = root.objective
    bound_history = []

    while heap:
        bound, _, lo, hi, sol = heapq.heappop(heap)
        best_bound = bound
        bound_history.append(bound)
        if incumbent is not None:
            if incumbent_obj - bound <= gap_tol * max(1.0, abs(incumbent_obj)):
                break
            if bound >= incumbent_obj - 1e-12:
                continue
        if sol is None:
            sol = solve_lp(problem, lower=lo, upper=hi)
            nodes += 1
            iterations += sol.iterations
            if sol.status is Status.IterationLimit:
                status_on_exit = Status.IterationLimit
                break
            if sol.status is not Status.Optimal:
                continue
            if incumbent is not None and sol.objective >= incumbent_obj - 1e-12:
                continue
        frac = np.abs(sol.x[int_cols] - np.round(sol.x[int_cols]))
        fractional = frac > INT_TOL
        if not np.any(fractional):
            if sol.objective < incumbent_obj - 1e-12:
                incumbent = sol
                incumbent_obj = sol.objective
            continue
        sub = int_cols[fractional]
        dist = np.abs(sol.x[sub] - np.floor(sol.x[sub]) - 0.5)
        j = int(sub[np.argmin(dist)])  # most fractional, ties to lowest index
        xj = sol.x[j]
        lo_child, hi_child = lo.copy(), hi.copy()
        hi_child[j] = math.floor(xj)
        if lo_child[j] <= hi_child[j] + 1e-12:
            seq += 1
            heapq.heappush(heap, (sol.objective, seq, lo_child, hi_child, None))
        lo_child2, hi_child2 = lo.copy(), hi.copy()
        lo_child2[j] = math.ceil(xj)
        if lo_child2[j] <= hi_child2[j] + 1e-12:
            seq += 1
            heapq.heappush(heap, (sol.objective, seq, lo_child2, hi_child2, None))
        if nodes >= node_limit:
            status_on_exit = Status.IterationLimit
            break

    wall = time.perf_counter() - t0
    if incumbent is None:
        status = (Status.Infeasible if status_on_exit is Status.Optimal
                  else status_on_exit)
        return SolveOutcome(status=status, objective=None, x=None, duals=None,
                            reduced_costs=None, iterations=iterations,
                            wall_time=wall, best_bound=best_bound, nodes=nodes,
                            bound_history=bound_history,
                            message="no integral point found",
                            _names=problem.names)
    if heap and status_on_exit is Status.Optimal:
        best_bound = min(best_bound, min(h[0] for h in heap))
    elif not heap and status_on_exit is Status.Optimal:
        best_bound = incumbent.objective  # search completed: bound is tight
    # integral solutions come back with duals stripped: they are meaningless
    # after branching
    return SolveOutcome(status=status_on_exit, objective=incumbent.objective,
                        x=incumbent.x, duals=None, reduced_costs=None,
                        iterations=iterations, wall_time=wall,
                        best_bound=best_bound, nodes=nodes,
                        bound_history=bound_history,
                        primal_residual=incumbent.primal_residual,
                        _names=problem.names)


def duals_for(problem, keys: Sequence, outcome: SolveOutcome) -> dict:
    """Duals of the fixing rows named by ``keys``.

    ``problem`` must expose ``linking_rows`` (key -> row index).  With the
    minimization convention the dual of a fixing row ``x = xbar`` is the
    sensitivity of the optimum to ``xbar``, so ``Q + pi^T (x - xbar)``
    underestimates the child optimum.
    """
    if outcome.duals is None:
        raise InvalidParameter("duals_for requires an LP outcome with duals")
    rows = getattr(problem, "linking_rows", None)
    if rows is None:
        raise InvalidParameter("problem carries no linking row map")
    out = {}
    for key in keys:
        if key not in rows:
            raise InvalidParameter(f"no fixing row for linking key {key!r}")
        out[key] = float(outcome.duals[rows[key]])
    return out


# -- LP text interchange -------------------------------------------------------

_TERM_RE = re.compile(r"([+-]?)\s*(\d+(?:\.\d*)?(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)?\s*\*?\s*([A-Za-z_][A-Za-z0-9_.()\[\]]*)")


def _fmt(v: float) -> str:
    return repr(float(v))


def write_lp_text(problem: LinearProgram) -> str:
    """Serialize to the LP text interchange format (minimization)."""
    names = [problem.name_of(j) for j in range(problem.n_vars)]
    lines = ["Minimize", " obj:"]
    terms = []
    for j, cj in enumerate(problem.objective):
        if cj != 0.0:
            terms.append(f" {'+' if cj >= 0 else '-'} {_fmt(abs(cj))} {names[j]}")
    if not terms:
        terms = [f" + 0 {names[0]}"] if problem.n_vars else []
    lines[-1] += "".join(terms)
    lines.append("Subject To")
    by_row: dict = {}
    for r, c, v in zip(problem.row_starts, problem.col_index, problem.values):
        by_row.setdefault(int(r), []).append((int(c), float(v)))
    sense_txt = {LESS: "<=", EQUAL: "=", GREATER: ">="}
    for i in range(problem.n_rows):
        row_name = (problem.row_names[i] if problem.row_names is not None else f"r{i}")
        body = ""
        entries = sorted(by_row.get(i, []))
        if not entries:
            entries = [(0, 0.0)]
        for c, v in entries:
            body += f" {'+' if v >= 0 else '-'} {_fmt(abs(v))} {names[c]}"
        lines.append(f" {row_name}:{body} {sense_txt[problem.senses[i]]} {_fmt(problem.rhs[i])}")
    lines.append("Bounds")
    for j in range(problem.n_vars):
        lo, hi = problem.lower[j], problem.upper[j]
        if lo == hi:
            lines.append(f" {names[j]} = {_fmt(lo)}")
        elif not math.isfinite(lo) and not math.isfinite(hi):
            lines.append(f" {names[j]} free")
        else:
            lo_txt = "-inf" if not math.isfinite(lo) else _fmt(lo)
            hi_txt = "+inf" if not math.isfinite(hi) else _fmt(hi)
            lines.append(f" {lo_txt} <= {names[j]} <= {hi_txt}")
    if np.any(problem.integer):
        lines.append("Generals")
        for j in np.flatnonzero(problem.integer):
            lines.append(f" {names[j]}")
    lines.append("End")
    return "\n".join(lines) + "\n"


def parse_lp_text(text: str) -> LinearProgram:
    """Parse the subset of the LP format produced by :func:`write_lp_text`."""
    section = None
    obj_terms: dict = {}
    rows = []
    bounds = {}
    generals = []
    var_order: list = []
    var_set = set()

    def note_var(name):
        if name not in var_set:
            var_set.add(name)
            var_order.append(name)

    def parse_terms(expr):
        terms = {}
        for sign, coef, name in _TERM_RE.findall(expr):
            if name.lower() in ("inf",):
                continue
            value = float(coef) if coef else 1.0
            if sign == "-":
                value = -value
            terms[name] = terms.get(name, 0.0) + value
            note_var(name)
        return terms

    for raw in text.splitlines():
        line = raw.split("\\")[0].strip()
        if not line:
            continue
        low = line.lower()
        if low in ("minimize", "subject to", "bounds", "generals", "end"):
            section = low
            continue
        if section == "minimize":
            expr = line.split(":", 1)[1] if ":" in line else line
            for k, v in parse_terms(expr).items():
                obj_terms[k] = obj_terms.get(k, 0.0) + v
        elif section == "subject to":
            name, expr = (line.split(":", 1) if ":" in line else (f"r{len(rows)}", line))
            mt = re.search(r"(<=|>=|=)\s*([+-]?[\d.eE+-]+)\s*$", expr)
            if mt is None:
                raise InvalidParameter(f"cannot parse constraint line {line!r}")
            sense = {"<=": LESS, ">=": GREATER, "=": EQUAL}[mt.group(1)]
            rhs = float(mt.group(2))
            rows.append((name.strip(), parse_terms(expr[:mt.start()]), sense, rhs))
        elif section == "bounds":
            if line.lower().endswith(" free"):
                name = line[: -len(" free")].strip()
                note_var(name)
                bounds[name] = (-math.inf, math.inf)
                continue
            mt = re.match(r"^\s*([A-Za-z_][\w.]*)\s*=\s*([+-]?[\d.eE+-]+)\s*$", line)
            if mt:
                note_var(mt.group(1))
                v = float(mt.group(2))
                bounds[mt.group(1)] = (v, v)
                continue
            mt = re.match(
                r"^\s*([+-]?[\d.eE+-]+|-inf)\s*<=\s*([A-Za-z_][\w.]*)\s*<=\s*([+-]?[\d.eE+-]+|\+?inf)\s*$",
                line)
            if mt is None:
                raise InvalidParameter(f"cannot parse bounds line {line!r}")
            lo = -math.inf if mt.group(1) == "-inf" else float(mt.group(1))
            hi = math.inf if mt.group(3) in ("+inf", "inf") else float(mt.group(3))
            note_var(mt.group(2))
            bounds[mt.group(2)] = (lo, hi)
        elif section == "generals":
            note_var(line)
            generals.append(line)
        elif section == "end":
            break

    index = {name: j for j, name in enumerate(var_order)}
    n = len(var_order)
    c = np.zeros(n)
    for k, v in obj_terms.items():
        c[index[k]] = v
    tr_rows, tr_cols, tr_vals = [], [], []
    senses, rhs, row_names = [], [], []
    for i, (rname, terms, sense, b) in enumerate(rows):
        for k, v in terms.items():
            if v != 0.0:
                tr_rows.append(i)
                tr_cols.append(index[k])
                tr_vals.append(v)
        senses.append(sense)
        rhs.append(b)
        row_names.append(rname)
    lower = np.zeros(n)
    upper = np.full(n, math.inf)
    for k, (lo, hi) in bounds.items():
        lower[index[k]] = lo
        upper[index[k]] = hi
    integer = np.zeros(n, dtype=bool)
    for k in generals:
        integer[index[k]] = True
    return LinearProgram(n_vars=n, objective=c, row_starts=np.asarray(tr_rows),
                         col_index=np.asarray(tr_cols), values=np.asarray(tr_vals),
                         senses=senses, rhs=np.asarray(rhs), lower=lower,
                         upper=upper, integer=integer, names=var_order,
                         row_names=row_names)
