"""Multi-stage fleet MILP assembly over a network instance and scenario tree.

Two entry points share one row/column builder: :func:`build_extensive` lays the
whole tree into a single problem (variables live on tree nodes, so scenarios
sharing history share variables and non-anticipativity holds structurally),
and :func:`build_stage` builds one node -- or a fused chain of consecutive
nodes -- as a stage problem whose coupling to its parent runs through explicit
interface variables: incoming arrivals and the carried-over backlog are pinned
by fixing rows, and outgoing arrivals are defined by bookkeeping rows so that
cut coefficients always attach to variables the parent owns.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import InfeasibleDecision, InvalidParameter
from .lp_solver import EQUAL, GREATER, LESS, LinearProgram, write_lp_text
from .net_model import NetworkInstance, StageDecisions
from .scenario_tree import ScenarioNode, ScenarioTree

ALPHA_BIG = 1e9  # default lower bound magnitude for cost-to-go variables

KIND_PAX = "pax"
KIND_REB = "reb"
KIND_CHARGE = "charge"
KIND_V2G = "v2g"
KIND_SLACK = "slack"
KIND_ALPHA = "alpha"
KIND_ARR_IN = "arrin"
KIND_ARR_OUT = "arrout"


class IntegralityMode(enum.Enum):
    FULL = "full"
    MASTER_ONLY = "master_only"
    RELAXED = "relaxed"


@dataclass(frozen=True)
class VariableKey:
    """Identity of one decision column: kind, arc, SoC bin, step, node."""

    kind: str
    i: int
    j: int
    b: int
    t: int
    s: int

    def __post_init__(self):
        if self.kind in (KIND_CHARGE, KIND_V2G) and self.i != self.j:
            raise InvalidParameter(
                f"{self.kind} keys are station self-loops, got i={self.i} j={self.j}")

    def name(self) -> str:
        def fmt(v: int) -> str:
            return str(v) if v >= 0 else f"m{-v}"
        return "_".join([self.kind, fmt(self.i), fmt(self.j), fmt(self.b),
                         fmt(self.t), f"n{self.s}"])


def pax_key(i, j, b, t, s):
    return VariableKey(KIND_PAX, i, j, b, t, s)


def reb_key(i, j, b, t, s):
    return VariableKey(KIND_REB, i, j, b, t, s)


def charge_key(i, b, t, s):
    return VariableKey(KIND_CHARGE, i, i, b, t, s)


def v2g_key(i, b, t, s):
    return VariableKey(KIND_V2G, i, i, b, t, s)


@dataclass
class BendersCut:
    """Affine underestimator of a child's cost-to-go in parent coordinates."""

    intercept: float
    coef: Dict[tuple, float]
    anchor: Dict[tuple, float]
    child: int

    def __post_init__(self):
        if not math.isfinite(self.intercept):
            raise InvalidParameter("cut intercept must be finite")
        for k, v in self.coef.items():
            if not math.isfinite(v):
                raise InvalidParameter(f"cut coefficient for {k} must be finite")
            if k not in self.anchor:
                raise InvalidParameter(f"cut anchor missing key {k}")

    def value_at(self, values: Dict[tuple, float]) -> float:
        total = self.intercept
        for k, c in self.coef.items():
            total += c * (values[k] - self.anchor[k])
        return total

    def signature(self) -> tuple:
        items = tuple(sorted((k, round(v, 12)) for k, v in self.coef.items()))
        return (self.child, round(self.intercept, 9), items,
                tuple(sorted((k, round(v, 9)) for k, v in self.anchor.items())))


@dataclass
class StageProblem(LinearProgram):
    """A LinearProgram plus the bookkeeping the decomposition needs."""

    keys: List[VariableKey] = field(default_factory=list)
    linking_in: Dict[tuple, float] = field(default_factory=dict)
    linking_out: List[tuple] = field(default_factory=list)
    linking_rows: Dict[tuple, int] = field(default_factory=dict)
    link_out_cols: Dict[tuple, int] = field(default_factory=dict)
    cut_pool: List[BendersCut] = field(default_factory=list)
    node_ids: List[int] = field(default_factory=list)
    stage_span: Tuple[int, int] = (0, 0)
    alpha_cols: Dict[int, int] = field(default_factory=dict)
    dims: Tuple[int, int, int] = (0, 0, 0)  # (stations, levels, horizon)
    col_of_key: Dict[VariableKey, int] = field(default_factory=dict)

    def col(self, key: VariableKey) -> int:
        return self.col_of_key[key]

    def out_values(self, x: np.ndarray) -> Dict[tuple, float]:
        return {k: float(x[c]) for k, c in self.link_out_cols.items()}

    def node_decisions(self, x: np.ndarray, node_id: int) -> StageDecisions:
        n, levels, _ = self.dims
        dec = StageDecisions.zeros(n, levels)
        for key, c in self.col_of_key.items():
            if key.s != node_id:
                continue
            if key.kind == KIND_PAX:
                dec.pax[key.i, key.j, key.b] = x[c]
            elif key.kind == KIND_REB:
                dec.reb[key.i, key.j, key.b] = x[c]
            elif key.kind == KIND_CHARGE:
                dec.charge[key.i, key.b] = x[c]
            elif key.kind == KIND_V2G:
                dec.v2g[key.i, key.b] = x[c]
        return dec

    def to_lp_text(self) -> str:
        return write_lp_text(self)


class _Builder:
    """Accumulates columns and triplet rows in deterministic order."""

    def __init__(self):
        self.keys: List[VariableKey] = []
        self.lb: List[float] = []
        self.ub: List[float] = []
        self.obj: List[float] = []
        self.int_flag: List[bool] = []
        self.col_of: Dict[VariableKey, int] = {}
        self.rows: List[int] = []
        self.cols: List[int] = []
        self.vals: List[float] = []
        self.senses: List[str] = []
        self.rhs: List[float] = []
        self.row_names: List[str] = []

    def add_col(self, key, lb=0.0, ub=math.inf, obj=0.0, integer=False) -> int:
        idx = len(self.keys)
        self.keys.append(key)
        self.lb.append(lb)
        self.ub.append(ub)
        self.obj.append(obj)
        self.int_flag.append(integer)
        self.col_of[key] = idx
        return idx

    def add_obj(self, col: int, delta: float) -> None:
        self.obj[col] += delta

    def add_row(self, entries: Iterable[Tuple[int, float]], sense: str,
                rhs: float, name: str) -> int:
        idx = len(self.rhs)
        for col, val in entries:
            if val != 0.0:
                self.rows.append(idx)
                self.cols.append(col)
                self.vals.append(float(val))
        self.senses.append(sense)
        self.rhs.append(float(rhs))
        self.row_names.append(name)
        return idx

    def finish(self, **extra) -> StageProblem:
        problem = StageProblem(
            n_vars=len(self.keys),
            objective=np.array(self.obj, dtype=float),
            row_starts=np.array(self.rows, dtype=np.int64),
            col_index=np.array(self.cols, dtype=np.int64),
            values=np.array(self.vals, dtype=float),
            senses=self.senses,
            rhs=np.array(self.rhs, dtype=float),
            lower=np.array(self.lb, dtype=float),
            upper=np.array(self.ub, dtype=float),
            integer=np.array(self.int_flag, dtype=bool),
            names=[k.name() for k in self.keys],
            row_names=self.row_names,
            keys=list(self.keys),
            col_of_key=dict(self.col_of),
            **extra,
        )
        return problem


def imbalance_step(lam, served, s_prev):
    """Backlog recursion: demand minus served plus carried backlog."""
    lam_a = np.asarray(lam, dtype=float)
    served_a = np.asarray(served, dtype=float)
    prev_a = np.asarray(s_prev, dtype=float)
    if np.any(lam_a < 0) or np.any(served_a < 0) or np.any(prev_a < 0):
        raise InvalidParameter("imbalance inputs must be nonnegative")
    out = lam_a - served_a + prev_a
    if np.any(out < -1e-9):
        raise InfeasibleDecision(
            "served more demand than waiting (backlog went negative)")
    out = np.maximum(out, 0.0)
    if np.isscalar(lam) and np.isscalar(served) and np.isscalar(s_prev):
        return float(out)
    return out


def _pax_level_floor(instance: NetworkInstance, i: int, j: int) -> int:
    return int(instance.min_soc[i, j])


def _reb_level_floor(instance: NetworkInstance, i: int, j: int, t: int) -> int:
    return int(instance.travel_energy[i, j, t])


def _charge_target(instance: NetworkInstance, b: int) -> int:
    return min(b + instance.charge_gain_bins(b), instance.soc_bins)


def _max_lag(instance: NetworkInstance) -> int:
    return int(instance.travel_time.max())


def _require_tree_matches(instance: NetworkInstance, tree: ScenarioTree) -> None:
    if tree.last_stage > instance.horizon - 1:
        raise InvalidParameter(
            f"tree reaches stage {tree.last_stage} beyond horizon {instance.horizon}")
    if tree.last_stage != instance.horizon - 1:
        raise InvalidParameter(
            "tree must cover every planning step; extend it to the horizon first")


def _check_initial_fleet(instance: NetworkInstance, initial_fleet) -> np.ndarray:
    if initial_fleet is None:
        raise InvalidParameter("initial fleet distribution is required")
    fleet = np.asarray(initial_fleet)
    if fleet.shape != (instance.n_stations, instance.n_levels):
        raise InvalidParameter(
            f"initial fleet must have shape {(instance.n_stations, instance.n_levels)}, "
            f"got {fleet.shape}")
    if np.any(fleet < 0):
        raise InvalidParameter("initial fleet counts must be nonnegative")
    return fleet.astype(float)


def _check_in_transit(instance: NetworkInstance, in_transit) -> np.ndarray:
    shape = (instance.n_stations, instance.n_levels, instance.horizon)
    if in_transit is None:
        return np.zeros(shape)
    arr = np.asarray(in_transit, dtype=float)
    if arr.shape != shape:
        raise InvalidParameter(f"in-transit ledger must have shape {shape}")
    if np.any(arr < 0):
        raise InvalidParameter("in-transit counts must be nonnegative")
    return arr


def _add_node_columns(builder: _Builder, instance: NetworkInstance,
                      node: ScenarioNode, weight: float, integer: bool) -> None:
    """Decision columns for one node, objective scaled by ``weight``."""
    n, levels = instance.n_stations, instance.n_levels
    t = node.stage
    terminal = t == instance.horizon - 1
    term = instance.terminal

    def pen(b: int) -> float:
        return term.penalty(instance.soc_fraction(b)) if terminal else 0.0

    for i in range(n):
        for j in range(n):
            for b in range(_pax_level_floor(instance, i, j), levels):
                obj = weight * (-instance.pax_revenue[i, j, b] + pen(b))
                builder.add_col(pax_key(i, j, b, t, node.id), obj=obj,
                                integer=integer)
            for b in range(_reb_level_floor(instance, i, j, t), levels):
                obj = weight * (instance.reb_cost[i, j, b] + pen(b))
                builder.add_col(reb_key(i, j, b, t, node.id), obj=obj)
    for i in range(n):
        for b in range(levels):
            obj = weight * (instance.charge_cost[i, b, t] + pen(b))
            builder.add_col(charge_key(i, b, t, node.id), obj=obj,
                            integer=integer)
        drop = instance.v2g_drop_bins()
        if drop >= 1:  # zero discharge power disables grid feed-in entirely
            for b in range(drop, levels):
                obj = weight * (-instance.v2g_revenue[i, b, t] + pen(b))
                builder.add_col(v2g_key(i, b, t, node.id), obj=obj,
                                integer=integer)
    for i in range(n):
        for j in range(n):
            builder.add_col(VariableKey(KIND_SLACK, i, j, -1, t, node.id))


def _arrival_entries(builder: _Builder, instance: NetworkInstance,
                     dep_node_id: int, tau: int, i: int, b: int, t: int):
    """Columns of decisions made at (node, tau) that land at (i, b, t)."""
    n, levels = instance.n_stations, instance.n_levels
    entries = []
    for j in range(n):
        lag = int(instance.travel_time[j, i, tau])
        if tau + lag != t:
            continue
        b_dep = b + int(instance.travel_energy[j, i, tau])
        if b_dep >= levels:
            continue
        key = pax_key(j, i, b_dep, tau, dep_node_id)
        if key in builder.col_of:
            entries.append((builder.col_of[key], -1.0))
        key = reb_key(j, i, b_dep, tau, dep_node_id)
        if key in builder.col_of:
            entries.append((builder.col_of[key], -1.0))
    if tau + 1 == t:
        for b_dep in range(levels):
            if _charge_target(instance, b_dep) == b:
                key = charge_key(i, b_dep, tau, dep_node_id)
                if key in builder.col_of:
                    entries.append((builder.col_of[key], -1.0))
        b_dep = b + instance.v2g_drop_bins()
        if b_dep < levels:
            key = v2g_key(i, b_dep, tau, dep_node_id)
            if key in builder.col_of:
                entries.append((builder.col_of[key], -1.0))
    return entries


def _departure_entries(builder: _Builder, instance: NetworkInstance,
                       node_id: int, i: int, b: int, t: int):
    n = instance.n_stations
    entries = []
    for j in range(n):
        key = pax_key(i, j, b, t, node_id)
        if key in builder.col_of:
            entries.append((builder.col_of[key], 1.0))
        key = reb_key(i, j, b, t, node_id)
        if key in builder.col_of:
            entries.append((builder.col_of[key], 1.0))
    key = charge_key(i, b, t, node_id)
    if key in builder.col_of:
        entries.append((builder.col_of[key], 1.0))
    key = v2g_key(i, b, t, node_id)
    if key in builder.col_of:
        entries.append((builder.col_of[key], 1.0))
    return entries


def _add_imbalance_rows(builder: _Builder, instance: NetworkInstance,
                        node: ScenarioNode, prev_slack_col, extra_rhs=None):
    """Backlog recursion rows; ``prev_slack_col[i][j]`` may be None at t=0."""
    n, levels = instance.n_stations, instance.n_levels
    t = node.stage
    for i in range(n):
        for j in range(n):
            entries = []
            for b in range(_pax_level_floor(instance, i, j), levels):
                entries.append((builder.col_of[pax_key(i, j, b, t, node.id)], 1.0))
            entries.append(
                (builder.col_of[VariableKey(KIND_SLACK, i, j, -1, t, node.id)], 1.0))
            prev = prev_slack_col(i, j)
            if prev is not None:
                entries.append((prev, -1.0))
            rhs = float(node.value.demand[i, j])
            if extra_rhs is not None:
                rhs += float(extra_rhs[i, j])
            builder.add_row(entries, EQUAL, rhs, f"imb_{i}_{j}_{t}_n{node.id}")


def _add_charger_rows(builder: _Builder, instance: NetworkInstance,
                      node: ScenarioNode) -> None:
    n, levels = instance.n_stations, instance.n_levels
    t = node.stage
    for i in range(n):
        entries = []
        for b in range(levels):
            key = charge_key(i, b, t, node.id)
            entries.append((builder.col_of[key], 1.0))
            key = v2g_key(i, b, t, node.id)
            if key in builder.col_of:
                entries.append((builder.col_of[key], 1.0))
        builder.add_row(entries, LESS, float(node.value.chargers[i]),
                        f"cap_{i}_{t}_n{node.id}")


def build_extensive(instance: NetworkInstance, tree: ScenarioTree,
                    integrality_mode: IntegralityMode = IntegralityMode.FULL,
                    *, initial_fleet=None, in_transit=None,
                    initial_backlog=None) -> StageProblem:
    """The whole tree as one problem; the oracle for small instances."""
    _require_tree_matches(instance, tree)
    fleet = _check_initial_fleet(instance, initial_fleet)
    transit = _check_in_transit(instance, in_transit)
    n, levels = instance.n_stations, instance.n_levels
    backlog = (np.zeros((n, n)) if initial_backlog is None
               else np.asarray(initial_backlog, dtype=float))
    if backlog.shape != (n, n) or np.any(backlog < 0):
        raise InvalidParameter("initial backlog must be a nonnegative (N, N) array")

    builder = _Builder()
    node_ids = [tree_node.id for tree_node in tree.nodes]
    for nid in node_ids:
        node = tree.nodes[nid]
        integer = (integrality_mode is IntegralityMode.FULL
                   or (integrality_mode is IntegralityMode.MASTER_ONLY
                       and node.stage == 0))
        _add_node_columns(builder, instance, node,
                          weight=tree.unconditional_prob(nid), integer=integer)

    max_lag = _max_lag(instance)
    for nid in node_ids:
        node = tree.nodes[nid]
        t = node.stage
        path = tree.path_to(nid)  # ancestor ids, root..node
        for i in range(n):
            for b in range(levels):
                entries = _departure_entries(builder, instance, nid, i, b, t)
                for tau in range(max(t - max_lag, 0), t):
                    entries.extend(_arrival_entries(
                        builder, instance, path[tau], tau, i, b, t))
                rhs = transit[i, b, t] + (fleet[i, b] if t == 0 else 0.0)
                builder.add_row(entries, EQUAL, rhs, f"cons_{i}_{b}_{t}_n{nid}")

        if t == 0:
            _add_imbalance_rows(builder, instance, node,
                                lambda i, j: None, extra_rhs=backlog)
        else:
            parent = node.parent

            def prev_slack(i, j, parent=parent):
                return builder.col_of[VariableKey(KIND_SLACK, i, j, -1,
                                                  t - 1, parent)]
            _add_imbalance_rows(builder, instance, node, prev_slack)
        _add_charger_rows(builder, instance, node)

    return builder.finish(node_ids=node_ids,
                          stage_span=(0, instance.horizon - 1),
                          dims=(n, levels, instance.horizon))


def _segment_nodes(tree: ScenarioTree, node) -> List[ScenarioNode]:
    if isinstance(node, (list, tuple)):
        nodes = [tree.nodes[x.id if isinstance(x, ScenarioNode) else int(x)]
                 for x in node]
    else:
        nodes = [tree.nodes[node.id if isinstance(node, ScenarioNode) else int(node)]]
    for a, b in zip(nodes, nodes[1:]):
        if b.parent != a.id:
            raise InvalidParameter("segment nodes must form a parent-child chain")
        if len(a.children) != 1:
            raise InvalidParameter("only non-branching nodes can be fused")
    return nodes


def interface_in_keys(instance: NetworkInstance, t0: int) -> List[tuple]:
    """Keys a segment starting at stage t0 expects its parent to fix."""
    n, levels = instance.n_stations, instance.n_levels
    horizon = instance.horizon
    max_lag = _max_lag(instance)
    keys = []
    for i in range(n):
        for b in range(levels):
            for t in range(t0, min(t0 + max_lag - 1, horizon - 1) + 1):
                keys.append(("arr", i, b, t))
    for i in range(n):
        for j in range(n):
            keys.append(("slk", i, j))
    return keys


def root_fixed_values(instance: NetworkInstance, in_transit=None,
                      initial_backlog=None) -> Dict[tuple, float]:
    """Interface values for the root segment: pre-horizon flows and backlog."""
    transit = _check_in_transit(instance, in_transit)
    max_lag = _max_lag(instance)
    if np.any(transit[:, :, max_lag:] != 0):
        raise InvalidParameter(
            "in-transit arrivals beyond the longest travel time cannot exist")
    n = instance.n_stations
    backlog = (np.zeros((n, n)) if initial_backlog is None
               else np.asarray(initial_backlog, dtype=float))
    values: Dict[tuple, float] = {}
    for key in interface_in_keys(instance, 0):
        if key[0] == "arr":
            _, i, b, t = key
            values[key] = float(transit[i, b, t])
        else:
            _, i, j = key
            values[key] = float(backlog[i, j])
    return values


def build_stage(instance: NetworkInstance, tree: ScenarioTree, node,
                fixed_parent_values: Dict[tuple, float], *,
                cut_pool: Sequence[BendersCut] = (),
                integer_stage: bool = False,
                alpha_bound: float = ALPHA_BIG,
                initial_fleet=None) -> StageProblem:
    """One segment of the decomposition (a node, or a fused chain of nodes)."""
    nodes = _segment_nodes(tree, node)
    t0, t1 = nodes[0].stage, nodes[-1].stage
    if t0 == 0 and initial_fleet is None:
        raise InvalidParameter("root stage problem needs the initial fleet")
    fleet = _check_initial_fleet(instance, initial_fleet) if t0 == 0 else None
    n, levels = instance.n_stations, instance.n_levels
    horizon = instance.horizon
    max_lag = _max_lag(instance)
    tail = nodes[-1]
    is_leaf = t1 == horizon - 1

    in_keys = interface_in_keys(instance, t0)
    for key in in_keys:
        if key not in fixed_parent_values:
            raise InvalidParameter(f"missing fixed parent value for {key}")

    builder = _Builder()
    for seg_node in nodes:
        _add_node_columns(builder, instance, seg_node, weight=1.0,
                          integer=integer_stage)

    # interface-in columns, free so the fixing row carries the whole dual
    arr_in_col: Dict[tuple, int] = {}
    slk_in_col: Dict[tuple, int] = {}
    for key in in_keys:
        if key[0] == "arr":
            _, i, b, t = key
            col = builder.add_col(VariableKey(KIND_ARR_IN, i, -1, b, t, nodes[0].id),
                                  lb=-math.inf, ub=math.inf)
            arr_in_col[key] = col
        else:
            _, i, j = key
            col = builder.add_col(VariableKey(KIND_ARR_IN, i, j, -1, t0 - 1,
                                              nodes[0].id),
                                  lb=-math.inf, ub=math.inf)
            slk_in_col[key] = col

    # cost-to-go columns for the tail node's children
    alpha_cols: Dict[int, int] = {}
    if not is_leaf:
        for child_id in tail.children:
            child = tree.nodes[child_id]
            col = builder.add_col(VariableKey(KIND_ALPHA, -1, -1, -1,
                                              t1, child_id),
                                  lb=-float(alpha_bound), ub=math.inf,
                                  obj=float(child.prob))
            alpha_cols[child_id] = col

    # outgoing arrivals: one bookkeeping column per landing slot
    out_cols: Dict[tuple, int] = {}
    if not is_leaf:
        for i in range(n):
            for b in range(levels):
                for t in range(t1 + 1, min(t1 + max_lag, horizon - 1) + 1):
                    key = ("arr", i, b, t)
                    out_cols[key] = builder.add_col(
                        VariableKey(KIND_ARR_OUT, i, -1, b, t, tail.id),
                        lb=-math.inf, ub=math.inf)

    # conservation rows within the segment
    stage_of = {seg_node.stage: seg_node for seg_node in nodes}
    for seg_node in nodes:
        t = seg_node.stage
        for i in range(n):
            for b in range(levels):
                entries = _departure_entries(builder, instance, seg_node.id,
                                             i, b, t)
                for tau in range(max(t - max_lag, t0), t):
                    entries.extend(_arrival_entries(
                        builder, instance, stage_of[tau].id, tau, i, b, t))
                key = ("arr", i, b, t)
                if key in arr_in_col:
                    entries.append((arr_in_col[key], -1.0))
                rhs = fleet[i, b] if t == 0 else 0.0
                builder.add_row(entries, EQUAL, rhs,
                                f"cons_{i}_{b}_{t}_n{seg_node.id}")

    # backlog rows
    for seg_node in nodes:
        t = seg_node.stage
        if t == t0:
            def prev_slack(i, j):
                return slk_in_col[("slk", i, j)]
        else:
            def prev_slack(i, j, t=t):
                return builder.col_of[VariableKey(KIND_SLACK, i, j, -1, t - 1,
                                                  stage_of[t - 1].id)]
        _add_imbalance_rows(builder, instance, seg_node, prev_slack)
        _add_charger_rows(builder, instance, seg_node)

    # fixing rows pin the interface to the parent's trial values
    linking_rows: Dict[tuple, int] = {}
    for key in in_keys:
        col = arr_in_col[key] if key[0] == "arr" else slk_in_col[key]
        row = builder.add_row([(col, 1.0)], EQUAL,
                              float(fixed_parent_values[key]),
                              f"fix_{'_'.join(str(p) for p in key)}")
        linking_rows[key] = row

    # definition rows for outgoing arrivals
    link_out_cols: Dict[tuple, int] = {}
    linking_out: List[tuple] = []
    if not is_leaf:
        for key, col in out_cols.items():
            _, i, b, t = key
            entries = [(col, 1.0)]
            if key in arr_in_col:
                entries.append((arr_in_col[key], -1.0))
            for seg_node in nodes:
                tau = seg_node.stage
                if tau < t:
                    entries.extend(_arrival_entries(
                        builder, instance, seg_node.id, tau, i, b, t))
            builder.add_row(entries, EQUAL, 0.0, f"defout_{i}_{b}_{t}")
            link_out_cols[key] = col
            linking_out.append(key)
        for i in range(n):
            for j in range(n):
                key = ("slk", i, j)
                link_out_cols[key] = builder.col_of[
                    VariableKey(KIND_SLACK, i, j, -1, t1, tail.id)]
                linking_out.append(key)

    # optimality cuts from the pool
    kept_cuts: List[BendersCut] = []
    for k, cut in enumerate(cut_pool):
        if cut.child not in alpha_cols:
            continue
        entries = [(alpha_cols[cut.child], 1.0)]
        rhs = cut.intercept
        for key, coef in sorted(cut.coef.items()):
            if key not in link_out_cols:
                raise InvalidParameter(f"cut references unknown interface key {key}")
            entries.append((link_out_cols[key], -coef))
            rhs -= coef * cut.anchor[key]
        builder.add_row(entries, GREATER, rhs, f"cut{k}_n{cut.child}")
        kept_cuts.append(cut)

    return builder.finish(
        linking_in={k: float(fixed_parent_values[k]) for k in in_keys},
        linking_out=linking_out,
        linking_rows=linking_rows,
        link_out_cols=link_out_cols,
        cut_pool=kept_cuts,
        node_ids=[seg_node.id for seg_node in nodes],
        stage_span=(t0, t1),
        alpha_cols=alpha_cols,
        dims=(n, levels, horizon),
    )


def evaluate_tree_solution(instance: NetworkInstance, tree: ScenarioTree,
                           decisions_by_node: Dict[int, StageDecisions]) -> float:
    """Objective of a full trial solution, evaluated directly from the costs.

    Independent of any LP bookkeeping: probability-weighted stage costs plus
    the terminal penalty on every final-stage departure.
    """
    from .net_model import stage_cost

    total = 0.0
    term = instance.terminal
    for node in tree.nodes:
        nid = node.id
        if nid not in decisions_by_node:
            raise InvalidParameter(f"missing decisions for node {nid}")
        dec = decisions_by_node[nid]
        w = tree.unconditional_prob(nid)
        total += w * stage_cost(dec, instance, node.stage)
        if node.stage == instance.horizon - 1:
            pen = np.array([term.penalty(instance.soc_fraction(b))
                            for b in range(instance.n_levels)])
            moving = dec.pax.sum(axis=(0, 1)) + dec.reb.sum(axis=(0, 1)) \
                + dec.charge.sum(axis=0) + dec.v2g.sum(axis=0)
            total += w * float(pen @ moving)
    return total
