"""Nested Benders decomposition over the scenario tree.

The extensive problem splits into one stage problem per tree node (or per
fused chain of nodes).  A forward pass walks root-to-leaves fixing each
parent's trial interface values into its children and pricing the tree with
cost-to-go variables; a backward pass re-solves children as LPs and returns
one optimality cut per child to its parent.  The root master objective is a
global lower bound, the evaluated trial a global upper bound.

Slack recourse makes every stage problem feasible for any parent trial, so
only optimality cuts exist; an infeasible or unbounded stage solve signals a
construction bug, not bad data.
"""

from __future__ import annotations

import math
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, TextIO, Tuple

import numpy as np

from .errors import InvalidParameter, ModelBug
from .lp_solver import SolveOutcome, Status, duals_for, solve_lp, solve_milp
from .net_model import NetworkInstance, StageDecisions, stage_cost
from .opt_model import (ALPHA_BIG, BendersCut, StageProblem, build_stage,
                        root_fixed_values)
from .scenario_tree import ScenarioTree

GAP_ZERO_TOL = 1e-9
CUT_DEDUPE_TOL = 1e-9
IMPROVE_TOL = 1e-9
# Re-solving a master after cut insertion may land on a different vertex whose
# computed objective sits a few solver-tolerances below the previous one; only
# a decrease beyond this signals wrong cut coefficients.
LB_DECREASE_TOL = 1e-6


@dataclass
class NbdConfig:
    """Termination and decomposition knobs."""

    gap_tol: float = 1e-2
    max_iters: int = 30
    stall_limit: int = 5
    time_limit_s: float = 600.0
    aggregation: int = 1
    parallel_width: int = 1
    master_stages: Optional[int] = None   # None: all branching stages but the last
    integer_masters: bool = True
    alpha_bound: float = ALPHA_BIG

    def __post_init__(self):
        if not (self.gap_tol > 0):
            raise InvalidParameter("gap_tol must be positive")
        if self.max_iters < 1:
            raise InvalidParameter("max_iters must be at least 1")
        if self.stall_limit < 1:
            raise InvalidParameter("stall_limit must be at least 1")
        if not (self.time_limit_s > 0):
            raise InvalidParameter("time_limit_s must be positive")
        if self.aggregation < 1:
            raise InvalidParameter("aggregation must be at least 1")
        if self.parallel_width < 1:
            raise InvalidParameter("parallel_width must be at least 1")
        if self.master_stages is not None and self.master_stages < 1:
            raise InvalidParameter("master_stages must be at least 1")

    def resolved_master_stages(self, tree: ScenarioTree) -> int:
        if self.master_stages is not None:
            return self.master_stages
        return max(tree.robust_horizon - 1, 1)


def compute_gap(ub: float, lb: float) -> float:
    """Relative optimality gap in percent: (UB - LB) / UB * 100."""
    if not (math.isfinite(ub) and math.isfinite(lb)):
        return math.inf
    if ub == 0.0:
        return 0.0 if abs(ub - lb) <= GAP_ZERO_TOL else math.inf
    gap = (ub - lb) / ub * 100.0
    if lb > ub and lb - ub <= 1e-6 * max(1.0, abs(ub)):
        return 0.0
    return gap


@dataclass
class BoundsLedger:
    """Per-node incumbent bounds plus the full iteration history."""

    node_ub: Dict[int, float] = field(default_factory=dict)
    node_lb: Dict[int, float] = field(default_factory=dict)
    history: List[Tuple[int, int, float, float, float]] = field(
        default_factory=list)

    CSV_HEADER = "iteration,node,ub,lb,gap"

    def record(self, iteration: int, node: int, ub: float, lb: float,
               stream: Optional[TextIO] = None) -> Tuple[float, float, float]:
        best_ub = min(self.node_ub.get(node, math.inf), ub)
        best_lb = max(self.node_lb.get(node, -math.inf), lb)
        self.node_ub[node] = best_ub
        self.node_lb[node] = best_lb
        gap = compute_gap(best_ub, best_lb)
        self.history.append((iteration, node, best_ub, best_lb, gap))
        if stream is not None:
            stream.write(f"{iteration},{node},{best_ub!r},{best_lb!r},{gap!r}\n")
        return best_ub, best_lb, gap

    def gaps(self) -> Dict[int, float]:
        return {node: compute_gap(self.node_ub[node], self.node_lb[node])
                for node in self.node_ub if node in self.node_lb}

    @property
    def max_gap(self) -> float:
        gaps = self.gaps()
        return max(gaps.values()) if gaps else math.inf

    @property
    def median_gap(self) -> float:
        gaps = self.gaps()
        return statistics.median(gaps.values()) if gaps else math.inf

    def to_csv(self) -> str:
        lines = [self.CSV_HEADER]
        for it, node, ub, lb, gap in self.history:
            lines.append(f"{it},{node},{ub!r},{lb!r},{gap!r}")
        return "\n".join(lines) + "\n"


@dataclass
class _Segment:
    head: int
    node_ids: List[int]
    parent: Optional[int]          # parent segment's head node id
    children: List[int]            # child segments' head node ids
    t0: int
    t1: int

    @property
    def is_leaf(self) -> bool:
        return not self.children


def build_segments(tree: ScenarioTree, aggregation: int) -> Dict[int, _Segment]:
    """Partition the tree into chains of up to `aggregation` unbranched nodes."""
    segments: Dict[int, _Segment] = {}
    queue: List[Tuple[int, Optional[int]]] = [(tree.root.id, None)]
    while queue:
        head, parent_head = queue.pop(0)
        ids = [head]
        tail = tree.nodes[head]
        while len(ids) < aggregation and len(tail.children) == 1:
            tail = tree.nodes[tail.children[0]]
            ids.append(tail.id)
        seg = _Segment(head=head, node_ids=ids, parent=parent_head,
                       children=list(tail.children),
                       t0=tree.nodes[head].stage, t1=tail.stage)
        segments[head] = seg
        for child in tail.children:
            queue.append((child, head))
    return segments


def topology_signature(tree: ScenarioTree) -> tuple:
    """Identity of a tree for deciding whether cut pools may be reused.

    Includes node values: cuts priced against one demand realization are not
    valid bounds for another, so a changed forecast resets the pools even if
    the branching shape is unchanged.
    """
    rows = tuple((node.id, node.parent, node.stage,
                  round(float(node.prob), 12), node.value.key())
                 for node in tree.nodes)
    return (tree.robust_horizon, tree.last_stage, rows)


def warm_up_cuts(instance: NetworkInstance, tree: ScenarioTree, *,
                 aggregation: int = 1,
                 segments: Optional[Dict[int, _Segment]] = None,
                 ) -> Dict[int, List[BendersCut]]:
    """Initial revenue-cap cuts, one per child segment, keyed by parent head.

    Every cut is a true lower bound on the child's cost-to-go: the subtree
    cannot earn more than full fare on every demand unit it could ever see
    (its own arrivals plus any backlog handed down) plus full feed-in revenue
    from every charger slot, and it pays nothing less than zero for the rest.
    """
    if segments is None:
        segments = build_segments(tree, aggregation)
    n = instance.n_stations
    levels = instance.n_levels

    fare_cap = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            floor = int(instance.min_soc[i, j])
            if floor < levels:
                fare_cap[i, j] = max(0.0, float(
                    np.max(instance.pax_revenue[i, j, floor:])))

    drop = instance.v2g_drop_bins()

    def v2g_cap(i: int, t: int) -> float:
        if drop < 1 or drop >= levels:
            return 0.0
        return max(0.0, float(np.max(instance.v2g_revenue[i, drop:, t])))

    capturable: Dict[int, float] = {}
    for node in sorted(tree.nodes, key=lambda nd: nd.stage, reverse=True):
        own = float(np.sum(node.value.demand * fare_cap))
        own += sum(float(node.value.chargers[i]) * v2g_cap(i, node.stage)
                   for i in range(n))
        capturable[node.id] = own + sum(
            tree.nodes[ch].prob * capturable[ch] for ch in node.children)

    pools: Dict[int, List[BendersCut]] = {head: [] for head in segments}
    slack_keys = [("slk", i, j) for i in range(n) for j in range(n)]
    for head, seg in sorted(segments.items()):
        if seg.parent is None:
            continue
        coef = {key: -fare_cap[key[1], key[2]] for key in slack_keys}
        anchor = {key: 0.0 for key in slack_keys}
        pools[seg.parent].append(BendersCut(
            intercept=-capturable[head], coef=coef, anchor=anchor, child=head))
    return pools


@dataclass
class NbdState:
    """Everything a pass needs; built once per run by `prepare`."""

    instance: NetworkInstance
    tree: ScenarioTree
    config: NbdConfig
    initial_fleet: np.ndarray
    root_values: Dict[tuple, float]
    segments: Dict[int, _Segment]
    forward_order: List[int]                 # heads, parents before children
    pools: Dict[int, List[BendersCut]]
    signatures: Dict[int, set]
    master_stages: int
    fixed: Dict[int, Dict[tuple, float]] = field(default_factory=dict)
    trial_decisions: Dict[int, StageDecisions] = field(default_factory=dict)
    cost_to_go: Dict[int, float] = field(default_factory=dict)
    ub_trial: float = math.inf
    ub_incumbent: float = math.inf
    incumbent_decisions: Dict[int, StageDecisions] = field(default_factory=dict)
    lb: float = -math.inf
    node_lb: Dict[int, float] = field(default_factory=dict)
    ledger: BoundsLedger = field(default_factory=BoundsLedger)
    iterations: int = 0
    cuts_added: int = 0

    def is_master(self, head: int) -> bool:
        return self.segments[head].t0 < self.master_stages


def prepare(instance: NetworkInstance, tree: ScenarioTree,
            config: Optional[NbdConfig] = None, *, initial_fleet,
            in_transit=None, initial_backlog=None,
            initial_pools: Optional[Dict[int, List[BendersCut]]] = None,
            ) -> NbdState:
    config = config if config is not None else NbdConfig()
    if tree.last_stage != instance.horizon - 1:
        raise InvalidParameter("tree and instance horizons disagree")
    segments = build_segments(tree, config.aggregation)
    order = sorted(segments, key=lambda h: (segments[h].t0, h))
    if initial_pools is None:
        pools = warm_up_cuts(instance, tree, segments=segments)
    else:
        unknown = set(initial_pools) - set(segments)
        if unknown:
            raise InvalidParameter(
                f"cut pools reference unknown segment heads {sorted(unknown)}")
        pools = {head: list(initial_pools.get(head, ())) for head in segments}
    signatures = {head: {cut.signature() for cut in cuts}
                  for head, cuts in pools.items()}
    fleet = np.asarray(initial_fleet, dtype=float)
    return NbdState(
        instance=instance, tree=tree, config=config, initial_fleet=fleet,
        root_values=root_fixed_values(instance, in_transit, initial_backlog),
        segments=segments, forward_order=order, pools=pools,
        signatures=signatures,
        master_stages=config.resolved_master_stages(tree))


def _levels(state: NbdState, order: Sequence[int]) -> List[List[int]]:
    by_t0: Dict[int, List[int]] = {}
    for head in order:
        by_t0.setdefault(state.segments[head].t0, []).append(head)
    return [by_t0[t0] for t0 in sorted(by_t0)]


def _build_problem(state: NbdState, head: int, *, integer: bool) -> StageProblem:
    seg = state.segments[head]
    return build_stage(
        state.instance, state.tree, seg.node_ids, state.fixed[head],
        cut_pool=state.pools[head], integer_stage=integer,
        alpha_bound=state.config.alpha_bound,
        initial_fleet=state.initial_fleet if seg.t0 == 0 else None)


def _require_optimal(outcome: SolveOutcome, head: int, pass_name: str) -> None:
    if outcome.status is not Status.Optimal:
        raise ModelBug(
            f"{pass_name} solve of segment {head} returned "
            f"{outcome.status.value}; slack recourse should make every "
            f"stage problem solvable")


def _node_cost(instance: NetworkInstance, stage: int,
               dec: StageDecisions) -> float:
    cost = stage_cost(dec, instance, stage)
    if stage == instance.horizon - 1:
        pen = np.array([instance.terminal.penalty(instance.soc_fraction(b))
                        for b in range(instance.n_levels)])
        moving = (dec.pax.sum(axis=(0, 1)) + dec.reb.sum(axis=(0, 1))
                  + dec.charge.sum(axis=0) + dec.v2g.sum(axis=0))
        cost += float(pen @ moving)
    return cost


def forward_pass(state: NbdState) -> Dict[int, StageDecisions]:
    """Solve root-to-leaves at the current cut pools; returns trial decisions.

    Master-designated segments solve with integrality, the rest as LPs.  The
    root objective (stage cost plus cost-to-go prices) is the iteration's
    lower bound; the trial's directly evaluated cost updates the upper bound.
    """
    tree, config = state.tree, state.config
    state.fixed[tree.root.id] = dict(state.root_values)
    state.trial_decisions = {}
    state.cost_to_go = {}

    def solve_head(head: int) -> Tuple[int, StageProblem, SolveOutcome]:
        integer = config.integer_masters and state.is_master(head)
        problem = _build_problem(state, head, integer=integer)
        if integer and np.any(problem.integer):
            outcome = solve_milp(problem)
        else:
            outcome = solve_lp(problem)
        return head, problem, outcome

    root_objective = None
    with ThreadPoolExecutor(max_workers=config.parallel_width) as pool:
        for level in _levels(state, state.forward_order):
            for head, problem, outcome in pool.map(solve_head, level):
                _require_optimal(outcome, head, "forward")
                seg = state.segments[head]
                if seg.parent is None:
                    root_objective = outcome.objective
                for nid in seg.node_ids:
                    state.trial_decisions[nid] = problem.node_decisions(
                        outcome.x, nid)
                if not seg.is_leaf:
                    out_values = problem.out_values(outcome.x)
                    for child in seg.children:
                        state.fixed[child] = out_values

    for head in reversed(state.forward_order):
        seg = state.segments[head]
        cost = sum(_node_cost(state.instance, tree.nodes[nid].stage,
                              state.trial_decisions[nid])
                   for nid in seg.node_ids)
        cost += sum(tree.nodes[ch].prob * state.cost_to_go[ch]
                    for ch in seg.children)
        state.cost_to_go[head] = cost

    state.ub_trial = state.cost_to_go[tree.root.id]
    if state.ub_trial < state.ub_incumbent:
        state.ub_incumbent = state.ub_trial
        state.incumbent_decisions = dict(state.trial_decisions)
    if root_objective < state.lb - LB_DECREASE_TOL * max(1.0, abs(state.lb)):
        raise ModelBug("root master objective decreased despite cut growth")
    state.lb = max(state.lb, root_objective)
    return state.trial_decisions


def backward_pass(state: NbdState) -> Dict[int, List[BendersCut]]:
    """Re-solve non-root segments as LPs, leaves first; returns cuts by parent.

    Each solve prices the parent's trial interface through the fixing-row
    duals; the cut bounds the child's relaxed cost-to-go from below wherever
    the parent moves next.  Duplicates within 1e-9 are dropped, and fresh cuts
    are inserted in a canonical order so pools never depend on solve order.
    """
    config = state.config
    non_root = [h for h in state.forward_order
                if state.segments[h].parent is not None]

    def solve_head(head: int) -> Tuple[int, BendersCut, float]:
        problem = _build_problem(state, head, integer=False)
        outcome = solve_lp(problem)
        _require_optimal(outcome, head, "backward")
        keys = sorted(problem.linking_rows)
        cut = BendersCut(intercept=outcome.objective,
                         coef=duals_for(problem, keys, outcome),
                         anchor=dict(problem.linking_in), child=head)
        return head, cut, outcome.objective

    added: Dict[int, List[BendersCut]] = {}
    with ThreadPoolExecutor(max_workers=config.parallel_width) as pool:
        for level in reversed(_levels(state, non_root)):
            fresh = sorted(pool.map(solve_head, level),
                           key=lambda item: (state.segments[item[0]].parent,
                                             item[1].signature()))
            for head, cut, objective in fresh:
                state.node_lb[head] = objective
                parent = state.segments[head].parent
                sig = cut.signature()
                if sig in state.signatures[parent]:
                    continue
                state.signatures[parent].add(sig)
                state.pools[parent].append(cut)
                added.setdefault(parent, []).append(cut)
                state.cuts_added += 1
    return added


@dataclass
class NbdResult:
    objective: float
    lower_bound: float
    gap_percent: float
    iterations: int
    termination: str
    stage0: StageDecisions
    decisions_by_node: Dict[int, StageDecisions]
    ledger: BoundsLedger
    cuts_added: int
    cut_counts: Dict[int, int]
    pools: Dict[int, List[BendersCut]]
    wall_time: float


def run(instance: NetworkInstance, tree: ScenarioTree,
        config: Optional[NbdConfig] = None, *, initial_fleet,
        in_transit=None, initial_backlog=None,
        initial_pools: Optional[Dict[int, List[BendersCut]]] = None,
        ledger_stream: Optional[TextIO] = None) -> NbdResult:
    """Iterate forward/backward passes until the root gap closes or a limit.

    Termination is one of "converged" (UB - LB within gap_tol relative),
    "stall" (no bound improved for stall_limit iterations), "time", or
    "iterations".
    """
    config = config if config is not None else NbdConfig()
    state = prepare(instance, tree, config, initial_fleet=initial_fleet,
                    in_transit=in_transit, initial_backlog=initial_backlog,
                    initial_pools=initial_pools)
    if ledger_stream is not None:
        ledger_stream.write(BoundsLedger.CSV_HEADER + "\n")

    t_start = time.monotonic()
    termination = "iterations"
    stall = 0
    prev_ub, prev_lb = math.inf, -math.inf
    for iteration in range(1, config.max_iters + 1):
        state.iterations = iteration
        forward_pass(state)
        backward_pass(state)

        root_id = tree.root.id
        for head in state.forward_order:
            lb_h = state.lb if head == root_id else \
                state.node_lb.get(head, -math.inf)
            state.ledger.record(iteration, head, state.cost_to_go[head],
                                lb_h, stream=ledger_stream)

        if abs(state.ub_incumbent - state.lb) <= \
                config.gap_tol * max(1.0, abs(state.ub_incumbent)):
            termination = "converged"
            break
        improved = (state.ub_incumbent < prev_ub - IMPROVE_TOL
                    or state.lb > prev_lb + IMPROVE_TOL)
        prev_ub, prev_lb = state.ub_incumbent, state.lb
        stall = 0 if improved else stall + 1
        if time.monotonic() - t_start > config.time_limit_s:
            termination = "time"
            break
        if stall >= config.stall_limit:
            termination = "stall"
            break

    return NbdResult(
        objective=state.ub_incumbent,
        lower_bound=state.lb,
        gap_percent=compute_gap(state.ub_incumbent, state.lb),
        iterations=state.iterations,
        termination=termination,
        stage0=state.incumbent_decisions[tree.root.id],
        decisions_by_node=dict(state.incumbent_decisions),
        ledger=state.ledger,
        cuts_added=state.cuts_added,
        cut_counts={head: len(cuts) for head, cuts in state.pools.items()},
        pools={head: list(cuts) for head, cuts in state.pools.items()},
        wall_time=time.monotonic() - t_start)
