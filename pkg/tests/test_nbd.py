"""Decomposition engine tests: convergence against the extensive-form
oracle, cut validity by re-solve, bound bookkeeping, termination modes,
aggregation, and schedule independence."""

import io
import math

import numpy as np
import pytest

from eamod import (
    BendersCut,
    IntegralityMode,
    InvalidParameter,
    ModelBug,
    NbdConfig,
    Status,
    backward_pass,
    build_extensive,
    build_stage,
    compute_gap,
    evaluate_tree_solution,
    forward_pass,
    interface_in_keys,
    prepare,
    run,
    solve_lp,
    solve_milp,
    topology_signature,
    warm_up_cuts,
)
from eamod import nbd as nbd_mod
from eamod.nbd import build_segments
from eamod.net_model import stage_cost

from helpers import constant_chain, desk_instance, fleet_at, manual_tree, value


def two_branch_fixture():
    """Four-scenario tree over three stages with mixed demand and terminal."""
    inst = desk_instance(n=2, soc_bins=4, horizon=3, fare=5.0, reb_cost=0.5,
                         charge_price=1.0, v2g_price=0.8, chargers=2,
                         terminal_a=2.0, terminal_q=1.5)
    hi = value([[0, 2], [1, 0]], [2, 2])
    lo = value([[0, 1], [0, 0]], [2, 2])
    root = value([[0, 1], [1, 0]], [2, 2])
    tree = manual_tree(root, [
        (0.4, hi, [(0.5, hi, []), (0.5, lo, [])]),
        (0.6, lo, [(0.3, hi, []), (0.7, lo, [])]),
    ])
    tree.validate()
    fleet = fleet_at(inst, {(0, 2): 2, (1, 1): 1})
    return inst, tree, fleet


def two_stage_fixture():
    """Root plus two leaves; small enough that leaves are exact oracles."""
    inst = desk_instance(n=2, soc_bins=4, horizon=2, fare=5.0, reb_cost=0.5,
                         charge_price=1.0, v2g_price=0.8, chargers=1,
                         terminal_a=2.0, terminal_q=1.5)
    root = value([[0, 1], [0, 0]], [1, 1])
    hi = value([[0, 2], [1, 0]], [1, 1])
    lo = value([[0, 0], [0, 0]], [1, 1])
    tree = manual_tree(root, [(0.5, hi, []), (0.5, lo, [])])
    tree.validate()
    fleet = fleet_at(inst, {(0, 3): 2, (1, 2): 1})
    return inst, tree, fleet


# -- configuration and gap formula ------------------------------------------

def test_config_validation():
    with pytest.raises(InvalidParameter):
        NbdConfig(gap_tol=0.0)
    with pytest.raises(InvalidParameter):
        NbdConfig(max_iters=0)
    with pytest.raises(InvalidParameter):
        NbdConfig(stall_limit=0)
    with pytest.raises(InvalidParameter):
        NbdConfig(aggregation=0)
    with pytest.raises(InvalidParameter):
        NbdConfig(parallel_width=0)
    with pytest.raises(InvalidParameter):
        NbdConfig(master_stages=0)


def test_compute_gap_examples():
    assert compute_gap(100.0, 100.0) == 0.0
    assert compute_gap(100.0, 99.0) == pytest.approx(1.0)
    assert compute_gap(100.0, 95.48) == pytest.approx(4.52)
    # lower bound a hair above the upper bound clamps to zero
    assert compute_gap(10.0, 10.0 + 1e-9) == 0.0
    assert compute_gap(0.0, 0.0) == 0.0
    assert compute_gap(0.0, 5e-10) == 0.0
    assert compute_gap(0.0, 1.0) == math.inf
    assert compute_gap(math.inf, 0.0) == math.inf


# -- whole-run behaviour -----------------------------------------------------

def test_zero_demand_chain_converges_immediately():
    inst = desk_instance(n=2, soc_bins=4, horizon=3, v2g_drop=0)
    tree = constant_chain(inst, demand=0)
    fleet = fleet_at(inst, {(0, 2): 2, (1, 1): 1})
    res = run(inst, tree, NbdConfig(), initial_fleet=fleet)
    assert res.termination == "converged"
    assert res.iterations == 1
    assert res.objective == 0.0
    assert res.lower_bound == 0.0
    assert res.gap_percent == 0.0
    for dec in res.decisions_by_node.values():
        assert dec.pax.sum() == 0.0
        assert dec.charge.sum() == 0.0
        assert dec.v2g.sum() == 0.0
        off_diag = dec.reb.sum() - np.trace(dec.reb, axis1=0, axis2=1).sum()
        assert off_diag == 0.0


def test_zero_demand_chain_with_terminal_penalty():
    # idle fleet still pays the final-step penalty: 2 at bin 2 of 4 cost
    # min(1.5, 0.5*2) = 1.0 each, 1 at bin 1 costs min(1.5, 0.75*2) = 1.5
    inst = desk_instance(n=2, soc_bins=4, horizon=3, v2g_drop=0,
                         terminal_a=2.0, terminal_q=1.5)
    tree = constant_chain(inst, demand=0)
    fleet = fleet_at(inst, {(0, 2): 2, (1, 1): 1})
    res = run(inst, tree, NbdConfig(gap_tol=1e-9), initial_fleet=fleet)
    assert res.termination == "converged"
    assert res.objective == pytest.approx(3.5, abs=1e-9)
    assert res.lower_bound == pytest.approx(3.5, abs=1e-7)


def test_master_only_matches_extensive_oracle():
    inst, tree, fleet = two_branch_fixture()
    oracle = solve_milp(build_extensive(inst, tree, IntegralityMode.MASTER_ONLY,
                                        initial_fleet=fleet))
    assert oracle.status is Status.Optimal
    res = run(inst, tree, NbdConfig(gap_tol=1e-7), initial_fleet=fleet)
    assert res.termination == "converged"
    scale = max(1.0, abs(oracle.objective))
    assert abs(res.objective - oracle.objective) / scale < 1e-6
    # the lower bound must never overshoot the true optimum
    assert res.lower_bound <= oracle.objective + 1e-6 * scale


def test_relaxed_matches_extensive_lp():
    inst, tree, fleet = two_branch_fixture()
    oracle = solve_lp(build_extensive(inst, tree, IntegralityMode.RELAXED,
                                      initial_fleet=fleet))
    assert oracle.status is Status.Optimal
    cfg = NbdConfig(gap_tol=1e-5, max_iters=40, integer_masters=False)
    res = run(inst, tree, cfg, initial_fleet=fleet)
    assert res.termination == "converged"
    scale = max(1.0, abs(oracle.objective))
    assert abs(res.objective - oracle.objective) / scale < 1e-5
    assert res.lower_bound <= oracle.objective + 1e-6 * scale


def test_alpha_reaches_child_optimum_at_convergence():
    inst, tree, fleet = two_branch_fixture()
    cfg = NbdConfig(gap_tol=1e-5, max_iters=40, integer_masters=False)
    res = run(inst, tree, cfg, initial_fleet=fleet)
    state = prepare(inst, tree, cfg, initial_fleet=fleet,
                    initial_pools=res.pools)
    forward_pass(state)
    root_prob = nbd_mod._build_problem(state, tree.root.id, integer=False)
    outcome = solve_lp(root_prob)
    out_vals = root_prob.out_values(outcome.x)
    for child, col in root_prob.alpha_cols.items():
        child_prob = build_stage(inst, tree, [child], out_vals,
                                 cut_pool=res.pools[child])
        child_opt = solve_lp(child_prob).objective
        assert outcome.x[col] <= child_opt + 1e-6
        assert outcome.x[col] == pytest.approx(child_opt, abs=2e-5)


def test_forward_ub_matches_direct_evaluation():
    inst, tree, fleet = two_branch_fixture()
    state = prepare(inst, tree, NbdConfig(), initial_fleet=fleet)
    trials = forward_pass(state)
    direct = evaluate_tree_solution(inst, tree, trials)
    assert state.ub_trial == pytest.approx(direct, abs=1e-9)
    # leaves carry no cost-to-go term: stage cost plus terminal penalty only
    pen = np.array([inst.terminal.penalty(inst.soc_fraction(b))
                    for b in range(inst.n_levels)])
    for leaf in tree.leaves():
        dec = trials[leaf.id]
        moving = (dec.pax.sum(axis=(0, 1)) + dec.reb.sum(axis=(0, 1))
                  + dec.charge.sum(axis=0) + dec.v2g.sum(axis=0))
        want = stage_cost(dec, inst, leaf.stage) + float(pen @ moving)
        assert state.cost_to_go[leaf.id] == pytest.approx(want, abs=1e-9)


def test_bounds_ledger_and_csv_stream():
    inst, tree, fleet = two_branch_fixture()
    stream = io.StringIO()
    res = run(inst, tree, NbdConfig(gap_tol=1e-7), initial_fleet=fleet,
              ledger_stream=stream)
    root_rows = [row for row in res.ledger.history if row[1] == tree.root.id]
    assert len(root_rows) == res.iterations
    lbs = [row[3] for row in root_rows]
    ubs = [row[2] for row in root_rows]
    assert all(b >= a - 1e-9 for a, b in zip(lbs, lbs[1:]))
    assert all(b <= a + 1e-9 for a, b in zip(ubs, ubs[1:]))
    for _, _, ub, lb, gap in res.ledger.history:
        assert gap == compute_gap(ub, lb)
    assert math.isfinite(res.ledger.max_gap)
    assert res.ledger.median_gap <= res.ledger.max_gap
    assert stream.getvalue() == res.ledger.to_csv()
    header, *lines = stream.getvalue().strip().split("\n")
    assert header == "iteration,node,ub,lb,gap"
    assert len(lines) == len(res.ledger.history)
    it, node, ub, lb, gap = lines[0].split(",")
    assert (int(it), int(node)) == (1, tree.root.id)
    assert float(gap) == compute_gap(float(ub), float(lb))


def test_cuts_underestimate_child_at_random_trials():
    inst, tree, fleet = two_stage_fixture()
    state = prepare(inst, tree, NbdConfig(gap_tol=1e-12, max_iters=30),
                    initial_fleet=fleet)
    for _ in range(3):
        forward_pass(state)
        backward_pass(state)
    cuts = state.pools[tree.root.id]
    assert len(cuts) >= 4  # two warm-up cuts plus at least one pass of two
    rng = np.random.default_rng(7)
    keys = interface_in_keys(inst, 1)
    for _ in range(20):
        trial = {}
        for key in keys:
            hi = 3 if key[0] == "arr" else 2
            trial[key] = float(rng.integers(0, hi + 1))
        child_opt = {}
        for child in tree.root.children:
            prob = build_stage(inst, tree, [child], trial)
            out = solve_lp(prob)
            assert out.status is Status.Optimal
            child_opt[child] = out.objective
        for cut in cuts:
            assert cut.value_at(trial) <= child_opt[cut.child] + 1e-6


def test_warm_up_cut_values():
    # a leaf seeing 3 units of demand at fare 5 is worth at least -15
    inst = desk_instance(n=2, soc_bins=4, horizon=2, fare=5.0, v2g_drop=0)
    root = value([[0, 0], [0, 0]], [2, 2])
    child = value([[0, 3], [0, 0]], [2, 2])
    tree = manual_tree(root, [(1.0, child, [])])
    pools = warm_up_cuts(inst, tree)
    (cut,) = pools[0]
    assert cut.child == 1
    assert cut.intercept == pytest.approx(-15.0)
    assert cut.coef[("slk", 0, 1)] == pytest.approx(-5.0)
    zeros = {("slk", i, j): 0.0 for i in range(2) for j in range(2)}
    assert cut.value_at(zeros) == pytest.approx(-15.0)
    # handing down backlog lowers the bound by one fare per unit
    assert cut.value_at({**zeros, ("slk", 0, 1): 2.0}) == pytest.approx(-25.0)

    # zero demand and no feed-in: nothing to earn, cost-to-go at least zero
    tree0 = manual_tree(root, [(1.0, root, [])])
    (cut0,) = warm_up_cuts(inst, tree0)[0]
    assert cut0.intercept == 0.0
    assert cut0.value_at(zeros) == 0.0


def test_warm_up_respects_probabilities_and_chargers():
    # expected capturable revenue: fares weighted by branch probability,
    # feed-in capped by charger slots
    inst = desk_instance(n=2, soc_bins=4, horizon=3, fare=4.0, v2g_price=0.5)
    root = value([[0, 0], [0, 0]], [2, 2])
    mid = value([[0, 1], [0, 0]], [1, 0])
    hi = value([[0, 2], [0, 0]], [0, 0])
    lo = value([[0, 0], [0, 0]], [0, 0])
    tree = manual_tree(root, [(1.0, mid, [(0.25, hi, []), (0.75, lo, [])])])
    pools = warm_up_cuts(inst, tree)
    cut_mid = next(c for c in pools[0] if c.child == 1)
    # own: 1*4 fare + 1 charger slot * 0.5; below: 0.25 * (2*4)
    assert cut_mid.intercept == pytest.approx(-(4.0 + 0.5 + 0.25 * 8.0))


def test_capacity_bound_child_yields_constant_cut():
    # one station, ample vehicles, one charger: the leaf earns exactly one
    # feed-in slot no matter how many vehicles arrive, so the cut is flat
    # in the arrival keys
    inst = desk_instance(n=1, soc_bins=4, horizon=2, fare=0.0, reb_cost=0.0,
                         charge_price=1.0, v2g_price=0.8, chargers=1)
    tree = constant_chain(inst, demand=0)
    fleet = fleet_at(inst, {(0, 3): 3})
    state = prepare(inst, tree, NbdConfig(), initial_fleet=fleet)
    forward_pass(state)
    added = backward_pass(state)
    (cut,) = added[0]
    assert cut.intercept == pytest.approx(-0.8)
    for key, coef in cut.coef.items():
        if key[0] == "arr":
            assert coef == pytest.approx(0.0, abs=1e-9)


def test_parallel_width_is_bit_identical():
    inst, tree, fleet = two_branch_fixture()
    runs = [run(inst, tree,
                NbdConfig(gap_tol=1e-7, max_iters=30, parallel_width=w),
                initial_fleet=fleet)
            for w in (1, 4)]
    assert runs[0].objective == runs[1].objective
    assert runs[0].lower_bound == runs[1].lower_bound
    assert runs[0].iterations == runs[1].iterations
    assert runs[0].cut_counts == runs[1].cut_counts
    assert runs[0].ledger.history == runs[1].ledger.history
    assert np.array_equal(runs[0].stage0.pax, runs[1].stage0.pax)


def test_termination_modes_distinct():
    inst, tree, fleet = two_branch_fixture()
    res_it = run(inst, tree, NbdConfig(gap_tol=1e-16, max_iters=1),
                 initial_fleet=fleet)
    assert res_it.termination == "iterations"
    assert res_it.iterations == 1

    res_time = run(inst, tree,
                   NbdConfig(gap_tol=1e-16, max_iters=10, time_limit_s=1e-9),
                   initial_fleet=fleet)
    assert res_time.termination == "time"
    assert res_time.iterations == 1

    res_stall = run(inst, tree,
                    NbdConfig(gap_tol=1e-16, max_iters=25, stall_limit=3,
                              integer_masters=False),
                    initial_fleet=fleet)
    assert res_stall.termination == "stall"
    assert res_stall.iterations < 25


def test_segments_fuse_unbranched_chains():
    inst = desk_instance(n=2, soc_bins=4, horizon=4)
    a = value([[0, 1], [0, 0]], [2, 2])
    b = value([[0, 0], [1, 0]], [2, 2])
    tree = manual_tree(a, [
        (0.5, a, [(1.0, a, [(1.0, a, [])])]),
        (0.5, b, [(1.0, b, [(1.0, b, [])])]),
    ])
    tree.validate()
    segs1 = build_segments(tree, 1)
    assert sorted(segs1) == [0, 1, 2, 3, 4, 5, 6]
    assert all(len(s.node_ids) == 1 for s in segs1.values())
    segs2 = build_segments(tree, 2)
    assert segs2[1].node_ids == [1, 3] and segs2[2].node_ids == [2, 4]
    assert segs2[1].children == [5] and segs2[5].node_ids == [5]
    # the root never fuses into its children here: it branches immediately
    assert segs2[0].node_ids == [0]

    fleet = fleet_at(inst, {(0, 2): 2, (1, 2): 1})
    results = [run(inst, tree,
                   NbdConfig(gap_tol=1e-7, max_iters=40, master_stages=1,
                             aggregation=agg),
                   initial_fleet=fleet)
               for agg in (1, 2, 4)]
    for res in results:
        assert res.termination == "converged"
    base = results[0].objective
    scale = max(1.0, abs(base))
    for res in results[1:]:
        assert abs(res.objective - base) / scale < 1e-6
    # deeper fusing means fewer cut-carrying interfaces
    assert len(results[2].cut_counts) < len(results[0].cut_counts)


def test_single_segment_run_is_exact():
    inst = desk_instance(n=2, soc_bins=4, horizon=3, terminal_a=2.0,
                         terminal_q=1.5)
    tree = constant_chain(inst, demand=1)
    fleet = fleet_at(inst, {(0, 2): 2, (1, 1): 1})
    oracle = solve_milp(build_extensive(inst, tree, IntegralityMode.MASTER_ONLY,
                                        initial_fleet=fleet))
    res = run(inst, tree, NbdConfig(aggregation=10), initial_fleet=fleet)
    assert res.iterations == 1
    assert res.termination == "converged"
    assert res.cuts_added == 0
    assert res.objective == pytest.approx(oracle.objective, abs=1e-9)


def test_cut_pool_reuse_warm_starts():
    inst, tree, fleet = two_branch_fixture()
    cfg = NbdConfig(gap_tol=1e-7, max_iters=30)
    first = run(inst, tree, cfg, initial_fleet=fleet)
    again = run(inst, tree, cfg, initial_fleet=fleet,
                initial_pools=first.pools)
    assert again.iterations == 1
    assert again.termination == "converged"
    assert again.objective == pytest.approx(first.objective, abs=1e-9)
    with pytest.raises(InvalidParameter):
        run(inst, tree, cfg, initial_fleet=fleet,
            initial_pools={99: []})


def test_topology_signature_tracks_values():
    _, tree, _ = two_branch_fixture()
    _, tree_b, _ = two_branch_fixture()
    assert topology_signature(tree) == topology_signature(tree_b)
    tree_b.nodes[3].value.demand[0, 1] += 1
    assert topology_signature(tree) != topology_signature(tree_b)


def test_non_optimal_stage_solve_is_a_model_bug():
    inst, tree, fleet = two_stage_fixture()
    bad = build_stage(inst, tree, [1],
                      {k: 0.0 for k in interface_in_keys(inst, 1)})
    outcome = solve_lp(bad, upper=np.full(bad.n_vars, -1.0))
    assert outcome.status is Status.Infeasible
    with pytest.raises(ModelBug):
        nbd_mod._require_optimal(outcome, 1, "forward")
