"""Shared builders for small hand-checkable instances and trees."""

import numpy as np

from eamod.net_model import NetworkInstance, TerminalParams
from eamod.scenario_tree import NodeValue, ScenarioNode, ScenarioTree, chain_tree


def desk_instance(n=2, soc_bins=4, horizon=3, step_minutes=15, battery_kwh=40.0,
                  travel_steps=1, energy_bins=1, margin=0, fare=5.0,
                  reb_cost=0.5, charge_price=1.0, v2g_price=0.8, chargers=2,
                  charge_gain=1, v2g_drop=1, idle_energy=0, diag_fare=0.0,
                  terminal_a=0.0, terminal_q=0.0, terminal_b_max=1.0):
    """Uniform small network; every knob is a scalar for hand arithmetic."""
    levels = soc_bins + 1
    tt = np.full((n, n, horizon), int(travel_steps), dtype=np.int64)
    te = np.full((n, n, horizon), int(energy_bins), dtype=np.int64)
    for i in range(n):
        tt[i, i, :] = 1
        te[i, i, :] = int(idle_energy)
    min_soc = te.max(axis=2) + int(margin)
    pax_rev = np.full((n, n, levels), float(fare))
    for i in range(n):
        pax_rev[i, i, :] = float(diag_fare)
    rebc = np.full((n, n, levels), float(reb_cost))
    for i in range(n):
        rebc[i, i, :] = 0.0
    bin_kwh = battery_kwh / soc_bins
    charge_kw = np.full(levels, charge_gain * bin_kwh * 60.0 / step_minutes)
    v2g_kw = v2g_drop * bin_kwh * 60.0 / step_minutes
    return NetworkInstance(
        n_stations=n, soc_bins=soc_bins, horizon=horizon,
        step_minutes=step_minutes, battery_kwh=battery_kwh,
        travel_time=tt, travel_energy=te, min_soc=min_soc,
        chargers=np.full((n, horizon), int(chargers), dtype=np.int64),
        charge_kw=charge_kw, v2g_kw=float(v2g_kw),
        reb_cost=rebc, pax_revenue=pax_rev,
        charge_cost=np.full((n, levels, horizon), float(charge_price)),
        v2g_revenue=np.full((n, levels, horizon), float(v2g_price)),
        terminal=TerminalParams(b_max=terminal_b_max, a=terminal_a,
                                q_max=terminal_q),
        distance_km=np.ones((n, n)) - np.eye(n),
    )


def value(demand, chargers):
    return NodeValue(demand=np.asarray(demand, dtype=np.int64),
                     chargers=np.asarray(chargers, dtype=np.int64))


def uniform_value(n, demand=0, chargers=2):
    return value(np.full((n, n), demand), np.full(n, chargers))


def constant_chain(instance, demand=0, chargers=None, root_demand=None):
    """Single-scenario tree spanning the instance horizon."""
    n = instance.n_stations
    cap = instance.chargers[:, 0] if chargers is None else np.full(n, chargers)
    root = value(np.full((n, n), demand if root_demand is None else root_demand),
                 cap)
    vals = [value(np.full((n, n), demand), cap)
            for _ in range(instance.horizon - 1)]
    return chain_tree(vals, root)


def manual_tree(root_value, spec, branch_plan=None):
    """Tree from nested (prob, value, children) specs.

    ``spec`` is a list of child tuples under the root; each tuple is
    (prob, NodeValue, child_spec).  Ids are assigned breadth-first, scenario
    ids to leaves left-to-right.
    """
    nodes = [ScenarioNode(id=0, stage=0, value=root_value.copy(), prob=1.0)]
    queue = [(0, spec)]
    while queue:
        parent_id, child_specs = queue.pop(0)
        parent = nodes[parent_id]
        for prob, val, sub in child_specs:
            node = ScenarioNode(id=len(nodes), stage=parent.stage + 1,
                                value=val.copy(), prob=float(prob),
                                parent=parent_id)
            nodes.append(node)
            parent.children.append(node.id)
            queue.append((node.id, sub))
    leaves = [nd for nd in nodes if not nd.children]
    depth = max(nd.stage for nd in leaves)

    def leaf_order(node_id, acc):
        node = nodes[node_id]
        if not node.children:
            acc.append(node_id)
        for c in node.children:
            leaf_order(c, acc)
        return acc

    ordered = leaf_order(0, [])
    if branch_plan is None:
        branch_plan = [max(len(nd.children), 1) for nd in (nodes[0],)] \
            * max(depth, 1)
        branch_plan = branch_plan[:depth] if depth else [1]
    return ScenarioTree(nodes=nodes, branch_plan=branch_plan,
                        robust_horizon=depth,
                        path_index={leaf: k for k, leaf in enumerate(ordered)},
                        last_stage=depth)


def fleet_at(instance, station_levels):
    """(N, levels) fleet array from {(station, level): count}."""
    fleet = np.zeros((instance.n_stations, instance.n_levels), dtype=np.int64)
    for (i, b), c in station_levels.items():
        fleet[i, b] = c
    return fleet
