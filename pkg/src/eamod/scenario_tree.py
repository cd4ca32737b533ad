"""Scenario fans and their reduction to scenario trees.

A fan is a bundle of independently sampled demand/charger paths.  Reduction
clusters the samples stage by stage with soft k-means, keeps the cluster
centroids as node values and the membership masses as branch probabilities,
and recurses by resampling conditioned on each centroid.  Beyond the robust
horizon uncertainty is frozen: leaves are extended by constant-value chains
up to the prediction horizon.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import forecast
from .errors import InvalidParameter
from .forecast import CountModel
from .seeding import stream


@dataclass
class NodeValue:
    """Per-stage uncertainty realization: demand matrix and charger vector."""

    demand: np.ndarray   # (N, N) int
    chargers: np.ndarray  # (N,) int

    def __post_init__(self) -> None:
        self.demand = np.asarray(self.demand, dtype=np.int64)
        self.chargers = np.asarray(self.chargers, dtype=np.int64)
        if np.any(self.demand < 0) or np.any(self.chargers < 0):
            raise InvalidParameter("node values must be nonnegative counts")

    def flat(self) -> np.ndarray:
        return np.concatenate([self.demand.ravel(), self.chargers.ravel()]).astype(float)

    def key(self) -> tuple:
        return tuple(self.demand.ravel().tolist()) + tuple(self.chargers.ravel().tolist())

    def copy(self) -> "NodeValue":
        return NodeValue(self.demand.copy(), self.chargers.copy())


@dataclass
class ScenarioNode:
    id: int
    stage: int
    value: NodeValue
    prob: float                 # conditional branch probability
    parent: Optional[int] = None
    children: list = field(default_factory=list)  # child node ids


@dataclass
class ScenarioFan:
    """m sampled paths over the branching stages, plus the generative context
    needed to resample deeper stages conditioned on cluster centroids."""

    demand: np.ndarray          # (m, stages, N, N) int
    chargers: np.ndarray        # (m, stages, N) int
    root_value: NodeValue
    model: CountModel
    seed: int
    start_bin: int = 0
    charger_model: Optional[CountModel] = None
    nominal_chargers: Optional[np.ndarray] = None

    @property
    def m_samples(self) -> int:
        return self.demand.shape[0]

    @property
    def stages(self) -> int:
        return self.demand.shape[1]

    def stage_features(self, k: int) -> np.ndarray:
        """Flattened (demand | chargers) per sample at branching stage k."""
        d = self.demand[:, k].reshape(self.m_samples, -1)
        c = self.chargers[:, k].reshape(self.m_samples, -1)
        return np.concatenate([d, c], axis=1).astype(float)

    def stage_mean(self, k: int) -> np.ndarray:
        return self.stage_features(k).mean(axis=0)


def build_fan(model: CountModel, m_samples: int, stages: int, seed: int,
              charger_model: Optional[CountModel] = None,
              nominal_chargers: Optional[np.ndarray] = None,
              start_bin: int = 0,
              root_value: Optional[NodeValue] = None) -> ScenarioFan:
    """Sample ``m_samples`` independent demand/charger paths.

    One path is a stage-by-stage draw from the forecaster; with the moment
    model the draws are stagewise independent, which is exactly the
    conditional distribution this model family admits.  Charger availability
    is sampled only when a charger model is supplied, and clipped at the
    nominal plug count; otherwise the nominal count is carried verbatim.
    """
    if m_samples < 1:
        raise InvalidParameter(f"m_samples must be >= 1, got {m_samples}")
    if stages < 1:
        raise InvalidParameter(f"stages must be >= 1, got {stages}")
    cell_shape = model.mean.shape[1:]
    n_bins = model.n_time_bins
    if nominal_chargers is None:
        n_stations = cell_shape[0]
        nominal = np.zeros((n_stations, stages), dtype=np.int64)
    else:
        nominal = np.asarray(nominal_chargers, dtype=np.int64)
        if nominal.ndim == 1:
            nominal = np.repeat(nominal[:, None], stages, axis=1)

    demand = np.zeros((m_samples, stages) + cell_shape, dtype=np.int64)
    chargers = np.zeros((m_samples, stages, nominal.shape[0]), dtype=np.int64)
    for s in range(m_samples):
        rng = stream(seed, "fan", s)
        for k in range(stages):
            t_bin = (start_bin + 1 + k) % n_bins
            demand[s, k] = forecast.sample(model, t_bin, rng)
            if charger_model is not None:
                chargers[s, k] = forecast.sample_chargers(
                    charger_model, nominal[:, min(k, nominal.shape[1] - 1)], t_bin, rng)
            else:
                chargers[s, k] = nominal[:, min(k, nominal.shape[1] - 1)]

    if root_value is None:
        root_demand = np.round(model.mean[start_bin % n_bins]).astype(np.int64)
        root_value = NodeValue(root_demand, nominal[:, 0])
    return ScenarioFan(demand=demand, chargers=chargers, root_value=root_value,
                       model=model, seed=seed, start_bin=start_bin,
                       charger_model=charger_model, nominal_chargers=nominal)


@dataclass
class ScenarioTree:
    nodes: list                      # ScenarioNode, index == id
    branch_plan: Sequence[int]
    robust_horizon: int              # last branching stage
    path_index: dict                 # leaf node id -> scenario id
    last_stage: int = None           # leaf stage after extension

    def __post_init__(self) -> None:
        if self.last_stage is None:
            self.last_stage = self.robust_horizon
        self.validate()

    # -- structure queries ---------------------------------------------------

    @property
    def root(self) -> ScenarioNode:
        return self.nodes[0]

    def children(self, nid: int) -> list:
        return [self.nodes[c] for c in self.nodes[nid].children]

    def leaves(self) -> list:
        return [n for n in self.nodes if not n.children]

    def stage_nodes(self, stage: int) -> list:
        return [n for n in self.nodes if n.stage == stage]

    def unconditional_prob(self, nid: int) -> float:
        p = 1.0
        node = self.nodes[nid]
        while node.parent is not None:
            p *= node.prob
            node = self.nodes[node.parent]
        return p

    def path_to(self, nid: int) -> list:
        """Node ids from the root down to ``nid`` inclusive."""
        path = []
        node = self.nodes[nid]
        while True:
            path.append(node.id)
            if node.parent is None:
                break
            node = self.nodes[node.parent]
        return path[::-1]

    def n_scenarios(self) -> int:
        return len(self.path_index)

    def scenario_probs(self) -> dict:
        return {s: self.unconditional_prob(leaf_id)
                for leaf_id, s in self.path_index.items()}

    def validate(self) -> None:
        for node in self.nodes:
            if not 0.0 < node.prob <= 1.0 + 1e-12:
                raise InvalidParameter(f"node {node.id} prob {node.prob} outside (0, 1]")
            if node.children:
                total = sum(self.nodes[c].prob for c in node.children)
                if abs(total - 1.0) > 1e-9:
                    raise InvalidParameter(
                        f"children of node {node.id} have prob sum {total}")
        leaf_stages = {n.stage for n in self.leaves()}
        if leaf_stages and leaf_stages != {self.last_stage}:
            raise InvalidParameter(f"leaves must all sit at stage {self.last_stage}, "
                                   f"found stages {sorted(leaf_stages)}")
        total = sum(self.unconditional_prob(lid) for lid in self.path_index)
        if abs(total - 1.0) > 1e-9:
            raise InvalidParameter(f"unconditional leaf probabilities sum to {total}")

    # -- serialization ---------------------------------------------------------

    def to_text(self) -> str:
        doc = {
            "format": "eamod-scenario-tree-v1",
            "branch_plan": list(self.branch_plan),
            "robust_horizon": self.robust_horizon,
            "last_stage": self.last_stage,
            "path_index": {str(k): v for k, v in self.path_index.items()},
            "nodes": [
                {
                    "id": n.id,
                    "stage": n.stage,
                    "parent": n.parent,
                    "prob": n.prob,
                    "children": list(n.children),
                    "demand": {"shape": list(n.value.demand.shape),
                               "data": n.value.demand.ravel(order="C").tolist()},
                    "chargers": n.value.chargers.tolist(),
                }
                for n in self.nodes
            ],
        }
        return json.dumps(doc)

    @classmethod
    def from_text(cls, text: str) -> "ScenarioTree":
        doc = json.loads(text)
        if doc.get("format") != "eamod-scenario-tree-v1":
            raise InvalidParameter(f"unknown tree format {doc.get('format')!r}")
        nodes = []
        for nd in doc["nodes"]:
            demand = np.asarray(nd["demand"]["data"],
                                dtype=np.int64).reshape(nd["demand"]["shape"], order="C")
            value = NodeValue(demand, np.asarray(nd["chargers"], dtype=np.int64))
            nodes.append(ScenarioNode(id=nd["id"], stage=nd["stage"], value=value,
                                      prob=nd["prob"], parent=nd["parent"],
                                      children=list(nd["children"])))
        return cls(nodes=nodes, branch_plan=list(doc["branch_plan"]),
                   robust_horizon=int(doc["robust_horizon"]),
                   path_index={int(k): v for k, v in doc["path_index"].items()},
                   last_stage=int(doc["last_stage"]))


# -- soft k-means ------------------------------------------------------------

def _soft_kmeans(features: np.ndarray, k: int, temperature: float,
                 rng: np.random.Generator):
    """Cluster rows of ``features``; returns (centroids, probs) in canonical
    (lexicographically sorted) order.  Operates on a lexicographically sorted
    copy of the samples so the result is independent of input order."""
    if temperature <= 0.0:
        raise InvalidParameter(f"temperature must be > 0, got {temperature}")
    order = np.lexsort(features.T[::-1])
    x = features[order]
    m, d = x.shape

    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    keep = sd > 1e-12
    if not np.any(keep):
        return x[:1].copy(), np.array([1.0])  # all samples identical
    z = (x[:, keep] - mu[keep]) / sd[keep]

    n_distinct = len(np.unique(z, axis=0))
    k_eff = min(k, n_distinct)

    # Farthest-point seeding; the stream only picks the first point (by rank
    # in the sorted sample order, hence permutation-invariant).
    first = int(rng.integers(m))
    centers = [z[first]]
    dist = np.linalg.norm(z - centers[0], axis=1)
    while len(centers) < k_eff:
        nxt = int(np.argmax(dist))  # argmax ties resolve to the lowest rank
        centers.append(z[nxt])
        dist = np.minimum(dist, np.linalg.norm(z - centers[-1], axis=1))
    c = np.asarray(centers)

    w = None
    for _ in range(50):
        d2 = ((z[:, None, :] - c[None, :, :]) ** 2).sum(axis=2)
        d2 -= d2.min(axis=1, keepdims=True)
        w = np.exp(-d2 / temperature)
        w /= w.sum(axis=1, keepdims=True)
        mass = w.sum(axis=0)
        new_c = c.copy()
        for j in range(k_eff):
            if mass[j] > 1e-12:
                new_c[j] = (w[:, j, None] * z).sum(axis=0) / mass[j]
            else:
                # Starved cluster: reseed at the sample farthest from its
                # current best centroid (deterministic).
                far = int(np.argmax(d2.min(axis=1)))
                new_c[j] = z[far]
        shift = np.abs(new_c - c).max()
        c = new_c
        if shift < 1e-6:
            break

    d2 = ((z[:, None, :] - c[None, :, :]) ** 2).sum(axis=2)
    d2 -= d2.min(axis=1, keepdims=True)
    w = np.exp(-d2 / temperature)
    w /= w.sum(axis=1, keepdims=True)
    probs = w.sum(axis=0) / m

    # Back to original units; counts must stay integral, probabilities are
    # not re-rounded.
    cent = np.repeat(mu[None, :], k_eff, axis=0)
    cent[:, keep] = c * sd[keep] + mu[keep]
    cent = np.maximum(np.round(cent), 0.0)

    rank = np.lexsort(np.vstack([-probs[None, :], cent.T[::-1]]))
    return cent[rank], probs[rank]


def reduce(fan: ScenarioFan, branch_plan: Sequence[int], temperature: float,
           seed: int, block_len: int = 1) -> ScenarioTree:
    """Reduce a fan to a scenario tree following the branch plan.

    Stage 1 clusters the fan's own samples; deeper stages resample the model
    conditioned on each centroid and cluster those draws.  Branch
    probabilities are normalized soft-membership masses.  With a block length
    above one, each plan entry spans that many time steps with the node value
    held constant.
    """
    branch_plan = list(branch_plan)
    if len(branch_plan) == 0 or any(k < 1 for k in branch_plan):
        raise InvalidParameter(f"branch_plan entries must be >= 1, got {branch_plan}")
    if fan.m_samples < max(branch_plan):
        raise InvalidParameter(
            f"fan has {fan.m_samples} samples but branch_plan needs {max(branch_plan)}")
    if block_len < 1:
        raise InvalidParameter(f"block_len must be >= 1, got {block_len}")
    if fan.stages < len(branch_plan):
        raise InvalidParameter(
            f"fan carries {fan.stages} stages but branch_plan has {len(branch_plan)}")

    n_stations = fan.root_value.demand.shape[0]
    robust_horizon = len(branch_plan) * block_len
    nodes = [ScenarioNode(id=0, stage=0, value=fan.root_value.copy(), prob=1.0)]

    def grow(parent_id: int, level: int, path: tuple) -> None:
        """Attach the level-th branching (plus its block chain) under parent."""
        if level == len(branch_plan):
            return
        if level == 0:
            feats = fan.stage_features(0)
        else:
            rng = stream(seed, "cond", level, *path)
            m = fan.m_samples
            t_bin = (fan.start_bin + 1 + level) % fan.model.n_time_bins
            dem = np.stack([forecast.sample(fan.model, t_bin, rng) for _ in range(m)])
            if fan.nominal_chargers is not None:
                nominal = fan.nominal_chargers[:, min(level, fan.nominal_chargers.shape[1] - 1)]
            else:
                nominal = np.zeros(n_stations, dtype=np.int64)
            if fan.charger_model is not None:
                chg = np.stack([forecast.sample_chargers(fan.charger_model, nominal,
                                                         t_bin, rng) for _ in range(m)])
            else:
                chg = np.repeat(nominal[None, :], m, axis=0)
            feats = np.concatenate([dem.reshape(m, -1), chg.reshape(m, -1)],
                                   axis=1).astype(float)

        centroids, probs = _soft_kmeans(feats, branch_plan[level], temperature,
                                        stream(seed, "init", level, *path))
        parent = nodes[parent_id]
        base_stage = parent.stage
        for idx in range(len(centroids)):
            flatc = centroids[idx]
            value = NodeValue(flatc[:n_stations * n_stations].reshape(n_stations, n_stations),
                              flatc[n_stations * n_stations:])
            attach_to = parent_id
            # a block repeats the value over block_len consecutive stages
            for rep in range(block_len):
                node = ScenarioNode(id=len(nodes), stage=base_stage + rep + 1,
                                    value=value.copy(),
                                    prob=float(probs[idx]) if rep == 0 else 1.0,
                                    parent=attach_to)
                nodes.append(node)
                nodes[attach_to].children.append(node.id)
                attach_to = node.id
            grow(attach_to, level + 1, path + (idx,))

    grow(0, 0, ())

    leaves = [n for n in nodes if not n.children]
    path_index = {leaf.id: s for s, leaf in enumerate(leaves)}
    return ScenarioTree(nodes=nodes, branch_plan=branch_plan,
                        robust_horizon=robust_horizon, path_index=path_index)


def anticipativity_groups(tree: ScenarioTree, t: int) -> list:
    """Partition of scenario ids that must share decisions at stage ``t``.

    Two scenarios fall in one block iff their paths agree through stage t.
    """
    if not 0 <= t <= tree.robust_horizon:
        raise InvalidParameter(f"t must lie in [0, {tree.robust_horizon}], got {t}")
    blocks: dict = {}
    for leaf_id, s in sorted(tree.path_index.items(), key=lambda kv: kv[1]):
        path = tree.path_to(leaf_id)
        anchor = path[min(t, len(path) - 1)]
        blocks.setdefault(anchor, []).append(s)
    return [sorted(v) for _, v in sorted(blocks.items())]


def extend_constant(tree: ScenarioTree, prediction_horizon: int) -> ScenarioTree:
    """Extend each leaf by a constant-value chain up to the prediction horizon.

    No branching happens beyond the robust horizon; each added node repeats
    the leaf's value with conditional probability 1, so the leaf count and
    all unconditional probabilities are unchanged.
    """
    if prediction_horizon < tree.robust_horizon:
        raise InvalidParameter(
            f"prediction_horizon {prediction_horizon} below robust horizon "
            f"{tree.robust_horizon}")
    if prediction_horizon == tree.last_stage:
        return tree
    nodes = [ScenarioNode(id=n.id, stage=n.stage, value=n.value.copy(), prob=n.prob,
                          parent=n.parent, children=list(n.children))
             for n in tree.nodes]
    new_path_index = {}
    for leaf in [n for n in nodes if not n.children]:
        scenario = tree.path_index[leaf.id]
        tail = leaf
        for stage in range(tree.last_stage + 1, prediction_horizon + 1):
            node = ScenarioNode(id=len(nodes), stage=stage, value=leaf.value.copy(),
                                prob=1.0, parent=tail.id)
            nodes.append(node)
            tail.children.append(node.id)
            tail = node
        new_path_index[tail.id] = scenario
    return ScenarioTree(nodes=nodes, branch_plan=list(tree.branch_plan),
                        robust_horizon=tree.robust_horizon,
                        path_index=new_path_index, last_stage=prediction_horizon)


def chain_tree(values: Sequence[NodeValue], root_value: NodeValue) -> ScenarioTree:
    """Single-scenario tree: the root followed by one node per stage value."""
    nodes = [ScenarioNode(id=0, stage=0, value=root_value.copy(), prob=1.0)]
    tail = nodes[0]
    for k, value in enumerate(values):
        node = ScenarioNode(id=len(nodes), stage=k + 1, value=value.copy(), prob=1.0,
                            parent=tail.id)
        nodes.append(node)
        tail.children.append(node.id)
        tail = node
    return ScenarioTree(nodes=nodes, branch_plan=[1] * len(values),
                        robust_horizon=len(values),
                        path_index={tail.id: 0})
