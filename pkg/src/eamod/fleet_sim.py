"""Discrete-time fleet simulator and the controllers that drive it.

The simulator executes one command per step against a ground truth that
deliberately differs from the forecaster family: arrivals are Poisson at the
model mean, and realized trip energy carries seeded log-normal noise.  It
never trusts a controller — commands are clipped to what is physically
available and every clip is logged.

Timing convention: a trip dispatched at step t with travel time tau completes
its arrival during step t + tau - 1 and is commandable from step t + tau,
exactly when the optimizer's flow conservation makes it available again.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from .errors import EmptyRun, InvalidParameter
from .forecast import CountModel, RobustParams, count_quantile, robustify
from .net_model import NetworkInstance, StageDecisions, trip_energy_bins
from .nbd import NbdConfig, run as nbd_run, topology_signature
from .scenario_tree import (NodeValue, build_fan, chain_tree, extend_constant,
                            reduce)
from .seeding import stream

ACT_IDLE = "idle"
ACT_PAX = "pax"
ACT_REB = "reb"
ACT_CHARGE = "charge"
ACT_V2G = "v2g"

LOW_SOC = 0.2
HIGH_SOC = 0.8


# -- state -------------------------------------------------------------------

@dataclass
class Vehicle:
    vid: int
    station: Optional[int]        # None while in transit
    soc: int                      # SoC bin
    activity: str = ACT_IDLE
    dest: Optional[int] = None
    arrive_at: Optional[int] = None
    pending_drop: int = 0         # realized trip bins, applied on arrival
    pending_kwh: float = 0.0
    armed: bool = False           # dipped below 20% since the last full cycle
    cycles: int = 0               # completed 20% -> 80% charge windows

    @property
    def in_transit(self) -> bool:
        return self.station is None


@dataclass
class Violation:
    step: int
    kind: str
    count: float


@dataclass
class Ledgers:
    bought_kwh_by_hour: Dict[int, float] = field(default_factory=dict)
    sold_kwh_by_hour: Dict[int, float] = field(default_factory=dict)
    cost_paid_eur: float = 0.0
    v2g_revenue_eur: float = 0.0
    consumed_kwh: float = 0.0
    km_by_activity: Dict[str, float] = field(
        default_factory=lambda: {ACT_PAX: 0.0, ACT_REB: 0.0})
    wait_samples_s: List[float] = field(default_factory=list)
    soc_events: int = 0           # quantized battery updates, for closure slack

    @property
    def bought_kwh(self) -> float:
        return sum(self.bought_kwh_by_hour.values())

    @property
    def sold_kwh(self) -> float:
        return sum(self.sold_kwh_by_hour.values())


@dataclass
class FleetState:
    instance: NetworkInstance
    vehicles: List[Vehicle]
    waiting: Dict[Tuple[int, int], deque]
    charger_free: np.ndarray
    clock: int = 0
    steps_run: int = 0
    ledgers: Ledgers = field(default_factory=Ledgers)
    violations: List[Violation] = field(default_factory=list)
    rng: np.random.Generator = None
    energy_cv: float = 0.0

    def fleet_counts(self) -> np.ndarray:
        """(N, levels) station-resident vehicle counts by SoC bin."""
        inst = self.instance
        fleet = np.zeros((inst.n_stations, inst.n_levels), dtype=np.int64)
        for v in self.vehicles:
            if not v.in_transit:
                fleet[v.station, v.soc] += 1
        return fleet

    def transit_counts(self) -> np.ndarray:
        """(N, levels, T) arrivals by usable stage relative to the clock."""
        inst = self.instance
        transit = np.zeros((inst.n_stations, inst.n_levels, inst.horizon))
        for v in self.vehicles:
            if v.in_transit:
                col = v.arrive_at + 1 - self.clock
                soc = max(v.soc - v.pending_drop, 0)
                transit[v.dest, soc, col] += 1
        return transit

    def backlog_counts(self) -> np.ndarray:
        inst = self.instance
        backlog = np.zeros((inst.n_stations, inst.n_stations))
        for (i, j), queue in self.waiting.items():
            backlog[i, j] = len(queue)
        return backlog

    def queued(self) -> int:
        return sum(len(q) for q in self.waiting.values())


def initial_state(instance: NetworkInstance, initial_fleet, *, seed: int = 0,
                  energy_cv: float = 0.0) -> FleetState:
    fleet = np.asarray(initial_fleet)
    if fleet.shape != (instance.n_stations, instance.n_levels):
        raise InvalidParameter("initial fleet must be (stations, levels)")
    if np.any(fleet < 0) or np.any(fleet != np.round(fleet)):
        raise InvalidParameter("initial fleet must hold nonnegative integers")
    if energy_cv < 0:
        raise InvalidParameter("energy_cv must be >= 0")
    vehicles = []
    for i in range(instance.n_stations):
        for b in range(instance.n_levels):
            for _ in range(int(fleet[i, b])):
                v = Vehicle(vid=len(vehicles), station=i, soc=b)
                v.armed = instance.soc_fraction(b) <= LOW_SOC
                vehicles.append(v)
    waiting = {(i, j): deque() for i in range(instance.n_stations)
               for j in range(instance.n_stations)}
    return FleetState(instance=instance, vehicles=vehicles, waiting=waiting,
                      charger_free=instance.chargers[:, 0].astype(np.int64),
                      rng=stream(seed, "sim-energy"), energy_cv=energy_cv)


# -- commands ----------------------------------------------------------------

@dataclass
class ControllerCommand:
    """Current-step dispatch counts, same shapes as one stage of decisions."""

    pax: np.ndarray     # (N, N, levels)
    reb: np.ndarray     # (N, N, levels)
    charge: np.ndarray  # (N, levels)
    v2g: np.ndarray     # (N, levels)

    def __post_init__(self):
        for name in ("pax", "reb", "charge", "v2g"):
            arr = np.asarray(getattr(self, name))
            if np.any(arr < 0) or np.any(arr != np.round(arr)):
                raise InvalidParameter(f"{name} commands must be counts >= 0")
            setattr(self, name, arr.astype(np.int64))

    @classmethod
    def zeros(cls, n: int, levels: int) -> "ControllerCommand":
        return cls(pax=np.zeros((n, n, levels)), reb=np.zeros((n, n, levels)),
                   charge=np.zeros((n, levels)), v2g=np.zeros((n, levels)))

    @classmethod
    def from_decisions(cls, dec: StageDecisions) -> "ControllerCommand":
        return cls(pax=np.rint(dec.pax), reb=np.rint(dec.reb),
                   charge=np.rint(dec.charge), v2g=np.rint(dec.v2g))


# -- one simulation step -----------------------------------------------------

def _set_soc(state: FleetState, v: Vehicle, soc: int) -> None:
    soc = min(max(soc, 0), state.instance.soc_bins)
    v.soc = soc
    frac = state.instance.soc_fraction(soc)
    if frac <= LOW_SOC:
        v.armed = True
    elif v.armed and frac >= HIGH_SOC:
        v.armed = False
        v.cycles += 1
    state.ledgers.soc_events += 1


def _clip(state: FleetState, kind: str, wanted: int, got: int) -> int:
    if got < wanted:
        state.violations.append(Violation(state.clock, kind, wanted - got))
    return got


def _idle_at(state: FleetState, reserved: set, i: int, b: int) -> List[Vehicle]:
    return [v for v in state.vehicles
            if not v.in_transit and v.station == i and v.soc == b
            and v.vid not in reserved]


def step(state: FleetState, demand, command: ControllerCommand, *,
         chargers=None, price_kwh: float = 0.0,
         sell_price_kwh: Optional[float] = None) -> FleetState:
    """Advance one step in place: enqueue demand, apply energy commands,
    dispatch, then complete due arrivals.  Commands beyond availability are
    clipped and logged, never trusted."""
    inst = state.instance
    n, levels = inst.n_stations, inst.n_levels
    t = state.clock
    tcol = t % inst.horizon
    hour = int(t * inst.step_minutes // 60) % 24
    dt_h = inst.step_minutes / 60.0
    sell_price = price_kwh if sell_price_kwh is None else sell_price_kwh
    demand = np.asarray(demand)
    if demand.shape != (n, n) or np.any(demand < 0):
        raise InvalidParameter("demand must be a nonnegative (N, N) matrix")
    nominal = inst.chargers[:, tcol].astype(np.int64)
    avail_chargers = nominal if chargers is None else \
        np.minimum(np.asarray(chargers, dtype=np.int64), nominal)

    for v in state.vehicles:
        if not v.in_transit:
            v.activity = ACT_IDLE

    # (1) new demand joins the queues
    for i in range(n):
        for j in range(n):
            for _ in range(int(demand[i, j])):
                state.waiting[(i, j)].append(t)

    reserved: set = set()

    # (2) charging and grid feed-in, bounded by realized charger slots
    cap = avail_chargers.copy()
    drop = inst.v2g_drop_bins()
    for i in range(n):
        for b in range(levels):
            want = int(command.charge[i, b])
            if want:
                pool = _idle_at(state, reserved, i, b)
                take = _clip(state, "charge_unavailable", want,
                             min(want, len(pool)))
                take = _clip(state, "charge_capacity", take,
                             min(take, int(cap[i])))
                for v in pool[:take]:
                    reserved.add(v.vid)
                    v.activity = ACT_CHARGE
                    gain = inst.charge_gain_bins(b)
                    headroom_kwh = (inst.soc_bins - b) * inst.bin_kwh
                    kwh = float(min(inst.charge_kw[b] * dt_h, headroom_kwh))
                    _set_soc(state, v, b + gain)
                    state.ledgers.bought_kwh_by_hour[hour] = \
                        state.ledgers.bought_kwh_by_hour.get(hour, 0.0) + kwh
                    state.ledgers.cost_paid_eur += kwh * price_kwh
                cap[i] -= take
            want = int(command.v2g[i, b])
            if want:
                if drop < 1 or b < drop:
                    _clip(state, "v2g_soc", want, 0)
                    continue
                pool = _idle_at(state, reserved, i, b)
                take = _clip(state, "v2g_unavailable", want,
                             min(want, len(pool)))
                take = _clip(state, "v2g_capacity", take, min(take, int(cap[i])))
                for v in pool[:take]:
                    reserved.add(v.vid)
                    v.activity = ACT_V2G
                    kwh = float(min(inst.v2g_kw * dt_h, b * inst.bin_kwh))
                    _set_soc(state, v, b - drop)
                    state.ledgers.sold_kwh_by_hour[hour] = \
                        state.ledgers.sold_kwh_by_hour.get(hour, 0.0) + kwh
                    state.ledgers.v2g_revenue_eur += kwh * sell_price
                cap[i] -= take
    state.charger_free = cap

    # (3) dispatches: passengers matched FIFO, then empty rebalancing
    for i in range(n):
        for j in range(n):
            lag = int(inst.travel_time[i, j, tcol])
            nominal_kwh = int(inst.travel_energy[i, j, tcol]) * inst.bin_kwh
            for b in range(levels):
                want = int(command.pax[i, j, b])
                if not want:
                    continue
                if b < int(inst.min_soc[i, j]):
                    _clip(state, "pax_below_min_soc", want, 0)
                    continue
                pool = _idle_at(state, reserved, i, b)
                queue = state.waiting[(i, j)]
                take = _clip(state, "pax_unavailable", want,
                             min(want, len(pool)))
                take = _clip(state, "pax_no_waiting", take,
                             min(take, len(queue)))
                for v in pool[:take]:
                    bins, kwh = _realized_bins(state, nominal_kwh)
                    if bins > v.soc:
                        # refusal leaves the passenger at the queue front
                        state.violations.append(
                            Violation(t, "trip_refused", 1))
                        continue
                    arrived = queue.popleft()
                    state.ledgers.wait_samples_s.append(
                        (t - arrived) * inst.step_minutes * 60.0)
                    reserved.add(v.vid)
                    _depart(state, v, i, j, lag, bins, kwh, ACT_PAX)
            for b in range(levels):
                want = int(command.reb[i, j, b])
                if not want or i == j:
                    continue
                pool = _idle_at(state, reserved, i, b)
                take = _clip(state, "reb_unavailable", want,
                             min(want, len(pool)))
                for v in pool[:take]:
                    bins, kwh = _realized_bins(state, nominal_kwh)
                    if bins > v.soc:
                        state.violations.append(
                            Violation(t, "trip_refused", 1))
                        continue
                    reserved.add(v.vid)
                    _depart(state, v, i, j, lag, bins, kwh, ACT_REB)

    # (4) arrivals due this step land; SoC drops by the realized energy
    for v in state.vehicles:
        if v.in_transit and v.arrive_at == t:
            v.station = v.dest
            v.dest = None
            v.arrive_at = None
            _set_soc(state, v, v.soc - v.pending_drop)
            state.ledgers.consumed_kwh += v.pending_kwh
            v.pending_drop = 0
            v.pending_kwh = 0.0
            v.activity = ACT_IDLE

    state.clock += 1
    state.steps_run += 1
    return state


def _realized_bins(state: FleetState, nominal_kwh: float) -> Tuple[int, float]:
    """Draw realized trip energy (mean-one log-normal noise) and quantize."""
    if nominal_kwh <= 0.0:
        return 0, 0.0
    kwh = nominal_kwh
    if state.energy_cv > 0.0:
        sigma = math.sqrt(math.log(1.0 + state.energy_cv ** 2))
        kwh *= float(np.exp(state.rng.normal(-0.5 * sigma * sigma, sigma)))
    inst = state.instance
    return trip_energy_bins(kwh, inst.battery_kwh, inst.bin_width), kwh


def _depart(state: FleetState, v: Vehicle, i: int, j: int, lag: int,
            bins: int, kwh: float, activity: str) -> None:
    v.activity = activity
    v.station = None
    v.dest = j
    v.arrive_at = state.clock + lag - 1   # a 1-step trip lands this very step
    v.pending_drop = bins
    v.pending_kwh = kwh
    state.ledgers.km_by_activity[activity] += float(
        state.instance.distance_km[i, j])


# -- reference controllers ---------------------------------------------------

def controller_rb(state: FleetState) -> ControllerCommand:
    """Reactive baseline: charge below 20% up to 80%, serve the local queue
    greedily, never rebalance, never feed in."""
    inst = state.instance
    n, levels = inst.n_stations, inst.n_levels
    cmd = ControllerCommand.zeros(n, levels)
    tcol = state.clock % inst.horizon
    free = inst.chargers[:, tcol].astype(np.int64).copy()
    reserved: set = set()

    by_station: Dict[int, List[Vehicle]] = {i: [] for i in range(n)}
    for v in state.vehicles:
        if not v.in_transit:
            by_station[v.station].append(v)

    for i in range(n):
        for v in sorted(by_station[i], key=lambda u: (u.soc, u.vid)):
            frac = inst.soc_fraction(v.soc)
            starts = frac < LOW_SOC
            continues = v.activity == ACT_CHARGE and frac < HIGH_SOC
            if (starts or continues) and free[i] > 0 and v.soc < inst.soc_bins:
                cmd.charge[i, v.soc] += 1
                free[i] -= 1
                reserved.add(v.vid)

    for i in range(n):
        requests = []
        for j in range(n):
            for k, arrived in enumerate(state.waiting[(i, j)]):
                requests.append((arrived, k, j))
        for _, _, j in sorted(requests):
            floor = int(inst.min_soc[i, j])
            pool = [v for v in by_station[i]
                    if v.vid not in reserved and v.soc >= floor]
            if not pool:
                continue
            v = max(pool, key=lambda u: (u.soc, -u.vid))
            reserved.add(v.vid)
            cmd.pax[i, j, v.soc] += 1
    return cmd


@dataclass
class TreeConfig:
    """How a controller turns the forecaster into a scenario tree."""

    branch_plan: Tuple[int, ...] = (2, 2)
    m_samples: int = 50
    temperature: float = 1.0
    block_len: int = 1
    seed: int = 0
    robust: Optional[RobustParams] = None
    demand_quantile: float = 0.8

    def __post_init__(self):
        self.branch_plan = tuple(int(k) for k in self.branch_plan)
        if not self.branch_plan or any(k < 1 for k in self.branch_plan):
            raise InvalidParameter("branch_plan entries must be >= 1")
        if not 0.0 < self.demand_quantile < 1.0:
            raise InvalidParameter("demand_quantile must lie in (0, 1)")


class OptimizingController:
    """Receding-horizon controller: snapshot -> tree -> decomposition -> step.

    Modes: "dmp" plans on forecast means with nominal matrices; "rcc" plans
    on demand quantiles with robustified matrices; "smpc" plans on a reduced
    scenario tree with robustified matrices.  An all-ones branch plan makes
    "smpc" use the mean chain directly — a single-scenario tree carries no
    sampling information, so it degenerates to "dmp" demand exactly.
    Cut pools carry over between steps only while the tree is unchanged.
    """

    def __init__(self, instance: NetworkInstance, model: CountModel,
                 mode: str, tree_config: Optional[TreeConfig] = None,
                 nbd_config: Optional[NbdConfig] = None):
        if mode not in ("smpc", "dmp", "rcc"):
            raise InvalidParameter(f"unknown controller mode {mode!r}")
        self.instance = instance
        self.model = model
        self.mode = mode
        self.tree_config = tree_config if tree_config is not None else TreeConfig()
        self.nbd_config = nbd_config if nbd_config is not None else NbdConfig()
        if mode == "dmp" or self.tree_config.robust is None:
            self.plan_instance = instance
        else:
            self.plan_instance = robustify(instance, self.tree_config.robust)
        self._pools = None
        self._signature = None
        self._previous = None   # (tree, decisions_by_node) for time fallback
        self.fallback_steps: List[int] = []

    def _mean_chain(self, t: int, quantile: Optional[float]) -> "ScenarioTree":
        inst, model = self.plan_instance, self.model
        bins = model.n_time_bins

        def stage_demand(k: int) -> np.ndarray:
            mean = model.mean[(t + k) % bins]
            if quantile is None:
                return np.rint(mean).astype(np.int64)
            disp = model.dispersion[(t + k) % bins]
            out = np.zeros_like(mean, dtype=np.int64)
            for idx in np.ndindex(mean.shape):
                out[idx] = count_quantile(float(mean[idx]), float(disp[idx]),
                                          quantile)
            return out

        def node_val(k: int) -> NodeValue:
            cap = inst.chargers[:, k % inst.horizon]
            return NodeValue(stage_demand(k), cap)

        values = [node_val(k) for k in range(1, inst.horizon)]
        return chain_tree(values, node_val(0))

    def _sampled_tree(self, t: int) -> "ScenarioTree":
        inst, cfg, model = self.plan_instance, self.tree_config, self.model
        stages = len(cfg.branch_plan) * cfg.block_len
        seed_t = int(stream(cfg.seed, "ctrl-tree", t).integers(2 ** 31))
        root_demand = np.rint(model.mean[t % model.n_time_bins]).astype(np.int64)
        fan = build_fan(model, cfg.m_samples, stages, seed_t,
                        nominal_chargers=inst.chargers[:, 0],
                        start_bin=t % model.n_time_bins,
                        root_value=NodeValue(root_demand,
                                             inst.chargers[:, 0]))
        tree = reduce(fan, cfg.branch_plan, cfg.temperature, seed_t,
                      block_len=cfg.block_len)
        return extend_constant(tree, inst.horizon - 1)

    def __call__(self, state: FleetState) -> ControllerCommand:
        inst = self.plan_instance
        t = state.clock
        if self.mode == "dmp":
            tree = self._mean_chain(t, None)
        elif self.mode == "rcc":
            tree = self._mean_chain(t, self.tree_config.demand_quantile)
        elif all(k == 1 for k in self.tree_config.branch_plan):
            tree = self._mean_chain(t, None)
        else:
            tree = self._sampled_tree(t)

        signature = topology_signature(tree)
        pools = self._pools if signature == self._signature else None
        result = nbd_run(inst, tree, self.nbd_config,
                         initial_fleet=state.fleet_counts(),
                         in_transit=state.transit_counts(),
                         initial_backlog=state.backlog_counts(),
                         initial_pools=pools)
        if result.termination == "time":
            self.fallback_steps.append(t)
            command = self._shifted_previous(inst)
        else:
            command = ControllerCommand.from_decisions(result.stage0)
            self._previous = (tree, result.decisions_by_node)
        self._pools = result.pools
        self._signature = signature
        return command

    def _shifted_previous(self, inst: NetworkInstance) -> ControllerCommand:
        if self._previous is None:
            return ControllerCommand.zeros(inst.n_stations, inst.n_levels)
        tree, decisions = self._previous
        root = tree.root
        child = max(root.children,
                    key=lambda c: (tree.nodes[c].prob, -c), default=None)
        if child is None:
            return ControllerCommand.zeros(inst.n_stations, inst.n_levels)
        return ControllerCommand.from_decisions(decisions[child])


def controller_smpc(state: FleetState, model: CountModel,
                    tree_config: Optional[TreeConfig] = None,
                    nbd_config: Optional[NbdConfig] = None) -> ControllerCommand:
    return OptimizingController(state.instance, model, "smpc", tree_config,
                                nbd_config)(state)


def controller_dmp(state: FleetState, model: CountModel,
                   tree_config: Optional[TreeConfig] = None,
                   nbd_config: Optional[NbdConfig] = None) -> ControllerCommand:
    return OptimizingController(state.instance, model, "dmp", tree_config,
                                nbd_config)(state)


def controller_rcc(state: FleetState, model: CountModel,
                   tree_config: Optional[TreeConfig] = None,
                   nbd_config: Optional[NbdConfig] = None) -> ControllerCommand:
    return OptimizingController(state.instance, model, "rcc", tree_config,
                                nbd_config)(state)


# -- whole runs and reporting ------------------------------------------------

@dataclass
class SimResult:
    state: FleetState
    report: dict


def simulate(instance: NetworkInstance, controller: Callable, model: CountModel,
             *, steps: int, seed: int, initial_fleet,
             energy_cv: float = 0.0, price_kwh=None,
             sell_price_kwh=None, charger_model: Optional[CountModel] = None,
             ) -> SimResult:
    """Closed loop: command, realize Poisson demand, step.  Same seed, same
    bytes out."""
    if steps < 1:
        raise InvalidParameter("steps must be >= 1")
    prices = np.full(24, 0.06) if price_kwh is None else \
        np.asarray(price_kwh, dtype=float)
    if prices.shape != (24,):
        raise InvalidParameter("price_kwh must hold 24 hourly values")
    sell = prices if sell_price_kwh is None else \
        np.asarray(sell_price_kwh, dtype=float)
    state = initial_state(instance, initial_fleet, seed=seed,
                          energy_cv=energy_cv)
    demand_rng = stream(seed, "sim-demand")
    charger_rng = stream(seed, "sim-chargers")
    n_bins = model.n_time_bins
    for _ in range(steps):
        t = state.clock
        command = controller(state)
        demand = demand_rng.poisson(model.mean[t % n_bins]).astype(np.int64)
        chargers = None
        if charger_model is not None:
            nominal = instance.chargers[:, t % instance.horizon]
            draw = charger_rng.poisson(
                charger_model.mean[t % charger_model.n_time_bins])
            chargers = np.minimum(nominal, draw.astype(np.int64))
        hour = int(t * instance.step_minutes // 60) % 24
        step(state, demand, command, chargers=chargers,
             price_kwh=float(prices[hour]), sell_price_kwh=float(sell[hour]))
    return SimResult(state=state, report=metrics(state))


def metrics(state: FleetState) -> dict:
    """Operational report; wait statistics are absent when nothing was served."""
    if state.steps_run == 0:
        raise EmptyRun("no steps simulated")
    led = state.ledgers
    n_veh = len(state.vehicles)
    days = state.steps_run * state.instance.step_minutes / (60.0 * 24.0)
    waits = np.asarray(led.wait_samples_s)
    if waits.size:
        wait_stats = {
            "wait_median_s": float(np.median(waits)),
            "wait_p75_s": float(np.percentile(waits, 75)),
            "wait_p95_s": float(np.percentile(waits, 95)),
            "wait_mean_s": float(waits.mean()),
            "wait_over_600s": int(np.sum(waits > 600.0)),
        }
    else:
        wait_stats = {"wait_median_s": None, "wait_p75_s": None,
                      "wait_p95_s": None, "wait_mean_s": None,
                      "wait_over_600s": 0}
    bought = led.bought_kwh
    total_km = sum(led.km_by_activity.values())
    floor = state.instance.end_soc_min * state.instance.soc_bins
    below_end_soc = sum(1 for v in state.vehicles
                        if v.soc - v.pending_drop < floor - 1e-9)
    return {
        **wait_stats,
        "served": len(led.wait_samples_s),
        "still_waiting": state.queued(),
        "total_km_per_vehicle": total_km / n_veh if n_veh else 0.0,
        "reb_km_per_vehicle":
            led.km_by_activity[ACT_REB] / n_veh if n_veh else 0.0,
        "mean_price_eur_per_kwh":
            led.cost_paid_eur / bought if bought > 0 else None,
        "energy_bought_kwh": bought,
        "energy_sold_kwh": led.sold_kwh,
        "v2g_revenue_eur": led.v2g_revenue_eur,
        "charge_cycles_per_vehicle_day":
            sum(v.cycles for v in state.vehicles) / (n_veh * days)
            if n_veh and days > 0 else 0.0,
        "end_soc_ok": below_end_soc == 0,
        "vehicles_below_end_soc": below_end_soc,
        "violations": len(state.violations),
        "steps": state.steps_run,
        "vehicles": n_veh,
    }
