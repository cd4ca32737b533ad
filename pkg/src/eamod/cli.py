"""Command-line pipeline: trip logs to stations, forecasts, trees, and runs.

Subcommands mirror the workflow.  ``ingest`` clusters raw trips into a station
network and historical demand counts; ``fit`` turns counts into a forecaster;
``tree`` samples and reduces a scenario tree; ``solve`` runs the decomposition
once; ``simulate`` closes the loop in the simulator; ``sweep`` runs the
vehicle/battery/fleet/charger grid; ``report`` pretty-prints saved outputs.

Every file an eamod command writes gains a sibling ``<name>.manifest.json``
recording the configuration hash, seed, and package version that produced it,
and reruns with identical inputs produce byte-identical files.

Exit codes: 0 on success, 2 on invalid input, 3 on a solver failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .errors import InfeasibleDecision, InvalidParameter, ModelBug
from .fleet_sim import OptimizingController, TreeConfig, controller_rb, simulate
from .forecast import CountModel, fit_moments
from .nbd import NbdConfig, run as nbd_run
from .net_model import (PRICE_LABELS, NetworkInstance, TerminalParams,
                        trip_energy_bins)
from .scenario_tree import ScenarioTree, build_fan, extend_constant, reduce
from .seeding import stream
from .vehicle_energy import arc_energy_kwh, charge_power, vehicle_preset

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_SOLVER = 3

TRIP_COLUMNS = ("pickup_x", "pickup_y", "dropoff_x", "dropoff_y",
                "epoch_minutes")
BATTERY_CHOICES = (40.0, 70.0, 100.0)
MINUTES_PER_DAY = 24 * 60


# -- price profiles ------------------------------------------------------------

def price_profile_path(label: str) -> Path:
    """Path of one of the shipped, editable 24-value tariff files."""
    if label not in PRICE_LABELS:
        raise InvalidParameter(
            f"unknown price profile {label!r}, choose from {PRICE_LABELS}")
    return Path(str(resources.files("eamod").joinpath("data", f"{label}.prices")))


def read_price_file(path) -> np.ndarray:
    """Parse a tariff file: 24 hourly EUR/kWh values, # comments allowed."""
    values = []
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            values.append(float(line))
    hourly = np.asarray(values, dtype=float)
    if hourly.shape != (24,):
        raise InvalidParameter(
            f"{path}: price file must hold 24 values, found {hourly.size}")
    if not np.all(np.isfinite(hourly)) or np.any(hourly < 0.0):
        raise InvalidParameter(f"{path}: prices must be finite and >= 0")
    return hourly


def resolve_price(price: str) -> np.ndarray:
    """A profile label resolves to its shipped file; anything else is a path."""
    if price in PRICE_LABELS:
        return read_price_file(price_profile_path(price))
    if Path(price).exists():
        return read_price_file(price)
    raise InvalidParameter(
        f"price {price!r} is neither a profile in {PRICE_LABELS} nor a file")


# -- manifests and deterministic file output -----------------------------------

def _canonical(doc) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def config_hash(params: dict) -> str:
    return hashlib.sha256(_canonical(params).encode("utf-8")).hexdigest()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def write_output(path, text: str, *, command: str, seed: int,
                 params: dict) -> None:
    """Write ``text`` plus a manifest that pins its exact provenance."""
    path = Path(path)
    if path.parent != Path(""):
        path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    manifest = {
        "format": "eamod-manifest-v1",
        "version": __version__,
        "command": command,
        "seed": int(seed),
        "config_sha256": config_hash(_jsonable(params)),
    }
    Path(str(path) + ".manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n")


def _dump_json(doc) -> str:
    return json.dumps(_jsonable(doc), sort_keys=True, indent=2) + "\n"


def _csv_text(fields: Sequence[str], rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(fields)
    for row in rows:
        writer.writerow(["" if row.get(f) is None else row.get(f)
                         for f in fields])
    return buf.getvalue()


# -- trip ingestion ------------------------------------------------------------

def _cluster_stations(points: np.ndarray, k: int,
                      rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Hard k-means with distance-squared seeding; centers come back in
    lexicographic order so station ids are stable across runs."""
    m = points.shape[0]
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[int(rng.integers(m))]
    d2 = ((points - centers[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        total = float(d2.sum())
        if total <= 0.0:
            idx = int(rng.integers(m))
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total))
            idx = min(idx, m - 1)
        centers[c] = points[idx]
        d2 = np.minimum(d2, ((points - centers[c]) ** 2).sum(axis=1))

    for _ in range(100):
        dist2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = dist2.argmin(axis=1)
        moved = False
        for c in range(k):
            member = labels == c
            if member.any():
                new = points[member].mean(axis=0)
                if not np.allclose(new, centers[c]):
                    centers[c] = new
                    moved = True
        if not moved:
            break

    order = np.lexsort(centers.T[::-1])
    centers = centers[order]
    remap = np.empty(k, dtype=np.int64)
    remap[order] = np.arange(k)
    return centers, remap[labels]


def _nearest_station(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    dist2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    return dist2.argmin(axis=1)


@dataclass
class IngestResult:
    instance: NetworkInstance
    history: List[np.ndarray]     # one (time bins, N, N) count array per day
    stations: np.ndarray          # (N, 2) center coordinates, km
    rows_total: int
    rows_rejected: int


def _parse_trip_rows(csv_path):
    """Yield (pickup xy, dropoff xy, epoch minute) per good row; count bad ones."""
    good, rejected = [], 0
    with open(csv_path, newline="") as handle:
        for row in csv.DictReader(handle):
            try:
                values = [float(row[c]) for c in TRIP_COLUMNS]
            except (KeyError, TypeError, ValueError):
                rejected += 1
                continue
            if not all(math.isfinite(v) for v in values) or values[4] < 0:
                rejected += 1
                continue
            good.append(values)
    return good, rejected


def ingest_trips(csv_path, n_stations: int, seed: int, *,
                 bin_minutes: float = 10.0, speed_kmh: float = 30.0,
                 vehicle: str = "vehicle2", battery_kwh: float = 70.0,
                 soc_bins: int = 50, horizon: int = 6,
                 chargers_per_station: int = 4, margin_bins: int = 0,
                 v2g_kw: float = 22.0, fare_base: float = 2.0,
                 fare_per_km: float = 1.0, reb_cost_per_km: float = 0.2,
                 price: str = "flat", end_soc_min: float = 0.3,
                 terminal: Optional[TerminalParams] = None) -> IngestResult:
    """Cluster trip pickups into stations and bin trips into demand counts.

    Coordinates are kilometers.  Station-to-station distances become travel
    times at the mean fleet speed and energies through the vehicle model, so
    the returned instance is ready to solve; the count matrices (one per
    observed day) feed the forecaster.
    """
    if n_stations < 1:
        raise InvalidParameter("n_stations must be >= 1")
    if bin_minutes <= 0 or MINUTES_PER_DAY % bin_minutes:
        raise InvalidParameter("bin_minutes must divide a day")
    params = vehicle_preset(vehicle)
    hourly = resolve_price(price)

    good, rejected = _parse_trip_rows(csv_path)
    if not good:
        raise InvalidParameter(f"{csv_path}: no usable trip rows")
    trips = np.asarray(good)
    pickups = trips[:, 0:2]
    if np.unique(pickups, axis=0).shape[0] < n_stations:
        raise InvalidParameter(
            f"need at least {n_stations} distinct pickup points, "
            f"got {np.unique(pickups, axis=0).shape[0]}")

    centers, origins = _cluster_stations(pickups, n_stations,
                                         stream(seed, "ingest-kmeans"))
    dests = _nearest_station(trips[:, 2:4], centers)

    slots = int(MINUTES_PER_DAY // bin_minutes)
    epochs = trips[:, 4].astype(np.int64)
    days = epochs // MINUTES_PER_DAY
    day_lo, day_hi = int(days.min()), int(days.max())
    history = [np.zeros((slots, n_stations, n_stations), dtype=np.int64)
               for _ in range(day_hi - day_lo + 1)]
    slot_of = (epochs % MINUTES_PER_DAY) // int(bin_minutes)
    for d, s, o, j in zip(days, slot_of, origins, dests):
        history[int(d) - day_lo][int(s), int(o), int(j)] += 1

    n, levels = n_stations, soc_bins + 1
    diff = centers[:, None, :] - centers[None, :, :]
    dist_km = np.sqrt((diff ** 2).sum(axis=2))
    speed_mps = speed_kmh / 3.6

    minutes = dist_km / speed_kmh * 60.0
    steps = np.maximum(np.ceil(minutes / bin_minutes - 1e-9), 1).astype(np.int64)
    np.fill_diagonal(steps, 1)
    tt = np.repeat(steps[:, :, None], horizon, axis=2)

    bin_width = 1.0 / soc_bins
    te2 = np.zeros((n, n), dtype=np.int64)
    for i in range(n):
        for j in range(n):
            kwh = arc_energy_kwh(float(dist_km[i, j]), speed_mps, params,
                                 battery_kwh)
            te2[i, j] = trip_energy_bins(max(kwh, 0.0), battery_kwh, bin_width)
    np.fill_diagonal(te2, 0)
    te = np.repeat(te2[:, :, None], horizon, axis=2)
    min_soc = np.clip(te2 + margin_bins, 0, soc_bins)

    charge_kw = np.array([charge_power(b / soc_bins) for b in range(levels)])
    dt_h = bin_minutes / 60.0
    hour_of = [int(t * bin_minutes // 60) % 24 for t in range(horizon)]
    charge_cost = np.zeros((n, levels, horizon))
    v2g_revenue = np.zeros((n, levels, horizon))
    for t in range(horizon):
        charge_cost[:, :, t] = hourly[hour_of[t]] * charge_kw[None, :] * dt_h
        v2g_revenue[:, :, t] = hourly[hour_of[t]] * v2g_kw * dt_h

    fares = np.repeat((fare_base + fare_per_km * dist_km)[:, :, None],
                      levels, axis=2)
    rebc = np.repeat((reb_cost_per_km * dist_km)[:, :, None], levels, axis=2)

    instance = NetworkInstance(
        n_stations=n, soc_bins=soc_bins, horizon=horizon,
        step_minutes=float(bin_minutes), battery_kwh=float(battery_kwh),
        travel_time=tt, travel_energy=te, min_soc=min_soc,
        chargers=np.full((n, horizon), int(chargers_per_station),
                         dtype=np.int64),
        charge_kw=charge_kw, v2g_kw=float(v2g_kw),
        reb_cost=rebc, pax_revenue=fares,
        charge_cost=charge_cost, v2g_revenue=v2g_revenue,
        terminal=terminal if terminal is not None
        else TerminalParams(b_max=0.3, a=10.0, q_max=3.0),
        end_soc_min=float(end_soc_min), distance_km=dist_km,
    )
    return IngestResult(instance=instance, history=history, stations=centers,
                        rows_total=len(good) + rejected, rows_rejected=rejected)


def counts_to_text(history: Sequence[np.ndarray], bin_minutes: float) -> str:
    shape = list(history[0].shape)
    return json.dumps({
        "format": "eamod-counts-v1",
        "bin_minutes": bin_minutes,
        "shape": shape,
        "days": [day.ravel(order="C").tolist() for day in history],
    })


def counts_from_text(text: str) -> Tuple[List[np.ndarray], float]:
    doc = json.loads(text)
    if doc.get("format") != "eamod-counts-v1":
        raise InvalidParameter(f"unknown counts format {doc.get('format')!r}")
    shape = tuple(doc["shape"])
    history = [np.asarray(day, dtype=np.int64).reshape(shape, order="C")
               for day in doc["days"]]
    return history, float(doc["bin_minutes"])


# -- run configuration and sweeps ----------------------------------------------

@dataclass
class RunConfig:
    """One closed-loop campaign plus the sweep grids around it."""

    instance: str
    model: str
    controller: str = "rb"
    steps: int = 144
    seed: int = 0
    price: str = "flat"
    energy_cv: float = 0.0
    branch_plan: Tuple[int, ...] = (2, 2)
    samples: int = 50
    temperature: float = 1.0
    gap_tol: float = 1e-2
    max_iters: int = 30
    time_limit_s: float = 600.0
    vehicles: Tuple[str, ...] = ("vehicle2",)
    batteries: Tuple[float, ...] = (70.0,)
    fleets: Tuple[int, ...] = (20,)
    chargers: Tuple[int, ...] = (4,)
    speed_kmh: float = 30.0
    workers: int = 4

    def __post_init__(self):
        for name in ("instance", "model"):
            if not Path(getattr(self, name)).exists():
                raise InvalidParameter(f"{name} file {getattr(self, name)!r} "
                                       "does not exist")
        if self.controller not in ("rb", "smpc", "dmp", "rcc"):
            raise InvalidParameter(f"unknown controller {self.controller!r}")
        if self.steps < 1:
            raise InvalidParameter("steps must be >= 1")
        self.branch_plan = tuple(int(k) for k in self.branch_plan)
        for name in ("vehicles", "batteries", "fleets", "chargers"):
            grid = tuple(getattr(self, name))
            if not grid:
                raise InvalidParameter(f"sweep grid {name} must be non-empty")
            setattr(self, name, grid)
        for v in self.vehicles:
            vehicle_preset(v)
        for b in self.batteries:
            if float(b) not in BATTERY_CHOICES:
                raise InvalidParameter(
                    f"battery_kwh must be one of {BATTERY_CHOICES}, got {b}")
        if any(f < 0 for f in self.fleets) or any(c < 0 for c in self.chargers):
            raise InvalidParameter("fleet and charger counts must be >= 0")
        if self.workers < 1:
            raise InvalidParameter("workers must be >= 1")
        resolve_price(self.price)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        doc = json.loads(Path(path).read_text())
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise InvalidParameter(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)

    def to_params(self) -> dict:
        return _jsonable(dataclasses.asdict(self))


def spread_fleet(instance: NetworkInstance, size: int) -> np.ndarray:
    """Round-robin the fleet across stations, everyone fully charged."""
    fleet = np.zeros((instance.n_stations, instance.n_levels), dtype=np.int64)
    for v in range(int(size)):
        fleet[v % instance.n_stations, instance.soc_bins] += 1
    return fleet


def _cell_instance(base: NetworkInstance, vehicle: str, battery_kwh: float,
                   chargers: int, speed_kmh: float) -> NetworkInstance:
    """Re-derive the energy surface of ``base`` for one sweep cell."""
    params = vehicle_preset(vehicle)
    speed_mps = speed_kmh / 3.6
    n = base.n_stations
    bin_width = 1.0 / base.soc_bins
    te2 = np.zeros((n, n), dtype=np.int64)
    for i in range(n):
        for j in range(n):
            kwh = arc_energy_kwh(float(base.distance_km[i, j]), speed_mps,
                                 params, battery_kwh)
            te2[i, j] = trip_energy_bins(max(kwh, 0.0), battery_kwh, bin_width)
    np.fill_diagonal(te2, 0)
    te = np.repeat(te2[:, :, None], base.horizon, axis=2)
    margin = base.min_soc - base.travel_energy.max(axis=2)
    min_soc = np.clip(te2 + margin, 0, base.soc_bins)
    return dataclasses.replace(
        base, battery_kwh=float(battery_kwh), travel_energy=te,
        min_soc=min_soc,
        chargers=np.full_like(base.chargers, int(chargers)))


def _make_controller(config: RunConfig, instance: NetworkInstance,
                     model: CountModel):
    if config.controller == "rb":
        return controller_rb
    return OptimizingController(
        instance, model, config.controller,
        tree_config=TreeConfig(branch_plan=config.branch_plan,
                               m_samples=config.samples,
                               temperature=config.temperature,
                               seed=config.seed),
        nbd_config=NbdConfig(gap_tol=config.gap_tol,
                             max_iters=config.max_iters,
                             time_limit_s=config.time_limit_s))


SWEEP_FIELDS = (
    "vehicle", "battery_kwh", "fleet", "chargers",
    "wait_median_s", "wait_p75_s", "wait_p95_s", "wait_mean_s",
    "wait_over_600s", "served", "still_waiting",
    "total_km_per_vehicle", "reb_km_per_vehicle",
    "mean_price_eur_per_kwh", "energy_bought_kwh", "energy_sold_kwh",
    "v2g_revenue_eur", "charge_cycles_per_vehicle_day",
    "end_soc_ok", "vehicles_below_end_soc", "violations", "steps", "vehicles",
)
CYCLE_FIELDS = ("vehicle", "battery_kwh", "fleet", "chargers",
                "vid", "cycles", "cycles_per_day")
FAIL_FIELDS = ("vehicle", "battery_kwh", "fleet", "chargers", "error")


@dataclass
class SweepResult:
    rows: List[dict] = field(default_factory=list)
    cycle_rows: List[dict] = field(default_factory=list)
    failures: List[dict] = field(default_factory=list)

    def rows_csv(self) -> str:
        return _csv_text(SWEEP_FIELDS, self.rows)

    def cycles_csv(self) -> str:
        return _csv_text(CYCLE_FIELDS, self.cycle_rows)

    def failures_csv(self) -> str:
        return _csv_text(FAIL_FIELDS, self.failures)


def _run_cell(config: RunConfig, base: NetworkInstance, model: CountModel,
              cell: tuple):
    vehicle, battery, fleet_size, charger_count = cell
    instance = _cell_instance(base, vehicle, battery, charger_count,
                              config.speed_kmh)
    controller = _make_controller(config, instance, model)
    result = simulate(instance, controller, model, steps=config.steps,
                      seed=config.seed,
                      initial_fleet=spread_fleet(instance, fleet_size),
                      energy_cv=config.energy_cv,
                      price_kwh=resolve_price(config.price))
    head = {"vehicle": vehicle, "battery_kwh": battery,
            "fleet": fleet_size, "chargers": charger_count}
    row = dict(head)
    for name in SWEEP_FIELDS[4:]:
        row[name] = _jsonable(result.report[name])
    days = config.steps * instance.step_minutes / (60.0 * 24.0)
    cycles = [dict(head, vid=v.vid, cycles=v.cycles,
                   cycles_per_day=v.cycles / days)
              for v in result.state.vehicles]
    return row, cycles


def run_sweep(config: RunConfig) -> SweepResult:
    """Simulate every grid cell with shared seeds; cell failures are recorded
    and the sweep carries on."""
    base = NetworkInstance.from_json(Path(config.instance).read_text())
    model = CountModel.from_text(Path(config.model).read_text())
    cells = [(v, b, f, c)
             for v in config.vehicles for b in config.batteries
             for f in config.fleets for c in config.chargers]
    out = SweepResult()

    def attempt(cell):
        try:
            return ("ok", _run_cell(config, base, model, cell))
        except Exception as exc:          # cell isolation: record, continue
            return ("fail", f"{type(exc).__name__}: {exc}")

    with ThreadPoolExecutor(max_workers=config.workers) as pool:
        outcomes = list(pool.map(attempt, cells))
    for cell, (status, payload) in zip(cells, outcomes):
        if status == "ok":
            row, cycles = payload
            out.rows.append(row)
            out.cycle_rows.extend(cycles)
        else:
            out.failures.append({"vehicle": cell[0], "battery_kwh": cell[1],
                                 "fleet": cell[2], "chargers": cell[3],
                                 "error": payload})
    return out


# -- subcommands ----------------------------------------------------------------

def _parse_plan(text: str) -> Tuple[int, ...]:
    try:
        plan = tuple(int(p) for p in text.split(","))
    except ValueError:
        raise InvalidParameter(f"branch plan must be like '3,2', got {text!r}")
    if not plan or any(p < 1 for p in plan):
        raise InvalidParameter("branch plan entries must be >= 1")
    return plan


def _apply_robust_horizon(plan: Tuple[int, ...],
                          robust_horizon: Optional[int]) -> Tuple[int, ...]:
    """Pad (with non-branching stages) or truncate the plan to the horizon."""
    if robust_horizon is None:
        return plan
    if robust_horizon < 1:
        raise InvalidParameter("robust horizon must be >= 1")
    if robust_horizon <= len(plan):
        return plan[:robust_horizon]
    return plan + (1,) * (robust_horizon - len(plan))


def _cmd_ingest(args) -> int:
    result = ingest_trips(args.trips, args.stations, args.seed,
                          bin_minutes=args.bin_minutes,
                          speed_kmh=args.speed_kmh, vehicle=args.vehicle,
                          battery_kwh=args.battery, soc_bins=args.soc_bins,
                          horizon=args.horizon,
                          chargers_per_station=args.chargers,
                          margin_bins=args.margin_bins, v2g_kw=args.v2g_kw,
                          price=args.price)
    params = {"command": "ingest", "trips": args.trips,
              "stations": args.stations, "seed": args.seed,
              "bin_minutes": args.bin_minutes, "speed_kmh": args.speed_kmh,
              "vehicle": args.vehicle, "battery": args.battery,
              "soc_bins": args.soc_bins, "horizon": args.horizon,
              "chargers": args.chargers, "margin_bins": args.margin_bins,
              "v2g_kw": args.v2g_kw, "price": args.price}
    write_output(args.out_instance, result.instance.to_json() + "\n",
                 command="ingest", seed=args.seed, params=params)
    write_output(args.out_counts,
                 counts_to_text(result.history, args.bin_minutes) + "\n",
                 command="ingest", seed=args.seed, params=params)
    total_trips = int(sum(day.sum() for day in result.history))
    print(f"ingest: {args.stations} stations from {result.rows_total} rows "
          f"({result.rows_rejected} rejected), {total_trips} trips binned "
          f"over {len(result.history)} day(s)")
    return EXIT_OK


def _cmd_fit(args) -> int:
    history, _ = counts_from_text(Path(args.counts).read_text())
    model = fit_moments(history, seed=args.seed)
    params = {"command": "fit", "counts": args.counts, "seed": args.seed}
    write_output(args.out, model.to_text() + "\n", command="fit",
                 seed=args.seed, params=params)
    print(f"fit: {len(history)} day(s) -> {model.mean.shape} cell grid")
    return EXIT_OK


def _cmd_tree(args) -> int:
    model = CountModel.from_text(Path(args.model).read_text())
    instance = NetworkInstance.from_json(Path(args.instance).read_text())
    plan = _apply_robust_horizon(_parse_plan(args.scenarios),
                                 args.robust_horizon)
    fan = build_fan(model, args.samples, len(plan) * args.block, args.seed,
                    nominal_chargers=instance.chargers[:, 0],
                    start_bin=args.start_bin)
    tree = reduce(fan, plan, args.temperature, args.seed,
                  block_len=args.block)
    tree = extend_constant(tree, instance.horizon - 1)
    params = {"command": "tree", "model": args.model,
              "instance": args.instance, "scenarios": list(plan),
              "samples": args.samples, "seed": args.seed,
              "temperature": args.temperature, "block": args.block,
              "start_bin": args.start_bin}
    write_output(args.out, tree.to_text() + "\n", command="tree",
                 seed=args.seed, params=params)
    print(f"tree: plan {list(plan)} -> {tree.n_scenarios()} scenarios, "
          f"{len(tree.nodes)} nodes")
    return EXIT_OK


def _cmd_solve(args) -> int:
    instance = NetworkInstance.from_json(Path(args.instance).read_text())
    tree = ScenarioTree.from_text(Path(args.tree).read_text())
    config = NbdConfig(gap_tol=args.gap_tol, max_iters=args.max_iters,
                       aggregation=args.aggregation,
                       parallel_width=args.workers,
                       time_limit_s=args.time_limit)
    ledger_stream = io.StringIO()
    result = nbd_run(instance, tree, config,
                     initial_fleet=spread_fleet(instance, args.fleet),
                     ledger_stream=ledger_stream)
    stage0 = result.stage0
    doc = {
        "objective": result.objective,
        "lower_bound": result.lower_bound,
        "gap_percent": result.gap_percent,
        "iterations": result.iterations,
        "termination": result.termination,
        "cuts_added": result.cuts_added,
        "stage0": {
            "pax": float(stage0.pax.sum()),
            "reb": float(stage0.reb.sum() - np.trace(
                stage0.reb, axis1=0, axis2=1).sum()),
            "charge": float(stage0.charge.sum()),
            "v2g": float(stage0.v2g.sum()),
        },
    }
    params = {"command": "solve", "instance": args.instance,
              "tree": args.tree, "fleet": args.fleet,
              "gap_tol": args.gap_tol, "max_iters": args.max_iters,
              "aggregation": args.aggregation, "workers": args.workers,
              "seed": args.seed}
    write_output(args.out, _dump_json(doc), command="solve", seed=args.seed,
                 params=params)
    if args.ledger:
        write_output(args.ledger, ledger_stream.getvalue(), command="solve",
                     seed=args.seed, params=params)
    print(f"solve: {result.termination} after {result.iterations} iteration(s), "
          f"objective {result.objective:.6g}, gap {result.gap_percent:.4g}%")
    return EXIT_OK


def _cmd_simulate(args) -> int:
    instance = NetworkInstance.from_json(Path(args.instance).read_text())
    model = CountModel.from_text(Path(args.model).read_text())
    plan = _apply_robust_horizon(_parse_plan(args.scenarios),
                                 args.robust_horizon)
    config = RunConfig(instance=args.instance, model=args.model,
                       controller=args.controller, steps=args.steps,
                       seed=args.seed, price=args.price,
                       energy_cv=args.energy_cv, branch_plan=plan,
                       samples=args.samples, gap_tol=args.gap_tol,
                       max_iters=args.max_iters,
                       time_limit_s=args.time_limit)
    controller = _make_controller(config, instance, model)
    result = simulate(instance, controller, model, steps=args.steps,
                      seed=args.seed,
                      initial_fleet=spread_fleet(instance, args.fleet),
                      energy_cv=args.energy_cv,
                      price_kwh=resolve_price(args.price))
    doc = dict(result.report)
    led = result.state.ledgers
    doc["hourly_bought_kwh"] = {str(h): led.bought_kwh_by_hour[h]
                                for h in sorted(led.bought_kwh_by_hour)}
    doc["hourly_sold_kwh"] = {str(h): led.sold_kwh_by_hour[h]
                              for h in sorted(led.sold_kwh_by_hour)}
    params = config.to_params()
    params.update({"command": "simulate", "fleet": args.fleet})
    write_output(args.out, _dump_json(doc), command="simulate",
                 seed=args.seed, params=params)
    served = result.report["served"]
    print(f"simulate: {args.controller} over {args.steps} step(s), "
          f"served {served}, violations {result.report['violations']}")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    config = RunConfig.from_file(args.config)
    if args.seed is not None:
        config.seed = args.seed
    if args.gap_tol is not None:
        config.gap_tol = args.gap_tol
    if args.workers is not None:
        config.workers = args.workers
    result = run_sweep(config)
    out_dir = Path(args.out_dir)
    params = config.to_params()
    params["command"] = "sweep"
    write_output(out_dir / "sweep.csv", result.rows_csv(), command="sweep",
                 seed=config.seed, params=params)
    write_output(out_dir / "cycles.csv", result.cycles_csv(), command="sweep",
                 seed=config.seed, params=params)
    write_output(out_dir / "failures.csv", result.failures_csv(),
                 command="sweep", seed=config.seed, params=params)
    print(f"sweep: {len(result.rows)} cell(s) finished, "
          f"{len(result.failures)} failed")
    return EXIT_OK if not result.failures else EXIT_SOLVER


def _cmd_report(args) -> int:
    for path in args.paths:
        text = Path(path).read_text()
        print(f"== {path}")
        if str(path).endswith(".csv"):
            print(text.rstrip("\n"))
            continue
        doc = json.loads(text)
        if not isinstance(doc, dict):
            raise InvalidParameter(f"{path}: expected a JSON object report")
        width = max(len(k) for k in doc)
        for key in sorted(doc):
            print(f"  {key:<{width}}  {doc[key]}")
    return EXIT_OK


# -- parser ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eamod",
        description="Electric fleet planning: ingest trips, fit forecasts, "
                    "build scenario trees, solve, simulate, sweep.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="cluster a trip CSV into a station "
                                      "network and demand counts")
    p.add_argument("--trips", required=True, help="CSV with columns "
                   + ",".join(TRIP_COLUMNS) + " (km and minutes)")
    p.add_argument("--stations", type=int, required=True)
    p.add_argument("--out-instance", required=True)
    p.add_argument("--out-counts", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bin-minutes", type=float, default=10.0)
    p.add_argument("--speed-kmh", type=float, default=30.0)
    p.add_argument("--vehicle", default="vehicle2")
    p.add_argument("--battery", type=float, default=70.0)
    p.add_argument("--soc-bins", type=int, default=50)
    p.add_argument("--horizon", type=int, default=6)
    p.add_argument("--chargers", type=int, default=4)
    p.add_argument("--margin-bins", type=int, default=0)
    p.add_argument("--v2g-kw", type=float, default=22.0)
    p.add_argument("--price", default="flat",
                   help="profile label or a 24-value tariff file")
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("fit", help="fit the demand forecaster from counts")
    p.add_argument("--counts", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("tree", help="sample and reduce a scenario tree")
    p.add_argument("--model", required=True)
    p.add_argument("--instance", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--scenarios", default="2,2",
                   help="branches per stage, e.g. 3,2")
    p.add_argument("--robust-horizon", type=int, default=None,
                   help="branching stages; pads or truncates --scenarios")
    p.add_argument("--samples", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--block", type=int, default=1)
    p.add_argument("--start-bin", type=int, default=0)
    p.set_defaults(func=_cmd_tree)

    p = sub.add_parser("solve", help="run the decomposition on one tree")
    p.add_argument("--instance", required=True)
    p.add_argument("--tree", required=True)
    p.add_argument("--fleet", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ledger", default=None, help="bound-ledger CSV path")
    p.add_argument("--gap-tol", type=float, default=1e-2)
    p.add_argument("--max-iters", type=int, default=30)
    p.add_argument("--aggregation", type=int, default=1)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--time-limit", type=float, default=600.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_solve)

    p = sub.add_parser("simulate", help="closed-loop run in the simulator")
    p.add_argument("--instance", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--controller", default="rb",
                   choices=("rb", "dmp", "rcc", "smpc"))
    p.add_argument("--steps", type=int, default=144)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fleet", type=int, default=20)
    p.add_argument("--price", default="flat")
    p.add_argument("--energy-cv", type=float, default=0.0)
    p.add_argument("--scenarios", default="2,2")
    p.add_argument("--robust-horizon", type=int, default=None)
    p.add_argument("--samples", type=int, default=50)
    p.add_argument("--gap-tol", type=float, default=1e-2)
    p.add_argument("--max-iters", type=int, default=30)
    p.add_argument("--time-limit", type=float, default=600.0)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("sweep", help="vehicle/battery/fleet/charger grid")
    p.add_argument("--config", required=True, help="RunConfig JSON")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--gap-tol", type=float, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("report", help="pretty-print saved reports")
    p.add_argument("paths", nargs="+")
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ModelBug, InfeasibleDecision) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (InvalidParameter, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
