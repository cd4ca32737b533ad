"""Energy-space-time network model for an electric mobility-on-demand fleet.

The core object is :class:`NetworkInstance`: a fully discretized city with
``n_stations`` regions, a state-of-charge axis split into ``soc_bins`` equal
intervals (levels ``0 .. soc_bins`` inclusive), and ``horizon`` time steps of
``step_minutes`` each.  Travel times are expressed in steps, trip energies and
charging increments in SoC bins, so every quantity the optimizer touches is a
small integer.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameter

PRICE_LABELS = ("flat", "peak", "solar")


def nint(x: float) -> int:
    """Round to the nearest integer, ties away from zero."""
    if x >= 0.0:
        return int(math.floor(x + 0.5))
    return -int(math.floor(-x + 0.5))


def trip_energy_bins(energy_kwh: float, battery_kwh: float, bin_width: float) -> int:
    """Convert a trip energy in kWh to whole SoC bins (nearest, ties up)."""
    _require_finite("energy_kwh", energy_kwh)
    if energy_kwh < 0.0:
        raise InvalidParameter(f"energy_kwh must be >= 0, got {energy_kwh}")
    _require_positive("battery_kwh", battery_kwh)
    _require_positive("bin_width", bin_width)
    return nint(energy_kwh / (battery_kwh * bin_width))


def charge_delta_bins(power_kw: float, step_minutes: float, battery_kwh: float,
                      bin_width: float) -> int:
    """SoC bins gained in one step of charging at ``power_kw``, rounded up.

    Always at least one bin: a charging interval that moves the needle less
    than a bin still books a full bin, mirroring the discretization used on
    the network side.
    """
    _require_positive("power_kw", power_kw)
    _require_positive("step_minutes", step_minutes)
    _require_positive("battery_kwh", battery_kwh)
    _require_positive("bin_width", bin_width)
    bins = (power_kw * step_minutes / 60.0) / (battery_kwh * bin_width)
    return max(1, int(math.ceil(bins - 1e-9)))


def terminal_penalty(soc_fraction: float, b_max: float, a: float, q_max: float) -> float:
    """Per-vehicle penalty for ending the horizon below the target SoC.

    Linear in the shortfall below ``b_max`` with slope ``a``, capped at
    ``q_max``; zero at or above the target.
    """
    for name, v in (("soc_fraction", soc_fraction), ("b_max", b_max),
                    ("a", a), ("q_max", q_max)):
        _require_finite(name, v)
    return min(q_max, max((b_max - soc_fraction) * a, 0.0))


@dataclass
class PriceProfile:
    """A 24-value hourly electricity price curve in money per kWh."""

    label: str
    hourly: np.ndarray  # shape (24,)

    def __post_init__(self) -> None:
        self.hourly = np.asarray(self.hourly, dtype=float)
        if self.label not in PRICE_LABELS:
            raise InvalidParameter(f"label must be one of {PRICE_LABELS}, got {self.label!r}")
        if self.hourly.shape != (24,):
            raise InvalidParameter(f"hourly must have 24 entries, got shape {self.hourly.shape}")
        if not np.all(np.isfinite(self.hourly)) or np.any(self.hourly < 0.0):
            raise InvalidParameter("hourly prices must be finite and >= 0")

    def at_minute(self, minute: int) -> float:
        """Price in effect at an absolute minute of the (wrapped) day."""
        return float(self.hourly[(minute // 60) % 24])


@dataclass
class TerminalParams:
    """End-of-horizon SoC penalty: slope ``a`` below ``b_max``, capped at ``q_max``."""

    b_max: float
    a: float
    q_max: float

    def penalty(self, soc_fraction: float) -> float:
        return terminal_penalty(soc_fraction, self.b_max, self.a, self.q_max)


@dataclass
class StageDecisions:
    """One time step worth of fleet decisions, dimensioned like the instance.

    ``pax`` and ``reb`` are (i, j, b) counts of passenger and rebalancing
    departures; ``charge`` and ``v2g`` are (i, b) counts of vehicles starting
    a charging or discharging interval.  The diagonal of ``reb`` doubles as
    the idle decision (a self-loop of one step).
    """

    pax: np.ndarray     # (N, N, B+1)
    reb: np.ndarray     # (N, N, B+1)
    charge: np.ndarray  # (N, B+1)
    v2g: np.ndarray     # (N, B+1)

    @classmethod
    def zeros(cls, n_stations: int, n_levels: int) -> "StageDecisions":
        return cls(
            pax=np.zeros((n_stations, n_stations, n_levels)),
            reb=np.zeros((n_stations, n_stations, n_levels)),
            charge=np.zeros((n_stations, n_levels)),
            v2g=np.zeros((n_stations, n_levels)),
        )

    def copy(self) -> "StageDecisions":
        return StageDecisions(self.pax.copy(), self.reb.copy(),
                              self.charge.copy(), self.v2g.copy())


@dataclass
class NetworkInstance:
    """Discretized energy-space-time network plus all cost coefficients.

    Index conventions: stations ``i, j`` in ``0..n_stations-1``, SoC levels
    ``b`` in ``0..soc_bins`` (fraction ``b / soc_bins``), time steps ``t`` in
    ``0..horizon-1``.
    """

    n_stations: int
    soc_bins: int
    horizon: int
    step_minutes: float
    battery_kwh: float
    travel_time: np.ndarray    # (N, N, T) steps, int
    travel_energy: np.ndarray  # (N, N, T) bins, int
    min_soc: np.ndarray        # (N, N) bins, int
    chargers: np.ndarray       # (N, T) plugs, int
    charge_kw: np.ndarray      # (B+1,) charging power by SoC level
    v2g_kw: float
    reb_cost: np.ndarray       # (N, N, B+1)
    pax_revenue: np.ndarray    # (N, N, B+1)
    charge_cost: np.ndarray    # (N, B+1, T)
    v2g_revenue: np.ndarray    # (N, B+1, T)
    terminal: TerminalParams
    end_soc_min: float = 0.0
    distance_km: np.ndarray = field(default=None)  # (N, N), for trip ledgers

    def __post_init__(self) -> None:
        for name in ("n_stations", "soc_bins", "horizon"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v <= 0:
                raise InvalidParameter(f"{name} must be a positive integer, got {v!r}")
        _require_positive("step_minutes", self.step_minutes)
        _require_positive("battery_kwh", self.battery_kwh)
        _require_finite("v2g_kw", self.v2g_kw)
        if self.v2g_kw < 0.0:
            raise InvalidParameter(f"v2g_kw must be >= 0, got {self.v2g_kw}")
        if self.distance_km is None:
            self.distance_km = np.zeros((self.n_stations, self.n_stations))

        N, B, T = self.n_stations, self.soc_bins, self.horizon
        self.travel_time = _as_int_array("travel_time", self.travel_time, (N, N, T))
        self.travel_energy = _as_int_array("travel_energy", self.travel_energy, (N, N, T))
        self.min_soc = _as_int_array("min_soc", self.min_soc, (N, N))
        self.chargers = _as_int_array("chargers", self.chargers, (N, T))
        self.charge_kw = _as_float_array("charge_kw", self.charge_kw, (B + 1,))
        self.reb_cost = _as_float_array("reb_cost", self.reb_cost, (N, N, B + 1))
        self.pax_revenue = _as_float_array("pax_revenue", self.pax_revenue, (N, N, B + 1))
        self.charge_cost = _as_float_array("charge_cost", self.charge_cost, (N, B + 1, T))
        self.v2g_revenue = _as_float_array("v2g_revenue", self.v2g_revenue, (N, B + 1, T))
        self.distance_km = _as_float_array("distance_km", self.distance_km, (N, N))
        _require_finite("end_soc_min", self.end_soc_min)
        self.validate()

    # -- derived quantities ------------------------------------------------

    @property
    def n_levels(self) -> int:
        """Number of SoC levels (bins + 1, level b means fraction b/soc_bins)."""
        return self.soc_bins + 1

    @property
    def bin_width(self) -> float:
        return 1.0 / self.soc_bins

    @property
    def bin_kwh(self) -> float:
        """Energy content of one SoC bin."""
        return self.battery_kwh * self.bin_width

    def soc_fraction(self, level: int) -> float:
        return level / self.soc_bins

    def charge_gain_bins(self, level: int) -> int:
        """Bins gained by one charging interval started at SoC ``level``."""
        return charge_delta_bins(self.charge_kw[level], self.step_minutes,
                                 self.battery_kwh, self.bin_width)

    def v2g_drop_bins(self) -> int:
        """Bins lost by one grid-discharge interval (0 when V2G is disabled)."""
        if self.v2g_kw <= 0.0:
            return 0
        return charge_delta_bins(self.v2g_kw, self.step_minutes,
                                 self.battery_kwh, self.bin_width)

    # -- validation --------------------------------------------------------

    def validate(self) -> None:
        N = self.n_stations
        off_diag = ~np.eye(N, dtype=bool)
        if np.any(self.travel_time[off_diag] < 1):
            raise InvalidParameter("travel_time must be >= 1 step off the diagonal")
        diag = self.travel_time[np.eye(N, dtype=bool)]
        if np.any(diag != 1):
            raise InvalidParameter("travel_time self-loops must be exactly 1 step")
        if np.any(self.travel_energy < 0):
            raise InvalidParameter("travel_energy must be >= 0 bins")
        if np.any(self.min_soc < self.travel_energy.max(axis=2)):
            raise InvalidParameter("min_soc must cover the worst-case travel_energy per arc")
        if np.any(self.min_soc > self.soc_bins):
            raise InvalidParameter("min_soc must not exceed the SoC range")
        if np.any(self.chargers < 0):
            raise InvalidParameter("chargers must be >= 0")
        if np.any(self.charge_kw <= 0.0):
            raise InvalidParameter("charge_kw must be > 0 at every SoC level")
        for name in ("reb_cost", "pax_revenue", "charge_cost", "v2g_revenue"):
            if np.any(getattr(self, name) < 0.0):
                raise InvalidParameter(f"{name} must be >= 0")
        if np.any(self.distance_km < 0.0):
            raise InvalidParameter("distance_km must be >= 0")
        if not (0.0 <= self.end_soc_min <= 1.0):
            raise InvalidParameter(f"end_soc_min must lie in [0, 1], got {self.end_soc_min}")
        for name, v in (("b_max", self.terminal.b_max), ("a", self.terminal.a),
                        ("q_max", self.terminal.q_max)):
            _require_finite(f"terminal.{name}", v)
            if v < 0.0:
                raise InvalidParameter(f"terminal.{name} must be >= 0, got {v}")

    # -- serialization -----------------------------------------------------

    def to_json(self) -> str:
        """Serialize to a single JSON document (matrices row-major with shape)."""
        doc = {
            "format": "eamod-network-v1",
            "n_stations": self.n_stations,
            "soc_bins": self.soc_bins,
            "horizon": self.horizon,
            "step_minutes": self.step_minutes,
            "battery_kwh": self.battery_kwh,
            "v2g_kw": self.v2g_kw,
            "end_soc_min": self.end_soc_min,
            "terminal": {"b_max": self.terminal.b_max, "a": self.terminal.a,
                         "q_max": self.terminal.q_max},
        }
        for name in ("travel_time", "travel_energy", "min_soc", "chargers",
                     "charge_kw", "reb_cost", "pax_revenue", "charge_cost",
                     "v2g_revenue", "distance_km"):
            arr = getattr(self, name)
            doc[name] = {"shape": list(arr.shape), "data": arr.ravel(order="C").tolist()}
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "NetworkInstance":
        doc = json.loads(text)
        if doc.get("format") != "eamod-network-v1":
            raise InvalidParameter(f"unknown instance format {doc.get('format')!r}")

        def arr(name):
            entry = doc[name]
            data = np.asarray(entry["data"])
            return data.reshape(entry["shape"], order="C")

        term = doc["terminal"]
        return cls(
            n_stations=int(doc["n_stations"]),
            soc_bins=int(doc["soc_bins"]),
            horizon=int(doc["horizon"]),
            step_minutes=float(doc["step_minutes"]),
            battery_kwh=float(doc["battery_kwh"]),
            travel_time=arr("travel_time"),
            travel_energy=arr("travel_energy"),
            min_soc=arr("min_soc"),
            chargers=arr("chargers"),
            charge_kw=arr("charge_kw"),
            v2g_kw=float(doc["v2g_kw"]),
            reb_cost=arr("reb_cost"),
            pax_revenue=arr("pax_revenue"),
            charge_cost=arr("charge_cost"),
            v2g_revenue=arr("v2g_revenue"),
            terminal=TerminalParams(float(term["b_max"]), float(term["a"]),
                                    float(term["q_max"])),
            end_soc_min=float(doc.get("end_soc_min", 0.0)),
            distance_km=arr("distance_km"),
        )


def stage_cost(decisions: StageDecisions, instance: NetworkInstance, t: int) -> float:
    """Money spent minus money earned by one step of decisions.

    Rebalancing and charging pay their coefficients, passenger service and
    grid discharge earn theirs.
    """
    if not 0 <= t < instance.horizon:
        raise InvalidParameter(f"t must lie in [0, {instance.horizon}), got {t}")
    cost = float(np.sum(instance.reb_cost * decisions.reb))
    cost -= float(np.sum(instance.pax_revenue * decisions.pax))
    cost += float(np.sum(instance.charge_cost[:, :, t] * decisions.charge))
    cost -= float(np.sum(instance.v2g_revenue[:, :, t] * decisions.v2g))
    return cost


# -- small validation helpers ----------------------------------------------

def _require_finite(name: str, value: float) -> None:
    if not math.isfinite(value):
        raise InvalidParameter(f"{name} must be finite, got {value!r}")


def _require_positive(name: str, value: float) -> None:
    _require_finite(name, value)
    if value <= 0.0:
        raise InvalidParameter(f"{name} must be > 0, got {value!r}")


def _as_int_array(name: str, value, shape) -> np.ndarray:
    arr = np.asarray(value)
    if arr.shape != tuple(shape):
        raise InvalidParameter(f"{name} must have shape {tuple(shape)}, got {arr.shape}")
    if not np.all(np.isfinite(arr.astype(float))):
        raise InvalidParameter(f"{name} must be finite")
    out = arr.astype(np.int64)
    if np.any(out.astype(float) != arr.astype(float)):
        raise InvalidParameter(f"{name} must be integer-valued")
    return out


def _as_float_array(name: str, value, shape) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.shape != tuple(shape):
        raise InvalidParameter(f"{name} must have shape {tuple(shape)}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidParameter(f"{name} must be finite")
    return arr
