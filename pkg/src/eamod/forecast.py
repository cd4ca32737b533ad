"""Negative-binomial count forecasting and robust quantile substitution.

Demand and charger availability are modeled as independent negative-binomial
cells parameterized by mean and dispersion (variance = m + m^2/r), fitted by
the method of moments.  Energy and travel-time uncertainty is handled by the
deterministic robust counterpart: matrices are replaced by (1 - eps)-quantiles
of per-arc distributions, which keeps the downstream program linear.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from statistics import NormalDist
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidParameter
from .net_model import NetworkInstance

# Above this dispersion the NB cell is numerically indistinguishable from
# Poisson; used when the sample variance does not exceed the mean.
DISPERSION_CAP = 1e6


@dataclass
class CountModel:
    """Independent NB cells over an arbitrary index grid (time axis first)."""

    mean: np.ndarray        # (T, ...) nonnegative
    dispersion: np.ndarray  # same shape, > 0
    seed: int = 0

    def __post_init__(self) -> None:
        self.mean = np.asarray(self.mean, dtype=float)
        self.dispersion = np.asarray(self.dispersion, dtype=float)
        if self.mean.shape != self.dispersion.shape:
            raise InvalidParameter("mean and dispersion must have equal shapes")
        if not np.all(np.isfinite(self.mean)) or np.any(self.mean < 0.0):
            raise InvalidParameter("mean must be finite and >= 0")
        if not np.all(np.isfinite(self.dispersion)) or np.any(self.dispersion <= 0.0):
            raise InvalidParameter("dispersion must be finite and > 0")

    @property
    def n_time_bins(self) -> int:
        return self.mean.shape[0]

    def variance(self) -> np.ndarray:
        return self.mean + self.mean ** 2 / self.dispersion

    def to_text(self) -> str:
        return json.dumps({
            "format": "eamod-count-model-v1",
            "seed": self.seed,
            "shape": list(self.mean.shape),
            "mean": self.mean.ravel(order="C").tolist(),
            "dispersion": self.dispersion.ravel(order="C").tolist(),
        })

    @classmethod
    def from_text(cls, text: str) -> "CountModel":
        doc = json.loads(text)
        if doc.get("format") != "eamod-count-model-v1":
            raise InvalidParameter(f"unknown model format {doc.get('format')!r}")
        shape = tuple(doc["shape"])
        return cls(
            mean=np.asarray(doc["mean"]).reshape(shape, order="C"),
            dispersion=np.asarray(doc["dispersion"]).reshape(shape, order="C"),
            seed=int(doc["seed"]),
        )


def fit_moments(history: Sequence[np.ndarray], seed: int = 0) -> CountModel:
    """Method-of-moments NB fit, one cell per entry of the observation grid.

    ``history`` is a sequence of equally shaped count arrays (one observation
    each).  Cells whose sample variance does not exceed their mean get the
    Poisson-like dispersion cap.
    """
    if history is None or len(history) == 0:
        raise InvalidParameter("history must contain at least one observation")
    obs = np.asarray([np.asarray(h, dtype=float) for h in history])
    if obs.shape[0] < 2:
        raise InvalidParameter("need >= 2 observations per cell to fit moments")
    if np.any(obs < 0.0) or not np.all(np.isfinite(obs)):
        raise InvalidParameter("history counts must be finite and >= 0")
    mean = obs.mean(axis=0)
    var = obs.var(axis=0, ddof=1)
    over = var - mean
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(over > 0.0, mean ** 2 / np.where(over > 0.0, over, 1.0),
                     DISPERSION_CAP)
    r = np.where(mean > 0.0, r, DISPERSION_CAP)
    r = np.minimum(r, DISPERSION_CAP)
    return CountModel(mean=mean, dispersion=r, seed=seed)


def sample(model: CountModel, t: int, rng: np.random.Generator) -> np.ndarray:
    """One NB draw per cell at time bin ``t`` (integer array)."""
    if not 0 <= t < model.n_time_bins:
        raise InvalidParameter(f"t must lie in [0, {model.n_time_bins}), got {t}")
    m = model.mean[t]
    r = model.dispersion[t]
    p = r / (r + m)  # mean m, variance m + m^2/r
    return rng.negative_binomial(r, p).astype(np.int64)


def sample_chargers(model: CountModel, nominal: np.ndarray, t: int,
                    rng: np.random.Generator) -> np.ndarray:
    """Charger availability draw, clipped at the nominal plug count."""
    return np.minimum(np.asarray(nominal, dtype=np.int64), sample(model, t, rng))


def nb_pmf(k: int, mean: float, dispersion: float) -> float:
    """Negative-binomial pmf at count ``k`` for a (mean, dispersion) cell."""
    if k < 0:
        return 0.0
    if mean <= 0.0:
        return 1.0 if k == 0 else 0.0
    r = dispersion
    p = r / (r + mean)
    log_pmf = (math.lgamma(k + r) - math.lgamma(r) - math.lgamma(k + 1)
               + r * math.log(p) + k * math.log1p(-p))
    return math.exp(log_pmf)


def count_quantile(mean: float, dispersion: float, q: float) -> int:
    """Smallest count whose CDF reaches ``q``, by direct pmf summation."""
    if not 0.0 < q < 1.0:
        raise InvalidParameter(f"q must lie in (0, 1), got {q}")
    if mean <= 0.0:
        return 0
    sd = math.sqrt(mean + mean ** 2 / dispersion)
    hard_cap = int(math.ceil(mean + 30.0 * sd)) + 1000
    cdf = 0.0
    for k in range(hard_cap + 1):
        cdf += nb_pmf(k, mean, dispersion)
        if cdf >= q:
            return k
    return hard_cap  # q astronomically close to 1; the cap is ~30 sigma out


# -- robust counterpart ------------------------------------------------------

@dataclass
class ArcLognormal:
    """Per-arc log-normal records: location = mean, scale = coefficient of
    variation.  A zero cv denotes the degenerate point distribution."""

    location: np.ndarray
    cv: np.ndarray

    def __post_init__(self) -> None:
        self.location = np.asarray(self.location, dtype=float)
        self.cv = np.broadcast_to(np.asarray(self.cv, dtype=float),
                                  self.location.shape).copy()
        if not np.all(np.isfinite(self.location)) or np.any(self.location < 0.0):
            raise InvalidParameter("location must be finite and >= 0")
        if not np.all(np.isfinite(self.cv)) or np.any(self.cv < 0.0):
            raise InvalidParameter("cv must be finite and >= 0")

    def quantile(self, q: float) -> np.ndarray:
        """Elementwise q-quantile; degenerate cells return their location."""
        if not 0.0 < q < 1.0:
            raise InvalidParameter(f"q must lie in (0, 1), got {q}")
        z = NormalDist().inv_cdf(q)
        sigma2 = np.log1p(self.cv ** 2)
        sigma = np.sqrt(sigma2)
        with np.errstate(divide="ignore"):
            mu = np.where(self.location > 0.0,
                          np.log(np.where(self.location > 0.0, self.location, 1.0))
                          - 0.5 * sigma2,
                          -np.inf)
        out = np.where(self.cv > 0.0, np.exp(mu + sigma * z), self.location)
        return np.where(self.location > 0.0, out, 0.0)


@dataclass
class RobustParams:
    """Chance-constraint tolerances and the per-arc uncertainty records."""

    eps_energy: float = 0.2
    eps_time: float = 0.2
    energy_dist: Optional[ArcLognormal] = None
    time_dist: Optional[ArcLognormal] = None

    def __post_init__(self) -> None:
        for name, eps in (("eps_energy", self.eps_energy), ("eps_time", self.eps_time)):
            if not 0.0 < eps < 1.0:
                raise InvalidParameter(f"{name} must lie strictly in (0, 1), got {eps}")

    @classmethod
    def from_instance(cls, instance: NetworkInstance, energy_cv: float = 0.0,
                      time_cv: float = 0.0, eps_energy: float = 0.2,
                      eps_time: float = 0.2) -> "RobustParams":
        """Default records centered on the instance's nominal matrices."""
        energy = ArcLognormal(instance.travel_energy * instance.bin_kwh,
                              np.full(instance.travel_energy.shape, energy_cv))
        time_cv_arr = np.full(instance.travel_time.shape, time_cv)
        for i in range(instance.n_stations):
            time_cv_arr[i, i, :] = 0.0  # the self-loop step is not a road trip
        time = ArcLognormal(instance.travel_time * instance.step_minutes, time_cv_arr)
        return cls(eps_energy=eps_energy, eps_time=eps_time,
                   energy_dist=energy, time_dist=time)


def robustify(instance: NetworkInstance, robust: RobustParams) -> NetworkInstance:
    """Replace energy/time matrices by their (1 - eps)-quantiles.

    The deterministic robust counterpart of the energy and travel-time chance
    constraints: plan against values that hold with probability 1 - eps.
    min_soc is shifted to keep its safety margin over the new worst-case arc
    energy.
    """
    if robust.energy_dist is None or robust.time_dist is None:
        raise InvalidParameter("robustify requires energy_dist and time_dist records")
    for name, dist, ref in (("energy_dist", robust.energy_dist, instance.travel_energy),
                            ("time_dist", robust.time_dist, instance.travel_time)):
        if dist.location.shape != ref.shape:
            raise InvalidParameter(f"{name} must cover every arc: expected shape "
                                   f"{ref.shape}, got {dist.location.shape}")

    energy_kwh = robust.energy_dist.quantile(1.0 - robust.eps_energy)
    energy_bins = np.ceil(energy_kwh / instance.bin_kwh - 1e-9).astype(np.int64)
    energy_bins = np.clip(energy_bins, 0, instance.soc_bins)

    time_min = robust.time_dist.quantile(1.0 - robust.eps_time)
    time_steps = np.ceil(time_min / instance.step_minutes - 1e-9).astype(np.int64)
    time_steps = np.maximum(time_steps, 1)
    for i in range(instance.n_stations):
        time_steps[i, i, :] = 1  # self-loops stay a single step

    margin = instance.min_soc - instance.travel_energy.max(axis=2)
    min_soc = np.clip(energy_bins.max(axis=2) + margin, 0, instance.soc_bins)

    return NetworkInstance(
        n_stations=instance.n_stations,
        soc_bins=instance.soc_bins,
        horizon=instance.horizon,
        step_minutes=instance.step_minutes,
        battery_kwh=instance.battery_kwh,
        travel_time=time_steps,
        travel_energy=energy_bins,
        min_soc=min_soc,
        chargers=instance.chargers.copy(),
        charge_kw=instance.charge_kw.copy(),
        v2g_kw=instance.v2g_kw,
        reb_cost=instance.reb_cost.copy(),
        pax_revenue=instance.pax_revenue.copy(),
        charge_cost=instance.charge_cost.copy(),
        v2g_revenue=instance.v2g_revenue.copy(),
        terminal=instance.terminal,
        end_soc_min=instance.end_soc_min,
        distance_km=instance.distance_km.copy(),
    )


def read_counts_csv(lines: Sequence[str], n_stations: int, n_time_bins: int) -> np.ndarray:
    """Parse one observation of historical counts.

    Expected header: ``origin_station, dest_station, time_bin, count``.
    Returns a (n_time_bins, n_stations, n_stations) array; absent cells are 0.
    """
    out = np.zeros((n_time_bins, n_stations, n_stations), dtype=np.int64)
    rows = [ln.strip() for ln in lines if ln.strip()]
    if not rows:
        raise InvalidParameter("empty counts CSV")
    header = [c.strip() for c in rows[0].split(",")]
    expected = ["origin_station", "dest_station", "time_bin", "count"]
    if header != expected:
        raise InvalidParameter(f"counts CSV header must be {expected}, got {header}")
    for lineno, row in enumerate(rows[1:], start=2):
        parts = [c.strip() for c in row.split(",")]
        if len(parts) != 4:
            raise InvalidParameter(f"line {lineno}: expected 4 fields, got {len(parts)}")
        try:
            i, j, t, c = (int(parts[0]), int(parts[1]), int(parts[2]), int(parts[3]))
        except ValueError:
            raise InvalidParameter(f"line {lineno}: non-integer field in {parts}") from None
        if not (0 <= i < n_stations and 0 <= j < n_stations and 0 <= t < n_time_bins):
            raise InvalidParameter(f"line {lineno}: index out of range in {parts}")
        if c < 0:
            raise InvalidParameter(f"line {lineno}: negative count {c}")
        out[t, i, j] += c
    return out
