"""Longitudinal vehicle energy model and battery charging curve.

Trip energies come from a force balance over piecewise-constant driving
segments: rolling resistance, aerodynamic drag, and inertia, converted to
battery energy through drivetrain efficiencies and topped up with auxiliary
consumer power.  Battery mass scales with pack size at a fixed specific
energy, so the same chassis gets heavier with a bigger pack.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import InvalidParameter

AIR_DENSITY = 1.225          # kg/m^3
GRAVITY = 9.81               # m/s^2
SPECIFIC_ENERGY_WH_PER_KG = 268.0  # cell-level specific energy of the pack


@dataclass(frozen=True)
class VehicleParams:
    """Chassis and drivetrain parameters; mass excludes the battery pack."""

    name: str
    mass_kg: float
    eta_acc: float
    eta_dec: float
    eta_nom: float
    c_r: float
    c_d: float
    aux_w: float
    aux_idle_w: float
    frontal_m2: float

    def total_mass_kg(self, battery_kwh: float) -> float:
        """Vehicle plus pack mass for a given battery size."""
        if battery_kwh < 0.0 or not math.isfinite(battery_kwh):
            raise InvalidParameter(f"battery_kwh must be >= 0, got {battery_kwh}")
        return self.mass_kg + battery_kwh * 1000.0 / SPECIFIC_ENERGY_WH_PER_KG


@dataclass(frozen=True)
class Segment:
    """One piecewise-constant stretch of a driving profile."""

    speed_mps: float
    accel_mps2: float
    duration_s: float


@dataclass(frozen=True)
class ChargeCurve:
    """SoC-dependent charging power: flat, then linearly tapering tail."""

    knee_soc: float = 0.45
    p_max_kw: float = 100.0
    tail_soc: float = 0.95
    p_tail_kw: float = 30.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.knee_soc < self.tail_soc <= 1.0:
            raise InvalidParameter("require 0 <= knee_soc < tail_soc <= 1")
        if self.p_max_kw <= 0.0 or self.p_tail_kw <= 0.0:
            raise InvalidParameter("charging powers must be > 0")


def charge_power(soc: float, curve: ChargeCurve = ChargeCurve()) -> float:
    """Charging power in kW available at state of charge ``soc``."""
    if not 0.0 <= soc <= 1.0:
        raise InvalidParameter(f"soc must lie in [0, 1], got {soc}")
    if soc <= curve.knee_soc:
        return curve.p_max_kw
    if soc >= curve.tail_soc:
        return curve.p_tail_kw
    frac = (soc - curve.knee_soc) / (curve.tail_soc - curve.knee_soc)
    return curve.p_max_kw + frac * (curve.p_tail_kw - curve.p_max_kw)


def trip_energy(profile: Iterable[Segment], params: VehicleParams,
                battery_kwh: float) -> float:
    """Battery energy in kWh drawn over a driving profile.

    Positive wheel power is divided by the drivetrain efficiency, negative
    wheel power (recuperation) is multiplied by it; auxiliary consumers draw
    ``aux_w`` while moving and ``aux_idle_w`` while stopped.  Recuperated
    energy is credited without a cap, so a downhill-heavy profile can come
    out negative.
    """
    segments = list(profile)
    if not segments:
        raise InvalidParameter("profile must contain at least one segment")
    m_tot = params.total_mass_kg(battery_kwh)
    total_j = 0.0
    for seg in segments:
        if seg.duration_s < 0.0 or not math.isfinite(seg.duration_s):
            raise InvalidParameter(f"segment duration must be >= 0, got {seg.duration_s}")
        v = seg.speed_mps
        force = (m_tot * GRAVITY * params.c_r
                 + 0.5 * AIR_DENSITY * params.c_d * params.frontal_m2 * v * v
                 + m_tot * seg.accel_mps2)
        wheel_w = force * v
        if seg.accel_mps2 > 0.0:
            eta = params.eta_acc
        elif seg.accel_mps2 < 0.0:
            eta = params.eta_dec
        else:
            eta = params.eta_nom
        if wheel_w > 0.0:
            batt_w = wheel_w / eta
        else:
            batt_w = wheel_w * eta
        aux_w = params.aux_w if v > 0.0 else params.aux_idle_w
        total_j += (batt_w + aux_w) * seg.duration_s
    return total_j / 3.6e6


def cruise_profile(distance_km: float, speed_mps: float) -> list[Segment]:
    """Constant-speed stand-in profile used when only a distance is known."""
    if distance_km < 0.0 or speed_mps <= 0.0:
        raise InvalidParameter("distance_km must be >= 0 and speed_mps > 0")
    duration = distance_km * 1000.0 / speed_mps
    return [Segment(speed_mps, 0.0, duration)]


def arc_energy_kwh(distance_km: float, speed_mps: float, params: VehicleParams,
                   battery_kwh: float) -> float:
    """Energy of a station-to-station hop modeled as a constant-speed cruise."""
    if distance_km == 0.0:
        return 0.0
    return trip_energy(cruise_profile(distance_km, speed_mps), params, battery_kwh)


# -- presets -----------------------------------------------------------------

# Three consumption classes: an efficient compact, a mid-size sedan, and a
# heavy SUV-style body.
VEHICLE_PRESETS: dict[str, VehicleParams] = {
    "vehicle1": VehicleParams(
        name="vehicle1", mass_kg=1500.0, eta_acc=0.90, eta_dec=0.90, eta_nom=0.90,
        c_r=0.0072, c_d=0.22, aux_w=800.0, aux_idle_w=100.0, frontal_m2=2.2),
    "vehicle2": VehicleParams(
        name="vehicle2", mass_kg=1700.0, eta_acc=0.85, eta_dec=0.85, eta_nom=0.85,
        c_r=0.0090, c_d=0.25, aux_w=900.0, aux_idle_w=100.0, frontal_m2=2.5),
    "vehicle3": VehicleParams(
        name="vehicle3", mass_kg=1900.0, eta_acc=0.80, eta_dec=0.80, eta_nom=0.80,
        c_r=0.0108, c_d=0.30, aux_w=1000.0, aux_idle_w=100.0, frontal_m2=2.8),
}


def vehicle_preset(name: str) -> VehicleParams:
    try:
        return VEHICLE_PRESETS[name]
    except KeyError:
        raise InvalidParameter(
            f"unknown vehicle preset {name!r}, choose from {sorted(VEHICLE_PRESETS)}"
        ) from None
