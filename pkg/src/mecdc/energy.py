"""Per-slot UAV energy accounting: propulsion, edge compute, budget ledger."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .scenario import ComputeParams, PropulsionParams


def propulsion_power(speed: float, params: PropulsionParams) -> float:
    """Rotary-wing power draw in watts at level flight speed ``speed``.

    Blade-profile, induced and parasite terms; reduces to P0 + Pi at hover.
    """
    if speed < 0.0:
        raise ValueError("speed must be nonnegative")
    v2 = speed * speed
    blade = params.hover_blade_power * (1.0 + 3.0 * v2 / params.tip_speed**2)
    v0_sq = params.mean_rotor_induced_velocity**2
    # sqrt(1 + x^2) - x with x = v^2 / (2 v0^2); positive for every speed.
    x = v2 / (2.0 * v0_sq)
    induced = params.hover_induced_power * math.sqrt(math.sqrt(1.0 + x * x) - x)
    parasite = (
        0.5
        * params.fuselage_drag_ratio
        * params.air_density
        * params.rotor_solidity
        * params.rotor_disc_area
        * speed**3
    )
    return blade + induced + parasite


def propulsion_energy(speed: float, tau: float, params: PropulsionParams) -> float:
    """Joules spent flying (or hovering) at ``speed`` for ``tau`` seconds."""
    return propulsion_power(speed, params) * tau


def compute_energy(bits: float, compute: ComputeParams) -> float:
    """Edge-compute energy kappa * omega^2 * C * bits; linear in bits."""
    if bits < 0.0:
        raise ValueError("bits must be nonnegative")
    return compute.switch_cap * compute.cpu_freq**2 * compute.cycles_per_bit * bits


def total_energy(is_dc_uav: bool, move_joules: float, compute_joules: float) -> float:
    """Slot total for one UAV: the DC-UAV never pays compute energy."""
    return move_joules + (0.0 if is_dc_uav else compute_joules)


@dataclass
class SlotEnergy:
    uav: int
    slot: int
    move_joules: float
    compute_joules: float

    @property
    def total(self) -> float:
        return self.move_joules + self.compute_joules


@dataclass
class EnergyLedger:
    """Append-only per-UAV, per-slot energy breakdown."""

    num_uavs: int
    rows: list[SlotEnergy] = field(default_factory=list)
    cumulative: list[float] = field(init=False)

    def __post_init__(self):
        self.cumulative = [0.0] * self.num_uavs

    def record(self, uav: int, slot: int, move_joules: float, compute_joules: float) -> SlotEnergy:
        if move_joules < 0.0 or compute_joules < 0.0:
            raise ValueError("energy entries must be nonnegative")
        row = SlotEnergy(uav, slot, move_joules, compute_joules)
        self.rows.append(row)
        self.cumulative[uav] += row.total
        return row

    def total(self, uav: int | None = None) -> float:
        if uav is None:
            return sum(self.cumulative)
        return self.cumulative[uav]

    def csv_rows(self):
        """Rows as (uav_id, slot, move_J, compute_J) tuples for export."""
        for row in self.rows:
            yield (row.uav, row.slot, row.move_joules, row.compute_joules)
