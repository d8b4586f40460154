"""Per-device, per-round energy accounting.

Covers the three consumption terms (local compute, uplink transmit, and the
UAV's downlink transmit, which by convention is billed to the device), the
nonlinear quadratic harvesting curve fed by the power splitter's harvest
branch, and the round feasibility verdict: consumed energy must not exceed
harvested energy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .channel import LinkBudget


@dataclass(frozen=True)
class ComputeProfile:
    """Static compute constants of one device.

    ``kappa`` is the effective switched-capacitance coefficient;
    ``cycles_per_bit`` the CPU cycles needed per data bit; ``data_bits``
    the size of the local training data; ``local_iters`` the number of
    local training iterations per round; ``cpu_hz`` the clock speed.
    """

    kappa: float
    cycles_per_bit: float
    data_bits: float
    local_iters: int
    cpu_hz: float

    def __post_init__(self):
        for name in ("kappa", "cycles_per_bit", "data_bits", "cpu_hz"):
            if not getattr(self, name) > 0:
                raise ValueError(f"ComputeProfile.{name} must be > 0")
        if self.local_iters < 0 or self.local_iters != int(self.local_iters):
            raise ValueError("local_iters must be an integer >= 0")


@dataclass(frozen=True)
class HarvestModel:
    """Coefficients of the quadratic nonlinear harvesting curve.

    Harvested power at input x is max(0, a1*x^2 + a2*x + a3); the clamp
    keeps calibrated fits from going negative near x = 0.
    """

    a1: float
    a2: float
    a3: float


@dataclass(frozen=True)
class EnergyLedger:
    """One device's energy balance for a single communication round.

    ``e_total_j`` is the energy billed to the device: compute + uplink,
    plus the UAV-side downlink energy when ``device_pays_downlink`` was set
    (the default convention). ``e_downlink_j`` always records the UAV-side
    energy regardless of who is billed. ``feasible`` means the billed total
    does not exceed the harvested energy and is finite.
    """

    e_compute_j: float
    e_uplink_j: float
    e_downlink_j: float
    e_total_j: float
    p_harvest_w: float
    e_harvest_j: float
    feasible: bool


def compute_energy(profile: ComputeProfile) -> float:
    """Local training energy: kappa * C * A * I * f^2; zero if no iterations."""
    return (
        profile.kappa
        * profile.cycles_per_bit
        * profile.data_bits
        * profile.local_iters
        * profile.cpu_hz**2
    )


def uplink_energy(tx_time_s: float, ptx_ul_w: float) -> float:
    """Energy the device spends transmitting its model update."""
    if tx_time_s == 0.0 or ptx_ul_w == 0.0:
        return 0.0
    return tx_time_s * ptx_ul_w


def downlink_energy(tx_time_s: float, ptx_dl_w: float) -> float:
    """Energy the UAV spends unicasting the global model to the device."""
    if tx_time_s == 0.0 or ptx_dl_w == 0.0:
        return 0.0
    return tx_time_s * ptx_dl_w


def harvest_power(model: HarvestModel, harvest_input_w: float) -> float:
    """Harvested power for a given harvest-branch input, clamped at zero."""
    if harvest_input_w < 0:
        raise ValueError("harvest_input_w must be >= 0")
    x = harvest_input_w
    return max(0.0, model.a1 * x * x + model.a2 * x + model.a3)


def ledger(
    profile: ComputeProfile,
    harvest_model: HarvestModel,
    uplink: LinkBudget,
    downlink: LinkBudget,
    delta: float,
    ptx_ul_w: float,
    ptx_dl_w: float,
    *,
    device_pays_downlink: bool = True,
) -> EnergyLedger:
    """Assemble the full energy balance of one device for one round.

    Harvesting runs for the downlink transmission time on the harvest
    branch's share ``(1 - delta)`` of the received power. Zero harvested
    power yields zero harvested energy even when the downlink time is
    infinite (an unreachable device harvests nothing). A device with an
    infinite billed total is never feasible, even if the harvested energy
    is infinite as well.
    """
    e_c = compute_energy(profile)
    e_u = uplink_energy(uplink.tx_time_s, ptx_ul_w)
    e_d = downlink_energy(downlink.tx_time_s, ptx_dl_w)
    e_total = e_c + e_u + (e_d if device_pays_downlink else 0.0)

    p_h = harvest_power(harvest_model, (1.0 - delta) * downlink.prx_w)
    e_h = downlink.tx_time_s * p_h if p_h > 0.0 else 0.0

    feasible = math.isfinite(e_total) and e_total <= e_h
    return EnergyLedger(
        e_compute_j=e_c,
        e_uplink_j=e_u,
        e_downlink_j=e_d,
        e_total_j=e_total,
        p_harvest_w=p_h,
        e_harvest_j=e_h,
        feasible=feasible,
    )
