"""Closed-form link budgets for the device-to-UAV uplink and UAV-to-device downlink.

Everything is SI: watts, meters, hertz, bits, seconds. Channels are scalar
block-Rayleigh fades: squared magnitudes are drawn once per communication
round (elsewhere) and passed in here as plain nonnegative numbers. The
downlink receiver is a power splitter: a fraction ``delta`` of the received
power feeds the decoder, the remaining ``1 - delta`` feeds the energy
harvester.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

# The power-splitting ratio lives on the open interval (0, 1); the clamp
# keeps both the decode and harvest branches strictly alive.
DELTA_MIN = 1e-3
DELTA_MAX = 1.0 - DELTA_MIN

_POSITIVE_LINK_FIELDS = (
    "pathloss_exponent",
    "bandwidth_hz",
    "noise_power_ul_w",
    "noise_power_dl_w",
    "ptx_ul_w",
    "ptx_dl_w",
)


@dataclass(frozen=True)
class LinkParams:
    """Static radio constants shared by every device.

    Transmit powers are common to all devices in both directions; only the
    fading state and distances vary per device.
    """

    pathloss_exponent: float
    bandwidth_hz: float
    noise_power_ul_w: float
    noise_power_dl_w: float
    ptx_ul_w: float
    ptx_dl_w: float

    def __post_init__(self):
        for name in _POSITIVE_LINK_FIELDS:
            value = getattr(self, name)
            if not value > 0:
                raise ValueError(f"LinkParams.{name} must be > 0, got {value!r}")
        if not 2.0 <= self.pathloss_exponent <= 6.0:
            warnings.warn(
                f"pathloss_exponent={self.pathloss_exponent} is outside the "
                "usual [2, 6] range",
                stacklevel=2,
            )


@dataclass(frozen=True)
class ChannelRealization:
    """One round's fading state: squared channel gains and 3-D distances."""

    gains_sq: np.ndarray
    distances_m: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "gains_sq", np.asarray(self.gains_sq, dtype=float))
        object.__setattr__(self, "distances_m", np.asarray(self.distances_m, dtype=float))
        if self.gains_sq.ndim != 1 or self.distances_m.ndim != 1:
            raise ValueError("gains_sq and distances_m must be 1-D")
        if len(self.gains_sq) != len(self.distances_m):
            raise ValueError(
                f"length mismatch: {len(self.gains_sq)} gains vs "
                f"{len(self.distances_m)} distances"
            )
        if np.any(self.gains_sq < 0):
            raise ValueError("gains_sq must be >= 0")
        if np.any(self.distances_m <= 0):
            raise ValueError("distances_m must be > 0")

    @property
    def n_devices(self) -> int:
        return len(self.gains_sq)


@dataclass(frozen=True)
class LinkBudget:
    """Derived link quantities for one device in one direction."""

    prx_w: float
    interference_w: float
    sinr: float
    rate_bps: float
    tx_time_s: float


def received_power(ptx_w: float, distance_m: float, alpha: float, gain_sq: float) -> float:
    """Power-law received power: ptx * d^(-alpha) * |g|^2."""
    if not distance_m > 0:
        raise ValueError(f"distance_m must be > 0, got {distance_m!r}")
    if ptx_w < 0 or gain_sq < 0:
        raise ValueError("ptx_w and gain_sq must be >= 0")
    return ptx_w * distance_m ** (-alpha) * gain_sq


def interference_power(
    ptx_w: float,
    realization: ChannelRealization,
    alpha: float,
    excluded_device: int,
) -> float:
    """Aggregate co-channel power from every device except ``excluded_device``.

    Both directions use the same form: each interferer contributes through
    its own gain and distance to the UAV, at the common transmit power.
    """
    m = realization.n_devices
    if not 0 <= excluded_device < m:
        raise IndexError(f"excluded_device {excluded_device} out of range for M={m}")
    total = 0.0
    for j in range(m):
        if j == excluded_device:
            continue
        total += received_power(ptx_w, realization.distances_m[j], alpha, realization.gains_sq[j])
    return total


def sinr(prx_decode_w: float, interference_w: float, noise_w: float) -> float:
    """Signal-to-interference-plus-noise ratio.

    For the downlink, pass ``delta * prx`` as the decode power: only the
    decoder branch of the power splitter sees the signal.
    """
    if not noise_w > 0:
        raise ValueError(f"noise_w must be > 0, got {noise_w!r}")
    if prx_decode_w < 0 or interference_w < 0:
        raise ValueError("powers must be >= 0")
    return prx_decode_w / (interference_w + noise_w)


def achievable_rate(bandwidth_hz: float, sinr_value: float) -> float:
    """Shannon-style rate: bandwidth * log2(1 + sinr), in bits/s."""
    if not bandwidth_hz > 0:
        raise ValueError(f"bandwidth_hz must be > 0, got {bandwidth_hz!r}")
    if sinr_value < 0:
        raise ValueError("sinr must be >= 0")
    return bandwidth_hz * math.log2(1.0 + sinr_value)


def tx_time(payload_bits: float, rate_bps: float) -> float:
    """Transmission time payload/rate.

    Zero payload takes zero time. Positive payload at zero rate returns
    +inf: the device is unreachable this round, which downstream feasibility
    checks reject; it is a value, not an error.
    """
    if payload_bits < 0:
        raise ValueError("payload_bits must be >= 0")
    if payload_bits == 0:
        return 0.0
    if rate_bps == 0:
        return math.inf
    return payload_bits / rate_bps


def uplink_budget(
    params: LinkParams,
    realization: ChannelRealization,
    device: int,
    payload_bits: float,
) -> LinkBudget:
    """Full uplink chain for one device: power, interference, SINR, rate, time."""
    prx = received_power(
        params.ptx_ul_w,
        realization.distances_m[device],
        params.pathloss_exponent,
        realization.gains_sq[device],
    )
    interf = interference_power(params.ptx_ul_w, realization, params.pathloss_exponent, device)
    g = sinr(prx, interf, params.noise_power_ul_w)
    rate = achievable_rate(params.bandwidth_hz, g)
    return LinkBudget(prx, interf, g, rate, tx_time(payload_bits, rate))


def downlink_budget(
    params: LinkParams,
    realization: ChannelRealization,
    device: int,
    delta: float,
    payload_bits: float,
) -> LinkBudget:
    """Full downlink chain for one device at power-splitting ratio ``delta``.

    ``prx_w`` in the result is the full received power; only ``delta`` of it
    reaches the decoder (reflected in the SINR), and the remaining
    ``(1 - delta) * prx_w`` is what the harvester sees (consumed by the
    energy module, not stored here).
    """
    if not DELTA_MIN <= delta <= DELTA_MAX:
        raise ValueError(f"delta must be in [{DELTA_MIN}, {DELTA_MAX}], got {delta!r}")
    prx = received_power(
        params.ptx_dl_w,
        realization.distances_m[device],
        params.pathloss_exponent,
        realization.gains_sq[device],
    )
    interf = interference_power(params.ptx_dl_w, realization, params.pathloss_exponent, device)
    g = sinr(delta * prx, interf, params.noise_power_dl_w)
    rate = achievable_rate(params.bandwidth_hz, g)
    return LinkBudget(prx, interf, g, rate, tx_time(payload_bits, rate))
