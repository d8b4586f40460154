"""Power-splitting ratio selection and UAV placement.

The per-device ratio solve exploits two structural facts: the downlink time
strictly decreases in the decode share ``delta``, so among energy-feasible
ratios the largest one minimizes that device's downlink time; and with
nonnegative harvest-curve coefficients the feasible set is a prefix
interval of [delta_min, delta_max], so its upper edge can be found by
bisection. Feasibility monotonicity is still verified empirically per
instance on a coarse probe grid, with a dense grid scan as the fallback
whenever the probe finds a counterexample.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .channel import (
    DELTA_MIN,
    ChannelRealization,
    LinkBudget,
    LinkParams,
    downlink_budget,
    uplink_budget,
)
from .energy import ComputeProfile, HarvestModel, ledger
from .timing import local_train_time, round_total

METHOD_BISECTION = "bisection"
METHOD_GRID = "grid"

MODE_CENTROID = "centroid"
MODE_GRID_SEARCH = "grid_search"


@dataclass(frozen=True)
class DeviceContext:
    """Everything the ratio solve needs for one device at one fading state.

    The uplink budget is precomputed (it does not depend on ``delta``);
    the downlink is re-derived per candidate ratio.
    """

    params: LinkParams
    realization: ChannelRealization
    device: int
    payload_dl_bits: float
    uplink: LinkBudget
    profile: ComputeProfile
    harvest: HarvestModel
    device_pays_downlink: bool = True


@dataclass(frozen=True)
class DeltaSolution:
    """Per-device ratios for one realization plus the resulting round delay.

    ``method`` is "grid" if any device needed the dense-scan fallback.
    Infeasible devices carry ``delta_min`` (maximum harvest share) and a
    False flag.
    """

    deltas: np.ndarray
    feasible: np.ndarray
    round_delay_s: float
    method: str


@dataclass(frozen=True)
class PlacementSolution:
    """Chosen UAV position and the expected round delay there."""

    position: tuple[float, float, float]
    objective_s: float


def _feasible_at(ctx: DeviceContext, delta: float) -> bool:
    dl = downlink_budget(ctx.params, ctx.realization, ctx.device, delta, ctx.payload_dl_bits)
    led = ledger(
        ctx.profile,
        ctx.harvest,
        ctx.uplink,
        dl,
        delta,
        ctx.params.ptx_ul_w,
        ctx.params.ptx_dl_w,
        device_pays_downlink=ctx.device_pays_downlink,
    )
    return led.feasible


def _solve_delta(
    ctx: DeviceContext,
    delta_min: float = DELTA_MIN,
    tol: float = 1e-6,
    max_iters: int = 60,
    grid_step: float = 1e-3,
    probe_points: int = 21,
) -> tuple[float, bool, str]:
    delta_max = 1.0 - delta_min
    probe = np.linspace(delta_min, delta_max, probe_points)
    flags = [_feasible_at(ctx, float(d)) for d in probe]

    monotone = all(not later or earlier for earlier, later in zip(flags, flags[1:]))
    if not monotone:
        # Feasibility is not a prefix interval here (possible with negative
        # harvest coefficients); scan densely for the largest feasible ratio.
        grid = np.arange(delta_min, delta_max, grid_step)
        grid = np.append(grid, delta_max)
        best = None
        for d in grid:
            if _feasible_at(ctx, float(d)):
                best = float(d)
        if best is None:
            return delta_min, False, METHOD_GRID
        return best, True, METHOD_GRID

    if flags[-1]:
        return delta_max, True, METHOD_BISECTION
    if not flags[0]:
        return delta_min, False, METHOD_BISECTION

    # Bracket the boundary between the last feasible and first infeasible
    # probe points, then bisect keeping lo feasible.
    k = max(i for i, f in enumerate(flags) if f)
    lo, hi = float(probe[k]), float(probe[k + 1])
    for _ in range(max_iters):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        if _feasible_at(ctx, mid):
            lo = mid
        else:
            hi = mid
    return lo, True, METHOD_BISECTION


def optimize_delta_device(
    ctx: DeviceContext,
    delta_min: float = DELTA_MIN,
    tol: float = 1e-6,
    max_iters: int = 60,
) -> tuple[float, bool]:
    """Largest energy-feasible power-splitting ratio for one device.

    Returns ``(delta_min, False)`` when no ratio is feasible; the device
    then harvests as much as possible and is flagged infeasible.
    """
    delta, feasible, _ = _solve_delta(ctx, delta_min=delta_min, tol=tol, max_iters=max_iters)
    return delta, feasible


def optimize_delta_all(
    params: LinkParams,
    realization: ChannelRealization,
    profiles: Sequence[ComputeProfile],
    harvest: HarvestModel,
    payload_ul_bits: float,
    payload_dl_bits: float,
    uav_time_s: float,
    *,
    device_pays_downlink: bool = True,
    delta_min: float = DELTA_MIN,
) -> DeltaSolution:
    """Solve every device independently and assemble the round delay.

    Independence holds because a device's ratio enters only its own decode
    SINR and harvest branch, never the interference seen by others.
    """
    m = realization.n_devices
    if len(profiles) != m:
        raise ValueError("need one compute profile per device")

    deltas = np.empty(m)
    feasible = np.empty(m, dtype=bool)
    methods = []
    uplinks = []
    for i in range(m):
        up = uplink_budget(params, realization, i, payload_ul_bits)
        uplinks.append(up)
        ctx = DeviceContext(
            params=params,
            realization=realization,
            device=i,
            payload_dl_bits=payload_dl_bits,
            uplink=up,
            profile=profiles[i],
            harvest=harvest,
            device_pays_downlink=device_pays_downlink,
        )
        deltas[i], feasible[i], method = _solve_delta(ctx, delta_min=delta_min)
        methods.append(method)

    t_down = [
        downlink_budget(params, realization, i, float(deltas[i]), payload_dl_bits).tx_time_s
        for i in range(m)
    ]
    delay = round_total(
        [up.tx_time_s for up in uplinks],
        [local_train_time(p) for p in profiles],
        t_down,
        uav_time_s,
    )
    method = METHOD_GRID if METHOD_GRID in methods else METHOD_BISECTION
    return DeltaSolution(
        deltas=deltas, feasible=feasible, round_delay_s=delay.t_total_s, method=method
    )


def place_uav(
    area_bounds: tuple[float, float, float, float],
    altitude_m: float,
    mode: str,
    evaluator: Callable[[tuple[float, float, float]], float],
    grid_points: int = 9,
) -> PlacementSolution:
    """Pick the UAV position: area center, or expected-delay grid search.

    The grid always contains the exact centroid so the search can never do
    worse than the centroid choice under the same evaluator. Ties go to the
    candidate nearest the centroid, then to the smaller (x, y) for full
    determinism.
    """
    xmin, xmax, ymin, ymax = area_bounds
    centroid = (0.5 * (xmin + xmax), 0.5 * (ymin + ymax), altitude_m)
    if mode == MODE_CENTROID:
        return PlacementSolution(position=centroid, objective_s=float(evaluator(centroid)))
    if mode != MODE_GRID_SEARCH:
        raise ValueError(f"unknown placement mode {mode!r}")
    if grid_points < 2:
        raise ValueError("grid_points must be >= 2")

    candidates = [
        (float(x), float(y), altitude_m)
        for x in np.linspace(xmin, xmax, grid_points)
        for y in np.linspace(ymin, ymax, grid_points)
    ]
    candidates.append(centroid)

    best = None
    best_key = None
    for pos in candidates:
        objective = float(evaluator(pos))
        d2 = (pos[0] - centroid[0]) ** 2 + (pos[1] - centroid[1]) ** 2
        key = (objective, d2, pos[0], pos[1])
        if best_key is None or key < best_key:
            best, best_key = PlacementSolution(position=pos, objective_s=objective), key
    return best
