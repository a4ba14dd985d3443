"""Exhaustive grid-search oracle for tiny networks.

Independently audits the conic relaxation: scans frequency and per-turbine
reactive setpoints on a nested refined grid, evaluates every candidate with
the AC power flow, filters by the voltage/flow/capability bounds and the
demand line, and returns the minimum-loss feasible candidate. Every evaluated
candidate is first projected onto the demand line (a uniform shift of the
reactive vector), so the reported optimum is feasible for the relaxed program
and can never undercut it beyond solver tolerance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np

from .demand import DemandLine, FrequencyBand
from .devices import Case
from .errors import ConvergenceError, DeviceError, DruBlockedError, OracleError
from .validation import PowerFlowResult, ac_power_flow

MAX_ORACLE_TURBINES = 2
MIN_RESOLUTION = 11


@dataclass
class OracleResult:
    omega: float
    q_per_turbine: Dict[str, float]
    losses_ac: float
    losses_total: float
    power_flow: PowerFlowResult
    evaluated: int
    feasible: int
    rounds: int
    resolution: int


def _feasible_state(case: Case, pf: PowerFlowResult) -> bool:
    net = case.network
    for bus in net.buses:
        mag = abs(pf.bus_v[bus.id])
        if mag < bus.v_min - 1e-9 or mag > bus.v_max + 1e-9:
            return False
    for k, br in enumerate(net.branches):
        for d in (0, 1):
            if abs(pf.branch_s[(k, d)]) > br.s_max * (1.0 + 1e-9):
                return False
    return True


def grid_search_oracle(
    case: Case,
    demand_line: DemandLine,
    p_per_turbine: Mapping[str, float],
    band: FrequencyBand,
    resolution: int = 11,
    rounds: int = 3,
    seed: int = 0,
) -> OracleResult:
    """Best feasible operating point by nested exhaustive search.

    Decision axes are the frequency and each turbine's reactive output, so
    the farm must have at most two turbines. ``seed`` is recorded for report
    traceability; the scan order itself is deterministic and ties are broken
    by lexicographic candidate order.
    """
    del seed  # scan order is already deterministic
    if case.n_wt > MAX_ORACLE_TURBINES:
        raise OracleError(
            f"dimensionality too high: oracle supports at most "
            f"{MAX_ORACLE_TURBINES} turbines, got {case.n_wt}"
        )
    if resolution < MIN_RESOLUTION:
        raise OracleError(f"resolution must be >= {MIN_RESOLUTION}")

    turbines = list(case.turbines)
    p_vec = [float(p_per_turbine[t.bus]) for t in turbines]
    caps = [t.q_capability(p) for t, p in zip(turbines, p_vec)]

    omega_box = (band.omega_min_h, band.omega_max_h)
    q_boxes = [(-c, c) for c in caps]

    best: Optional[Tuple[float, Tuple[int, ...], float, Dict[str, float], PowerFlowResult]] = None
    evaluated = 0
    feasible_count = 0

    def evaluate(omega: float, q_raw: List[float], index: Tuple[int, ...]):
        nonlocal best, evaluated, feasible_count
        # project onto the demand line: uniform shift across turbines
        shift = (demand_line.q_at(omega) - sum(q_raw)) / len(q_raw)
        q = [qi + shift for qi in q_raw]
        for qi, cap in zip(q, caps):
            if abs(qi) > cap + 1e-12:
                return
        evaluated += 1
        q_set = {t.bus: qi for t, qi in zip(turbines, q)}
        p_set = {t.bus: pi for t, pi in zip(turbines, p_vec)}
        try:
            pf = ac_power_flow(case, p_set, q_set, omega)
        except (DruBlockedError, ConvergenceError, DeviceError):
            return
        if not _feasible_state(case, pf):
            return
        feasible_count += 1
        loss = pf.ac_losses
        if best is None or loss < best[0] - 1e-15:
            best = (loss, index, omega, q_set, pf)

    for rnd in range(rounds):
        omegas = np.linspace(omega_box[0], omega_box[1], resolution)
        q_axes = [np.linspace(lo, hi, resolution) for lo, hi in q_boxes]
        # candidates only pass the filter when the projection distance is
        # within the demand-line residual or half a grid cell
        window = demand_line.max_abs_err
        for ax in q_axes:
            window = max(window, 0.55 * (ax[1] - ax[0]) if len(ax) > 1 else 0.0)

        if best is not None:
            # keep the incumbent in play so refinement is monotone
            evaluate(best[2], [best[3][t.bus] for t in turbines], (-1,) * (1 + len(q_axes)))

        for iw, omega in enumerate(omegas):
            target = demand_line.q_at(omega)
            if len(q_axes) == 1:
                for i0, q0 in enumerate(q_axes[0]):
                    if abs(q0 - target) > window:
                        continue
                    evaluate(float(omega), [float(q0)], (iw, i0))
            else:
                for i0, q0 in enumerate(q_axes[0]):
                    for i1, q1 in enumerate(q_axes[1]):
                        if abs(q0 + q1 - target) > window:
                            continue
                        evaluate(float(omega), [float(q0), float(q1)], (iw, i0, i1))

        if best is None:
            raise OracleError("no feasible candidate at this resolution")
        # refine: box of two old cells centered on the incumbent
        _, _, omega_c, q_best, _ = best
        cell = (omega_box[1] - omega_box[0]) / (resolution - 1)
        omega_box = (
            max(band.omega_min_h, omega_c - cell),
            min(band.omega_max_h, omega_c + cell),
        )
        new_boxes = []
        for (lo, hi), t, cap in zip(q_boxes, turbines, caps):
            cell = (hi - lo) / (resolution - 1)
            center = q_best[t.bus]
            new_boxes.append((max(-cap, center - cell), min(cap, center + cell)))
        q_boxes = new_boxes

    loss, _, omega_star, q_star, pf = best
    return OracleResult(
        omega=omega_star,
        q_per_turbine=q_star,
        losses_ac=loss,
        losses_total=pf.losses_total,
        power_flow=pf,
        evaluated=evaluated,
        feasible=feasible_count,
        rounds=rounds,
        resolution=resolution,
    )
