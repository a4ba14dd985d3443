"""Farm-level reactive demand, droop synthesis, and demand linearization.

The demand model lumps the collection network into ``(l_net, c_net)`` and
holds the PCC voltage at a reference value (1.0 p.u. by default), so the
farm's reactive consumption is a function of normalized frequency and total
active output only. Frequency-droop gains are synthesized so the equilibria
at zero and full output land on the ends of the allowed frequency band.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from .devices import (
    Case,
    DruStation,
    TurbineUnit,
    dc_link_voltage_for_power,
    dru_from_power,
    pcc_current,
)
from .errors import DeviceError, FitError
from .network import aggregate_equivalents

OMEGA_VALID = (0.9, 1.1)


@dataclass(frozen=True)
class FrequencyBand:
    """Allowed normalized-frequency band with its nominal point."""

    omega_min_h: float
    omega_max_h: float
    omega_0: float

    def __post_init__(self) -> None:
        if not (self.omega_min_h <= self.omega_0 <= self.omega_max_h):
            raise DeviceError("need omega_min_h <= omega_0 <= omega_max_h")
        if self.omega_min_h < OMEGA_VALID[0] - 1e-12 or self.omega_max_h > OMEGA_VALID[1] + 1e-12:
            raise DeviceError(f"band must lie within {OMEGA_VALID}")

    @property
    def delta_omega_max(self) -> float:
        return self.omega_max_h - self.omega_min_h

    @property
    def is_point(self) -> bool:
        return self.delta_omega_max == 0.0


@dataclass(frozen=True)
class DroopParams:
    """Per-turbine frequency-reactive droop: q = q_0 + k_h * (omega - omega_0)."""

    k_h: float
    q_0: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.k_h) and math.isfinite(self.q_0)):
            raise DeviceError("droop parameters must be finite")
        if self.k_h == 0:
            raise DeviceError("degenerate droop: k_h must be nonzero")

    def supply(self, omega: float, omega_0: float) -> float:
        return self.q_0 + self.k_h * (omega - omega_0)


@dataclass(frozen=True)
class DemandLine:
    """Affine frequency-reactive demand: q = d1 * omega + d2."""

    d1: float
    d2: float
    p_anchor: float
    max_abs_err: float

    def __post_init__(self) -> None:
        if self.max_abs_err < 0:
            raise DeviceError("max_abs_err must be >= 0")

    def q_at(self, omega: float) -> float:
        return self.d1 * omega + self.d2


@dataclass(frozen=True)
class QuadraticDemandFit:
    """Demand surface q = k1 * P^2 * omega + k2 * omega + k3 * P."""

    k1: float
    k2: float
    k3: float
    max_abs_err: float = 0.0

    def __post_init__(self) -> None:
        for v in (self.k1, self.k2, self.k3):
            if not math.isfinite(v):
                raise DeviceError("fit coefficients must be finite")

    def q_at(self, omega: float, p_total: float) -> float:
        return self.k1 * p_total * p_total * omega + self.k2 * omega + self.k3 * p_total


@dataclass(frozen=True)
class DemandModel:
    """Lumped reactive-demand model of the whole farm."""

    l_net: float
    c_net: float
    turbines: Tuple[TurbineUnit, ...]
    dru: DruStation
    u_ref: float = 1.0

    @classmethod
    def from_case(cls, case: Case, u_ref: float = 1.0) -> "DemandModel":
        l_net, c_net = aggregate_equivalents(case.network)
        return cls(l_net=l_net, c_net=c_net, turbines=case.turbines, dru=case.dru, u_ref=u_ref)

    @classmethod
    def at_operating_voltage(
        cls, case: Case, p_total: float, omega: float = 1.0
    ) -> "DemandModel":
        """Model referenced at the PCC voltage the DC link imposes at ``p_total``.

        Keeps the aggregate demand constraint consistent with the detailed
        network equations when the farm voltage deviates from 1.0 p.u.
        """
        u_ref = dc_link_voltage_for_power(case.dru, p_total, omega)
        return cls.from_case(case, u_ref=u_ref)

    @property
    def n_wt(self) -> int:
        return len(self.turbines)

    def q(self, omega: float, p_farm: float) -> float:
        return farm_demand(omega, p_farm, self)


def farm_demand(omega: float, p_farm: float, model: DemandModel) -> float:
    """Total reactive power the farm must supply at ``(omega, p_farm)``.

    Sum of the filter, transformer, collection-network, and rectifier terms,
    with the PCC voltage held at the model's reference value.
    """
    if p_farm < 0:
        raise DeviceError("p_farm must be >= 0")
    u = model.u_ref
    n_wt = model.n_wt
    op = dru_from_power(u, p_farm, model.dru, omega)
    q_dr = p_farm * math.tan(op.phi)
    i_pcc = pcc_current(p_farm, u, op.phi)
    q_net = 1.5 * i_pcc * i_pcc * omega * model.l_net - 1.5 * u * u * omega * model.c_net
    q_tf = 0.0
    q_cf = 0.0
    for t in model.turbines:
        u_lv = u / t.n_tf
        q_cf -= 1.5 * u_lv * u_lv * omega * t.c_f
        if n_wt:
            i_lv = i_pcc * t.n_tf / n_wt
            q_tf += 1.5 * i_lv * i_lv * omega * t.l_tf
    return q_cf + q_tf + q_net + q_dr


def compute_droop_params(
    band: FrequencyBand, model: DemandModel, n_wt: int, p_farm_max: float
) -> DroopParams:
    """Droop gains anchoring the equilibria to the ends of the band.

    At zero output the farm settles at ``omega_min_h``; at ``p_farm_max``
    it settles at ``omega_max_h``.
    """
    if not p_farm_max > 0:
        raise DeviceError("p_farm_max must be positive")
    if band.is_point:
        raise DeviceError("band must have nonzero width")
    q_farm_max_h = model.q(band.omega_max_h, p_farm_max)
    q_farm_min_h = model.q(band.omega_min_h, 0.0)
    k_h = (q_farm_max_h - q_farm_min_h) / (n_wt * band.delta_omega_max)
    if abs(k_h) < 1e-12:
        raise DeviceError("degenerate droop: demand is flat across the band")
    q_0 = q_farm_max_h / n_wt - k_h * (band.omega_max_h - band.omega_0)
    return DroopParams(k_h=k_h, q_0=q_0)


def static_operating_point(
    droop: DroopParams,
    p_farm: float,
    model: DemandModel,
    band: FrequencyBand,
    n_wt: int,
    tol_omega: float = 1e-12,
    max_iter: int = 200,
) -> float:
    """Frequency where aggregate droop supply meets the farm demand.

    Bracketed bisection over the band; the residual at the returned point is
    below 1e-9 p.u.
    """

    def residual(omega: float) -> float:
        return n_wt * droop.supply(omega, band.omega_0) - model.q(omega, p_farm)

    lo, hi = band.omega_min_h, band.omega_max_h
    grid = np.linspace(lo, hi, 33)
    values = [residual(w) for w in grid]
    scale = max(1.0, max(abs(v) for v in values))
    bracket = None
    for k in range(len(grid)):
        if abs(values[k]) <= 1e-11 * scale:
            return float(grid[k])
        if k and values[k - 1] * values[k] < 0:
            bracket = (grid[k - 1], grid[k], values[k - 1])
            break
    if bracket is None:
        raise DeviceError("no droop-demand equilibrium inside the band")
    a, b, fa = bracket
    for _ in range(max_iter):
        mid = 0.5 * (a + b)
        fm = residual(mid)
        if fm == 0.0 or (b - a) <= tol_omega:
            return float(mid)
        if fa * fm < 0:
            b = mid
        else:
            a, fa = mid, fm
    return float(0.5 * (a + b))


def fit_demand_line(
    model: DemandModel,
    p_anchor: float,
    band: FrequencyBand,
    n_samples: int = 101,
    dense_samples: int = 2001,
) -> DemandLine:
    """Least-squares affine fit of the demand over the band at fixed output.

    The residual bound ``max_abs_err`` comes from a dense scan, independent of
    the fit grid.
    """
    if n_samples < 2:
        raise FitError("need at least 2 samples for an affine fit")
    omegas = np.linspace(band.omega_min_h, band.omega_max_h, n_samples)
    q = np.array([model.q(w, p_anchor) for w in omegas])
    a = np.column_stack([omegas, np.ones_like(omegas)])
    coef, *_ = np.linalg.lstsq(a, q, rcond=None)
    d1, d2 = float(coef[0]), float(coef[1])
    dense = np.linspace(band.omega_min_h, band.omega_max_h, dense_samples)
    resid = np.array([model.q(w, p_anchor) for w in dense]) - (d1 * dense + d2)
    return DemandLine(d1=d1, d2=d2, p_anchor=p_anchor, max_abs_err=float(np.max(np.abs(resid))))


def fit_quadratic_surface(
    model: DemandModel,
    p_grid: Sequence[float],
    band: FrequencyBand,
    n_omega: int = 41,
) -> QuadraticDemandFit:
    """Least-squares fit of q = k1*P^2*omega + k2*omega + k3*P over a P grid."""
    levels = sorted(set(float(p) for p in p_grid))
    if len(levels) < 3:
        raise FitError("need at least 3 distinct active-power levels")
    omegas = np.linspace(band.omega_min_h, band.omega_max_h, n_omega)
    rows = []
    rhs = []
    for p in levels:
        for w in omegas:
            rows.append([p * p * w, w, p])
            rhs.append(model.q(w, p))
    a = np.asarray(rows)
    b = np.asarray(rhs)
    coef, _, rank, _ = np.linalg.lstsq(a, b, rcond=None)
    if rank < 3:
        raise FitError("rank-deficient sample set for the quadratic surface")
    resid = b - a @ coef
    return QuadraticDemandFit(
        k1=float(coef[0]),
        k2=float(coef[1]),
        k3=float(coef[2]),
        max_abs_err=float(np.max(np.abs(resid))),
    )
