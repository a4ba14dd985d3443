"""Independent AC power flow, loss accounting, and the uniform-Q baseline.

The power flow is the feasibility oracle for the conic solutions: it solves
the true nonlinear network equations with the rectifier as a voltage-dependent
P-Q sink. Radial networks use a backward/forward sweep; meshed networks (or
``method="newton"``) use a Newton iteration on the nodal mismatches. The
rectifier-bus voltage magnitude is the balancing unknown: it is adjusted until
the DC link absorbs exactly the power arriving at its bus.

The rectifier pins both its active and reactive draw to its AC voltage, so
with every turbine setpoint fixed the arriving reactive cannot also be
matched in general; the deviation from the rectifier's own characteristic is
reported as ``q_dru_residual`` (it vanishes for consistent dispatches).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np
from scipy import optimize

from .demand import DemandModel, FrequencyBand
from .devices import Case, DruOperatingPoint, dru_dc_link
from .errors import ConvergenceError, DeviceError, DruBlockedError
from .network import BusKind, NetworkModel, TopologyKind

MISMATCH_TOL = 1e-10
_SWEEP_TOL = 5e-15
_MAX_SWEEP = 300
_MAX_OUTER = 50


@dataclass
class PowerFlowResult:
    converged: bool
    omega: float
    bus_v: Dict[str, complex]
    branch_s: Dict[Tuple[int, int], complex]
    losses_total: float
    breakdown: Dict[str, float]
    iterations: int
    max_mismatch: float
    dru_op: DruOperatingPoint
    q_dru_residual: float
    dru_blocked: bool
    p_delivered: float
    method: str

    @property
    def ac_losses(self) -> float:
        return self.losses_total - self.breakdown["dc_cable"]


@dataclass
class BaselineResult:
    q_uniform: float
    omega: float
    power_flow: PowerFlowResult


def _bus_shunts(case: Case, omega: float) -> Dict[str, complex]:
    """Bus-attached shunt admittance: bus shunt plus turbine filter."""
    shunts = {b.id: omega * b.shunt_c for b in case.network.buses}
    for t in case.turbines:
        shunts[t.bus] += omega * t.c_f
    return {bus: 1j * b for bus, b in shunts.items()}


def _end_shunts(net: NetworkModel, omega: float) -> Dict[str, complex]:
    """Branch pi-model end shunts accumulated onto their buses."""
    acc = {b.id: 0j for b in net.buses}
    for br in net.branches:
        y = 1j * omega * br.c_half
        acc[br.from_bus] += y
        acc[br.to_bus] += y
    return acc


def _branch_flows(
    net: NetworkModel, v: Mapping[str, complex], omega: float
) -> Dict[Tuple[int, int], complex]:
    flows: Dict[Tuple[int, int], complex] = {}
    for k, br in enumerate(net.branches):
        z = complex(br.r, omega * br.l)
        y = 1.0 / z
        y_half = 1j * omega * br.c_half
        vi, vj = v[br.from_bus], v[br.to_bus]
        flows[(k, 0)] = 1.5 * vi * np.conj(y * (vi - vj) + y_half * vi)
        flows[(k, 1)] = 1.5 * vj * np.conj(y * (vj - vi) + y_half * vj)
    return flows


def _nodal_mismatch(
    case: Case,
    v: Mapping[str, complex],
    flows: Mapping[Tuple[int, int], complex],
    s_inj: Mapping[str, complex],
    omega: float,
) -> Dict[str, complex]:
    """Injection plus bus-shunt generation minus outgoing flows, per bus."""
    net = case.network
    shunts = _bus_shunts(case, omega)
    mism = {}
    for b in net.buses:
        total = s_inj.get(b.id, 0j)
        total += 1.5 * abs(v[b.id]) ** 2 * np.conj(shunts[b.id]) * (-1.0)
        mism[b.id] = total
    for k, br in enumerate(net.branches):
        mism[br.from_bus] -= flows[(k, 0)]
        mism[br.to_bus] -= flows[(k, 1)]
    return mism


def loss_breakdown(
    pf_branch_s: Mapping[Tuple[int, int], complex],
    case: Case,
    dc_loss: float,
) -> Dict[str, float]:
    """Active losses by category; categories sum to the total.

    Machine-transformer branches touch a turbine LV bus; the rectifier
    transformer branch touches the rectifier bus; everything else is cable.
    Filter capacitors are modeled lossless, so their category is zero and
    kept for report shape.
    """
    net = case.network
    lv_ids = {b.id for b in net.turbine_lv_buses()}
    dru_id = net.dru_bus.id
    out = {"cables": 0.0, "transformers": 0.0, "filter_net": 0.0, "dru_ac_side": 0.0, "dc_cable": dc_loss}
    for k, br in enumerate(net.branches):
        loss = (pf_branch_s[(k, 0)] + pf_branch_s[(k, 1)]).real
        if br.from_bus in lv_ids or br.to_bus in lv_ids:
            out["transformers"] += loss
        elif br.from_bus == dru_id or br.to_bus == dru_id:
            out["dru_ac_side"] += loss
        else:
            out["cables"] += loss
    return out


def _check_setpoints(case: Case, p_set: Mapping[str, float], q_set: Mapping[str, float]):
    lv = {t.bus for t in case.turbines}
    if set(p_set) != lv or set(q_set) != lv:
        raise DeviceError("setpoints must cover exactly the turbine buses")
    for t in case.turbines:
        p, q = p_set[t.bus], q_set[t.bus]
        if p < 0:
            raise DeviceError(f"negative active setpoint at {t.bus}")
        if p * p + q * q > t.s_rating**2 * (1.0 + 1e-9) + 1e-12:
            raise DeviceError(f"setpoint at {t.bus} exceeds the apparent rating")


def _sweep(
    case: Case,
    s_inj: Dict[str, complex],
    omega: float,
    u_root: float,
    v_start: Optional[Dict[str, complex]] = None,
) -> Tuple[Dict[str, complex], int]:
    net = case.network
    root = net.dru_bus.id
    tree = net.spanning_tree(root)
    order = list(tree.keys())  # BFS: parents precede children
    y_acc = _bus_shunts(case, omega)
    for bus, y in _end_shunts(net, omega).items():
        y_acc[bus] += y
    z_series = {k: complex(br.r, omega * br.l) for k, br in enumerate(net.branches)}
    children: Dict[str, List[str]] = {b.id: [] for b in net.buses}
    for child, (parent, _) in tree.items():
        children[parent].append(child)

    v = dict(v_start) if v_start else {b.id: complex(u_root, 0.0) for b in net.buses}
    v[root] = complex(u_root, 0.0)
    iterations = 0
    for it in range(_MAX_SWEEP):
        iterations = it + 1
        i_series: Dict[str, complex] = {}
        for child in reversed(order):
            inj = s_inj.get(child, 0j)
            cur = y_acc[child] * v[child]
            if inj != 0:
                cur -= np.conj(inj / (1.5 * v[child]))
            for grand in children[child]:
                cur += i_series[grand]
            i_series[child] = cur
        delta = 0.0
        for child in order:
            parent, k = tree[child]
            v_new = v[parent] - z_series[k] * i_series[child]
            delta = max(delta, abs(v_new - v[child]))
            v[child] = v_new
        if delta < _SWEEP_TOL:
            break
    return v, iterations


def _arriving_power(
    case: Case, v: Mapping[str, complex], s_inj: Mapping[str, complex], omega: float
) -> complex:
    """Complex power absorbed by the rectifier at its bus."""
    net = case.network
    flows = _branch_flows(net, v, omega)
    root = net.dru_bus.id
    shunt = _bus_shunts(case, omega)[root]
    arriving = -sum(
        flows[(k, d)]
        for k, br in enumerate(net.branches)
        for d, end in ((0, br.from_bus), (1, br.to_bus))
        if end == root
    )
    arriving += 1.5 * abs(v[root]) ** 2 * np.conj(shunt) * (-1.0)
    return arriving


def ac_power_flow(
    case: Case,
    p_set: Mapping[str, float],
    q_set: Mapping[str, float],
    omega: float,
    method: str = "auto",
) -> PowerFlowResult:
    """Solve the network at fixed turbine setpoints and frequency.

    Raises :class:`DruBlockedError` when the network cannot push any power
    into the rectifier (losses exceed generation), and
    :class:`ConvergenceError` on iteration failure.
    """
    _check_setpoints(case, p_set, q_set)
    net = case.network
    if method == "auto":
        method = "sweep" if net.topology_kind is TopologyKind.RADIAL else "newton"
    if method == "sweep" and net.topology_kind is not TopologyKind.RADIAL:
        raise ConvergenceError("sweep method requires a radial network")
    s_inj = {t.bus: complex(p_set[t.bus], q_set[t.bus]) for t in case.turbines}
    dru = case.dru

    if method == "sweep":
        return _solve_sweep(case, s_inj, omega)
    if method == "newton":
        return _solve_newton(case, s_inj, omega)
    raise ValueError(f"unknown method {method!r}")


def _package_result(
    case: Case,
    v: Dict[str, complex],
    s_inj: Dict[str, complex],
    omega: float,
    outer_iterations: int,
    method: str,
) -> PowerFlowResult:
    net = case.network
    dru = case.dru
    root = net.dru_bus.id
    flows = _branch_flows(net, v, omega)
    u_root = abs(v[root])
    op = dru_dc_link(u_root, dru, omega)
    arriving = _arriving_power(case, v, s_inj, omega)

    mism = _nodal_mismatch(case, v, flows, s_inj, omega)
    # at the rectifier bus the sink itself balances the node
    mism[root] += -complex(op.p, arriving.imag)
    max_mismatch = max(abs(m) for m in mism.values())

    dc_loss = dru.r_dc * op.i_d**2
    breakdown = loss_breakdown(flows, case, dc_loss)
    losses_total = sum(breakdown.values())
    converged = max_mismatch <= MISMATCH_TOL
    if not converged:
        raise ConvergenceError(
            f"power flow mismatch {max_mismatch:.3e} exceeds {MISMATCH_TOL}"
        )
    return PowerFlowResult(
        converged=converged,
        omega=omega,
        bus_v=v,
        branch_s=flows,
        losses_total=losses_total,
        breakdown=breakdown,
        iterations=outer_iterations,
        max_mismatch=max_mismatch,
        dru_op=op,
        q_dru_residual=float(arriving.imag - op.q_dr),
        dru_blocked=op.i_d == 0.0,
        p_delivered=dru.v_dc_onshore * op.i_d,
        method=method,
    )


def _solve_sweep(case: Case, s_inj: Dict[str, complex], omega: float) -> PowerFlowResult:
    dru = case.dru
    v_on = dru.v_dc_onshore
    warm: Dict[str, complex] = {}
    evals = 0

    def arriving_at(u_root: float) -> float:
        nonlocal warm, evals
        evals += 1
        v, _ = _sweep(case, s_inj, omega, u_root, warm or None)
        warm = v
        return float(_arriving_power(case, v, s_inj, omega).real)

    def f(u_root: float) -> float:
        return arriving_at(u_root) - dru_dc_link(u_root, dru, omega).p

    arr0 = arriving_at(v_on)
    if arr0 < -1e-11:
        raise DruBlockedError(
            "rectifier blocked: collection losses exceed the farm generation"
        )
    if arr0 <= 1e-12:
        v, _ = _sweep(case, s_inj, omega, v_on, warm or None)
        return _package_result(case, v, s_inj, omega, evals, "sweep")

    hi = v_on
    step = max(0.02, 0.05 * v_on)
    f_hi = f(hi)
    for _ in range(40):
        if f_hi < 0:
            break
        hi += step
        step *= 1.5
        if hi > 2.0:
            raise ConvergenceError("DC link cannot absorb the farm output below 2 p.u.")
        try:
            f_hi = f(hi)
        except DeviceError as exc:
            raise ConvergenceError(f"rectifier outside conduction mode: {exc}") from exc
    u_star = optimize.brentq(f, v_on, hi, xtol=1e-13, rtol=1e-14, maxiter=_MAX_OUTER)
    v, _ = _sweep(case, s_inj, omega, float(u_star), warm or None)
    return _package_result(case, v, s_inj, omega, evals, "sweep")


def _solve_newton(case: Case, s_inj: Dict[str, complex], omega: float) -> PowerFlowResult:
    net = case.network
    dru = case.dru
    root = net.dru_bus.id
    others = [b.id for b in net.buses if b.id != root]
    v_on = dru.v_dc_onshore

    def unpack(z: np.ndarray) -> Dict[str, complex]:
        v = {root: complex(max(z[-1], 1e-6), 0.0)}
        for i, bus in enumerate(others):
            v[bus] = complex(z[2 * i], z[2 * i + 1])
        return v

    def p_dc(u: float) -> float:
        try:
            return dru_dc_link(u, dru, omega).p
        except DeviceError:
            k_x = dru.k_drop * omega * dru.l_c
            return u * u / (4.0 * k_x)  # deliverable ceiling keeps residuals finite

    def residuals(z: np.ndarray) -> np.ndarray:
        v = unpack(z)
        flows = _branch_flows(net, v, omega)
        mism = _nodal_mismatch(case, v, flows, s_inj, omega)
        out = np.empty(2 * len(others) + 1)
        for i, bus in enumerate(others):
            out[2 * i] = mism[bus].real
            out[2 * i + 1] = mism[bus].imag
        arriving = _arriving_power(case, v, s_inj, omega)
        out[-1] = arriving.real - p_dc(abs(v[root]))
        return out

    z0 = np.empty(2 * len(others) + 1)
    u0 = max(v_on, 0.99)
    for i in range(len(others)):
        z0[2 * i] = u0
        z0[2 * i + 1] = 0.0
    z0[-1] = u0
    sol = optimize.root(residuals, z0, method="hybr", tol=1e-13)
    v = unpack(sol.x)
    arr = _arriving_power(case, v, s_inj, omega).real
    if arr <= 1e-12 and not sol.success:
        raise DruBlockedError("rectifier blocked: no conducting solution found")
    if not sol.success and np.max(np.abs(residuals(sol.x))) > MISMATCH_TOL:
        raise ConvergenceError(f"newton power flow failed: {sol.message}")
    return _package_result(case, v, s_inj, omega, int(sol.nfev), "newton")


def baseline_uniform(
    case: Case,
    p_per_turbine: Mapping[str, float],
    model: DemandModel,
    band: FrequencyBand,
) -> BaselineResult:
    """Comparator dispatch: nominal frequency, identical reactive everywhere.

    Every turbine outputs ``farm_demand(omega_0, sum P) / n_wt``; raises
    :class:`DeviceError` when that uniform setpoint violates a capability.
    """
    omega = band.omega_0
    p_total = sum(float(p_per_turbine[t.bus]) for t in case.turbines)
    q_uniform = model.q(omega, p_total) / case.n_wt
    for t in case.turbines:
        p = float(p_per_turbine[t.bus])
        if p * p + q_uniform * q_uniform > t.s_rating**2 * (1.0 + 1e-9):
            raise DeviceError(
                f"uniform reactive setpoint {q_uniform:.4f} exceeds the rating at {t.bus}"
            )
    q_set = {t.bus: q_uniform for t in case.turbines}
    pf = ac_power_flow(case, dict(p_per_turbine), q_set, omega)
    return BaselineResult(q_uniform=q_uniform, omega=omega, power_flow=pf)
