"""Loss-minimizing OPF in bus-product variables with SOC relaxation.

Variables are the diagonal products ``W_ii = |V_i|^2``, per-branch complex
products ``W_ij = V_i V_j*`` (real pair), per-branch directed flows
``(P, Q)``, the per-turbine reactive setpoints, and the normalized network
frequency. The rank-1 coupling of the ``W`` entries is relaxed to one
second-order cone per branch; the relaxation is tight on the radial networks
this package targets (diagnosed by :func:`relaxation_gap` and the recovery
residual).

Frequency enters the inner conic program only through the affine demand line
and its band bounds; the frequency dependence of admittances, shunts, and the
rectifier linearization is resolved by the outer fixed point in
:func:`frequency_iteration`. The rectifier couples in through two rows at its
bus: arriving reactive equals ``tan(phi)`` times arriving active, and
arriving active follows the linearized DC-link voltage curve.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .conic import ConicProgram, LinExpr
from .demand import DemandLine, FrequencyBand
from .devices import Case, DruStation, dc_link_voltage_for_power, dru_dc_link
from .errors import BuildError, DeviceError
from .network import BusKind, NetworkModel, build_admittance
from .solver import SolverResult, SolverSettings, SolverStatus, solve

TAG_VOLTAGE = "voltage_bounds"
TAG_CAPABILITY = "capability"
TAG_FLOW_LIMIT = "flow_limit"
TAG_NODAL = "nodal_balance"
TAG_FLOW_DEF = "flow_def"
TAG_BAND = "freq_band"
TAG_DEMAND = "reactive_demand"
TAG_RANK1 = "cone_rank1"
TAG_OBJECTIVE = "objective"
TAG_REG = "regularization"

ALL_TAGS = {
    TAG_VOLTAGE,
    TAG_CAPABILITY,
    TAG_FLOW_LIMIT,
    TAG_NODAL,
    TAG_FLOW_DEF,
    TAG_BAND,
    TAG_DEMAND,
    TAG_RANK1,
    TAG_OBJECTIVE,
    TAG_REG,
}


@dataclass(frozen=True)
class OpfOptions:
    """Build-time knobs for the conic formulation.

    The demand-line slack absorbs the residual between the lumped demand
    model and the detailed network when the frequency saturates at a band
    edge; its price sits far above the marginal loss value of reactive
    power, so it stays at zero whenever the frequency can reconcile the
    balance on its own.
    """

    regularize: bool = False
    reg_eps: float = 1e-6
    omega_damping: float = 1e-5
    demand_slack_bound: float = 1e-3
    demand_slack_price: float = 1.0


@dataclass(frozen=True)
class Linearization:
    """Operating point the frequency-dependent pieces are frozen at."""

    omega: float
    u_hat: float
    p_hat: float
    tau: float
    gamma: float


def dc_link_state(dru: DruStation, u: float, omega: float) -> Linearization:
    """Linearization of the DC-link power curve around voltage ``u``."""
    k_x = dru.k_drop * omega * dru.l_c
    u_eff = max(u, dru.v_dc_onshore)
    op = dru_dc_link(u_eff, dru, omega)
    gamma = (op.v_d + dru.r_dc * op.i_d) / (dru.r_dc + k_x)
    return Linearization(
        omega=omega, u_hat=u_eff, p_hat=op.p, tau=math.tan(op.phi), gamma=gamma
    )


def default_linearization(case: Case, omega: float, p_total: float) -> Linearization:
    """Initial operating point: DC link absorbing the total turbine output."""
    try:
        u_hat = dc_link_voltage_for_power(case.dru, p_total, omega)
    except DeviceError as exc:
        raise BuildError(str(exc)) from exc
    return dc_link_state(case.dru, u_hat, omega)


@dataclass
class OpfFormulation:
    """Index maps and build metadata for one conic program."""

    w_idx: Dict[str, int]
    wr_idx: Dict[int, int]
    wi_idx: Dict[int, int]
    flow_idx: Dict[Tuple[int, int], Tuple[int, int]]  # (branch, dir) -> (P, Q)
    qwt_idx: Dict[str, int]
    omega_idx: int
    t_omega_idx: int
    slack_pos_idx: int
    slack_neg_idx: int
    lin: Linearization
    band: FrequencyBand
    demand_line: DemandLine
    p_per_turbine: Dict[str, float]
    options: OpfOptions
    dru_bus: str


def _turbine_injections(case: Case, p_per_turbine: Mapping[str, float]) -> Dict[str, float]:
    lv_ids = [t.bus for t in case.turbines]
    extra = set(p_per_turbine) - set(lv_ids)
    if extra:
        raise BuildError(f"active setpoints for unknown turbine buses: {sorted(extra)}")
    missing = set(lv_ids) - set(p_per_turbine)
    if missing:
        raise BuildError(f"missing active setpoints for turbines: {sorted(missing)}")
    out = {}
    for t in case.turbines:
        p = float(p_per_turbine[t.bus])
        if p < 0:
            raise BuildError(f"negative active setpoint at {t.bus}")
        if p > t.s_rating + 1e-12:
            raise BuildError(f"active setpoint at {t.bus} exceeds its rating")
        out[t.bus] = p
    return out


def build_opf(
    case: Case,
    demand_line: DemandLine,
    p_per_turbine: Mapping[str, float],
    band: FrequencyBand,
    options: Optional[OpfOptions] = None,
    lin: Optional[Linearization] = None,
) -> Tuple[ConicProgram, OpfFormulation]:
    """Assemble the SOC-relaxed loss-minimization program.

    Every row and cone carries a provenance tag; :data:`ALL_TAGS` is the
    complete vocabulary.
    """
    options = options or OpfOptions()
    net = case.network
    p_inj = _turbine_injections(case, p_per_turbine)
    p_total = sum(p_inj.values())
    if abs(p_total - demand_line.p_anchor) > 1e-6 * max(1.0, abs(p_total)):
        raise BuildError(
            f"demand line anchored at {demand_line.p_anchor} but total output is {p_total}"
        )
    for bus in net.buses:
        if bus.v_min > bus.v_max:
            raise BuildError(f"bus {bus.id}: v_min exceeds v_max")
    if lin is None:
        lin = default_linearization(case, band.omega_0, p_total)

    adm = build_admittance(net, lin.omega)
    prog = ConicProgram()

    w_idx = {b.id: prog.add_variable(f"W[{b.id}]") for b in net.buses}
    wr_idx: Dict[int, int] = {}
    wi_idx: Dict[int, int] = {}
    flow_idx: Dict[Tuple[int, int], Tuple[int, int]] = {}
    for k, br in enumerate(net.branches):
        wr_idx[k] = prog.add_variable(f"ReW{k}[{br.from_bus}|{br.to_bus}]")
        wi_idx[k] = prog.add_variable(f"ImW{k}[{br.from_bus}|{br.to_bus}]")
        flow_idx[(k, 0)] = (
            prog.add_variable(f"P{k}[{br.from_bus}>{br.to_bus}]"),
            prog.add_variable(f"Q{k}[{br.from_bus}>{br.to_bus}]"),
        )
        flow_idx[(k, 1)] = (
            prog.add_variable(f"P{k}[{br.to_bus}>{br.from_bus}]"),
            prog.add_variable(f"Q{k}[{br.to_bus}>{br.from_bus}]"),
        )
    qwt_idx = {t.bus: prog.add_variable(f"Qwt[{t.bus}]") for t in case.turbines}
    omega_idx = prog.add_variable("omega")
    t_omega = prog.add_variable("t_omega")
    slack_pos = prog.add_variable("demand_slack_pos")
    slack_neg = prog.add_variable("demand_slack_neg")

    # shunts entering nodal balance: bus shunts plus turbine filter capacitors
    shunt_at_bus = {b.id: b.shunt_c for b in net.buses}
    for t in case.turbines:
        shunt_at_bus[t.bus] += t.c_f

    # flow definition rows
    for k, br in enumerate(net.branches):
        y = adm.series[k]
        g, b = y.real, y.imag
        bc = adm.shunt_end[k].imag
        i_w, j_w = w_idx[br.from_bus], w_idx[br.to_bus]
        wr, wi = wr_idx[k], wi_idx[k]
        for direction, (end_w, wi_sign) in enumerate(((i_w, 1.0), (j_w, -1.0))):
            p_var, q_var = flow_idx[(k, direction)]
            p_row = LinExpr.variable(p_var)
            p_row.add_term(end_w, -1.5 * g)
            p_row.add_term(wr, 1.5 * g)
            p_row.add_term(wi, 1.5 * b * wi_sign)
            prog.add_eq(TAG_FLOW_DEF, p_row, 0.0)
            q_row = LinExpr.variable(q_var)
            q_row.add_term(end_w, 1.5 * (b + bc))
            q_row.add_term(wr, -1.5 * b)
            q_row.add_term(wi, 1.5 * g * wi_sign)
            prog.add_eq(TAG_FLOW_DEF, q_row, 0.0)

    # nodal balance
    dru_bus = net.dru_bus.id
    incident: Dict[str, List[Tuple[int, int]]] = {b.id: [] for b in net.buses}
    for k, br in enumerate(net.branches):
        incident[br.from_bus].append((k, 0))
        incident[br.to_bus].append((k, 1))
    for bus in net.buses:
        terms_p = LinExpr()
        terms_q = LinExpr()
        for k, direction in incident[bus.id]:
            p_var, q_var = flow_idx[(k, direction)]
            terms_p.add_term(p_var, 1.0)
            terms_q.add_term(q_var, 1.0)
        if bus.id == dru_bus:
            # arriving active tracks the linearized DC-link curve
            p_arr = terms_p.scaled(-1.0)
            dc_row = p_arr.copy()
            dc_row.add_term(w_idx[bus.id], -lin.gamma / (2.0 * lin.u_hat))
            prog.add_eq(TAG_NODAL, dc_row, lin.p_hat - 0.5 * lin.gamma * lin.u_hat)
            # arriving reactive (plus local shunt) = tan(phi) * arriving active
            q_row = terms_q.scaled(-1.0)
            q_row.add_term(w_idx[bus.id], 1.5 * lin.omega * shunt_at_bus[bus.id])
            q_row = q_row - p_arr.scaled(lin.tau)
            prog.add_eq(TAG_NODAL, q_row, 0.0)
            # diode blocks reverse flow
            prog.add_le(TAG_NODAL, terms_p, 0.0)
            continue
        rhs_p = p_inj.get(bus.id, 0.0)
        prog.add_eq(TAG_NODAL, terms_p, rhs_p)
        q_row = terms_q
        q_row.add_term(w_idx[bus.id], -1.5 * lin.omega * shunt_at_bus[bus.id])
        if bus.id in qwt_idx:
            q_row.add_term(qwt_idx[bus.id], -1.0)
        prog.add_eq(TAG_NODAL, q_row, 0.0)

    # voltage bounds on the diagonal entries
    for bus in net.buses:
        prog.add_le(TAG_VOLTAGE, LinExpr.variable(w_idx[bus.id]), bus.v_max**2)
        prog.add_le(TAG_VOLTAGE, LinExpr.variable(w_idx[bus.id], -1.0), -(bus.v_min**2))

    # frequency band
    prog.add_le(TAG_BAND, LinExpr.variable(omega_idx), band.omega_max_h)
    prog.add_le(TAG_BAND, LinExpr.variable(omega_idx, -1.0), -band.omega_min_h)

    # aggregate reactive demand line, with a bounded priced slack
    demand_row = LinExpr()
    for idx in qwt_idx.values():
        demand_row.add_term(idx, 1.0)
    demand_row.add_term(omega_idx, -demand_line.d1)
    demand_row.add_term(slack_pos, -1.0)
    demand_row.add_term(slack_neg, 1.0)
    prog.add_eq(TAG_DEMAND, demand_row, demand_line.d2)
    for s_idx in (slack_pos, slack_neg):
        prog.add_le(TAG_DEMAND, LinExpr.variable(s_idx, -1.0), 0.0)
        prog.add_le(TAG_DEMAND, LinExpr.variable(s_idx), options.demand_slack_bound)
        prog.add_objective_term(LinExpr.variable(s_idx, options.demand_slack_price))

    # rank-1 relaxation cone per branch
    for k, br in enumerate(net.branches):
        i_w, j_w = w_idx[br.from_bus], w_idx[br.to_bus]
        vector = (
            LinExpr.variable(wr_idx[k], 2.0),
            LinExpr.variable(wi_idx[k], 2.0),
            LinExpr.variable(i_w) - LinExpr.variable(j_w),
        )
        scalar = LinExpr.variable(i_w) + LinExpr.variable(j_w)
        prog.add_soc(TAG_RANK1, vector, scalar)

    # apparent-power limits, both directions
    for k, br in enumerate(net.branches):
        for direction in (0, 1):
            p_var, q_var = flow_idx[(k, direction)]
            prog.add_soc(
                TAG_FLOW_LIMIT,
                (LinExpr.variable(p_var), LinExpr.variable(q_var)),
                LinExpr.constant(br.s_max),
            )

    # turbine capability at the current active setpoint
    for t in case.turbines:
        q_cap = t.q_capability(p_inj[t.bus])
        prog.add_soc(
            TAG_CAPABILITY,
            (LinExpr.variable(qwt_idx[t.bus]),),
            LinExpr.constant(q_cap),
        )

    # objective: total series loss
    obj = LinExpr()
    for k in range(len(net.branches)):
        for direction in (0, 1):
            obj.add_term(flow_idx[(k, direction)][0], 1.0)
    prog.add_objective_term(obj)

    # tiny pull of omega toward nominal; breaks the degeneracy when the
    # demand line is nearly flat in omega and keeps the outer loop stable
    prog.add_soc(
        TAG_REG,
        (LinExpr({omega_idx: 1.0}, -band.omega_0),),
        LinExpr.variable(t_omega),
    )
    prog.add_objective_term(LinExpr.variable(t_omega, options.omega_damping))

    if options.regularize:
        for t in case.turbines:
            t_var = prog.add_variable(f"t_q[{t.bus}]")
            prog.add_soc(
                TAG_REG,
                (
                    LinExpr.variable(qwt_idx[t.bus], 2.0),
                    LinExpr({t_var: 1.0}, -1.0),
                ),
                LinExpr({t_var: 1.0}, 1.0),
            )
            prog.add_objective_term(LinExpr.variable(t_var, options.reg_eps))

    form = OpfFormulation(
        w_idx=w_idx,
        wr_idx=wr_idx,
        wi_idx=wi_idx,
        flow_idx=flow_idx,
        qwt_idx=qwt_idx,
        omega_idx=omega_idx,
        t_omega_idx=t_omega,
        slack_pos_idx=slack_pos,
        slack_neg_idx=slack_neg,
        lin=lin,
        band=band,
        demand_line=demand_line,
        p_per_turbine=dict(p_inj),
        options=options,
        dru_bus=dru_bus,
    )
    return prog, form


# ---------------------------------------------------------------------------
# Solution handling


@dataclass
class OpfSolution:
    status: str
    converged: bool
    omega_star: Optional[float] = None
    q_turbine: Dict[str, float] = field(default_factory=dict)
    w_diag: Dict[str, float] = field(default_factory=dict)
    w_offdiag: Dict[int, complex] = field(default_factory=dict)
    s_flows: Dict[Tuple[int, int], complex] = field(default_factory=dict)
    losses_total: Optional[float] = None
    objective: Optional[float] = None
    cone_residuals: Tuple[float, ...] = ()
    rank1_residual: Optional[float] = None
    recovered_v: Dict[str, complex] = field(default_factory=dict)
    iterations: int = 0
    omega_trace: Tuple[float, ...] = ()
    u_dru: Optional[float] = None
    p_dru: Optional[float] = None
    tau: Optional[float] = None
    demand_slack: float = 0.0
    regularization_cost: float = 0.0
    solver_info: Dict[str, Any] = field(default_factory=dict)
    program: Optional[ConicProgram] = field(default=None, repr=False)
    formulation: Optional[OpfFormulation] = field(default=None, repr=False)

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


def recover_voltages(
    w_diag: Mapping[str, float],
    w_offdiag: Mapping[int, complex],
    net: NetworkModel,
) -> Tuple[Dict[str, complex], float]:
    """Bus voltages from the product variables, plus the rank-1 residual.

    Magnitudes come from the diagonal; angles propagate over a spanning tree
    rooted at the rectifier bus (angle zero). The residual is the worst
    relative violation of ``|W_ij|^2 = W_ii W_jj`` over all branches.
    """
    for bus_id, w in w_diag.items():
        if not w > 0:
            raise ValueError(f"nonpositive W_ii at bus {bus_id}")
    rank1 = 0.0
    for k, br in enumerate(net.branches):
        wij = w_offdiag[k]
        if wij == 0:
            raise ValueError(
                f"degenerate coupling: W_ij vanishes on branch "
                f"{br.from_bus}|{br.to_bus}"
            )
        wi, wj = w_diag[br.from_bus], w_diag[br.to_bus]
        rank1 = max(rank1, abs(abs(wij) ** 2 - wi * wj) / (wi * wj))
    root = net.dru_bus.id
    theta = {root: 0.0}
    tree = net.spanning_tree(root)
    order = list(tree.keys())
    # parents appear before children in BFS insertion order
    for child in order:
        parent, k = tree[child]
        br = net.branches[k]
        ang = math.atan2(w_offdiag[k].imag, w_offdiag[k].real)
        if parent == br.from_bus:
            theta[child] = theta[parent] - ang
        else:
            theta[child] = theta[parent] + ang
    voltages = {
        bus_id: math.sqrt(w_diag[bus_id]) * complex(math.cos(t), math.sin(t))
        for bus_id, t in theta.items()
    }
    return voltages, rank1


@dataclass(frozen=True)
class GapReport:
    slacks: Tuple[float, ...]
    max_slack: float
    mean_slack: float


def relaxation_gap(solution: OpfSolution, net: NetworkModel) -> GapReport:
    """Per-branch slack of the rank-1 cones at the solved point."""
    if not solution.ok:
        raise ValueError("relaxation gap requires an optimal solution")
    slacks = []
    for k, br in enumerate(net.branches):
        wi = solution.w_diag[br.from_bus]
        wj = solution.w_diag[br.to_bus]
        wij = solution.w_offdiag[k]
        norm = math.sqrt((2 * wij.real) ** 2 + (2 * wij.imag) ** 2 + (wi - wj) ** 2)
        slacks.append((wi + wj) - norm)
    arr = tuple(slacks)
    return GapReport(
        slacks=arr,
        max_slack=max(arr) if arr else 0.0,
        mean_slack=sum(arr) / len(arr) if arr else 0.0,
    )


def extract_solution(
    program: ConicProgram,
    form: OpfFormulation,
    result: SolverResult,
    case: Case,
) -> OpfSolution:
    x = result.primal
    net = case.network
    w_diag = {bus: float(x[i]) for bus, i in form.w_idx.items()}
    w_off = {
        k: complex(x[form.wr_idx[k]], x[form.wi_idx[k]]) for k in form.wr_idx
    }
    flows = {}
    losses = 0.0
    for (k, direction), (p_var, q_var) in form.flow_idx.items():
        s = complex(x[p_var], x[q_var])
        flows[(k, direction)] = s
        losses += s.real
    q_turbine = {bus: float(x[i]) for bus, i in form.qwt_idx.items()}
    omega_star = float(x[form.omega_idx])

    cone_residuals = []
    for k, br in enumerate(net.branches):
        wi, wj = w_diag[br.from_bus], w_diag[br.to_bus]
        wij = w_off[k]
        norm = math.sqrt((2 * wij.real) ** 2 + (2 * wij.imag) ** 2 + (wi - wj) ** 2)
        cone_residuals.append((wi + wj) - norm)

    recovered, rank1 = recover_voltages(w_diag, w_off, net)

    # arriving active power at the rectifier bus
    p_arr = 0.0
    for k, br in enumerate(net.branches):
        if br.from_bus == form.dru_bus:
            p_arr -= flows[(k, 0)].real
        elif br.to_bus == form.dru_bus:
            p_arr -= flows[(k, 1)].real

    slack = float(x[form.slack_pos_idx] - x[form.slack_neg_idx])
    reg_cost = float(result.objective - losses)
    return OpfSolution(
        status="optimal",
        converged=False,
        omega_star=omega_star,
        q_turbine=q_turbine,
        w_diag=w_diag,
        w_offdiag=w_off,
        s_flows=flows,
        losses_total=losses,
        objective=result.objective,
        cone_residuals=tuple(cone_residuals),
        rank1_residual=rank1,
        recovered_v=recovered,
        u_dru=math.sqrt(w_diag[form.dru_bus]),
        p_dru=p_arr,
        tau=form.lin.tau,
        demand_slack=slack,
        regularization_cost=reg_cost,
        solver_info={
            "backend": result.backend,
            "iterations": result.iterations,
            "solve_time": result.solve_time,
        },
        program=program,
        formulation=form,
    )


def frequency_iteration(
    case: Case,
    demand_line: DemandLine,
    p_per_turbine: Mapping[str, float],
    band: FrequencyBand,
    options: Optional[OpfOptions] = None,
    settings: Optional[SolverSettings] = None,
    tol: float = 1e-6,
    max_iter: int = 10,
) -> OpfSolution:
    """Outer fixed point over the frequency-dependent program data.

    Builds and solves the conic program with admittances, shunts, and the
    rectifier linearization frozen at the current iterate, then refreshes the
    iterate from the solution. Stops when the frequency moves by at most
    ``tol`` (and the rectifier-bus voltage has settled), or after
    ``max_iter`` outer rounds, whichever comes first. On solver failure the
    status is reported and the last iterate returned; bounds are never
    silently relaxed.
    """
    settings = settings or SolverSettings.from_env()
    options = options or OpfOptions()
    p_total = sum(float(v) for v in p_per_turbine.values())
    lin = default_linearization(case, band.omega_0, p_total)
    trace: List[float] = []
    last: Optional[OpfSolution] = None

    for it in range(1, max_iter + 1):
        program, form = build_opf(case, demand_line, p_per_turbine, band, options, lin)
        result = solve(program, settings)
        if result.status is not SolverStatus.OPTIMAL:
            return OpfSolution(
                status=result.status.value,
                converged=False,
                iterations=it,
                omega_trace=tuple(trace),
                solver_info={"backend": result.backend, "iterations": result.iterations},
                program=program,
                formulation=form,
            )
        sol = extract_solution(program, form, result, case)
        trace.append(sol.omega_star)
        sol.iterations = it
        sol.omega_trace = tuple(trace)
        d_omega = abs(sol.omega_star - lin.omega)
        d_u = abs(sol.u_dru - lin.u_hat)
        last = sol
        if band.is_point or (d_omega <= tol and d_u <= max(tol, 1e-6)):
            sol.converged = True
            return sol
        lin = replace(
            dc_link_state(case.dru, sol.u_dru, sol.omega_star), omega=sol.omega_star
        )

    last.status = "max_iter"
    last.converged = False
    return last
