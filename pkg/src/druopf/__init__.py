"""Reactive-power and frequency dispatch for diode-rectifier HVDC wind farms."""

from .demand import (
    DemandLine,
    DemandModel,
    DroopParams,
    FrequencyBand,
    QuadraticDemandFit,
    compute_droop_params,
    farm_demand,
    fit_demand_line,
    fit_quadratic_surface,
    static_operating_point,
)
from .devices import (
    Case,
    DruOperatingPoint,
    DruStation,
    TurbineUnit,
    dru_dc_link,
    dru_from_power,
    dru_power_factor,
    dru_reactive,
    filter_reactive,
    load_case,
    network_reactive,
    transformer_reactive,
)
from .network import (
    AdmittanceTable,
    Branch,
    Bus,
    BusKind,
    NetworkModel,
    PerUnitBase,
    TopologyKind,
    aggregate_equivalents,
    build_admittance,
    load_network,
    save_network,
)
from .opf import (
    OpfOptions,
    OpfSolution,
    build_opf,
    frequency_iteration,
    recover_voltages,
    relaxation_gap,
)
from .oracle import OracleResult, grid_search_oracle
from .solver import SolverResult, SolverSettings, SolverStatus, solve
from .validation import (
    BaselineResult,
    PowerFlowResult,
    ac_power_flow,
    baseline_uniform,
    loss_breakdown,
)

__version__ = "0.1.0"
