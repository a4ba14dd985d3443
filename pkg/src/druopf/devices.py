"""Reactive-power device models: rectifier station, transformers, filters.

All quantities are per-unit in the peak-phase convention of
:mod:`druopf.network`: three-phase power is ``1.5 * u * i`` with ``u`` the
peak phase voltage and ``i`` the peak phase current. DC-side bases are chosen
so that the stack's no-load DC voltage equals the AC voltage in per unit,
which reduces the uncontrolled-rectifier relations to::

    v_d   = u - k * omega * l_c * i_d        k = pi / (9 * n_bridge)
    cos mu = 1 - 2 * k * omega * l_c * i_d / u

with ``mu`` the commutation overlap angle of one bridge.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass
from typing import Any, Dict, Mapping, Optional, Tuple

from .errors import DeviceError, SchemaError
from .network import NetworkModel, BusKind, _as_document, _number, _require, load_network

MU_MAX = math.pi / 3.0


@dataclass(frozen=True)
class TurbineUnit:
    """Grid-forming turbine: filter capacitor and machine transformer."""

    bus: str
    c_f: float
    n_tf: float
    l_tf: float
    p_max: float
    s_rating: float

    def validate(self) -> None:
        if self.c_f < 0 or self.l_tf < 0:
            raise SchemaError(f"turbine at {self.bus}: c_f and l_tf must be >= 0")
        if not self.n_tf > 0:
            raise SchemaError(f"turbine at {self.bus}: n_tf must be > 0")
        if not (0 < self.p_max <= self.s_rating):
            raise SchemaError(f"turbine at {self.bus}: need 0 < p_max <= s_rating")

    def q_capability(self, p: float) -> float:
        """Reactive headroom at active output ``p``."""
        if p > self.s_rating + 1e-12:
            raise DeviceError(
                f"turbine at {self.bus}: active setpoint {p} exceeds rating {self.s_rating}"
            )
        return math.sqrt(max(self.s_rating**2 - p**2, 0.0))


@dataclass(frozen=True)
class DruStation:
    """Series stack of uncontrolled 6-pulse bridges plus the DC cable."""

    bus: str
    n_bridge: int
    l_c: float
    r_dc: float
    v_dc_onshore: float

    def validate(self) -> None:
        if self.n_bridge < 1:
            raise SchemaError("dru.n_bridge must be >= 1")
        if not self.l_c > 0:
            raise SchemaError("dru.l_c must be > 0")
        if self.r_dc < 0:
            raise SchemaError("dru.r_dc must be >= 0")
        if not self.v_dc_onshore > 0:
            raise SchemaError("dru.v_dc_onshore must be > 0")

    @property
    def k_drop(self) -> float:
        """Per-unit commutation voltage-drop coefficient of the stack."""
        return math.pi / (9.0 * self.n_bridge)


@dataclass(frozen=True)
class DruOperatingPoint:
    mu: float
    phi: float
    i_d: float
    v_d: float
    q_dr: float

    @property
    def p(self) -> float:
        """AC-side active power absorbed by the rectifier."""
        return self.v_d * self.i_d


def displacement_ratio(mu: float) -> float:
    """``tan(phi)`` of the rectifier fundamental: (2mu - sin 2mu)/(1 - cos 2mu).

    Continuous at ``mu = 0`` where the ratio tends to zero.
    """
    if mu < 0 or mu > MU_MAX + 1e-12:
        raise DeviceError(f"overlap angle {mu} outside [0, pi/3]")
    x = 2.0 * mu
    if x < 1e-3:
        # series expansion of (x - sin x)/(1 - cos x)
        return (x / 3.0) * (1.0 + x * x / 30.0)
    return (x - math.sin(x)) / (1.0 - math.cos(x))


def dru_power_factor(mu: float) -> float:
    """Displacement (power-factor) angle for overlap angle ``mu``."""
    return math.atan(displacement_ratio(mu))


def dru_reactive(p_farm: float, phi: float) -> float:
    """Reactive power consumed by the rectifier at delivered power ``p_farm``."""
    if p_farm < 0:
        raise DeviceError("p_farm must be >= 0")
    return p_farm * math.tan(phi)


def _overlap_from_current(u: float, k_x: float, i_d: float) -> float:
    cos_mu = 1.0 - 2.0 * k_x * i_d / u
    if cos_mu < 0.5 - 1e-12:
        raise DeviceError(
            "commutation overlap exceeds pi/3: operating point outside the "
            "normal conduction mode"
        )
    return math.acos(min(max(cos_mu, -1.0), 1.0))


def dru_dc_link(u_pcc: float, dru: DruStation, omega: float = 1.0) -> DruOperatingPoint:
    """Operating point of the DC link for a given AC terminal voltage.

    Solves the stack voltage ``v_d = u - k*omega*l_c*i_d`` jointly with the
    cable equation ``i_d = (v_d - v_dc_onshore)/r_dc``. The diode blocks
    reverse flow: below the conduction threshold the link idles with
    ``i_d = 0``.
    """
    if not u_pcc > 0:
        raise DeviceError("u_pcc must be positive")
    if not omega > 0:
        raise DeviceError("omega must be positive")
    k_x = dru.k_drop * omega * dru.l_c
    if u_pcc <= dru.v_dc_onshore:
        return DruOperatingPoint(mu=0.0, phi=0.0, i_d=0.0, v_d=u_pcc, q_dr=0.0)
    i_d = (u_pcc - dru.v_dc_onshore) / (dru.r_dc + k_x)
    mu = _overlap_from_current(u_pcc, k_x, i_d)
    v_d = u_pcc - k_x * i_d
    phi = dru_power_factor(mu)
    return DruOperatingPoint(mu=mu, phi=phi, i_d=i_d, v_d=v_d, q_dr=v_d * i_d * math.tan(phi))


def dru_from_power(
    u_pcc: float, p_ac: float, dru: DruStation, omega: float = 1.0
) -> DruOperatingPoint:
    """Operating point delivering ``p_ac`` through the stack at voltage ``u_pcc``.

    Power-driven companion of :func:`dru_dc_link`: the DC circuit is ignored
    and the current follows from ``p = v_d * i_d``.
    """
    if not u_pcc > 0:
        raise DeviceError("u_pcc must be positive")
    if p_ac < 0:
        raise DeviceError("p_ac must be >= 0")
    if p_ac == 0:
        return DruOperatingPoint(mu=0.0, phi=0.0, i_d=0.0, v_d=u_pcc, q_dr=0.0)
    k_x = dru.k_drop * omega * dru.l_c
    disc = u_pcc * u_pcc - 4.0 * k_x * p_ac
    if disc < 0:
        raise DeviceError(
            f"commutation limit: {p_ac} p.u. exceeds the deliverable power "
            f"{u_pcc * u_pcc / (4 * k_x):.4f} p.u. at this voltage"
        )
    i_d = (u_pcc - math.sqrt(disc)) / (2.0 * k_x)
    mu = _overlap_from_current(u_pcc, k_x, i_d)
    v_d = u_pcc - k_x * i_d
    phi = dru_power_factor(mu)
    return DruOperatingPoint(mu=mu, phi=phi, i_d=i_d, v_d=v_d, q_dr=p_ac * math.tan(phi))


def dc_link_voltage_for_power(dru: DruStation, p_ac: float, omega: float = 1.0) -> float:
    """AC voltage at which the DC link absorbs exactly ``p_ac``.

    Inverse of the :func:`dru_dc_link` power curve; returns the conduction
    threshold for ``p_ac = 0``.
    """
    if p_ac < 0:
        raise DeviceError("p_ac must be >= 0")
    lo = dru.v_dc_onshore
    if p_ac == 0:
        return lo
    hi = lo
    for _ in range(60):
        hi = lo + max(2.0 * (hi - lo), 1e-3)
        if dru_dc_link(hi, dru, omega).p >= p_ac:
            break
    else:
        raise DeviceError(f"DC link cannot absorb {p_ac} p.u.")
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if dru_dc_link(mid, dru, omega).p < p_ac:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def pcc_current(p_farm: float, u_pcc: float, phi: float) -> float:
    """Peak phase current at the PCC for farm output ``p_farm``."""
    if not u_pcc > 0:
        raise DeviceError("u_pcc must be positive")
    cos_phi = math.cos(phi)
    if cos_phi <= 0:
        raise DeviceError("phi must be below pi/2")
    return p_farm / (1.5 * u_pcc * cos_phi)


def network_reactive(
    p_farm: float, u_pcc: float, phi: float, omega: float, l_net: float, c_net: float
) -> float:
    """Series minus shunt reactive power of the lumped collection network."""
    i_pcc = pcc_current(p_farm, u_pcc, phi)
    return 1.5 * i_pcc * i_pcc * omega * l_net - 1.5 * u_pcc * u_pcc * omega * c_net


def transformer_reactive(
    i_pcc: float, n_tf: float, n_wt: int, omega: float, l_tf: float
) -> float:
    """Total reactive consumption of ``n_wt`` identical machine transformers."""
    if n_wt < 1:
        raise DeviceError("n_wt must be >= 1")
    i_lv = i_pcc * n_tf / n_wt
    return 1.5 * n_wt * i_lv * i_lv * omega * l_tf


def filter_reactive(
    u_pcc: float, n_tf: float, n_wt: int, omega: float, c_f: float
) -> float:
    """Total reactive generation (negative) of ``n_wt`` identical filters."""
    if not u_pcc > 0:
        raise DeviceError("u_pcc must be positive")
    u_lv = u_pcc / n_tf
    return -1.5 * u_lv * u_lv * n_wt * omega * c_f


# ---------------------------------------------------------------------------
# Case ingestion (network + turbines + dru)

_VDC_KV_PER_BRIDGE = 3.0 * math.sqrt(2.0) / math.pi  # no-load kV(dc) per kV(ac, LL)


def dc_voltage_base_kv(v_kv_ll: float, n_bridge: int) -> float:
    """DC voltage base: stack no-load voltage at 1.0 p.u. AC."""
    return n_bridge * _VDC_KV_PER_BRIDGE * v_kv_ll


@dataclass(frozen=True)
class Case:
    """Immutable bundle of a network with its turbine and rectifier data."""

    network: NetworkModel
    turbines: Tuple[TurbineUnit, ...]
    dru: DruStation
    source_document: Optional[Dict[str, Any]] = None

    def __post_init__(self) -> None:
        lv_ids = {b.id for b in self.network.turbine_lv_buses()}
        seen = set()
        for t in self.turbines:
            t.validate()
            if t.bus not in lv_ids:
                raise SchemaError(f"turbine bus {t.bus!r} is not a turbine-lv bus")
            if t.bus in seen:
                raise SchemaError(f"duplicate turbine at bus {t.bus!r}")
            seen.add(t.bus)
        if seen != lv_ids:
            missing = sorted(lv_ids - seen)
            raise SchemaError(f"turbine-lv buses without a turbine entry: {missing}")
        self.dru.validate()
        if self.dru.bus != self.network.dru_bus.id:
            raise SchemaError(
                f"dru bus {self.dru.bus!r} does not match the dru-ac bus "
                f"{self.network.dru_bus.id!r}"
            )

    @property
    def n_wt(self) -> int:
        return len(self.turbines)

    @property
    def p_rated(self) -> float:
        """Farm active rating (p.u.): sum of turbine ratings."""
        return sum(t.p_max for t in self.turbines)

    def turbine_at(self, bus_id: str) -> TurbineUnit:
        for t in self.turbines:
            if t.bus == bus_id:
                return t
        raise KeyError(bus_id)


def load_case(document: Any) -> Case:
    """Parse a full case document (network plus ``turbines`` and ``dru``)."""
    doc = _as_document(document)
    net = load_network(doc)
    base = net.base
    omega_base = base.omega_base
    level_of = {b.id: b.level for b in net.buses}

    turbines = []
    for raw in _require(doc, "turbines", "document"):
        bus = str(_require(raw, "bus", "turbine"))
        ctx = f"turbine at {bus}"
        if bus not in level_of:
            raise SchemaError(f"{ctx}: unknown bus")
        z_base = base.z_base_ohm(level_of[bus])
        turbines.append(
            TurbineUnit(
                bus=bus,
                c_f=omega_base * _number(_require(raw, "c_f", ctx), f"{ctx}.c_f") * 1e-6 * z_base,
                n_tf=_number(_require(raw, "n_tf", ctx), f"{ctx}.n_tf"),
                l_tf=omega_base * _number(_require(raw, "l_tf", ctx), f"{ctx}.l_tf") * 1e-3 / z_base,
                p_max=_number(_require(raw, "p_max", ctx), f"{ctx}.p_max") / base.s_mva,
                s_rating=_number(_require(raw, "s_rating", ctx), f"{ctx}.s_rating") / base.s_mva,
            )
        )

    raw = _require(doc, "dru", "document")
    bus = str(_require(raw, "bus", "dru"))
    if bus not in level_of:
        raise SchemaError(f"dru: unknown bus {bus!r}")
    n_bridge = _require(raw, "n_bridge", "dru")
    if isinstance(n_bridge, bool) or not isinstance(n_bridge, int):
        raise SchemaError("dru.n_bridge must be an integer")
    v_ll = base.v_kv[level_of[bus]]
    z_base = base.z_base_ohm(level_of[bus])
    v_dc_base = dc_voltage_base_kv(v_ll, n_bridge)
    z_dc_base = v_dc_base * v_dc_base / base.s_mva
    dru = DruStation(
        bus=bus,
        n_bridge=n_bridge,
        l_c=omega_base * _number(_require(raw, "l_c", "dru"), "dru.l_c") * 1e-3 / z_base,
        r_dc=_number(_require(raw, "r_dc", "dru"), "dru.r_dc") / z_dc_base,
        v_dc_onshore=_number(_require(raw, "v_dc_onshore", "dru"), "dru.v_dc_onshore") / v_dc_base,
    )
    return Case(network=net, turbines=tuple(turbines), dru=dru, source_document=copy.deepcopy(doc))
