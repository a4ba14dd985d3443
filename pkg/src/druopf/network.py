"""Per-unit electrical model of the collection network.

The JSON document format uses engineering units throughout:

- ``base``: ``{"s_mva": .., "f_hz": .., "v_kv": {level: kV, ...}}``
- ``buses``: ``[{"id", "kind", "level", "v_min", "v_max", "shunt_c"}, ...]``
  with ``v_min``/``v_max`` in kV (line-to-line) and ``shunt_c`` in uF
- ``branches``: ``[{"from", "to", "r", "l", "c_half", "s_max"}, ...]``
  with ``r`` in ohm, ``l`` in mH, ``c_half`` in uF (per end), ``s_max`` in MVA;
  impedances are referred to the voltage level of the ``from`` bus
- ``turbines`` / ``dru``: consumed by :mod:`druopf.devices`

Internally everything is per-unit. Voltage bases are peak phase voltage,
``sqrt(2/3) * V_LL``, and the impedance base is ``(2/3) * V_LL^2 / S``, so
that three-phase power is ``1.5 * u * i`` with peak-valued phasors. Stored
inductances and capacitances are the reactance/susceptance at nominal
frequency; at normalized frequency ``omega`` the series reactance is
``omega * l`` and a shunt susceptance is ``omega * c``.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Tuple

import numpy as np

from .errors import SchemaError, TopologyError

# Peak phase voltage relative to RMS line-to-line voltage.
_PEAK_PHASE = math.sqrt(2.0 / 3.0)
# No-load DC volts per bridge per volt of peak phase AC: 3*sqrt(3)/pi.
_VDC_PER_BRIDGE = 3.0 * math.sqrt(3.0) / math.pi


class BusKind(Enum):
    TURBINE_LV = "turbine-lv"
    TURBINE_HV = "turbine-hv"
    COLLECTOR = "collector"
    PCC = "pcc"
    DRU_AC = "dru-ac"


class TopologyKind(Enum):
    RADIAL = "radial"
    MESHED = "meshed"


@dataclass(frozen=True)
class PerUnitBase:
    """Per-unit bases: MVA, line-to-line kV per voltage level, rad/s."""

    s_mva: float
    v_kv: Mapping[str, float]
    f_hz: float

    @property
    def omega_base(self) -> float:
        return 2.0 * math.pi * self.f_hz

    def z_base_ohm(self, level: str) -> float:
        """Impedance base (ohm) at a voltage level, peak-phase convention."""
        v = self.v_kv[level]
        return (2.0 / 3.0) * v * v / self.s_mva

    def validate(self) -> None:
        if not self.s_mva > 0:
            raise SchemaError("base.s_mva must be positive")
        if not self.f_hz > 0:
            raise SchemaError("base.f_hz must be positive")
        if not self.v_kv:
            raise SchemaError("base.v_kv must define at least one level")
        for level, v in self.v_kv.items():
            if not v > 0:
                raise SchemaError(f"base.v_kv[{level!r}] must be positive")


@dataclass(frozen=True)
class Bus:
    id: str
    kind: BusKind
    level: str
    v_min: float
    v_max: float
    shunt_c: float = 0.0

    def validate(self) -> None:
        if not (0.0 < self.v_min <= self.v_max):
            raise SchemaError(f"bus {self.id}: need 0 < v_min <= v_max")
        if self.shunt_c < 0:
            raise SchemaError(f"bus {self.id}: shunt_c must be >= 0")


@dataclass(frozen=True)
class Branch:
    from_bus: str
    to_bus: str
    r: float
    l: float
    c_half: float
    s_max: float

    def validate(self) -> None:
        if self.from_bus == self.to_bus:
            raise SchemaError(f"branch {self.from_bus}->{self.to_bus}: self loop")
        if self.r < 0 or self.l < 0 or self.c_half < 0:
            raise SchemaError(
                f"branch {self.from_bus}->{self.to_bus}: r, l, c_half must be >= 0"
            )
        if not self.s_max > 0:
            raise SchemaError(f"branch {self.from_bus}->{self.to_bus}: s_max must be > 0")


@dataclass(frozen=True)
class NetworkModel:
    """Immutable per-unit network; safe to share across threads."""

    base: PerUnitBase
    buses: Tuple[Bus, ...]
    branches: Tuple[Branch, ...]
    source_document: Optional[Dict[str, Any]] = field(
        default=None, repr=False, compare=False
    )

    def __post_init__(self) -> None:
        self.base.validate()
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise SchemaError(f"duplicate bus ids: {dup}")
        for bus in self.buses:
            bus.validate()
            if bus.level not in self.base.v_kv:
                raise SchemaError(f"bus {bus.id}: unknown voltage level {bus.level!r}")
        known = set(ids)
        for br in self.branches:
            br.validate()
            for end in (br.from_bus, br.to_bus):
                if end not in known:
                    raise SchemaError(f"unknown endpoint {end!r}")
        for kind in (BusKind.PCC, BusKind.DRU_AC):
            n = sum(1 for b in self.buses if b.kind is kind)
            if n != 1:
                raise SchemaError(f"need exactly one {kind.value} bus, found {n}")
        if not self._connected():
            raise TopologyError("network graph is disconnected")

    def _connected(self) -> bool:
        if not self.buses:
            return False
        adj = self.adjacency()
        seen = {self.buses[0].id}
        stack = [self.buses[0].id]
        while stack:
            for nxt, _ in adj[stack.pop()]:
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        return len(seen) == len(self.buses)

    def adjacency(self) -> Dict[str, List[Tuple[str, int]]]:
        """Bus id -> list of (neighbor id, branch index)."""
        adj: Dict[str, List[Tuple[str, int]]] = {b.id: [] for b in self.buses}
        for k, br in enumerate(self.branches):
            adj[br.from_bus].append((br.to_bus, k))
            adj[br.to_bus].append((br.from_bus, k))
        return adj

    @property
    def topology_kind(self) -> TopologyKind:
        if len(self.branches) == len(self.buses) - 1:
            return TopologyKind.RADIAL
        return TopologyKind.MESHED

    @property
    def n_wt(self) -> int:
        return sum(1 for b in self.buses if b.kind is BusKind.TURBINE_LV)

    def bus(self, bus_id: str) -> Bus:
        for b in self.buses:
            if b.id == bus_id:
                return b
        raise KeyError(bus_id)

    def bus_index(self) -> Dict[str, int]:
        return {b.id: i for i, b in enumerate(self.buses)}

    def bus_of_kind(self, kind: BusKind) -> Bus:
        for b in self.buses:
            if b.kind is kind:
                return b
        raise KeyError(kind)

    @property
    def pcc_bus(self) -> Bus:
        return self.bus_of_kind(BusKind.PCC)

    @property
    def dru_bus(self) -> Bus:
        return self.bus_of_kind(BusKind.DRU_AC)

    def turbine_lv_buses(self) -> Tuple[Bus, ...]:
        return tuple(b for b in self.buses if b.kind is BusKind.TURBINE_LV)

    def spanning_tree(self, root: str) -> Dict[str, Tuple[str, int]]:
        """BFS tree: bus id -> (parent id, branch index). Root excluded."""
        adj = self.adjacency()
        tree: Dict[str, Tuple[str, int]] = {}
        seen = {root}
        queue = [root]
        while queue:
            cur = queue.pop(0)
            for nxt, k in adj[cur]:
                if nxt not in seen:
                    seen.add(nxt)
                    tree[nxt] = (cur, k)
                    queue.append(nxt)
        return tree


# ---------------------------------------------------------------------------
# Document ingestion


def _require(doc: Mapping[str, Any], key: str, ctx: str) -> Any:
    if key not in doc:
        raise SchemaError(f"{ctx}: missing required field {key!r}")
    return doc[key]


def _number(value: Any, ctx: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(f"{ctx}: expected a number, got {type(value).__name__}")
    return float(value)


def _as_document(document: Any) -> Dict[str, Any]:
    if isinstance(document, Mapping):
        return dict(document)
    if isinstance(document, (str, Path)):
        path = Path(document)
        if path.exists():
            text = path.read_text()
        else:
            text = str(document)
        try:
            parsed = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"network document is not valid JSON: {exc}") from exc
        if not isinstance(parsed, dict):
            raise SchemaError("network document must be a JSON object")
        return parsed
    raise SchemaError(f"unsupported document type {type(document).__name__}")


def load_network(document: Any) -> NetworkModel:
    """Parse an engineering-unit network document into a per-unit model.

    ``document`` may be a mapping, a JSON string, or a path to a JSON file.
    """
    doc = _as_document(document)
    base_doc = _require(doc, "base", "document")
    v_kv = {
        str(level): _number(v, f"base.v_kv[{level!r}]")
        for level, v in _require(base_doc, "v_kv", "base").items()
    }
    base = PerUnitBase(
        s_mva=_number(_require(base_doc, "s_mva", "base"), "base.s_mva"),
        v_kv=v_kv,
        f_hz=_number(_require(base_doc, "f_hz", "base"), "base.f_hz"),
    )
    base.validate()
    omega_base = base.omega_base

    buses: List[Bus] = []
    for raw in _require(doc, "buses", "document"):
        bus_id = str(_require(raw, "id", "bus"))
        ctx = f"bus {bus_id}"
        kind_raw = str(_require(raw, "kind", ctx))
        try:
            kind = BusKind(kind_raw)
        except ValueError:
            valid = sorted(k.value for k in BusKind)
            raise SchemaError(f"{ctx}: unknown kind {kind_raw!r}; expected one of {valid}")
        level = str(_require(raw, "level", ctx))
        if level not in base.v_kv:
            raise SchemaError(f"{ctx}: unknown voltage level {level!r}")
        v_nom = base.v_kv[level]
        z_base = base.z_base_ohm(level)
        buses.append(
            Bus(
                id=bus_id,
                kind=kind,
                level=level,
                v_min=_number(_require(raw, "v_min", ctx), f"{ctx}.v_min") / v_nom,
                v_max=_number(_require(raw, "v_max", ctx), f"{ctx}.v_max") / v_nom,
                shunt_c=omega_base * _number(raw.get("shunt_c", 0.0), f"{ctx}.shunt_c") * 1e-6 * z_base,
            )
        )
    level_of = {b.id: b.level for b in buses}

    branches: List[Branch] = []
    for raw in _require(doc, "branches", "document"):
        from_bus = str(_require(raw, "from", "branch"))
        to_bus = str(_require(raw, "to", "branch"))
        ctx = f"branch {from_bus}->{to_bus}"
        if from_bus not in level_of:
            raise SchemaError(f"unknown endpoint {from_bus!r}")
        if to_bus not in level_of:
            raise SchemaError(f"unknown endpoint {to_bus!r}")
        z_base = base.z_base_ohm(level_of[from_bus])
        branches.append(
            Branch(
                from_bus=from_bus,
                to_bus=to_bus,
                r=_number(_require(raw, "r", ctx), f"{ctx}.r") / z_base,
                l=omega_base * _number(_require(raw, "l", ctx), f"{ctx}.l") * 1e-3 / z_base,
                c_half=omega_base * _number(raw.get("c_half", 0.0), f"{ctx}.c_half") * 1e-6 * z_base,
                s_max=_number(_require(raw, "s_max", ctx), f"{ctx}.s_max") / base.s_mva,
            )
        )

    return NetworkModel(
        base=base,
        buses=tuple(buses),
        branches=tuple(branches),
        source_document=copy.deepcopy(doc),
    )


def save_network(net: NetworkModel) -> Dict[str, Any]:
    """Engineering-unit document for a model.

    Models built by :func:`load_network` keep their source document, which is
    returned verbatim so that load/save round trips are exact. Models built
    programmatically are converted back from per-unit.
    """
    if net.source_document is not None:
        return copy.deepcopy(net.source_document)
    base = net.base
    omega_base = base.omega_base
    doc: Dict[str, Any] = {
        "base": {"s_mva": base.s_mva, "f_hz": base.f_hz, "v_kv": dict(base.v_kv)},
        "buses": [],
        "branches": [],
    }
    for b in net.buses:
        v_nom = base.v_kv[b.level]
        z_base = base.z_base_ohm(b.level)
        doc["buses"].append(
            {
                "id": b.id,
                "kind": b.kind.value,
                "level": b.level,
                "v_min": b.v_min * v_nom,
                "v_max": b.v_max * v_nom,
                "shunt_c": b.shunt_c / (omega_base * 1e-6 * z_base),
            }
        )
    level_of = {b.id: b.level for b in net.buses}
    for br in net.branches:
        z_base = base.z_base_ohm(level_of[br.from_bus])
        doc["branches"].append(
            {
                "from": br.from_bus,
                "to": br.to_bus,
                "r": br.r * z_base,
                "l": br.l * z_base / (omega_base * 1e-3),
                "c_half": br.c_half / (omega_base * 1e-6 * z_base),
                "s_max": br.s_max * base.s_mva,
            }
        )
    return doc


# ---------------------------------------------------------------------------
# Admittance assembly


@dataclass(frozen=True)
class AdmittanceTable:
    """Branch admittances and the assembled bus admittance matrix."""

    omega: float
    series: Tuple[complex, ...]  # 1 / (r + j*omega*l) per branch
    shunt_end: Tuple[complex, ...]  # j*omega*c_half per branch end
    ybus: np.ndarray  # includes bus shunt_c on the diagonal
    bus_order: Tuple[str, ...]


def build_admittance(net: NetworkModel, omega: float) -> AdmittanceTable:
    """Admittances at normalized frequency ``omega``.

    Series elements are ``1/(r + j*omega*l)``; each branch adds a
    ``j*omega*c_half`` shunt at both ends, and bus shunts contribute
    ``j*omega*shunt_c`` on the matrix diagonal.
    """
    if not omega > 0:
        raise ValueError("omega must be positive")
    idx = net.bus_index()
    n = len(net.buses)
    ybus = np.zeros((n, n), dtype=complex)
    series: List[complex] = []
    shunt_end: List[complex] = []
    for br in net.branches:
        z = complex(br.r, omega * br.l)
        if z == 0:
            raise ValueError(
                f"branch {br.from_bus}->{br.to_bus} has r=0 and l=0 (singular)"
            )
        y = 1.0 / z
        y_sh = 1j * omega * br.c_half
        series.append(y)
        shunt_end.append(y_sh)
        i, j = idx[br.from_bus], idx[br.to_bus]
        ybus[i, i] += y + y_sh
        ybus[j, j] += y + y_sh
        ybus[i, j] -= y
        ybus[j, i] -= y
    for b in net.buses:
        ybus[idx[b.id], idx[b.id]] += 1j * omega * b.shunt_c
    return AdmittanceTable(
        omega=omega,
        series=tuple(series),
        shunt_end=tuple(shunt_end),
        ybus=ybus,
        bus_order=tuple(b.id for b in net.buses),
    )


# ---------------------------------------------------------------------------
# Lumped equivalents


def branch_current_fractions(net: NetworkModel) -> np.ndarray:
    """Fraction of total farm current carried by each branch.

    Assumes a radial network and identical output from every turbine: a
    branch carries ``n_downstream / n_wt`` of the farm current, where
    downstream is the side away from the rectifier bus. The trunk between
    the PCC and the rectifier therefore carries the whole farm current.
    For a farm without turbines every branch is trunk (weight one).
    """
    if net.topology_kind is not TopologyKind.RADIAL:
        raise TopologyError("current fractions require a radial network")
    n_wt = net.n_wt
    fractions = np.zeros(len(net.branches))
    if n_wt == 0:
        return np.ones(len(net.branches))
    tree = net.spanning_tree(net.dru_bus.id)
    # children map on the tree rooted at the rectifier bus
    children: Dict[str, List[str]] = {b.id: [] for b in net.buses}
    for child, (parent, _) in tree.items():
        children[parent].append(child)
    counts: Dict[str, int] = {}
    for bus_id in [*reversed(list(tree.keys())), net.dru_bus.id]:
        total = 1 if net.bus(bus_id).kind is BusKind.TURBINE_LV else 0
        for ch in children[bus_id]:
            total += counts[ch]
        counts[bus_id] = total
    for child, (_, branch_idx) in tree.items():
        fractions[branch_idx] = counts[child] / n_wt
    return fractions


def aggregate_equivalents(net: NetworkModel) -> Tuple[float, float]:
    """Lumped ``(l_net, c_net)`` of the collection network.

    ``l_net`` sums series inductances over the turbine-to-rectifier paths
    weighted by the square of each branch's share of the farm current
    (exact for symmetric feeders under uniform turbine output). Branches
    incident to a turbine LV bus are machine transformers and are excluded;
    they are accounted separately by the transformer term of the demand
    model. ``c_net`` is the total shunt capacitance of all branches and
    buses.
    """
    if net.topology_kind is not TopologyKind.RADIAL:
        raise TopologyError("aggregation is defined for radial networks only")
    fractions = branch_current_fractions(net)
    lv_ids = {b.id for b in net.turbine_lv_buses()}
    l_net = 0.0
    c_net = 0.0
    for k, br in enumerate(net.branches):
        c_net += 2.0 * br.c_half
        if br.from_bus in lv_ids or br.to_bus in lv_ids:
            continue
        l_net += br.l * fractions[k] ** 2
    for b in net.buses:
        c_net += b.shunt_c
    return l_net, c_net
