"""Solver-agnostic second-order cone program representation.

A program holds named scalar variables, affine rows (``=`` or ``<=``),
second-order cones ``||vector|| <= scalar`` whose entries are affine
expressions, and an affine objective to minimize. Complex quantities are
expanded into real pairs by the builders before they reach this layer.

Programs serialize to a line-oriented text format (one declaration per
line, ``repr`` floats, deterministic ordering)::

    conicprogram v1
    var <name>
    min <const> [; <var>:<coef> ...]
    row <tag> <eq|le> <rhs> [; <var>:<coef> ...]
    cone <tag> <nvec>
      s <const> [; <var>:<coef> ...]
      e <const> [; <var>:<coef> ...]

``row`` lines read "sum of coefficient*variable (rel) rhs"; a ``cone`` is
followed by its scalar line and ``nvec`` vector-entry lines.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp


class LinExpr:
    """Sparse affine expression: sum(coeffs[i] * x[i]) + const."""

    __slots__ = ("coeffs", "const")

    def __init__(self, coeffs: Optional[Dict[int, float]] = None, const: float = 0.0):
        self.coeffs: Dict[int, float] = dict(coeffs) if coeffs else {}
        self.const = float(const)

    @classmethod
    def variable(cls, idx: int, coef: float = 1.0) -> "LinExpr":
        return cls({idx: float(coef)})

    @classmethod
    def constant(cls, value: float) -> "LinExpr":
        return cls({}, value)

    def add_term(self, idx: int, coef: float) -> "LinExpr":
        if coef:
            self.coeffs[idx] = self.coeffs.get(idx, 0.0) + float(coef)
        return self

    def copy(self) -> "LinExpr":
        return LinExpr(self.coeffs, self.const)

    def scaled(self, factor: float) -> "LinExpr":
        return LinExpr({i: c * factor for i, c in self.coeffs.items()}, self.const * factor)

    def __add__(self, other: "LinExpr") -> "LinExpr":
        out = self.copy()
        for i, c in other.coeffs.items():
            out.add_term(i, c)
        out.const += other.const
        return out

    def __sub__(self, other: "LinExpr") -> "LinExpr":
        return self + other.scaled(-1.0)

    def value(self, x: np.ndarray) -> float:
        return self.const + sum(c * x[i] for i, c in self.coeffs.items())


@dataclass
class AffineRow:
    tag: str
    expr: LinExpr
    relation: str  # "eq" or "le"
    rhs: float


@dataclass
class SocCone:
    tag: str
    vector: Tuple[LinExpr, ...]
    scalar: LinExpr


@dataclass
class ProgramResiduals:
    max_eq: float
    max_ineq: float
    max_cone: float

    @property
    def max_violation(self) -> float:
        return max(self.max_eq, self.max_ineq, self.max_cone)


class ConicProgram:
    """Mutable conic program builder; treat as frozen once handed to a solver."""

    def __init__(self) -> None:
        self.var_names: List[str] = []
        self._var_index: Dict[str, int] = {}
        self.rows: List[AffineRow] = []
        self.cones: List[SocCone] = []
        self.objective: LinExpr = LinExpr()

    # -- construction -------------------------------------------------------

    def add_variable(self, name: str) -> int:
        if name in self._var_index:
            raise ValueError(f"duplicate variable {name!r}")
        idx = len(self.var_names)
        self.var_names.append(name)
        self._var_index[name] = idx
        return idx

    def var(self, name: str) -> int:
        return self._var_index[name]

    @property
    def n_vars(self) -> int:
        return len(self.var_names)

    def _check_expr(self, expr: LinExpr) -> None:
        for i in expr.coeffs:
            if not 0 <= i < self.n_vars:
                raise ValueError(f"expression references undeclared variable index {i}")

    def add_eq(self, tag: str, expr: LinExpr, rhs: float) -> None:
        self._check_expr(expr)
        self.rows.append(AffineRow(tag, expr, "eq", float(rhs)))

    def add_le(self, tag: str, expr: LinExpr, rhs: float) -> None:
        self._check_expr(expr)
        self.rows.append(AffineRow(tag, expr, "le", float(rhs)))

    def add_soc(self, tag: str, vector: Sequence[LinExpr], scalar: LinExpr) -> None:
        for e in vector:
            self._check_expr(e)
        self._check_expr(scalar)
        self.cones.append(SocCone(tag, tuple(e.copy() for e in vector), scalar.copy()))

    def add_objective_term(self, expr: LinExpr) -> None:
        self._check_expr(expr)
        self.objective = self.objective + expr

    # -- evaluation ---------------------------------------------------------

    def objective_value(self, x: np.ndarray) -> float:
        return self.objective.value(x)

    def residuals(self, x: np.ndarray) -> ProgramResiduals:
        """Worst-case violation of every raw row and cone at point ``x``."""
        max_eq = 0.0
        max_ineq = 0.0
        for row in self.rows:
            v = row.expr.value(x) - row.rhs
            if row.relation == "eq":
                max_eq = max(max_eq, abs(v))
            else:
                max_ineq = max(max_ineq, v)
        max_cone = 0.0
        for cone in self.cones:
            norm = math.sqrt(sum(e.value(x) ** 2 for e in cone.vector))
            max_cone = max(max_cone, norm - cone.scalar.value(x))
        return ProgramResiduals(max_eq=max_eq, max_ineq=max(max_ineq, 0.0), max_cone=max(max_cone, 0.0))

    def tags(self) -> set:
        out = {row.tag for row in self.rows} | {cone.tag for cone in self.cones}
        out.add("objective")
        return out

    # -- standard form for backends -----------------------------------------

    def standard_form(self) -> "StandardForm":
        n = self.n_vars
        c = np.zeros(n)
        for i, v in self.objective.coeffs.items():
            c[i] = v

        def matrix(rows: List[Tuple[LinExpr, float]]) -> Tuple[sp.csc_matrix, np.ndarray]:
            data, ri, ci = [], [], []
            rhs = np.zeros(len(rows))
            for k, (expr, b) in enumerate(rows):
                rhs[k] = b - expr.const
                for i, v in expr.coeffs.items():
                    ri.append(k)
                    ci.append(i)
                    data.append(v)
            mat = sp.csc_matrix((data, (ri, ci)), shape=(len(rows), n))
            return mat, rhs

        eq_rows = [(r.expr, r.rhs) for r in self.rows if r.relation == "eq"]
        le_rows = [(r.expr, r.rhs) for r in self.rows if r.relation == "le"]
        a_eq, b_eq = matrix(eq_rows)
        a_le, b_le = matrix(le_rows)
        cones = []
        for cone in self.cones:
            # block rows: scalar first, then the vector entries
            entries = [cone.scalar, *cone.vector]
            data, ri, ci = [], [], []
            offs = np.zeros(len(entries))
            for k, expr in enumerate(entries):
                offs[k] = expr.const
                for i, v in expr.coeffs.items():
                    ri.append(k)
                    ci.append(i)
                    data.append(v)
            f = sp.csc_matrix((data, (ri, ci)), shape=(len(entries), n))
            cones.append((f, offs))
        return StandardForm(
            c=c, c0=self.objective.const, a_eq=a_eq, b_eq=b_eq, a_le=a_le, b_le=b_le, cones=cones
        )

    # -- serialization ------------------------------------------------------

    @staticmethod
    def _format_expr(names: Sequence[str], expr: LinExpr) -> str:
        parts = [repr(expr.const)]
        terms = " ".join(
            f"{names[i]}:{expr.coeffs[i]!r}" for i in sorted(expr.coeffs)
        )
        if terms:
            parts.append("; " + terms)
        return " ".join(parts)

    def serialize(self) -> str:
        lines = ["conicprogram v1"]
        for name in self.var_names:
            lines.append(f"var {name}")
        lines.append(f"min {self._format_expr(self.var_names, self.objective)}")
        for row in self.rows:
            lines.append(
                f"row {row.tag} {row.relation} {row.rhs!r} "
                f"{self._format_expr(self.var_names, row.expr)}"
            )
        for cone in self.cones:
            lines.append(f"cone {cone.tag} {len(cone.vector)}")
            lines.append(f"  s {self._format_expr(self.var_names, cone.scalar)}")
            for e in cone.vector:
                lines.append(f"  e {self._format_expr(self.var_names, e)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def parse(cls, text: str) -> "ConicProgram":
        prog = cls()
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or lines[0].strip() != "conicprogram v1":
            raise ValueError("not a conicprogram v1 document")

        def parse_expr(body: str) -> LinExpr:
            if ";" in body:
                const_part, terms_part = body.split(";", 1)
            else:
                const_part, terms_part = body, ""
            expr = LinExpr(const=float(const_part.strip()))
            for term in terms_part.split():
                name, coef = term.rsplit(":", 1)
                expr.add_term(prog.var(name), float(coef))
            return expr

        i = 1
        pending_cone: Optional[Tuple[str, int, List[LinExpr], Optional[LinExpr]]] = None
        while i < len(lines):
            line = lines[i]
            stripped = line.strip()
            if pending_cone is not None:
                tag, nvec, vec, scalar = pending_cone
                kind, body = stripped.split(" ", 1)
                if kind == "s":
                    scalar = parse_expr(body)
                elif kind == "e":
                    vec.append(parse_expr(body))
                else:
                    raise ValueError(f"unexpected line inside cone: {line!r}")
                pending_cone = (tag, nvec, vec, scalar)
                if scalar is not None and len(vec) == nvec:
                    prog.add_soc(tag, vec, scalar)
                    pending_cone = None
                i += 1
                continue
            head, _, rest = stripped.partition(" ")
            if head == "var":
                prog.add_variable(rest.strip())
            elif head == "min":
                prog.objective = parse_expr(rest)
            elif head == "row":
                tag, relation, rhs_and_expr = rest.split(" ", 2)
                rhs_str, _, expr_str = rhs_and_expr.partition(" ")
                row_expr = parse_expr(expr_str)
                if relation == "eq":
                    prog.add_eq(tag, row_expr, float(rhs_str))
                elif relation == "le":
                    prog.add_le(tag, row_expr, float(rhs_str))
                else:
                    raise ValueError(f"unknown relation {relation!r}")
            elif head == "cone":
                tag, nvec = rest.split()
                pending_cone = (tag, int(nvec), [], None)
            else:
                raise ValueError(f"unknown declaration {head!r}")
            i += 1
        if pending_cone is not None:
            raise ValueError("truncated cone block")
        return prog


@dataclass
class StandardForm:
    """Matrix view consumed by the solver backends."""

    c: np.ndarray
    c0: float
    a_eq: sp.csc_matrix
    b_eq: np.ndarray
    a_le: sp.csc_matrix
    b_le: np.ndarray
    cones: List[Tuple[sp.csc_matrix, np.ndarray]]  # (F, g): entries F x + g, scalar first
