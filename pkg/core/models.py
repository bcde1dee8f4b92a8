from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

from core.grid import GridFunction, Mesh

RELATIONS = ("equal", "geq", "leq")


def mesh_payload(mesh: Mesh) -> dict:
    return {
        "dim": mesh.dim,
        "n": list(mesh.n),
        "extents": list(mesh.extents),
        "h": list(mesh.h),
    }


def finite_or_none(value: Optional[float]) -> Optional[float]:
    if value is None or not math.isfinite(value):
        return None
    return float(value)


def function_payload(u: GridFunction) -> List[float]:
    return [float(value) for value in u.flat]


@dataclass
class EigenResult:
    """Итог минимизации отношения Рэлея: λ₁, минимизатор и история спуска."""

    lam: float
    minimizer: GridFunction
    residual: float
    iterations: int
    history: List[float]
    converged: bool
    stationarity: float
    restart: int = 0
    ray_dependent: bool = False
    lambda_root: Optional[float] = None
    label: str = ""

    def to_payload(self, include_minimizer: bool = True) -> dict:
        payload = {
            "label": self.label,
            "lambda": float(self.lam),
            "lambda_root": finite_or_none(self.lambda_root),
            "residual": finite_or_none(self.residual),
            "stationarity": finite_or_none(self.stationarity),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "restart": int(self.restart),
            "ray_dependent": bool(self.ray_dependent),
            "history": [float(value) for value in self.history],
            "mesh": mesh_payload(self.minimizer.mesh),
        }
        if include_minimizer:
            payload["minimizer"] = function_payload(self.minimizer)
        return payload


@dataclass
class ScalingReport:
    """Подгонка Q(τu) = τ^s·Q(u) вдоль луча.

    ``quotient_exponent`` — наклон s отношения вдоль луча; ``radius_exponent``
    хранит ту же величину в соглашении «радиус, на котором выполняется
    уравнение» (p_G - p_F), то есть -s.
    """

    quotient_exponent: float
    predicted_exponent: float
    element_independent: bool
    samples: List[Tuple[float, float]]
    fit_residual: float
    classification: str = ""

    @property
    def radius_exponent(self) -> float:
        return -self.quotient_exponent

    def to_payload(self) -> dict:
        return {
            "quotient_exponent": float(self.quotient_exponent),
            "predicted_exponent": float(self.predicted_exponent),
            "radius_exponent": float(self.radius_exponent),
            "element_independent": bool(self.element_independent),
            "fit_residual": float(self.fit_residual),
            "classification": self.classification,
            "samples": [{"radius": float(r), "quotient": float(q)} for r, q in self.samples],
        }


@dataclass
class RelationReport:
    name: str
    lhs: float
    rhs: float
    relation: str
    tolerance: float
    passed: bool
    relative: bool = False
    provenance: Dict[str, Any] = field(default_factory=dict)
    details: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def check(
        cls,
        name: str,
        lhs: float,
        rhs: float,
        relation: str,
        tolerance: float,
        *,
        relative: bool = False,
        provenance: Optional[Dict[str, Any]] = None,
        details: Optional[Dict[str, Any]] = None,
    ) -> "RelationReport":
        if relation not in RELATIONS:
            raise ValueError(f"relation must be one of {RELATIONS} (got {relation!r})")
        slack = tolerance * max(abs(rhs), abs(lhs)) if relative else tolerance
        if relation == "equal":
            passed = abs(lhs - rhs) <= slack
        elif relation == "geq":
            passed = lhs >= rhs - slack
        else:
            passed = lhs <= rhs + slack
        return cls(
            name=name,
            lhs=float(lhs),
            rhs=float(rhs),
            relation=relation,
            tolerance=float(tolerance),
            passed=bool(passed),
            relative=relative,
            provenance=dict(provenance or {}),
            details=dict(details or {}),
        )

    def to_payload(self) -> dict:
        return {
            "name": self.name,
            "lhs": float(self.lhs),
            "rhs": float(self.rhs),
            "relation": self.relation,
            "tolerance": float(self.tolerance),
            "relative": self.relative,
            "passed": self.passed,
            "provenance": self.provenance,
            "details": self.details,
        }


@dataclass
class SolveReport:
    lam: float
    rhs_tag: str
    converged: bool
    residual: float
    iterations: int
    solution: GridFunction

    def to_payload(self, include_solution: bool = True) -> dict:
        payload = {
            "lambda": float(self.lam),
            "rhs_tag": self.rhs_tag,
            "converged": bool(self.converged),
            "residual": finite_or_none(self.residual),
            "iterations": int(self.iterations),
        }
        if include_solution:
            payload["solution"] = function_payload(self.solution)
        return payload


@dataclass
class SweepRow:
    lam: float
    converged: bool
    residual: float
    iterations: int
    expected_solvable: bool

    def to_payload(self) -> dict:
        return {
            "lambda": float(self.lam),
            "converged": bool(self.converged),
            "residual": finite_or_none(self.residual),
            "iterations": int(self.iterations),
            "expected_solvable": bool(self.expected_solvable),
        }


@dataclass
class SweepTable:
    """Строки решений f_λ(u) = h по возрастанию λ."""

    rows: List[SweepRow]
    metadata: Dict[str, Any] = field(default_factory=dict)
    reports: List[SolveReport] = field(default_factory=list, repr=False)

    def __post_init__(self) -> None:
        lams = [row.lam for row in self.rows]
        if any(b <= a for a, b in zip(lams, lams[1:])):
            raise ValueError("sweep lambdas must be strictly increasing")

    @property
    def theorem_consistent(self) -> bool:
        return all(row.converged for row in self.rows if row.expected_solvable)

    def to_payload(self) -> dict:
        return {
            "metadata": self.metadata,
            "theorem_consistent": self.theorem_consistent,
            "rows": [row.to_payload() for row in self.rows],
        }


__all__ = [
    "mesh_payload",
    "finite_or_none",
    "function_payload",
    "EigenResult",
    "ScalingReport",
    "RelationReport",
    "SolveReport",
    "SweepRow",
    "SweepTable",
]
