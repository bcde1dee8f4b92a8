"""Поведение отношения Рэлея вдоль лучей r·u₀.

При равных степенях однородности ⟨F(u),u⟩ и ⟨G(u),u⟩ отношение не зависит от
элемента луча; иначе оно растёт или убывает как степень r, и «собственное
значение» становится функцией элемента.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import List, Sequence

from core.grid import GridFunction
from core.models import ScalingReport
from core.operators import OperatorSpec, homogeneity_degree
from core.utils import loglog_fit
from services.quotient_service import QuotientProblem, eigen_residual, evaluate_quotient

logger = logging.getLogger(__name__)

ELEMENT_INDEPENDENCE_TOL = 1e-8
MIN_RADII = 3
MIN_DECADES = 1.0


class PairClass(str, Enum):
    MATCHED = "matched"
    F_DOMINANT = "F_dominant_scaling"
    G_DOMINANT = "G_dominant_scaling"


def classify_pair(F: OperatorSpec, G: OperatorSpec) -> PairClass:
    degree_f = homogeneity_degree(F).pairing_degree
    degree_g = homogeneity_degree(G).pairing_degree
    if degree_f == degree_g:
        return PairClass.MATCHED
    return PairClass.F_DOMINANT if degree_f > degree_g else PairClass.G_DOMINANT


def ray_scan(problem: QuotientProblem, u0: GridFunction, radii: Sequence[float]) -> ScalingReport:
    if u0.is_zero():
        raise ValueError("ray scan needs a nonzero function")
    radii = sorted(float(r) for r in radii)
    if len(radii) < MIN_RADII:
        raise ValueError(f"ray scan needs at least {MIN_RADII} radii (got {len(radii)})")
    if radii[0] <= 0:
        raise ValueError("radii must be positive")
    if radii[-1] / radii[0] < 10.0**MIN_DECADES:
        logger.warning("Радиусы охватывают меньше декады: %s", radii)

    samples = [(r, evaluate_quotient(problem, r * u0)) for r in radii]
    fit = loglog_fit([r for r, _ in samples], [q for _, q in samples])
    predicted = (
        homogeneity_degree(problem.F).pairing_degree - homogeneity_degree(problem.G).pairing_degree
    )
    classification = classify_pair(problem.F, problem.G)
    logger.info(
        "%s: наклон %.12g (ожидалось %g), %s",
        problem.label,
        fit.slope,
        predicted,
        classification.value,
    )
    return ScalingReport(
        quotient_exponent=fit.slope,
        predicted_exponent=predicted,
        element_independent=abs(fit.slope) <= ELEMENT_INDEPENDENCE_TOL,
        samples=samples,
        fit_residual=fit.residual,
        classification=classification.value,
    )


@dataclass(frozen=True)
class RayPoint:
    radius: float
    lam: float
    residual: float


def eigen_ray(
    problem: QuotientProblem,
    u: GridFunction,
    lam: float,
    radii: Sequence[float],
) -> List[RayPoint]:
    """Перенос пары (λ, u) на луч: F(ru) = λ(r)G(ru) при λ(r) = λ·r^{d_F - d_G}."""
    shift = homogeneity_degree(problem.F).operator_degree - homogeneity_degree(problem.G).operator_degree
    points = []
    for radius in radii:
        lam_r = lam * radius**shift
        points.append(RayPoint(radius, lam_r, eigen_residual(problem, radius * u, lam_r)))
    return points


__all__ = [
    "ELEMENT_INDEPENDENCE_TOL",
    "PairClass",
    "classify_pair",
    "ray_scan",
    "RayPoint",
    "eigen_ray",
]
