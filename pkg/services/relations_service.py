"""Численная проверка тождеств и неравенств между относительными собственными значениями.

Каждая проверка возвращает RelationReport: левая и правая части, вид
соотношения, допуск и подробности (обе формы λ — степенная и корневая,
аналитические ориентиры, флаги сходимости).
"""

from __future__ import annotations

import logging
import math
from dataclasses import replace
from typing import Optional

import numpy as np
from scipy.sparse.linalg import splu

from core.errors import ConvergenceError, OperatorError
from core.grid import (
    GridFunction,
    Mesh,
    analytic_first_eigenvalue,
    gradient,
    integrate,
    lp_norm,
    nodal_gradient_power,
    random_function,
)
from core.models import EigenResult, RelationReport, mesh_payload
from core.operators import OperatorSpec, energy, pairing
from services.quotient_service import (
    InitMode,
    MinimizeConfig,
    QuotientProblem,
    RatioFunctional,
    evaluate_quotient,
    minimize_quotient,
    minimize_ratio,
    p0p1_eigen,
    substitution_transform,
)

logger = logging.getLogger(__name__)

PROP1_TOL = 0.02
INEQ_SLACK = 1e-6
POWER_IDENTITY_TOL = 1e-6
BOUND_RTOL = 1e-9
HOLDER_RTOL = 1e-12
COERCIVITY_SLACK = 1e-9
DEFAULT_PROBES = 100
DEFAULT_TRIALS = 100

INVERSE_ITERATION_MAX = 500
INVERSE_ITERATION_TOL = 1e-13


def _provenance(mesh: Mesh, **params) -> dict:
    payload = {key: value for key, value in params.items() if value is not None}
    payload["mesh"] = mesh_payload(mesh)
    return payload


def _probes(mesh: Mesh, count: int, seed: int) -> list[GridFunction]:
    rng = np.random.default_rng(seed)
    return [random_function(mesh, rng) for _ in range(count)]


def linear_first_eigenvalue(mesh: Mesh) -> float:
    """inf ‖∇v‖₂/‖v‖₂ дискретного лапласиана Дирихле (обратная степенная итерация)."""
    stiffness = mesh.stiffness_matrix
    factor = splu(stiffness.tocsc())
    x = np.ones(mesh.size)
    previous = math.inf
    for iteration in range(1, INVERSE_ITERATION_MAX + 1):
        x = factor.solve(x)
        x /= np.linalg.norm(x)
        value = float(x @ (stiffness @ x)) / (mesh.node_weight * float(x @ x))
        if abs(value - previous) <= INVERSE_ITERATION_TOL * value:
            logger.debug("Обратная итерация сошлась за %s шагов: %.15g", iteration, value)
            return math.sqrt(value)
        previous = value
    raise ConvergenceError("inverse power iteration did not converge")


def verify_prop1_part2(p: float, mesh: Mesh, config: MinimizeConfig) -> RelationReport:
    """λ₁(p) для -∇(|u|^{p-2}∇u) = λ|u|^{p-2}u против ((2/p)·λ₁(-Δ))²."""
    problem = QuotientProblem(OperatorSpec.density_diffusion(p), OperatorSpec.power_identity(p), mesh)
    result = minimize_quotient(problem, config)
    linear = linear_first_eigenvalue(mesh)
    rhs = ((2.0 / p) * linear) ** 2
    # отличие от непрерывного значения убывает как h²; отличие от rhs есть только шум спуска
    continuum = ((2.0 / p) * analytic_first_eigenvalue(mesh)) ** 2

    # ⟨F(u),u⟩ = (4/p²)‖∇v‖₂², ‖u‖_p^p = ‖v‖₂² при v = |u|^{(p-2)/2}u
    v = substitution_transform(result.minimizer, p)
    substituted = (4.0 / p**2) * lp_norm(gradient(v), 2.0) ** 2 / lp_norm(v, 2.0) ** 2
    details = {
        "lambda_power": result.lam,
        "lambda_root": result.lambda_root,
        "discrepancy": result.lam - rhs,
        "relative_discrepancy": (result.lam - rhs) / rhs,
        "linear_first_eigenvalue": linear,
        "continuum_reference": continuum,
        "continuum_discrepancy": result.lam - continuum,
        "continuum_relative_discrepancy": (result.lam - continuum) / continuum,
        "substitution_quotient": substituted,
        "converged": result.converged,
        "iterations": result.iterations,
    }
    return RelationReport.check(
        "prop1_part2",
        result.lam,
        rhs,
        "equal",
        PROP1_TOL,
        relative=True,
        provenance=_provenance(mesh, p=p),
        details=details,
    )


def verify_ineq_3_3(p0: float, p1: float, mesh: Mesh, config: MinimizeConfig) -> RelationReport:
    """λ₁^{1/p0} ≥ λ₁(-Δ_p), λ₁ = inf ‖∇u‖_p^p / ∫|u|^{p0}|∇u|^{p1}.

    Корневая форма λ_{p0,p1} = λ₁^{1/p} сравнивается с λ₁(-Δ_p) только для отчёта.
    """
    p = p0 + p1
    weighted = p0p1_eigen(p0, p1, mesh, config)
    plain = weighted if p1 == 0 else p0p1_eigen(p, 0.0, mesh, config)
    lap_p = plain.lam ** (1.0 / p)
    lhs = weighted.lam ** (1.0 / p0)
    lambda_root = weighted.lam ** (1.0 / p)
    details = {
        "lambda_power": weighted.lam,
        "lambda_root": lambda_root,
        "p_laplacian_first": lap_p,
        "root_form_holds": lambda_root >= lap_p - INEQ_SLACK,
        "discrepancy": lhs - lap_p,
        "converged": weighted.converged and plain.converged,
    }
    return RelationReport.check(
        "ineq_3_3",
        lhs,
        lap_p,
        "geq",
        INEQ_SLACK,
        provenance=_provenance(mesh, p=p, p0=p0, p1=p1),
        details=details,
    )


def verify_fully_nonlinear_power(p: float, mesh: Mesh, config: MinimizeConfig) -> RelationReport:
    """inf (‖Lu‖_p/‖u‖_p)^{p-1} против (inf ‖Lu‖_p/‖u‖_p)^{p-1}, L = -Δ."""
    bilap = OperatorSpec.powered_bilaplacian(p)
    power = OperatorSpec.power_identity(p)
    powered = minimize_ratio(RatioFunctional(bilap, power, power=(p - 1.0) / p), mesh, config)
    # второй спуск стартует из первого минимизатора
    warm = replace(config, init=InitMode.SUPPLIED, initial=powered.minimizer)
    plain = minimize_ratio(RatioFunctional(bilap, power, power=1.0 / p), mesh, warm)
    rhs = plain.lam ** (p - 1.0)

    linear_problem = QuotientProblem(OperatorSpec.powered_linear(p), power, mesh)
    details = {
        "lambda_f": powered.lam,
        "lambda_L": plain.lam,
        "powered_linear_quotient": evaluate_quotient(linear_problem, plain.minimizer),
        "converged": powered.converged and plain.converged,
    }
    if p == 2:
        details["continuum_reference"] = analytic_first_eigenvalue(mesh) ** 2
    return RelationReport.check(
        "fully_nonlinear_power",
        powered.lam,
        rhs,
        "equal",
        POWER_IDENTITY_TOL,
        relative=True,
        provenance=_provenance(mesh, p=p),
        details=details,
    )


def lambda_bilap_grad(
    p: float,
    mesh: Mesh,
    config: MinimizeConfig,
    probes: int = DEFAULT_PROBES,
) -> RelationReport:
    """λ₁(p,p) = (p-1)·inf ‖Δu‖_p/‖∇u‖_p и оценка через c = sup ‖∇u‖_p/‖Δu‖_p по пробам."""
    bilap = OperatorSpec.powered_bilaplacian(p)
    plap = OperatorSpec.p_laplacian(p)
    result = minimize_ratio(RatioFunctional(bilap, plap, power=1.0 / p), mesh, config)
    lam = (p - 1.0) * result.lam

    ratios = [
        (energy(plap, u) / energy(bilap, u)) ** (1.0 / p)
        for u in _probes(mesh, probes, config.seed + 7919)
    ]
    c_est = max(ratios)
    bound = (p - 1.0) / c_est
    details = {
        "ratio_inf": result.lam,
        "c_estimate": c_est,
        "literal_bound": (p - 1.0) * c_est,
        "literal_bound_holds": lam <= (p - 1.0) * c_est,
        "probes": probes,
        "converged": result.converged,
    }
    return RelationReport.check(
        "bilap_grad",
        lam,
        bound,
        "leq",
        BOUND_RTOL,
        relative=True,
        provenance=_provenance(mesh, p=p),
        details=details,
    )


def _density_ratio(u: GridFunction, p: float) -> tuple[float, float]:
    """(отношение λ̃, нижняя оценка по Гёльдеру) для одной функции."""
    bilap_energy = energy(OperatorSpec.powered_bilaplacian(p), u)
    weighted = energy(OperatorSpec.density_diffusion(p), u)
    holder = lp_norm(u, p) ** (p - 2.0) * lp_norm(gradient(u), p) ** 2
    return bilap_energy / ((p - 1.0) * weighted), bilap_energy / ((p - 1.0) * holder)


def lambda_bilap_density(
    p: float,
    mesh: Mesh,
    config: MinimizeConfig,
    probes: int = DEFAULT_PROBES,
) -> RelationReport:
    """λ̃₁(p) = (1/(p-1))·inf ‖Δu‖_p^p / ∫|u|^{p-2}|∇u|² и её оценка снизу по Гёльдеру."""
    bilap = OperatorSpec.powered_bilaplacian(p)
    density = OperatorSpec.density_diffusion(p)
    result = minimize_ratio(RatioFunctional(bilap, density), mesh, config)
    lam, bound = _density_ratio(result.minimizer, p)

    slacks = []
    for u in _probes(mesh, probes, config.seed + 104729):
        ratio, lower = _density_ratio(u, p)
        slacks.append((ratio - lower) / abs(lower))

    details = {
        "lambda_power": lam,
        "bound_tightness": (lam - bound) / lam,
        "probe_min_relative_slack": min(slacks) if slacks else None,
        "probes_hold": all(slack >= -HOLDER_RTOL for slack in slacks),
        "probes": probes,
        "converged": result.converged,
    }
    if p >= 3:
        # отношение ‖Δu‖_{p-1}/‖u‖_{p-1}: только для отчёта
        auxiliary = minimize_ratio(
            RatioFunctional(
                OperatorSpec.powered_bilaplacian(p - 1.0),
                OperatorSpec.power_identity(p - 1.0),
                power=1.0 / (p - 1.0),
            ),
            mesh,
            config,
        )
        details["auxiliary_ratio"] = auxiliary.lam
    report = RelationReport.check(
        "bilap_density",
        lam,
        bound,
        "geq",
        HOLDER_RTOL,
        relative=True,
        provenance=_provenance(mesh, p=p),
        details=details,
    )
    # оценка обязана выполняться и на минимизаторе, и на каждой пробе
    report.passed = report.passed and details["probes_hold"]
    return report


def holder_gap(u: GridFunction, p0: float, p1: float) -> float:
    """‖u‖_p^{p0}·‖∇u‖_p^{p1} - ∫|u|^{p0}|∇u|^{p1}, p = p0 + p1; не меньше нуля."""
    p = p0 + p1
    m = nodal_gradient_power(u, p)
    weighted = integrate(u.with_values(np.abs(u.values) ** p0 * m.values ** (p1 / p)))
    return lp_norm(u, p) ** p0 * lp_norm(gradient(u), p) ** p1 - weighted


def verify_coercivity(
    p0: float,
    p1: float,
    lam: float,
    mesh: Mesh,
    trials: int = DEFAULT_TRIALS,
    config: Optional[MinimizeConfig] = None,
    eigen: Optional[EigenResult] = None,
) -> RelationReport:
    """⟨f_λ(u),u⟩ ≥ (1 - λ/λ_disc)·‖∇u‖_p^p на случайных u и на минимизаторе.

    Все пробы нормированы на ‖∇u‖_p = 1. При λ > λ_disc константа равна нулю,
    и минимизатор нарушает оценку (отрицательный контроль).
    """
    if lam < 0:
        raise OperatorError(f"coercivity check needs lambda >= 0 (got {lam:g})")
    config = config or MinimizeConfig()
    p = p0 + p1
    eigen = eigen or p0p1_eigen(p0, p1, mesh, config)
    lambda_disc = eigen.lam
    constant = max(0.0, 1.0 - lam / lambda_disc)

    plap = OperatorSpec.p_laplacian(p)
    weighted = OperatorSpec.grad_weighted_power(p0, p1)
    candidates = _probes(mesh, trials, config.seed) + [eigen.minimizer]

    margins = []
    for u in candidates:
        u = u * (1.0 / lp_norm(gradient(u), p))
        value = pairing(plap, u, u) - lam * pairing(weighted, u, u)
        margins.append(value - constant * pairing(plap, u, u))

    worst = int(np.argmin(margins))
    details = {
        "lambda_disc": lambda_disc,
        "lambda_root": lambda_disc ** (1.0 / p),
        "constant": constant,
        "trials": trials,
        "violations": sum(margin < -COERCIVITY_SLACK for margin in margins),
        "worst_probe": "minimizer" if worst == trials else worst,
        "converged": eigen.converged,
    }
    return RelationReport.check(
        "coercivity",
        min(margins),
        -COERCIVITY_SLACK,
        "geq",
        0.0,
        provenance=_provenance(mesh, p=p, p0=p0, p1=p1, **{"lambda": lam}),
        details=details,
    )


__all__ = [
    "linear_first_eigenvalue",
    "verify_prop1_part2",
    "verify_ineq_3_3",
    "verify_fully_nonlinear_power",
    "lambda_bilap_grad",
    "lambda_bilap_density",
    "holder_gap",
    "verify_coercivity",
]
