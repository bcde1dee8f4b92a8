"""Разрешимость f_λ(u) = -∇(|∇u|^{p-2}∇u) - λ|u|^{p0-2}u|∇u|^{p1} = h.

Ниже собственного значения λ_{p0,p1} уравнение должно решаться; здесь это
проверяется численно: демпфированный метод Ньютона с регуляризацией
лапласианом, свипы по λ, переформулировка u = λF⁻¹(G(u)) и Монте-Карло
проверка необходимого условия допустимости правой части.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy.sparse.linalg import splu

from core.errors import ConfigError
from core.grid import GridFunction, Mesh, gradient, inner, lp_norm, random_function, sine_mode
from core.models import SolveReport, SweepRow, SweepTable, mesh_payload
from core.operators import OperatorSpec, apply, jacobian, pairing
from core.utils import gather_limited
from services.quotient_service import MinimizeConfig, p0p1_eigen

logger = logging.getLogger(__name__)

DEFAULT_SOLVE_TOL = 1e-8
DEFAULT_SOLVE_MAX_ITER = 200
DEFAULT_MARGIN = 0.05
DEFAULT_SAMPLES = 200
MU_MIN = 1e-12
MU_MAX = 1e12
ARMIJO_C = 1e-4
MAX_BACKTRACKS = 30

RHS_TAGS = ("constant", "mode", "noise")


@dataclass(frozen=True)
class SolveConfig:
    max_iter: int = DEFAULT_SOLVE_MAX_ITER
    tol: float = DEFAULT_SOLVE_TOL
    mu: float = 1.0
    threads: Optional[int] = None

    def __post_init__(self) -> None:
        if self.max_iter < 1:
            raise ConfigError(f"max_iter must be >= 1 (got {self.max_iter})")
        if self.tol <= 0 or self.mu <= 0:
            raise ConfigError("tol and mu must be positive")


def _operators(p0: float, p1: float) -> tuple[OperatorSpec, OperatorSpec]:
    return OperatorSpec.p_laplacian(p0 + p1), OperatorSpec.grad_weighted_power(p0, p1)


def flambda(p0: float, p1: float, lam: float, u: GridFunction) -> GridFunction:
    F, G = _operators(p0, p1)
    return apply(F, u) - lam * apply(G, u)


def make_rhs(mesh: Mesh, tag: str, amplitude: float = 1.0, seed: int = 0) -> GridFunction:
    if tag == "constant":
        return GridFunction(mesh, np.full(mesh.shape, float(amplitude)))
    if tag == "mode":
        return sine_mode(mesh) * amplitude
    if tag == "noise":
        rng = np.random.default_rng(seed)
        return GridFunction(mesh, amplitude * rng.standard_normal(mesh.shape))
    raise ConfigError(f"unknown right-hand side {tag!r} (expected one of {', '.join(RHS_TAGS)})")


def solve_flambda(
    p0: float,
    p1: float,
    lam: float,
    h: GridFunction,
    config: SolveConfig | None = None,
    rhs_tag: str = "custom",
) -> SolveReport:
    """Минимизирует ½‖f_λ(u) - h‖² шагами (J + μK)δ = -r из u = 0."""
    config = config or SolveConfig()
    F, G = _operators(p0, p1)
    mesh = h.mesh
    stiffness = mesh.laplacian_matrix
    scale = lp_norm(h, 2.0) + 1.0

    u = GridFunction.zeros(mesh)
    r = (apply(F, u) - lam * apply(G, u) - h).flat
    merit = 0.5 * float(r @ r)
    mu = config.mu
    iterations = 0

    def residual_of(vector: np.ndarray) -> float:
        return math.sqrt(mesh.node_weight * float(vector @ vector)) / scale

    while residual_of(r) > config.tol and iterations < config.max_iter:
        iterations += 1
        jac = (jacobian(F, u) - lam * jacobian(G, u)).tocsr()
        try:
            delta = -splu((jac + mu * stiffness).tocsc()).solve(r)
        except RuntimeError:
            mu = min(mu * 10.0, MU_MAX)
            continue

        slope = min(float((jac.T @ r) @ delta), 0.0)
        alpha = 1.0
        accepted = False
        for _ in range(MAX_BACKTRACKS):
            trial = u.with_values(u.flat + alpha * delta)
            trial_r = (apply(F, trial) - lam * apply(G, trial) - h).flat
            trial_merit = 0.5 * float(trial_r @ trial_r)
            if trial_merit < merit and trial_merit <= merit + ARMIJO_C * alpha * slope:
                accepted = True
                break
            alpha *= 0.5

        if not accepted:
            mu = min(mu * 10.0, MU_MAX)
            logger.debug("λ=%g: шаг отклонён, μ=%.3g", lam, mu)
            if mu >= MU_MAX:
                break
            continue

        u, r, merit = trial, trial_r, trial_merit
        if alpha == 1.0:
            mu = max(mu / 10.0, MU_MIN)
        logger.debug("λ=%g, итерация %s: невязка %.3g, шаг %.3g", lam, iterations, residual_of(r), alpha)

    # невязка пересчитывается заново по решению
    final = flambda(p0, p1, lam, u) - h
    residual = lp_norm(final, 2.0) / scale
    converged = residual <= config.tol
    if not converged:
        logger.info("λ=%g: не сошлось, невязка %.3g", lam, residual)
    return SolveReport(
        lam=lam,
        rhs_tag=rhs_tag,
        converged=converged,
        residual=residual,
        iterations=iterations,
        solution=u,
    )


def lambda_sweep(
    p0: float,
    p1: float,
    lambdas: Sequence[float],
    h: GridFunction,
    config: SolveConfig | None = None,
    *,
    rhs_tag: str = "custom",
    lambda_disc: float | None = None,
    margin: float = DEFAULT_MARGIN,
    eigen_config: MinimizeConfig | None = None,
) -> SweepTable:
    """Строка на каждое λ; строки ниже (1 - margin)·λ_disc обязаны сойтись."""
    lambdas = [float(lam) for lam in lambdas]
    if not lambdas:
        raise ValueError("sweep needs at least one lambda")
    if any(b <= a for a, b in zip(lambdas, lambdas[1:])):
        raise ValueError("sweep lambdas must be strictly increasing")
    config = config or SolveConfig()
    mesh = h.mesh
    if lambda_disc is None:
        lambda_disc = p0p1_eigen(p0, p1, mesh, eigen_config or MinimizeConfig()).lam

    jobs = [
        (lambda lam=lam: solve_flambda(p0, p1, lam, h, config, rhs_tag=rhs_tag))
        for lam in lambdas
    ]
    reports: List[SolveReport] = gather_limited(jobs, config.threads)
    threshold = (1.0 - margin) * lambda_disc
    rows = [
        SweepRow(
            lam=report.lam,
            converged=report.converged,
            residual=report.residual,
            iterations=report.iterations,
            expected_solvable=report.lam <= threshold,
        )
        for report in reports
    ]
    table = SweepTable(
        rows=rows,
        metadata={
            "p": p0 + p1,
            "p0": p0,
            "p1": p1,
            "mesh": mesh_payload(mesh),
            "rhs_tag": rhs_tag,
            "rhs_norm": lp_norm(h, 2.0),
            "lambda_disc": lambda_disc,
            "margin": margin,
        },
        reports=reports,
    )
    if not table.theorem_consistent:
        logger.warning("Свип p0=%g, p1=%g: не сошлись строки ниже порога", p0, p1)
    return table


# --- переформулировка через неподвижную точку ---


def _inverse_laplacian(mesh: Mesh):
    return splu(mesh.laplacian_matrix.tocsc())


def fixed_point_map(lam: float, G: OperatorSpec, v: GridFunction) -> GridFunction:
    """λ·F⁻¹(G(v)) при F = -Δ (дискретный)."""
    factor = _inverse_laplacian(v.mesh)
    return v.with_values(lam * factor.solve(apply(G, v).flat))


@dataclass
class FixedRay:
    lam: float
    direction: GridFunction
    iterations: int
    converged: bool


def fixed_ray(
    G: OperatorSpec,
    mesh: Mesh,
    seed: int = 0,
    max_iter: int = 500,
    tol: float = 1e-10,
) -> FixedRay:
    """Нормированная итерация v ← F⁻¹G(v); λ луча, на котором v = λF⁻¹G(v)."""
    factor = _inverse_laplacian(mesh)
    v = random_function(mesh, np.random.default_rng(seed))
    v = v * (1.0 / lp_norm(v, 2.0))
    lam = math.inf
    for iteration in range(1, max_iter + 1):
        w = v.with_values(factor.solve(apply(G, v).flat))
        new_lam = inner(v, v) / inner(w, v)
        v = w * (1.0 / lp_norm(w, 2.0))
        if abs(new_lam - lam) <= tol * abs(new_lam):
            return FixedRay(new_lam, v, iteration, True)
        lam = new_lam
    return FixedRay(lam, v, max_iter, False)


@dataclass
class FixedPointTrace:
    norms: List[float]
    ratio: float
    converged: bool
    last: GridFunction = field(repr=False)


def iterate_fixed_point(
    lam: float,
    G: OperatorSpec,
    v0: GridFunction,
    max_iter: int = 200,
    tol: float = 1e-8,
) -> FixedPointTrace:
    """Итерации v ← λF⁻¹G(v) с наблюдаемым коэффициентом сжатия."""
    factor = _inverse_laplacian(v0.mesh)
    v = v0
    norms = [lp_norm(v, 2.0)]
    converged = False
    for _ in range(max_iter):
        w = v.with_values(lam * factor.solve(apply(G, v).flat))
        step = lp_norm(w - v, 2.0)
        v = w
        norms.append(lp_norm(v, 2.0))
        if step <= tol:
            converged = True
            break

    tail = [b / a for a, b in zip(norms[:-1], norms[1:]) if a > 0][-5:]
    ratio = float(np.exp(np.mean(np.log(tail)))) if tail and all(t > 0 for t in tail) else 0.0
    return FixedPointTrace(norms=norms, ratio=ratio, converged=converged, last=v)


# --- допустимость правой части ---


@dataclass
class AdmissibilityReport:
    admissible: bool
    margin: float
    samples: int
    radius: float


def check_admissible(
    p0: float,
    p1: float,
    lam: float,
    h: GridFunction,
    samples: int = DEFAULT_SAMPLES,
    radius: float = 1.0,
    seed: int = 0,
) -> AdmissibilityReport:
    """Необходимое условие ⟨h, x⟩ ≤ ⟨f_λ(x), x⟩ на случайных x со сферы ‖∇x‖_p = radius.

    Пробы берутся парами x, -x. True не гарантирует разрешимость.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    if radius <= 0:
        raise ValueError("radius must be positive")
    F, G = _operators(p0, p1)
    p = p0 + p1
    rng = np.random.default_rng(seed)

    margin = math.inf
    for _ in range(samples):
        x = random_function(h.mesh, rng)
        x = x * (radius / lp_norm(gradient(x), p))
        coercive = pairing(F, x, x) - lam * pairing(G, x, x)
        margin = min(margin, coercive - abs(inner(h, x)))
    return AdmissibilityReport(admissible=margin >= 0, margin=margin, samples=samples, radius=radius)


__all__ = [
    "SolveConfig",
    "RHS_TAGS",
    "flambda",
    "make_rhs",
    "solve_flambda",
    "lambda_sweep",
    "fixed_point_map",
    "FixedRay",
    "fixed_ray",
    "FixedPointTrace",
    "iterate_fixed_point",
    "AdmissibilityReport",
    "check_admissible",
]
