"""Обобщённое отношение Рэлея Q(u) = ⟨F(u),u⟩ / ⟨G(u),u⟩ и его минимизация."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, List, Optional

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import MatrixRankWarning, splu, spsolve

from core.errors import ConfigError, DegenerateDenominatorError, OperatorError
from core.grid import GridFunction, Mesh, lp_norm, random_function, sine_mode
from core.models import EigenResult
from core.operators import (
    OperatorKind,
    OperatorSpec,
    apply,
    energy,
    energy_gradient,
    hessian_preconditioner,
    homogeneity_degree,
    jacobian,
    pairing,
)
from core.utils import gather_limited

logger = logging.getLogger(__name__)

DEFAULT_MAX_ITER = 5000
DEFAULT_REL_TOL = 1e-10
DEFAULT_RESIDUAL_TOL = 1e-7
DEFAULT_RESTARTS = 3
INIT_NOISE = 0.01
ARMIJO_FACTOR = 0.5
ARMIJO_C = 1e-4
MAX_BACKTRACKS = 60
MAX_STEP = 4.0
STATIONARITY_TOL = 1e-9
RESEED_ATTEMPTS = 5


class InitMode(str, Enum):
    LAPLACIAN_EIGENFUNCTION = "laplacian_eigenfunction"
    RANDOM = "random"
    SUPPLIED = "supplied"


@dataclass(frozen=True)
class MinimizeConfig:
    max_iter: int = DEFAULT_MAX_ITER
    rel_tol: float = DEFAULT_REL_TOL
    residual_tol: float = DEFAULT_RESIDUAL_TOL
    seed: int = 0
    init: InitMode = InitMode.LAPLACIAN_EIGENFUNCTION
    restarts: int = DEFAULT_RESTARTS
    initial: Optional[GridFunction] = field(default=None, repr=False, compare=False)
    threads: Optional[int] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "init", InitMode(self.init))
        if self.max_iter < 1:
            raise ConfigError(f"max_iter must be >= 1 (got {self.max_iter})")
        if self.rel_tol <= 0 or self.residual_tol <= 0:
            raise ConfigError("tolerances must be positive")
        if self.restarts < 1:
            raise ConfigError(f"restarts must be >= 1 (got {self.restarts})")
        if self.init is InitMode.SUPPLIED and self.initial is None:
            raise ConfigError("init=supplied needs an initial grid function")


@dataclass(frozen=True)
class RatioFunctional:
    """(E_N(u) / E_D(u))^power, где E — энергии операторов каталога.

    Ограничение — сфера ‖u‖_s = 1, s — степень однородности знаменателя
    (если не задана явно).
    """

    numerator: OperatorSpec
    denominator: OperatorSpec
    power: float = 1.0
    norm_exponent: Optional[float] = None

    @property
    def sphere_exponent(self) -> float:
        if self.norm_exponent is not None:
            return float(self.norm_exponent)
        return homogeneity_degree(self.denominator).pairing_degree

    @property
    def scale_exponent(self) -> float:
        """Показатель s в Q(τu) = τ^s·Q(u)."""
        num = homogeneity_degree(self.numerator).pairing_degree
        den = homogeneity_degree(self.denominator).pairing_degree
        return self.power * (num - den)

    def normalize(self, u: GridFunction) -> GridFunction:
        norm = lp_norm(u, self.sphere_exponent)
        if norm == 0 or not math.isfinite(norm):
            raise DegenerateDenominatorError("cannot normalize a zero function")
        return u * (1.0 / norm)

    def value(self, u: GridFunction) -> float:
        num = energy(self.numerator, u)
        den = energy(self.denominator, u)
        if den <= 0:
            raise DegenerateDenominatorError(f"{self.denominator.label} annihilates the function")
        return (num / den) ** self.power

    def gradient(self, u: GridFunction) -> np.ndarray:
        num = energy(self.numerator, u)
        den = energy(self.denominator, u)
        if den <= 0:
            raise DegenerateDenominatorError(f"{self.denominator.label} annihilates the function")
        ratio = num / den
        raw = (energy_gradient(self.numerator, u) - ratio * energy_gradient(self.denominator, u)) / den
        if self.power == 1.0:
            return raw
        return self.power * ratio ** (self.power - 1.0) * raw

    def sphere_normal(self, u: GridFunction) -> np.ndarray:
        s = self.sphere_exponent
        flat = u.flat
        return s * u.mesh.node_weight * np.abs(flat) ** (s - 2.0) * flat

    def direction(self, u: GridFunction) -> tuple[np.ndarray, float, float]:
        """Касательное к сфере направление спуска в метрике предобуславливателя числителя.

        Возвращает (направление, наклон ∇Q·d, stationarity = -наклон / |Q|).
        """
        num = energy(self.numerator, u)
        den = energy(self.denominator, u)
        ratio = num / den
        value = ratio**self.power
        grad = self.gradient(u)
        normal = self.sphere_normal(u)

        # при p = 2 и шаге 1 это в точности обратная итерация
        scale = den / (self.power * abs(ratio) ** (self.power - 1.0)) if ratio else 1.0
        try:
            factor = splu(hessian_preconditioner(self.numerator, u))
            solve = lambda rhs: scale * factor.solve(rhs)  # noqa: E731
        except RuntimeError:
            logger.warning("Предобуславливатель вырожден, шаг по обычному градиенту")
            solve = lambda rhs: rhs  # noqa: E731

        pg = solve(grad)
        pa = solve(normal)
        beta = float(normal @ pg) / float(normal @ pa)
        step = -(pg - beta * pa)
        slope = float(grad @ step)
        stationarity = -slope / abs(value) if value else math.inf
        return step, slope, stationarity


@dataclass(frozen=True)
class QuotientProblem:
    F: OperatorSpec
    G: OperatorSpec
    mesh: Mesh
    normalization_norm: Optional[float] = None

    def __post_init__(self) -> None:
        probe = sine_mode(self.mesh)
        # заодно проверяет, что оба оператора определены на этой сетке
        pairing(self.F, probe, probe)
        if not pairing(self.G, probe, probe) > 0:
            raise DegenerateDenominatorError(f"{self.G.label} is not positive on the probe function")
        if self.normalization_norm is not None and self.normalization_norm < 1:
            raise ConfigError("normalization_norm must be >= 1")

    @property
    def functional(self) -> RatioFunctional:
        return RatioFunctional(self.F, self.G, norm_exponent=self.normalization_norm)

    @property
    def ray_dependent(self) -> bool:
        return homogeneity_degree(self.F).pairing_degree != homogeneity_degree(self.G).pairing_degree

    @property
    def potential(self) -> bool:
        """Минимизатор на сфере обязан удовлетворять F(u) = λG(u).

        Для разных степеней это так, только если нормаль сферы пропорциональна G(u).
        """
        if not (self.F.is_potential and self.G.is_potential):
            return False
        if not self.ray_dependent:
            return True
        return self.G.kind in (OperatorKind.POWER_IDENTITY, OperatorKind.GRAD_WEIGHTED_POWER) and (
            self.normalization_norm is None or self.normalization_norm == self.G.p
        )

    @property
    def label(self) -> str:
        return f"{self.F.label} / {self.G.label}"


def evaluate_quotient(problem: QuotientProblem, u: GridFunction) -> float:
    den = pairing(problem.G, u, u)
    if den == 0:
        raise DegenerateDenominatorError(f"{problem.G.label} annihilates the function")
    return pairing(problem.F, u, u) / den


def quotient_gradient(problem: QuotientProblem, u: GridFunction) -> np.ndarray:
    """Первая вариация Q по узловым значениям."""
    return problem.functional.gradient(u)


def eigen_residual(problem: QuotientProblem, u: GridFunction, lam: float) -> float:
    """‖F(u) - λG(u)‖₂ / ‖F(u)‖₂."""
    f_u = apply(problem.F, u)
    g_u = apply(problem.G, u)
    scale = lp_norm(f_u, 2.0)
    if scale == 0:
        return math.inf
    return lp_norm(f_u - lam * g_u, 2.0) / scale


def substitution_transform(u: GridFunction, p: float) -> GridFunction:
    """v = |u|^((p-2)/2)·u."""
    if p < 2:
        raise OperatorError(f"substitution needs p >= 2 (got {p:g})")
    flat = u.flat
    return u.with_values(np.abs(flat) ** ((p - 2.0) / 2.0) * flat)


# --- спуск ---


def _initial_function(mesh: Mesh, config: MinimizeConfig, restart: int, attempt: int) -> GridFunction:
    rng = np.random.default_rng(config.seed + restart + 1000 * attempt)
    if attempt > 0 or config.init is InitMode.RANDOM:
        return random_function(mesh, rng)

    base = config.initial if config.init is InitMode.SUPPLIED else sine_mode(mesh)
    if restart == 0:
        return base
    noise = random_function(mesh, rng).values
    scale = float(np.max(np.abs(base.values))) / max(float(np.max(np.abs(noise))), 1e-300)
    return base.with_values(base.values + INIT_NOISE * scale * noise)


def _line_search(
    functional: RatioFunctional,
    u: GridFunction,
    direction: np.ndarray,
    value: float,
    slope: float,
    step: float,
) -> tuple[float, GridFunction, float, bool] | None:
    alpha = step
    for attempt in range(MAX_BACKTRACKS):
        try:
            candidate = functional.normalize(u.with_values(u.flat + alpha * direction))
            candidate_value = functional.value(candidate)
        except DegenerateDenominatorError:
            candidate_value = math.inf
        if math.isfinite(candidate_value) and candidate_value <= value + ARMIJO_C * alpha * slope:
            return alpha, candidate, candidate_value, attempt == 0
        alpha *= ARMIJO_FACTOR
    return None


def _descend(
    functional: RatioFunctional,
    u0: GridFunction,
    config: MinimizeConfig,
    residual_fn: Callable[[GridFunction, float], float] | None,
    restart: int,
) -> EigenResult:
    u = functional.normalize(u0)
    value = functional.value(u)
    history = [value]
    step = 1.0
    small_changes = 0
    iterations = 0
    stationarity = math.inf
    converged = False

    residual = residual_fn(u, value) if residual_fn else math.nan
    if residual_fn and residual <= config.residual_tol:
        converged = True

    # с residual_fn сходимость подтверждает только невязка; плато Q лишь останавливает спуск
    while not converged and iterations < config.max_iter:
        direction, slope, stationarity = functional.direction(u)
        if not slope < 0:
            converged = residual_fn is None
            break

        found = _line_search(functional, u, direction, value, slope, step)
        if found is None:
            converged = residual_fn is None and stationarity <= STATIONARITY_TOL
            logger.debug("restart %s: шаг не найден, stationarity=%.3g", restart, stationarity)
            break

        alpha, u, new_value, first_try = found
        iterations += 1
        change = abs(value - new_value) / abs(value) if value else abs(new_value)
        value = new_value
        history.append(value)
        step = min(2.0 * alpha, MAX_STEP) if first_try else alpha
        logger.debug("restart %s, итерация %s: Q=%.15g, шаг=%.3g", restart, iterations, value, alpha)

        if residual_fn:
            residual = residual_fn(u, value)
            if residual <= config.residual_tol:
                converged = True
                break
        small_changes = small_changes + 1 if change < config.rel_tol else 0
        if small_changes >= 2:
            converged = residual_fn is None
            break

    if residual_fn:
        residual = residual_fn(u, value)
    if not math.isfinite(stationarity):
        stationarity = max(functional.direction(u)[2], 0.0)
    if np.mean(u.values) < 0:
        u = -u
    if not converged and residual_fn is None:
        logger.info("restart %s: не сошлось за %s итераций (Q=%.12g)", restart, iterations, value)

    return EigenResult(
        lam=value,
        minimizer=u,
        residual=residual,
        iterations=iterations,
        history=history,
        converged=converged,
        stationarity=stationarity,
        restart=restart,
    )


def _run_restart(
    functional: RatioFunctional,
    mesh: Mesh,
    config: MinimizeConfig,
    residual_fn: Callable[[GridFunction, float], float] | None,
    restart: int,
) -> EigenResult:
    for attempt in range(RESEED_ATTEMPTS):
        u0 = _initial_function(mesh, config, restart, attempt)
        try:
            functional.value(functional.normalize(u0))
        except DegenerateDenominatorError:
            logger.info("restart %s: вырожденный знаменатель, новая затравка", restart)
            continue
        return _descend(functional, u0, config, residual_fn, restart)
    raise DegenerateDenominatorError(
        f"{functional.denominator.label} annihilates every initial function"
    )


def minimize_ratio(
    functional: RatioFunctional,
    mesh: Mesh,
    config: MinimizeConfig,
    residual_fn: Callable[[GridFunction, float], float] | None = None,
) -> EigenResult:
    """Минимум по нескольким стартам; при равенстве выигрывает меньший номер старта."""
    jobs = [
        (lambda k=k: _run_restart(functional, mesh, config, residual_fn, k))
        for k in range(config.restarts)
    ]
    results: List[EigenResult] = gather_limited(jobs, config.threads)
    best = min(results, key=lambda result: (result.lam, result.restart))
    logger.info(
        "%s / %s: λ=%.12g (restart %s, %s итераций)",
        functional.numerator.label,
        functional.denominator.label,
        best.lam,
        best.restart,
        best.iterations,
    )
    return best


def _polish(problem: QuotientProblem, result: EigenResult, config: MinimizeConfig) -> EigenResult:
    """Ньютон для F(u) - λG(u) = 0 на сфере ‖u‖_s = 1, стартуя с итога спуска.

    Шаги идут в счёт max_iter. Шаг дробится, пока невязка не уменьшится.
    """
    functional = problem.functional
    s = functional.sphere_exponent
    u = result.minimizer
    lam = evaluate_quotient(problem, u)
    residual = eigen_residual(problem, u, lam)
    steps = 0

    while residual > config.residual_tol and result.iterations + steps < config.max_iter:
        f_u, g_u = apply(problem.F, u).flat, apply(problem.G, u).flat
        block = jacobian(problem.F, u) - lam * jacobian(problem.G, u)
        normal = functional.sphere_normal(u)
        system = sparse.bmat(
            [[block, sparse.csr_matrix(-g_u[:, None])], [sparse.csr_matrix(normal[None, :]), None]],
            format="csc",
        )
        rhs = -np.concatenate([f_u - lam * g_u, [lp_norm(u, s) ** s - 1.0]])
        with warnings.catch_warnings():
            warnings.simplefilter("error", MatrixRankWarning)
            try:
                delta = spsolve(system, rhs)
            except (MatrixRankWarning, RuntimeError):
                logger.debug("%s: система Ньютона вырождена", problem.label)
                break
        if not np.all(np.isfinite(delta)):
            break

        alpha = 1.0
        for _ in range(MAX_BACKTRACKS):
            try:
                candidate = functional.normalize(u.with_values(u.flat + alpha * delta[:-1]))
                candidate_lam = evaluate_quotient(problem, candidate)
                candidate_residual = eigen_residual(problem, candidate, candidate_lam)
            except DegenerateDenominatorError:
                candidate_residual = math.inf
            if candidate_residual < residual:
                break
            alpha *= ARMIJO_FACTOR
        else:
            break

        u, lam, residual = candidate, candidate_lam, candidate_residual
        steps += 1
        logger.debug("%s: шаг Ньютона %s, невязка %.3g", problem.label, steps, residual)

    if np.mean(u.values) < 0:
        u = -u
    result.minimizer = u
    result.iterations += steps
    result.converged = residual <= config.residual_tol
    if steps and lam <= result.history[-1]:
        result.history.append(lam)
    if not result.converged:
        logger.info("%s: невязка %.3g выше допуска %.3g", problem.label, residual, config.residual_tol)
    return result


def minimize_quotient(problem: QuotientProblem, config: MinimizeConfig) -> EigenResult:
    """Минимизация Q; для потенциальных F и G успех подтверждается невязкой ≤ residual_tol."""
    potential = problem.potential
    result = minimize_ratio(
        problem.functional,
        problem.mesh,
        config,
        residual_fn=(lambda u, lam: eigen_residual(problem, u, lam)) if potential else None,
    )
    if potential:
        result = _polish(problem, result, config)
    lam = evaluate_quotient(problem, result.minimizer)
    result.lam = lam
    result.residual = eigen_residual(problem, result.minimizer, lam)
    result.ray_dependent = problem.ray_dependent
    result.label = problem.label
    degree = homogeneity_degree(problem.F).pairing_degree
    result.lambda_root = lam ** (1.0 / degree) if lam > 0 else None
    return result


def p0p1_eigen(p0: float, p1: float, mesh: Mesh, config: MinimizeConfig) -> EigenResult:
    """Минимизация ‖∇u‖_p^p / ∫|u|^{p0}|∇u|^{p1}, p = p0 + p1."""
    p = p0 + p1
    problem = QuotientProblem(
        OperatorSpec.p_laplacian(p),
        OperatorSpec.grad_weighted_power(p0, p1),
        mesh,
    )
    return minimize_quotient(problem, config)


def lambda_p0p1(p0: float, p1: float, mesh: Mesh, config: MinimizeConfig) -> float:
    """λ_{p0,p1} в форме корня: (инфимум отношения)^{1/p}."""
    result = p0p1_eigen(p0, p1, mesh, config)
    return result.lam ** (1.0 / (p0 + p1))


__all__ = [
    "DEFAULT_MAX_ITER",
    "DEFAULT_REL_TOL",
    "DEFAULT_RESIDUAL_TOL",
    "DEFAULT_RESTARTS",
    "InitMode",
    "MinimizeConfig",
    "RatioFunctional",
    "QuotientProblem",
    "evaluate_quotient",
    "quotient_gradient",
    "eigen_residual",
    "substitution_transform",
    "minimize_ratio",
    "minimize_quotient",
    "p0p1_eigen",
    "lambda_p0p1",
]
