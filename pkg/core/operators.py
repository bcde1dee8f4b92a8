"""Каталог нелинейных операторов.

Для каждого вида оператора здесь собраны: сильная форма (apply), слабая форма
(pairing), энергия E(u) = pairing(u, u), её евклидов градиент по узловым
значениям, якобиан apply (для тех видов, что входят в f_λ) и симметричный
предобуславливатель для спуска.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np
from scipy import sparse

from core.errors import OperatorError
from core.grid import GridFunction, Mesh, check_same_mesh, lp_norm
from core.utils import loglog_fit

logger = logging.getLogger(__name__)

MIN_EXPONENT = 2.0
BILAPLACIAN_MIN_NODES = 5
GRADIENT_FLOOR = 1e-14
PRECONDITIONER_FLOOR = 1e-4
FALLBACK_RTOL = 1e-9


class OperatorKind(str, Enum):
    P_LAPLACIAN = "plaplacian"
    GRAD_WEIGHTED_POWER = "gradpower"
    DENSITY_DIFFUSION = "density"
    POWER_IDENTITY = "power"
    POWERED_LINEAR = "poweredlinear"
    POWERED_BILAPLACIAN = "bilaplacian"


_KIND_ALIASES = {
    "plaplacian": OperatorKind.P_LAPLACIAN,
    "p-laplacian": OperatorKind.P_LAPLACIAN,
    "gradpower": OperatorKind.GRAD_WEIGHTED_POWER,
    "gradweightedpower": OperatorKind.GRAD_WEIGHTED_POWER,
    "density": OperatorKind.DENSITY_DIFFUSION,
    "densitydiffusion": OperatorKind.DENSITY_DIFFUSION,
    "power": OperatorKind.POWER_IDENTITY,
    "poweridentity": OperatorKind.POWER_IDENTITY,
    "poweredlinear": OperatorKind.POWERED_LINEAR,
    "bilaplacian": OperatorKind.POWERED_BILAPLACIAN,
    "poweredbilaplacian": OperatorKind.POWERED_BILAPLACIAN,
}

LINEAR_TAGS = ("laplacian",)


def _fmt(value: float) -> str:
    return format(value, "g")


@dataclass(frozen=True)
class OperatorSpec:
    """Описание оператора: вид + показатели.

    Для PowerIdentity показатель q хранится в поле ``p``. Для GradWeightedPower
    ``p`` всегда равно p0 + p1. Флаг ``dominates`` — только метаданные
    (отношение F ≻ G не проверяется).
    """

    kind: OperatorKind
    p: float
    p0: float | None = None
    p1: float | None = None
    linear: str = "laplacian"
    dominates: bool = False

    def __post_init__(self) -> None:
        kind = OperatorKind(self.kind)
        object.__setattr__(self, "kind", kind)

        if kind is OperatorKind.GRAD_WEIGHTED_POWER:
            if self.p0 is None or self.p1 is None:
                raise OperatorError("gradpower needs both p0 and p1")
            p0, p1 = float(self.p0), float(self.p1)
            if p0 < MIN_EXPONENT:
                raise OperatorError(f"p0 must be >= {MIN_EXPONENT:g} (got {p0:g})")
            if p1 < 0:
                raise OperatorError(f"p1 must be >= 0 (got {p1:g})")
            total = p0 + p1
            if self.p is not None and not math.isnan(self.p) and float(self.p) != total:
                raise OperatorError(f"gradpower needs p0 + p1 = p (got {p0:g} + {p1:g} != {self.p:g})")
            object.__setattr__(self, "p0", p0)
            object.__setattr__(self, "p1", p1)
            object.__setattr__(self, "p", total)
        else:
            if self.p0 is not None or self.p1 is not None:
                raise OperatorError(f"{kind.value} takes no p0/p1 exponents")

        p = float(self.p)
        name = "q" if kind is OperatorKind.POWER_IDENTITY else "p"
        if not math.isfinite(p) or p < MIN_EXPONENT:
            raise OperatorError(f"{name} must be >= {MIN_EXPONENT:g} (got {p:g})")
        object.__setattr__(self, "p", p)

        if self.linear not in LINEAR_TAGS:
            raise OperatorError(f"unknown linear operator tag {self.linear!r}")

    # --- конструкторы ---

    @classmethod
    def p_laplacian(cls, p: float, **kwargs) -> "OperatorSpec":
        return cls(OperatorKind.P_LAPLACIAN, p, **kwargs)

    @classmethod
    def grad_weighted_power(cls, p0: float, p1: float, **kwargs) -> "OperatorSpec":
        return cls(OperatorKind.GRAD_WEIGHTED_POWER, float("nan"), p0=p0, p1=p1, **kwargs)

    @classmethod
    def density_diffusion(cls, p: float, **kwargs) -> "OperatorSpec":
        return cls(OperatorKind.DENSITY_DIFFUSION, p, **kwargs)

    @classmethod
    def power_identity(cls, q: float, **kwargs) -> "OperatorSpec":
        return cls(OperatorKind.POWER_IDENTITY, q, **kwargs)

    @classmethod
    def powered_linear(cls, p: float, linear: str = "laplacian", **kwargs) -> "OperatorSpec":
        return cls(OperatorKind.POWERED_LINEAR, p, linear=linear, **kwargs)

    @classmethod
    def powered_bilaplacian(cls, p: float, **kwargs) -> "OperatorSpec":
        return cls(OperatorKind.POWERED_BILAPLACIAN, p, **kwargs)

    @classmethod
    def parse(cls, text: str) -> "OperatorSpec":
        """Разбор мини-синтаксиса ``kind:key=value,...``, например ``gradpower:p0=2,p1=1``."""
        head, _, tail = text.strip().partition(":")
        kind = _KIND_ALIASES.get(head.strip().lower())
        if kind is None:
            raise OperatorError(f"unknown operator kind {head.strip()!r}")

        params: dict[str, str] = {}
        for chunk in filter(None, (part.strip() for part in tail.split(","))):
            key, sep, value = chunk.partition("=")
            if not sep:
                raise OperatorError(f"operator parameter {chunk!r} is not key=value")
            params[key.strip().lower()] = value.strip()

        def number(key: str) -> float:
            try:
                return float(params.pop(key))
            except ValueError:
                raise OperatorError(f"operator parameter {key} must be a number")

        dominates = params.pop("dominates", "false").lower() in ("1", "true", "yes")
        if kind is OperatorKind.GRAD_WEIGHTED_POWER:
            if "p0" not in params or "p1" not in params:
                raise OperatorError("gradpower needs p0 and p1")
            p0, p1 = number("p0"), number("p1")
            p = number("p") if "p" in params else float("nan")
            spec = cls(kind, p, p0=p0, p1=p1, dominates=dominates)
        else:
            key = "q" if kind is OperatorKind.POWER_IDENTITY and "q" in params else "p"
            if key not in params:
                raise OperatorError(f"{kind.value} needs {key}")
            linear = params.pop("l", "laplacian")
            spec = cls(kind, number(key), linear=linear, dominates=dominates)

        if params:
            raise OperatorError(f"unknown operator parameters: {', '.join(sorted(params))}")
        return spec

    @property
    def label(self) -> str:
        if self.kind is OperatorKind.GRAD_WEIGHTED_POWER:
            body = f"p0={_fmt(self.p0)},p1={_fmt(self.p1)}"
        elif self.kind is OperatorKind.POWER_IDENTITY:
            body = f"q={_fmt(self.p)}"
        else:
            body = f"p={_fmt(self.p)}"
        return f"{self.kind.value}:{body}"

    @property
    def is_divergence_form(self) -> bool:
        return self.kind in (OperatorKind.P_LAPLACIAN, OperatorKind.DENSITY_DIFFUSION)

    @property
    def is_potential(self) -> bool:
        """apply(u) совпадает с energy_gradient(u) / (p·node_weight)."""
        if self.kind is OperatorKind.GRAD_WEIGHTED_POWER:
            return self.p1 == 0
        return self.kind in (OperatorKind.P_LAPLACIAN, OperatorKind.POWER_IDENTITY)

    def to_payload(self) -> dict:
        return {
            "kind": self.kind.value,
            "p": self.p,
            "p0": self.p0,
            "p1": self.p1,
            "label": self.label,
            "dominates": self.dominates,
        }


@dataclass(frozen=True)
class HomogeneityDegree:
    operator_degree: float
    pairing_degree: float

    def __post_init__(self) -> None:
        if self.pairing_degree != self.operator_degree + 1:
            raise ValueError("pairing degree must equal operator degree + 1")

    @classmethod
    def of(cls, operator_degree: float) -> "HomogeneityDegree":
        return cls(operator_degree, operator_degree + 1)


def homogeneity_degree(spec: OperatorSpec) -> HomogeneityDegree:
    # у всех видов каталога степень p - 1 (для gradpower p = p0 + p1, для power p = q)
    return HomogeneityDegree.of(spec.p - 1)


# --- общие куски ---


def _check_resolution(spec: OperatorSpec, mesh: Mesh) -> None:
    if spec.kind is OperatorKind.POWERED_BILAPLACIAN and min(mesh.n) < BILAPLACIAN_MIN_NODES:
        raise OperatorError(
            f"bilaplacian needs at least {BILAPLACIAN_MIN_NODES} interior nodes per axis (got {mesh.n})"
        )


def _odd_power(values: np.ndarray, exponent: float) -> np.ndarray:
    """|x|^a·sign(x)."""
    return np.abs(values) ** exponent * np.sign(values)


def _cell_gradient(mesh: Mesh, flat: np.ndarray) -> np.ndarray:
    return np.column_stack([d @ flat for d in mesh.gradient_matrices])


def _flux(grad: np.ndarray, p: float) -> np.ndarray:
    magnitude = np.sqrt(np.sum(grad**2, axis=1))
    return grad * (magnitude ** (p - 2.0))[:, None]


def _adjoint(mesh: Mesh, cell_values: np.ndarray) -> np.ndarray:
    """Σ_k D_kᵀ q_k без весов."""
    total = np.zeros(mesh.size)
    for k, d in enumerate(mesh.gradient_matrices):
        total += d.T @ cell_values[:, k]
    return total


def _floored(weights: np.ndarray) -> np.ndarray:
    scale = float(np.max(weights)) if weights.size else 0.0
    return np.maximum(weights, PRECONDITIONER_FLOOR * max(scale, GRADIENT_FLOOR))


def _nodal_gradient_power(mesh: Mesh, grad: np.ndarray, p: float) -> np.ndarray:
    magnitude = np.sqrt(np.sum(grad**2, axis=1))
    return mesh.vertex_average_matrix @ (magnitude**p)


def _density_coefficient(mesh: Mesh, flat: np.ndarray, p: float) -> np.ndarray:
    """Коэффициент (4/p²)·(Δv/Δu)² на ячейках, v = |u|^((p-2)/2)·u."""
    v = _odd_power(flat, p / 2.0)
    columns = []
    for d, mid, step in zip(mesh.gradient_matrices, mesh.midpoint_matrices, mesh.h):
        du = d @ flat
        dv = d @ v
        middle = mid @ flat
        # |b - a| <= rtol·(|a| + |b|): разность вырождена, берём производную v в середине
        degenerate = np.abs(du) * step <= FALLBACK_RTOL * 2.0 * np.abs(middle)
        degenerate |= du == 0
        safe = np.where(degenerate, 1.0, du)
        ratio = np.where(
            degenerate,
            (p / 2.0) * np.abs(middle) ** ((p - 2.0) / 2.0),
            dv / safe,
        )
        columns.append((4.0 / p**2) * ratio**2)
    return np.column_stack(columns)


def _powered_linear_parts(spec: OperatorSpec, mesh: Mesh, flat: np.ndarray):
    lap = mesh.laplacian_matrix
    lu = lap @ flat
    return lap, lu, np.abs(lu) ** (spec.p - 2.0)


# --- apply / pairing ---


def apply(spec: OperatorSpec, u: GridFunction) -> GridFunction:
    """Сильная форма оператора в узлах."""
    mesh = u.mesh
    _check_resolution(spec, mesh)
    flat = u.flat
    kind = spec.kind

    if kind is OperatorKind.P_LAPLACIAN:
        flux = _flux(_cell_gradient(mesh, flat), spec.p)
        values = (mesh.cell_weight / mesh.node_weight) * _adjoint(mesh, flux)
    elif kind is OperatorKind.POWER_IDENTITY:
        values = _odd_power(flat, spec.p - 1.0)
    elif kind is OperatorKind.GRAD_WEIGHTED_POWER:
        m = _nodal_gradient_power(mesh, _cell_gradient(mesh, flat), spec.p)
        values = _odd_power(flat, spec.p0 - 1.0) * m ** (spec.p1 / spec.p)
    elif kind is OperatorKind.DENSITY_DIFFUSION:
        coefficient = _density_coefficient(mesh, flat, spec.p)
        flux = coefficient * _cell_gradient(mesh, flat)
        values = (mesh.cell_weight / mesh.node_weight) * _adjoint(mesh, flux)
    else:
        # PoweredLinear и PoweredBilaplacian: одна и та же сильная форма |Lu|^{p-2}Lu
        _, lu, weight = _powered_linear_parts(spec, mesh, flat)
        values = weight * lu
    return GridFunction(mesh, values)


def pairing(spec: OperatorSpec, u: GridFunction, v: GridFunction) -> float:
    """Слабая форма ⟨Op(u), v⟩.

    Для дивергентных видов считается на ячейках, без составного шаблона.
    PoweredBilaplacian спаривается с -Δv, так что pairing(u, u) = ‖Δu‖_p^p.
    """
    mesh = check_same_mesh(u, v)
    _check_resolution(spec, mesh)
    kind = spec.kind

    if kind is OperatorKind.P_LAPLACIAN:
        grad_u = _cell_gradient(mesh, u.flat)
        grad_v = _cell_gradient(mesh, v.flat)
        return float(mesh.cell_weight * np.sum(_flux(grad_u, spec.p) * grad_v))
    if kind is OperatorKind.DENSITY_DIFFUSION:
        grad_u = _cell_gradient(mesh, u.flat)
        grad_v = _cell_gradient(mesh, v.flat)
        coefficient = _density_coefficient(mesh, u.flat, spec.p)
        return float(mesh.cell_weight * np.sum(coefficient * grad_u * grad_v))
    if kind is OperatorKind.POWERED_BILAPLACIAN:
        test = mesh.laplacian_matrix @ v.flat
        return float(mesh.node_weight * np.dot(apply(spec, u).flat, test))
    return float(mesh.node_weight * np.dot(apply(spec, u).flat, v.flat))


# --- энергии и их градиенты (для спуска по отношению Рэлея) ---


def energy(spec: OperatorSpec, u: GridFunction) -> float:
    """E(u) = pairing(u, u), посчитанная в замкнутой форме."""
    mesh = u.mesh
    _check_resolution(spec, mesh)
    flat = u.flat
    kind = spec.kind
    wn = mesh.node_weight

    if kind is OperatorKind.P_LAPLACIAN:
        magnitude = np.sqrt(np.sum(_cell_gradient(mesh, flat) ** 2, axis=1))
        return float(mesh.cell_weight * np.sum(magnitude**spec.p))
    if kind is OperatorKind.POWER_IDENTITY:
        return float(wn * np.sum(np.abs(flat) ** spec.p))
    if kind is OperatorKind.GRAD_WEIGHTED_POWER:
        m = _nodal_gradient_power(mesh, _cell_gradient(mesh, flat), spec.p)
        return float(wn * np.sum(np.abs(flat) ** spec.p0 * m ** (spec.p1 / spec.p)))
    if kind is OperatorKind.DENSITY_DIFFUSION:
        v = _odd_power(flat, spec.p / 2.0)
        return float((4.0 / spec.p**2) * v @ (mesh.stiffness_matrix @ v))
    _, lu, weight = _powered_linear_parts(spec, mesh, flat)
    if kind is OperatorKind.POWERED_BILAPLACIAN:
        return float(wn * np.sum(np.abs(lu) ** spec.p))
    return float(wn * np.dot(weight * lu, flat))


def energy_gradient(spec: OperatorSpec, u: GridFunction) -> np.ndarray:
    """Евклидов градиент E по узловым значениям (плоский массив)."""
    mesh = u.mesh
    _check_resolution(spec, mesh)
    flat = u.flat
    kind = spec.kind
    p = spec.p
    wn = mesh.node_weight

    if kind is OperatorKind.P_LAPLACIAN:
        flux = _flux(_cell_gradient(mesh, flat), p)
        return p * mesh.cell_weight * _adjoint(mesh, flux)
    if kind is OperatorKind.POWER_IDENTITY:
        return p * wn * _odd_power(flat, p - 1.0)
    if kind is OperatorKind.GRAD_WEIGHTED_POWER:
        return _grad_weighted_energy_gradient(spec, mesh, flat)
    if kind is OperatorKind.DENSITY_DIFFUSION:
        v = _odd_power(flat, p / 2.0)
        return (4.0 / p) * (mesh.stiffness_matrix @ v) * np.abs(flat) ** ((p - 2.0) / 2.0)

    lap, lu, weight = _powered_linear_parts(spec, mesh, flat)
    if kind is OperatorKind.POWERED_BILAPLACIAN:
        return p * wn * (lap.T @ (weight * lu))
    return wn * ((p - 1.0) * (lap.T @ (weight * flat)) + weight * lu)


def _grad_weighted_energy_gradient(spec: OperatorSpec, mesh: Mesh, flat: np.ndarray) -> np.ndarray:
    p, p0, p1 = spec.p, spec.p0, spec.p1
    wn = mesh.node_weight
    grad = _cell_gradient(mesh, flat)
    m = _nodal_gradient_power(mesh, grad, p)
    result = p0 * wn * _odd_power(flat, p0 - 1.0) * m ** (p1 / p)
    if p1 == 0:
        return result

    s = wn * np.abs(flat) ** p0 * (p1 / p) * (m + GRADIENT_FLOOR) ** (p1 / p - 1.0)
    cell_share = mesh.vertex_average_matrix.T @ s
    flux = _flux(grad, p) * cell_share[:, None]
    return result + p * _adjoint(mesh, flux)


# --- якобианы и предобуславливатели ---


def _cell_tensor(grad: np.ndarray, p: float) -> list[list[np.ndarray]]:
    """Блоки ∂(|g|^{p-2}g)/∂g на ячейках: B_kl = |g|^{p-2}(δ_kl + (p-2)·g_k g_l/|g|²)."""
    dim = grad.shape[1]
    mag2 = np.sum(grad**2, axis=1)
    base = mag2 ** ((p - 2.0) / 2.0)
    safe = np.where(mag2 > 0, mag2, 1.0)
    blocks = []
    for k in range(dim):
        row = []
        for l in range(dim):
            outer = np.where(mag2 > 0, grad[:, k] * grad[:, l] / safe, 0.0)
            row.append(base * ((1.0 if k == l else 0.0) + (p - 2.0) * outer))
        blocks.append(row)
    return blocks


def _assemble(mesh: Mesh, blocks: list[list[np.ndarray | None]], scale: float) -> sparse.csr_matrix:
    ds = mesh.gradient_matrices
    total = sparse.csr_matrix((mesh.size, mesh.size))
    for k, row in enumerate(blocks):
        for l, diagonal in enumerate(row):
            if diagonal is None:
                continue
            total = total + ds[k].T @ sparse.diags(diagonal) @ ds[l]
    return (total * scale).tocsr()


def jacobian(spec: OperatorSpec, u: GridFunction) -> sparse.csr_matrix:
    """Матрица Якоби apply(spec, ·) в точке u."""
    mesh = u.mesh
    flat = u.flat
    kind = spec.kind

    if kind is OperatorKind.P_LAPLACIAN:
        blocks = _cell_tensor(_cell_gradient(mesh, flat), spec.p)
        return _assemble(mesh, blocks, mesh.cell_weight / mesh.node_weight)
    if kind is OperatorKind.POWER_IDENTITY:
        return sparse.diags((spec.p - 1.0) * np.abs(flat) ** (spec.p - 2.0)).tocsr()
    if kind is OperatorKind.GRAD_WEIGHTED_POWER:
        return _grad_weighted_jacobian(spec, mesh, flat)
    raise OperatorError(f"jacobian is not available for {kind.value}")


def _grad_weighted_jacobian(spec: OperatorSpec, mesh: Mesh, flat: np.ndarray) -> sparse.csr_matrix:
    p, p0, p1 = spec.p, spec.p0, spec.p1
    grad = _cell_gradient(mesh, flat)
    m = _nodal_gradient_power(mesh, grad, p)
    local = sparse.diags((p0 - 1.0) * np.abs(flat) ** (p0 - 2.0) * m ** (p1 / p))
    if p1 == 0:
        return local.tocsr()

    outer = _odd_power(flat, p0 - 1.0) * (p1 / p) * (m + GRADIENT_FLOOR) ** (p1 / p - 1.0)
    flux = _flux(grad, p)
    # ∂m/∂u = A · p Σ_k diag(|g|^{p-2} g_k) D_k
    dm = sparse.csr_matrix((mesh.size, mesh.size))
    for k, d in enumerate(mesh.gradient_matrices):
        dm = dm + mesh.vertex_average_matrix @ sparse.diags(flux[:, k]) @ d
    return (local + sparse.diags(outer) @ (dm * p)).tocsr()


def hessian_preconditioner(spec: OperatorSpec, u: GridFunction) -> sparse.csc_matrix:
    """Симметричная положительно определённая замена второй вариации энергии.

    Веса ограничены снизу долей PRECONDITIONER_FLOOR от максимума, иначе
    в точках с нулевым градиентом матрица вырождается.
    """
    mesh = u.mesh
    _check_resolution(spec, mesh)
    flat = u.flat
    kind = spec.kind
    p = spec.p
    wn = mesh.node_weight

    if kind is OperatorKind.P_LAPLACIAN:
        magnitude = np.sqrt(np.sum(_cell_gradient(mesh, flat) ** 2, axis=1))
        weights = _floored(magnitude ** (p - 2.0))
        blocks = [[weights if k == l else None for l in range(mesh.dim)] for k in range(mesh.dim)]
        matrix = _assemble(mesh, blocks, p * (p - 1.0) * mesh.cell_weight)
    elif kind is OperatorKind.DENSITY_DIFFUSION:
        slope = sparse.diags(_floored(np.abs(flat) ** ((p - 2.0) / 2.0)))
        matrix = 2.0 * (slope @ mesh.stiffness_matrix @ slope)
    elif kind in (OperatorKind.POWERED_LINEAR, OperatorKind.POWERED_BILAPLACIAN):
        lap, _, weight = _powered_linear_parts(spec, mesh, flat)
        matrix = p * (p - 1.0) * wn * (lap.T @ sparse.diags(_floored(weight)) @ lap)
    else:
        if kind is OperatorKind.GRAD_WEIGHTED_POWER:
            m = _nodal_gradient_power(mesh, _cell_gradient(mesh, flat), p)
            weights = np.abs(flat) ** (spec.p0 - 2.0) * m ** (spec.p1 / p)
        else:
            weights = np.abs(flat) ** (p - 2.0)
        matrix = sparse.diags(p * (p - 1.0) * wn * _floored(weights))
    return sparse.csc_matrix(matrix)


def measure_homogeneity(spec: OperatorSpec, u: GridFunction, scales: Sequence[float]) -> float:
    """Наклон log‖apply(τu)‖₂ против log τ."""
    if u.is_zero():
        raise OperatorError("homogeneity needs a nonzero function")
    scales = [float(tau) for tau in scales]
    if any(tau <= 0 for tau in scales):
        raise OperatorError("homogeneity scales must be positive")
    norms = [lp_norm(apply(spec, tau * u), 2.0) for tau in scales]
    fit = loglog_fit(scales, norms)
    logger.debug("%s: наклон %.12g, невязка %.3g", spec.label, fit.slope, fit.residual)
    return fit.slope


__all__ = [
    "OperatorKind",
    "OperatorSpec",
    "HomogeneityDegree",
    "homogeneity_degree",
    "apply",
    "pairing",
    "energy",
    "energy_gradient",
    "jacobian",
    "hessian_preconditioner",
    "measure_homogeneity",
]
