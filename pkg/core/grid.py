"""Сетки, разностные операторы, квадратуры и нормы.

Храним только внутренние узлы: граничные значения тождественно равны нулю
(условие Дирихле). Ячейки «разнесённой» сетки:

* 1D — n+1 рёбер между соседними узлами (включая рёбра к границе);
* 2D — каждый квадрат сетки разбит на два прямоугольных треугольника,
  в каждом треугольнике градиент задаётся двумя односторонними разностями
  вдоль его катетов.

При таком выборе ``-divergence(gradient(u))`` совпадает с пятиточечным
лапласианом, а пара gradient/divergence сопряжена точно (суммирование по частям).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from scipy import sparse

from core.errors import MeshMismatchError

MIN_NODES = 3


@dataclass(frozen=True)
class Mesh:
    """Равномерная сетка на отрезке или прямоугольнике."""

    n: tuple[int, ...]
    extents: tuple[float, ...]

    def __post_init__(self) -> None:
        n = tuple(int(value) for value in self.n)
        extents = tuple(float(value) for value in self.extents)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "extents", extents)
        if len(n) not in (1, 2):
            raise ValueError(f"mesh dim must be 1 or 2 (got {len(n)})")
        if len(extents) != len(n):
            raise ValueError("extents and node counts must have the same length")
        if min(n) < MIN_NODES:
            raise ValueError(f"mesh needs at least {MIN_NODES} interior nodes per axis (got {n})")
        if min(extents) <= 0:
            raise ValueError(f"mesh extents must be positive (got {extents})")

    @classmethod
    def interval(cls, n: int, length: float = 1.0) -> "Mesh":
        return cls(n=(n,), extents=(length,))

    @classmethod
    def unit_interval(cls, n: int) -> "Mesh":
        return cls.interval(n)

    @classmethod
    def rectangle(cls, nx: int, ny: int, lx: float = 1.0, ly: float = 1.0) -> "Mesh":
        return cls(n=(nx, ny), extents=(lx, ly))

    @classmethod
    def unit_square(cls, n: int) -> "Mesh":
        return cls.rectangle(n, n)

    @property
    def dim(self) -> int:
        return len(self.n)

    @property
    def h(self) -> tuple[float, ...]:
        return tuple(length / (count + 1) for length, count in zip(self.extents, self.n))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.n

    @property
    def size(self) -> int:
        return int(np.prod(self.n))

    @property
    def node_weight(self) -> float:
        """Вес трапециевидной квадратуры во внутреннем узле."""
        return float(np.prod(self.h))

    @property
    def cell_weight(self) -> float:
        if self.dim == 1:
            return self.h[0]
        return self.h[0] * self.h[1] / 2.0

    @property
    def nodes_per_cell(self) -> int:
        return self.dim + 1

    @property
    def cell_count(self) -> int:
        return self.gradient_matrices[0].shape[0]

    def coordinates(self) -> tuple[np.ndarray, ...]:
        axes = [
            np.arange(1, count + 1, dtype=float) * step
            for count, step in zip(self.n, self.h)
        ]
        return tuple(np.meshgrid(*axes, indexing="ij"))

    # --- матрицы шаблонов, строятся один раз на сетку ---

    @cached_property
    def _shifts(self) -> tuple[tuple[sparse.csr_matrix, sparse.csr_matrix], ...]:
        # S0: ребро k -> узел слева (k-1), S1: ребро k -> узел справа (k)
        result = []
        for count in self.n:
            s0 = sparse.eye(count + 1, count, k=-1, format="csr")
            s1 = sparse.eye(count + 1, count, k=0, format="csr")
            result.append((s0, s1))
        return tuple(result)

    @cached_property
    def gradient_matrices(self) -> tuple[sparse.csr_matrix, ...]:
        """По одной матрице (cells x nodes) на компоненту градиента."""
        if self.dim == 1:
            s0, s1 = self._shifts[0]
            return ((s1 - s0).tocsr() / self.h[0],)

        (s0x, s1x), (s0y, s1y) = self._shifts
        dx = (s1x - s0x) / self.h[0]
        dy = (s1y - s0y) / self.h[1]
        gx = sparse.vstack([sparse.kron(dx, s0y), sparse.kron(dx, s1y)])
        gy = sparse.vstack([sparse.kron(s0x, dy), sparse.kron(s1x, dy)])
        return (gx.tocsr(), gy.tocsr())

    @cached_property
    def incidence_matrix(self) -> sparse.csr_matrix:
        """Ячейка -> её внутренние вершины (граничные вершины отброшены)."""
        if self.dim == 1:
            s0, s1 = self._shifts[0]
            return (s0 + s1).tocsr()

        (s0x, s1x), (s0y, s1y) = self._shifts
        lower = sparse.kron(s0x, s0y) + sparse.kron(s1x, s0y) + sparse.kron(s0x, s1y)
        upper = sparse.kron(s1x, s1y) + sparse.kron(s0x, s1y) + sparse.kron(s1x, s0y)
        return sparse.vstack([lower, upper]).tocsr()

    @cached_property
    def midpoint_matrices(self) -> tuple[sparse.csr_matrix, ...]:
        """Значение u в середине разности, по которой считается компонента градиента."""
        if self.dim == 1:
            s0, s1 = self._shifts[0]
            return (((s0 + s1) * 0.5).tocsr(),)

        (s0x, s1x), (s0y, s1y) = self._shifts
        mx = (s0x + s1x) * 0.5
        my = (s0y + s1y) * 0.5
        ax = sparse.vstack([sparse.kron(mx, s0y), sparse.kron(mx, s1y)])
        ay = sparse.vstack([sparse.kron(s0x, my), sparse.kron(s1x, my)])
        return (ax.tocsr(), ay.tocsr())

    @cached_property
    def vertex_average_matrix(self) -> sparse.csr_matrix:
        share = self.cell_weight / self.nodes_per_cell / self.node_weight
        return (self.incidence_matrix.T * share).tocsr()

    @cached_property
    def laplacian_matrix(self) -> sparse.csr_matrix:
        """Сильная форма -div∘grad (в 1D — трёхточечный, в 2D — пятиточечный шаблон)."""
        ratio = self.cell_weight / self.node_weight
        total = sum(d.T @ d for d in self.gradient_matrices)
        return (total * ratio).tocsr()

    @cached_property
    def stiffness_matrix(self) -> sparse.csr_matrix:
        """Симметричная форма: u·Ku = ‖∇u‖₂²."""
        return (self.laplacian_matrix * self.node_weight).tocsr()


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Узловые значения функции, обращающейся в ноль на границе."""

    mesh: Mesh
    values: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=float)
        if values.size != self.mesh.size:
            raise ValueError(
                f"grid function needs {self.mesh.size} values (got {values.size})"
            )
        values = values.reshape(self.mesh.shape)
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, mesh: Mesh) -> "GridFunction":
        return cls(mesh, np.zeros(mesh.shape))

    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    def with_values(self, values: np.ndarray) -> "GridFunction":
        return GridFunction(self.mesh, values)

    def __neg__(self) -> "GridFunction":
        return self.with_values(-self.values)

    def __add__(self, other: "GridFunction") -> "GridFunction":
        check_same_mesh(self, other)
        return self.with_values(self.values + other.values)

    def __sub__(self, other: "GridFunction") -> "GridFunction":
        check_same_mesh(self, other)
        return self.with_values(self.values - other.values)

    def __mul__(self, other: "float | GridFunction") -> "GridFunction":
        if isinstance(other, GridFunction):
            check_same_mesh(self, other)
            return self.with_values(self.values * other.values)
        return self.with_values(self.values * float(other))

    __rmul__ = __mul__

    def is_zero(self) -> bool:
        return not np.any(self.values)


@dataclass(frozen=True, eq=False)
class CellField:
    """Векторное поле на ячейках: по dim компонент на ячейку."""

    mesh: Mesh
    values: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=float)
        expected = (self.mesh.cell_count, self.mesh.dim)
        if values.shape != expected:
            raise ValueError(f"cell field needs shape {expected} (got {values.shape})")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    def magnitude(self) -> np.ndarray:
        return np.sqrt(np.sum(self.values**2, axis=1))


def check_same_mesh(*items: GridFunction | CellField) -> Mesh:
    mesh = items[0].mesh
    for item in items[1:]:
        if item.mesh != mesh:
            raise MeshMismatchError(f"mesh mismatch: {item.mesh} vs {mesh}")
    return mesh


def gradient(u: GridFunction) -> CellField:
    flat = u.flat
    components = [d @ flat for d in u.mesh.gradient_matrices]
    return CellField(u.mesh, np.column_stack(components))


def divergence(q: CellField) -> GridFunction:
    """Отрицательно сопряжённый к gradient оператор: ⟨-div q, v⟩ = ⟨q, ∇v⟩."""
    mesh = q.mesh
    ratio = mesh.cell_weight / mesh.node_weight
    total = np.zeros(mesh.size)
    for k, d in enumerate(mesh.gradient_matrices):
        total += d.T @ q.values[:, k]
    return GridFunction(mesh, -ratio * total)


def integrate(u: GridFunction) -> float:
    """Формула трапеций с нулевыми граничными значениями."""
    return float(u.mesh.node_weight * np.sum(u.values))


def inner(u: GridFunction, v: GridFunction) -> float:
    mesh = check_same_mesh(u, v)
    return float(mesh.node_weight * np.dot(u.flat, v.flat))


def cell_inner(q: CellField, r: CellField) -> float:
    mesh = check_same_mesh(q, r)
    return float(mesh.cell_weight * np.sum(q.values * r.values))


def lp_norm(u: GridFunction | CellField, p: float) -> float:
    if p < 1:
        raise ValueError(f"lp_norm needs p >= 1 (got {p})")
    if isinstance(u, CellField):
        pointwise, weight = u.magnitude(), u.mesh.cell_weight
    else:
        pointwise, weight = np.abs(u.flat), u.mesh.node_weight
    total = weight * np.sum(pointwise**p)
    return float(total ** (1.0 / p))


def nodal_gradient_power(u: GridFunction, p: float) -> GridFunction:
    """Среднее |∇u|^p по ячейкам, примыкающим к узлу.

    Вес каждой ячейки делится поровну между её вершинами; доли граничных
    вершин теряются, поэтому ∫ m ≤ ‖∇u‖_p^p и дискретное неравенство Гёльдера
    выполняется точно.
    """
    cell_power = gradient(u).magnitude() ** p
    return GridFunction(u.mesh, u.mesh.vertex_average_matrix @ cell_power)


def interpolate(mesh: Mesh, fn: Callable[..., np.ndarray]) -> GridFunction:
    return GridFunction(mesh, fn(*mesh.coordinates()))


def sine_mode(mesh: Mesh, modes: Sequence[int] | None = None) -> GridFunction:
    """Интерполянт собственной функции Дирихле Π sin(k π x / L).

    Он же точный собственный вектор дискретного лапласиана.
    """
    modes = tuple(modes or (1,) * mesh.dim)
    values = np.ones(mesh.shape)
    for coord, k, length in zip(mesh.coordinates(), modes, mesh.extents):
        values = values * np.sin(k * math.pi * coord / length)
    return GridFunction(mesh, values)


def random_function(
    mesh: Mesh,
    rng: np.random.Generator,
    *,
    smooth: bool = True,
    max_mode: int = 8,
) -> GridFunction:
    """Случайная пробная функция; smooth=True — ряд по синусам с затуханием 1/k²."""
    if not smooth:
        return GridFunction(mesh, rng.standard_normal(mesh.shape))

    values = np.zeros(mesh.shape)
    ranges = [range(1, min(max_mode, count) + 1) for count in mesh.n]
    for modes in np.ndindex(*[len(r) for r in ranges]):
        ks = tuple(ranges[axis][index] for axis, index in enumerate(modes))
        amplitude = rng.standard_normal() / float(sum(k * k for k in ks))
        values = values + amplitude * sine_mode(mesh, ks).values
    return GridFunction(mesh, values)


def analytic_first_eigenvalue(mesh: Mesh) -> float:
    """λ₁(-Δ) в форме отношения норм для бокса: π·sqrt(Σ 1/L²)."""
    return math.pi * math.sqrt(sum(1.0 / length**2 for length in mesh.extents))


__all__ = [
    "Mesh",
    "GridFunction",
    "CellField",
    "check_same_mesh",
    "gradient",
    "divergence",
    "integrate",
    "inner",
    "cell_inner",
    "lp_norm",
    "nodal_gradient_power",
    "interpolate",
    "sine_mode",
    "random_function",
    "analytic_first_eigenvalue",
]
