import math
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from core.errors import MeshMismatchError
from core.grid import (
    CellField,
    GridFunction,
    Mesh,
    analytic_first_eigenvalue,
    cell_inner,
    divergence,
    gradient,
    inner,
    integrate,
    interpolate,
    lp_norm,
    nodal_gradient_power,
    random_function,
    sine_mode,
)


def discrete_eigenvalue(n: int, length: float = 1.0) -> float:
    h = length / (n + 1)
    return (4.0 / h**2) * math.sin(math.pi * h / (2.0 * length)) ** 2


@pytest.mark.parametrize(
    "n, extents",
    [((2,), (1.0,)), ((8,), (0.0,)), ((8, 8, 8), (1.0, 1.0, 1.0)), ((8,), (1.0, 1.0))],
)
def test_mesh_rejects_bad_parameters(n, extents):
    with pytest.raises(ValueError):
        Mesh(n=n, extents=extents)


def test_mesh_geometry():
    mesh = Mesh.rectangle(4, 9, lx=1.0, ly=2.0)

    assert mesh.dim == 2
    assert mesh.h == pytest.approx((0.2, 0.2))
    assert mesh.shape == (4, 9)
    assert mesh.size == 36
    assert mesh.node_weight == pytest.approx(0.04)
    assert mesh.cell_weight == pytest.approx(0.02)
    # два треугольника на каждый из (4+1)(9+1) квадратов
    assert mesh.cell_count == 2 * 5 * 10


def test_interval_has_one_cell_per_edge():
    mesh = Mesh.unit_interval(10)

    assert mesh.cell_count == 11
    assert mesh.cell_weight == pytest.approx(1.0 / 11)


@pytest.mark.parametrize("mesh", [Mesh.unit_interval(20), Mesh.unit_square(12)])
def test_sine_mode_is_discrete_laplacian_eigenvector(mesh):
    u = sine_mode(mesh)
    expected = sum(discrete_eigenvalue(n, length) for n, length in zip(mesh.n, mesh.extents))

    assert mesh.laplacian_matrix @ u.flat == pytest.approx(expected * u.flat, rel=1e-10, abs=1e-10)


def test_stiffness_gives_gradient_norm():
    mesh = Mesh.unit_square(7)
    u = random_function(mesh, np.random.default_rng(1))

    assert u.flat @ (mesh.stiffness_matrix @ u.flat) == pytest.approx(lp_norm(gradient(u), 2.0) ** 2)


def test_divergence_is_negative_adjoint_of_gradient():
    mesh = Mesh.unit_square(6)
    rng = np.random.default_rng(3)
    v = random_function(mesh, rng, smooth=False)
    q = CellField(mesh, rng.standard_normal((mesh.cell_count, mesh.dim)))

    assert inner(divergence(q), v) == pytest.approx(-cell_inner(q, gradient(v)))


def test_integrate_constant():
    mesh = Mesh.interval(9, length=2.0)
    ones = GridFunction(mesh, np.ones(mesh.shape))

    # граничные узлы не входят: 9 узлов с весом h = 0.2
    assert integrate(ones) == pytest.approx(1.8)


def test_lp_norm_rejects_small_exponent():
    u = sine_mode(Mesh.unit_interval(5))

    with pytest.raises(ValueError):
        lp_norm(u, 0.5)


def test_mesh_mismatch_is_reported():
    u = sine_mode(Mesh.unit_interval(5))
    v = sine_mode(Mesh.unit_interval(6))

    with pytest.raises(MeshMismatchError):
        u + v
    with pytest.raises(MeshMismatchError):
        inner(u, v)


def test_grid_function_values_are_read_only():
    u = sine_mode(Mesh.unit_interval(5))

    with pytest.raises(ValueError):
        u.values[0] = 1.0


def test_grid_function_arithmetic():
    mesh = Mesh.unit_interval(5)
    u = sine_mode(mesh)

    assert (2.0 * u - u).flat == pytest.approx(u.flat)
    assert (-u).flat == pytest.approx(-u.flat)
    assert GridFunction.zeros(mesh).is_zero()
    assert not u.is_zero()


@pytest.mark.parametrize("p", [2.0, 3.0, 4.5])
def test_nodal_gradient_power_never_exceeds_gradient_norm(p):
    mesh = Mesh.unit_square(9)
    u = random_function(mesh, np.random.default_rng(5))

    assert integrate(nodal_gradient_power(u, p)) <= lp_norm(gradient(u), p) ** p * (1 + 1e-12)


def test_analytic_first_eigenvalue():
    assert analytic_first_eigenvalue(Mesh.unit_interval(10)) == pytest.approx(math.pi)
    assert analytic_first_eigenvalue(Mesh.unit_square(10)) == pytest.approx(math.pi * math.sqrt(2.0))


def test_random_function_is_seeded():
    mesh = Mesh.unit_interval(16)
    a = random_function(mesh, np.random.default_rng(11))
    b = random_function(mesh, np.random.default_rng(11))

    assert np.array_equal(a.values, b.values)


def sine_interpolant(mesh: Mesh) -> GridFunction:
    return interpolate(mesh, lambda x: np.sin(np.pi * x))


PROPERTY_MESHES = [Mesh.unit_interval(128), Mesh.unit_square(32)]


def test_gradient_of_sine_interpolant():
    u = sine_interpolant(Mesh.unit_interval(256))

    assert lp_norm(gradient(u), 2.0) ** 2 == pytest.approx(math.pi**2 / 2.0, rel=0.005)


def test_divergence_of_sine_gradient_is_scaled_sine():
    u = sine_interpolant(Mesh.unit_interval(256))

    result = -divergence(gradient(u))

    assert result.flat == pytest.approx(math.pi**2 * u.flat, rel=0.01)


@pytest.mark.parametrize(
    "fn, expected",
    [(lambda x: x * (1.0 - x), 1.0 / 6.0), (lambda x: np.sin(np.pi * x), 2.0 / math.pi)],
)
def test_integrate_matches_closed_form(fn, expected):
    u = interpolate(Mesh.unit_interval(256), fn)

    assert integrate(u) == pytest.approx(expected, rel=1e-4)


def test_lp_norm_of_sine_and_homogeneity():
    u = sine_interpolant(Mesh.unit_interval(256))

    assert lp_norm(u, 2.0) == pytest.approx(1.0 / math.sqrt(2.0), rel=0.005)
    assert lp_norm(-3.0 * u, 3.0) == pytest.approx(3.0 * lp_norm(u, 3.0), rel=1e-12)
    assert lp_norm(GridFunction.zeros(u.mesh), 2.0) == 0.0


def test_gradient_norm_converges_at_second_order():
    exact = math.pi / math.sqrt(2.0)
    # h = 1/32 и h = 1/64
    coarse = abs(lp_norm(gradient(sine_interpolant(Mesh.unit_interval(31))), 2.0) - exact)
    fine = abs(lp_norm(gradient(sine_interpolant(Mesh.unit_interval(63))), 2.0) - exact)

    assert coarse / fine >= 3.5


@pytest.mark.parametrize("mesh", PROPERTY_MESHES, ids=["1d", "2d"])
def test_summation_by_parts(mesh):
    rng = np.random.default_rng(12)
    u = random_function(mesh, rng)
    v = random_function(mesh, rng)
    grad_u, grad_v = gradient(u), gradient(v)

    gap = inner(-divergence(grad_u), v) - cell_inner(grad_u, grad_v)

    assert abs(gap) <= 1e-12 * lp_norm(grad_u, 2.0) * lp_norm(grad_v, 2.0)


@pytest.mark.parametrize("mesh", PROPERTY_MESHES, ids=["1d", "2d"])
@pytest.mark.parametrize("p0, p1", [(2.0, 1.0), (2.0, 2.0), (3.0, 1.0)])
def test_discrete_holder_inequality(mesh, p0, p1):
    p = p0 + p1
    rng = np.random.default_rng(21)

    for _ in range(5):
        u = random_function(mesh, rng)
        m = nodal_gradient_power(u, p)
        weighted = integrate(u.with_values(np.abs(u.values) ** p0 * m.values ** (p1 / p)))
        bound = lp_norm(u, p) ** p0 * lp_norm(gradient(u), p) ** p1
        assert weighted <= bound + 1e-12 * bound
