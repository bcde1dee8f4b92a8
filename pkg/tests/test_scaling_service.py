import logging
import math
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from core.grid import GridFunction, Mesh, random_function, sine_mode
from core.operators import OperatorSpec
from services.quotient_service import MinimizeConfig, QuotientProblem, eigen_residual, minimize_quotient
from services.scaling_service import PairClass, classify_pair, eigen_ray, ray_scan

RADII = [0.5, 1.0, 2.0, 4.0, 8.0, 16.0]


def test_matched_pair_is_element_independent():
    mesh = Mesh.unit_interval(32)
    problem = QuotientProblem(OperatorSpec.p_laplacian(3.0), OperatorSpec.power_identity(3.0), mesh)
    u0 = random_function(mesh, np.random.default_rng(0))

    report = ray_scan(problem, u0, RADII)

    assert report.quotient_exponent == pytest.approx(0.0, abs=1e-8)
    assert report.element_independent
    assert report.classification == PairClass.MATCHED.value
    assert len(report.samples) == len(RADII)


@pytest.mark.parametrize(
    "F, G, slope, expected_class",
    [
        (OperatorSpec.p_laplacian(3.0), OperatorSpec.power_identity(2.0), 1.0, PairClass.F_DOMINANT),
        (OperatorSpec.p_laplacian(2.0), OperatorSpec.power_identity(4.0), -2.0, PairClass.G_DOMINANT),
        (OperatorSpec.p_laplacian(4.0), OperatorSpec.grad_weighted_power(2.0, 0.0), 2.0, PairClass.F_DOMINANT),
        (OperatorSpec.density_diffusion(4.0), OperatorSpec.power_identity(2.0), 2.0, PairClass.F_DOMINANT),
        (OperatorSpec.powered_linear(2.0), OperatorSpec.power_identity(3.0), -1.0, PairClass.G_DOMINANT),
    ],
)
def test_unmatched_pair_scales_like_degree_gap(F, G, slope, expected_class):
    mesh = Mesh.unit_square(8)
    problem = QuotientProblem(F, G, mesh)
    u0 = random_function(mesh, np.random.default_rng(1))

    report = ray_scan(problem, u0, RADII)

    assert report.quotient_exponent == pytest.approx(slope, abs=1e-9)
    assert report.predicted_exponent == slope
    assert report.radius_exponent == pytest.approx(-slope, abs=1e-9)
    assert not report.element_independent
    assert report.classification == expected_class.value
    assert classify_pair(F, G) is expected_class


def test_ray_scan_needs_three_positive_radii():
    mesh = Mesh.unit_interval(8)
    problem = QuotientProblem(OperatorSpec.p_laplacian(2.0), OperatorSpec.power_identity(2.0), mesh)
    u0 = sine_mode(mesh)

    with pytest.raises(ValueError):
        ray_scan(problem, u0, [1.0, 2.0])
    with pytest.raises(ValueError):
        ray_scan(problem, u0, [-1.0, 1.0, 2.0])
    with pytest.raises(ValueError):
        ray_scan(problem, GridFunction.zeros(mesh), RADII)


def test_narrow_radii_only_warn(caplog):
    mesh = Mesh.unit_interval(8)
    problem = QuotientProblem(OperatorSpec.p_laplacian(2.0), OperatorSpec.power_identity(2.0), mesh)

    with caplog.at_level(logging.WARNING, logger="services.scaling_service"):
        report = ray_scan(problem, sine_mode(mesh), [0.5, 1.0, 2.0, 4.0])

    assert report.element_independent
    assert "декады" in caplog.text


def test_eigen_ray_keeps_matched_eigenvalue():
    mesh = Mesh.unit_interval(16)
    problem = QuotientProblem(OperatorSpec.p_laplacian(2.0), OperatorSpec.power_identity(2.0), mesh)
    h = 1.0 / 17
    lam = (4.0 / h**2) * math.sin(math.pi * h / 2.0) ** 2

    points = eigen_ray(problem, sine_mode(mesh), lam, [0.5, 2.0, 10.0])

    assert [point.lam for point in points] == pytest.approx([lam, lam, lam])
    assert all(point.residual < 1e-10 for point in points)


def test_bilaplacian_against_power_is_matched():
    mesh = Mesh.unit_square(8)
    F, G = OperatorSpec.powered_bilaplacian(3.0), OperatorSpec.power_identity(3.0)
    u0 = random_function(mesh, np.random.default_rng(2))

    report = ray_scan(QuotientProblem(F, G, mesh), u0, RADII)

    assert report.quotient_exponent == pytest.approx(0.0, abs=1e-8)
    assert report.element_independent
    assert classify_pair(F, G) is PairClass.MATCHED


def test_eigen_ray_transports_a_minimized_pair():
    mesh = Mesh.unit_interval(32)
    problem = QuotientProblem(OperatorSpec.p_laplacian(3.0), OperatorSpec.power_identity(2.0), mesh)
    result = minimize_quotient(problem, MinimizeConfig(restarts=1))
    base = eigen_residual(problem, result.minimizer, result.lam)

    points = eigen_ray(problem, result.minimizer, result.lam, [0.5, 2.0])

    assert [point.lam for point in points] == pytest.approx([0.5 * result.lam, 2.0 * result.lam], rel=1e-14)
    assert all(abs(point.residual - base) <= 1e-10 for point in points)
