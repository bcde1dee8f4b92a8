import math
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from core.errors import OperatorError
from core.grid import Mesh, gradient, lp_norm, random_function
from core.models import RelationReport
from services import relations_service
from services.quotient_service import MinimizeConfig, p0p1_eigen
from services.relations_service import (
    holder_gap,
    lambda_bilap_density,
    lambda_bilap_grad,
    linear_first_eigenvalue,
    verify_coercivity,
    verify_fully_nonlinear_power,
    verify_ineq_3_3,
    verify_prop1_part2,
)

CONFIG = MinimizeConfig(restarts=1)


def discrete_eigenvalue(n: int) -> float:
    h = 1.0 / (n + 1)
    return (4.0 / h**2) * math.sin(math.pi * h / 2.0) ** 2


@pytest.fixture(autouse=True)
def single_thread(monkeypatch):
    monkeypatch.setenv("NLSPEC_THREADS", "1")


def test_relation_report_check():
    assert RelationReport.check("a", 1.0, 1.01, "equal", 0.02, relative=True).passed
    assert not RelationReport.check("a", 1.0, 1.1, "equal", 0.02, relative=True).passed
    assert RelationReport.check("b", 1.0, 1.0 + 1e-7, "geq", 1e-6).passed
    assert not RelationReport.check("c", 2.0, 1.0, "leq", 1e-6).passed
    with pytest.raises(ValueError):
        RelationReport.check("d", 1.0, 1.0, "approx", 0.1)


def test_linear_first_eigenvalue():
    mesh = Mesh.unit_interval(32)

    assert linear_first_eigenvalue(mesh) == pytest.approx(math.sqrt(discrete_eigenvalue(32)), rel=1e-10)


@pytest.mark.parametrize("p0, p1", [(2.0, 1.0), (2.0, 2.0), (3.0, 0.5)])
def test_holder_gap_is_nonnegative(p0, p1):
    mesh = Mesh.unit_square(10)
    rng = np.random.default_rng(9)

    for _ in range(10):
        assert holder_gap(random_function(mesh, rng), p0, p1) >= -1e-12


def test_prop1_at_p_2_is_exact():
    report = verify_prop1_part2(2.0, Mesh.unit_interval(32), CONFIG)

    assert report.passed
    assert report.lhs == pytest.approx(report.rhs, rel=1e-9)
    assert report.details["converged"]
    assert report.provenance["p"] == 2.0


def test_prop1_at_p_3():
    report = verify_prop1_part2(3.0, Mesh.unit_interval(32), CONFIG)

    assert report.passed
    assert report.relation == "equal"
    assert report.details["substitution_quotient"] == pytest.approx(report.lhs, rel=1e-6)


def test_ineq_without_gradient_weight():
    report = verify_ineq_3_3(2.0, 0.0, Mesh.unit_interval(24), CONFIG)

    assert report.passed
    assert report.relation == "geq"
    assert report.details["root_form_holds"]


def test_fully_nonlinear_power_at_p_2():
    mesh = Mesh.unit_interval(64)
    report = verify_fully_nonlinear_power(2.0, mesh, CONFIG)

    assert report.passed
    # отношение ‖Lu‖/‖u‖ в первой степени: π², а не π⁴
    assert report.lhs == pytest.approx(math.pi**2, rel=0.01)
    assert report.details["continuum_reference"] == pytest.approx(math.pi**2)


def test_bilap_grad_bound():
    report = lambda_bilap_grad(2.0, Mesh.unit_interval(24), CONFIG, probes=20)

    assert report.passed
    assert report.lhs == pytest.approx(math.sqrt(discrete_eigenvalue(24)), rel=1e-8)
    assert report.details["probes"] == 20


def test_bilap_density_bound():
    report = lambda_bilap_density(2.0, Mesh.unit_interval(24), CONFIG, probes=20)

    assert report.passed
    assert report.details["probes_hold"]
    assert "auxiliary_ratio" not in report.details


def test_coercivity_holds_below_and_fails_above_the_eigenvalue():
    mesh = Mesh.unit_interval(24)
    eigen = p0p1_eigen(2.0, 0.0, mesh, CONFIG)

    below = verify_coercivity(2.0, 0.0, 0.5 * eigen.lam, mesh, trials=30, config=CONFIG, eigen=eigen)
    above = verify_coercivity(2.0, 0.0, 1.5 * eigen.lam, mesh, trials=30, config=CONFIG, eigen=eigen)

    assert below.passed
    assert below.details["constant"] == pytest.approx(0.5)
    assert below.details["violations"] == 0
    assert not above.passed
    assert above.details["worst_probe"] == "minimizer"
    assert above.provenance["lambda"] == pytest.approx(1.5 * eigen.lam)


def test_coercivity_rejects_negative_lambda():
    with pytest.raises(OperatorError):
        verify_coercivity(2.0, 0.0, -1.0, Mesh.unit_interval(8))


@pytest.mark.parametrize("mesh", [Mesh.unit_interval(128), Mesh.unit_square(32)], ids=["1d", "2d"])
@pytest.mark.parametrize("p0, p1", [(2.0, 1.0), (2.0, 2.0), (3.0, 1.0)])
def test_holder_gap_on_fine_meshes(mesh, p0, p1):
    rng = np.random.default_rng(10)
    p = p0 + p1

    for _ in range(5):
        u = random_function(mesh, rng)
        scale = lp_norm(u, p) ** p0 * lp_norm(gradient(u), p) ** p1
        assert holder_gap(u, p0, p1) >= -1e-12 * scale


def test_prop1_approaches_the_continuum_under_refinement():
    coarse = verify_prop1_part2(3.0, Mesh.unit_interval(32), CONFIG)
    fine = verify_prop1_part2(3.0, Mesh.unit_interval(65), CONFIG)

    assert coarse.passed and fine.passed
    assert coarse.details["continuum_reference"] == pytest.approx((2.0 * math.pi / 3.0) ** 2)
    # шаг h уменьшается вдвое, ошибка O(h²) должна упасть примерно вчетверо
    ratio = abs(coarse.details["continuum_relative_discrepancy"]) / abs(fine.details["continuum_relative_discrepancy"])
    assert ratio >= 3.0


@pytest.mark.parametrize("p0, p1", [(2.0, 2.0), (3.0, 1.0)])
def test_ineq_with_gradient_weight(p0, p1):
    report = verify_ineq_3_3(p0, p1, Mesh.unit_interval(32), CONFIG)

    assert report.passed
    assert report.lhs >= report.rhs - 1e-6
    assert report.provenance["p"] == p0 + p1


def test_coercivity_with_gradient_weight():
    mesh = Mesh.unit_interval(24)
    eigen = p0p1_eigen(2.0, 2.0, mesh, CONFIG)

    below = verify_coercivity(2.0, 2.0, 0.5 * eigen.lam, mesh, trials=20, config=CONFIG, eigen=eigen)
    above = verify_coercivity(2.0, 2.0, 1.5 * eigen.lam, mesh, trials=20, config=CONFIG, eigen=eigen)

    assert below.passed
    assert below.details["violations"] == 0
    assert not above.passed
    assert above.details["worst_probe"] == "minimizer"


def test_bilap_density_bound_at_p_4():
    report = lambda_bilap_density(4.0, Mesh.unit_interval(24), CONFIG, probes=20)

    assert report.passed
    assert report.details["probes_hold"]
    assert report.lhs >= report.rhs * (1 - 1e-12)
    assert "auxiliary_ratio" in report.details


def test_bilap_density_fails_when_a_random_function_breaks_the_bound(monkeypatch):
    real = relations_service._density_ratio
    calls = []

    def skewed(u, p):
        ratio, lower = real(u, p)
        calls.append(u)
        if len(calls) == 1:
            return ratio, lower
        return ratio, 2.0 * ratio

    monkeypatch.setattr(relations_service, "_density_ratio", skewed)

    report = lambda_bilap_density(2.0, Mesh.unit_interval(16), CONFIG, probes=5)

    assert len(calls) == 6
    assert report.lhs >= report.rhs * (1 - 1e-9)
    assert not report.details["probes_hold"]
    assert report.details["probe_min_relative_slack"] == pytest.approx(-0.5)
    assert not report.passed


def test_fully_nonlinear_power_at_p_3():
    report = verify_fully_nonlinear_power(3.0, Mesh.unit_interval(32), CONFIG)

    assert report.passed
    assert report.lhs == pytest.approx(report.details["lambda_L"] ** 2, rel=1e-6)
    assert "continuum_reference" not in report.details
