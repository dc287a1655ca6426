import math
import warnings

import numpy as np
import pytest

from oracles import tent_lambda_infinity

from ergodic_hjb.core import DomainError, Exponent, Geometry, Method, ProblemSpec, catalog
from ergodic_hjb.discretize import Mesh
from ergodic_hjb.eigen import CrossValidationWarning, cross_validate, default_mesh, lambda_via_direct, lambda_via_discount, r_sweep
from ergodic_hjb.solver import SolverError

BUMP = catalog("bump")


def _spec(m, beta, potential=BUMP):
    return ProblemSpec(1, Exponent(m), beta, potential)


def test_discount_zero_potential():
    est = lambda_via_discount(Mesh(Geometry.LINE, 20.0, 256), _spec(3.0, 1.0, catalog("zero")))
    assert all(v == 0.0 for v in est.diagnostics["delta_v0"])
    assert est.lam == 0.0


@pytest.mark.parametrize("m", [3.0, math.inf])
def test_discount_zero_beta(m):
    est = lambda_via_discount(Mesh(Geometry.LINE, 30.0, 512), _spec(m, 0.0))
    assert abs(est.lam) <= 1e-8
    assert est.method is Method.VANISHING_DISCOUNT


def test_discount_beyond_threshold_is_negative():
    est = lambda_via_discount(Mesh(Geometry.LINE, 60.0, 4096), _spec(math.inf, 4.0))
    assert est.lam < -1e-3
    assert est.lam == pytest.approx(tent_lambda_infinity(4.0), abs=2e-3)


def test_discount_sequence_checks():
    mesh = Mesh(Geometry.LINE, 20.0, 64)
    with pytest.raises(DomainError):
        lambda_via_discount(mesh, _spec(3.0, 1.0), [0.1, 0.05])
    with pytest.raises(DomainError):
        lambda_via_discount(mesh, _spec(3.0, 1.0), [0.1, 0.2, 0.05])


def test_discount_failure_names_delta(monkeypatch):
    import ergodic_hjb.eigen as eigen

    real = eigen.solve_discounted

    def flaky(op, guess=None, tol=1e-10):
        if op.delta < 0.05:
            raise SolverError("forced failure")
        return real(op, guess, tol=tol)

    monkeypatch.setattr(eigen, "solve_discounted", flaky)
    with pytest.raises(SolverError) as info:
        lambda_via_discount(Mesh(Geometry.LINE, 20.0, 64), _spec(3.0, 1.0), [1e-1, 1e-2, 1e-3])
    assert info.value.delta == 1e-2
    assert "delta=0.01" in str(info.value)


def test_direct_examples():
    mesh = Mesh(Geometry.LINE, 30.0, 2048)
    assert lambda_via_direct(mesh, _spec(math.inf, 0.0)).lam == pytest.approx(0.0, abs=1e-12)
    assert abs(lambda_via_direct(mesh, _spec(math.inf, 1.0)).lam) <= 1e-4
    est = lambda_via_direct(mesh, _spec(math.inf, 3.0))
    assert est.lam < -1e-3
    assert est.diagnostics["h"] == mesh.h and est.residual_inf_norm <= 1e-10
    assert est.solution.is_normalized()


@pytest.mark.parametrize("beta", [0.5, 1.0, 3.0])
def test_discount_agrees_with_direct_off_plateau(beta):
    mesh = Mesh(Geometry.LINE, 30.0, 1024)
    direct = lambda_via_direct(mesh, _spec(3.0, beta)).lam
    discount = lambda_via_discount(mesh, _spec(3.0, beta)).lam
    assert discount == pytest.approx(direct, abs=1e-4)


def test_cross_validate_zero_beta_is_silent():
    with warnings.catch_warnings():
        warnings.simplefilter("error", CrossValidationWarning)
        est = cross_validate(_spec(3.0, 0.0), Mesh(Geometry.LINE, 30.0, 256))
    assert abs(est.lam) <= 1e-10 and abs(est.diagnostics["discount_lambda"]) <= 1e-8
    assert est.diagnostics["warning"] is False


def test_cross_validate_catalog_problem_agrees():
    with warnings.catch_warnings():
        warnings.simplefilter("error", CrossValidationWarning)
        est = cross_validate(_spec(3.0, 1.0), Mesh(Geometry.LINE, 30.0, 4096))
    assert est.diagnostics["disagreement"] <= 5e-3


def test_cross_validate_warns_on_coarse_plateau_run():
    # on the plateau the discount values approach lam slowly; on a 64-cell mesh the
    # two-point extrapolation misses by more than the threshold
    with pytest.warns(CrossValidationWarning):
        est = cross_validate(_spec(math.inf, 1.0), Mesh(Geometry.LINE, 60.0, 64))
    assert est.diagnostics["warning"] is True
    assert est.diagnostics["disagreement"] > 5e-3


def test_r_sweep_compact_support_stabilizes():
    res = r_sweep(_spec(math.inf, 3.0), [20.0, 40.0, 80.0])
    d = res.differences
    assert res.verdict == "stabilized"
    assert d[1] <= max(d[0] / 2, 1e-12)
    h = 60.0 / 2048
    assert all(abs(R / h - round(R / h)) < 1e-9 for R in res.radii)


def test_r_sweep_zero_potential():
    res = r_sweep(_spec(3.0, 1.0, catalog("zero")), [10.0, 20.0, 40.0], h=0.1)
    assert all(abs(l) <= 1e-10 for l in res.lams)


def test_r_sweep_slow_tail_reports_a_verdict():
    pot = catalog("bracket", q=1.5)
    res = r_sweep(_spec(3.0, 1.0, pot), [10.0, 20.0, 40.0], h=0.1, stabilization_tol=1e-9)
    assert res.verdict in ("stabilized", "not stabilized")
    assert res.differences[-1] > 0.0


def test_r_sweep_argument_checks():
    with pytest.raises(DomainError):
        r_sweep(_spec(3.0, 1.0), [20.0, 40.0])
    with pytest.raises(DomainError):
        r_sweep(_spec(3.0, 1.0), [40.0, 20.0, 80.0])


def test_default_mesh_radius():
    mesh = default_mesh(_spec(3.0, 1.0))
    assert mesh.R == 20.0 and mesh.n_cells == 4096
    radial = default_mesh(ProblemSpec(3, Exponent(3.0), 1.0, catalog("bracket", q=1.5), Geometry.RADIAL), n_cells=128)
    assert radial.R > 20.0 and radial.geometry is Geometry.RADIAL
    assert np.isclose(radial.h, radial.R / 128)
