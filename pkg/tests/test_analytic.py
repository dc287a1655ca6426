import math

import numpy as np
import pytest

from ergodic_hjb.analytic import (
    DEFAULT_ETA,
    be0_certificate,
    be0_limit_floor,
    be0_residual,
    be0_subsolution_eval,
    coupling_upper_bound,
    exact_beta_plus_nonpositive_f,
    mg_upper_bound,
    multi_solution_family,
    propL_construction,
    propL_data,
)
from ergodic_hjb.core import DomainError, Exponent, catalog

RADII = np.linspace(0.0, 50.0, 100_001)


def test_certificate_three_dimensions():
    cert = be0_certificate(3, Exponent(3.0))
    assert cert.K_m == pytest.approx(1.5**0.5, abs=1e-12)
    assert cert.beta0 == pytest.approx(1.5**1.5 / 1.5, abs=1e-12)
    assert cert.beta0 == pytest.approx(1.224745, abs=1e-6)


def test_certificate_refuses_low_dimension():
    with pytest.raises(DomainError):
        be0_certificate(1, Exponent(3.0))
    with pytest.raises(DomainError):
        be0_certificate(3, Exponent(math.inf))
    with pytest.raises(DomainError):
        be0_limit_floor(1)


def test_limit_floor():
    assert be0_limit_floor(2) == 0.5
    assert be0_limit_floor(3, C0=2.0) == 0.5


def test_subsolution_at_origin():
    cert = be0_certificate(3, Exponent(3.0))
    u, Du, lap = be0_subsolution_eval(cert, 0.0)
    assert u == pytest.approx(cert.K_m / cert.exponent.alpha)
    assert np.all(Du == 0.0)
    assert lap == pytest.approx(cert.K_m * 3)


def test_subsolution_off_origin_against_finite_differences():
    cert = be0_certificate(3, Exponent(3.0))
    x = np.array([1.0, 0.0, 0.0])
    u, Du, lap = be0_subsolution_eval(cert, x)
    K = cert.K_m
    assert np.linalg.norm(Du) == pytest.approx(K * 2**-0.75, abs=1e-14)
    assert lap == pytest.approx(K * (3 * 2**-0.75 - 1.5 * 2**-1.75), abs=1e-14)
    h = 1e-3
    fd = sum(
        be0_subsolution_eval(cert, x + h * e)[0] - 2 * u + be0_subsolution_eval(cert, x - h * e)[0]
        for e in np.eye(3)
    ) / h**2
    assert fd == pytest.approx(lap, abs=1e-6)
    grad_fd = [(be0_subsolution_eval(cert, x + h * e)[0] - be0_subsolution_eval(cert, x - h * e)[0]) / (2 * h) for e in np.eye(3)]
    assert np.allclose(grad_fd, Du, atol=1e-6)


def test_subsolution_gradient_decays():
    cert = be0_certificate(3, Exponent(3.0))
    r = 1e4
    _, Du, _ = be0_subsolution_eval(cert, r)
    assert np.linalg.norm(Du) == pytest.approx(cert.K_m * r ** (1 - cert.exponent.m_star), rel=1e-6)


@pytest.mark.parametrize("N,m", [(2, 2.5), (2, 10.0), (3, 3.0), (4, 5.0)])
def test_residual_nonpositive_up_to_beta0(N, m):
    cert = be0_certificate(N, Exponent(m))
    assert be0_residual(cert, 0.0, RADII) < 0.0
    assert be0_residual(cert, cert.beta0, RADII) <= 1e-10
    assert be0_residual(cert, -cert.beta0, RADII) <= 1e-10


def test_residual_turns_positive_beyond_beta0():
    cert = be0_certificate(3, Exponent(3.0))
    # f = -<x>^(-m*) gives nonpositive residuals for every beta >= 0; a positive profile of the
    # same size saturates the bound and the slack formula becomes positive at the origin
    positive = catalog("bracket", amplitude=1.0, q=1.5)
    assert be0_residual(cert, 2 * cert.beta0, RADII, positive) > 0.0
    assert cert.residual_margin(0.0, 2 * cert.beta0) > 0.0
    assert cert.residual_margin(0.0, cert.beta0) == pytest.approx(0.0, abs=1e-14)


def test_threshold_data_for_tent():
    data = propL_data(catalog("bump"))
    assert data.L == pytest.approx(1.0, abs=1e-12)
    assert data.K_bound == pytest.approx(1.0, abs=1e-12)
    assert data.C_slope == pytest.approx(0.0, abs=1e-12)


def test_threshold_data_for_harmonic_tail():
    data = propL_data(catalog("bracket", q=1.0))
    assert math.isinf(data.L)


def test_threshold_for_positive_potential():
    assert exact_beta_plus_nonpositive_f(catalog("zero")) == math.inf
    with pytest.raises(DomainError):
        exact_beta_plus_nonpositive_f(catalog("bump", amplitude=1.0))


def test_construction_for_tent():
    data = propL_data(catalog("bump"))
    u, up, upp = propL_construction(data, np.array([0.0, 1e3]))
    assert u[0] == 0.0 and up[0] == pytest.approx(0.0, abs=1e-14)
    assert up[1] == pytest.approx(1.0, abs=1e-12)


def test_construction_for_asymmetric_potential():
    data = propL_data(catalog("bump", center=0.5))
    assert data.C_slope < 0.0
    _, up, _ = propL_construction(data, np.array([-1e3, 1e3]))
    assert up == pytest.approx([-1.0, 1.0], abs=1e-10)
    x = np.linspace(-20, 20, 4001) + 1e-3
    assert np.max(np.abs(propL_construction(data, x)[1])) <= 1.0 + 1e-12


@pytest.mark.parametrize("name,value", [("bump", 2.0), ("exp", 1.0), ("bracket", 0.0), ("gauss", 2 / math.sqrt(math.pi))])
def test_exact_threshold(name, value):
    assert exact_beta_plus_nonpositive_f(catalog(name)) == pytest.approx(value, abs=1e-9)


def test_family_examples():
    _, up, _ = multi_solution_family(0.0, 2.0)
    assert up == pytest.approx(0.5)
    x = np.linspace(-5, 5, 1001)
    _, up, _ = multi_solution_family(0.5, x)
    assert up.min() >= 0.0 and up.max() <= 1.0
    with pytest.raises(DomainError):
        multi_solution_family(0.6, x)


@pytest.mark.parametrize("C", [-0.5, -0.25, 0.0, 0.25, 0.5])
def test_family_solves_constrained_problem(C):
    x = np.linspace(-3.0, 3.0, 10_001) + 1e-4
    u, up, upp = multi_solution_family(C, x)
    f = -np.maximum(1.0 - np.abs(x), 0.0)
    assert np.max(np.abs(np.maximum(-upp - f, np.abs(up) - 1.0))) <= 1e-12
    # u' is the antiderivative of u''
    # trapezoid rule, exact except on the three cells holding a kink of u''
    assert np.allclose(np.diff(up), 0.5 * (upp[1:] + upp[:-1]) * np.diff(x), atol=1e-6)


def test_test_function_bound_for_nonpositive_potential():
    bump = catalog("bump")
    grad = mg_upper_bound(bump, DEFAULT_ETA, 0.1, 0.1) - 0.1
    assert grad > 0.0
    # (beta f - eps)_+ vanishes, so only the gradient term scales with delta^m*
    small = mg_upper_bound(bump, DEFAULT_ETA, 0.01, 0.1) - 0.1
    assert small == pytest.approx(grad * 0.1**1.5, rel=1e-6)
    assert mg_upper_bound(bump, DEFAULT_ETA, 1e-4, 0.1) == pytest.approx(0.1, abs=1e-5)


def test_coupling_bound_negative_for_large_beta():
    bump = catalog("bump")
    assert coupling_upper_bound(bump, 10.0, Exponent(3.0)) < 0.0
    assert coupling_upper_bound(bump, 0.0, Exponent(3.0)) > 0.0
    with pytest.raises(DomainError):
        coupling_upper_bound(bump, 1.0, Exponent(3.0), radius=0.0)
    with pytest.raises(DomainError):
        mg_upper_bound(bump, DEFAULT_ETA, 0.0, 0.1)
