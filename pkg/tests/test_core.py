import math
import pickle

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ergodic_hjb.core import (
    DomainError,
    Exponent,
    Geometry,
    GridFunction,
    ProblemSpec,
    bracket,
    catalog,
    make_exponent,
    parse_exponent,
    validate_potential,
)


def test_exponent_finite_three():
    ex = make_exponent("finite", 3)
    assert ex.m_star == pytest.approx(1.5)
    assert ex.alpha == pytest.approx(0.5)
    assert ex.kind == "finite"


def test_exponent_infinite_conventions():
    ex = make_exponent("infinite")
    assert ex.is_infinite and ex.m_star == 1.0 and ex.alpha == 1.0
    assert parse_exponent("inf") == ex
    assert ex.label() == "inf"


@pytest.mark.parametrize("m", [2.0, 1.5, 0.0, -3.0, math.nan])
def test_exponent_rejects_m_at_most_two(m):
    with pytest.raises(DomainError, match="m > 2"):
        Exponent(m)


def test_make_exponent_argument_errors():
    with pytest.raises(DomainError):
        make_exponent("finite")
    with pytest.raises(DomainError):
        make_exponent("finite", math.inf)
    with pytest.raises(DomainError):
        make_exponent("weird", 3)


@given(st.floats(min_value=2.0001, max_value=1e6))
def test_exponent_conjugacy(m):
    ex = Exponent(m)
    assert 1.0 / ex.m + 1.0 / ex.m_star == pytest.approx(1.0, rel=1e-12)
    assert 0.0 < ex.alpha < 1.0
    assert ex.alpha == pytest.approx(2.0 - ex.m_star, rel=1e-9, abs=1e-12)


@given(st.floats(min_value=2.0001, max_value=50.0), st.floats(min_value=-5.0, max_value=5.0))
def test_hamiltonian_derivative_matches_difference(m, p):
    ex = Exponent(m)
    h = 1e-6
    fd = (ex.hamiltonian(p + h) - ex.hamiltonian(p - h)) / (2 * h)
    assert float(ex.hamiltonian_prime(p)) == pytest.approx(float(fd), rel=1e-5, abs=1e-7)


def test_bracket_values():
    assert bracket(0.0) == 1.0
    assert bracket(1.0) == pytest.approx(math.sqrt(2.0))
    assert np.allclose(bracket(np.array([-3.0, 3.0])), math.sqrt(10.0))


def test_catalog_profiles():
    bump = catalog("bump")
    assert bump(0.0) == -1.0 and bump(0.5) == -0.5 and bump(2.0) == 0.0
    assert catalog("exp")(1.0) == pytest.approx(-math.exp(-1.0))
    assert catalog("bracket", q=1.5)(1.0) == pytest.approx(-(2.0**-0.75))
    assert catalog("gauss")(1.0) == pytest.approx(-math.exp(-1.0))
    hat = catalog("mexican_hat")
    assert hat(0.0) == 1.0 and hat(2.0) < 0.0
    assert bump.kinks() == (-1.0, 0.0, 1.0)
    with pytest.raises(DomainError):
        catalog("nope")
    with pytest.raises(DomainError):
        catalog("bump", sigma=1.0)


def test_potential_algebra():
    bump = catalog("bump")
    x = np.linspace(-2, 2, 41)
    assert np.allclose(bump.negated()(x), -bump(x))
    assert np.allclose(bump.scaled(3.0)(x), 3.0 * bump(x))
    assert np.allclose(bump.plus(catalog("exp"), 0.5)(x), bump(x) + 0.5 * catalog("exp")(x))
    assert np.allclose(bump.negative_part(x) - bump.positive_part(x), -bump(x))
    assert bump.sign_parts(5.0) == (True, False)
    assert catalog("mexican_hat").sign_parts(5.0) == (True, True)
    # profiles must survive a trip to a worker process
    assert np.allclose(pickle.loads(pickle.dumps(bump.plus(catalog("gauss"))))(x), bump(x) + catalog("gauss")(x))


def test_validate_potential_bump_is_clean():
    report = validate_potential(catalog("bump"), 50.0, 10001, Exponent(math.inf))
    assert report.ok, report.violations
    assert report.max_ratio <= 1.0


def test_validate_potential_zero():
    report = validate_potential(catalog("zero"), 50.0, 1001)
    assert report.violations == ["f ≡ 0"]


def test_validate_potential_constant_does_not_decay():
    report = validate_potential(catalog("constant", value=1.0), 50.0, 1001, Exponent(3.0))
    assert not report.ok
    assert any("decay" in v or "vanish" in v for v in report.violations)


def test_problem_spec_checks():
    bump = catalog("bump")
    with pytest.raises(DomainError):
        ProblemSpec(2, Exponent(3.0), 1.0, bump, Geometry.LINE)
    with pytest.raises(DomainError):
        ProblemSpec(0, Exponent(3.0), 1.0, bump, Geometry.RADIAL)
    spec = ProblemSpec(1, Exponent(3.0), 2.0, bump)
    assert spec.with_(beta=1.0).beta == 1.0
    assert spec.forcing(0.0) == -2.0


def test_grid_function_normalization():
    u = GridFunction(np.array([-1.0, 0.0, 1.0]), np.array([1.0, 0.0, 2.0]), 1.0, 1)
    assert u.is_normalized()
    assert np.allclose(u.gradient(), [-1.0, 2.0])
