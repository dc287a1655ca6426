"""Closed-form constructions, bounds and exact thresholds used as oracles."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import integrate
from scipy.special import gamma, roots_legendre

from .core import DomainError, Exponent, Potential, bracket


class QuadratureError(ArithmeticError):
    """A quadrature did not produce a finite, meaningful value."""


# ---------------------------------------------------------------------------
# smooth radial subsolution for N >= 2


@dataclass(frozen=True)
class Be0Certificate:
    """Subsolution u = (K/alpha) <x>^alpha certifying lam = 0 for |beta| <= beta0.

    Valid for f with |f| <= C0 <x>^(-m*) in dimension N > m*.
    """

    N: int
    exponent: Exponent
    C0: float
    K_m: float
    beta0: float

    def residual_margin(self, x, beta: float = 0.0):
        """Upper bound <x>^(-m*) (|beta| C0 - (N - m*)^m* / m*) on the subsolution residual."""
        pts = _as_points(self.N, x)
        ms = self.exponent.m_star
        out = bracket(np.linalg.norm(pts, axis=1)) ** (-ms) * (abs(beta) * self.C0 - (self.N - ms) ** ms / ms)
        return float(out[0]) if np.ndim(x) == 0 else out


def be0_certificate(N: int, exponent: Exponent, C0: float = 1.0) -> Be0Certificate:
    if exponent.is_infinite:
        raise DomainError("the smooth subsolution is built for finite m; use be0_limit_floor for m = inf")
    if not C0 > 0:
        raise DomainError("C0 must be positive")
    ms = exponent.m_star
    if N <= ms:
        raise DomainError(f"the construction needs N > m* (got N={N}, m*={ms:.6g})")
    K = (N - ms) ** (1.0 / (exponent.m - 1.0))
    beta0 = (N - ms) ** ms / (ms * C0)
    return Be0Certificate(int(N), exponent, float(C0), float(K), float(beta0))


def be0_limit_floor(N: int, C0: float = 1.0) -> float:
    """Coupling (N - 1) / (2 C0) below which lam = 0 for every large m and for m = inf."""
    if N < 2:
        raise DomainError("the floor needs N >= 2")
    return (N - 1) / (2.0 * C0)


def _as_points(cert_N: int, x):
    """Points as an (k, N) array; scalars and 1-D arrays are read as radii along e_1."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1)
    if x.ndim == 1 and not (cert_N > 1 and x.size == cert_N):
        pts = np.zeros((x.size, cert_N))
        pts[:, 0] = x
        return pts
    return np.atleast_2d(x)


def be0_subsolution_eval(cert: Be0Certificate, x):
    """(u, Du, Laplacian u) at one point x (scalar radius or N-vector)."""
    pts = _as_points(cert.N, x)
    if pts.shape[0] != 1:
        raise ValueError("be0_subsolution_eval takes a single point")
    p = pts[0]
    r2 = float(p @ p)
    b = math.sqrt(1.0 + r2)
    K, ms, a = cert.K_m, cert.exponent.m_star, cert.exponent.alpha
    u = K / a * b**a
    Du = K * b ** (-ms) * p
    lap = K * cert.N * b ** (-ms) - K * ms * b ** (-ms - 2.0) * r2
    return u, Du, lap


def be0_residual(cert: Be0Certificate, beta: float, sample_points, potential: Optional[Potential] = None) -> float:
    """max over samples of -Lap u + |Du|^m/m + beta f; nonpositive certifies a subsolution.

    The default potential is f = -C0 <x>^(-m*), which saturates the decay bound.
    """
    pts = _as_points(cert.N, sample_points)
    r2 = np.einsum("ij,ij->i", pts, pts)
    r = np.sqrt(r2)
    b = np.sqrt(1.0 + r2)
    K, m, ms = cert.K_m, cert.exponent.m, cert.exponent.m_star
    lap = K * cert.N * b ** (-ms) - K * ms * b ** (-ms - 2.0) * r2
    grad = abs(K) * b ** (-ms) * r
    f = -cert.C0 * b ** (-ms) if potential is None else potential(r)
    return float(np.max(-lap + grad**m / m + beta * f))


# ---------------------------------------------------------------------------
# one-dimensional threshold data


_GL_X, _GL_W = roots_legendre(8)


def _cell_integrals(fn, edges):
    """Integral of fn over each cell [edges[k], edges[k+1]] by 8-point Gauss-Legendre."""
    a, b = edges[:-1], edges[1:]
    mid, half = (a + b) / 2.0, (b - a) / 2.0
    x = mid[:, None] + half[:, None] * _GL_X[None, :]
    return half * (fn(x) @ _GL_W)


def _panel_edges(radius: float):
    """Breakpoints 0, +-1, +-2, +-4, ... up to the radius; quad converges panel by panel."""
    pos = [0.0]
    t = 1.0
    while t < radius:
        pos.append(t)
        t *= 2.0
    pos.append(radius)
    pos = np.array(pos)
    return np.concatenate([-pos[:0:-1], pos])


def integrate_line(fn, lo: float, hi: float, kinks=(), epsabs: float = 1e-13) -> float:
    """Adaptive quadrature of fn over [lo, hi], split at panel edges and kinks."""
    edges = set(e for e in _panel_edges(max(abs(lo), abs(hi))) if lo < e < hi)
    edges.update(k for k in kinks if lo < k < hi)
    edges = [lo] + sorted(edges) + [hi]
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        val, _ = integrate.quad(lambda t: float(fn(np.array(t))), a, b, epsabs=epsabs, epsrel=1e-12, limit=200)
        total += val
    if not math.isfinite(total):
        raise QuadratureError("integral is not finite")
    return total


def _half_line_integral(fn, radius: float, kinks, sign: int, tol: float):
    """Integral of fn over [0, sign*inf) with a doubling tail test.

    Returns (value, converged). The tail beyond 4R is extrapolated geometrically
    from the pieces on [R, 2R] and [2R, 4R]; a ratio near 1 means divergence.
    """
    piece = lambda a, b: integrate_line(fn, *sorted((sign * a, sign * b)), kinks=kinks)
    core = piece(0.0, radius)
    t1 = piece(radius, 2 * radius)
    t2 = piece(2 * radius, 4 * radius)
    total = core + t1 + t2
    if abs(t2) <= tol:
        return total, True
    rho = t2 / t1 if t1 != 0 else math.inf
    if not 0 <= rho < 0.95:
        return math.inf, False
    return total + t2 * rho / (1.0 - rho), True


@dataclass(frozen=True)
class PropLData:
    """Integrals governing the coupling threshold on the line.

    L = int f_-, K_bound = sup_{x<y} int_x^y (-f), C_slope is the slope constant
    making u' = (2/L) F + C tend to +-1 at +-inf, and F(y) = int_0^y f_-.
    """

    L: float
    K_bound: float
    C_slope: float
    F: Callable
    U: Callable  # int_0^x F
    potential: Potential
    mass_left: float = math.nan
    mass_right: float = math.nan


class _Antiderivative:
    """Monotone tabulated antiderivative of a nonnegative integrand, exact per GL cell."""

    def __init__(self, fn, radius, n, kinks=()):
        edges = np.union1d(np.linspace(-radius, radius, n + 1), [k for k in kinks if -radius < k < radius])
        edges = np.union1d(edges, [0.0])
        self.fn, self.edges = fn, edges
        cells = _cell_integrals(fn, edges)
        cum = np.concatenate([[0.0], np.cumsum(cells)])
        k0 = int(np.searchsorted(edges, 0.0))
        self.values = cum - cum[k0]
        # first moments for int_0^x F = x F(x) - int_0^x t fn(t) dt
        mom = _cell_integrals(lambda t: t * fn(t), edges)
        cum_m = np.concatenate([[0.0], np.cumsum(mom)])
        self.moments = cum_m - cum_m[k0]

    def _partial(self, fn, x):
        k = np.clip(np.searchsorted(self.edges, x, side="right") - 1, 0, self.edges.size - 2)
        a = self.edges[k]
        half = (x - a) / 2.0
        pts = (a + half)[..., None] + half[..., None] * _GL_X
        return k, half * (fn(pts) @ _GL_W)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        k, part = self._partial(self.fn, x)
        return self.values[k] + part

    def first_moment(self, x):
        x = np.asarray(x, dtype=float)
        k, part = self._partial(lambda t: t * self.fn(t), x)
        return self.moments[k] + part


def propL_data(p: Potential, quadrature_radius: float = 100.0, quadrature_n: int = 100_000, tail_tol: float = 1e-9) -> PropLData:
    """Threshold integrals of a one-dimensional potential.

    Integrals are tabulated cell by cell on [-R, R] (Gauss-Legendre per cell);
    tails beyond R come from the doubling test of ``_half_line_integral`` and a
    divergent tail makes the corresponding quantity infinite.
    """
    if not quadrature_radius > 0 or quadrature_n < 2:
        raise DomainError("need a positive quadrature radius and at least two points")
    R = float(quadrature_radius)
    kinks = tuple(p.kinks())
    f_minus = lambda x: np.maximum(-p(x), 0.0)
    neg_f = lambda x: -p(x)

    F = _Antiderivative(f_minus, R, quadrature_n, kinks)
    G = _Antiderivative(neg_f, R, quadrature_n, kinks)

    def tails(fn, table):
        out = []
        for sign in (-1, +1):
            total, ok = _half_line_integral(fn, R, kinks, sign, tail_tol)
            core = sign * float(table(sign * R))
            out.append(total - core if ok else math.inf)
        return out

    left_tail, right_tail = tails(f_minus, F)
    left_mass = -float(F(-R)) + left_tail
    right_mass = float(F(R)) + right_tail
    L = left_mass + right_mass

    # K_bound = sup_{x<y} G(y) - G(x), with the tails appended as end values
    g_left, g_right = tails(neg_f, G)
    if math.isinf(g_left) or math.isinf(g_right):
        K_bound = math.inf
    else:
        Gv = np.concatenate([[G.values[0] - g_left], G.values, [G.values[-1] + g_right]])
        K_bound = float(np.max(Gv - np.minimum.accumulate(Gv)))

    C = (left_mass - right_mass) / L if (math.isfinite(L) and L > 0) else math.nan

    def F_ext(x):
        x = np.asarray(x, dtype=float)
        val = np.array(F(np.clip(x, -R, R)), dtype=float)
        outer = np.abs(x) > R
        if np.any(outer):
            val[outer] += [np.sign(t) * integrate_line(f_minus, *sorted((np.sign(t) * R, t)), kinks=kinks) for t in x[outer]]
        return val

    def U(x):
        x = np.asarray(x, dtype=float)
        inside = np.clip(x, -R, R)
        val = np.array(inside * F(inside) - F.first_moment(inside), dtype=float)
        outer = np.abs(x) > R
        if np.any(outer):
            val[outer] += [np.sign(t) * integrate_line(F_ext, *sorted((np.sign(t) * R, t))) for t in x[outer]]
        return val

    return PropLData(float(L), K_bound, float(C), F_ext, U, p, float(left_mass), float(right_mass))


def propL_construction(data: PropLData, x):
    """(u, u', u'') of u = (2/L) int_0^x F + C x, a subsolution at lam = 0, beta = 2/L."""
    L = data.L
    if not (math.isfinite(L) and L > 0):
        raise DomainError(f"the construction needs 0 < L < inf (got L={L})")
    beta0 = 2.0 / L
    x = np.asarray(x, dtype=float)
    u = beta0 * data.U(x) + data.C_slope * x
    up = beta0 * data.F(x) + data.C_slope
    upp = beta0 * data.potential.negative_part(x)
    return u, up, upp


def exact_beta_plus_nonpositive_f(p: Potential, quadrature_radius: float = 100.0, sample_radius: float = 1000.0) -> float:
    """2 / int |f| for f <= 0; zero when the integral diverges."""
    x = np.linspace(-sample_radius, sample_radius, 200_001)
    if np.any(p(x) > 1e-12):
        raise DomainError("the exact threshold formula needs f <= 0")
    data = propL_data(p, quadrature_radius)
    if not math.isfinite(data.L):
        return 0.0
    if data.L <= 0:
        return math.inf
    return 2.0 / data.L


# ---------------------------------------------------------------------------
# explicit solution family for the tent potential


def _tent_F(y):
    y = np.asarray(y, dtype=float)
    a = np.minimum(np.abs(y), 1.0)
    return np.sign(y) * (a - a * a / 2.0)


def multi_solution_family(C: float, x):
    """(u, u', u'') of u = int_0^x F + C x with F(y) = int_0^y (1-|t|)_+ dt.

    Exact solutions of max(-u'' - f, |u'| - 1) = 0, lam = 0, f = -(1-|x|)_+,
    for every |C| <= 1/2.
    """
    if not abs(C) <= 0.5:
        raise DomainError(f"the family is defined for |C| <= 1/2 (got C={C})")
    x = np.asarray(x, dtype=float)
    a = np.abs(x)
    inner = a * a / 2.0 - a**3 / 6.0
    outer = 1.0 / 3.0 + (a - 1.0) / 2.0
    u = np.where(a <= 1.0, inner, outer) + C * x
    up = _tent_F(x) + C
    upp = np.maximum(1.0 - a, 0.0)
    return u, up, upp


# ---------------------------------------------------------------------------
# test-function upper bounds


@dataclass(frozen=True)
class TestFunction:
    """Radial profile eta(r) supported in r < 1 with derivative d eta/dr."""

    value: Callable
    derivative: Callable
    name: str = "custom"

    __test__ = False  # not a pytest class


def _smooth_bump(r):
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    inside = np.abs(r) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - r[inside] ** 2))
    return out


def _smooth_bump_prime(r):
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    inside = np.abs(r) < 1.0
    ri = r[inside]
    out[inside] = np.exp(-1.0 / (1.0 - ri**2)) * (-2.0 * ri / (1.0 - ri**2) ** 2)
    return out


DEFAULT_ETA = TestFunction(_smooth_bump, _smooth_bump_prime, "exp(-1/(1-r^2))")


def _sphere_area(N: int) -> float:
    return 2.0 * math.pi ** (N / 2.0) / gamma(N / 2.0)


def _radial_integral(g, N: int, lo: float = 0.0, hi: float = 1.0) -> float:
    """int over the ball of g(|y|) for N >= 2, or over [-1, 1] of g(y) for N = 1."""
    if N == 1:
        val, _ = integrate.quad(lambda t: float(g(np.array(t))), -hi, hi, points=[0.0], limit=200, epsabs=1e-13)
    else:
        val, _ = integrate.quad(lambda t: float(g(np.array(t))) * t ** (N - 1), lo, hi, limit=200, epsabs=1e-13)
        val *= _sphere_area(N)
    if not math.isfinite(val):
        raise QuadratureError("test-function integral is not finite")
    return val


def _normalized_eta(eta: TestFunction, m_star: float, N: int):
    mass = _radial_integral(lambda r: np.abs(eta.value(r)) ** m_star, N)
    if not (math.isfinite(mass) and mass > 0):
        raise QuadratureError("eta^m* is not integrable or vanishes")
    c = mass ** (-1.0 / m_star)
    return (lambda r: c * eta.value(r)), (lambda r: c * eta.derivative(r))


def mg_upper_bound(
    p: Potential,
    eta: TestFunction = DEFAULT_ETA,
    delta: float = 0.1,
    epsilon: float = 0.1,
    exponent: Exponent = Exponent(3.0),
    N: int = 1,
    beta: float = 1.0,
) -> float:
    """eps + int (beta f - eps)_+ eta_delta^m* + (delta^m*/m*) int |D eta|^m*.

    eta_delta(x) = delta^(N/m*) eta(delta x) with eta normalized so that
    int eta^m* = 1; the first integral is evaluated in the variable y = delta x.
    """
    if not (delta > 0 and epsilon > 0):
        raise DomainError("delta and epsilon must be positive")
    ms = exponent.m_star
    e, de = _normalized_eta(eta, ms, N)
    forcing = lambda y: np.maximum(beta * p(np.asarray(y) / delta) - epsilon, 0.0) * np.abs(e(np.abs(y))) ** ms
    if N == 1:
        kinks = sorted({0.0, *[delta * k for k in p.kinks() if abs(delta * k) < 1.0]})
        first = sum(
            integrate.quad(lambda t: float(forcing(np.array(t))), a, b, limit=200, epsabs=1e-13)[0]
            for a, b in zip([-1.0] + kinks, kinks + [1.0])
        )
    else:
        first = _radial_integral(forcing, N)
    grad = _radial_integral(lambda r: np.abs(de(np.abs(r))) ** ms, N)
    bound = epsilon + first + delta**ms / ms * grad
    if not math.isfinite(bound):
        raise QuadratureError("bound is not finite")
    return float(bound)


def coupling_upper_bound(
    p: Potential,
    beta: float,
    exponent: Exponent,
    eta: TestFunction = DEFAULT_ETA,
    center: float = 0.0,
    radius: float = 1.0,
    N: int = 1,
) -> float:
    """-beta int f_- eta^m* + (1/m*) int |D eta|^m* for eta rescaled to B(center, radius).

    eta is normalized in L^m*; the bound is informative when the ball lies
    inside the support of f_-.
    """
    if not radius > 0:
        raise DomainError("radius must be positive")
    ms = exponent.m_star
    e, de = _normalized_eta(eta, ms, N)
    # eta_r(x) = radius^(-N/m*) eta((x - c)/radius) keeps the L^m* norm
    if N == 1:
        mass, _ = integrate.quad(
            lambda t: float(p.negative_part(np.array(center + radius * t))) * abs(float(e(np.array(abs(t))))) ** ms,
            -1.0,
            1.0,
            points=[0.0],
            limit=200,
            epsabs=1e-13,
        )
    else:
        if center != 0.0:
            raise DomainError("radial bounds are centred at the origin")
        mass = _radial_integral(lambda r: p.negative_part(radius * r) * np.abs(e(r)) ** ms, N)
    grad = _radial_integral(lambda r: np.abs(de(np.abs(r))) ** ms, N) * radius ** (-ms)
    return float(-beta * mass + grad / ms)
