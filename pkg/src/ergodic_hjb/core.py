"""Shared domain types for the ergodic Hamilton-Jacobi problems.

The problems are

    lam - Lap u + |Du|^m / m - beta f = 0          (2 < m < inf)
    max(lam - Lap u - beta f, |Du| - 1) = 0        (m = inf)

on R^N with u(0) = 0. Everything here is immutable once built.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

import numpy as np


class DomainError(ValueError):
    """A parameter lies outside the range where a construction is defined."""


class Geometry(enum.Enum):
    LINE = "line"
    RADIAL = "radial"


class Method(enum.Enum):
    DIRECT_ERGODIC = "direct"
    VANISHING_DISCOUNT = "discount"
    M_SWEEP_LIMIT = "m-sweep"


SIGN_THRESHOLD = 1e-12
NEGLIGIBLE_REL = 1e-10


def bracket(x):
    """Japanese bracket <x> = sqrt(1 + |x|^2) for scalars or coordinate arrays."""
    x = np.asarray(x, dtype=float)
    return np.sqrt(1.0 + x * x)


@dataclass(frozen=True)
class Exponent:
    """Power of the gradient nonlinearity; ``m = math.inf`` is the constrained limit."""

    m: float

    def __post_init__(self):
        if math.isnan(self.m) or self.m <= 2:
            raise DomainError(f"exponent must satisfy m > 2 (got m={self.m}); m = 2 is the excluded quadratic case")

    @property
    def is_infinite(self) -> bool:
        return math.isinf(self.m)

    @property
    def kind(self) -> str:
        return "infinite" if self.is_infinite else "finite"

    @property
    def m_star(self) -> float:
        if self.is_infinite:
            return 1.0
        return self.m / (self.m - 1.0)

    @property
    def alpha(self) -> float:
        if self.is_infinite:
            return 1.0
        return (self.m - 2.0) / (self.m - 1.0)

    def hamiltonian(self, p):
        """H(p) = |p|^m / m (finite m only)."""
        p = np.abs(np.asarray(p, dtype=float))
        with np.errstate(over="ignore"):
            return p**self.m / self.m

    def hamiltonian_prime(self, p):
        p = np.asarray(p, dtype=float)
        with np.errstate(over="ignore", invalid="ignore"):
            return np.abs(p) ** (self.m - 2.0) * p

    def label(self) -> str:
        return "inf" if self.is_infinite else repr(float(self.m))


def make_exponent(kind: str = "finite", m: Optional[float] = None) -> Exponent:
    """Build an :class:`Exponent` from ``kind`` in {"finite", "infinite"}."""
    kind = kind.lower()
    if kind in ("infinite", "inf"):
        return Exponent(math.inf)
    if kind != "finite":
        raise DomainError(f"unknown exponent kind {kind!r}")
    if m is None:
        raise DomainError("finite exponent requires a value of m")
    m = float(m)
    if math.isinf(m):
        raise DomainError("use kind='infinite' for m = inf")
    return Exponent(m)


def parse_exponent(value) -> Exponent:
    if isinstance(value, Exponent):
        return value
    if isinstance(value, str) and value.strip().lower() in ("inf", "infinity", "oo"):
        return Exponent(math.inf)
    return make_exponent("finite", float(value))


# ---------------------------------------------------------------------------
# Potentials.  Profiles are frozen dataclasses so that they pickle cleanly into
# worker processes.


@dataclass(frozen=True)
class Bump:
    """a * (1 - |x - c| / w)_+ ; the default (a=-1) is the tent -(1-|x|)_+."""

    amplitude: float = -1.0
    width: float = 1.0
    center: float = 0.0

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.amplitude * np.maximum(1.0 - np.abs(x - self.center) / self.width, 0.0)

    def kinks(self):
        c, w = self.center, self.width
        return (c - w, c, c + w)


@dataclass(frozen=True)
class ExpDecay:
    """a * exp(-|x| / w)."""

    amplitude: float = -1.0
    width: float = 1.0

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.amplitude * np.exp(-np.abs(x) / self.width)

    def kinks(self):
        return (0.0,)


@dataclass(frozen=True)
class BracketPower:
    """a * <x>^(-q)."""

    amplitude: float = -1.0
    power: float = 1.0

    def __call__(self, x):
        return self.amplitude * bracket(x) ** (-self.power)

    def kinks(self):
        return ()


@dataclass(frozen=True)
class Gaussian:
    """a * exp(-|x|^2 / w^2)."""

    amplitude: float = -1.0
    width: float = 1.0

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.amplitude * np.exp(-(x / self.width) ** 2)

    def kinks(self):
        return ()


@dataclass(frozen=True)
class MexicanHat:
    """a * (1 - |x|^2/w^2) * exp(-|x|^2/w^2): positive core, negative ring (for a > 0)."""

    amplitude: float = 1.0
    width: float = 1.0

    def __call__(self, x):
        s = (np.asarray(x, dtype=float) / self.width) ** 2
        return self.amplitude * (1.0 - s) * np.exp(-s)

    def kinks(self):
        return ()


@dataclass(frozen=True)
class Constant:
    """Constant profile; violates the decay assumption and exists for test modes."""

    value: float = 0.0

    def __call__(self, x):
        return np.full(np.shape(np.asarray(x, dtype=float)), float(self.value))

    def kinks(self):
        return ()


@dataclass(frozen=True)
class Cosine:
    """a * cos(k x + phase); a bounded perturbation direction for stability tests."""

    amplitude: float = 1.0
    frequency: float = 1.0
    phase: float = 0.0

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.amplitude * np.cos(self.frequency * x + self.phase)

    def kinks(self):
        return ()


@dataclass(frozen=True)
class Combination:
    """Linear combination sum_k c_k * g_k of profiles."""

    terms: tuple  # of (coefficient, profile)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(np.shape(x))
        for c, g in self.terms:
            out = out + c * g(x)
        return out

    def kinks(self):
        ks = []
        for _, g in self.terms:
            ks.extend(getattr(g, "kinks", lambda: ())())
        return tuple(sorted(set(ks)))


@dataclass(frozen=True)
class Potential:
    """An analytic potential f with its decay certificate C0 from (A2).

    ``evaluator`` takes signed coordinates on the line or radii in the radial
    geometry. ``support_hint`` is a radius beyond which |f| is negligible.
    """

    evaluator: Callable[[Any], Any]
    decay_constant_C0: float = 1.0
    support_hint: Optional[float] = None
    name: str = "custom"

    def __post_init__(self):
        if not self.decay_constant_C0 > 0:
            raise DomainError("decay constant C0 must be positive")

    def __call__(self, x):
        return np.asarray(self.evaluator(np.asarray(x, dtype=float)), dtype=float)

    def kinks(self):
        fn = getattr(self.evaluator, "kinks", None)
        return tuple(fn()) if fn is not None else ()

    def negative_part(self, x):
        return np.maximum(-self(x), 0.0)

    def positive_part(self, x):
        return np.maximum(self(x), 0.0)

    def negated(self) -> "Potential":
        return Potential(Combination(((-1.0, self.evaluator),)), self.decay_constant_C0, self.support_hint, f"-({self.name})")

    def scaled(self, c: float) -> "Potential":
        return Potential(
            Combination(((float(c), self.evaluator),)),
            max(abs(c), 1e-300) * self.decay_constant_C0,
            self.support_hint,
            f"{c}*({self.name})",
        )

    def plus(self, other: "Potential", c: float = 1.0) -> "Potential":
        support = None
        if self.support_hint is not None and other.support_hint is not None:
            support = max(self.support_hint, other.support_hint)
        return Potential(
            Combination(((1.0, self.evaluator), (float(c), other.evaluator))),
            self.decay_constant_C0 + abs(c) * other.decay_constant_C0,
            support,
            f"{self.name}+{c}*({other.name})",
        )

    def sign_parts(self, radius: float, n: int = 200001) -> tuple[bool, bool]:
        """(f_- not identically 0, f_+ not identically 0), decided on a dense sample."""
        x = np.linspace(-radius, radius, n)
        fx = self(x)
        return bool(np.any(fx < -SIGN_THRESHOLD)), bool(np.any(fx > SIGN_THRESHOLD))


def _c0_bound(profile, m_star: float = 2.0, radius: float = 1e3) -> float:
    # numerical certificate sup |f| <x>^{m*}, inflated slightly; m* <= 2 covers every exponent
    x = np.concatenate([np.linspace(0.0, 10.0, 20001), np.geomspace(10.0, radius, 20001)])
    return float(np.max(np.abs(profile(x)) * bracket(x) ** m_star) * (1.0 + 1e-9))


def catalog(name: str, **params) -> Potential:
    """Built-in potentials by name.

    bump         a (1 - |x - c|/w)_+              (default a=-1, w=1, c=0)
    exp          a exp(-|x|/w)                     (default a=-1)
    bracket      a <x>^(-q)                        (default a=-1, q=1)
    gauss        a exp(-|x|^2/w^2)
    mexican_hat  a (1-|x|^2/w^2) exp(-|x|^2/w^2)  sign-changing
    constant     c                                 test mode only
    zero         0                                 test mode only
    """
    name = name.lower()
    C0 = params.pop("C0", None)
    if name == "bump":
        prof = Bump(float(params.pop("amplitude", -1.0)), float(params.pop("width", 1.0)), float(params.pop("center", 0.0)))
        support = abs(prof.center) + prof.width
        default_c0 = abs(prof.amplitude) if (prof.center == 0 and prof.width <= 1.0) else _c0_bound(prof)
    elif name == "exp":
        prof = ExpDecay(float(params.pop("amplitude", -1.0)), float(params.pop("width", 1.0)))
        support = None
        default_c0 = abs(prof.amplitude) if prof.width <= 1.0 else _c0_bound(prof)
    elif name == "bracket":
        prof = BracketPower(float(params.pop("amplitude", -1.0)), float(params.pop("power", params.pop("q", 1.0))))
        support = None
        default_c0 = abs(prof.amplitude)
    elif name == "gauss":
        prof = Gaussian(float(params.pop("amplitude", -1.0)), float(params.pop("width", 1.0)))
        support = None
        default_c0 = _c0_bound(prof)
    elif name in ("mexican_hat", "mexican"):
        prof = MexicanHat(float(params.pop("amplitude", 1.0)), float(params.pop("width", 1.0)))
        support = None
        default_c0 = _c0_bound(prof)
    elif name == "constant":
        prof = Constant(float(params.pop("value", params.pop("c", 1.0))))
        support = None
        default_c0 = max(abs(prof.value), 1.0)
    elif name == "zero":
        prof = Constant(0.0)
        support = 0.0
        default_c0 = 1.0
    else:
        raise DomainError(f"unknown potential {name!r}")
    if params:
        raise DomainError(f"unknown parameters for potential {name!r}: {sorted(params)}")
    return Potential(prof, float(C0) if C0 is not None else default_c0, support, name)


@dataclass
class PotentialReport:
    violations: list = field(default_factory=list)
    max_ratio: float = 0.0

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_potential(p: Potential, sample_radius: float, n_samples: int, exponent: Exponent | None = None) -> PotentialReport:
    """Check (A1)-(A2) on a sample of [-sample_radius, sample_radius].

    Returns the list of violated assumptions together with the largest observed
    ratio |f(x)| <x>^{m*} / C0 (at most 1 when (A2) holds).
    """
    if not sample_radius > 0 or n_samples < 2:
        raise DomainError("need sample_radius > 0 and n_samples >= 2")
    m_star = (exponent or Exponent(math.inf)).m_star
    x = np.linspace(-sample_radius, sample_radius, int(n_samples))
    fx = p(x)
    C0 = p.decay_constant_C0
    report = PotentialReport()
    if not np.all(np.isfinite(fx)):
        report.violations.append("f is not finite at every sample")
        return report
    envelope = C0 * bracket(x) ** (-m_star)
    ratio = np.abs(fx) * bracket(x) ** m_star / C0
    report.max_ratio = float(np.max(ratio))
    if np.max(np.abs(fx)) <= SIGN_THRESHOLD:
        report.violations.append("f ≡ 0")
        return report
    tol = 1e-12
    if np.any(np.abs(fx) > envelope * (1.0 + 1e-9) + tol):
        worst = float(x[np.argmax(ratio)])
        report.violations.append(f"decay bound |f| <= C0 <x>^(-m*) fails (worst at x={worst:.6g}, ratio {report.max_ratio:.6g})")
    edge = np.abs(fx[[0, -1]])
    if np.any(edge > max(NEGLIGIBLE_REL * C0, C0 * bracket(sample_radius) ** (-m_star) * (1.0 + 1e-9))):
        report.violations.append("f does not vanish at infinity (boundary samples too large)")
    if p.support_hint is not None:
        outside = np.abs(x) > p.support_hint
        if np.any(np.abs(fx[outside]) > NEGLIGIBLE_REL * C0):
            report.violations.append("f is not negligible beyond its support hint")
    return report


@dataclass(frozen=True)
class ProblemSpec:
    """One ergodic problem instance.

    ``shift`` adds a constant to the forcing (beta f + shift); it is a test
    mode for the shift identity and is zero for genuine problems.
    """

    dimension_N: int
    exponent: Exponent
    beta: float
    potential: Potential
    geometry: Geometry = Geometry.LINE
    shift: float = 0.0

    def __post_init__(self):
        if int(self.dimension_N) != self.dimension_N or self.dimension_N < 1:
            raise DomainError("dimension N must be a positive integer")
        if self.geometry is Geometry.LINE and self.dimension_N != 1:
            raise DomainError("line geometry requires N = 1; use the radial geometry for N >= 2")
        if not isinstance(self.exponent, Exponent):
            raise DomainError("exponent must be an Exponent")

    def forcing(self, nodes) -> np.ndarray:
        return self.beta * self.potential(nodes) + self.shift

    def with_(self, **changes) -> "ProblemSpec":
        from dataclasses import replace

        return replace(self, **changes)


@dataclass(frozen=True)
class GridFunction:
    nodes: np.ndarray
    values: np.ndarray
    spacing_h: float
    origin_index: int = 0

    def __post_init__(self):
        if len(self.nodes) != len(self.values):
            raise ValueError("nodes and values must have the same length")

    def is_normalized(self, tol: float = 0.0) -> bool:
        return abs(self.values[self.origin_index]) <= tol

    def gradient(self) -> np.ndarray:
        return np.diff(self.values) / self.spacing_h


@dataclass
class EigenEstimate:
    lam: float
    method: Method
    residual_inf_norm: float
    holder_seminorm: float = float("nan")
    diagnostics: dict = field(default_factory=dict)
    solution: Optional[GridFunction] = None

    def is_nonpositive(self, tol: float = 1e-6) -> bool:
        return self.lam <= tol


@dataclass(frozen=True)
class BetaThresholds:
    beta_plus: float
    beta_minus: float
    bracket_width: float = 0.0

    def __post_init__(self):
        if self.beta_minus > 0 or self.beta_plus < 0:
            raise DomainError("thresholds must satisfy beta_minus <= 0 <= beta_plus")
