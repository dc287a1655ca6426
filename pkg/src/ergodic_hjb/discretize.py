"""Monotone finite differences for the discounted and ergodic operators.

Nodal residuals (z is delta*v for the discounted problem, lam for the ergodic one)::

    finite m :  z - Lap_h v + H_G(p-, p+) - g
    m = inf  :  max(z - Lap_h v - g, |Dv|_G - 1)

with g = beta f (+ shift), the Godunov flux H_G(p-, p+) = max(H(p-_+), H(p+_-))
and the Rouy-Tourin magnitude |Dv|_G = max(p-_+, -(p+)_-).

Boundary rows
-------------
NEUMANN        ghost reflection.
DIRICHLET_ZERO row replaced by v_b = 0 (discounted problems only).
OUTFLOW        the far-field equation: the second-order term is dropped, only
               the inward one-sided slope is kept and the forcing takes its
               limit at infinity (f -> 0, so only the shift remains):
               z + H(slope_out_+) - g_inf = 0, resp. max(z - g_inf, slope_out_+ - 1) = 0.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .core import DomainError, Exponent, Geometry, ProblemSpec


class BoundaryCondition(enum.Enum):
    NEUMANN = "neumann"
    DIRICHLET_ZERO = "dirichlet"
    OUTFLOW = "outflow"


def parse_bc(value) -> BoundaryCondition:
    if isinstance(value, BoundaryCondition):
        return value
    return BoundaryCondition(str(value).strip().lower())


@dataclass(frozen=True)
class Mesh:
    """Uniform mesh on [-R, R] (line) or [0, R] (radial, dimension ``dim``)."""

    geometry: Geometry
    R: float
    n_cells: int
    dim: int = 1

    def __post_init__(self):
        if not self.R > 0 or self.n_cells < 2:
            raise DomainError("mesh needs R > 0 and at least two cells")
        if self.geometry is Geometry.LINE and self.n_cells % 2:
            raise DomainError("line meshes need an even number of cells so that 0 is a node")
        if self.geometry is Geometry.LINE and self.dim != 1:
            raise DomainError("line geometry is one-dimensional")

    @property
    def h(self) -> float:
        if self.geometry is Geometry.LINE:
            return 2.0 * self.R / self.n_cells
        return self.R / self.n_cells

    @property
    def nodes(self) -> np.ndarray:
        if self.geometry is Geometry.LINE:
            return np.linspace(-self.R, self.R, self.n_cells + 1)
        return np.linspace(0.0, self.R, self.n_cells + 1)

    @property
    def size(self) -> int:
        return self.n_cells + 1

    @property
    def origin(self) -> int:
        return self.n_cells // 2 if self.geometry is Geometry.LINE else 0

    @classmethod
    def for_spec(cls, spec: ProblemSpec, R: float, n_cells: int) -> "Mesh":
        return cls(spec.geometry, float(R), int(n_cells), int(spec.dimension_N))


def default_radius(spec: ProblemSpec, R_max: float = 200.0, R_min: float = 20.0) -> float:
    """Smallest R with C0 <R>^(-m*) < 1e-6 max|f|, clipped to [R_min, R_max]."""
    pot = spec.potential
    if pot.support_hint is not None:
        return float(np.clip(max(2.0 * pot.support_hint, R_min), R_min, R_max))
    x = np.linspace(0.0, R_max, 4001)
    fmax = float(np.max(np.abs(pot(x)))) or 1.0
    target = 1e-6 * fmax / pot.decay_constant_C0
    m_star = spec.exponent.m_star
    R = np.sqrt(max(target ** (-2.0 / m_star) - 1.0, 0.0))
    return float(np.clip(R, R_min, R_max))


def laplacian_row(mesh: Mesh, i: int) -> dict:
    """Stencil {offset: coefficient} of the discrete Laplacian at interior node i.

    Radial rows use central differences for (N-1)/r d/dr and the symmetry limit
    2N (v_1 - v_0)/h^2 at r = 0. Where the central drift would break monotonicity
    (r < (N-1) h / 2, only for N > 3) a forward difference is used instead.
    """
    h = mesh.h
    if not 0 <= i <= mesh.n_cells:
        raise IndexError(i)
    if mesh.geometry is Geometry.LINE:
        if i in (0, mesh.n_cells):
            raise DomainError("boundary rows depend on the boundary condition")
        return {-1: 1.0 / h**2, 0: -2.0 / h**2, 1: 1.0 / h**2}
    N = mesh.dim
    if i == 0:
        return {0: -2.0 * N / h**2, 1: 2.0 * N / h**2}
    if i == mesh.n_cells:
        raise DomainError("boundary rows depend on the boundary condition")
    q = (N - 1) / (2.0 * i)  # drift weight b h / 2 with b = (N-1)/r, r = i h
    if 2 * i >= N - 1:  # central drift keeps the v_{i-1} weight nonnegative
        return {-1: (1.0 - q) / h**2, 0: -2.0 / h**2, 1: (1.0 + q) / h**2}
    return {-1: 1.0 / h**2, 0: -(2.0 + 2.0 * q) / h**2, 1: (1.0 + 2.0 * q) / h**2}


def godunov_hamiltonian(exponent: Exponent, p_minus, p_plus):
    """Godunov flux max(H(max(p-, 0)), H(min(p+, 0))) for H(p) = |p|^m / m."""
    if exponent.is_infinite:
        raise DomainError("the Godunov flux is defined for finite m; use rouy_tourin_norm for m = inf")
    a = exponent.hamiltonian(np.maximum(p_minus, 0.0))
    b = exponent.hamiltonian(np.minimum(p_plus, 0.0))
    return np.maximum(a, b)


def rouy_tourin_norm(p_minus, p_plus):
    return np.maximum(np.maximum(p_minus, 0.0), -np.minimum(p_plus, 0.0))


def _build_stencils(mesh: Mesh, bc: BoundaryCondition):
    n = mesh.size
    h = mesh.h
    lo, di, up = np.zeros(n - 1), np.zeros(n), np.zeros(n - 1)  # Laplacian bands
    for i in range(1, n - 1):
        row = laplacian_row(mesh, i)
        lo[i - 1], di[i], up[i] = row[-1], row[0], row[1]
    if mesh.geometry is Geometry.RADIAL:
        row = laplacian_row(mesh, 0)
        di[0], up[0] = row[0], row[1]
    # backward and forward one-sided differences, ghost-folded
    dm_lo, dm_di = np.full(n - 1, -1.0 / h), np.full(n, 1.0 / h)
    dp_di, dp_up = np.full(n, -1.0 / h), np.full(n - 1, 1.0 / h)
    dm_up0 = 0.0  # coefficient of v_1 in the row-0 backward difference (reflection)
    dp_lon = 0.0  # coefficient of v_{n-2} in the row-(n-1) forward difference
    dm_di[0] = 0.0
    dp_di[-1] = 0.0
    if mesh.geometry is Geometry.RADIAL:
        dm_di[0], dm_up0 = 1.0 / h, -1.0 / h
    ends = [n - 1] if mesh.geometry is Geometry.RADIAL else [0, n - 1]
    for e in ends:
        if bc is BoundaryCondition.NEUMANN:
            if e == 0:
                di[0], up[0] = -2.0 / h**2, 2.0 / h**2
                dm_di[0], dm_up0 = 1.0 / h, -1.0 / h
            else:
                lo[-1], di[-1] = 2.0 / h**2, -2.0 / h**2
                dp_di[-1], dp_lon = -1.0 / h, 1.0 / h
        # OUTFLOW and DIRICHLET_ZERO rows keep a zero Laplacian and drop the outward slope
    L = sp.diags([lo, di, up], [-1, 0, 1], format="csr")
    Dm = sp.diags([dm_lo, dm_di, np.r_[dm_up0, np.zeros(n - 2)]], [-1, 0, 1], format="lil")
    Dp = sp.diags([np.r_[np.zeros(n - 2), dp_lon], dp_di, dp_up], [-1, 0, 1], format="lil")
    return L, Dm.tocsr(), Dp.tocsr(), ends


@dataclass
class DiscreteOperator:
    """Assembled residual map; immutable once built.

    ``delta`` multiplies v in the zeroth-order term. Ergodic operators have
    ``delta = 0`` and take the eigenvalue ``lam`` as an argument instead.
    """

    mesh: Mesh
    exponent: Exponent
    forcing: np.ndarray
    delta: float
    bc: BoundaryCondition
    L: sp.csr_matrix = field(repr=False)
    Dm: sp.csr_matrix = field(repr=False)
    Dp: sp.csr_matrix = field(repr=False)
    dirichlet: np.ndarray = field(repr=False)
    boundary_rows: tuple = ()

    @property
    def ergodic(self) -> bool:
        return self.delta == 0.0

    def slopes(self, v):
        return self.Dm @ v, self.Dp @ v

    def _pieces(self, v, lam):
        z = self.delta * v + lam
        pm, pp = self.slopes(v)
        lin = z - self.L @ v - self.forcing
        return lin, pm, pp

    def residual(self, v, lam: float = 0.0) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        lin, pm, pp = self._pieces(v, lam)
        if self.exponent.is_infinite:
            F = np.maximum(lin, rouy_tourin_norm(pm, pp) - 1.0)
        else:
            F = lin + godunov_hamiltonian(self.exponent, pm, pp)
        F[self.dirichlet] = v[self.dirichlet]
        return F

    def branches(self, v, lam: float = 0.0) -> np.ndarray:
        """Active branch per node for m = inf: 0 PDE, 1 backward slope, 2 forward slope.

        Ties go to the PDE branch.
        """
        lin, pm, pp = self._pieces(np.asarray(v, dtype=float), lam)
        cand = np.vstack([lin, pm - 1.0, -pp - 1.0])
        choice = np.argmax(cand, axis=0)
        choice[(cand[0] >= cand[1]) & (cand[0] >= cand[2])] = 0
        return choice

    def jacobian(self, v, lam: float = 0.0):
        """Generalized Jacobian dF/dv (sparse, tridiagonal) and the column dF/dlam.

        For m = inf this is the Jacobian of the Howard system
        max(PDE, p- - 1, -p+ - 1), which coincides with the residual wherever
        it is >= -1 (in particular near every root).
        """
        v = np.asarray(v, dtype=float)
        n = v.size
        I = sp.identity(n, format="csr")
        base = self.delta * I - self.L
        if self.exponent.is_infinite:
            choice = self.branches(v, lam)
            sel = [sp.diags((choice == k).astype(float)) for k in range(3)]
            J = sel[0] @ base + sel[1] @ self.Dm - sel[2] @ self.Dp
            dlam = (choice == 0).astype(float)
        else:
            pm, pp = self.slopes(v)
            ex = self.exponent
            a = ex.hamiltonian(np.maximum(pm, 0.0))
            b = ex.hamiltonian(np.minimum(pp, 0.0))
            use_a = a >= b
            wa = np.where(use_a, ex.hamiltonian_prime(np.maximum(pm, 0.0)), 0.0)
            wb = np.where(use_a, 0.0, ex.hamiltonian_prime(np.minimum(pp, 0.0)))
            J = base + sp.diags(wa) @ self.Dm + sp.diags(wb) @ self.Dp
            dlam = np.ones(n)
        if np.any(self.dirichlet):
            keep = sp.diags((~self.dirichlet).astype(float))
            J = keep @ J + sp.diags(self.dirichlet.astype(float))
            dlam = np.where(self.dirichlet, 0.0, dlam)
        return J.tocsr(), dlam

    def gradient_norm(self, v) -> np.ndarray:
        pm, pp = self.slopes(np.asarray(v, dtype=float))
        return rouy_tourin_norm(pm, pp)


def _assemble(mesh: Mesh, spec: ProblemSpec, delta: float, bc) -> DiscreteOperator:
    bc = parse_bc(bc)
    if spec.geometry is not mesh.geometry or (mesh.geometry is Geometry.RADIAL and spec.dimension_N != mesh.dim):
        raise DomainError("mesh geometry and dimension must match the problem")
    L, Dm, Dp, ends = _build_stencils(mesh, bc)
    dirichlet = np.zeros(mesh.size, dtype=bool)
    if bc is BoundaryCondition.DIRICHLET_ZERO:
        if delta <= 0:
            raise DomainError("zero Dirichlet data does not determine an ergodic constant; use it with delta > 0")
        dirichlet[ends] = True
    g = spec.forcing(mesh.nodes)
    if bc is BoundaryCondition.OUTFLOW:
        # far-field rows see the limit of beta f + shift at infinity, i.e. the shift alone
        g[list(ends)] = spec.shift
    return DiscreteOperator(mesh, spec.exponent, g, float(delta), bc, L, Dm, Dp, dirichlet, tuple(ends))


def assemble_discounted(mesh: Mesh, spec: ProblemSpec, delta: float, bc=BoundaryCondition.OUTFLOW) -> DiscreteOperator:
    """delta v - Lap v + H_G(Dv) - beta f = 0 (finite m)."""
    if spec.exponent.is_infinite:
        raise DomainError("assemble_discounted needs a finite exponent; use assemble_constrained")
    if not delta > 0:
        raise DomainError("discount factor must be positive")
    return _assemble(mesh, spec, delta, bc)


def assemble_constrained(mesh: Mesh, spec: ProblemSpec, delta: float, bc=BoundaryCondition.OUTFLOW) -> DiscreteOperator:
    """max(delta v - Lap v - beta f, |Dv|_G - 1) = 0 (m = inf)."""
    if not spec.exponent.is_infinite:
        raise DomainError("assemble_constrained needs m = inf")
    if not delta > 0:
        raise DomainError("discount factor must be positive")
    return _assemble(mesh, spec, delta, bc)


def assemble_ergodic(mesh: Mesh, spec: ProblemSpec, bc=BoundaryCondition.OUTFLOW) -> DiscreteOperator:
    """Ergodic operator; evaluate with ``residual(u, lam)``."""
    return _assemble(mesh, spec, 0.0, bc)
