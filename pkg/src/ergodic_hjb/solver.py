"""Nonlinear solvers for the discounted and ergodic discrete systems.

Finite m: damped Newton (backtracking by halves on the residual sup-norm).
m = inf, discounted: Howard policy iteration over the three branches.
m = inf, ergodic: the discrete eigenvalue is the largest level admitting a
discrete subsolution; it is found by marching the minimal slope sequence and
a scalar root find (the augmented active-set system is degenerate in lam).
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.linalg import solve_banded
from scipy.optimize import brentq
from scipy.sparse.linalg import MatrixRankWarning, spsolve

from .core import DomainError, Exponent, Geometry, GridFunction, ProblemSpec, bracket
from .discretize import BoundaryCondition, DiscreteOperator, Mesh, assemble_ergodic, parse_bc

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10
MIN_STEP = 1e-12


@dataclass
class SolveReport:
    iterations: int = 0
    final_residual: float = math.inf
    damping: list = field(default_factory=list)
    converged: bool = False
    note: str = ""


class SolverError(RuntimeError):
    def __init__(self, message, report: SolveReport | None = None):
        super().__init__(message)
        self.report = report


class NoConvergence(SolverError):
    pass


class StepFailure(SolverError):
    pass


class SingularJacobian(SolverError):
    def __init__(self, message, report=None, condition=math.inf):
        super().__init__(message, report)
        self.condition = condition


def _inf_norm(F) -> float:
    F = np.asarray(F)
    if not np.all(np.isfinite(F)):
        return math.inf
    return float(np.max(np.abs(F))) if F.size else 0.0


def _solve_tridiag(J, rhs):
    J = J.todia()
    n = J.shape[0]
    ab = np.zeros((3, n))
    ab[0, 1:] = J.diagonal(1)
    ab[1, :] = J.diagonal(0)
    ab[2, :-1] = J.diagonal(-1)
    with np.errstate(all="ignore"):
        try:
            x = solve_banded((1, 1), ab, rhs, check_finite=False)
        except (np.linalg.LinAlgError, ValueError):
            return None
    return x if np.all(np.isfinite(x)) else None


def _solve_sparse(J, rhs):
    with warnings.catch_warnings():
        warnings.simplefilter("error", MatrixRankWarning)
        try:
            with np.errstate(all="ignore"):
                x = spsolve(J.tocsc(), rhs)
        except (MatrixRankWarning, RuntimeError, ValueError):
            return None
    return x if np.all(np.isfinite(x)) else None


def _condition_estimate(J) -> float:
    try:
        return float(np.linalg.cond(J.toarray())) if J.shape[0] <= 2000 else math.inf
    except np.linalg.LinAlgError:
        return math.inf


def damped_newton(residual, newton_step, x0, tol=DEFAULT_TOL, max_iter=100, what="Newton", scale=None):
    """Damped Newton iteration.

    ``newton_step(x, F)`` returns the correction dx solving J(x) dx = -F, or
    None when J(x) is singular. Steps are halved until the residual sup-norm
    decreases; non-finite trial residuals count as failures. ``scale(x)`` is
    the magnitude of the largest term in the residual; the tolerance is raised
    to the rounding floor 64 eps scale when that exceeds ``tol``.
    """
    x = np.array(x0, dtype=float)
    F = residual(x)
    norm = _inf_norm(F)
    report = SolveReport(final_residual=norm)
    if not math.isfinite(norm):
        raise StepFailure(f"{what}: residual not finite at the initial guess", report)

    def target(x):
        return tol if scale is None else max(tol, 64 * np.finfo(float).eps * scale(x))

    while norm > target(x) and report.iterations < max_iter:
        dx = newton_step(x, F)
        if dx is None:
            raise SingularJacobian(f"{what}: singular Jacobian at iteration {report.iterations + 1}", report)
        step = 1.0
        while True:
            x_try = x + step * dx
            F_try = residual(x_try)
            n_try = _inf_norm(F_try)
            if n_try < norm:
                break
            step *= 0.5
            if step < MIN_STEP:
                report.final_residual = norm
                raise StepFailure(f"{what}: damping underflow (residual {norm:.3e})", report)
        x, F, norm = x_try, F_try, n_try
        report.iterations += 1
        report.damping.append(step)
        report.final_residual = norm
    report.converged = norm <= target(x)
    if report.converged and norm > tol:
        report.note = f"stopped at the rounding floor {target(x):.2e}"
    if not report.converged:
        raise NoConvergence(f"{what}: no convergence after {max_iter} iterations (residual {norm:.3e})", report)
    return x, report


def _grid(mesh: Mesh, values) -> GridFunction:
    return GridFunction(mesh.nodes, np.asarray(values, dtype=float), mesh.h, mesh.origin)


# ---------------------------------------------------------------------------
# discounted problems


def _policy_iteration(op: DiscreteOperator, v, tol, max_iter):
    n = v.size
    A0 = (op.delta * sp.identity(n, format="csr") - op.L).tocsr()
    mats = (A0, op.Dm, -op.Dp)
    rhs = (op.forcing, np.ones(n), np.ones(n))
    fixed = op.dirichlet
    report = SolveReport()
    previous = None
    for it in range(1, max_iter + 1):
        choice = op.branches(v)
        choice[fixed] = 0
        sel = [sp.diags((choice == k).astype(float)) for k in range(3)]
        A = sum(s @ M for s, M in zip(sel, mats))
        b = np.select([choice == 0, choice == 1], [rhs[0], rhs[1]], rhs[2])
        if np.any(fixed):
            keep = sp.diags((~fixed).astype(float))
            A = keep @ A + sp.diags(fixed.astype(float))
            b = np.where(fixed, 0.0, b)
        v_new = _solve_tridiag(A, b)
        if v_new is None:
            # gradient rows without an anchoring PDE row; fall back to the PDE branch
            v_new = _solve_tridiag(keep @ A0 + sp.diags(fixed.astype(float)) if np.any(fixed) else A0, np.where(fixed, 0.0, op.forcing))
            report.note = "singular policy replaced by the PDE branch"
            if v_new is None:
                raise SingularJacobian("policy iteration: singular policy matrix", report)
        v = v_new
        report.iterations = it
        report.final_residual = _inf_norm(op.residual(v))
        target = max(tol, 64 * np.finfo(float).eps * _term_scale(op, v))
        key = choice.tobytes()
        if report.final_residual <= target or key == previous:
            break
        previous = key
    report.converged = report.final_residual <= target
    if report.converged and report.final_residual > tol:
        report.note = f"stopped at the rounding floor {target:.2e}"
    if not report.converged:
        raise NoConvergence(f"policy iteration stalled at residual {report.final_residual:.3e}", report)
    return v, report


def solve_discounted(op: DiscreteOperator, initial_guess=None, tol: float = DEFAULT_TOL, max_iter: int = 200):
    """Solve the discounted system. Returns (GridFunction, SolveReport); v is not normalized."""
    if not op.delta > 0:
        raise DomainError("solve_discounted needs an operator with delta > 0")
    n = op.mesh.size
    v0 = np.zeros(n) if initial_guess is None else np.array(getattr(initial_guess, "values", initial_guess), dtype=float)
    if v0.shape != (n,):
        raise ValueError("initial guess does not match the mesh")
    if op.exponent.is_infinite:
        v, report = _policy_iteration(op, v0, tol, max_iter)
    else:

        def step(x, F):
            J, _ = op.jacobian(x)
            dx = _solve_tridiag(J, F)
            return None if dx is None else -dx

        v, report = damped_newton(op.residual, step, v0, tol, max_iter, "discounted Newton", scale=lambda v: _term_scale(op, v))
    return _grid(op.mesh, v), report


def _term_scale(op: DiscreteOperator, v, lam=0.0) -> float:
    """Size of the largest individual term entering the residual (for the rounding floor)."""
    with np.errstate(all="ignore"):
        diffusion = np.abs(op.L) @ np.abs(v)
        pm, pp = op.slopes(v)
        grad = np.maximum(np.abs(pm), np.abs(pp))
        ham = grad if op.exponent.is_infinite else op.exponent.hamiltonian(grad)
        s = np.max(diffusion + ham + np.abs(op.forcing) + abs(lam) + op.delta * np.abs(v))
    return float(s) if np.isfinite(s) else math.inf


# ---------------------------------------------------------------------------
# ergodic problem, finite m: Newton on the augmented system


def _augmented_newton(op: DiscreteOperator, u0, lam0, tol, max_iter):
    k = op.mesh.origin
    n = op.mesh.size

    def unpack(y):
        u = y.copy()
        u[k] = 0.0
        return u, y[k]

    def residual(y):
        u, lam = unpack(y)
        return op.residual(u, lam)

    def step(y, F):
        u, lam = unpack(y)
        J, dlam = op.jacobian(u, lam)
        J = J.tolil()
        J[:, k] = dlam.reshape(-1, 1)
        dy = _solve_sparse(J.tocsr(), F)
        return None if dy is None else -dy

    y0 = np.array(u0, dtype=float)
    y0[k] = lam0
    try:
        y, report = damped_newton(residual, step, y0, tol, max_iter, "ergodic Newton", scale=lambda y: _term_scale(op, *unpack(y)))
    except SingularJacobian as exc:
        u, lam = unpack(y0)
        J, dlam = op.jacobian(u, lam)
        J = J.tolil()
        J[:, k] = dlam.reshape(-1, 1)
        exc.condition = _condition_estimate(J.tocsr())
        raise
    u, lam = unpack(y)
    return float(lam), u, report


def continuation_exponents(m: float, start: float = 4.0) -> list:
    """Exponents visited when warm-starting a solve at large m: 4, 8, ..., m."""
    if math.isinf(m) or m <= 2 * start:
        return [m]
    seq = [start]
    while seq[-1] * 2 < m:
        seq.append(seq[-1] * 2)
    seq.append(m)
    return seq


# ---------------------------------------------------------------------------
# ergodic problem by marching minimal slopes


def _slope_coefficients(mesh: Mesh):
    """Weights w_i and scales c_i for s_i >= w_i s_{i-1} + (lam - g_i)/(h c_i) at interior nodes."""
    h = mesh.h
    if mesh.geometry is Geometry.LINE:
        n_int = mesh.size - 2
        return np.ones(n_int), np.full(n_int, 1.0 / h**2)
    N = mesh.dim
    i = np.arange(1, mesh.size - 1)
    q = (N - 1) / (2.0 * i)
    central = 2 * i >= N - 1
    a = np.where(central, 1.0 - q, 1.0) / h**2
    c = np.where(central, 1.0 + q, 1.0 + 2.0 * q) / h**2
    return a / c, c


def _maxplus(s0, w, e, floor=-1.0):
    """s_k = max(floor, w_k s_{k-1} + e_k) for k = 1..K with w >= 0, vectorized.

    On a run of positive weights, with W_k = prod w_j and t_k = s_k / W_k, the
    recursion becomes t_k = max(floor / W_k, t_{k-1} + e_k / W_k), a running
    maximum. A zero weight restarts the recursion.
    """
    out = np.empty(w.size + 1)
    out[0] = s0
    cuts = [0] + [int(k) + 1 for k in np.flatnonzero(w == 0)] + [w.size + 1]
    start = s0
    for a, b in zip(cuts[:-1], cuts[1:]):
        if a > 0:
            start = max(floor, e[a - 1])  # zero weight: s does not see its predecessor
            out[a] = start
        ww, ee = w[a:b - 1], e[a:b - 1]
        if ww.size:
            W = np.cumprod(ww)
            E = np.cumsum(ee / W)
            best = np.maximum.accumulate(np.maximum(floor / W - E, start))
            out[a + 1 : b] = W * (E + best)
    return out


class _InfinityMarch:
    """Slope envelopes of the constrained problem at a trial level lam.

    Slopes s_i = (v_{i+1} - v_i)/h. The subsolution conditions read
    s_i >= w_i s_{i-1} + e_i and -1 <= s_i <= 1 plus boundary rows. Marching
    from the left gives the smallest admissible slopes, marching from the right
    the largest; a discrete subsolution exists iff the first lies below the second.
    """

    def __init__(self, op: DiscreteOperator):
        if op.bc is BoundaryCondition.DIRICHLET_ZERO:
            raise DomainError("the ergodic problem is posed with outflow or Neumann boundary rows")
        self.mesh, self.bc, self.g = op.mesh, op.bc, op.forcing
        self.w, self.c = _slope_coefficients(op.mesh)

    def _e(self, lam):
        return (lam - self.g[1:-1]) / (self.mesh.h * self.c)

    def lower(self, lam) -> np.ndarray:
        mesh, h, g = self.mesh, self.mesh.h, self.g
        if mesh.geometry is Geometry.RADIAL:
            s0 = max(-1.0, h * (lam - g[0]) / (2.0 * mesh.dim))
        elif self.bc is BoundaryCondition.NEUMANN:
            s0 = max(-1.0, h * (lam - g[0]) / 2.0)
        else:
            s0 = -1.0
        return _maxplus(s0, self.w, self._e(lam))

    def upper(self, lam) -> np.ndarray:
        h, g = self.mesh.h, self.g
        end = 1.0
        if self.bc is BoundaryCondition.NEUMANN:
            end = min(1.0, h * (g[-1] - lam) / 2.0)
        # S_{i-1} = min(1, (S_i - e_i)/w_i); run it as a max recursion on -S from the right
        w, e = self.w[::-1], self._e(lam)[::-1]
        zero = w == 0
        with np.errstate(divide="ignore"):
            # a node whose lower weight vanishes puts no upper bound on the slope before it
            back_w = np.where(zero, 0.0, 1.0 / np.where(zero, 1.0, w))
            back_e = np.where(zero, -np.inf, e / np.where(zero, 1.0, w))
        return -_maxplus(-end, back_w, back_e)[::-1]

    def boundary_excess(self, lam) -> float:
        if self.bc is BoundaryCondition.NEUMANN:
            return -math.inf
        g = self.g
        return lam - g[-1] if self.mesh.geometry is Geometry.RADIAL else lam - min(g[0], g[-1])

    def excess(self, lam) -> float:
        """Largest violation of the feasibility conditions (<= 0 iff a subsolution exists)."""
        return max(float(np.max(self.lower(lam) - self.upper(lam))), self.boundary_excess(lam))

    def profile(self, lam) -> np.ndarray:
        """Discrete solution at a feasible level: lower slopes up to the closest approach, upper after."""
        lo, up = self.lower(lam), self.upper(lam)
        gap = up - lo
        j = int(np.argmin(gap))
        if self.boundary_excess(lam) >= -gap[j]:
            s = lo
            if self.mesh.geometry is Geometry.LINE and self.bc is BoundaryCondition.OUTFLOW:
                # lam equals the far-field level, so both end rows hold with equality for
                # any admissible first slope; start from the one closest to zero
                s = _maxplus(min(max(0.0, lo[0]), up[0]), self.w, self._e(lam))
        else:
            s = np.concatenate([lo[: j + 1], up[j + 1 :]])
        v = np.concatenate([[0.0], np.cumsum(s) * self.mesh.h])
        return v - v[self.mesh.origin]


def _bracket_level(excess, lo, hi):
    """Expand lo downward until excess(lo) <= 0."""
    span = max(hi - lo, 1.0)
    for _ in range(200):
        if excess(lo) <= 0:
            return lo
        lo -= span
        span *= 2
    raise NoConvergence("could not bracket the eigenvalue from below")


def march_infinity(op: DiscreteOperator, xtol: float = 1e-14):
    """(lam, values) for the constrained ergodic problem by minimal-slope marching."""
    march = _InfinityMarch(op)
    g = op.forcing
    hi = float(np.max(g))
    while march.excess(hi) <= 0:
        hi += 1.0 + abs(hi)
    lo = _bracket_level(march.excess, float(np.min(g)) - 1.0, hi)
    lam = brentq(march.excess, lo, hi, xtol=xtol, rtol=4 * np.finfo(float).eps, maxiter=500)
    # brentq stops within xtol of the root; move to its feasible side
    while march.excess(lam) > 0:
        lam -= xtol
    return float(lam), march.profile(lam)


def march_finite(op: DiscreteOperator, xtol: float = 1e-13):
    """(lam, values) for finite m by marching minimal slopes node by node.

    Loop-based reference used to cross-check the Newton solver on modest meshes.
    Outflow boundary rows only.
    """
    if op.bc is not BoundaryCondition.OUTFLOW:
        raise DomainError("march_finite supports outflow boundary rows")
    mesh, ex, g, h = op.mesh, op.exponent, op.forcing, op.mesh.h
    H = lambda p: abs(p) ** ex.m / ex.m
    w, c = _slope_coefficients(mesh)
    cap = 1e6

    def root_below(f, hi=0.0):
        lo = -1.0
        while f(lo) < 0:
            lo *= 2.0
            if lo < -cap:
                return -cap
        return brentq(f, lo, hi, xtol=1e-15)

    def slopes(lam):
        if mesh.geometry is Geometry.RADIAL:
            A = 2.0 * mesh.dim / h
            r0 = lambda s: lam - A * s + (H(s) if s < 0 else 0.0) - g[0]
            s = (lam - g[0]) / A if r0(0.0) >= 0 else root_below(r0)
        else:
            if lam > g[0]:
                return None
            s = -((ex.m * (g[0] - lam)) ** (1.0 / ex.m))
        out = [s]
        for i in range(mesh.size - 2):
            a = out[-1]
            hc = h * c[i]
            Ha = H(max(a, 0.0))
            # residual(b) = lam - hc*(b - w a) + max(Ha, H(b_-)) - g, decreasing in b
            base = lam + hc * w[i] * a + Ha - g[i + 1]
            if base >= 0:
                b = base / hc
            else:
                b = root_below(lambda b: base - hc * b + max(Ha, H(min(b, 0.0))) - Ha)
            if not math.isfinite(b) or b > cap:
                return None
            out.append(b)
        return np.array(out)

    def excess(lam):
        s = slopes(lam)
        if s is None:
            return 1.0
        # right boundary: lam + H(s_+) - g_far <= 0
        return max(lam + H(max(s[-1], 0.0)) - g[-1], -math.inf if mesh.geometry is Geometry.RADIAL else lam - g[0])

    hi = float(g[-1])
    if excess(hi) <= 0:
        lam = hi
    else:
        lo = _bracket_level(excess, float(min(np.min(g), hi)) - 1.0, hi)
        lam = brentq(excess, lo, hi, xtol=xtol)
        step = xtol
        while excess(lam) > 0:
            lam -= step
            step *= 2
    s = slopes(lam)
    v = np.concatenate([[0.0], np.cumsum(s) * h])
    return float(lam), v - v[mesh.origin]


def solve_direct_ergodic(
    mesh: Mesh,
    spec: ProblemSpec,
    tol: float = DEFAULT_TOL,
    max_iter: int = 200,
    bc=BoundaryCondition.OUTFLOW,
    initial=None,
):
    """Solve the ergodic system for (lam, u) with u(0) = 0.

    Returns (lam, GridFunction, SolveReport). ``initial`` is an optional
    (lam, values) warm start; without one, finite exponents above 8 are reached
    by continuation through m = 4, 8, 16, ...
    """
    bc = parse_bc(bc)
    op = assemble_ergodic(mesh, spec, bc)
    if spec.exponent.is_infinite:
        lam, u = march_infinity(op)
        report = SolveReport(iterations=1, converged=True, note="minimal-slope marching")
        report.final_residual = _inf_norm(op.residual(u, lam))
        return lam, _grid(mesh, u), report
    g = op.forcing
    if initial is not None:
        lam0, u0 = float(initial[0]), np.array(initial[1], dtype=float)
        chain = [spec.exponent.m]
    else:
        lam0 = min(0.0, float(np.min(g)))
        # a cone with the far-field slope of lam0; u = 0 makes the outflow rows degenerate
        slope = max(spec.exponent.m * abs(lam0), 1e-2) ** (1.0 / spec.exponent.m)
        u0 = slope * (bracket(mesh.nodes) - 1.0)
        chain = continuation_exponents(spec.exponent.m)
    total = 0
    try:
        for m in chain:
            sub = spec if m == spec.exponent.m else spec.with_(exponent=Exponent(m))
            op_m = op if sub is spec else assemble_ergodic(mesh, sub, bc)
            lam0, u0, report = _augmented_newton(op_m, u0, lam0, tol, max_iter)
            total += report.iterations
            log.debug("ergodic Newton m=%s: lam=%.12g after %d iterations", m, lam0, report.iterations)
    except SolverError as exc:
        # flat far-field slopes (lam = 0 with H'(0) = 0) make the outflow rows degenerate
        if bc is not BoundaryCondition.OUTFLOW:
            raise
        log.info("ergodic Newton failed (%s); falling back to marching", exc)
        lam, u = march_finite(op)
        report = SolveReport(iterations=total + 1, converged=True, note=f"marching fallback after: {exc}")
        report.final_residual = _inf_norm(op.residual(u, lam))
        return lam, _grid(mesh, u), report
    report.iterations = total
    return lam0, _grid(mesh, u0), report


def holder_seminorm(u: GridFunction, alpha: float, chunk: int = 512) -> float:
    """sup |u(x) - u(y)| / |x - y|^alpha over all pairs of grid nodes."""
    x, v = np.asarray(u.nodes), np.asarray(u.values)
    best = 0.0
    for start in range(0, x.size, chunk):
        xs, vs = x[start : start + chunk, None], v[start : start + chunk, None]
        d = np.abs(xs - x[None, :])
        with np.errstate(divide="ignore", invalid="ignore"):
            q = np.abs(vs - v[None, :]) / d**alpha
        q[d == 0] = 0.0
        best = max(best, float(np.max(q)))
    return best
