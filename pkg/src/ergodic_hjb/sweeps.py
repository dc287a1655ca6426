"""Parameter sweeps: m -> inf convergence, beta plateaus and threshold bisection."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .analytic import be0_certificate, be0_limit_floor
from .core import BetaThresholds, DomainError, Exponent, Geometry, ProblemSpec, catalog
from .discretize import BoundaryCondition, Mesh
from .eigen import default_mesh, lambda_via_direct
from .solver import SolverError

log = logging.getLogger(__name__)

DETECTION_FLOOR = 1e-4
MAX_DEPTH = 30


class InvalidBracket(ValueError):
    """The endpoints of a threshold bracket do not have the required signs."""


def detection_threshold(disagreement: float = 0.0) -> float:
    """|lam| at or below this counts as zero: max(1e-4, 10 * method disagreement)."""
    return max(DETECTION_FLOOR, 10.0 * abs(disagreement))


def _estimate_at(args):
    """Worker: (spec, mesh, bc) -> (EigenEstimate without profile, error message or None)."""
    spec, mesh, bc = args
    try:
        est = lambda_via_direct(mesh, spec, bc)
    except SolverError as exc:
        return None, str(exc)
    est.solution = None
    return est, None


def _lam_at(args):
    """Worker: (spec, mesh, bc) -> (lam, error message or None). Top level so it pickles."""
    est, err = _estimate_at(args)
    return (math.nan, err) if est is None else (est.lam, None)


def _map(fn, items, jobs: int):
    """Evaluate fn over items, serially or in a process pool; order follows items."""
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=min(jobs, len(items))) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# m sweep


@dataclass
class MSweepResult:
    ms: list
    lams: list
    lam_inf: float
    gaps: list
    profile_distances: list
    failures: dict = field(default_factory=dict)
    profiles: dict = field(default_factory=dict, repr=False)
    surrogate: tuple | None = None  # (m, lam_m) large-m consistency check
    estimates: dict = field(default_factory=dict, repr=False)

    @property
    def gap_shrinks(self) -> bool:
        """Last gap at most the first one (no divergence)."""
        return self.gaps[-1] <= self.gaps[0]

    @property
    def monotone(self) -> bool:
        """Gaps nonincreasing along the sweep; reported only."""
        return all(b <= a for a, b in zip(self.gaps, self.gaps[1:]))

    def lower_bound_holds(self, tol: float = 1e-3) -> list:
        """lam_m >= lam_inf - 1/m - tol for each m."""
        return [lam >= self.lam_inf - 1.0 / m - tol for m, lam in zip(self.ms, self.lams)]


def m_sweep(
    base_spec: ProblemSpec,
    m_list=(4, 8, 16, 32, 64),
    include_infinity: bool = True,
    mesh: Mesh | None = None,
    bc=BoundaryCondition.OUTFLOW,
    surrogate_m: float | None = None,
) -> MSweepResult:
    """Solve along increasing m with warm starts and compare with the m = inf problem."""
    ms = [float(m) for m in m_list]
    if any(m <= 2 for m in ms) or any(b <= a for a, b in zip(ms, ms[1:])):
        raise DomainError("m_list must be increasing with every m > 2")
    mesh = default_mesh(base_spec) if mesh is None else mesh
    lam_inf, u_inf = math.nan, None
    estimates = {}
    if include_infinity:
        est = lambda_via_direct(mesh, base_spec.with_(exponent=Exponent(math.inf)), bc)
        lam_inf, u_inf = est.lam, est.solution.values
        estimates[math.inf] = est
    lams, profiles, failures = [], {}, {}
    warm = None
    for m in ms:
        try:
            est = lambda_via_direct(mesh, base_spec.with_(exponent=Exponent(m)), bc, initial=warm)
        except SolverError as exc:
            log.warning("m=%g failed: %s", m, exc)
            failures[m] = str(exc)
            lams.append(math.nan)
            continue
        lams.append(est.lam)
        estimates[m] = est
        profiles[m] = est.solution.values
        warm = (est.lam, est.solution.values)
    inner = np.abs(mesh.nodes) <= mesh.R / 2.0
    gaps = [abs(lam - lam_inf) for lam in lams]
    dists = [
        float(np.max(np.abs(profiles[m][inner] - u_inf[inner]))) if (m in profiles and u_inf is not None) else math.nan
        for m in ms
    ]
    if u_inf is not None:
        profiles[math.inf] = u_inf
    surrogate = None
    if surrogate_m is not None:
        try:
            surrogate = (float(surrogate_m), lambda_via_direct(mesh, base_spec.with_(exponent=Exponent(surrogate_m)), bc, initial=warm).lam)
        except SolverError as exc:
            failures[float(surrogate_m)] = str(exc)
    return MSweepResult(ms, lams, lam_inf, gaps, dists, failures, profiles, surrogate, estimates)


# ---------------------------------------------------------------------------
# beta sweep


@dataclass
class BetaSweepResult:
    betas: list
    lams: list
    thresholds: BetaThresholds
    plateau: tuple
    detection: float
    failures: dict = field(default_factory=dict)
    estimates: list = field(default_factory=list, repr=False)

    def concave(self, tol: float = 1e-6) -> bool:
        """Midpoint concavity on consecutive equally spaced triples."""
        b, l = np.asarray(self.betas), np.asarray(self.lams)
        ok = True
        for i in range(1, len(b) - 1):
            if abs((b[i] - b[i - 1]) - (b[i + 1] - b[i])) <= 1e-12 * max(1.0, abs(b[i])):
                ok &= l[i] >= 0.5 * (l[i - 1] + l[i + 1]) - tol
        return bool(ok)


def _plateau(betas, lams, thr):
    """Indices of the maximal run of |lam| <= thr containing the beta closest to 0."""
    zero = int(np.argmin(np.abs(betas)))
    if not abs(lams[zero]) <= thr:
        return None
    lo = hi = zero
    while lo > 0 and abs(lams[lo - 1]) <= thr:
        lo -= 1
    while hi < len(betas) - 1 and abs(lams[hi + 1]) <= thr:
        hi += 1
    return lo, hi


def beta_sweep(
    base_spec: ProblemSpec,
    beta_grid,
    mesh: Mesh | None = None,
    bc=BoundaryCondition.OUTFLOW,
    jobs: int = 1,
    detection: float | None = None,
) -> BetaSweepResult:
    """Tabulate lam(beta) and read off the zero plateau [beta_-, beta_+]."""
    betas = sorted(float(b) for b in beta_grid)
    mesh = default_mesh(base_spec) if mesh is None else mesh
    thr = detection_threshold() if detection is None else detection
    out = _map(_estimate_at, [(base_spec.with_(beta=b), mesh, bc) for b in betas], jobs)
    lams = [math.nan if est is None else est.lam for est, _ in out]
    failures = {b: err for b, (_, err) in zip(betas, out) if err}
    b, l = np.array(betas), np.array(lams)
    plat = _plateau(b, l, thr)
    has_neg, has_pos = base_spec.potential.sign_parts(mesh.R)
    if plat is None:
        plateau = (math.nan, math.nan)
        thresholds = BetaThresholds(0.0, 0.0, 0.0)
    else:
        lo, hi = plat
        plateau = (betas[lo], betas[hi])
        # beta_+ is infinite iff f_- vanishes; otherwise report the last plateau point
        beta_plus = math.inf if not has_neg else betas[hi]
        beta_minus = -math.inf if not has_pos else betas[lo]
        # a plateau reaching the end of the grid only bounds the threshold
        width = max(
            betas[hi + 1] - betas[hi] if hi + 1 < len(betas) else (0.0 if math.isinf(beta_plus) else math.inf),
            betas[lo] - betas[lo - 1] if lo > 0 else (0.0 if math.isinf(beta_minus) else math.inf),
        )
        thresholds = BetaThresholds(max(beta_plus, 0.0), min(beta_minus, 0.0), width)
    return BetaSweepResult(betas, lams, thresholds, plateau, thr, failures, [est for est, _ in out])


# ---------------------------------------------------------------------------
# threshold bisection


@dataclass
class BisectionResult:
    beta: float
    bracket: tuple
    depth: int
    evaluations: list = field(default_factory=list)


def bisect_beta_plus_detail(
    base_spec: ProblemSpec,
    bracket: tuple,
    tol_beta: float = 1e-3,
    mesh: Mesh | None = None,
    bc=BoundaryCondition.OUTFLOW,
    detection: float | None = None,
    jobs: int = 1,
) -> BisectionResult:
    """Bisection on the predicate lam(beta) < -detection between a plateau point and a point beyond."""
    lo, hi = (float(b) for b in bracket)
    mesh = default_mesh(base_spec) if mesh is None else mesh
    thr = detection_threshold() if detection is None else detection
    below = lambda lam: lam < -thr
    ends = _map(_lam_at, [(base_spec.with_(beta=lo), mesh, bc), (base_spec.with_(beta=hi), mesh, bc)], jobs)
    (lam_lo, err_lo), (lam_hi, err_hi) = ends
    if err_lo or err_hi:
        raise SolverError(f"bracket validation failed: {err_lo or err_hi}")
    if below(lam_lo) or not below(lam_hi):
        raise InvalidBracket(
            f"need lam(beta_lo) = 0 and lam(beta_hi) < -{thr:g}; got lam({lo:g})={lam_lo:.3e}, lam({hi:g})={lam_hi:.3e}"
        )
    evals = [(lo, lam_lo), (hi, lam_hi)]
    depth = 0
    while hi - lo > tol_beta and depth < MAX_DEPTH:
        mid = 0.5 * (lo + hi)
        lam, err = _lam_at((base_spec.with_(beta=mid), mesh, bc))
        if err:
            raise SolverError(f"bisection solve at beta={mid:g} failed: {err}")
        evals.append((mid, lam))
        if below(lam):
            hi = mid
        else:
            lo = mid
        depth += 1
    return BisectionResult(0.5 * (lo + hi), (lo, hi), depth, evals)


def bisect_beta_plus(base_spec, bracket, tol_beta: float = 1e-3, **kwargs) -> float:
    """beta_+ as the midpoint of the final bisection bracket."""
    return bisect_beta_plus_detail(base_spec, bracket, tol_beta, **kwargs).beta


def bisect_beta_minus(base_spec: ProblemSpec, bracket: tuple, tol_beta: float = 1e-3, **kwargs) -> float:
    """beta_- via the symmetry (beta, f) -> (-beta, -f).

    ``bracket`` is (beta_lo with lam = 0, beta_hi < beta_lo with lam < 0).
    """
    flipped = base_spec.with_(potential=base_spec.potential.negated())
    lo, hi = bracket
    return -bisect_beta_plus(flipped, (-lo, -hi), tol_beta, **kwargs)


def search_beta_plus(
    base_spec: ProblemSpec,
    probes=(0.25, 0.5, 1.0, 2.0, 4.0, 8.0),
    tol_beta: float = 1e-3,
    mesh: Mesh | None = None,
    bc=BoundaryCondition.OUTFLOW,
    detection: float | None = None,
    jobs: int = 1,
) -> BisectionResult:
    """Find a bracket among positive probes, then bisect.

    When lam(beta) < -detection at every probe there is no bracket with a
    positive lower end and beta_+ is reported as 0. When every probe is on the
    plateau the largest probe is returned as a lower bound (bracket hi = inf).
    """
    mesh = default_mesh(base_spec) if mesh is None else mesh
    thr = detection_threshold() if detection is None else detection
    probes = sorted(float(b) for b in probes)
    out = _map(_lam_at, [(base_spec.with_(beta=b), mesh, bc) for b in probes], jobs)
    evals = [(b, lam) for b, (lam, _) in zip(probes, out)]
    on_plateau = [b for b, lam in evals if not lam < -thr]
    if not on_plateau:
        return BisectionResult(0.0, (0.0, probes[0]), 0, evals)
    lo = max(on_plateau)
    beyond = [b for b, lam in evals if b > lo and lam < -thr]
    if not beyond:
        return BisectionResult(lo, (lo, math.inf), 0, evals)
    res = bisect_beta_plus_detail(base_spec, (lo, min(beyond)), tol_beta, mesh=mesh, bc=bc, detection=thr, jobs=jobs)
    res.evaluations = evals + res.evaluations
    return res


# ---------------------------------------------------------------------------
# multi-dimensional floor


@dataclass
class FloorRow:
    m: float
    beta: float
    lam: float
    ok: bool
    estimate: object = None
    error: str | None = None


def be0_floor_check(
    N: int,
    m_list=(3.0,),
    C0: float = 1.0,
    include_infinity: bool = True,
    R: float = 60.0,
    n_cells: int = 4096,
    tol: float = 1e-3,
    bc=BoundaryCondition.OUTFLOW,
    jobs: int = 1,
) -> list:
    """lam at the coupling beta0(m) for f = -C0 <x>^(-m*) in radial dimension N.

    The m = inf row uses the floor beta = (N-1)/(2 C0) and f = -C0 <x>^(-1).
    """
    if N < 2:
        raise DomainError("the floor check needs N >= 2 (the smooth subsolution requires N > m*)")
    exps = [Exponent(float(m)) for m in m_list] + ([Exponent(math.inf)] if include_infinity else [])
    jobs_in, betas = [], []
    for ex in exps:
        beta = be0_limit_floor(N, C0) if ex.is_infinite else be0_certificate(N, ex, C0).beta0
        pot = catalog("bracket", amplitude=-C0, power=ex.m_star, C0=C0)
        spec = ProblemSpec(N, ex, beta, pot, Geometry.RADIAL)
        jobs_in.append((spec, Mesh(Geometry.RADIAL, R, n_cells, N), bc))
        betas.append(beta)
    out = _map(_estimate_at, jobs_in, jobs)
    rows = []
    for ex, b, (est, err) in zip(exps, betas, out):
        lam = math.nan if est is None else est.lam
        rows.append(FloorRow(ex.m, b, lam, bool(abs(lam) <= tol), est, err))
    return rows
