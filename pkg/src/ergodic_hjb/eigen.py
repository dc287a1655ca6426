"""Eigenvalue drivers: vanishing discount, direct solve, radius sweeps, cross-checks."""

from __future__ import annotations

import logging
import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import DomainError, EigenEstimate, Geometry, GridFunction, Method, ProblemSpec
from .discretize import BoundaryCondition, Mesh, assemble_constrained, assemble_discounted, default_radius, parse_bc
from .solver import DEFAULT_TOL, SolverError, holder_seminorm, solve_direct_ergodic, solve_discounted

log = logging.getLogger(__name__)

DEFAULT_DELTAS = tuple(0.1 * 2.0**-k for k in range(9))
DISAGREEMENT_WARNING = 5e-3


class CrossValidationWarning(UserWarning):
    """Discount and direct estimates disagree by more than the configured threshold."""


def default_mesh(spec: ProblemSpec, R: float | None = None, n_cells: int = 4096) -> Mesh:
    """Mesh for a problem; R defaults to the decay-based truncation radius."""
    return Mesh.for_spec(spec, default_radius(spec) if R is None else R, n_cells)


def lambda_via_discount(
    mesh: Mesh,
    spec: ProblemSpec,
    delta_sequence=DEFAULT_DELTAS,
    bc=BoundaryCondition.OUTFLOW,
    tol: float = DEFAULT_TOL,
) -> EigenEstimate:
    """Extrapolate delta v_delta(0) to delta = 0 from the last two discounts.

    The model delta v(0) = lam + a delta is fitted on the last two points; its
    misfit at the third-to-last point is reported as ``fit_residual``.
    """
    deltas = [float(d) for d in delta_sequence]
    if len(deltas) < 3:
        raise DomainError("the discount sequence needs at least three entries")
    if any(d <= 0 for d in deltas) or any(b >= a for a, b in zip(deltas, deltas[1:])):
        raise DomainError("the discount sequence must be positive and strictly decreasing")
    bc = parse_bc(bc)
    assemble = assemble_constrained if spec.exponent.is_infinite else assemble_discounted
    k0 = mesh.origin
    values, iterations = [], 0
    v_prev, d_prev, guess = None, None, None
    for d in deltas:
        if v_prev is not None:
            # v_delta ~ lam/delta + u: shift the previous solution by the change in lam/delta
            guess = v_prev + values[-1] * (1.0 / d - 1.0 / d_prev)
        try:
            v, report = solve_discounted(assemble(mesh, spec, d, bc), guess, tol=tol)
        except SolverError as exc:
            exc.delta = d
            exc.args = (f"{exc.args[0]} (delta={d:.6g})",)
            raise
        iterations += report.iterations
        values.append(d * v.values[k0])
        v_prev, d_prev = v.values, d
    (d1, a1), (d2, a2) = (deltas[-2], values[-2]), (deltas[-1], values[-1])
    slope = (a1 - a2) / (d1 - d2)
    lam = a2 - slope * d2
    fit_residual = abs(values[-3] - (lam + slope * deltas[-3]))
    u = GridFunction(mesh.nodes, v_prev - v_prev[k0], mesh.h, k0)
    return EigenEstimate(
        lam=float(lam),
        method=Method.VANISHING_DISCOUNT,
        residual_inf_norm=float(report.final_residual),
        holder_seminorm=holder_seminorm(u, spec.exponent.alpha),
        diagnostics={
            "deltas": deltas,
            "delta_v0": [float(x) for x in values],
            "fit_slope": float(slope),
            "fit_residual": float(fit_residual),
            "iterations": iterations,
            "R": mesh.R,
            "n_cells": mesh.n_cells,
            "h": mesh.h,
            "bc": bc.value,
        },
        solution=u,
    )


def lambda_via_direct(
    mesh: Mesh,
    spec: ProblemSpec,
    bc=BoundaryCondition.OUTFLOW,
    tol: float = DEFAULT_TOL,
    initial=None,
) -> EigenEstimate:
    """Direct ergodic solve wrapped as an EigenEstimate."""
    bc = parse_bc(bc)
    t0 = time.perf_counter()
    lam, u, report = solve_direct_ergodic(mesh, spec, tol=tol, bc=bc, initial=initial)
    return EigenEstimate(
        lam=float(lam),
        method=Method.DIRECT_ERGODIC,
        residual_inf_norm=float(report.final_residual),
        holder_seminorm=holder_seminorm(u, spec.exponent.alpha),
        diagnostics={
            "iterations": report.iterations,
            "R": mesh.R,
            "n_cells": mesh.n_cells,
            "h": mesh.h,
            "bc": bc.value,
            "note": report.note,
            "wall_ms": 1e3 * (time.perf_counter() - t0),
        },
        solution=u,
    )


@dataclass
class RSweepResult:
    radii: list
    lams: list
    verdict: str
    tolerance: float
    estimates: list = field(default_factory=list, repr=False)

    @property
    def lam(self) -> float:
        return self.lams[-1]

    @property
    def differences(self) -> list:
        return [abs(b - a) for a, b in zip(self.lams, self.lams[1:])]


def _mesh_at_radius(spec: ProblemSpec, R: float, h: float) -> Mesh:
    """Mesh with spacing exactly h whose radius is R rounded up to a whole number of cells."""
    cells = max(int(math.ceil(R / h - 1e-9)), 1)
    if spec.geometry is Geometry.LINE:
        return Mesh.for_spec(spec, cells * h, 2 * cells)
    return Mesh.for_spec(spec, cells * h, max(cells, 2))


def r_sweep(
    spec: ProblemSpec,
    radii,
    method: Method | str = Method.DIRECT_ERGODIC,
    h: float = 60.0 / 2048,
    stabilization_tol: float = 1e-5,
    bc=BoundaryCondition.OUTFLOW,
    delta_sequence=DEFAULT_DELTAS,
) -> RSweepResult:
    """lam_R over increasing radii at fixed spacing h, with a stabilization verdict.

    Each radius is rounded up to a multiple of h so that only R changes along
    the sweep; the radii actually used are reported.
    """
    radii = [float(r) for r in radii]
    if len(radii) < 3:
        raise DomainError("the radius sweep needs at least three radii")
    if any(b <= a for a, b in zip(radii, radii[1:])):
        raise DomainError("radii must be increasing")
    method = Method(method) if not isinstance(method, Method) else method
    estimates, used = [], []
    for R in radii:
        mesh = _mesh_at_radius(spec, R, h)
        used.append(mesh.R)
        if method is Method.VANISHING_DISCOUNT:
            est = lambda_via_discount(mesh, spec, delta_sequence, bc)
        else:
            est = lambda_via_direct(mesh, spec, bc)
        estimates.append(est)
    lams = [e.lam for e in estimates]
    verdict = "stabilized" if abs(lams[-1] - lams[-2]) <= stabilization_tol else "not stabilized"
    return RSweepResult(used, lams, verdict, stabilization_tol, estimates)


def cross_validate(
    spec: ProblemSpec,
    mesh: Mesh | None = None,
    delta_sequence=DEFAULT_DELTAS,
    threshold: float = DISAGREEMENT_WARNING,
    bc=BoundaryCondition.OUTFLOW,
) -> EigenEstimate:
    """Direct estimate annotated with its disagreement against the discount method.

    A disagreement above ``threshold`` raises a CrossValidationWarning and sets
    ``diagnostics['warning']``.
    """
    mesh = default_mesh(spec) if mesh is None else mesh
    direct = lambda_via_direct(mesh, spec, bc)
    discount = lambda_via_discount(mesh, spec, delta_sequence, bc)
    gap = abs(direct.lam - discount.lam)
    direct.diagnostics.update(
        discount_lambda=discount.lam,
        disagreement=gap,
        disagreement_threshold=threshold,
        discount_fit_residual=discount.diagnostics["fit_residual"],
        warning=gap > threshold,
    )
    if gap > threshold:
        msg = f"direct lam={direct.lam:.6g} and discount lam={discount.lam:.6g} differ by {gap:.3g} > {threshold:g}"
        log.warning(msg)
        warnings.warn(msg, CrossValidationWarning, stacklevel=2)
    return direct
