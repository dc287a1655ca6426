"""Batch driver: read a run configuration, execute it, write CSV plus a JSON sidecar.

Configuration files are flat ``key = value`` text; ``[section]`` headers are
allowed and ignored for lookup. Example::

    command = beta-bisect
    geometry = line
    N = 1
    m = inf
    potential = bump amplitude=-1 width=1
    R = 60
    n_cells = 4096
    beta_bracket = 1, 4
    tolerances = beta=1e-3 detection=1e-4

Exit codes: 0 success, 1 solver failure or failed checks, 2 configuration error.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import logging
import math
import os
import platform
import re
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .analytic import (
    DEFAULT_ETA,
    be0_certificate,
    be0_residual,
    coupling_upper_bound,
    exact_beta_plus_nonpositive_f,
    mg_upper_bound,
    multi_solution_family,
    propL_construction,
    propL_data,
)
from .core import DomainError, Exponent, Geometry, ProblemSpec, catalog, parse_exponent
from .discretize import BoundaryCondition, Mesh, default_radius, parse_bc
from .eigen import DEFAULT_DELTAS, DISAGREEMENT_WARNING, lambda_via_direct, lambda_via_discount
from .solver import DEFAULT_TOL, SolverError
from .sweeps import (
    DETECTION_FLOOR,
    InvalidBracket,
    be0_floor_check,
    beta_sweep,
    bisect_beta_minus,
    bisect_beta_plus_detail,
    m_sweep,
    search_beta_plus,
)

log = logging.getLogger("ergodic_hjb")

COMMANDS = ("solve", "discount", "m-sweep", "beta-sweep", "beta-bisect", "be0-floor", "verify-analytic")
SOLVE_COLUMNS = ["run_id", "N", "m", "beta", "R", "h", "method", "lambda", "residual", "holder_seminorm", "iterations", "wall_ms"]
TOLERANCE_KEYS = {
    "newton": DEFAULT_TOL,
    "detection": DETECTION_FLOOR,
    "beta": 1e-3,
    "floor": 1e-3,
    "disagreement": DISAGREEMENT_WARNING,
}
TEST_ONLY_POTENTIALS = ("constant", "zero")

EXIT_OK, EXIT_FAILURE, EXIT_CONFIG = 0, 1, 2


class ConfigError(ValueError):
    """Invalid configuration; ``line`` is the 1-based line in the file when known."""

    def __init__(self, message: str, line: int | None = None, text: str | None = None):
        self.line, self.text = line, text
        where = "" if line is None else f"line {line}: " + (f"{text.strip()!r}: " if text else "")
        super().__init__(where + message)


# ---------------------------------------------------------------------------
# configuration


@dataclass
class RunConfig:
    command: str
    geometry: Geometry = Geometry.LINE
    N: int = 1
    exponent: Exponent = field(default_factory=lambda: Exponent(3.0))
    beta: float = 1.0
    potential_name: str = "bump"
    potential_params: dict = field(default_factory=dict)
    R: float | None = None
    n_cells: int = 4096
    bc: BoundaryCondition = BoundaryCondition.OUTFLOW
    delta_sequence: tuple = DEFAULT_DELTAS
    tolerances: dict = field(default_factory=lambda: dict(TOLERANCE_KEYS))
    output_dir: str = "results"
    m_list: tuple = (4.0, 8.0, 16.0, 32.0, 64.0)
    include_infinity: bool = True
    surrogate_m: float | None = None
    beta_grid: tuple = ()
    beta_bracket: tuple | None = None
    probes: tuple = (0.25, 0.5, 1.0, 2.0, 4.0, 8.0)
    side: str = "plus"
    C0: float = 1.0
    shift: float = 0.0
    perturbation: float = 0.0
    test_mode: bool = False
    mutation: str | None = None
    record_timing: bool = False
    seed: int = 0
    jobs: int = 1

    def potential(self):
        return catalog(self.potential_name, **dict(self.potential_params))

    def spec(self) -> ProblemSpec:
        return ProblemSpec(self.N, self.exponent, self.beta, self.potential(), self.geometry, self.shift)

    def mesh(self, spec: ProblemSpec | None = None) -> Mesh:
        spec = self.spec() if spec is None else spec
        R = default_radius(spec) if self.R is None else self.R
        return Mesh.for_spec(spec, R, self.n_cells)


def _floats(text: str) -> tuple:
    return tuple(float(t) for t in re.split(r"[,\s]+", text.strip()) if t)


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _pairs(text: str) -> dict:
    """Parse ``a=1 b=2`` or ``a=1, b=2`` into a dict of floats."""
    out = {}
    for item in re.split(r"[,\s]+", text.strip()):
        if not item:
            continue
        key, sep, val = item.partition("=")
        if not sep:
            raise ValueError(f"expected key=value, got {item!r}")
        out[key.strip()] = float(val)
    return out


def parse_potential(text: str) -> tuple:
    """``bump amplitude=-1 width=1`` or ``bump(amplitude=-1, width=1)`` -> (name, params)."""
    m = re.fullmatch(r"\s*([A-Za-z_]+)\s*(?:\((.*)\)|(.*))\s*", text)
    if not m:
        raise ValueError(f"cannot parse potential {text!r}")
    name, args = m.group(1).lower(), (m.group(2) if m.group(2) is not None else m.group(3)) or ""
    return name, _pairs(args)


def _exponent(text: str) -> Exponent:
    return parse_exponent(text.strip())


_FIELDS = {
    "command": lambda t: t.strip().lower(),
    "geometry": lambda t: Geometry(t.strip().lower()),
    "N": lambda t: int(t),
    "m": _exponent,
    "beta": float,
    "potential": parse_potential,
    "R": float,
    "n_cells": int,
    "bc": lambda t: parse_bc(t.strip()),
    "delta_sequence": _floats,
    "tolerances": _pairs,
    "output_dir": str.strip,
    "m_list": _floats,
    "include_infinity": _bool,
    "surrogate_m": float,
    "beta_grid": _floats,
    "beta_bracket": _floats,
    "probes": _floats,
    "side": lambda t: t.strip().lower(),
    "C0": float,
    "shift": float,
    "perturbation": float,
    "test_mode": _bool,
    "mutation": lambda t: t.strip().lower() or None,
    "record_timing": _bool,
    "seed": int,
    "jobs": int,
}
_LOWER = {k.lower(): k for k in _FIELDS}


def _key_lines(text: str) -> dict:
    """Map each key (lower case) to its (line number, line text)."""
    out = {}
    for no, line in enumerate(text.splitlines(), start=1):
        m = re.match(r"\s*([A-Za-z_][A-Za-z0-9_\-]*)\s*[=:]", line)
        if m and not line.lstrip().startswith(("#", ";", "[")):
            out.setdefault(m.group(1).lower(), (no, line))
    return out


def parse_config_text(text: str, overrides: dict | None = None) -> RunConfig:
    """Validate configuration text; errors carry the offending line."""
    has_header = bool(re.match(r"\s*(?:[#;][^\n]*\n\s*)*\[", text))
    offset = 0 if has_header else 1
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"), strict=True)
    parser.optionxform = str.lower
    try:
        parser.read_string(text if has_header else "[run]\n" + text)
    except configparser.ParsingError as exc:
        no = exc.errors[0][0] - offset
        raise ConfigError("cannot parse line (expected key = value)", no, text.splitlines()[no - 1]) from None
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"duplicate key {exc.option!r}", exc.lineno - offset) from None
    except configparser.Error as exc:
        raise ConfigError(str(exc).splitlines()[0]) from None
    lines = _key_lines(text)
    raw = {}
    for section in parser.sections():
        for key, value in parser.items(section):
            if key in raw:
                raise ConfigError(f"key {key!r} appears in more than one section", *lines.get(key, (None, None)))
            raw[key] = value
    values = {}
    for key, value in raw.items():
        where = lines.get(key, (None, None))
        if key not in _LOWER:
            raise ConfigError(f"unknown key {key!r}", *where)
        name = _LOWER[key]
        try:
            values[name] = _FIELDS[name](value)
        except (ValueError, DomainError) as exc:
            raise ConfigError(str(exc), *where) from None
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
    return _build_config(values, lines)


def _build_config(values: dict, lines: dict) -> RunConfig:
    def where(key):
        return lines.get(key.lower(), (None, None))

    command = values.pop("command", None)
    if command is None:
        raise ConfigError("no command given (set 'command' or pass a subcommand)")
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}; expected one of {', '.join(COMMANDS)}", *where("command"))
    cfg = RunConfig(command=command)
    if "m" in values:
        cfg.exponent = values.pop("m")
    if "potential" in values:
        cfg.potential_name, cfg.potential_params = values.pop("potential")
    if "tolerances" in values:
        tol = values.pop("tolerances")
        unknown = set(tol) - set(TOLERANCE_KEYS)
        if unknown:
            raise ConfigError(f"unknown tolerance(s) {sorted(unknown)}; known: {sorted(TOLERANCE_KEYS)}", *where("tolerances"))
        if any(not v > 0 for v in tol.values()):
            raise ConfigError("tolerances must be positive", *where("tolerances"))
        cfg.tolerances.update(tol)
    for key, value in values.items():
        setattr(cfg, key, value)

    checks = [
        ("N", cfg.N >= 1, "N must be a positive integer"),
        ("geometry", cfg.geometry is Geometry.RADIAL or cfg.N == 1, "line geometry requires N = 1"),
        ("n_cells", cfg.n_cells >= 2, "n_cells must be at least 2"),
        ("n_cells", cfg.geometry is Geometry.RADIAL or cfg.n_cells % 2 == 0, "line meshes need an even n_cells"),
        ("R", cfg.R is None or cfg.R > 0, "R must be positive"),
        ("jobs", cfg.jobs >= 1, "jobs must be at least 1"),
        ("C0", cfg.C0 > 0, "C0 must be positive"),
        ("perturbation", cfg.perturbation >= 0, "perturbation must be nonnegative"),
        ("side", cfg.side in ("plus", "minus", "both"), "side must be plus, minus or both"),
        ("delta_sequence", len(cfg.delta_sequence) >= 3, "delta_sequence needs at least three entries"),
        (
            "delta_sequence",
            all(d > 0 for d in cfg.delta_sequence) and all(b < a for a, b in zip(cfg.delta_sequence, cfg.delta_sequence[1:])),
            "delta_sequence must be positive and strictly decreasing",
        ),
        ("m_list", all(m > 2 for m in cfg.m_list), "every entry of m_list must satisfy m > 2"),
        ("beta_bracket", cfg.beta_bracket is None or len(cfg.beta_bracket) == 2, "beta_bracket takes two values"),
        ("mutation", cfg.mutation in (None, "k_sign", "family_c"), "mutation must be k_sign or family_c"),
        ("mutation", cfg.mutation is None or cfg.test_mode, "mutations are only available with test_mode = true"),
        ("shift", cfg.shift == 0.0 or cfg.test_mode, "shift is only available with test_mode = true"),
        (
            "potential",
            cfg.potential_name not in TEST_ONLY_POTENTIALS or cfg.test_mode,
            f"potential {cfg.potential_name!r} is only available with test_mode = true",
        ),
    ]
    for key, ok, message in checks:
        if not ok:
            raise ConfigError(message, *where(key))
    if cfg.command == "beta-sweep" and len(cfg.beta_grid) < 2:
        raise ConfigError("beta-sweep needs a beta_grid with at least two values", *where("beta_grid"))
    if cfg.command == "beta-bisect" and cfg.side != "plus" and cfg.beta_bracket is None:
        raise ConfigError("beta-bisect on the minus side needs beta_bracket", *where("side"))
    try:
        cfg.potential()
    except (DomainError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc), *where("potential")) from None
    return cfg


def load_config(path, overrides: dict | None = None) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config_text(text, overrides)


# ---------------------------------------------------------------------------
# output


def fmt(value) -> str:
    """CSV cell: floats with 17 significant digits, booleans as true/false."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def run_id(*parts) -> str:
    """Deterministic identifier of a parameter tuple."""
    blob = json.dumps([fmt(p) if not isinstance(p, str) else p for p in parts], separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _m_label(ex: Exponent | float) -> str:
    m = ex.m if isinstance(ex, Exponent) else float(ex)
    return "inf" if math.isinf(m) else fmt(m)


def _potential_label(cfg: RunConfig) -> str:
    params = " ".join(f"{k}={fmt(v)}" for k, v in sorted(cfg.potential_params.items()))
    return f"{cfg.potential_name} {params}".strip()


def estimate_row(cfg: RunConfig, spec: ProblemSpec, est, extra_id=()) -> dict:
    d = est.diagnostics
    rid = run_id(cfg.command, _potential_label(cfg), spec.geometry.value, spec.dimension_N, _m_label(spec.exponent),
                 spec.beta, spec.shift, d["R"], d["n_cells"], d["bc"], est.method.value, *extra_id)
    return {
        "run_id": rid,
        "N": spec.dimension_N,
        "m": _m_label(spec.exponent),
        "beta": spec.beta,
        "R": d["R"],
        "h": d["h"],
        "method": est.method.value,
        "lambda": est.lam,
        "residual": est.residual_inf_norm,
        "holder_seminorm": est.holder_seminorm,
        "iterations": d.get("iterations"),
        "wall_ms": d.get("wall_ms") if cfg.record_timing else None,
    }


def write_csv(path: Path, columns: list, rows: list) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([fmt(row.get(c)) for c in columns])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    if isinstance(obj, Exponent):
        return _m_label(obj)
    if hasattr(obj, "value") and isinstance(getattr(obj, "value"), str):
        return obj.value
    return obj


def sidecar(cfg: RunConfig, results: dict, elapsed: float) -> dict:
    return _jsonable(
        {
            "command": cfg.command,
            "settings": {
                "geometry": cfg.geometry,
                "N": cfg.N,
                "m": cfg.exponent,
                "beta": cfg.beta,
                "potential": _potential_label(cfg),
                "R": cfg.R,
                "n_cells": cfg.n_cells,
                "bc": cfg.bc,
                "delta_sequence": cfg.delta_sequence,
                "seed": cfg.seed,
                "jobs": cfg.jobs,
                "test_mode": cfg.test_mode,
            },
            "tolerances": cfg.tolerances,
            "detection_note": "lam = 0 is declared when |lam| <= max(detection, 10 x method disagreement)",
            "versions": {
                "ergodic_hjb": __version__,
                "python": platform.python_version(),
                "numpy": np.__version__,
                "scipy": scipy.__version__,
            },
            "elapsed_s": elapsed,
            "results": results,
        }
    )


# ---------------------------------------------------------------------------
# commands


@dataclass
class Outcome:
    columns: list
    rows: list
    results: dict = field(default_factory=dict)
    ok: bool = True


def _random_perturbation(seed: int):
    """Random bump phi with |phi| <= 1 for the stability check."""
    rng = np.random.default_rng(seed)
    return catalog("bump", amplitude=float(rng.uniform(-1.0, 1.0)), width=float(rng.uniform(0.5, 2.0)),
                   center=float(rng.uniform(-1.0, 1.0)))


def cmd_solve(cfg: RunConfig) -> Outcome:
    spec = cfg.spec()
    mesh = cfg.mesh(spec)
    est = lambda_via_direct(mesh, spec, cfg.bc, tol=cfg.tolerances["newton"])
    rows = [estimate_row(cfg, spec, est)]
    results = {"lambda": est.lam, "diagnostics": est.diagnostics}
    ok = True
    if cfg.perturbation > 0:
        eps = cfg.perturbation
        phi = _random_perturbation(cfg.seed)
        # forcing beta f + eps phi
        if spec.beta:
            pert = spec.with_(potential=spec.potential.plus(phi, eps / spec.beta))
        else:
            pert = spec.with_(beta=1.0, potential=phi.scaled(eps))
        est_p = lambda_via_direct(mesh, pert, cfg.bc, tol=cfg.tolerances["newton"])
        row = estimate_row(cfg, pert, est_p, extra_id=("perturbed", cfg.seed, eps))
        row["method"] = f"{est_p.method.value}-perturbed"
        rows.append(row)
        bound = eps * float(np.max(np.abs(phi(mesh.nodes)))) + 1e-8
        ok = abs(est_p.lam - est.lam) <= bound
        results["stability"] = {"epsilon": eps, "seed": cfg.seed, "lambda_perturbed": est_p.lam,
                                "difference": abs(est_p.lam - est.lam), "bound": bound, "passed": ok}
    return Outcome(list(SOLVE_COLUMNS), rows, results, ok)


def cmd_discount(cfg: RunConfig) -> Outcome:
    spec = cfg.spec()
    est = lambda_via_discount(cfg.mesh(spec), spec, cfg.delta_sequence, cfg.bc, tol=cfg.tolerances["newton"])
    return Outcome(list(SOLVE_COLUMNS), [estimate_row(cfg, spec, est)], {"lambda": est.lam, "diagnostics": est.diagnostics})


def cmd_m_sweep(cfg: RunConfig) -> Outcome:
    spec = cfg.spec()
    res = m_sweep(spec, cfg.m_list, cfg.include_infinity, cfg.mesh(spec), cfg.bc, cfg.surrogate_m)
    lower = res.lower_bound_holds(cfg.tolerances["floor"]) if cfg.include_infinity else [None] * len(res.ms)
    rows = []
    for m, gap, dist, lb in zip(res.ms, res.gaps, res.profile_distances, lower):
        est = res.estimates.get(m)
        if est is None:
            continue
        s = spec.with_(exponent=Exponent(m))
        rows.append({**estimate_row(cfg, s, est), "lambda_inf": res.lam_inf, "gap": gap,
                     "profile_distance": dist, "lower_bound_ok": lb})
    if math.inf in res.estimates:
        s = spec.with_(exponent=Exponent(math.inf))
        rows.append({**estimate_row(cfg, s, res.estimates[math.inf]), "lambda_inf": res.lam_inf, "gap": 0.0,
                     "profile_distance": 0.0, "lower_bound_ok": True})
    results = {
        "lambda_inf": res.lam_inf,
        "gaps": res.gaps,
        "gap_shrinks": res.gap_shrinks if cfg.include_infinity else None,
        "monotone": res.monotone if cfg.include_infinity else None,
        "lower_bound": lower,
        "surrogate": res.surrogate,
        "failures": res.failures,
    }
    columns = SOLVE_COLUMNS + ["lambda_inf", "gap", "profile_distance", "lower_bound_ok"]
    return Outcome(columns, rows, results, not res.failures)


def cmd_beta_sweep(cfg: RunConfig) -> Outcome:
    spec = cfg.spec()
    res = beta_sweep(spec, cfg.beta_grid, cfg.mesh(spec), cfg.bc, cfg.jobs, cfg.tolerances["detection"])
    rows = []
    for b, est in zip(res.betas, res.estimates):
        if est is None:
            continue
        rows.append({**estimate_row(cfg, spec.with_(beta=b), est), "on_plateau": abs(est.lam) <= res.detection,
                     "detection": res.detection})
    t = res.thresholds
    results = {
        "plateau": res.plateau,
        "beta_plus": t.beta_plus,
        "beta_minus": t.beta_minus,
        "bracket_width": t.bracket_width,
        "concave": res.concave(),
        "failures": res.failures,
    }
    return Outcome(SOLVE_COLUMNS + ["on_plateau", "detection"], rows, results, not res.failures)


def cmd_beta_bisect(cfg: RunConfig) -> Outcome:
    spec = cfg.spec()
    mesh = cfg.mesh(spec)
    tol_beta, thr = cfg.tolerances["beta"], cfg.tolerances["detection"]
    kwargs = dict(mesh=mesh, bc=cfg.bc, detection=thr, jobs=cfg.jobs)
    row = {"N": spec.dimension_N, "m": _m_label(spec.exponent), "R": mesh.R, "h": mesh.h, "method": "bisection",
           "side": cfg.side, "detection": thr, "tol_beta": tol_beta}
    results = {}
    if cfg.side in ("plus", "both"):
        if cfg.beta_bracket is not None and cfg.side == "plus":
            res = bisect_beta_plus_detail(spec, cfg.beta_bracket, tol_beta, **kwargs)
        else:
            res = search_beta_plus(spec, cfg.probes, tol_beta, **kwargs)
        row.update(beta_plus=res.beta, bracket_lo=res.bracket[0], bracket_hi=res.bracket[1], depth=res.depth)
        results["plus"] = {"beta": res.beta, "bracket": res.bracket, "depth": res.depth, "evaluations": res.evaluations}
    if cfg.side in ("minus", "both"):
        if cfg.beta_bracket is None:
            raise DomainError("the minus side needs beta_bracket = (beta on the plateau, beta below it)")
        lo, hi = cfg.beta_bracket if cfg.side == "minus" else (0.0, -abs(cfg.beta_bracket[1]))
        row["beta_minus"] = bisect_beta_minus(spec, (lo, hi), tol_beta, **kwargs)
        results["minus"] = {"beta": row["beta_minus"], "bracket": (lo, hi)}
    row["run_id"] = run_id(cfg.command, _potential_label(cfg), spec.geometry.value, spec.dimension_N, row["m"],
                           mesh.R, mesh.n_cells, cfg.bc.value, cfg.side, cfg.beta_bracket or cfg.probes, tol_beta, thr)
    columns = ["run_id", "N", "m", "R", "h", "method", "side", "beta_plus", "beta_minus", "bracket_lo", "bracket_hi",
               "depth", "tol_beta", "detection"]
    return Outcome(columns, [row], results)


def cmd_be0_floor(cfg: RunConfig) -> Outcome:
    if cfg.geometry is not Geometry.RADIAL:
        raise DomainError("be0-floor runs on the radial geometry (set geometry = radial and N >= 2)")
    R = 60.0 if cfg.R is None else cfg.R
    floor_rows = be0_floor_check(cfg.N, cfg.m_list, cfg.C0, cfg.include_infinity, R, cfg.n_cells,
                                 cfg.tolerances["floor"], cfg.bc, cfg.jobs)
    rows, failures = [], {}
    for fr in floor_rows:
        if fr.estimate is None:
            failures[_m_label(fr.m)] = fr.error
            continue
        ex = Exponent(fr.m)
        pot = catalog("bracket", amplitude=-cfg.C0, power=ex.m_star, C0=cfg.C0)
        spec = ProblemSpec(cfg.N, ex, fr.beta, pot, Geometry.RADIAL)
        rows.append({**estimate_row(cfg, spec, fr.estimate, extra_id=(cfg.C0,)), "within_tolerance": fr.ok})
    ok = not failures and all(fr.ok for fr in floor_rows)
    results = {"rows": [{"m": _m_label(fr.m), "beta": fr.beta, "lambda": fr.lam, "ok": fr.ok} for fr in floor_rows],
               "failures": failures}
    return Outcome(SOLVE_COLUMNS + ["within_tolerance"], rows, results, ok)


# ---------------------------------------------------------------------------
# analytic oracle suite


@dataclass
class Check:
    name: str
    passed: bool
    value: float
    tolerance: float
    detail: str = ""


def verify_analytic(mutation: str | None = None) -> list:
    """Run the closed-form checks; ``mutation`` injects a known defect (test mode).

    ``k_sign`` flips the sign of the certificate constant K_m; ``family_c``
    adds C = 0.6 to the explicit family, which must be rejected.
    """
    from dataclasses import replace

    checks = []
    radii = np.concatenate([np.linspace(0.0, 10.0, 20001), np.geomspace(10.0, 1e4, 2001)])
    for N in (2, 3):
        for m in (2.5, 3.0, 5.0, 10.0):
            cert = be0_certificate(N, Exponent(m))
            if mutation == "k_sign":
                cert = replace(cert, K_m=-cert.K_m)
            worst = max(be0_residual(cert, b, radii) for b in np.linspace(-cert.beta0, cert.beta0, 5))
            checks.append(Check(f"be0 residual N={N} m={m:g}", worst <= 1e-8, worst, 1e-8, f"beta0={cert.beta0:.12g}"))

    x = np.linspace(-40.0, 40.0, 10_000) + 1.3e-3  # offset keeps samples off the kinks
    for label, pot in (("bump", catalog("bump")), ("exp", catalog("exp")), ("gauss", catalog("gauss")),
                       ("shifted bump", catalog("bump", center=0.5)), ("mexican_hat", catalog("mexican_hat"))):
        data = propL_data(pot)
        beta0 = 2.0 / data.L
        u, up, upp = propL_construction(data, x)
        sub = float(np.max(np.maximum(-upp - beta0 * pot(x), np.abs(up) - 1.0)))
        curv = float(np.max(np.abs(upp - beta0 * pot.negative_part(x))))
        u0, up0, _ = propL_construction(data, np.array([0.0]))
        far = np.array([-1e3, 1e3])
        _, up_far, _ = propL_construction(data, far)
        ends = float(np.max(np.abs(up_far - np.array([-1.0, 1.0]))))
        checks.append(Check(f"line construction subsolution ({label})", sub <= 1e-10, sub, 1e-10, f"L={data.L:.12g}"))
        checks.append(Check(f"line construction curvature ({label})", curv <= 1e-10, curv, 1e-10))
        origin = max(abs(float(u0[0])), abs(float(up0[0]) - data.C_slope))
        checks.append(Check(f"line construction origin ({label})", origin <= 1e-10, origin, 1e-10))
        checks.append(Check(f"line construction slopes at infinity ({label})", ends <= 1e-8, ends, 1e-8))

    xs = np.linspace(-3.0, 3.0, 10_001) + 1e-4
    tent = -np.maximum(1.0 - np.abs(xs), 0.0)
    family = [-0.5, -0.25, 0.0, 0.25, 0.5] + ([0.6] if mutation == "family_c" else [])
    for C in family:
        try:
            u, up, upp = multi_solution_family(C, xs)
        except DomainError as exc:
            checks.append(Check(f"explicit family C={C:g}", False, math.nan, 1e-12, f"rejected: {exc}"))
            continue
        res = float(np.max(np.abs(np.maximum(-upp - tent, np.abs(up) - 1.0))))
        checks.append(Check(f"explicit family C={C:g}", res <= 1e-12, res, 1e-12))

    for label, pot, exact in (("bump", catalog("bump"), 2.0), ("exp", catalog("exp"), 1.0),
                              ("gauss", catalog("gauss"), 2.0 / math.sqrt(math.pi))):
        bp = exact_beta_plus_nonpositive_f(pot)
        L = propL_data(pot).L
        err = max(abs(bp - 2.0 / L), abs(bp - exact))
        checks.append(Check(f"exact threshold 2/L ({label})", err <= 1e-8, err, 1e-8, f"beta_plus={bp:.12g}"))

    bump = catalog("bump")
    bounds = [mg_upper_bound(bump, DEFAULT_ETA, d, 0.1) for d in (0.1, 0.05, 0.01)]
    ok = all(b > 0 for b in bounds) and all(b2 <= b1 for b1, b2 in zip(bounds, bounds[1:]))
    checks.append(Check("test-function bound positive and decreasing in delta", ok, bounds[-1], 0.0,
                        "bounds=" + ", ".join(f"{b:.6g}" for b in bounds)))
    cb = coupling_upper_bound(bump, 10.0, Exponent(3.0))
    checks.append(Check("coupling bound negative at large beta", cb < 0, cb, 0.0))
    return checks


def cmd_verify_analytic(cfg: RunConfig) -> Outcome:
    checks = verify_analytic(cfg.mutation)
    rows = [{"check": c.name, "passed": c.passed, "value": c.value, "tolerance": c.tolerance, "detail": c.detail}
            for c in checks]
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}  value={c.value:.3e}  tol={c.tolerance:g}  {c.detail}".rstrip())
    results = {"passed": sum(c.passed for c in checks), "failed": sum(not c.passed for c in checks),
               "mutation": cfg.mutation}
    return Outcome(["check", "passed", "value", "tolerance", "detail"], rows, results, all(c.passed for c in checks))


HANDLERS = {
    "solve": cmd_solve,
    "discount": cmd_discount,
    "m-sweep": cmd_m_sweep,
    "beta-sweep": cmd_beta_sweep,
    "beta-bisect": cmd_beta_bisect,
    "be0-floor": cmd_be0_floor,
    "verify-analytic": cmd_verify_analytic,
}


def run(cfg: RunConfig, out_dir: str | None = None) -> int:
    """Execute a validated configuration and write ``<command>.csv`` and ``<command>.json``."""
    out = Path(out_dir or cfg.output_dir)
    t0 = time.perf_counter()
    try:
        outcome = HANDLERS[cfg.command](cfg)
    except (SolverError, InvalidBracket) as exc:
        log.error("%s failed: %s", cfg.command, exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except DomainError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    stem = cfg.command.replace("-", "_")
    write_csv(out / f"{stem}.csv", outcome.columns, outcome.rows)
    meta = sidecar(cfg, outcome.results, time.perf_counter() - t0)
    (out / f"{stem}.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    log.info("wrote %s", out / f"{stem}.csv")
    return EXIT_OK if outcome.ok else EXIT_FAILURE


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ergodic-hjb", description="Ergodic HJB eigenvalue solver and experiment driver.")
    p.add_argument("command", nargs="?", choices=COMMANDS, help="overrides the config 'command' key")
    p.add_argument("--config", metavar="PATH", help="run configuration file")
    p.add_argument("--out", metavar="DIR", help="output directory (overrides output_dir)")
    p.add_argument("--jobs", type=int, metavar="K", help="worker processes for sweep points")
    p.add_argument("--seed", type=int, help="seed for the random perturbation check")
    p.add_argument("--test-mode", action="store_true", help="enable test-only potentials and mutations")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=os.environ.get("ERGODIC_HJB_LOG", "WARNING").upper(), format="%(levelname)s %(name)s: %(message)s")
    overrides = {"command": args.command, "jobs": args.jobs, "seed": args.seed, "test_mode": True if args.test_mode else None}
    try:
        if args.config:
            cfg = load_config(args.config, overrides)
        else:
            cfg = _build_config({k: v for k, v in overrides.items() if v is not None}, {})
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return run(cfg, args.out)


if __name__ == "__main__":
    sys.exit(main())
