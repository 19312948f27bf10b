"""Nonlinear solvers for the discrete problem and its auxiliary problems."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import optimize

from .discretization import (
    GridFunction,
    Mesh1D,
    default_eta,
    plap_jacobian,
    plap_term_scale,
    plap_values,
    reaction,
    reaction_derivative,
)
from .errors import DomainError, NoConvergence, PositivityLoss
from .problem import ProblemSpec, singular_term, singular_term_derivative, truncated_power, zeta

log = logging.getLogger(__name__)

POSITIVITY_FLOOR = 1e-14


@dataclass(frozen=True)
class SolveOptions:
    tol_residual: float = 1e-10
    max_newton: int = 50
    damping: float = 0.5
    tol_fixedpoint: float = 1e-8
    max_outer: int = 500

    def __post_init__(self):
        if not (self.tol_residual > 0 and self.tol_fixedpoint > 0):
            raise DomainError("solver tolerances must be positive")
        if self.max_newton < 1 or self.max_outer < 1:
            raise DomainError("iteration caps must be >= 1")
        if not 0 < self.damping < 1:
            raise DomainError("damping factor must lie in (0, 1)")


# Source callback: values -> (source, d source / d u); the discrete equation is
# -Delta_p u = source(u).
Source = Callable[[np.ndarray], "tuple[np.ndarray, np.ndarray]"]


def scaled_residual_norm(residual: np.ndarray, scale: np.ndarray) -> float:
    """Sup norm of the residual, each node divided by max(1, size of its terms)."""
    return float(np.max(np.abs(residual) / np.maximum(1.0, scale)))


def max_positive_step(values: np.ndarray, direction: np.ndarray, fraction: float = 0.5) -> float:
    """Largest step keeping every node above ``fraction`` of its current value."""
    shrinking = direction < 0
    if not np.any(shrinking):
        return math.inf
    room = (1 - fraction) * np.maximum(values[shrinking], POSITIVITY_FLOOR)
    return float(np.min(room / -direction[shrinking]))


def _newton_core(values0, mesh, p, source: Source, opts: SolveOptions, eta, trace=None):
    """Damped Newton for ``-Delta_p u = source(u)`` keeping ``u > 0``."""
    u = np.array(values0, dtype=float)
    if not np.all(u > 0):
        raise PositivityLoss("initial guess must be interior-positive")
    if eta is None and p != 2:
        eta = default_eta(u, mesh)

    def evaluate(v):
        s, ds = source(v)
        r = plap_values(v, mesh, p, eta) - s
        return r, s, ds

    r, s, ds = evaluate(u)
    for it in range(opts.max_newton + 1):
        scale = plap_term_scale(u, mesh, p, eta) + np.abs(s)
        res = scaled_residual_norm(r, scale)
        if not np.isfinite(res):
            raise NoConvergence("non-finite residual", iterations=it)
        if trace is not None:
            trace.append({"iteration": it, "residual": res})
        if res <= opts.tol_residual:
            return _polish(u, r, ds, evaluate, mesh, p, eta), it
        if it == opts.max_newton:
            break
        J = plap_jacobian(u, mesh, p, eta)
        J.diag = J.diag - ds
        du = J.solve(-r)
        if not np.all(np.isfinite(du)):
            raise NoConvergence("singular Newton system", iterations=it, residual=res)
        if np.max(np.abs(du)) <= 1e-14 * np.max(np.abs(u)) and res <= 1e3 * opts.tol_residual:
            # update below roundoff: the residual cannot be reduced further
            return u, it
        alpha = min(1.0, max_positive_step(u, du))
        if alpha < 1e-12:
            raise PositivityLoss("positivity guard forced a vanishing step", iterations=it, residual=res)
        merit = float(np.dot(r, r))
        while True:
            trial = u + alpha * du
            try:
                r_new, s_new, ds_new = evaluate(trial)
                merit_new = float(np.dot(r_new, r_new))
            except DomainError:
                merit_new = math.inf
            if merit_new <= (1 - 1e-4 * alpha) * merit:
                break
            alpha *= opts.damping
            if alpha < 1e-10:
                if res <= 1e3 * opts.tol_residual:
                    # stalled at the roundoff floor of the residual
                    return u, it
                if not np.isfinite(merit_new):
                    raise PositivityLoss("line search left the admissible set", iterations=it, residual=res)
                raise NoConvergence("line search failed to reduce the residual", iterations=it, residual=res)
        if trace is not None:
            trace[-1]["damping"] = alpha
        u, r, s, ds = trial, r_new, s_new, ds_new
    raise NoConvergence(
        f"Newton did not converge in {opts.max_newton} iterations (residual {res:.3e})",
        iterations=opts.max_newton,
        residual=res,
    )


def _polish(u, r, ds, evaluate, mesh, p, eta):
    """One extra full Newton step, kept only if it lowers the residual."""
    J = plap_jacobian(u, mesh, p, eta)
    J.diag = J.diag - ds
    du = J.solve(-r)
    if not np.all(np.isfinite(du)) or max_positive_step(u, du) < 1.0:
        return u
    trial = u + du
    try:
        r_new = evaluate(trial)[0]
    except DomainError:
        return u
    return trial if np.dot(r_new, r_new) <= np.dot(r, r) else u


def write_trace_jsonl(trace, path) -> None:
    with open(path, "w") as fh:
        for record in trace:
            fh.write(json.dumps(record) + "\n")


# --- problem-specific solves ----------------------------------------------------

def newton_solve(
    u0: GridFunction,
    lam: float,
    spec: ProblemSpec,
    opts: SolveOptions | None = None,
    eta: float | None = None,
    trace: list | None = None,
) -> GridFunction:
    """Solve the full discrete problem at fixed ``lam`` starting from ``u0``."""
    opts = opts or SolveOptions()

    def source(v):
        return lam * reaction(v, spec), lam * reaction_derivative(v, spec)

    values, _ = _newton_core(u0.values, u0.mesh, spec.p, source, opts, eta, trace)
    return GridFunction(values, u0.mesh)


def bump(mesh: Mesh1D, exponent: float = 1.0) -> np.ndarray:
    """``(4 x (L - x) / L^2)^exponent``, a positive profile with unit maximum scale."""
    x, L = mesh.nodes, mesh.length
    return (4 * x * (L - x) / L**2) ** exponent


def torsion_solution(mesh: Mesh1D, p: float, opts: SolveOptions | None = None) -> GridFunction:
    """Discrete solution of ``-Delta_p u = 1`` with zero boundary values."""
    opts = opts or SolveOptions()
    ones = np.ones(mesh.num_interior)
    zeros = np.zeros(mesh.num_interior)
    guess = 0.1 * mesh.length ** (p / (p - 1)) * bump(mesh)
    values, _ = _newton_core(guess, mesh, p, lambda v: (ones, zeros), opts, None)
    return GridFunction(values, mesh)


def _base_guess(lam: float, eps: float, spec: ProblemSpec, mesh: Mesh1D) -> np.ndarray:
    p, d, L = spec.p, spec.delta, mesh.length
    beta = min(1.0, p / (p - 1 + d))
    singular = (lam * L**p) ** (1 / (p - 1 + d)) * 0.3 * bump(mesh, beta)
    if eps > 0:
        regular = (lam * eps ** (-d) * L**p) ** (1 / (p - 1)) * 0.2 * bump(mesh)
        return np.minimum(singular, regular)
    return singular


def _frozen_source(lam: float, spec: ProblemSpec, extra: np.ndarray | float = 0.0) -> Source:
    def source(v):
        return (
            lam * singular_term(v, spec) + extra,
            lam * singular_term_derivative(v, spec),
        )

    return source


def solve_singular_base(
    lam: float,
    eps: float | None,
    spec: ProblemSpec,
    opts: SolveOptions | None = None,
    mesh: Mesh1D | None = None,
    u0: GridFunction | None = None,
) -> GridFunction:
    """Unique positive solution of ``-Delta_p u = lam (u + eps)^{-delta}``."""
    if lam <= 0:
        raise DomainError("lambda must be positive")
    opts = opts or SolveOptions()
    if eps is not None:
        spec = spec.with_(eps=eps)
    mesh = mesh or (u0.mesh if u0 is not None else Mesh1D.for_spec(spec))
    guess = u0.values if u0 is not None else _base_guess(lam, spec.eps, spec, mesh)
    values, _ = _newton_core(guess, mesh, spec.p, _frozen_source(lam, spec), opts, None)
    return GridFunction(values, mesh)


def monotone_iteration_minimal(
    lam: float,
    spec: ProblemSpec,
    opts: SolveOptions | None = None,
    mesh: Mesh1D | None = None,
    trace: list | None = None,
) -> GridFunction:
    """Minimal solution as the limit of the frozen-source iteration from ``u_0 = 0``.

    Each step solves ``-Delta_p u_k = lam (u_k + eps)^{-delta} + lam f_n(u_{k-1})``,
    keeping the singular term implicit.  Per-step diagnostics (sup change,
    smallest pointwise increment, monotonicity flag) go to ``trace``.
    """
    if lam <= 0:
        raise DomainError("lambda must be positive")
    opts = opts or SolveOptions()
    mesh = mesh or Mesh1D.for_spec(spec)
    cap = 1e3 * zeta(spec)
    slack = 10 * opts.tol_residual

    prev = np.zeros(mesh.num_interior)
    guess = _base_guess(lam, spec.eps, spec, mesh)
    for k in range(1, opts.max_outer + 1):
        extra = lam * truncated_power(prev, spec)
        cur, newton_its = _newton_core(guess, mesh, spec.p, _frozen_source(lam, spec, extra), opts, None)
        step = cur - prev
        change = float(np.max(np.abs(step)))
        min_inc = float(np.min(step))
        tol_inc = slack * max(1.0, float(np.max(cur)))
        if trace is not None:
            trace.append(
                {
                    "outer": k,
                    "sup_change": change,
                    "min_increment": min_inc,
                    "monotone": min_inc >= -tol_inc,
                    "newton_iterations": newton_its,
                }
            )
        if min_inc < -tol_inc:
            log.warning("monotone iteration step %d decreased by %.3e", k, -min_inc)
        if float(np.max(cur)) > cap:
            raise NoConvergence(f"iterates exceeded divergence cap {cap:.3g}", iterations=k)
        if k > 1 and change <= opts.tol_fixedpoint:
            log.debug("monotone iteration converged in %d steps", k)
            return GridFunction(cur, mesh)
        prev, guess = cur, cur
    raise NoConvergence(f"monotone iteration hit max_outer={opts.max_outer}", iterations=opts.max_outer)


# --- a priori sandwich --------------------------------------------------------

def reaction_max(r: float, R: float, spec: ProblemSpec) -> float:
    """``max {t^{-delta} + t^q : r <= t <= R + 1}`` over endpoints and critical point."""
    if not 0 < r <= R + 1:
        raise DomainError("need 0 < r <= R + 1")
    g = lambda t: t ** (-spec.delta) + t**spec.q
    candidates = [r, R + 1.0]
    t_crit = (spec.delta / spec.q) ** (1 / (spec.q + spec.delta))
    if r < t_crit < R + 1:
        candidates.append(t_crit)
    return max(g(t) for t in candidates)


def _first_crossing(K_tilde: float, spec: ProblemSpec, t_max: float) -> float:
    """Largest ``a`` with ``(t+1)^{-delta} + t^q >= K_tilde t^{p-1}`` on ``(0, a)``."""
    psi = lambda t: (t + 1) ** (-spec.delta) + t**spec.q - K_tilde * t ** (spec.p - 1)
    grid = np.geomspace(1e-300, t_max, 6000)
    with np.errstate(over="ignore", under="ignore"):
        vals = psi(grid)
    neg = np.nonzero(vals < 0)[0]
    if neg.size == 0:
        return t_max
    j = neg[0]
    if j == 0:
        return grid[0]
    return optimize.brentq(psi, grid[j - 1], grid[j], xtol=1e-300, rtol=1e-13)


@dataclass
class SandwichConstants:
    K1: float
    K2: float
    C_star: float
    K_tilde: float
    a: float


def sandwich_constants(
    spec: ProblemSpec, lambda1: float, phi1_sup: float, ep_sup: float, R: float, varrho: float, r: float
) -> SandwichConstants:
    p = spec.p
    C_star = min(
        (varrho / (4 * ep_sup)) ** (p - 1) / reaction_max(varrho / 4, R, spec),
        varrho / 4,
    )
    K_tilde = 2 * max(R, lambda1 / C_star)
    a = _first_crossing(K_tilde, spec, R + 1.0)
    K1 = a / (2 * K_tilde ** (1 / (p - 1)) * phi1_sup)
    return SandwichConstants(K1, reaction_max(r, R, spec), C_star, K_tilde, a)


@dataclass
class SandwichResult:
    ok: bool
    violation_node: int | None
    lower: np.ndarray
    upper: np.ndarray
    constants: SandwichConstants

    def __bool__(self):
        return self.ok


def pair_norm(lam: float, u: GridFunction) -> float:
    return max(abs(lam), u.sup_norm)


def sandwich_check(
    u: GridFunction,
    lam: float,
    spec: ProblemSpec,
    phi1: GridFunction,
    e_p: GridFunction,
    R: float,
    varrho: float,
    r: float,
    lambda1: float,
) -> SandwichResult:
    """Check ``lam^{1/(p-1)} K1 phi1 <= u <= r + lam^{1/(p-1)} K2^{1/(p-1)} e_p`` nodewise."""
    if not varrho <= pair_norm(lam, u) <= R:
        raise DomainError("(lambda, u) lies outside the [varrho, R] annulus")
    if not 0 < r <= R:
        raise DomainError("need 0 < r <= R")
    c = sandwich_constants(spec, lambda1, phi1.sup_norm, e_p.sup_norm, R, varrho, r)
    power = 1 / (spec.p - 1)
    lower = lam**power * c.K1 * phi1.values
    upper = r + lam**power * c.K2**power * e_p.values
    slack = 1e-9 * max(1.0, u.sup_norm)
    bad = np.nonzero((u.values < lower - slack) | (u.values > upper + slack))[0]
    node = int(bad[0]) if bad.size else None
    return SandwichResult(node is None, node, lower, upper, c)
