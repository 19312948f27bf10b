"""Scalar model of the regularized singular problem.

The boundary value problem handled throughout the package is

    -(|u'|^{p-2} u')' = lam * [ (u + eps)^{-delta} + f_n(u) ]   on (0, L),
    u(0) = u(L) = 0,  u > 0,

with the truncated power ``f_n(u) = min(u, n)^{q-p+1} u^{p-1}``.  ``n = inf``
recovers ``u^q`` and ``eps = 0`` recovers the unregularized singular term, so a
single :class:`ProblemSpec` covers the whole family of approximating problems.

Everything in this module is a pure function of floats.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace
from typing import NamedTuple

import numpy as np
from scipy import optimize

from .errors import DomainError, NoConvergence

INF = math.inf


@dataclass(frozen=True)
class ProblemSpec:
    """Exponents, regularization and truncation of one problem instance."""

    p: float = 2.0
    q: float = 3.0
    delta: float = 0.5
    eps: float = 0.0
    n_trunc: float = INF
    domain_length: float = 1.0

    def __post_init__(self):
        if not self.p > 1:
            raise DomainError(f"p must exceed 1, got {self.p}")
        if not self.q > self.p - 1:
            raise DomainError(f"q must exceed p - 1 = {self.p - 1}, got {self.q}")
        if not self.delta > 0:
            raise DomainError(f"delta must be positive, got {self.delta}")
        if not self.eps >= 0:
            raise DomainError(f"eps must be nonnegative, got {self.eps}")
        if not (self.n_trunc == INF or self.n_trunc >= 1):
            raise DomainError(f"n_trunc must be >= 1 or inf, got {self.n_trunc}")
        if not self.domain_length > 0:
            raise DomainError(f"domain_length must be positive, got {self.domain_length}")

    @property
    def truncated(self) -> bool:
        return math.isfinite(self.n_trunc)

    @property
    def superlinear_gap(self) -> float:
        """``q - p + 1``, the growth exponent beyond (p-1)-homogeneity."""
        return self.q - self.p + 1

    def with_(self, **changes) -> "ProblemSpec":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = asdict(self)
        if not self.truncated:
            d["n_trunc"] = "inf"
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ProblemSpec":
        d = dict(d)
        if "n_trunc" in d and d["n_trunc"] in ("inf", "infinity", None):
            d["n_trunc"] = INF
        return cls(**{k: float(v) for k, v in d.items()})


# --- nonlinearities -------------------------------------------------------

def singular_term(u, spec: ProblemSpec):
    """``(u + eps)^{-delta}``; works elementwise on arrays."""
    shifted = np.asarray(u, dtype=float) + spec.eps
    if np.any(shifted <= 0):
        raise DomainError("singular term needs u + eps > 0")
    out = shifted ** (-spec.delta)
    return float(out) if np.ndim(out) == 0 else out


def singular_term_derivative(u, spec: ProblemSpec):
    shifted = np.asarray(u, dtype=float) + spec.eps
    if np.any(shifted <= 0):
        raise DomainError("singular term needs u + eps > 0")
    out = -spec.delta * shifted ** (-spec.delta - 1.0)
    return float(out) if np.ndim(out) == 0 else out


def truncated_power(u, spec: ProblemSpec):
    """``min(u, n)^{q-p+1} u^{p-1}``, equal to ``u^q`` while ``u <= n``."""
    u = np.asarray(u, dtype=float)
    if np.any(u < 0):
        raise DomainError("truncated power needs u >= 0")
    if spec.truncated:
        out = np.minimum(u, spec.n_trunc) ** spec.superlinear_gap * u ** (spec.p - 1)
    else:
        out = u**spec.q
    return float(out) if out.ndim == 0 else out


def truncated_power_derivative(u, spec: ProblemSpec):
    """Derivative of :func:`truncated_power`; the left branch is used at ``u = n``."""
    u = np.asarray(u, dtype=float)
    if np.any(u < 0):
        raise DomainError("truncated power needs u >= 0")
    below = spec.q * u ** (spec.q - 1)
    if spec.truncated:
        n = spec.n_trunc
        above = n**spec.superlinear_gap * (spec.p - 1) * u ** (spec.p - 2)
        out = np.where(u <= n, below, above)
    else:
        out = below
    return float(out) if out.ndim == 0 else out


# --- closed-form constants ------------------------------------------------

def zeta(spec: ProblemSpec) -> float:
    """Location ``((p-1+delta)/(q-p+1))^{1/(q+delta)}`` of the minimum of g_0."""
    return ((spec.p - 1 + spec.delta) / spec.superlinear_gap) ** (1.0 / (spec.q + spec.delta))


def lambda_star_upper_bound(spec: ProblemSpec, lambda1: float) -> float:
    """Explicit upper bound ``lambda1 (zeta+1)^delta zeta^{p-1}`` on the fold."""
    z = zeta(spec)
    return lambda1 * (z + 1.0) ** spec.delta * z ** (spec.p - 1)


def g_eps(t, spec: ProblemSpec):
    """Ratio ``((t+eps)^{-delta} + t^q) / t^{p-1}`` of reaction to p-homogeneous growth."""
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise DomainError("g_eps is defined for t > 0 only")
    out = ((t + spec.eps) ** (-spec.delta) + t**spec.q) / t ** (spec.p - 1)
    return float(out) if out.ndim == 0 else out


def g_eps_derivative(t, spec: ProblemSpec):
    """``g_eps'``; its zero is the minimizer of :func:`g_eps`."""
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise DomainError("g_eps is defined for t > 0 only")
    p, d, e = spec.p, spec.delta, spec.eps
    out = (
        -d * (t + e) ** (-d - 1) * t ** (1 - p)
        + (1 - p) * (t + e) ** (-d) * t ** (-p)
        + spec.superlinear_gap * t ** (spec.q - p)
    )
    return float(out) if out.ndim == 0 else out


def _g_eps_second_derivative(t: float, spec: ProblemSpec) -> float:
    p, d, e, q = spec.p, spec.delta, spec.eps, spec.q
    s = t + e
    return (
        d * (d + 1) * s ** (-d - 2) * t ** (1 - p)
        - 2 * d * (1 - p) * s ** (-d - 1) * t ** (-p)
        + (1 - p) * (-p) * s ** (-d) * t ** (-p - 1)
        + (q - p + 1) * (q - p) * t ** (q - p - 1)
    )


class GMin(NamedTuple):
    t_min: float
    g_min: float


def g_eps_minimizer(spec: ProblemSpec, rtol: float = 1e-12, maxiter: int = 400) -> GMin:
    """Global minimizer of :func:`g_eps` on ``(0, inf)``.

    The derivative is negative near 0 and positive at infinity with a single
    crossing.  Bisection on ``[zeta/1e3, zeta*1e3]`` (widened if needed) is
    followed by one Newton polish.
    """
    z = zeta(spec)
    lo, hi = z * 1e-3, z * 1e3
    for _ in range(60):
        if g_eps_derivative(lo, spec) < 0:
            break
        lo *= 1e-3
    for _ in range(60):
        if g_eps_derivative(hi, spec) > 0:
            break
        hi *= 1e3
    if not (g_eps_derivative(lo, spec) < 0 < g_eps_derivative(hi, spec)):
        raise NoConvergence("could not bracket the minimizer of g_eps")
    try:
        t = optimize.bisect(
            g_eps_derivative, lo, hi, args=(spec,), xtol=1e-300, rtol=max(rtol, 4e-16), maxiter=maxiter
        )
    except RuntimeError as exc:
        raise NoConvergence(f"bisection for t_min failed: {exc}") from exc
    curvature = _g_eps_second_derivative(t, spec)
    if curvature > 0:
        polished = t - g_eps_derivative(t, spec) / curvature
        if abs(polished - t) <= 1e-8 * t:
            t = polished

    if spec.eps == 0:
        if not math.isclose(t, z, rel_tol=1e-9):
            raise NoConvergence(f"t_min={t} differs from zeta={z} at eps=0")
    elif not t < z * (1 + 1e-12):
        # h(zeta) > 0 for eps > 0, so the root lies below zeta.  The companion
        # bound t_min > zeta - eps is not used: it fails for some admissible
        # exponents (e.g. p=1.2, q=0.5, delta=3) even as eps -> 0.
        raise NoConvergence(f"t_min={t} not below zeta={z}")
    g = g_eps(t, spec)
    if spec.eps < 1 and g < (z + 1) ** (-spec.delta) * z ** (1 - spec.p) * (1 - 1e-12):
        raise NoConvergence("g_min below its closed-form lower bound")
    return GMin(t, g)


def nonexistence_certificate(lam: float, spec: ProblemSpec, lambda1: float) -> bool:
    """True when ``lam * g_min > lambda1``, which rules out positive solutions."""
    if lam <= 0 or lambda1 <= 0:
        return False
    return lam * g_eps_minimizer(spec).g_min > lambda1


def certificate_threshold(spec: ProblemSpec, lambda1: float) -> float:
    """Smallest lambda certified to have no solution, ``lambda1 / g_min``."""
    return lambda1 / g_eps_minimizer(spec).g_min


def uniqueness_ball_radius(spec: ProblemSpec) -> float:
    """Sup-norm radius ``zeta/2`` below which at most one solution exists.

    Only meaningful when ``eps < zeta/2``; the caller checks that.
    """
    return 0.5 * zeta(spec)


class SubSuperConstants(NamedTuple):
    eps0: float
    N0: float
    M: float
    varrho_max: float


def subsuper_constants(spec: ProblemSpec, omega10_sup: float, lambda1: float) -> SubSuperConstants:
    """Constants of the sub/supersolution pair ``[omega, M omega]``.

    ``varrho_max`` is the width of the lambda window above ``lambda1/N0^{q-p+1}``
    that the construction allows before any further reduction.
    """
    if omega10_sup <= 0:
        raise DomainError("omega10_sup must be positive")
    p, q, d = spec.p, spec.q, spec.delta
    gap = spec.superlinear_gap
    eps0 = 2.0 ** (-q / ((q + d) * (p - 1)) - 1.0)
    N0 = lambda1 ** (1.0 / gap) * (omega10_sup / eps0) ** ((p - 1 + d) / gap) + 1.0
    M = 2.0 ** (1.0 / (p - 1))
    varrho_max = (eps0 / omega10_sup) ** (p - 1 + d) - lambda1 / N0**gap
    return SubSuperConstants(eps0, N0, M, varrho_max)
