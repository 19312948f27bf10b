"""First eigenpair of the discrete p-Laplacian by inverse power iteration."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .discretization import GridFunction, Mesh1D, default_eta, flux, plap_values
from .errors import NoConvergence
from .solvers import SolveOptions, _newton_core, bump


@dataclass
class EigenResult:
    lambda1: float
    phi1: GridFunction
    residual: float
    p: float
    iterations: int = 0
    history: list = field(default_factory=list, repr=False)
    eta: float = 0.0

    def summary(self) -> dict:
        m = self.phi1.mesh
        return {
            "p": self.p,
            "N": m.num_interior,
            "grading": m.grading,
            "lambda1": self.lambda1,
            "residual": self.residual,
            "iterations": self.iterations,
        }


def rayleigh_quotient(u: GridFunction, p: float, eta: float = 0.0) -> float:
    """``sum_e dx_e |slope_e|^p / sum_i h_i |u_i|^p``.

    Edge sums for the gradient and dual-cell sums for the function match the
    discrete operator by summation by parts, so the discrete eigenvalue is the
    minimum of this quotient.  With ``eta > 0`` the numerator uses
    ``phi_eta(s) s`` so the quotient matches the regularized operator.
    """
    m = u.mesh
    denom = float(np.sum(m.cell_widths * np.abs(u.values) ** p))
    if denom == 0:
        raise ZeroDivisionError("Rayleigh quotient of the zero function")
    slopes = np.diff(u.full_values) / m.edge_lengths
    if eta > 0 and p != 2:
        energy = flux(slopes, p, eta) * slopes
    else:
        energy = np.abs(slopes) ** p
    return float(np.sum(m.edge_lengths * energy)) / denom


def eigen_residual(lam: float, phi: GridFunction, p: float, eta: float | None = None) -> float:
    return float(np.max(np.abs(plap_values(phi.values, phi.mesh, p, eta) - lam * phi.values ** (p - 1))))


def first_eigenpair(
    mesh: Mesh1D,
    p: float,
    rtol: float = 1e-10,
    residual_tol: float = 1e-9,
    max_iter: int = 2000,
) -> EigenResult:
    """Inverse power iteration ``-Delta_p w = v^{p-1}``, ``v <- w / sup w``.

    Stops once successive Rayleigh quotients agree to ``rtol`` and the eigen
    residual is below ``residual_tol``.  ``phi1`` is normalized to sup 1.
    """
    inner = SolveOptions(tol_residual=1e-11, max_newton=100)
    v = bump(mesh)
    v /= v.max()
    # eta for the sup-1 iterate; the unnormalized w gets eta scaled by its
    # amplitude so that phi_{c eta}(c s) = c^{p-1} phi_eta(s) keeps the
    # normalization step exact
    eta = default_eta(v, mesh) if p != 2 else 0.0
    zeros = np.zeros(mesh.num_interior)
    lam_prev = rayleigh_quotient(GridFunction(v, mesh), p, eta)
    w_scale = lam_prev ** (-1 / (p - 1))
    history = [lam_prev]
    for k in range(1, max_iter + 1):
        rhs = v ** (p - 1)
        w, _ = _newton_core(v * w_scale, mesh, p, lambda _u, rhs=rhs: (rhs, zeros), inner, eta * w_scale)
        w_scale = w.max()
        v = w / w_scale
        phi = GridFunction(v, mesh)
        lam = rayleigh_quotient(phi, p, eta)
        history.append(lam)
        res = eigen_residual(lam, phi, p, eta)
        if abs(lam - lam_prev) <= rtol * lam and res <= residual_tol:
            return EigenResult(lam, phi, res, p, k, history, eta)
        lam_prev = lam
    raise NoConvergence(f"inverse power iteration did not converge in {max_iter} steps", iterations=max_iter)
