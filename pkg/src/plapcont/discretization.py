"""Conservative finite differences for the 1D p-Laplacian with zero boundary values.

Interior nodes ``x_1 < ... < x_N`` sit inside ``(0, L)``; the boundary nodes
``x_0 = 0`` and ``x_{N+1} = L`` carry the value 0.  On edge ``i+1/2`` the slope
is ``s = (u_{i+1} - u_i) / dx_{i+1/2}`` and the flux is the regularized

    phi_eta(s) = (s^2 + eta^2)^{(p-2)/2} s,

so that ``-Delta_p u`` at node ``i`` is ``-(F_{i+1/2} - F_{i-1/2}) / h_i`` with
the dual-cell width ``h_i = (x_{i+1} - x_{i-1}) / 2``.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.linalg import solve_banded

from .errors import DomainError
from .problem import (
    ProblemSpec,
    singular_term,
    singular_term_derivative,
    truncated_power,
    truncated_power_derivative,
)

ETA_REL = 1e-8


@dataclass(frozen=True)
class Mesh1D:
    """Nodes of ``[0, L]``, uniform or graded toward both endpoints.

    The graded map sends ``s in [0, 1/2]`` to ``L * (2s)^gamma / 2`` and is
    mirrored about ``L/2``, so node spacing shrinks like ``h^gamma`` at the
    boundary while the mesh stays exactly symmetric.
    """

    num_interior: int = 400
    length: float = 1.0
    grading: str = "uniform"
    gamma: float = 2.0

    def __post_init__(self):
        if self.num_interior < 3:
            raise DomainError("need at least 3 interior nodes")
        if self.length <= 0:
            raise DomainError("length must be positive")
        if self.grading not in ("uniform", "graded"):
            raise DomainError(f"unknown grading {self.grading!r}")
        if self.gamma < 1:
            raise DomainError("grading exponent must be >= 1")

    @classmethod
    def for_spec(cls, spec: ProblemSpec, num_interior: int = 400, grading: str | None = None):
        """Default mesh policy: graded (gamma = 2) when ``eps = 0`` or ``delta >= 1``."""
        if grading is None:
            grading = "graded" if (spec.eps == 0 or spec.delta >= 1) else "uniform"
        return cls(num_interior, spec.domain_length, grading, 2.0)

    @property
    def spacing(self) -> float:
        """Uniform-parameter spacing ``L / (N + 1)``."""
        return self.length / (self.num_interior + 1)

    @cached_property
    def all_nodes(self) -> np.ndarray:
        n1 = self.num_interior + 1
        s = np.arange(n1 + 1) / n1
        if self.grading == "uniform" or self.gamma == 1:
            x = s * self.length
        else:
            x = np.where(s <= 0.5, 0.5 * (2 * s) ** self.gamma, 0.0) * self.length
        # mirror the left half so the mesh is exactly symmetric
        half = (n1 + 1) // 2
        x[n1 - np.arange(half)] = self.length - x[np.arange(half)]
        if n1 % 2 == 0:
            x[n1 // 2] = 0.5 * self.length
        x[0], x[-1] = 0.0, self.length
        x.setflags(write=False)
        return x

    @cached_property
    def nodes(self) -> np.ndarray:
        return self.all_nodes[1:-1]

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        """``dx_{i+1/2}``, length N+1."""
        return np.diff(self.all_nodes)

    @cached_property
    def cell_widths(self) -> np.ndarray:
        """Dual-cell widths ``h_i``, length N."""
        return 0.5 * (self.edge_lengths[:-1] + self.edge_lengths[1:])

    def to_dict(self) -> dict:
        return {
            "num_interior": self.num_interior,
            "length": self.length,
            "grading": self.grading,
            "gamma": self.gamma,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Mesh1D":
        return cls(int(d["num_interior"]), float(d["length"]), str(d["grading"]), float(d["gamma"]))


@dataclass
class GridFunction:
    """Interior nodal values on a :class:`Mesh1D`; boundary values are 0."""

    values: np.ndarray
    mesh: Mesh1D = field(repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.mesh.num_interior,):
            raise DomainError(
                f"expected {self.mesh.num_interior} values, got shape {self.values.shape}"
            )

    @property
    def x(self) -> np.ndarray:
        return self.mesh.nodes

    @property
    def full_values(self) -> np.ndarray:
        return np.concatenate(([0.0], self.values, [0.0]))

    @property
    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    @property
    def l2_norm(self) -> float:
        return float(np.sqrt(np.sum(self.mesh.cell_widths * self.values**2)))

    @property
    def argmax_x(self) -> float:
        return float(self.mesh.nodes[int(np.argmax(self.values))])

    def is_positive(self) -> bool:
        return bool(np.all(self.values > 0))

    def copy(self) -> "GridFunction":
        return GridFunction(self.values.copy(), self.mesh)

    def with_values(self, values) -> "GridFunction":
        return GridFunction(values, self.mesh)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["x", "u"])
        for x, u in zip(self.mesh.all_nodes, self.full_values):
            writer.writerow([repr(float(x)), repr(float(u))])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    def to_json(self) -> dict:
        return {"mesh": self.mesh.to_dict(), "values": self.values.tolist()}

    @classmethod
    def from_json(cls, record) -> "GridFunction":
        if isinstance(record, str):
            record = json.loads(record)
        return cls(np.array(record["values"], dtype=float), Mesh1D.from_dict(record["mesh"]))


@dataclass
class Tridiagonal:
    """Square tridiagonal matrix stored by diagonals."""

    lower: np.ndarray
    diag: np.ndarray
    upper: np.ndarray

    @property
    def size(self) -> int:
        return self.diag.size

    def matvec(self, v: np.ndarray) -> np.ndarray:
        out = self.diag * v
        out[1:] += self.lower * v[:-1]
        out[:-1] += self.upper * v[1:]
        return out

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        ab = np.zeros((3, self.size))
        ab[0, 1:] = self.upper
        ab[1] = self.diag
        ab[2, :-1] = self.lower
        return solve_banded((1, 1), ab, rhs)

    def to_sparse(self):
        return sp.diags([self.lower, self.diag, self.upper], [-1, 0, 1], format="csc")

    def to_dense(self) -> np.ndarray:
        return self.to_sparse().toarray()


# --- flux ---------------------------------------------------------------------

def flux(s, p: float, eta: float):
    s = np.asarray(s, dtype=float)
    if p == 2:
        return s.copy()
    r2 = s * s + eta * eta
    with np.errstate(divide="ignore", invalid="ignore"):
        out = r2 ** ((p - 2) / 2) * s
    return np.where(r2 == 0, 0.0, out)


def flux_derivative(s, p: float, eta: float):
    s = np.asarray(s, dtype=float)
    if p == 2:
        return np.ones_like(s)
    r2 = s * s + eta * eta
    with np.errstate(divide="ignore", invalid="ignore"):
        out = r2 ** ((p - 4) / 2) * ((p - 1) * s * s + eta * eta)
    return np.where(r2 == 0, np.inf if p < 2 else 0.0, out)


def default_eta(values: np.ndarray, mesh: Mesh1D) -> float:
    """Flux regularization tied to the gradient scale of ``values``."""
    full = np.concatenate(([0.0], values, [0.0]))
    scale = float(np.max(np.abs(np.diff(full) / mesh.edge_lengths)))
    return ETA_REL * (scale if scale > 0 else 1.0)


def _slopes(values: np.ndarray, mesh: Mesh1D) -> np.ndarray:
    full = np.concatenate(([0.0], values, [0.0]))
    return np.diff(full) / mesh.edge_lengths


def _resolve_eta(values, mesh, p, eta):
    if p == 2:
        return 0.0
    return default_eta(values, mesh) if eta is None else float(eta)


def plap_values(values: np.ndarray, mesh: Mesh1D, p: float, eta: float | None = None) -> np.ndarray:
    eta = _resolve_eta(values, mesh, p, eta)
    F = flux(_slopes(values, mesh), p, eta)
    return -(F[1:] - F[:-1]) / mesh.cell_widths


def plap_jacobian(values: np.ndarray, mesh: Mesh1D, p: float, eta: float | None = None) -> Tridiagonal:
    eta = _resolve_eta(values, mesh, p, eta)
    c = flux_derivative(_slopes(values, mesh), p, eta) / mesh.edge_lengths
    h = mesh.cell_widths
    # row i couples to i+1 through edge i+1/2 and is scaled by 1/h_i
    return Tridiagonal(-c[1:-1] / h[1:], (c[:-1] + c[1:]) / h, -c[1:-1] / h[:-1])


def plap_term_scale(values: np.ndarray, mesh: Mesh1D, p: float, eta: float | None = None) -> np.ndarray:
    """Per-node magnitude ``(|F_{i-1/2}| + |F_{i+1/2}|) / h_i`` of the flux terms."""
    eta = _resolve_eta(values, mesh, p, eta)
    F = np.abs(flux(_slopes(values, mesh), p, eta))
    return (F[1:] + F[:-1]) / mesh.cell_widths


def p_laplacian_apply(u: GridFunction, p: float, eta: float | None = None) -> np.ndarray:
    """Nodal values of ``-Delta_p u``; pass ``eta=0`` for the unregularized flux."""
    return plap_values(u.values, u.mesh, p, eta)


# --- full problem -------------------------------------------------------------

def reaction(values: np.ndarray, spec: ProblemSpec) -> np.ndarray:
    """``(u + eps)^{-delta} + f_n(u)`` at each node."""
    return singular_term(values, spec) + truncated_power(values, spec)


def reaction_derivative(values: np.ndarray, spec: ProblemSpec) -> np.ndarray:
    return singular_term_derivative(values, spec) + truncated_power_derivative(values, spec)


def _check_domain(values: np.ndarray, spec: ProblemSpec):
    if np.any(values + spec.eps <= 0) or np.any(values < 0):
        raise DomainError("nodal values must satisfy u >= 0 and u + eps > 0")


def assemble_residual(u: GridFunction, lam: float, spec: ProblemSpec, eta: float | None = None) -> np.ndarray:
    """``-Delta_p u - lam * [(u+eps)^{-delta} + f_n(u)]`` at every interior node."""
    _check_domain(u.values, spec)
    return plap_values(u.values, u.mesh, spec.p, eta) - lam * reaction(u.values, spec)


def assemble_jacobian(u: GridFunction, lam: float, spec: ProblemSpec, eta: float | None = None) -> Tridiagonal:
    """Exact derivative of :func:`assemble_residual` with respect to the nodal values."""
    _check_domain(u.values, spec)
    J = plap_jacobian(u.values, u.mesh, spec.p, eta)
    J.diag = J.diag - lam * reaction_derivative(u.values, spec)
    return J
