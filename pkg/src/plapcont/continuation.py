"""Pseudo-arclength continuation of the solution branch in ``(lambda, u)``.

The branch starts on the minimal branch at a small ``lambda`` and is followed
through the fold towards large sup norms.  Steps are measured in the weighted
norm

    ||(du, dlam)||^2 = sum_i h_i du_i^2 / S^2 + dlam^2,   S = max(1, sup u),

with ``S`` frozen at the start of each step, so that once the solutions grow
the arclength tracks ``log sup u`` instead of the raw nodal values.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

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
from .eigen import first_eigenpair
from .errors import (
    DomainError,
    NoConvergence,
    NoFold,
    QueryTooCloseToFold,
    StepFailure,
    TailTooShort,
)
from .problem import ProblemSpec
from .solvers import (
    SolveOptions,
    max_positive_step,
    monotone_iteration_minimal,
    newton_solve,
    scaled_residual_norm,
)

log = logging.getLogger(__name__)

TERMINATION_REASONS = ("lambda_floor", "norm_cap", "step_failure", "max_steps")


@dataclass(frozen=True)
class ContinuationConfig:
    ds_init: float = 1e-2
    ds_min: float = 1e-8
    ds_max: float = 5e-2
    max_steps: int = 2000
    lambda_floor: float = 1e-7
    norm_cap: float = 1e3
    corrector_tol: float = 1e-9
    max_corrector: int = 12
    stop_after_fold: bool = False

    def __post_init__(self):
        if not 0 < self.ds_min <= self.ds_init <= self.ds_max:
            raise DomainError("need 0 < ds_min <= ds_init <= ds_max")
        if self.max_steps < 1 or self.max_corrector < 1:
            raise DomainError("step caps must be >= 1")
        if not (self.lambda_floor > 0 and self.norm_cap > 0 and self.corrector_tol > 0):
            raise DomainError("lambda_floor, norm_cap and corrector_tol must be positive")

    def with_(self, **changes) -> "ContinuationConfig":
        return ContinuationConfig(**{**asdict(self), **changes})


@dataclass
class BranchPoint:
    lam: float
    u: GridFunction = field(repr=False)
    arclength: float
    tangent_lambda_sign: int
    residual: float = 0.0
    converged: bool = True

    @property
    def sup_norm(self) -> float:
        return self.u.sup_norm

    @property
    def l2_norm(self) -> float:
        return self.u.l2_norm

    @property
    def argmax_location(self) -> float:
        return self.u.argmax_x


@dataclass
class Fold:
    Lambda_est: float
    index: int
    u: GridFunction = field(repr=False)


CSV_HEADER = ["s", "lambda", "sup_norm", "l2_norm", "argmax_x", "tangent_sign"]


@dataclass
class Branch:
    points: list
    spec: ProblemSpec
    mesh: Mesh1D
    config: ContinuationConfig
    termination_reason: str = "max_steps"
    fold: Fold | None = None
    sign_changes: int = 0

    def __len__(self):
        return len(self.points)

    @property
    def lambdas(self) -> np.ndarray:
        return np.array([pt.lam for pt in self.points])

    @property
    def sup_norms(self) -> np.ndarray:
        return np.array([pt.sup_norm for pt in self.points])

    @property
    def arclengths(self) -> np.ndarray:
        return np.array([pt.arclength for pt in self.points])

    @property
    def signs(self) -> np.ndarray:
        return np.array([pt.tangent_lambda_sign for pt in self.points])

    def lower_points(self) -> list:
        """Points up to and including the fold (all points without one)."""
        if self.fold is None:
            return list(self.points)
        return self.points[: self.fold.index + 1]

    def upper_points(self) -> list:
        if self.fold is None:
            return []
        return self.points[self.fold.index + 1 :]

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for pt in self.points:
            writer.writerow(
                [
                    f"{pt.arclength:.12e}",
                    f"{pt.lam:.12e}",
                    f"{pt.sup_norm:.12e}",
                    f"{pt.l2_norm:.12e}",
                    f"{pt.argmax_location:.12e}",
                    pt.tangent_lambda_sign,
                ]
            )
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    def manifest(self) -> dict:
        fold = None
        if self.fold is not None:
            fold = {
                "Lambda_est": self.fold.Lambda_est,
                "index": self.fold.index,
                "sup_norm": self.fold.u.sup_norm,
                "resolution": fold_resolution(self),
                "note": "fold solution; existence at the fold itself is not asserted",
            }
        return {
            "spec": self.spec.to_dict(),
            "mesh": self.mesh.to_dict(),
            "config": asdict(self.config),
            "num_points": len(self.points),
            "termination_reason": self.termination_reason,
            "fold": fold,
            "sign_changes": self.sign_changes,
            "shape": "fold" if self.fold is not None else "monotone",
        }

    def write_manifest(self, path, extra: dict | None = None) -> dict:
        record = self.manifest()
        if extra:
            record.update(extra)
        with open(path, "w") as fh:
            json.dump(record, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return record


def read_branch_csv(path) -> dict:
    """Columns of a branch CSV as float arrays keyed by header name."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != CSV_HEADER:
        raise DomainError(f"{path}: not a branch CSV (header {rows[0] if rows else None})")
    data = np.array(rows[1:], dtype=float).reshape(-1, len(CSV_HEADER))
    return {name: data[:, k] for k, name in enumerate(CSV_HEADER)}


# --- stepping -------------------------------------------------------------------

def _weights(mesh: Mesh1D, values: np.ndarray) -> np.ndarray:
    S = max(1.0, float(np.max(values)))
    return mesh.cell_widths / S**2


def _normalize(du, dlam, w):
    norm = math.sqrt(float(np.dot(w, du * du)) + dlam * dlam)
    return du / norm, dlam / norm


def _residual(u, lam, spec, mesh, eta):
    f = reaction(u, spec)
    R = plap_values(u, mesh, spec.p, eta) - lam * f
    scale = plap_term_scale(u, mesh, spec.p, eta) + lam * np.abs(f)
    return R, f, scaled_residual_norm(R, scale)


def _bordered_solve(u, lam, spec, mesh, eta, f, R, c, t_lam, arc):
    J = plap_jacobian(u, mesh, spec.p, eta)
    J.diag = J.diag - lam * reaction_derivative(u, spec)
    A = sp.bmat([[J.to_sparse(), sp.csc_matrix(-f[:, None])], [sp.csc_matrix(c[None, :]), sp.csc_matrix([[t_lam]])]], format="csc")
    sol = spsolve(A, -np.concatenate((R, [arc])))
    return sol[:-1], float(sol[-1])


def _corrector(u0, lam0, anchor_u, anchor_lam, t_u, t_lam, ds, w, spec, mesh, eta, cfg):
    """Newton on ``R(u, lam) = 0`` plus the arclength constraint.

    Returns ``(u, lam, residual, iterations)`` or None when the corrector fails.
    """
    u, lam = u0.copy(), lam0
    c = w * t_u
    for it in range(cfg.max_corrector + 1):
        try:
            R, f, res = _residual(u, lam, spec, mesh, eta)
        except DomainError:
            return None
        arc = float(np.dot(c, u - anchor_u)) + t_lam * (lam - anchor_lam) - ds
        if not np.isfinite(res):
            return None
        if res <= cfg.corrector_tol and abs(arc) <= cfg.corrector_tol * max(1.0, ds):
            return _polish_point(u, lam, R, f, res, c, t_lam, arc, spec, mesh, eta) + (it,)
        if it == cfg.max_corrector:
            return None
        du, dlam = _bordered_solve(u, lam, spec, mesh, eta, f, R, c, t_lam, arc)
        if not (np.all(np.isfinite(du)) and np.isfinite(dlam)):
            return None
        alpha = min(1.0, max_positive_step(u, du))
        if lam + alpha * dlam <= 0:
            return None
        u = u + alpha * du
        lam = lam + alpha * dlam
    return None


def _polish_point(u, lam, R, f, res, c, t_lam, arc, spec, mesh, eta):
    """One more full bordered step, kept only if it lowers the residual."""
    du, dlam = _bordered_solve(u, lam, spec, mesh, eta, f, R, c, t_lam, arc)
    if np.all(np.isfinite(du)) and max_positive_step(u, du) >= 1.0 and lam + dlam > 0:
        try:
            res_new = _residual(u + du, lam + dlam, spec, mesh, eta)[2]
        except DomainError:
            return u, lam, res
        if res_new <= res:
            return u + du, lam + dlam, res_new
    return u, lam, res


def _initial_tangent(u, lam, spec, mesh, eta, w):
    """Tangent with increasing ``lambda`` from ``J du/dlam = f``."""
    J = plap_jacobian(u, mesh, spec.p, eta)
    J.diag = J.diag - lam * reaction_derivative(u, spec)
    z = J.solve(reaction(u, spec))
    return _normalize(z, 1.0, w)


def _sign(x: float) -> int:
    return int(np.sign(x))


def trace_branch(
    spec: ProblemSpec,
    cfg: ContinuationConfig | None = None,
    mesh: Mesh1D | None = None,
    opts: SolveOptions | None = None,
) -> Branch:
    """Follow the branch from ``lambda = 10 lambda_floor`` on the minimal branch.

    Raises :class:`StepFailure` with the partial branch attached if the step
    size underflows ``ds_min``.
    """
    cfg = cfg or ContinuationConfig()
    mesh = mesh or Mesh1D.for_spec(spec)
    opts = opts or SolveOptions()
    lam = 10 * cfg.lambda_floor
    start = monotone_iteration_minimal(lam, spec, opts, mesh)
    # tighten the start to the corrector tolerance of the branch
    start = newton_solve(start, lam, spec, SolveOptions(tol_residual=min(opts.tol_residual, cfg.corrector_tol)))
    u = start.values
    eta = default_eta(u, mesh) if spec.p != 2 else 0.0
    res = _residual(u, lam, spec, mesh, eta)[2]
    branch = Branch([BranchPoint(lam, start, 0.0, 1, res)], spec, mesh, cfg)

    w = _weights(mesh, u)
    t_u, t_lam = _initial_tangent(u, lam, spec, mesh, eta, w)
    ds = cfg.ds_init
    s = 0.0
    prev_sign = 1
    reason = "max_steps"
    for step in range(cfg.max_steps):
        w = _weights(mesh, u)
        t_u, t_lam = _normalize(t_u, t_lam, w)
        eta = default_eta(u, mesh) if spec.p != 2 else 0.0
        while True:
            u_pred = u + ds * t_u
            lam_pred = lam + ds * t_lam
            if lam_pred < cfg.lambda_floor and branch.fold is not None:
                reason = "lambda_floor"
                break
            if np.all(u_pred > 0) and lam_pred > 0:
                out = _corrector(u_pred, lam_pred, u, lam, t_u, t_lam, ds, w, spec, mesh, eta, cfg)
            else:
                out = None
            if out is not None:
                u_new, lam_new, res, its = out
                du, dlam = u_new - u, lam_new - lam
                dist = math.sqrt(float(np.dot(w, du * du)) + dlam * dlam)
                forward = float(np.dot(w * du, t_u)) + dlam * t_lam > 0
                if forward and dist <= 2 * ds:
                    break
            ds *= 0.5
            if ds < cfg.ds_min:
                branch.termination_reason = "step_failure"
                _finish(branch)
                raise StepFailure(f"step size underflow at lambda={lam:.6g}, sup={np.max(u):.6g}", branch)
        if reason == "lambda_floor":
            break

        s += dist
        sign = _sign(dlam) or prev_sign
        # the next predictor follows the secant through the last two points
        t_u, t_lam = du, dlam
        u, lam = u_new, lam_new
        branch.points.append(BranchPoint(lam, GridFunction(u, mesh), s, sign, res))
        if sign != prev_sign:
            branch.sign_changes += 1
            if branch.sign_changes > 1:
                # truncated problems may turn back towards their asymptote
                level = logging.INFO if spec.truncated else logging.WARNING
                log.log(level, "branch turned again at lambda=%.6g (%d sign changes)", lam, branch.sign_changes)
            if branch.fold is None:
                branch.fold = _fold_from_points(branch.points)
        prev_sign = sign

        if its <= 3:
            ds = min(1.5 * ds, cfg.ds_max)
        elif its > 6:
            ds = max(0.7 * ds, cfg.ds_min)
        if np.max(u) >= cfg.norm_cap:
            reason = "norm_cap"
            break
        if lam < cfg.lambda_floor:
            reason = "lambda_floor"
            break
        if cfg.stop_after_fold and branch.fold is not None and branch.fold.index < len(branch.points) - 2:
            reason = "norm_cap"
            break
    branch.termination_reason = reason
    _finish(branch)
    return branch


def _finish(branch: Branch):
    if branch.fold is None and branch.sign_changes == 0:
        return
    try:
        branch.fold = _fold_from_points(branch.points)
    except NoFold:
        branch.fold = None


# --- fold and counting ----------------------------------------------------------

def parabola_vertex(s, y) -> tuple[float, float]:
    """Vertex ``(s*, y*)`` of the parabola through three points."""
    s = np.asarray(s, dtype=float)
    y = np.asarray(y, dtype=float)
    a, b, c = np.polyfit(s - s[1], y, 2)
    if a >= 0:
        k = int(np.argmax(y))
        return float(s[k]), float(y[k])
    s_star = -b / (2 * a)
    return float(s[1] + s_star), float(c - b * b / (4 * a))


def _fold_from_points(points) -> Fold:
    lams = np.array([pt.lam for pt in points])
    signs = np.array([pt.tangent_lambda_sign for pt in points])
    flips = np.nonzero(np.diff(signs) != 0)[0]
    if flips.size == 0:
        raise NoFold("dlambda/ds keeps one sign along the branch")
    # the first + to - flip marks the fold; take the lambda-max in its neighborhood
    j = int(flips[0])
    lo, hi = max(j - 2, 0), min(j + 3, len(points))
    k = lo + int(np.argmax(lams[lo:hi]))
    if 0 < k < len(points) - 1:
        s = [points[i].arclength for i in (k - 1, k, k + 1)]
        _, Lam = parabola_vertex(s, lams[k - 1 : k + 2])
        Lam = max(Lam, lams[k])
    else:
        Lam = float(lams[k])
    return Fold(float(Lam), k, points[k].u)


def detect_fold(branch: Branch) -> tuple[float, GridFunction]:
    """``(Lambda_est, u_at_fold)`` from the first sign change of ``dlambda/ds``."""
    fold = _fold_from_points(branch.points)
    return fold.Lambda_est, fold.u


def fold_resolution(branch: Branch) -> float:
    """Largest ``|dlambda|`` of the segments next to the fold."""
    if branch.fold is None:
        return 0.0
    lams = branch.lambdas
    k = branch.fold.index
    seg = np.abs(np.diff(lams[max(k - 1, 0) : k + 2]))
    return float(seg.max()) if seg.size else 0.0


def count_solutions_at(lambda_query: float, branch: Branch) -> int:
    """Number of times the ``(lambda, sup u)`` polyline crosses ``lambda = lambda_query``."""
    if branch.fold is not None:
        if abs(lambda_query - branch.fold.Lambda_est) < 2 * fold_resolution(branch):
            raise QueryTooCloseToFold(
                f"lambda={lambda_query:.6g} is within the resolution of the fold at {branch.fold.Lambda_est:.6g}"
            )
    d = branch.lambdas - lambda_query
    count = 0
    for a, b in zip(d[:-1], d[1:]):
        if a * b < 0 or (b == 0 and a != 0):
            count += 1
    return count


def solution_on_branch(branch: Branch, lam: float, part: str = "lower", opts: SolveOptions | None = None) -> GridFunction:
    """Solution at exactly ``lam`` on the lower or upper part, Newton-corrected from the polyline."""
    points = branch.lower_points() if part == "lower" else branch.upper_points()
    for a, b in zip(points[:-1], points[1:]):
        if (a.lam - lam) * (b.lam - lam) <= 0 and a.lam != b.lam:
            t = (lam - a.lam) / (b.lam - a.lam)
            guess = a.u.with_values((1 - t) * a.u.values + t * b.u.values)
            return newton_solve(guess, lam, branch.spec, opts or SolveOptions(tol_residual=branch.config.corrector_tol))
    raise DomainError(f"lambda={lam:.6g} is not crossed by the {part} part of the branch")


def max_location_trace(branch: Branch) -> float:
    """Smallest distance from the maximizer of ``u`` to the boundary over the branch."""
    if not branch.points:
        raise DomainError("empty branch")
    L = branch.mesh.length
    return float(min(min(pt.argmax_location, L - pt.argmax_location) for pt in branch.points))


def upper_branch_slope(branch: Branch, decades: float = 2.0) -> float:
    """Log-log slope of ``sup u`` against ``lambda`` over the last decades before the end."""
    pts = branch.upper_points()
    if not pts:
        raise NoFold("no upper branch")
    sup = np.array([pt.sup_norm for pt in pts])
    lam = np.array([pt.lam for pt in pts])
    keep = sup >= sup.max() / 10**decades
    if keep.sum() < 5:
        raise TailTooShort("fewer than 5 points on the upper-branch tail")
    slope, _ = np.polyfit(np.log(lam[keep]), np.log(sup[keep]), 1)
    return float(slope)


# --- sweeps ---------------------------------------------------------------------

def _trace_fold(args):
    spec, cfg, mesh = args
    try:
        branch = trace_branch(spec, cfg, mesh)
    except StepFailure as exc:
        return None, str(exc)
    return branch, None


def _run_all(jobs, workers: int):
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_trace_fold, jobs))
    return [_trace_fold(job) for job in jobs]


@dataclass
class EpsilonSweep:
    eps: list
    Lambda: list
    failures: dict
    monotone: bool
    limit_estimate: float | None
    branches: list = field(default_factory=list, repr=False)

    @property
    def pairs(self) -> list:
        return list(zip(self.eps, self.Lambda))

    def matched_distances(self, lam: float) -> list:
        """Sup distances between lower-branch solutions at ``lam`` for consecutive eps."""
        sols = [solution_on_branch(b, lam) for b in self.branches]
        return [float(np.max(np.abs(a.values - b.values))) for a, b in zip(sols[:-1], sols[1:])]


def aitken_limit(values) -> float | None:
    """Aitken extrapolation over the last three values of a sequence."""
    if len(values) < 3:
        return None
    a, b, c = values[-3:]
    denom = (c - b) - (b - a)
    if abs(denom) <= 1e-14 * max(abs(c), 1.0) or (c - b) * (b - a) <= 0:
        return float(c)
    return float(c - (c - b) ** 2 / denom)


def epsilon_sweep(
    spec_base: ProblemSpec,
    eps_list,
    cfg: ContinuationConfig | None = None,
    mesh: Mesh1D | None = None,
    slack: float = 1e-4,
    workers: int = 1,
) -> EpsilonSweep:
    """Fold estimates ``Lambda_eps`` along a descending list of ``eps``."""
    eps_list = [float(e) for e in eps_list]
    if any(e < 0 for e in eps_list) or any(b >= a for a, b in zip(eps_list[:-1], eps_list[1:])):
        raise DomainError("eps_list must be strictly descending and nonnegative")
    cfg = cfg or ContinuationConfig()
    jobs = [(spec_base.with_(eps=e), cfg, mesh or Mesh1D.for_spec(spec_base.with_(eps=e))) for e in eps_list]
    eps_ok, lams, branches, failures = [], [], [], {}
    for e, (branch, err) in zip(eps_list, _run_all(jobs, workers)):
        if err is not None or branch.fold is None:
            failures[e] = err or "no fold found"
            continue
        eps_ok.append(e)
        lams.append(branch.fold.Lambda_est)
        branches.append(branch)
    monotone = all(b <= a + slack for a, b in zip(lams[:-1], lams[1:]))
    return EpsilonSweep(eps_ok, lams, failures, monotone, aitken_limit(lams), branches)


def truncation_asymptote_estimate(
    spec: ProblemSpec,
    cfg: ContinuationConfig | None = None,
    mesh: Mesh1D | None = None,
    branch: Branch | None = None,
) -> float:
    """Vertical asymptote of a truncated branch, fitted over ``sup u in [10 n, norm_cap]``."""
    if not spec.truncated:
        raise DomainError("truncation asymptote needs a finite n_trunc")
    cfg = cfg or ContinuationConfig()
    if cfg.norm_cap < 50 * spec.n_trunc:
        raise DomainError(f"norm_cap must be at least 50 n = {50 * spec.n_trunc:g}")
    if branch is None:
        branch = trace_branch(spec, cfg, mesh)
    sup = branch.sup_norms
    tail = (sup >= 10 * spec.n_trunc) & (sup <= cfg.norm_cap * (1 + 1e-12))
    if tail.sum() < 10:
        raise TailTooShort(f"only {int(tail.sum())} points with sup u in [10n, norm_cap]")
    # least-squares constant fit
    return float(np.mean(branch.lambdas[tail]))


@dataclass
class TruncationSweep:
    n: list
    asymptote: list
    target: list
    failures: dict
    lambda1: float

    def ratios(self) -> list:
        return [a / b for a, b in zip(self.asymptote[:-1], self.asymptote[1:])]


def _trace_asymptote(args):
    spec, cfg, mesh = args
    try:
        return truncation_asymptote_estimate(spec, cfg, mesh), None
    except (StepFailure, TailTooShort, NoConvergence) as exc:
        return None, str(exc)


def truncation_sweep(
    spec_base: ProblemSpec,
    n_list,
    cfg: ContinuationConfig | None = None,
    mesh: Mesh1D | None = None,
    workers: int = 1,
) -> TruncationSweep:
    """Asymptote estimates for each ``n`` next to ``lambda1 / n^{q-p+1}``."""
    cfg = cfg or ContinuationConfig()
    mesh = mesh or Mesh1D.for_spec(spec_base)
    lam1 = first_eigenpair(mesh, spec_base.p).lambda1
    jobs = [(spec_base.with_(n_trunc=float(n)), cfg, mesh) for n in n_list]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_trace_asymptote, jobs))
    else:
        results = [_trace_asymptote(job) for job in jobs]
    ns, vals, targets, failures = [], [], [], {}
    for n, (val, err) in zip(n_list, results):
        if err is not None:
            failures[n] = err
            continue
        ns.append(n)
        vals.append(val)
        targets.append(lam1 / float(n) ** spec_base.superlinear_gap)
    return TruncationSweep(ns, vals, targets, failures, lam1)
