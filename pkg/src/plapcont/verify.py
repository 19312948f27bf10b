"""Verification battery: every quantitative claim checked against the discrete solver.

Checks run in dependency order (eigenpairs, torsion, base problem, the
reference branch, then the sweeps) and share intermediate results through a
:class:`_Context`.  A failing computation marks its checks failed instead of
aborting the battery.
"""

from __future__ import annotations

import json
import logging
import math
import platform
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import RunConfig
from .continuation import (
    Branch,
    count_solutions_at,
    epsilon_sweep,
    max_location_trace,
    trace_branch,
    truncation_sweep,
    upper_branch_slope,
)
from .discretization import GridFunction, Mesh1D, assemble_jacobian, assemble_residual
from .eigen import first_eigenpair
from .errors import NoConvergence, NoFold, PlapcontError
from .plotting import bifurcation_diagram, sweep_plot
from .problem import (
    ProblemSpec,
    certificate_threshold,
    lambda_star_upper_bound,
    uniqueness_ball_radius,
)
from .solvers import (
    SolveOptions,
    bump,
    monotone_iteration_minimal,
    newton_solve,
    sandwich_check,
    solve_singular_base,
    torsion_solution,
)

log = logging.getLogger(__name__)

# checks whose tolerance is a count or an exact comparison may carry tolerance 0
EXACT_CHECKS = {"multiplicity", "nonexistence", "sandwich"}

ANCHORS = {
    "eigen_p2": "first eigenpair -Delta_p phi1 = lambda1 phi1^(p-1), p = 2",
    "eigen_p3": "first eigenpair -Delta_p phi1 = lambda1 phi1^(p-1), p = 3",
    "torsion_p2": "torsion problem -Delta_p e_p = 1, p = 2",
    "torsion_p3": "torsion problem -Delta_p e_p = 1, p = 3",
    "base_scaling": "base singular scaling omega_{lambda,0} = lambda^(1/(p-1+delta)) omega_{1,0}",
    "fold_bound": "fold bound 0 < Lambda <= lambda1/g_min <= lambda1 (zeta+1)^delta zeta^(p-1)",
    "multiplicity": "at least two solutions below the fold",
    "nonexistence": "no solution above lambda1/g_min",
    "upper_slope": "bifurcation from infinity at lambda = 0 with blow-up rate 1/(q-p+1)",
    "asymptote": "truncated branch bifurcates from infinity at lambda1/n^(q-p+1)",
    "asymptote_ratio": "truncated asymptote ratio 2^(q-p+1) between n and 2n",
    "eps_monotone": "eps -> Lambda_eps nondecreasing; solutions converge as eps -> 0",
    "monotone_iteration": "monotone iteration from u_0 = 0 gives the minimal solution",
    "sandwich": "a priori sandwich lambda^(1/(p-1)) K1 phi1 <= u <= r + lambda^(1/(p-1)) K2^(1/(p-1)) e_p",
    "uniqueness": "at most one solution with sup norm below zeta/2",
    "jacobian": "discrete Jacobian matches finite differences",
    "max_location": "maximum stays a fixed distance away from the boundary",
}


@dataclass
class Check:
    name: str
    anchor: str
    measured: list
    target: list
    tolerance: float
    passed: bool
    status: str = "ok"
    reason: str = ""
    params: dict = field(default_factory=dict)

    @classmethod
    def make(cls, name, measured, target, tolerance, passed, reason="", **params):
        def listify(v):
            v = v if isinstance(v, (list, tuple, np.ndarray)) else [v]
            return [float(x) for x in v]

        return cls(name, ANCHORS[name], listify(measured), listify(target), float(tolerance), bool(passed),
                   "ok", reason, {k: _plain(v) for k, v in params.items()})


def _plain(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    return v


@dataclass
class VerificationReport:
    checks: list
    environment: dict
    wall_times: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.checks) and all(c.passed for c in self.checks)

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "checks": [asdict(c) for c in self.checks],
            "environment": self.environment,
            "wall_times": self.wall_times,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "VerificationReport":
        return cls([Check(**c) for c in d["checks"]], d["environment"], d.get("wall_times", {}))

    @classmethod
    def from_json(cls, text: str) -> "VerificationReport":
        return cls.from_dict(json.loads(text))

    def write(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    def summary_lines(self) -> list:
        lines = []
        for c in self.checks:
            tag = "PASS" if c.passed else ("SKIP" if c.status == "skipped" else "FAIL")
            extra = f" ({c.reason})" if c.reason else ""
            params = " ".join(f"{k}={v}" for k, v in c.params.items())
            lines.append(f"{tag} {c.name} {params} measured={c.measured} target={c.target}{extra}".replace("  ", " "))
        return lines


# --- shared state -----------------------------------------------------------------

class _Context:
    def __init__(self, cfg: RunConfig, out_dir: Path | None):
        self.cfg = cfg
        self.out_dir = out_dir
        self.tol = cfg.verify.tolerances
        self._eig = {}
        self.branches: list = []
        self.reference: Branch | None = None

    def rng(self, stage: str) -> np.random.Generator:
        # one stream per stage so a subset run reproduces the full-run values
        return np.random.default_rng([self.cfg.seed, *stage.encode()])

    def mesh(self, spec: ProblemSpec | None = None) -> Mesh1D:
        return self.cfg.build_mesh(spec)

    def lambda1(self, p: float, spec: ProblemSpec | None = None):
        mesh = self.mesh(spec)
        key = (p, mesh)
        if key not in self._eig:
            self._eig[key] = first_eigenpair(mesh, p)
        return self._eig[key]


def _positive_tol(ctx, name):
    tol = ctx.tol[name]
    if name not in EXACT_CHECKS and not tol > 0:
        return None
    return tol


def _skipped(name, reason) -> Check:
    c = Check.make(name, [], [], 0.0, False, reason)
    c.status = "skipped"
    return c


def _failed(name, exc, **params) -> Check:
    return Check.make(name, [], [], 0.0, False, f"{type(exc).__name__}: {exc}", **params)


def _rel(a, b):
    return abs(a - b) / abs(b)


# --- individual checks --------------------------------------------------------------

def check_eigen(ctx):
    out = []
    targets = {"eigen_p2": (2.0, math.pi**2), "eigen_p3": (3.0, 2 * (2 * math.pi / (3 * math.sin(math.pi / 3))) ** 3)}
    for name, (p, target) in targets.items():
        lam = ctx.lambda1(p).lambda1
        out.append(Check.make(name, lam, target, ctx.tol[name], _rel(lam, target) <= ctx.tol[name], p=p))
    return out


def check_torsion(ctx):
    out = []
    L = ctx.cfg.spec.domain_length
    for name, p in (("torsion_p2", 2.0), ("torsion_p3", 3.0)):
        sup = torsion_solution(ctx.mesh(), p, ctx.cfg.solve).sup_norm
        target = (p - 1) / p * (L / 2) ** (p / (p - 1))
        out.append(Check.make(name, sup, target, ctx.tol[name], abs(sup - target) <= ctx.tol[name], p=p))
    return out


def check_base_scaling(ctx):
    out = []
    lams = np.array(ctx.cfg.verify.base_lambdas, dtype=float)
    for d in ctx.cfg.verify.delta_grid:
        spec = ctx.cfg.spec.with_(delta=float(d), eps=0.0, n_trunc=math.inf)
        try:
            sups = [solve_singular_base(lam, 0.0, spec, ctx.cfg.solve, ctx.mesh(spec)).sup_norm for lam in lams]
        except PlapcontError as exc:
            out.append(_failed("base_scaling", exc, delta=d))
            continue
        slope = np.polyfit(np.log(lams), np.log(sups), 1)[0]
        target = 1 / (spec.p - 1 + spec.delta)
        out.append(Check.make("base_scaling", slope, target, ctx.tol["base_scaling"],
                              _rel(slope, target) <= ctx.tol["base_scaling"], delta=d))
    return out


def check_fold_bound(ctx):
    out = []
    tol = ctx.tol["fold_bound"]
    cont = ctx.cfg.continuation.with_(stop_after_fold=True)
    for p in ctx.cfg.verify.p_grid:
        for d in ctx.cfg.verify.delta_grid:
            spec = ctx.cfg.spec.with_(p=float(p), delta=float(d), eps=0.0, n_trunc=math.inf)
            try:
                lam1 = ctx.lambda1(spec.p, spec).lambda1
                branch = trace_branch(spec, cont, ctx.mesh(spec), ctx.cfg.solve)
                ctx.branches.append(branch)
                fold = branch.fold.Lambda_est
            except (PlapcontError, AttributeError) as exc:
                out.append(_failed("fold_bound", exc, p=p, delta=d))
                continue
            cert = certificate_threshold(spec, lam1)
            bound = lambda_star_upper_bound(spec, lam1)
            ok = fold <= (1 - tol) * cert and cert <= (1 - tol) * bound
            out.append(Check.make("fold_bound", [fold, cert], [cert, bound], tol, ok, p=p, delta=d))
    return out


def reference_branch(ctx) -> Branch:
    if ctx.reference is None:
        spec = ctx.cfg.spec
        ctx.reference = trace_branch(spec, ctx.cfg.continuation, ctx.mesh(spec), ctx.cfg.solve)
        ctx.branches.append(ctx.reference)
    return ctx.reference


def check_multiplicity(ctx):
    branch = reference_branch(ctx)
    spec = branch.spec
    lam1 = ctx.lambda1(spec.p, spec).lambda1
    if branch.fold is None:
        raise NoFold(f"reference branch has no fold (ended by {branch.termination_reason})")
    fold = branch.fold.Lambda_est
    cert = certificate_threshold(spec, lam1)
    out = []
    fracs = (0.25, 0.5, 0.75)
    counts = [count_solutions_at(f * fold, branch) for f in fracs]
    out.append(Check.make("multiplicity", counts, [2] * len(fracs), 0, all(c == 2 for c in counts), fractions=list(fracs)))

    lam_q = ctx.cfg.verify.nonexistence_factor * cert
    count = count_solutions_at(lam_q, branch) if lam_q > fold else -1
    failures, starts = 0, _standard_starts(branch, ctx.mesh(spec))
    for guess in starts:
        try:
            newton_solve(guess, lam_q, spec, ctx.cfg.solve)
        except NoConvergence:
            failures += 1
    ok = count == 0 and failures == len(starts) and lam_q > cert
    reason = "" if lam_q > cert else "query does not exceed the no-solution threshold"
    out.append(Check.make("nonexistence", [count, failures], [0, len(starts)], 0, ok, reason, lam=lam_q))
    return out


def _standard_starts(branch: Branch, mesh: Mesh1D) -> list:
    starts = [GridFunction(a * bump(mesh), mesh) for a in (0.1, 1.0, 10.0)]
    if branch.fold is not None:
        starts.append(branch.fold.u.copy())
    return starts


def check_upper_slope(ctx):
    branch = reference_branch(ctx)
    spec = branch.spec
    target = -1 / spec.superlinear_gap
    try:
        slope = upper_branch_slope(branch, 2.0)
    except PlapcontError as exc:
        return [_failed("upper_slope", exc)]
    tol = ctx.tol["upper_slope"]
    reached = branch.termination_reason == "norm_cap"
    reason = "" if reached else f"branch ended by {branch.termination_reason}"
    return [Check.make("upper_slope", slope, target, tol, reached and _rel(slope, target) <= tol, reason)]


def check_truncation(ctx):
    spec = ctx.cfg.spec.with_(eps=ctx.cfg.verify.truncation_eps)
    try:
        sweep = truncation_sweep(spec, ctx.cfg.verify.n_list, ctx.cfg.continuation, ctx.mesh(spec),
                                 ctx.cfg.verify.workers)
    except PlapcontError as exc:
        return [_failed("asymptote", exc)]
    out = []
    for n, val, target in zip(sweep.n, sweep.asymptote, sweep.target):
        out.append(Check.make("asymptote", val, target, ctx.tol["asymptote"], _rel(val, target) <= ctx.tol["asymptote"], n=n))
    for n, err in sweep.failures.items():
        out.append(Check.make("asymptote", [], [], ctx.tol["asymptote"], False, err, n=n))
    gap = spec.superlinear_gap
    for (n1, a1), (n2, a2) in zip(zip(sweep.n, sweep.asymptote), zip(sweep.n[1:], sweep.asymptote[1:])):
        ratio, target = a1 / a2, (n2 / n1) ** gap
        out.append(Check.make("asymptote_ratio", ratio, target, ctx.tol["asymptote_ratio"],
                              _rel(ratio, target) <= ctx.tol["asymptote_ratio"], n=[n1, n2]))
    if ctx.out_dir is not None and sweep.n:
        sweep_plot(ctx.out_dir / "truncation_asymptote.svg", sweep.n, sweep.asymptote, sweep.target,
                   xlabel="n", ylabel="asymptote")
    return out


def check_eps(ctx):
    spec = ctx.cfg.spec.with_(n_trunc=math.inf)
    cont = ctx.cfg.continuation.with_(stop_after_fold=True)
    tol = ctx.tol["eps_monotone"]
    try:
        sweep = epsilon_sweep(spec, ctx.cfg.verify.eps_list, cont, ctx.mesh(spec), tol, ctx.cfg.verify.workers)
        ctx.branches.extend(sweep.branches)
        lam_match = 0.5 * min(sweep.Lambda)
        dists = sweep.matched_distances(lam_match)
    except PlapcontError as exc:
        return [_failed("eps_monotone", exc)]
    shrinking = all(b < a for a, b in zip(dists[:-1], dists[1:]))
    ok = sweep.monotone and shrinking and not sweep.failures
    reason = "; ".join(f"eps={e}: {m}" for e, m in sweep.failures.items())
    out = [Check.make("eps_monotone", sweep.Lambda, [], tol, ok, reason, eps=sweep.eps, matched_distances=dists,
                      limit_estimate=sweep.limit_estimate)]
    if ctx.out_dir is not None and sweep.eps:
        sweep_plot(ctx.out_dir / "eps_sweep.svg", sweep.eps, sweep.Lambda, xlabel="eps", ylabel="fold lambda")
    return out


def check_monotone_iteration(ctx):
    branch = reference_branch(ctx)
    tol = ctx.tol["monotone_iteration"]
    half = 0.5 * branch.fold.Lambda_est
    lower = [pt for pt in branch.lower_points() if pt.lam < half and pt.lam > 10 * branch.config.lambda_floor]
    picks = [lower[int(k)] for k in np.linspace(0, len(lower) - 1, 5).round()] if lower else []
    out = []
    for pt in picks:
        trace = []
        try:
            u = monotone_iteration_minimal(pt.lam, branch.spec, ctx.cfg.solve, branch.mesh, trace)
        except PlapcontError as exc:
            out.append(_failed("monotone_iteration", exc, lam=pt.lam))
            continue
        dist = float(np.max(np.abs(u.values - pt.u.values)))
        monotone = all(rec["monotone"] for rec in trace)
        out.append(Check.make("monotone_iteration", dist, 0.0, tol, monotone and dist <= tol, lam=pt.lam,
                              outer_steps=len(trace)))
    if not picks:
        out.append(_skipped("monotone_iteration", "no lower-branch points below half the fold"))
    return out


def check_sandwich(ctx):
    branch = reference_branch(ctx)
    spec = branch.spec
    eig = ctx.lambda1(spec.p, spec)
    e_p = torsion_solution(branch.mesh, spec.p, ctx.cfg.solve)
    norms = np.maximum(branch.lambdas, branch.sup_norms)
    R, varrho = 1.1 * norms.max(), 0.9 * norms.min()
    r = varrho
    bad = []
    for k, pt in enumerate(branch.points):
        res = sandwich_check(pt.u, pt.lam, spec, eig.phi1, e_p, R, varrho, r, eig.lambda1)
        if not res:
            bad.append(k)
    return [Check.make("sandwich", len(bad), 0, 0, not bad, R=R, varrho=varrho, points=len(branch.points))]


def check_uniqueness(ctx):
    branch = reference_branch(ctx)
    spec = branch.spec
    radius = uniqueness_ball_radius(spec)
    if spec.eps >= radius:
        return [_skipped("uniqueness", "eps is not below zeta/2")]
    factor = ctx.tol["uniqueness"]
    opts = ctx.cfg.solve
    small = [pt for pt in branch.lower_points() if pt.sup_norm < radius]
    rng = ctx.rng("uniqueness")
    worst = 0.0
    for pt in small:
        for _ in range(5):
            noise = 1 + 0.1 * rng.uniform(-1, 1, pt.u.values.size)
            try:
                u = newton_solve(pt.u.with_values(pt.u.values * noise), pt.lam, spec, opts)
            except PlapcontError as exc:
                return [_failed("uniqueness", exc, lam=pt.lam)]
            worst = max(worst, float(np.max(np.abs(u.values - pt.u.values))))
    if not small:
        return [_skipped("uniqueness", "no lower-branch points inside the ball")]
    bound = factor * opts.tol_residual
    return [Check.make("uniqueness", worst, bound, factor, worst <= bound, points=len(small))]


def jacobian_fd_error(u: GridFunction, lam: float, spec: ProblemSpec, rng, h: float = 1e-6) -> float:
    """Relative error of ``J v`` against a central difference along a random direction."""
    v = rng.standard_normal(u.values.size) * u.values
    eta = None if spec.p == 2 else 1e-8 * float(np.max(np.abs(np.diff(u.full_values) / u.mesh.edge_lengths)))
    Jv = assemble_jacobian(u, lam, spec, eta).matvec(v)
    plus = assemble_residual(u.with_values(u.values + h * v), lam, spec, eta)
    minus = assemble_residual(u.with_values(u.values - h * v), lam, spec, eta)
    fd = (plus - minus) / (2 * h)
    return float(np.linalg.norm(Jv - fd) / np.linalg.norm(Jv))


def check_jacobian(ctx):
    tol = ctx.tol["jacobian"]
    mesh = Mesh1D(40, ctx.cfg.spec.domain_length, "graded")
    worst = 0.0
    grid = [(p, d, q) for p in ctx.cfg.verify.p_grid for d in ctx.cfg.verify.delta_grid for q in (p + 0.5, 3.0, 4.0)
            if q > p - 1]
    rng = ctx.rng("jacobian")
    for k in range(ctx.cfg.verify.jacobian_states):
        p, d, q = grid[k % len(grid)]
        eps = float(rng.choice([0.0, 1e-2, 0.1]))
        spec = ProblemSpec(p=p, q=q, delta=d, eps=eps)
        values = bump(mesh) * rng.uniform(0.5, 3.0) * (1 + 0.2 * rng.uniform(-1, 1, mesh.num_interior))
        lam = float(rng.uniform(0.1, 5.0))
        worst = max(worst, jacobian_fd_error(GridFunction(values, mesh), lam, spec, rng))
    return [Check.make("jacobian", worst, 0.0, tol, worst <= tol, states=ctx.cfg.verify.jacobian_states)]


def check_max_location(ctx):
    threshold = ctx.tol["max_location"]
    if not ctx.branches:
        return [_skipped("max_location", "no traced branches")]
    dists = [max_location_trace(b) / b.mesh.length for b in ctx.branches]
    return [Check.make("max_location", min(dists), threshold, threshold, min(dists) >= threshold,
                       branches=len(dists))]


BATTERY = (
    ("eigen", check_eigen, ("eigen_p2", "eigen_p3")),
    ("torsion", check_torsion, ("torsion_p2", "torsion_p3")),
    ("base_singular", check_base_scaling, ("base_scaling",)),
    ("fold_grid", check_fold_bound, ("fold_bound",)),
    ("branch", check_multiplicity, ("multiplicity", "nonexistence")),
    ("upper_branch", check_upper_slope, ("upper_slope",)),
    ("monotone_iteration", check_monotone_iteration, ("monotone_iteration",)),
    ("sandwich", check_sandwich, ("sandwich",)),
    ("uniqueness", check_uniqueness, ("uniqueness",)),
    ("jacobian", check_jacobian, ("jacobian",)),
    ("truncation_sweep", check_truncation, ("asymptote", "asymptote_ratio")),
    ("eps_sweep", check_eps, ("eps_monotone",)),
    ("max_location", check_max_location, ("max_location",)),
)


def run_verification(cfg: RunConfig, out_dir=None, only=None) -> VerificationReport:
    """Run the battery; ``only`` restricts it to the named stages."""
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    ctx = _Context(cfg, out_dir)
    checks, wall = [], {}
    for stage, fn, names in BATTERY:
        if only is not None and stage not in only:
            continue
        bad = [n for n in names if _positive_tol(ctx, n) is None]
        if bad:
            checks.extend(_skipped(n, f"tolerance {ctx.tol[n]} is not positive") for n in bad)
            continue
        t0 = time.perf_counter()
        try:
            checks.extend(fn(ctx))
        except PlapcontError as exc:
            log.warning("stage %s failed: %s", stage, exc)
            checks.extend(_failed(n, exc) for n in names)
        wall[stage] = time.perf_counter() - t0
    if out_dir is not None and ctx.reference is not None:
        _write_reference(ctx, out_dir)
    env = {
        "mesh": dict(cfg.mesh),
        "spec": cfg.spec.to_dict(),
        "solve": asdict(cfg.solve),
        "continuation": asdict(cfg.continuation),
        "tolerances": dict(cfg.verify.tolerances),
        "seed": cfg.seed,
        "versions": {
            "plapcont": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
    }
    return VerificationReport(checks, env, wall)


def _write_reference(ctx, out_dir: Path):
    branch = ctx.reference
    spec = branch.spec
    lam1 = ctx.lambda1(spec.p, spec).lambda1
    branch.to_csv(out_dir / "reference_branch.csv")
    branch.write_manifest(out_dir / "reference_branch.json")
    fold = (branch.fold.Lambda_est, branch.fold.u.sup_norm) if branch.fold else None
    bifurcation_diagram(
        out_dir / "reference_branch.svg",
        branch.lambdas,
        branch.sup_norms,
        fold=fold,
        bound=lambda_star_upper_bound(spec, lam1),
        certificate=certificate_threshold(spec, lam1),
    )
