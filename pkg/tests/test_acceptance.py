"""Acceptance battery: one test per criterion, each logging a PASS/FAIL line.

Reference configuration: (0, 1), graded mesh with 400 interior nodes,
p = 2, delta = 0.5, q = 3.  Quantities are compared against oracles computed
here independently of the library where one exists (shooting, closed forms,
scalar minimization, finite differences).
"""

import math

import numpy as np
import pytest
from scipy.optimize import minimize_scalar
from test_eigen import shooting_lambda1

from plapcont.continuation import (
    ContinuationConfig,
    count_solutions_at,
    epsilon_sweep,
    max_location_trace,
    solution_on_branch,
    trace_branch,
    truncation_sweep,
    upper_branch_slope,
)
from plapcont.discretization import GridFunction, Mesh1D, assemble_jacobian, assemble_residual
from plapcont.eigen import first_eigenpair
from plapcont.errors import NoConvergence
from plapcont.problem import ProblemSpec
from plapcont.solvers import (
    bump,
    monotone_iteration_minimal,
    newton_solve,
    sandwich_check,
    solve_singular_base,
    torsion_solution,
)

FOLD_ONLY = ContinuationConfig(stop_after_fold=True)


def record(log, n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}"
    log.append(line)
    print(line)
    assert ok, line


def rel(a, b):
    return abs(a - b) / abs(b)


def g_min_oracle(p, q, delta):
    """Minimum over t > 0 of (t^-delta + t^q) / t^(p-1), by bounded scalar search in log t."""

    def g(s):
        t = math.exp(s)
        return (t**-delta + t**q) / t ** (p - 1)

    res = minimize_scalar(g, bounds=(-20, 20), method="bounded", options={"xatol": 1e-12})
    return res.fun


@pytest.fixture(scope="module")
def fold_grid(ref_mesh):
    out = {}
    for p in (1.5, 2.0, 3.0):
        lam1 = shooting_lambda1(p)
        for d in (0.5, 1.5):
            spec = ProblemSpec(p=p, q=3.0, delta=d, eps=0.0)
            out[p, d] = (lam1, trace_branch(spec, FOLD_ONLY, ref_mesh))
    return out


@pytest.fixture(scope="module")
def eps_result(ref_spec, ref_mesh):
    return epsilon_sweep(ref_spec, [1e-1, 1e-2, 1e-3, 1e-4], FOLD_ONLY, ref_mesh)


def test_c01_eigenpair(ref_mesh, eig2, acceptance_log):
    lam2 = eig2.lambda1
    lam3 = first_eigenpair(ref_mesh, 3.0).lambda1
    closed3 = 2 * (2 * math.pi / (3 * math.sin(math.pi / 3))) ** 3
    shoot3 = shooting_lambda1(3.0)
    ok = rel(lam2, math.pi**2) <= 1e-3 and rel(lam3, shoot3) <= 5e-3 and rel(lam3, closed3) <= 5e-3
    record(acceptance_log, 1, ok,
           f"lambda1(p=2)={lam2:.6f} vs pi^2 (rel {rel(lam2, math.pi**2):.1e}); "
           f"lambda1(p=3)={lam3:.6f} vs shooting {shoot3:.6f} (rel {rel(lam3, shoot3):.1e})")


def test_c02_torsion(ref_mesh, acceptance_log):
    e2 = torsion_solution(ref_mesh, 2.0).sup_norm
    e3 = torsion_solution(ref_mesh, 3.0).sup_norm
    t3 = (2 / 3) * 0.5**1.5
    ok = abs(e2 - 0.125) <= 1e-4 and abs(e3 - t3) <= 1e-3
    record(acceptance_log, 2, ok, f"sup e_2={e2:.7f} (err {abs(e2 - 0.125):.1e}); sup e_3={e3:.7f} (err {abs(e3 - t3):.1e})")


def test_c03_base_scaling(ref_mesh, acceptance_log):
    lams = np.array([1e-4, 1e-3, 1e-2])
    parts, ok = [], True
    for d in (0.5, 1.5):
        spec = ProblemSpec(p=2.0, q=3.0, delta=d, eps=0.0)
        sups = [solve_singular_base(lam, 0.0, spec, mesh=ref_mesh).sup_norm for lam in lams]
        slope = np.polyfit(np.log(lams), np.log(sups), 1)[0]
        target = 1 / (1 + d)
        ok &= rel(slope, target) <= 1e-2
        parts.append(f"delta={d}: slope {slope:.5f} vs {target:.5f}")
    record(acceptance_log, 3, ok, "; ".join(parts))


def test_c04_fold_bound(fold_grid, acceptance_log):
    parts, ok = [], True
    for (p, d), (lam1, branch) in fold_grid.items():
        assert branch.fold is not None
        fold = branch.fold.Lambda_est
        cert = lam1 / g_min_oracle(p, 3.0, d)
        z = ((p - 1 + d) / (3.0 - p + 1)) ** (1 / (3.0 + d))
        bound = lam1 * (z + 1) ** d * z ** (p - 1)
        ok &= 0 < fold <= 0.99 * cert and cert <= 0.99 * bound
        parts.append(f"({p},{d}) {fold:.4g}<{cert:.4g}<{bound:.4g}")
    record(acceptance_log, 4, ok, "; ".join(parts))


def test_c05_multiplicity(ref_branch, ref_mesh, ref_spec, acceptance_log):
    fold = ref_branch.fold.Lambda_est
    counts = [count_solutions_at(f * fold, ref_branch) for f in (0.25, 0.5, 0.75)]
    lam_q = 1.1 * shooting_lambda1(2.0) / g_min_oracle(2.0, 3.0, 0.5)
    count_q = count_solutions_at(lam_q, ref_branch)
    starts = [GridFunction(a * bump(ref_mesh), ref_mesh) for a in (0.1, 1.0, 10.0)] + [ref_branch.fold.u]
    failures = 0
    for guess in starts:
        try:
            newton_solve(guess, lam_q, ref_spec)
        except NoConvergence:
            failures += 1
    ok = counts == [2, 2, 2] and count_q == 0 and failures == len(starts)
    record(acceptance_log, 5, ok,
           f"counts at 0.25/0.5/0.75 Lambda={counts}; at {lam_q:.4f}: {count_q} on branch, "
           f"{failures}/{len(starts)} Newton starts fail")


def test_c06_upper_slope(ref_branch, acceptance_log):
    slope = upper_branch_slope(ref_branch, 2.0)
    target = -1 / (3.0 - 2.0 + 1)
    ok = ref_branch.termination_reason == "norm_cap" and rel(slope, target) <= 2e-2
    record(acceptance_log, 6, ok, f"slope {slope:.5f} vs {target} (rel {rel(slope, target):.1e})")


def test_c07_truncation(ref_spec, ref_mesh, acceptance_log):
    spec = ref_spec.with_(eps=0.1)
    sweep = truncation_sweep(spec, [5, 10, 20], ContinuationConfig(), ref_mesh)
    lam1 = shooting_lambda1(2.0)
    gap = 3.0 - 2.0 + 1
    ok = sweep.n == [5, 10, 20] and not sweep.failures
    parts = []
    for n, a in zip(sweep.n, sweep.asymptote):
        target = lam1 / n**gap
        ok &= rel(a, target) <= 2e-2
        parts.append(f"n={n}: {a:.6f} vs {target:.6f}")
    for (n1, a1), (n2, a2) in zip(zip(sweep.n, sweep.asymptote), zip(sweep.n[1:], sweep.asymptote[1:])):
        ok &= rel(a1 / a2, (n2 / n1) ** gap) <= 3e-2
        parts.append(f"ratio {n1}/{n2}: {a1 / a2:.5f}")
    record(acceptance_log, 7, ok, "; ".join(parts))


def test_c08_eps_monotone(eps_result, acceptance_log):
    lams = eps_result.Lambda
    nonincreasing = all(b <= a + 1e-4 for a, b in zip(lams[:-1], lams[1:]))
    lam_m = 0.5 * min(lams)
    sups = [solution_on_branch(b, lam_m).sup_norm for b in eps_result.branches]
    dists = eps_result.matched_distances(lam_m)
    # smaller eps strengthens the singular source, so matched solutions grow while their gaps shrink
    growing = all(b >= a for a, b in zip(sups[:-1], sups[1:]))
    shrinking = all(b < a for a, b in zip(dists[:-1], dists[1:]))
    ok = len(lams) == 4 and nonincreasing and growing and shrinking
    record(acceptance_log, 8, ok,
           f"Lambda_eps={[round(x, 5) for x in lams]}; matched sup distances {[f'{d:.1e}' for d in dists]}")


def test_c09_monotone_iteration(ref_branch, acceptance_log):
    half = 0.5 * ref_branch.fold.Lambda_est
    lower = [pt for pt in ref_branch.lower_points() if 1e-5 < pt.lam < half]
    picks = [lower[int(k)] for k in np.linspace(0, len(lower) - 1, 5).round()]
    worst, monotone = 0.0, True
    for pt in picks:
        trace = []
        u = monotone_iteration_minimal(pt.lam, ref_branch.spec, mesh=ref_branch.mesh, trace=trace)
        monotone &= all(rec["monotone"] for rec in trace)
        worst = max(worst, float(np.max(np.abs(u.values - pt.u.values))))
    ok = monotone and worst <= 1e-6
    record(acceptance_log, 9, ok, f"{len(picks)} lambdas, iterates monotone={monotone}, max sup gap {worst:.1e}")


def test_c10_sandwich(ref_branch, ref_mesh, eig2, acceptance_log):
    e2 = torsion_solution(ref_mesh, 2.0)
    norms = np.maximum(ref_branch.lambdas, ref_branch.sup_norms)
    R, varrho = 1.1 * norms.max(), 0.9 * norms.min()
    bad = [k for k, pt in enumerate(ref_branch.points)
           if not sandwich_check(pt.u, pt.lam, ref_branch.spec, eig2.phi1, e2, R, varrho, varrho, eig2.lambda1)]
    record(acceptance_log, 10, not bad, f"{len(ref_branch.points) - len(bad)}/{len(ref_branch.points)} points sandwiched")


def test_c11_uniqueness(ref_branch, acceptance_log):
    spec = ref_branch.spec
    z = ((spec.p - 1 + spec.delta) / (spec.q - spec.p + 1)) ** (1 / (spec.q + spec.delta))
    small = [pt for pt in ref_branch.lower_points() if pt.sup_norm < z / 2]
    rng = np.random.default_rng(1)
    worst = 0.0
    for pt in small:
        for _ in range(5):
            guess = pt.u.with_values(pt.u.values * (1 + 0.1 * rng.uniform(-1, 1, pt.u.values.size)))
            u = newton_solve(guess, pt.lam, spec)
            worst = max(worst, float(np.max(np.abs(u.values - pt.u.values))))
    ok = len(small) > 0 and worst <= 10 * 1e-10
    record(acceptance_log, 11, ok, f"{len(small)} points below zeta/2={z / 2:.4f}, max deviation {worst:.1e}")


def test_c12_jacobian(acceptance_log):
    rng = np.random.default_rng(12)
    mesh = Mesh1D(40, 1.0, "graded")
    grid = [(p, d, q) for p in (1.5, 2.0, 3.0) for d in (0.5, 1.5) for q in (p + 0.5, 3.0, 4.0)]
    worst, h = 0.0, 1e-6
    for k in range(20):
        p, d, q = grid[k % len(grid)]
        spec = ProblemSpec(p=p, q=q, delta=d, eps=float(rng.choice([0.0, 1e-2, 0.1])))
        u = GridFunction(bump(mesh) * rng.uniform(0.5, 3.0) * (1 + 0.2 * rng.uniform(-1, 1, 40)), mesh)
        lam = float(rng.uniform(0.1, 5.0))
        eta = None if p == 2 else 1e-8 * float(np.max(np.abs(np.diff(u.full_values) / mesh.edge_lengths)))
        v = rng.standard_normal(40) * u.values
        Jv = assemble_jacobian(u, lam, spec, eta).matvec(v)
        fd = (assemble_residual(u.with_values(u.values + h * v), lam, spec, eta)
              - assemble_residual(u.with_values(u.values - h * v), lam, spec, eta)) / (2 * h)
        worst = max(worst, float(np.linalg.norm(Jv - fd) / np.linalg.norm(Jv)))
    record(acceptance_log, 12, worst <= 1e-5, f"20 states, worst relative error {worst:.1e}")


def test_c13_max_location(ref_branch, fold_grid, eps_result, acceptance_log):
    branches = [ref_branch] + [b for _, b in fold_grid.values()] + list(eps_result.branches)
    dists = [max_location_trace(b) / b.mesh.length for b in branches]
    record(acceptance_log, 13, min(dists) >= 0.25, f"{len(branches)} branches, min distance to boundary {min(dists):.4f}")
