import json
import math

import numpy as np
import pytest

from plapcont.discretization import GridFunction, Mesh1D, assemble_residual
from plapcont.eigen import first_eigenpair
from plapcont.errors import DomainError, NoConvergence, PositivityLoss
from plapcont.problem import ProblemSpec, certificate_threshold, subsuper_constants
from plapcont.solvers import (
    SolveOptions,
    bump,
    max_positive_step,
    monotone_iteration_minimal,
    newton_solve,
    reaction_max,
    sandwich_check,
    sandwich_constants,
    solve_singular_base,
    torsion_solution,
    write_trace_jsonl,
)


def torsion_closed_form(x, p, L=1.0):
    r = p / (p - 1)
    return (p - 1) / p * ((L / 2) ** r - np.abs(x - L / 2) ** r)


class TestOptions:
    @pytest.mark.parametrize("kw", [dict(tol_residual=0), dict(max_newton=0), dict(damping=1.0), dict(max_outer=0)])
    def test_validation(self, kw):
        with pytest.raises(DomainError):
            SolveOptions(**kw)


def test_max_positive_step():
    v = np.array([1.0, 2.0])
    assert max_positive_step(v, np.array([1.0, 1.0])) == math.inf
    assert max_positive_step(v, np.array([-1.0, 0.0])) == pytest.approx(0.5)


class TestTorsion:
    @pytest.mark.parametrize("p,tol", [(2.0, 1e-4), (3.0, 1e-3), (1.5, 1e-3)])
    @pytest.mark.parametrize("grading", ["uniform", "graded"])
    def test_closed_form(self, p, tol, grading):
        m = Mesh1D(200, 1.0, grading)
        e = torsion_solution(m, p)
        np.testing.assert_allclose(e.values, torsion_closed_form(m.nodes, p), atol=tol)

    def test_symmetry(self):
        e = torsion_solution(Mesh1D(101, 1.0, "graded"), 3.0)
        np.testing.assert_allclose(e.values, e.values[::-1], atol=1e-12)

    def test_length_scaling(self):
        m = Mesh1D(200, 2.0)
        e = torsion_solution(m, 2.0)
        assert e.sup_norm == pytest.approx(0.5, rel=1e-4)


class TestBaseProblem:
    @pytest.mark.parametrize("delta", [0.5, 1.5])
    def test_scaling_law(self, delta):
        spec = ProblemSpec(delta=delta)
        m = Mesh1D(300, 1.0, "graded")
        w1 = solve_singular_base(1.0, 0.0, spec, mesh=m)
        for lam in (1e-3, 0.1, 10.0):
            w = solve_singular_base(lam, 0.0, spec, mesh=m)
            np.testing.assert_allclose(w.values, lam ** (1 / (1 + delta)) * w1.values, rtol=1e-6)

    def test_warm_start_independence(self):
        spec = ProblemSpec(delta=0.5)
        m = Mesh1D(200, 1.0, "graded")
        a = solve_singular_base(2.0, 0.01, spec, mesh=m)
        b = solve_singular_base(2.0, 0.01, spec, u0=GridFunction(3.0 * bump(m), m))
        assert np.max(np.abs(a.values - b.values)) <= 10 * SolveOptions().tol_residual

    def test_monotone_in_eps_and_below_scaled_omega(self):
        spec = ProblemSpec(delta=0.5)
        m = Mesh1D(200, 1.0, "graded")
        lam = 3.0
        w10 = solve_singular_base(1.0, 0.0, spec, mesh=m)
        bound = lam ** (1 / 1.5) * w10.values
        prev = None
        dists = []
        w0 = solve_singular_base(lam, 0.0, spec, mesh=m)
        for eps in (1e-1, 1e-2, 1e-3, 1e-4):
            w = solve_singular_base(lam, eps, spec, mesh=m)
            assert np.all(w.values <= bound * (1 + 1e-9))
            if prev is not None:
                assert np.all(w.values >= prev.values - 1e-12)
            dists.append(np.max(np.abs(w.values - w0.values)))
            prev = w
        assert all(b < a for a, b in zip(dists, dists[1:]))

    def test_lambda_must_be_positive(self):
        with pytest.raises(DomainError):
            solve_singular_base(0.0, 0.0, ProblemSpec())


class TestNewton:
    def test_matches_minimal_solution(self):
        spec = ProblemSpec()
        m = Mesh1D(200, 1.0, "graded")
        u_min = monotone_iteration_minimal(1.0, spec, mesh=m)
        start = monotone_iteration_minimal(0.8, spec, mesh=m)
        trace = []
        u = newton_solve(start, 1.0, spec, trace=trace)
        assert np.max(np.abs(u.values - u_min.values)) <= 1e-6
        assert trace[-1]["residual"] <= 1e-10

    def test_contraction_under_noise(self):
        spec = ProblemSpec(eps=0.01)
        m = Mesh1D(200)
        u = monotone_iteration_minimal(2.0, spec, mesh=m)
        rng = np.random.default_rng(1)
        noisy = u.with_values(u.values * (1 + 1e-3 * rng.standard_normal(m.num_interior)))
        v = newton_solve(noisy, 2.0, spec)
        assert np.max(np.abs(u.values - v.values)) <= 10 * SolveOptions().tol_residual

    def test_fails_above_certificate(self):
        spec = ProblemSpec()
        m = Mesh1D(200, 1.0, "graded")
        lam = 1.1 * certificate_threshold(spec, first_eigenpair(m, 2.0).lambda1)
        for amp in (0.1, 1.0, 10.0):
            with pytest.raises(NoConvergence):
                newton_solve(GridFunction(amp * bump(m), m), lam, spec, SolveOptions(max_newton=30))

    def test_requires_positive_start(self):
        m = Mesh1D(20)
        with pytest.raises(PositivityLoss):
            newton_solve(GridFunction(np.zeros(20), m), 1.0, ProblemSpec(eps=0.1))

    def test_trace_jsonl(self, tmp_path):
        spec = ProblemSpec(eps=0.1)
        m = Mesh1D(50)
        trace = []
        newton_solve(GridFunction(0.1 * bump(m), m), 0.5, spec, trace=trace)
        write_trace_jsonl(trace, tmp_path / "t.jsonl")
        rows = [json.loads(line) for line in (tmp_path / "t.jsonl").read_text().splitlines()]
        assert rows[0]["iteration"] == 0 and "residual" in rows[-1]
        assert any("damping" in r for r in rows)


class TestMonotoneIteration:
    def test_first_iterate_is_base_and_monotone(self):
        spec = ProblemSpec(eps=1e-3)
        m = Mesh1D(200, 1.0, "graded")
        trace = []
        u = monotone_iteration_minimal(2.0, spec, mesh=m, trace=trace)
        assert all(rec["monotone"] for rec in trace)
        base = solve_singular_base(2.0, 1e-3, spec, mesh=m)
        assert trace[0]["sup_change"] == pytest.approx(base.sup_norm, rel=1e-9)
        res = assemble_residual(u, 2.0, spec)
        assert np.max(np.abs(res)) <= 10 * SolveOptions().tol_fixedpoint

    def test_small_lambda_hugs_base_scaling(self):
        spec = ProblemSpec(delta=0.5)
        m = Mesh1D(200, 1.0, "graded")
        w1 = solve_singular_base(1.0, 0.0, spec, mesh=m).sup_norm
        u = monotone_iteration_minimal(1e-4, spec, mesh=m)
        assert u.sup_norm == pytest.approx(1e-4 ** (1 / 1.5) * w1, rel=1e-3)

    def test_diverges_above_fold(self):
        spec = ProblemSpec()
        with pytest.raises(NoConvergence):
            monotone_iteration_minimal(6.0, spec, mesh=Mesh1D(100, 1.0, "graded"))

    def test_subsuper_bracket(self):
        # at lambda = lambda1/n^{q-p+1} with n > N0 the minimal solution sits in [omega, M omega]
        spec = ProblemSpec(p=2, q=3, delta=1.0, eps=0.0)
        m = Mesh1D(200, 1.0, "graded")
        lam1 = first_eigenpair(m, 2.0).lambda1
        w10 = solve_singular_base(1.0, 0.0, spec, mesh=m)
        c = subsuper_constants(spec, w10.sup_norm, lam1)
        n = math.ceil(c.N0) + 1
        lam = lam1 / n**spec.superlinear_gap
        eps = 0.5 * c.eps0
        s = spec.with_(eps=eps, n_trunc=float(n))
        omega = solve_singular_base(lam, eps, s, mesh=m)
        u = monotone_iteration_minimal(lam, s, mesh=m)
        assert np.all(u.values >= omega.values - 1e-12)
        assert np.all(u.values <= c.M * omega.values)


class TestSandwich:
    def test_reaction_max_brute_force(self):
        spec = ProblemSpec(q=3, delta=0.5)
        for r, R in ((0.01, 5.0), (0.3, 0.2), (0.5, 10.0)):
            t = np.linspace(r, R + 1, 200001)
            assert reaction_max(r, R, spec) == pytest.approx(np.max(t**-0.5 + t**3), rel=1e-9)

    def test_first_crossing_definition(self):
        spec = ProblemSpec()
        c = sandwich_constants(spec, math.pi**2, 1.0, 0.125, 10.0, 0.5, 0.5)
        psi = lambda t: (t + 1) ** -0.5 + t**3 - c.K_tilde * t
        assert psi(c.a) == pytest.approx(0.0, abs=1e-9)
        t = np.linspace(1e-9, c.a, 1000)[:-1]
        assert np.all(psi(t) >= 0)
        assert c.K_tilde == pytest.approx(2 * max(10.0, math.pi**2 / c.C_star))

    def test_accepts_solution_and_rejects_scaled(self):
        spec = ProblemSpec(eps=0.01)
        m = Mesh1D(200)
        eig = first_eigenpair(m, 2.0)
        e2 = torsion_solution(m, 2.0)
        u = monotone_iteration_minimal(2.0, spec, mesh=m)
        R, varrho = 5.0, 0.1
        res = sandwich_check(u, 2.0, spec, eig.phi1, e2, R, varrho, varrho, eig.lambda1)
        assert res and res.violation_node is None
        # at small lambda the upper envelope is small enough that 10x it stays in the annulus
        lam = 1e-3
        env = sandwich_check(u, 2.0, spec, eig.phi1, e2, R, varrho, varrho, eig.lambda1).constants
        upper = varrho + lam * env.K2 * e2.values
        big = u.with_values(10 * upper)
        bad = sandwich_check(big, lam, spec, eig.phi1, e2, R, varrho, varrho, eig.lambda1)
        assert not bad and bad.violation_node is not None

    def test_outside_annulus(self):
        spec = ProblemSpec(eps=0.01)
        m = Mesh1D(30)
        u = GridFunction(bump(m), m)
        with pytest.raises(DomainError):
            sandwich_check(u, 1.0, spec, u, u, 0.5, 0.1, 0.1, 9.87)
