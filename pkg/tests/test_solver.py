import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conformpc.exceptions import InputError
from conformpc.solver import (CompositeProblem, HingeTerm, L1Term, kkt_residuals, solve)
from conformpc.stats import GaussianSummary

from oracles import brute_force_qp, random_qp


def random_composite(rng, n=6, with_hinge=True, radius=None):
    L = rng.normal(size=(n, n))
    P = L @ L.T + 0.1 * np.eye(n)
    q = rng.normal(size=n) * 3
    l1 = [L1Term(0.7, rng.normal(size=(3, n)), rng.normal(size=3))]
    hinges = []
    if with_hinge:
        C = rng.normal(size=(2, 2))
        summary = GaussianSummary.from_moments(rng.normal(size=2), C @ C.T + 0.2 * np.eye(2))
        r = float(rng.uniform(0.0, 2.0)) if radius is None else radius
        hinges.append(HingeTerm(2.0, summary, rng.normal(size=(2, n)), rng.normal(size=2), r))
    A_in = rng.normal(size=(3, n))
    b_in = np.abs(rng.normal(size=3)) + 0.1
    return CompositeProblem(P, q, 0.5, l1, hinges, rng.normal(size=(1, n)), [0.0], A_in, b_in)


def test_unconstrained_least_squares():
    c = np.array([1.0, -2.0, 3.5])
    # ||z - c||^2 = z'z - 2c'z + c'c
    r = solve(CompositeProblem(2 * np.eye(3), -2 * c, c @ c))
    assert r.ok
    np.testing.assert_allclose(r.solution, c, atol=1e-10)
    assert abs(r.objective) < 1e-12


def test_soft_threshold_example():
    r = solve(CompositeProblem(np.eye(1), [-2.0], l1_terms=[L1Term(1.0, np.eye(1))]))
    assert r.ok
    assert abs(r.solution[0] - 1.0) < 1e-10


@settings(max_examples=50, deadline=None)
@given(st.floats(0.1, 10), st.floats(-10, 10), st.floats(0, 10))
def test_scalar_soft_threshold(a, b, lam):
    r = solve(CompositeProblem([[a]], [b], l1_terms=[L1Term(lam, [[1.0]])]))
    expected = -np.sign(b) * max(abs(b) - lam, 0.0) / a
    assert abs(r.solution[0] - expected) <= 1e-10 * max(1.0, abs(expected))


def test_equality_qp_matches_kkt_system():
    rng = np.random.default_rng(10)
    n, p = 10, 3
    L = rng.normal(size=(n, n))
    P, q = L @ L.T + np.eye(n), rng.normal(size=n)
    A, b = rng.normal(size=(p, n)), rng.normal(size=p)
    K = np.block([[P, A.T], [A, np.zeros((p, p))]])
    z_ref = np.linalg.solve(K, np.concatenate([-q, b]))[:n]
    r = solve(CompositeProblem(P, q, A_eq=A, b_eq=b))
    assert r.ok
    np.testing.assert_allclose(r.solution, z_ref, atol=1e-6)


@pytest.mark.parametrize("seed", range(12))
def test_random_qp_against_active_set_enumeration(seed):
    rng = np.random.default_rng(seed)
    P, q, A, b, G, h = random_qp(rng)
    r = solve(CompositeProblem(P, q, A_eq=A, b_eq=b, A_in=G, b_in=h))
    assert r.ok
    np.testing.assert_allclose(r.solution, brute_force_qp(P, q, A, b, G, h), atol=1e-6)


def test_kkt_residuals_at_optimum_and_after_perturbation():
    problem = CompositeProblem(2 * np.eye(2), [-2.0, 4.0])
    z = np.array([1.0, -2.0])
    res = kkt_residuals(problem, z)
    assert max(res) < 1e-10
    assert kkt_residuals(problem, z + [0.1, 0.0]).stationarity > 0


@pytest.mark.parametrize("seed", range(5))
def test_result_fields_match_kkt_residuals(seed):
    problem = random_composite(np.random.default_rng(seed))
    r = solve(problem)
    res = kkt_residuals(problem, r.solution)
    assert abs(res.stationarity - r.dual_residual) <= 1e-12
    assert abs(res.primal - r.primal_residual) <= 1e-12
    assert abs(res.complementarity - r.complementarity) <= 1e-12
    assert r.objective == pytest.approx(problem.objective(r.solution), rel=1e-14)


@pytest.mark.parametrize("seed", range(5))
def test_objective_not_worse_than_origin(seed):
    rng = np.random.default_rng(100 + seed)
    base = random_composite(rng)
    # origin feasible: drop the equality, keep b_in > 0
    problem = CompositeProblem(base.P, base.q, base.c, base.l1_terms, base.hinge_terms,
                               A_in=base.A_in, b_in=base.b_in)
    r = solve(problem)
    assert r.ok
    assert r.objective <= problem.objective(np.zeros(problem.n)) + 1e-8


def scaled(problem, s):
    l1 = [L1Term(s * t.weight, t.M, t.m) for t in problem.l1_terms]
    hinges = [HingeTerm(s * t.weight, t.summary, t.S, t.s, t.radius) for t in problem.hinge_terms]
    return CompositeProblem(s * problem.P, s * problem.q, s * problem.c, l1, hinges,
                            problem.A_eq, problem.b_eq, problem.A_in, problem.b_in)


@pytest.mark.parametrize("seed", range(5))
def test_argmin_is_scale_invariant(seed):
    problem = random_composite(np.random.default_rng(200 + seed))
    a = solve(problem).solution
    b = solve(scaled(problem, 10.0)).solution
    assert np.abs(a - b).max() < 1e-6


@pytest.mark.parametrize("seed", range(5))
def test_huge_hinge_radius_is_inert(seed):
    rng = np.random.default_rng(300 + seed)
    problem = random_composite(rng, radius=1e12)
    bare = CompositeProblem(problem.P, problem.q, problem.c, problem.l1_terms, (),
                            problem.A_eq, problem.b_eq, problem.A_in, problem.b_in)
    np.testing.assert_allclose(solve(problem).solution, solve(bare).solution, atol=1e-8)


def test_zero_radius_hinge_is_quadratic_penalty():
    rng = np.random.default_rng(4)
    summary = GaussianSummary.from_moments([1.0, -1.0], [[2.0, 0.3], [0.3, 1.0]])
    S = rng.normal(size=(2, 3))
    hinge = CompositeProblem(np.eye(3), np.ones(3),
                             hinge_terms=[HingeTerm(3.0, summary, S, None, 0.0)])
    W, w = summary.whiten(S)
    quad = CompositeProblem(np.eye(3) + 6.0 * W.T @ W, np.ones(3) + 6.0 * W.T @ w)
    np.testing.assert_allclose(solve(hinge).solution, solve(quad).solution, atol=1e-9)


def test_optimum_on_hinge_boundary():
    summary = GaussianSummary.from_moments([0.0], [[1.0]])
    # pulled towards z = 5 with the set |z|^2 <= 4 penalized outside
    problem = CompositeProblem([[2.0]], [-10.0], hinge_terms=[
        HingeTerm(100.0, summary, [[1.0]], None, 4.0)])
    # stationarity outside: 2z - 10 + 200z = 0 has z < 2, so the optimum sits on the boundary
    r = solve(problem)
    assert r.ok
    assert r.solution[0] == pytest.approx(2.0, abs=1e-6)
    tight = solve(problem, tol_abs=1e-12, tol_rel=1e-12)
    assert tight.ok
    assert tight.solution[0] == pytest.approx(2.0, abs=1e-10)


def test_inconsistent_equalities_detected():
    problem = CompositeProblem(np.eye(2), np.zeros(2), A_eq=[[1.0, 1.0], [2.0, 2.0]],
                               b_eq=[1.0, 3.0])
    assert solve(problem).status == "infeasible_detected"


def test_max_iter_reports_best_iterate():
    problem = random_composite(np.random.default_rng(7))
    r = solve(problem, max_iter=3, polish=False)
    assert r.status == "max_iter"
    assert np.all(np.isfinite(r.solution))


@pytest.mark.parametrize("bad", [
    dict(P=[[1.0, 2.0], [0.0, 1.0]], q=[0.0, 0.0]),
    dict(P=[[-1.0, 0.0], [0.0, 1.0]], q=[0.0, 0.0]),
    dict(P=np.eye(2), q=[0.0, 0.0, 0.0]),
    dict(P=np.eye(2), q=[0.0, 0.0], A_eq=np.ones((1, 3)), b_eq=[0.0]),
])
def test_invalid_problems_rejected(bad):
    with pytest.raises(InputError):
        CompositeProblem(**bad)


def test_negative_weights_rejected():
    with pytest.raises(InputError):
        L1Term(-1.0, np.eye(2))


def test_problem_dump_round_trip(tmp_path):
    problem = random_composite(np.random.default_rng(8))
    back = CompositeProblem.load(problem.dump(tmp_path / "p.json"))
    z = np.random.default_rng(9).normal(size=problem.n)
    assert back.objective(z) == pytest.approx(problem.objective(z), rel=1e-12)
    np.testing.assert_allclose(solve(back).solution, solve(problem).solution, atol=1e-9)
