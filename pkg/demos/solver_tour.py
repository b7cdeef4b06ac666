"""A few small problems for the composite solver, each with a known answer."""

import numpy as np

from conformpc.solver import CompositeProblem, L1Term, solve

# scalar lasso: minimizer is the soft threshold of -q / a
a, q, lam = 2.0, -3.0, 1.0
r = solve(CompositeProblem([[a]], [q], l1_terms=[L1Term(lam, [[1.0]])]))
print("lasso:", r.solution[0], "expected", (abs(q) - lam) / a)

# projection onto the simplex written as an equality plus bounds
point = np.array([0.8, 0.6, -0.2])
n = len(point)
problem = CompositeProblem(np.eye(n), -point, A_eq=np.ones((1, n)), b_eq=[1.0],
                           A_in=-np.eye(n), b_in=np.zeros(n))
r = solve(problem)
print("simplex projection:", np.round(r.solution, 6), "status", r.status)
print("  residuals: primal %.1e dual %.1e" % (r.primal_residual, r.dual_residual))

# an inconsistent equality system is reported rather than solved
bad = CompositeProblem(np.eye(2), np.zeros(2), A_eq=[[1.0, 1.0], [2.0, 2.0]], b_eq=[1.0, 3.0])
print("inconsistent equalities:", solve(bad).status)

# contradictory inequalities are not certified; the solver runs out of iterations
bad = CompositeProblem(np.eye(1), [0.0], A_in=[[1.0], [-1.0]], b_in=[-1.0, -1.0])
print("contradictory bounds:", solve(bad, max_iter=2000).status)
