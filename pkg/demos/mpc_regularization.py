"""How the data-conforming penalty pulls MPC predictions toward the data.

A linear model is fitted to a short record of the benchmark, then one MPC
problem is solved from a state well outside the recorded cloud for a grid of
``gamma`` values. Larger ``gamma`` trades tracking cost for predictions whose
state/input pairs look more like the recorded ones.
"""

import numpy as np

from conformpc.mpc import MPCConfig, MPCController, build_mpc_problem, unpack
from conformpc.plant import BenchmarkPlant, collect_data
from conformpc.solver import solve
from conformpc.stats import mahalanobis_sq

col = collect_data(BenchmarkPlant(), -6.0, 200, seed=11)
x0 = np.array([3.0, -2.0])

base = MPCController.from_data(col.states, col.inputs, MPCConfig(N=8, Q=np.eye(2), R=2.0))
print("identified A:\n", np.round(base.model.A, 4))
print("LQR gain K:", np.round(base.K, 4))
print()
print(f"{'gamma':>7} {'objective':>11} {'mean pair d^2':>14} {'u_0':>9}")
for gamma in (0.0, 0.1, 1.0, 10.0, 100.0):
    config = MPCConfig(N=8, Q=np.eye(2), R=2.0, gamma=gamma, summary=base.config.summary)
    result = solve(build_mpc_problem(base.model, base.K, x0, config))
    xs, us = unpack(result.solution, x0, base.K, config.N, 2, 1)
    d = np.mean([mahalanobis_sq(np.concatenate([xs[k], us[k]]), config.summary)
                 for k in range(config.N)])
    print(f"{gamma:7.1f} {result.objective:11.4f} {d:14.4f} {us[0, 0]:9.4f}")
