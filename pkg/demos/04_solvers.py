"""Penalty descent, then a Newton polish from a perturbed equilibrium."""

import numpy as np

from sgia.game_model import StrategyProfile
from sgia.instances import prisoners_dilemma, random_instance
from sgia.solver import SolverConfig, brute_force_equilibria, project_simplex, solve, solve_ppme_penalty
from sgia.value_engine import evaluate_policy

game, fam, cost = prisoners_dilemma()
res = solve_ppme_penalty(game, fam, cost, SolverConfig(seed=0, restarts=2))
print("prisoner's dilemma: converged", res.converged, "actions", res.profile.pi[0][:, 0].argmax(axis=1))
print(res.trace_csv().splitlines()[-1])

game, fam, cost = random_instance(1)
eq = brute_force_equilibria(game, fam, cost, history_free=True)[0]
vt = evaluate_policy(game, fam, cost, eq)
rng = np.random.default_rng(0)
pi = tuple(project_simplex(x + rng.normal(0, 1e-3, x.shape)) for x in eq.pi)
start = (StrategyProfile(eq.beta, pi), [j + 1e-3 for j in vt.J], vt.V)
out = solve(game, fam, cost, SolverConfig(mode="admissibility-newton"), warm_start=start)
print("newton polish certified:", out.converged)
