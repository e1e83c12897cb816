"""Evaluate a profile on a random two-agent instance and check it by simulation."""

import numpy as np

from sgia.beliefs import posterior
from sgia.game_model import uniform_profile
from sgia.instances import random_instance
from sgia.value_engine import bellman_residuals, evaluate_policy, monte_carlo_value, tables_for

game, fam, cost = random_instance(3)
profile = uniform_profile(game, fam).with_beta(0, 5, 1)

post = posterior(game, fam, 0, 1, 5, (1, 0))
print("agent 0, type 1, history 5: belief over states", np.round(post.mu_s, 4))

vt = evaluate_policy(game, fam, cost, profile)
res = bellman_residuals(tables_for(game, fam, cost, profile), vt)
print("history values, agent 0:", np.round(vt.J[0], 4))
print("worst recursion residual:", max(float(np.max(np.abs(r))) for v in res.values() for r in v))

mc = monte_carlo_value(game, fam, cost, profile, h=5, episodes=20_000, seed=1)
print(f"simulated J_0(5) = {mc.mean[0]:.4f} +/- {mc.stderr[0]:.4f}, exact {vt.J[0][5]:.4f}")
