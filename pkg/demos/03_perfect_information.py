"""Move an equilibrium to the state-revealing structure and try to recover it with the excess-value map."""

import numpy as np

from sgia.instances import random_instance
from sgia.perfect_info import find_fp_tau, pi_values, transform_to_pi_ppme, verify_pi_ppme
from sgia.solver import brute_force_equilibria

game, fam, cost = random_instance(2)
ppme = brute_force_equilibria(game, fam, cost, history_free=True)[0]

t = transform_to_pi_ppme(game, fam, cost, ppme)
print("value gap after transformation:", t.max_value_gap)
print("state-conditional action rule of agent 0 at history 0:\n", np.round(t.pi_star[0][0], 4))
check = verify_pi_ppme(game, t.pi_scheme, t.pi_star, t.sab_cost)
print("equilibrium under perfect information:", check.is_ppme, check.deviation_witness)

J = pi_values(game, t.pi_scheme, t.pi_star, t.sab_cost)
fp = find_fp_tau(game, t.pi_scheme, t.pi_star, t.pi_scheme.xi, sab_cost=t.sab_cost, J_star=J)
print("fixed-point search:", fp.report())
