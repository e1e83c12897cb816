"""Find every history-free pure equilibrium by enumeration and certify each one three ways."""

from sgia.instances import random_instance
from sgia.lfpa import admissibility_of_profile
from sgia.ppme_verifier import cross_check_propositions, verify_ppme_direct
from sgia.solver import brute_force_equilibria

game, fam, cost = random_instance(1)
found = brute_force_equilibria(game, fam, cost, history_free=True)
print(f"{len(found)} equilibria among history-free pure profiles")

for p in found:
    direct = verify_ppme_direct(p, game, fam, cost)
    both = cross_check_propositions(p, game, fam, cost)
    cert = admissibility_of_profile(p, game, fam, cost)
    print("menu choice", p.beta[:, 0], "| direct", direct.is_ppme,
          "| value-program", both["opt_holds"], "| rule-program", both["gfpa_holds"],
          "| local certificate", cert.admissible)

# the refined deviation test holds the action rule fixed; a joint deviation can still pay
joint = verify_ppme_direct(found[0], game, fam, cost, joint_deviation=True)
print("joint best-response check:", joint.is_ppme, joint.deviation_witness)
