import numpy as np
import pytest

from sgia.beliefs import posterior
from sgia.game_model import StrategyProfile, pure_pi, uniform_profile
from sgia.instances import prisoners_dilemma, random_instance, single_agent, zero_game
from sgia.ppme_verifier import (
    best_response,
    check_feasibility_K,
    check_feasibility_K_gfpa,
    cross_check_propositions,
    objective_Z,
    objective_Z_gfpa,
    verify_ppme_direct,
)
from sgia.value_engine import evaluate_policy, tables_for

from conftest import equilibria, pure_profiles, reference


def pd_profile(a0, a1):
    g, f, c = prisoners_dilemma()
    H = g.n_histories
    pi = (np.broadcast_to(np.eye(2)[a0], (H, 1, 2)), np.broadcast_to(np.eye(2)[a1], (H, 1, 2)))
    return g, f, c, StrategyProfile(np.zeros((2, H)), pi)


def random_profile(game, fam, seed):
    rng = np.random.default_rng(seed)
    beta = rng.integers(0, 2, size=(2, game.n_histories))
    pi = tuple(rng.dirichlet(np.ones(2), size=(game.n_histories, 2)) for _ in range(2))
    return StrategyProfile(beta, pi)


# --- OPT side

def test_z_vanishes_at_exact_values():
    g, f, c = random_instance(3)
    p = random_profile(g, f, 3)
    vt = evaluate_policy(g, f, c, p)
    assert abs(objective_Z(p.pi, vt.V, p.beta, f, g, c)) <= 1e-9


def test_z_after_unit_shift():
    # shifting V by 1 shifts the induced Q by delta, leaving a gap of (1 - delta) per weighted cell
    g, f, c = random_instance(4)
    p = random_profile(g, f, 4)
    vt = evaluate_policy(g, f, c, p)
    z = objective_Z(p.pi, [v + 1 for v in vt.V], p.beta, f, g, c)
    assert z == pytest.approx(2 * g.n_histories * (1 - g.discount), abs=1e-9)


def test_z_zero_game():
    g, f, c = zero_game()
    p = random_profile(g, f, 0)
    assert objective_Z(p.pi, [np.zeros((8, 4))] * 2, p.beta, f, g, c) == 0.0


def test_k_empty_at_dominant_equilibrium():
    g, f, c, p = pd_profile(1, 1)
    vt = evaluate_policy(g, f, c, p)
    for form in ("menu", "printed"):
        assert check_feasibility_K(p.pi, vt.V, p.beta, f, g, c, form=form).feasible


def test_k_reports_short_row():
    g, f, c, p = pd_profile(1, 1)
    pi0 = np.array(p.pi[0])
    pi0[0, 0] = [0.0, 0.9]
    vt = evaluate_policy(g, f, c, p)
    assert "FE2" in check_feasibility_K((pi0, p.pi[1]), vt.V, p.beta, f, g, c).codes()


def test_zero_v_violates_eq2_when_rewards_positive():
    g, f, c, p = pd_profile(1, 1)  # PD payoffs are nonnegative and positive at (D, D)
    rep = check_feasibility_K(p.pi, [np.zeros((4, 1))] * 2, p.beta, f, g, c)
    assert "EQ2" in rep.codes()


# --- direct test

def _mdp_optimum(game, fam, scheme, iters=2000):
    """Value iteration with type-conditional maximization for one agent and one menu item."""
    H = game.n_histories
    J = np.zeros(H)
    for _ in range(iters):
        new = np.zeros(H)
        for h in range(H):
            for k in range(fam.type_counts[0]):
                try:
                    post = posterior(game, fam, 0, k, h, (0,))
                except ValueError:
                    continue
                q = [sum(post.mu_s[s] * (game.rewards[0, s, a] + scheme.tables[0][0]
                                         + game.discount * J[game.history_index(s, (a,))])
                         for s in range(game.n_states)) for a in range(game.action_counts[0])]
                new[h] += post.type_prob * max(q)
        J = new
    return J


def _argmax_policy(game, fam, scheme, J):
    H = game.n_histories
    pi = np.zeros((H, fam.type_counts[0], game.action_counts[0]))
    for h in range(H):
        for k in range(fam.type_counts[0]):
            post = posterior(game, fam, 0, k, h, (0,))
            q = [sum(post.mu_s[s] * (game.rewards[0, s, a] + game.discount * J[game.history_index(s, (a,))])
                     for s in range(game.n_states)) for a in range(game.action_counts[0])]
            pi[h, k, int(np.argmax(q))] = 1.0
    return pi


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_argmax_policy_of_single_agent_mdp(seed):
    g, f, c = single_agent(seed, n_menu=1)
    J = _mdp_optimum(g, f, c)
    p = StrategyProfile(np.zeros((1, g.n_histories)), (_argmax_policy(g, f, c, J),))
    res = verify_ppme_direct(p, g, f, c)
    assert res.is_ppme and res.deviation_witness is None
    np.testing.assert_allclose(evaluate_policy(g, f, c, p).J[0], J, atol=1e-9)


def test_dominated_action_has_witness_with_hand_gain():
    g, f, c, p = pd_profile(0, 1)  # agent 0 cooperates against a defector
    res = verify_ppme_direct(p, g, f, c)
    assert not res.is_ppme
    w = res.deviation_witness
    assert (w["agent"], w["stage"], w["deviation"]) == (0, "action", 1)
    assert w["gain"] == pytest.approx(1.0, abs=1e-12)  # 1 - 0, continuation unchanged


def test_single_item_menus_with_dominant_actions():
    g, f, c, p = pd_profile(1, 1)
    res = verify_ppme_direct(p, g, f, c)
    assert res.is_ppme and res.z_value == pytest.approx(0.0, abs=1e-9)


def test_joint_best_response_implies_refined_form():
    g, f, c = reference(1)
    for p in pure_profiles(1)[::37]:
        if verify_ppme_direct(p, g, f, c, joint_deviation=True).is_ppme:
            assert verify_ppme_direct(p, g, f, c).is_ppme
    zg, zf, zc = zero_game()
    assert verify_ppme_direct(random_profile(zg, zf, 0), zg, zf, zc, joint_deviation=True).is_ppme


def test_refined_form_is_weaker_than_joint_best_response():
    # a refined-form equilibrium that a coordinated change of menu choice and actions beats
    g, f, c = reference(1)
    p = equilibria(1)[0]
    assert verify_ppme_direct(p, g, f, c).is_ppme
    res = verify_ppme_direct(p, g, f, c, joint_deviation=True)
    assert not res.is_ppme and res.deviation_witness["stage"] == "joint"
    br = best_response(0, p, g, f, c)
    beta = np.array(p.beta)
    beta[0] = br.beta_i
    q = StrategyProfile(beta, (br.pi_i, p.pi[1]))
    gain = evaluate_policy(g, f, c, q).J[0] - evaluate_policy(g, f, c, p).J[0]
    assert gain.min() > 0.01
    # the deviation's own actions are stage-two optimal, so it is admissible under the original definition
    t = tables_for(g, f, c, q)
    vt = evaluate_policy(g, f, c, q)
    gain2 = t.deviation_values(0, vt.J[0]).max(axis=2) - t.expect_over_opponents(0, vt.V[0])
    assert np.max(np.where(t.positive(0), gain2, -np.inf)) <= 1e-9


def test_best_response_value_dominates():
    g, f, c = random_instance(6)
    p = random_profile(g, f, 6)
    base = evaluate_policy(g, f, c, p).J
    for i in range(2):
        br = best_response(i, p, g, f, c)
        assert np.all(br.J >= base[i] - 1e-9)


def test_reports_are_deterministic():
    g, f, c = random_instance(2)
    p = random_profile(g, f, 2)
    a, b = verify_ppme_direct(p, g, f, c), verify_ppme_direct(p, g, f, c)
    assert a.as_dict() == b.as_dict()


# --- GFPA side

def test_gfpa_objective_cases():
    g, f, c = random_instance(5)
    p = random_profile(g, f, 5)
    tables = tables_for(g, f, c, p)
    vt = evaluate_policy(g, f, c, p)
    tau = tables.sel.tau
    assert objective_Z_gfpa(tau, vt.J, vt.V, p.pi, g, c, p.beta) == pytest.approx(0.0, abs=1e-10)
    shifted = [j + 1 for j in vt.J]
    assert objective_Z_gfpa(tau, shifted, vt.V, p.pi, g, c, p.beta) == pytest.approx(16.0, abs=1e-10)
    rng = np.random.default_rng(1)
    J, V = [rng.normal(size=8) for _ in range(2)], [rng.normal(size=(8, 4)) for _ in range(2)]
    T = g.transition_by_history
    want = 0.0
    for i in range(2):
        for h in range(8):
            want += J[i][h]
            for s in range(2):
                for t0 in range(2):
                    for t1 in range(2):
                        want -= V[i][h, 2 * t0 + t1] * tau[0][h, s, t0] * tau[1][h, s, t1] * T[h, s]
    assert objective_Z_gfpa(tau, J, V, p.pi, g, c, p.beta) == pytest.approx(want, abs=1e-10)


def test_gfpa_constraints_at_equilibrium_and_defects():
    seed = 1
    g, f, c = reference(seed)
    p = equilibria(seed)[0]
    tables = tables_for(g, f, c, p)
    vt = evaluate_policy(g, f, c, p)
    tau = [np.array(t) for t in tables.sel.tau]
    assert check_feasibility_K_gfpa(tau, vt.J, vt.V, p.pi, g, c, f, p.beta).feasible
    bad = [t.copy() for t in tau]
    bad[0][2, 1] = [1.2, -0.2]
    assert "RG1" in check_feasibility_K_gfpa(bad, vt.J, vt.V, p.pi, g, c, f, p.beta).codes()
    low = [np.full(8, -1e6)] * 2
    assert "EQ3" in check_feasibility_K_gfpa(tau, low, vt.V, p.pi, g, c, f, p.beta).codes()


# --- both characterizations

def test_cross_check_on_equilibrium_and_dominated_profile():
    g, f, c = reference(2)
    r = cross_check_propositions(equilibria(2)[0], g, f, c)
    assert r["opt_holds"] and r["gfpa_holds"] and r["direct_is_ppme"]
    g, f, c, p = pd_profile(0, 0)
    r = cross_check_propositions(p, g, f, c)
    assert not r["opt_holds"] and not r["gfpa_holds"] and r["failing_side"] is None


def test_cross_check_zero_game_holds_everywhere():
    g, f, c = zero_game()
    for seed in range(3):
        r = cross_check_propositions(random_profile(g, f, seed), g, f, c)
        assert r["opt_holds"] and r["gfpa_holds"] and r["direct_is_ppme"]


def test_printed_form_rejects_type_dependent_equilibria():
    # the type-indexed bound compares J with single-type continuations; recorded as a known divergence
    g, f, c = reference(1)
    p = equilibria(1)[0]
    assert verify_ppme_direct(p, g, f, c).is_ppme
    r = cross_check_propositions(p, g, f, c, form="printed")
    assert not r["opt_holds"]
