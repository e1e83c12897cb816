"""Acceptance criteria 1-10 on the reference family (two agents, two of everything, delta 0.9).

Each test records one ``CRITERION n: PASS|FAIL ...`` line, printed in the
terminal summary.  Tolerances are pinned below.
"""

import time

import numpy as np
import pytest

from sgia.beliefs import Selection
from sgia.game_model import StrategyProfile
from sgia.instances import prisoners_dilemma, zero_game
from sgia.lfpa import admissibility_of_profile, lambda_gradients, lambda_i, local_point, z_lfpa_reduced, z_lfpa_tau_gradient
from sgia.perfect_info import assemble_profile, find_fp_tau, pi_values, transform_to_pi_ppme, u_map, verify_pi_ppme
from sgia.ppme_verifier import (
    check_feasibility_K,
    check_feasibility_K_gfpa,
    cross_check_propositions,
    objective_Z,
    objective_Z_gfpa,
    verify_ppme_direct,
)
from sgia.solver import SolverConfig, solve_ppme_penalty
from sgia.value_engine import bellman_residuals, evaluate_policy, monte_carlo_value, tables_for

from conftest import ACCEPTANCE_LINES, REFERENCE_SEEDS, enumerable_seeds, equilibria, pure_profiles, reference

RESIDUAL_TOL = 1e-10
MC_EPISODES = 100_000
MC_SE_MULT = 3.0
MC_BIAS_CAP = 1e-4
Z_TOL = 1e-7
ADMISSIBILITY_TOL = 1e-8
FD_STEP = 1e-6
FD_REL_TOL = 1e-6
VALUE_GAP_TOL = 1e-6
FP_TOL = 1e-9
NON_FIXED_RESIDUAL = 1e-3
NONNEG_TOL = -1e-9
FEASIBLE_POINTS = 100


def record(n, ok, detail):
    ACCEPTANCE_LINES.append(f"CRITERION {n}: {'PASS' if ok else 'FAIL'} {detail}")
    print(ACCEPTANCE_LINES[-1])


def random_mixed_profile(rng, game, fam):
    H = game.n_histories
    beta = np.stack([rng.integers(0, fam.cognition_counts[i], H) for i in range(game.n_agents)])
    pi = tuple(rng.dirichlet(np.ones(game.action_counts[i]), size=(H, fam.type_counts[i]))
               for i in range(game.n_agents))
    return StrategyProfile(beta, pi)


def test_criterion_1_bellman_exactness():
    worst, slowest = 0.0, 0.0
    for seed in REFERENCE_SEEDS:
        g, f, c = reference(seed)
        p = random_mixed_profile(np.random.default_rng(seed), g, f)
        start = time.perf_counter()
        vt = evaluate_policy(g, f, c, p)
        slowest = max(slowest, time.perf_counter() - start)
        res = bellman_residuals(tables_for(g, f, c, p), vt)
        worst = max(worst, max(float(np.max(np.abs(r))) for v in res.values() for r in v))
    ok = worst <= RESIDUAL_TOL and slowest < 1.0
    record(1, ok, f"max residual {worst:.2e} (tol {RESIDUAL_TOL:g}), slowest {slowest:.3f}s over {len(REFERENCE_SEEDS)} seeds")
    assert ok


def test_criterion_2_monte_carlo_consistency():
    passed, slowest, worst_z = 0, 0.0, 0.0
    for seed in REFERENCE_SEEDS:
        g, f, c = reference(seed)
        p = random_mixed_profile(np.random.default_rng(seed), g, f)
        h = seed % g.n_histories
        J = evaluate_policy(g, f, c, p).J
        start = time.perf_counter()
        mc = monte_carlo_value(g, f, c, p, h, MC_EPISODES, seed=seed, bias_cap=MC_BIAS_CAP)
        slowest = max(slowest, time.perf_counter() - start)
        z = max(abs(mc.mean[i] - J[i][h]) / mc.stderr[i] for i in range(g.n_agents))
        worst_z = max(worst_z, z)
        passed += z <= MC_SE_MULT
    ok = passed >= 18 and slowest < 30.0
    record(2, ok, f"{passed}/20 seeds within {MC_SE_MULT:g} SE (worst {worst_z:.2f} SE), slowest {slowest:.1f}s")
    assert ok


@pytest.fixture(scope="module")
def cross_checks():
    out = {}
    for seed in enumerable_seeds():
        g, f, c = reference(seed)
        ct = c.tensor(g, f)
        out[seed] = [cross_check_propositions(p, g, f, c, tol=Z_TOL, cost_tensor=ct) for p in pure_profiles(seed)]
    return out


def test_criterion_3_opt_matches_direct(cross_checks):
    start = time.perf_counter()
    mismatches = sum(r["opt_holds"] != r["direct_is_ppme"] for rs in cross_checks.values() for r in rs)
    total = sum(len(rs) for rs in cross_checks.values())
    found = sum(r["direct_is_ppme"] for rs in cross_checks.values() for r in rs)
    ok = mismatches == 0 and found > 0 and time.perf_counter() - start < 300
    record(3, ok, f"{mismatches} mismatches over {total} pure profiles ({found} PPME) on seeds {enumerable_seeds()}")
    assert ok


def test_criterion_4_opt_matches_gfpa(cross_checks):
    bad = sum(not r["agree"] for rs in cross_checks.values() for r in rs)
    total = sum(len(rs) for rs in cross_checks.values())
    record(4, bad == 0, f"{bad} disagreements over {total} profiles")
    assert bad == 0


def test_criterion_5_local_admissibility():
    missed, false_pass, rank_ok, negatives = 0, 0, 0, 0
    for seed in enumerable_seeds():
        g, f, c = reference(seed)
        ct = c.tensor(g, f)
        eq = equilibria(seed)
        eq_keys = {p.flat().tobytes() for p in eq}
        for p in eq:
            cert = admissibility_of_profile(p, g, f, c, cost_tensor=ct)
            if cert.independence_holds:
                rank_ok += 1
                missed += not cert.admissible
            vt = evaluate_policy(g, f, c, p)
            bumped = admissibility_of_profile(p, g, f, c, J=[j + 0.1 for j in vt.J], V=vt.V, cost_tensor=ct)
            negatives += 1
            false_pass += bumped.admissible
        others = [p for p in pure_profiles(seed) if p.flat().tobytes() not in eq_keys]
        assert len(others) >= 10
        for p in others:
            negatives += 1
            false_pass += admissibility_of_profile(p, g, f, c, cost_tensor=ct).admissible
    ok = missed == 0 and false_pass == 0 and rank_ok > 0
    record(5, ok, f"{rank_ok} rank-regular PPME, {missed} rejected; {false_pass}/{negatives} non-equilibrium points accepted")
    assert ok


def _central(fun, x):
    out = np.empty(x.size)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = FD_STEP
        out[k] = (fun(x + e) - fun(x - e)) / (2 * FD_STEP)
    return out


def _rel(a, b):
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12))


def test_criterion_6_gradients():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for n in range(100):
        seed = int(rng.integers(0, 20))
        g, f, c = reference(seed)
        beta = rng.integers(0, 2, size=(2, 8))
        sel = Selection.from_profile(g, f, c, beta)
        i, s, h = int(rng.integers(2)), int(rng.integers(2)), int(rng.integers(8))
        pt = local_point(sel, g.transition_by_history, rng.normal(size=8), rng.normal(size=(8, 4)), i, s, h)
        pt = pt.with_tau_i(rng.dirichlet(np.ones(pt.n_types)))
        G = lambda_gradients(pt)
        for k in range(pt.n_types):
            worst = max(worst, _rel(G[k], _central(lambda x: lambda_i(pt.with_X(x), k), pt.X)))
        worst = max(worst, _rel(z_lfpa_tau_gradient(pt), _central(lambda t: z_lfpa_reduced(pt, t), pt.tau_i[:-1])))
    ok = worst <= FD_REL_TOL
    record(6, ok, f"max relative error {worst:.2e} on 100 points (tol {FD_REL_TOL:g})")
    assert ok


def test_criterion_7_perfect_information_transformation():
    gaps, verified, total = [], 0, 0
    for seed in enumerable_seeds():
        g, f, c = reference(seed)
        for p in equilibria(seed):
            t = transform_to_pi_ppme(g, f, c, p, check=False)
            gaps.append(t.max_value_gap)
            verified += verify_pi_ppme(g, t.pi_scheme, t.pi_star, t.sab_cost).is_ppme
            total += 1
    ok = max(gaps) <= VALUE_GAP_TOL and verified == total
    record(7, ok, f"max value gap {max(gaps):.2e} (tol {VALUE_GAP_TOL:g}); PI-PPME check passed on {verified}/{total}")
    assert ok


def test_criterion_8_u_map_round_trip():
    rng = np.random.default_rng(8)
    converged, converged_ok, non_fixed, non_fixed_pass = 0, 0, 0, 0
    for seed in enumerable_seeds():
        g, f, c = reference(seed)
        t = transform_to_pi_ppme(g, f, c, equilibria(seed)[0], check=False)
        J = pi_values(g, t.pi_scheme, t.pi_star, t.sab_cost)
        uniform = [np.full((8, 2, 2), 0.5) for _ in range(2)]
        for init in (t.pi_scheme.xi, uniform):
            res = find_fp_tau(g, t.pi_scheme, t.pi_star, init, sab_cost=t.sab_cost, J_star=J, tol=FP_TOL)
            if res.converged:
                converged += 1
                converged_ok += res.verification.is_ppme
        for _ in range(4):
            tau = [rng.dirichlet(np.ones(2), size=(8, 2)) for _ in range(2)]
            new, _ = u_map(g, tau, t.pi_star, J, t.sab_cost)
            if max(float(np.max(np.abs(a - b))) for a, b in zip(new, tau)) >= NON_FIXED_RESIDUAL:
                fam, scheme, prof = assemble_profile(g, tau, t.pi_star, t.sab_cost)
                non_fixed += 1
                non_fixed_pass += verify_ppme_direct(prof, g, fam, scheme).is_ppme
    ok = converged >= 3 and converged_ok == converged and non_fixed_pass == 0
    record(8, ok, f"{converged_ok}/{converged} converged fixed points verify as PPME; "
                  f"{non_fixed_pass}/{non_fixed} non-fixed points verify")
    assert ok


def _feasible_opt_points(seed, rng):
    g, f, c = reference(seed)
    ct = c.tensor(g, f)
    pts = []
    while len(pts) < FEASIBLE_POINTS:
        p = random_mixed_profile(rng, g, f)
        vt = evaluate_policy(g, f, c, p)
        V = [v + rng.uniform(0, 40) + rng.uniform(0, 0.5, v.shape) for v in vt.V]
        if check_feasibility_K(p.pi, V, p.beta, f, g, c, cost_tensor=ct).feasible:
            pts.append(objective_Z(p.pi, V, p.beta, f, g, c, ct))
    return pts


def _feasible_gfpa_points(seed, rng):
    g, f, c = reference(seed)
    ct = c.tensor(g, f)
    pts = []
    while len(pts) < FEASIBLE_POINTS:
        p = random_mixed_profile(rng, g, f)
        tables = tables_for(g, f, c, p, ct)
        vt = evaluate_policy(g, f, c, p)
        J = [j + rng.uniform(0, 40) + rng.uniform(0, 0.5, j.shape) for j in vt.J]
        V = [v + rng.uniform(0, 40) + rng.uniform(0, 0.5, v.shape) for v in vt.V]
        tau = tables.sel.tau
        if check_feasibility_K_gfpa(tau, J, V, p.pi, g, c, f, p.beta, cost_tensor=ct).feasible:
            pts.append(objective_Z_gfpa(tau, J, V, p.pi, g, c, p.beta))
    return pts


def test_criterion_9_objectives_are_nonnegative_on_feasible_sets():
    rng = np.random.default_rng(9)
    z_min, zg_min = np.inf, np.inf
    for seed in enumerable_seeds():
        z_min = min(z_min, min(_feasible_opt_points(seed, rng)))
        zg_min = min(zg_min, min(_feasible_gfpa_points(seed, rng)))
    ok = z_min >= NONNEG_TOL and zg_min >= NONNEG_TOL
    record(9, ok, f"min Z {z_min:.3e}, min Z_GFPA {zg_min:.3e} over {FEASIBLE_POINTS} feasible points per instance "
                  f"(floor {NONNEG_TOL:g})")
    assert ok


def test_criterion_10_solver_soundness():
    instances = [("pd", prisoners_dilemma()), ("zero", zero_game())]
    instances += [(f"seed{s}", reference(s)) for s in enumerable_seeds()]
    successes, false_pos = 0, 0
    for name, (g, f, c) in instances:
        for seed in (0, 1):
            res = solve_ppme_penalty(g, f, c, SolverConfig(seed=seed, max_iters=100))
            if res.converged:
                successes += 1
                false_pos += not verify_ppme_direct(res.profile, g, f, c).is_ppme
    ok = false_pos == 0 and successes > 0
    record(10, ok, f"{successes} solver successes, {false_pos} false positives")
    assert ok
