"""Exact stationary values, auxiliary aggregates and a Monte-Carlo cross-check.

Continuation values are discounted once per period throughout, so a value
at history ``h`` is ``E[sum_k delta^k (R + C)]`` with ``k`` counted from the
current period.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .beliefs import BeliefTables, Selection, ZeroProbabilityType
from .game_model import BaseGame, ContractError, CostScheme, SignalingFamily, StrategyProfile


@dataclass(frozen=True, eq=False)
class ValueTriple:
    """``J[i]`` over ``H``, ``V[i]`` over ``(H, theta)``, ``Q[i]`` over ``(H, Theta_i, A)``."""

    J: tuple
    V: tuple
    Q: tuple

    def stacked_J(self) -> np.ndarray:
        return np.stack(self.J)


def tables_for(game: BaseGame, fam: SignalingFamily, scheme: CostScheme, profile: StrategyProfile,
               cost_tensor=None) -> BeliefTables:
    sel = Selection.from_profile(game, fam, scheme, profile.beta, cost_tensor)
    return BeliefTables(game, sel, profile.pi)


def solve_history_values(tables: BeliefTables) -> list:
    """Solve ``(I - delta M) J_i = c_i`` per agent with a dense LU factorization."""
    g = tables.game
    M = tables.transition_matrix()
    A = np.eye(g.n_histories) - g.discount * M
    zero = np.zeros(g.n_histories)
    out = []
    for i in range(g.n_agents):
        X = tables.integrand(i, zero)  # reward plus cost only
        c = np.einsum("hst,hta,hsta->h", tables.p, tables.pi_joint,
                      X[:, :, tables.type_grid[:, i], :])
        out.append(np.linalg.solve(A, c))
    return out


def values_from_J(tables: BeliefTables, J) -> ValueTriple:
    Qs, Vs = [], []
    for i, Ji in enumerate(J):
        Q = tables.q_values(i, Ji)
        Qs.append(Q)
        Vs.append(tables.profile_values(i, Q))
    return ValueTriple(tuple(np.asarray(j) for j in J), tuple(Vs), tuple(Qs))


def evaluate_tables(tables: BeliefTables) -> ValueTriple:
    return values_from_J(tables, solve_history_values(tables))


def evaluate_policy(game, fam, scheme, profile, method: str = "direct", tol: float = 1e-13,
                    max_sweeps: int = 100000) -> ValueTriple:
    """Stationary ``(J, V, Q)`` of a profile.

    ``method="direct"`` solves the linear system exactly; ``"iterate"`` runs
    value iteration from zero until the sup-norm update drops below ``tol``.
    """
    tables = tables_for(game, fam, scheme, profile)
    if method == "direct":
        return evaluate_tables(tables)
    if method != "iterate":
        raise ContractError(f"unknown evaluation method {method!r}")
    J = [np.zeros(game.n_histories) for _ in range(game.n_agents)]
    for _ in range(max_sweeps):
        new = value_iteration_sweep(tables, J)
        diff = max(np.max(np.abs(a - b)) for a, b in zip(new, J))
        J = new
        if diff < tol:
            break
    return values_from_J(tables, J)


def value_iteration_sweep(tables: BeliefTables, J) -> list:
    """One application of the history-value recursion to every agent's ``J``."""
    out = []
    for i, Ji in enumerate(J):
        V = tables.profile_values(i, tables.q_values(i, Ji))
        out.append(tables.history_value(V))
    return out


def bellman_residuals(tables: BeliefTables, vt: ValueTriple) -> dict:
    """Elementwise residuals of the three recursions, per agent.

    ``J`` against the prior-weighted ``V``; ``V`` against the policy-weighted
    ``Q``; ``Q`` against the posterior mean of reward, cost and discounted
    next-period ``J``, recomputed here as an explicit ratio of sums.
    """
    g = tables.game
    out = {"J": [], "V": [], "Q": []}
    for i in range(g.n_agents):
        J, V, Q = vt.J[i], vt.V[i], vt.Q[i]
        out["J"].append(J - tables.history_value(V))
        out["V"].append(V - tables.profile_values(i, Q))
        # explicit loop over (h, theta_i, a) cells as an independent reading
        X = tables.integrand(i, J)
        rq = np.empty_like(Q)
        for h in range(g.n_histories):
            for k in range(Q.shape[1]):
                for a in range(g.n_joint):
                    w = tables.kw[i][h, k, :, a]
                    if w.sum() > 0:
                        rq[h, k, a] = Q[h, k, a] - np.dot(w, X[h, :, k, a]) / w.sum()
                    else:
                        rq[h, k, a] = Q[h, k, a] - np.dot(tables.mu_s[i][h, k], X[h, :, k, a])
        out["Q"].append(rq)
    return out


def value_bound(game: BaseGame, tables: BeliefTables, i: int) -> float:
    r = np.max(np.abs(game.reward_flat[i])) + np.max(np.abs(tables.sel.cost[i]))
    return float(r / (1.0 - game.discount))


# ---------------------------------------------------------------------------
# aggregates used by the optimization formulations


def _require_positive(tables, i, h, theta_i):
    if tables.type_prob[i][h, theta_i] <= 0:
        g = () if tables.sel.beta is None else tuple(tables.sel.beta[:, h])
        raise ZeroProbabilityType(i, theta_i, h, g)


def ev_i(V, tables: BeliefTables, i, h, theta_i) -> float:
    """Opponent-type expectation of a Bellman-consistent ``V_i`` after seeing ``theta_i``."""
    _require_positive(tables, i, h, theta_i)
    return float(tables.expect_over_opponents(i, np.asarray(V))[h, theta_i])


def mv_i(V_candidate, tables: BeliefTables, i, h, theta_i) -> float:
    """Same expectation for an arbitrary candidate ``V_i``."""
    return ev_i(V_candidate, tables, i, h, theta_i)


def ij_i(J_candidate, tables: BeliefTables, i, h, theta_i, discount_in_ij: bool = True) -> float:
    """Type-indexed one-step unrolling of ``J`` with own type held at ``theta_i``.

    Sums ``(Rbar_i(h, theta_i, a) + d J(s, a)) pi(a | theta_i, theta_-i)
    tau_-i(theta_-i | s) T(s | h)`` over ``(s, theta_-i, a)``, where ``Rbar`` is
    the posterior mean given ``theta_i`` alone and ``d`` is ``delta`` or 1.
    """
    g = tables.game
    d = g.discount if discount_in_ij else 1.0
    Jc = np.asarray(J_candidate, float).reshape(g.n_states, g.n_joint)
    T = g.transition_by_history[h]
    own = tables.type_grid[:, i] == theta_i
    zero = np.zeros(g.n_histories)
    rbar = np.einsum("s,sa->a", tables.mu_s[i][h, theta_i],
                     tables.integrand(i, zero)[h, :, theta_i, :])
    total = 0.0
    for t in np.nonzero(own)[0]:
        prof = tables.type_grid[t]
        for s in range(g.n_states):
            w = T[s]
            for j, tj in enumerate(tables.sel.tau):
                if j != i:
                    w *= tj[h, s, prof[j]]
            if w == 0:
                continue
            total += w * np.dot(tables.pi_joint[h, t], rbar + d * Jc[s])
    return float(total)


def iv_i(V_candidate, tables: BeliefTables, i, h, theta_i) -> float:
    """``sum_{theta_-i, s} V_i(h, theta_i, theta_-i) tau_-i(theta_-i | s, h) T(s | h)``."""
    g = tables.game
    T = g.transition_by_history[h]
    V = np.asarray(V_candidate, float)
    total = 0.0
    for t in np.nonzero(tables.type_grid[:, i] == theta_i)[0]:
        prof = tables.type_grid[t]
        for s in range(g.n_states):
            w = T[s]
            for j, tj in enumerate(tables.sel.tau):
                if j != i:
                    w *= tj[h, s, prof[j]]
            total += w * V[h, t]
    return float(total)


def ij_menu(J_candidate, game, fam, scheme, profile, i, h, g_alt, cost_tensor=None) -> float:
    """Value at ``h`` of choosing menu item ``g_alt`` this period, then following ``J``.

    ``sum_{s, theta, a} tau_i(theta_i | s, g_alt) tau_-i(theta_-i | s) T(s | h)
    pi(a | theta) [R_i + c_i(g_alt) + delta J(s, a)]``.
    """
    beta = np.array(profile.beta)
    beta[i, h] = g_alt
    sel = Selection.from_profile(game, fam, scheme, beta, cost_tensor)
    return _one_shot(game, sel, profile.pi, i, J_candidate)[h]


def ij_menu_table(J_candidate, game, fam, scheme, profile, i, cost_tensor=None) -> np.ndarray:
    """``(H, G_i)`` array of one-shot values for every menu item at every history."""
    G = fam.cognition_counts[i]
    if cost_tensor is None:
        cost_tensor = scheme.tensor(game, fam)
    out = np.empty((game.n_histories, G))
    for g_alt in range(G):
        beta = np.array(profile.beta)
        beta[i, :] = g_alt
        sel = Selection.from_profile(game, fam, scheme, beta, cost_tensor)
        out[:, g_alt] = _one_shot(game, sel, profile.pi, i, J_candidate)
    return out


def _one_shot(game, sel, pi, i, J):
    tables = BeliefTables(game, sel, pi)
    X = tables.integrand(i, J)
    return np.einsum("hst,hta,hsta->h", tables.p, tables.pi_joint, X[:, :, tables.type_grid[:, i], :])


# ---------------------------------------------------------------------------
# Monte Carlo


def mc_horizon(game: BaseGame, bound: float, bias_cap: float) -> int:
    """Smallest horizon with ``delta^T * bound / (1 - delta) <= bias_cap``."""
    if bound <= 0:
        return 1
    ratio = bias_cap * (1.0 - game.discount) / bound
    if ratio >= 1:
        return 1
    return int(math.ceil(math.log(ratio) / math.log(game.discount)))


def _draw(rng, probs):
    """One categorical draw per row of ``probs`` by inverse CDF."""
    cdf = np.cumsum(probs, axis=1)
    u = rng.random(probs.shape[0]) * cdf[:, -1]
    return np.minimum((u[:, None] >= cdf).sum(axis=1), probs.shape[1] - 1)


@dataclass(frozen=True)
class MonteCarloEstimate:
    mean: np.ndarray
    stderr: np.ndarray
    episodes: int
    horizon: int


def monte_carlo_value(game, fam, scheme, profile, h, episodes: int, horizon: Optional[int] = None,
                      seed: int = 0, bias_cap: float = 1e-4, cost_tensor=None) -> MonteCarloEstimate:
    """Sample discounted returns from history ``h`` by simulating each period in order.

    Each period draws the state from ``T(.|h)``, each agent's menu item from
    ``beta``, independent types from the selected rules, actions from ``pi``,
    and accrues ``delta^k (R + C)``.  Episodes are simulated as a batch; the
    result depends only on ``seed``.
    """
    if cost_tensor is None:
        cost_tensor = scheme.tensor(game, fam)
    n, S = game.n_agents, game.n_states
    if horizon is None:
        bound = max(
            np.max(np.abs(game.reward_flat[i])) + np.max(np.abs(cost_tensor[i])) for i in range(n)
        )
        horizon = mc_horizon(game, bound, bias_cap)
    rng = np.random.default_rng(seed)
    T = game.transition_by_history
    R = game.reward_flat
    hist = np.full(episodes, int(h))
    total = np.zeros((n, episodes))
    disc = 1.0
    for _ in range(horizon):
        s = _draw(rng, T[hist])
        acts = np.empty((n, episodes), dtype=int)
        types = np.empty((n, episodes), dtype=int)
        gs = np.empty((n, episodes), dtype=int)
        for i in range(n):
            gs[i] = profile.beta[i][hist]
            types[i] = _draw(rng, fam.rules[i][hist, s, gs[i], :])
        for i in range(n):
            acts[i] = _draw(rng, profile.pi[i][hist, types[i], :])
        a_flat = np.ravel_multi_index(tuple(acts), game.action_counts)
        for i in range(n):
            step = R[i][s, a_flat] + cost_tensor[i][hist, gs[i], s, types[i], acts[i]]
            total[i] += disc * step
        disc *= game.discount
        hist = s * game.n_joint + a_flat
    mean = total.mean(axis=1)
    se = total.std(axis=1, ddof=1) / math.sqrt(episodes) if episodes > 1 else np.zeros(n)
    return MonteCarloEstimate(mean, se, episodes, horizon)
