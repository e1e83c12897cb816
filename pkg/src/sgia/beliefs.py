"""Common priors, posteriors and expected immediate rewards.

Two layers live here.  The per-cell functions (``joint_prior``, ``posterior``,
``expected_immediate_reward``) work on one ``(h, g)`` pair and are meant for
inspection and testing.  ``Selection`` and ``BeliefTables`` hold the same
quantities for every history at once, which is what the value recursions use.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .game_model import (
    BaseGame,
    ContractError,
    CostContext,
    CostScheme,
    SignalingFamily,
    cognition_cost,
    mutual_information,
)


class ZeroProbabilityType(ValueError):
    """The conditioning type has probability zero, so no posterior exists."""

    def __init__(self, agent, theta_i, h, g):
        super().__init__(f"type {theta_i} of agent {agent} has zero probability at h={h}, g={g}")
        self.agent, self.theta_i, self.h, self.g = agent, theta_i, h, tuple(g)


def _type_product(rules_at, counts, S):
    """Product of independent per-agent rules ``rules_at[i]`` of shape ``(S, Theta_i)``."""
    n = len(counts)
    tau = np.ones((S,) + tuple(counts))
    for i, r in enumerate(rules_at):
        shape = [S] + [1] * n
        shape[1 + i] = counts[i]
        tau = tau * np.asarray(r).reshape(shape)
    return tau.reshape(S, -1)


def joint_prior(game: BaseGame, fam: SignalingFamily, h: int, g: Sequence[int]) -> np.ndarray:
    """``p[s, theta]`` with ``theta`` a flat type-profile index."""
    rules_at = [fam.rules[i][h, :, g[i], :] for i in range(fam.n_agents)]
    tau = _type_product(rules_at, fam.type_counts, game.n_states)
    return game.transition_by_history[h][:, None] * tau


def _others(counts, i):
    return tuple(c for j, c in enumerate(counts) if j != i)


@dataclass(frozen=True, eq=False)
class Posterior:
    """Agent ``i``'s belief over ``(s, theta_-i)`` after observing ``theta_i``."""

    mu: np.ndarray  # (S, n_opponent_type_profiles)
    agent: int
    theta_i: int
    h: int
    g: tuple
    type_prob: float
    own_joint: np.ndarray  # (Theta_i, S) joint of own type and state, used by MI costs

    @property
    def mu_s(self) -> np.ndarray:
        return self.mu.sum(axis=1)

    @property
    def mu_theta(self) -> np.ndarray:
        return self.mu.sum(axis=0)


def posterior(game, fam, i, theta_i, h, g) -> Posterior:
    g = tuple(int(x) for x in g)
    p = joint_prior(game, fam, h, g).reshape((game.n_states,) + fam.type_counts)
    p_i = np.moveaxis(p, 1 + i, 1)[:, theta_i].reshape(game.n_states, -1)
    mass = p_i.sum()
    if mass <= 0:
        raise ZeroProbabilityType(i, theta_i, h, g)
    own = (game.transition_by_history[h][:, None] * fam.rules[i][h, :, g[i], :]).T
    return Posterior(p_i / mass, i, int(theta_i), int(h), g, float(mass), own)


def expected_immediate_reward(game, scheme: CostScheme, post: Posterior, i, h, theta_i, a) -> float:
    """Posterior mean of reward plus cognition cost for joint action ``a``."""
    if (post.agent, post.theta_i, post.h) != (i, theta_i, h):
        raise ContractError("posterior does not belong to the requested (i, theta_i, h)")
    a = tuple(int(x) for x in a)
    mu_s = post.mu_s
    total = 0.0
    for s in range(game.n_states):
        if mu_s[s] == 0.0:
            continue
        ctx = CostContext(
            agent=i, g=post.g[i], theta=theta_i, s=s, a_i=a[i], h=h, joint=post.own_joint
        )
        total += mu_s[s] * (game.rewards[(i, s) + a] + cognition_cost(scheme, ctx))
    return float(total)


# ---------------------------------------------------------------------------
# vectorized layer


@dataclass(frozen=True, eq=False)
class Selection:
    """Signaling slices and realized per-period costs in force at every history.

    ``tau[i]`` has shape ``(H, S, Theta_i)`` and ``cost[i]`` has shape
    ``(H, S, Theta_i, A_i)``.  ``beta`` is kept when the selection comes from
    a menu; a selection built from free-standing rules has ``beta = None``.
    """

    tau: tuple
    cost: tuple
    beta: Optional[np.ndarray] = None

    @property
    def type_counts(self):
        return tuple(t.shape[2] for t in self.tau)

    @classmethod
    def from_profile(cls, game, fam, scheme, beta, cost_tensor=None):
        beta = np.asarray(beta, dtype=int)
        H = game.n_histories
        hs = np.arange(H)
        if cost_tensor is None:
            cost_tensor = scheme.tensor(game, fam)
        tau = tuple(fam.rules[i][hs, :, beta[i], :] for i in range(fam.n_agents))
        cost = tuple(cost_tensor[i][hs, beta[i]] for i in range(fam.n_agents))
        return cls(tau, cost, beta)

    @classmethod
    def from_tau(cls, game, tau, scheme, beta=None, fam=None):
        """Selection from arbitrary per-history rules.

        Menu-indexed costs (CB) need ``beta``; MI costs are recomputed from the
        supplied rules so off-menu points are costed consistently.
        """
        tau = tuple(np.asarray(t, dtype=float) for t in tau)
        H, S = game.n_histories, game.n_states
        T = game.transition_by_history
        cost = []
        for i, t in enumerate(tau):
            Th, A = t.shape[2], game.action_counts[i]
            shape = (H, S, Th, A)
            if scheme.kind == "MI":
                mi = np.array([mutual_information((T[h][:, None] * t[h]).T) for h in range(H)])
                c = np.broadcast_to((scheme.scale * mi)[:, None, None, None], shape)
            elif scheme.kind == "CB":
                if beta is None:
                    raise ContractError("CB costs need beta to know which menu item is active")
                c = np.broadcast_to(scheme.tables[i][np.asarray(beta)[i]][:, None, None, None], shape)
            elif scheme.kind == "TB":
                c = np.broadcast_to(scheme.tables[i][None, None, :, None], shape)
            elif scheme.kind == "STB":
                c = np.broadcast_to(scheme.tables[i][None, :, :, None], shape)
            else:
                tab = scheme.tables[i]
                if tab.ndim == 2:
                    tab = np.broadcast_to(tab, (H,) + tab.shape)
                c = np.broadcast_to(tab[:, :, None, :], shape)
            cost.append(np.array(c))
        return cls(tau, tuple(cost), None if beta is None else np.asarray(beta, dtype=int))


def type_index_maps(counts):
    """One-hot ``(n_profiles, counts[i])`` matrices mapping profiles to agent coordinates."""
    grids = np.indices(counts).reshape(len(counts), -1).T
    return [np.eye(c)[grids[:, i]] for i, c in enumerate(counts)], grids


def prior_tensor(game: BaseGame, sel: Selection) -> np.ndarray:
    """``p[h, s, theta]`` for every history under the selection."""
    H, S = game.n_histories, game.n_states
    out = np.empty((H, S, int(np.prod(sel.type_counts))))
    T = game.transition_by_history
    for h in range(H):
        tau = _type_product([t[h] for t in sel.tau], sel.type_counts, S)
        out[h] = T[h][:, None] * tau
    return out


def joint_policy(pi, counts_theta, counts_a, skip: Optional[int] = None) -> np.ndarray:
    """``pi[h, theta, a] = prod_j pi_j(a_j | theta_j, h)``, optionally leaving out one agent."""
    _, tg = type_index_maps(counts_theta)
    _, ag = type_index_maps(counts_a)
    H = pi[0].shape[0]
    out = np.ones((H, tg.shape[0], ag.shape[0]))
    for j, p in enumerate(pi):
        if j == skip:
            continue
        out = out * p[:, tg[:, j]][:, :, ag[:, j]]
    return out


class BeliefTables:
    """Per-agent posteriors and opponent-action weights at every history.

    ``post[i][h, s, theta]`` is agent ``i``'s belief over ``(s, theta_-i)``
    placed on the full profile axis (entries with the wrong own type are
    zero).  For a zero-probability own type the prior over ``(s, theta_-i)``
    is used instead; those types carry no weight in any expectation that
    matters for equilibrium, the fallback only keeps every quantity defined.

    ``kw[i][h, theta_i, s, a]`` is the weight
    ``sum_{theta_-i} mu_i(s, theta_-i | theta_i) pi_-i(a_-i | theta_-i)``,
    so that an expectation of ``X(s, a_i, a_-i)`` after deviating to ``a_i``
    is ``sum_{s, a_-i} kw X``.
    """

    def __init__(self, game: BaseGame, sel: Selection, pi):
        self.game, self.sel, self.pi = game, sel, tuple(np.asarray(p, float) for p in pi)
        counts = sel.type_counts
        self.counts = counts
        self.p = prior_tensor(game, sel)
        self.type_maps, self.type_grid = type_index_maps(counts)
        self.action_maps, self.action_grid = type_index_maps(game.action_counts)
        self.pi_joint = joint_policy(self.pi, counts, game.action_counts)
        T = game.transition_by_history
        H, S = game.n_histories, game.n_states
        self.type_prob, self.post, self.kw, self.mu_s = [], [], [], []
        for i in range(game.n_agents):
            Et = self.type_maps[i]
            P = np.einsum("hst,tk->hk", self.p, Et)
            others = [t if j != i else np.ones_like(t) for j, t in enumerate(sel.tau)]
            fb = np.stack([T[h][:, None] * _type_product([o[h] for o in others], counts, S) for h in range(H)])
            Pt = P @ Et.T  # (H, n_theta): own-type probability of each profile
            with np.errstate(invalid="ignore", divide="ignore"):
                post = np.where(Pt[:, None, :] > 0, self.p / np.where(Pt > 0, Pt, 1.0)[:, None, :], fb)
            pim = joint_policy(self.pi, counts, game.action_counts, skip=i)
            self.type_prob.append(P)
            self.post.append(post)
            self.kw.append(np.einsum("hst,tk,hta->hksa", post, Et, pim))
            self.mu_s.append(np.einsum("hst,tk->hks", post, Et))

    def positive(self, i, tol=0.0) -> np.ndarray:
        """Mask of ``(h, theta_i)`` with positive type probability."""
        return self.type_prob[i] > tol

    def transition_matrix(self) -> np.ndarray:
        """``M[h, h']``: probability that the next history is ``h'``."""
        M = np.einsum("hst,hta->hsa", self.p, self.pi_joint)
        return M.reshape(self.game.n_histories, self.game.n_histories)

    def integrand(self, i, J) -> np.ndarray:
        """``X_i[h, s, theta_i, a] = R_i(s, a) + c_i + delta J_i(s, a)``."""
        g = self.game
        R = g.reward_flat[i]  # (S, nA)
        c = self.sel.cost[i][:, :, :, self.action_grid[:, i]]  # (H, S, Theta_i, nA)
        cont = g.discount * np.asarray(J, float).reshape(g.n_states, g.n_joint)
        return (R + cont)[None, :, None, :] + c

    def q_values(self, i, J) -> np.ndarray:
        """``Q_i[h, theta_i, a]`` under the action-informed posterior."""
        X = self.integrand(i, J)
        kw = self.kw[i]
        num = np.einsum("hksa,hska->hka", kw, X)
        den = kw.sum(axis=2)
        fallback = np.einsum("hks,hska->hka", self.mu_s[i], X)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(den > 0, num / np.where(den > 0, den, 1.0), fallback)

    def deviation_values(self, i, J) -> np.ndarray:
        """``dev_i[h, theta_i, a_i]``: expected value of switching to pure ``a_i``."""
        X = self.integrand(i, J)
        return np.einsum("hksa,hska,al->hkl", self.kw[i], X, self.action_maps[i])

    def profile_values(self, i, Q) -> np.ndarray:
        """``V_i[h, theta] = sum_a pi(a | theta) Q_i[h, theta_i, a]``."""
        own = self.type_grid[:, i]
        return np.einsum("hta,hta->ht", self.pi_joint, Q[:, own, :])

    def expect_over_opponents(self, i, V) -> np.ndarray:
        """``sum_{theta_-i} mu_i(theta_-i | theta_i, h) V[h, theta]`` as ``(H, Theta_i)``."""
        post_theta = self.post[i].sum(axis=1)
        return np.einsum("ht,ht,tk->hk", post_theta, V, self.type_maps[i])

    def history_value(self, V) -> np.ndarray:
        """``sum_{s, theta} V[h, theta] p[h, s, theta]``."""
        return np.einsum("hst,ht->h", self.p, V)
