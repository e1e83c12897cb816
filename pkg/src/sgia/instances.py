"""Small game instances used by tests, demos and the CLI."""

from __future__ import annotations

import numpy as np

from .game_model import BaseGame, CostScheme, SignalingFamily


def random_instance(seed: int, n_agents: int = 2, n_states: int = 2, n_actions: int = 2,
                    n_types: int = 2, n_menu: int = 2, discount: float = 0.9,
                    cost_kind: str = "CB", history_dependent: bool = False, noise: float = 0.5):
    """Random game of the reference family (defaults: two of everything, eight histories).

    Rewards pay each agent for matching its action to the state, plus a
    coordination bonus and Gaussian noise, so that signals are worth
    acquiring.  Transitions and signaling rules have full support, which
    keeps every type at positive probability.  Menu item ``g`` has accuracy
    increasing in ``g``.
    """
    rng = np.random.default_rng(seed)
    n, S, A = n_agents, n_states, n_actions
    shape = (S,) + (A,) * n
    rewards = np.empty((n,) + shape)
    grid = np.indices((A,) * n)
    for i in range(n):
        for s in range(S):
            match = (grid[i] % S == s).astype(float)
            coord = np.mean([(grid[j] == grid[i]) for j in range(n)], axis=0)
            rewards[i, s] = match + 0.5 * coord + noise * rng.standard_normal((A,) * n)
    transition = rng.dirichlet(np.ones(S) * 2.0, size=shape)
    initial = rng.dirichlet(np.ones(S))
    game = BaseGame(rewards, transition, initial, discount)

    H = game.n_histories
    rules = []
    for i in range(n):
        if history_dependent:
            r = np.empty((H, S, n_menu, n_types))
            for h in range(H):
                r[h] = _menu_rules(rng, S, n_menu, n_types)
        else:
            r = np.broadcast_to(_menu_rules(rng, S, n_menu, n_types), (H, S, n_menu, n_types))
        rules.append(r)
    fam = SignalingFamily(tuple(rules), history_dependent=history_dependent)
    scheme = random_cost(rng, game, fam, cost_kind)
    return game, fam, scheme


def _menu_rules(rng, S, G, Th):
    out = np.empty((S, G, Th))
    for g in range(G):
        acc = 0.55 + 0.4 * g / max(G - 1, 1)
        for s in range(S):
            base = np.full(Th, (1 - acc) / max(Th - 1, 1)) if Th > 1 else np.ones(1)
            if Th > 1:
                base[s % Th] = acc
            jitter = rng.dirichlet(np.ones(Th) * 50.0)
            out[s, g] = 0.9 * base + 0.1 * jitter
    return out


def random_cost(rng, game, fam, kind):
    n = game.n_agents
    if kind == "MI":
        return CostScheme("MI", scale=-0.2)
    if kind == "CB":
        tabs = [-0.15 * np.arange(fam.cognition_counts[i]) * rng.uniform(0.5, 1.5) for i in range(n)]
    elif kind == "TB":
        tabs = [-0.1 * rng.random(fam.type_counts[i]) for i in range(n)]
    elif kind == "STB":
        tabs = [-0.1 * rng.random((game.n_states, fam.type_counts[i])) for i in range(n)]
    elif kind == "SAB":
        tabs = [-0.1 * rng.random((game.n_states, game.action_counts[i])) for i in range(n)]
    else:
        raise ValueError(f"unknown cost kind {kind!r}")
    return CostScheme(kind, tuple(tabs))


def stage_game(payoffs, discount: float = 0.9, n_types: int = 1, n_menu: int = 1):
    """Repeated one-state game with uninformative signals and zero costs.

    ``payoffs`` has shape ``(n, A_1, ..., A_n)``.
    """
    payoffs = np.asarray(payoffs, float)
    n = payoffs.shape[0]
    acts = payoffs.shape[1:]
    game = BaseGame(payoffs[:, None], np.ones((1,) + acts + (1,)), np.ones(1), discount)
    H = game.n_histories
    rules = tuple(np.full((H, 1, n_menu, n_types), 1.0 / n_types) for _ in range(n))
    fam = SignalingFamily(rules)
    scheme = CostScheme("CB", tuple(np.zeros(n_menu) for _ in range(n)))
    return game, fam, scheme


def prisoners_dilemma(discount: float = 0.9):
    """Action 0 cooperates, action 1 defects; defection strictly dominates."""
    p1 = np.array([[3.0, 0.0], [5.0, 1.0]])
    return stage_game(np.stack([p1, p1.T]), discount)


def matching_pennies(discount: float = 0.9):
    p1 = np.array([[1.0, -1.0], [-1.0, 1.0]])
    return stage_game(np.stack([p1, -p1]), discount)


def zero_game(n_agents: int = 2, n_states: int = 2, n_actions: int = 2, n_types: int = 2,
              n_menu: int = 2, discount: float = 0.9, seed: int = 0):
    """All rewards and costs zero; random but valid transitions and signals."""
    game, fam, _ = random_instance(seed, n_agents, n_states, n_actions, n_types, n_menu, discount)
    game = BaseGame(np.zeros_like(game.rewards), game.transition, game.initial, discount)
    scheme = CostScheme("CB", tuple(np.zeros(n_menu) for _ in range(n_agents)))
    return game, fam, scheme


def single_agent(seed: int, n_states: int = 2, n_actions: int = 2, n_types: int = 2,
                 n_menu: int = 2, discount: float = 0.9, cost_kind: str = "CB"):
    """One decision maker choosing how precisely to observe the state."""
    return random_instance(seed, 1, n_states, n_actions, n_types, n_menu, discount, cost_kind)


def perfectly_informed(seed: int, n_agents: int = 2, discount: float = 0.9):
    """Reference-size game whose only menu item reveals the state (SAB cost)."""
    game, _, _ = random_instance(seed, n_agents=n_agents, discount=discount)
    H, S = game.n_histories, game.n_states
    eye = np.broadcast_to(np.eye(S)[:, None, :], (H, S, 1, S))
    fam = SignalingFamily(tuple(eye for _ in range(n_agents)))
    rng = np.random.default_rng(seed + 1000)
    scheme = CostScheme("SAB", tuple(-0.1 * rng.random((S, game.action_counts[i])) for i in range(n_agents)))
    return game, fam, scheme
