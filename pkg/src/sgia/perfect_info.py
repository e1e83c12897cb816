"""Perfect-information structure, the value-preserving transformation and the U-map.

All quantities are stationary and history-indexed: the induced action rule
``pi*_i(a_i | s, h)`` and the state-action cost ``C*_i(h, s, a_i)`` carry the
history because the generating profile does.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .beliefs import BeliefTables, Selection
from .game_model import (
    SIMPLEX_TOL,
    BaseGame,
    ContractError,
    CostScheme,
    SignalingFamily,
    StrategyProfile,
    validate_signaling_family,
)
from .ppme_verifier import VerificationResult, verify_ppme_direct
from .value_engine import evaluate_tables, tables_for


@dataclass(frozen=True, eq=False)
class PerfectInfoScheme:
    """Menu whose item ``g_star`` (index 0) reveals the state to its holder."""

    family: SignalingFamily
    g_star: tuple

    @property
    def xi(self) -> tuple:
        return tuple(r[:, :, g] for r, g in zip(self.family.rules, self.g_star))


def make_perfect_info_scheme(game: BaseGame, extra_items=None) -> PerfectInfoScheme:
    """Identity rules ``tau_i(s | s) = 1`` on ``Theta_i = S``.

    ``extra_items[i]``, if given, is an ``(H, S, G', S)`` array of further menu
    items placed after the perfect-information item.
    """
    H, S = game.n_histories, game.n_states
    eye = np.broadcast_to(np.eye(S)[None, :, None, :], (H, S, 1, S))
    rules = []
    for i in range(game.n_agents):
        r = np.array(eye)
        if extra_items is not None and extra_items[i] is not None:
            extra = np.asarray(extra_items[i], float)
            if extra.shape[-1] != S:
                raise ContractError("extra menu items must have one type per state")
            r = np.concatenate([r, extra], axis=2)
        rules.append(r)
    fam = SignalingFamily(tuple(rules), history_dependent=extra_items is not None)
    report = validate_signaling_family(game, fam)
    if not report.ok:
        raise ContractError(f"perfect-information family invalid: {report.codes()}")
    return PerfectInfoScheme(fam, tuple(0 for _ in range(game.n_agents)))


@dataclass(frozen=True)
class WValues:
    """``W[i][h, s, a]``: realized value of ``(s, a)`` reached from ``h``, before the next period."""

    W: tuple


def w_value(game, fam, scheme, profile, cost_tensor=None) -> WValues:
    """``W_i = R_i(s, a) + E[c_i | h, s, a] + delta J_i(s, a)`` under the profile."""
    tables = tables_for(game, fam, scheme, profile, cost_tensor)
    vt = evaluate_tables(tables)
    out = []
    for i in range(game.n_agents):
        c_exp, _ = _conditional_cost(tables, profile, i, joint=True)
        nxt = game.discount * vt.J[i].reshape(game.n_states, game.n_joint)
        out.append(game.reward_flat[i][None] + c_exp + nxt[None])
    return WValues(tuple(out))


def _own_action_given_state(tables, profile, i):
    """``f_i[h, s, a_i] = sum_theta tau_i(theta | s, h) pi_i(a_i | theta, h)``."""
    return np.einsum("hsk,hka->hsa", tables.sel.tau[i], profile.pi[i])


def _conditional_cost(tables, profile, i, joint=False):
    """``E[c_i | h, s, a_i]`` (or broadcast over the joint action) and a mask of zero-probability cells."""
    tau, pi, c = tables.sel.tau[i], profile.pi[i], tables.sel.cost[i]
    mass = np.einsum("hsk,hka->hsa", tau, pi)
    num = np.einsum("hsk,hka,hska->hsa", tau, pi, c)
    zero = mass <= 0
    with np.errstate(invalid="ignore", divide="ignore"):
        cstar = np.where(zero, 0.0, num / np.where(zero, 1.0, mass))
    if joint:
        cstar = cstar[:, :, tables.action_grid[:, i]]
        zero = zero[:, :, tables.action_grid[:, i]]
    return cstar, zero


@dataclass
class Transformation:
    pi_scheme: PerfectInfoScheme
    pi_star: tuple  # per agent (H, S, A_i)
    sab_cost: CostScheme  # history-indexed SAB tables (H, S, A_i)
    zero_cells: tuple  # per agent boolean (H, S, A_i)
    max_value_gap: float
    J_original: tuple
    J_transformed: tuple
    warnings: list = field(default_factory=list)

    def profile(self) -> StrategyProfile:
        H = self.pi_star[0].shape[0]
        return StrategyProfile(np.array([[g] * H for g in self.pi_scheme.g_star]), self.pi_star)

    def report(self) -> dict:
        return {
            "max_value_gap": self.max_value_gap,
            "value_equal": self.max_value_gap <= 1e-6,
            "zero_probability_cells": [np.argwhere(z).tolist() for z in self.zero_cells],
            "warnings": self.warnings,
        }


def transform_to_pi_ppme(game, fam, scheme, ppme_profile, extra_items=None, check: bool = True) -> Transformation:
    """Perfect-information profile with the same history values as ``ppme_profile``.

    Types are marginalized out of the generating measure one period at a
    time: ``pi*`` is each agent's action distribution given the state and
    ``C*`` the expected cognition cost given state and own action.
    """
    ct = scheme.tensor(game, fam)
    warnings = []
    if check and not verify_ppme_direct(ppme_profile, game, fam, scheme, cost_tensor=ct).is_ppme:
        warnings.append("input profile is not a PPME")
    tables = tables_for(game, fam, scheme, ppme_profile, ct)
    J_orig = evaluate_tables(tables).J
    pi_star, tabs, zeros = [], [], []
    for i in range(game.n_agents):
        pi_star.append(_own_action_given_state(tables, ppme_profile, i))
        cstar, zero = _conditional_cost(tables, ppme_profile, i)
        tabs.append(cstar)
        zeros.append(zero)
    if any(z.any() for z in zeros):
        warnings.append("zero-probability (s, a_i) cells given cost 0")
    pis = make_perfect_info_scheme(game, extra_items)
    sab = CostScheme("SAB", tuple(tabs))
    H = game.n_histories
    prof = StrategyProfile(np.array([[0] * H for _ in range(game.n_agents)]), tuple(pi_star))
    J_pi = evaluate_tables(tables_for(game, pis.family, sab, prof)).J
    gap = max(float(np.max(np.abs(a - b))) for a, b in zip(J_orig, J_pi))
    return Transformation(pis, tuple(pi_star), sab, tuple(zeros), gap, tuple(J_orig), tuple(J_pi), warnings)


def verify_pi_ppme(game, pi_scheme: PerfectInfoScheme, pi_star, sab_cost, dev_tol: float = 1e-7) -> VerificationResult:
    """Direct test in the perfect-information game, where each agent's type is the state."""
    H = game.n_histories
    prof = StrategyProfile(np.array([[g] * H for g in pi_scheme.g_star]), tuple(pi_star))
    return verify_ppme_direct(prof, game, pi_scheme.family, sab_cost, dev_tol=dev_tol)


def pi_values(game, pi_scheme, pi_star, sab_cost) -> tuple:
    """History values ``J*_i(h)`` of the perfect-information profile."""
    H = game.n_histories
    prof = StrategyProfile(np.array([[g] * H for g in pi_scheme.g_star]), tuple(pi_star))
    return evaluate_tables(tables_for(game, pi_scheme.family, sab_cost, prof)).J


# ---------------------------------------------------------------------------
# U-map


def type_values(game, tau, pi, J_star, sab_cost) -> list:
    """``bold V_i[h, theta_i]``: posterior one-period value of each own type with continuation ``J*``.

    ``sum_{s, theta_-i, a} (R_i + C*_i + delta J*_i(s, a)) pi(a | theta)
    mu_i(s, theta_-i | theta_i)``.
    """
    sel = Selection.from_tau(game, tau, sab_cost)
    tables = BeliefTables(game, sel, pi)
    out = []
    for i in range(game.n_agents):
        X = tables.integrand(i, J_star[i])[:, :, tables.type_grid[:, i], :]
        out.append(np.einsum("hst,hta,hsta,tk->hk", tables.post[i], tables.pi_joint, X, tables.type_maps[i]))
    return out


def _check_rules(tau):
    for t in tau:
        t = np.asarray(t)
        if np.any(t < -SIMPLEX_TOL) or np.any(np.abs(t.sum(-1) - 1) > SIMPLEX_TOL):
            raise ContractError("u_map needs rules on the simplex")


def normalized_update(tau, excess):
    """``(tau + excess) / (1 + sum excess)`` with ``excess`` broadcast over the state axis.

    ``tau`` is ``(H, S, Theta)`` and ``excess`` is ``(H, Theta)``, nonnegative.
    """
    tau = np.asarray(tau, float)
    excess = np.asarray(excess, float)
    return (tau + excess[:, None, :]) / (1.0 + excess.sum(axis=1))[:, None, None]


def u_map(game, tau, pi, J_star, sab_cost):
    """One application of the normalized excess-value update.

    Returns ``(new_tau, excess)``.  The excess ``max(0, bold V - J*(h))`` does
    not depend on the state, so updating each row ``tau_i(. | s, h)`` keeps
    the state-marginal type distribution equal to the update of the marginal.
    """
    _check_rules(tau)
    vals = type_values(game, tau, pi, J_star, sab_cost)
    new, excess = [], []
    for i, t in enumerate(tau):
        ex = np.maximum(0.0, vals[i] - np.asarray(J_star[i])[:, None])
        new.append(normalized_update(t, ex))
        excess.append(ex)
    return new, excess


def u_map_marginal(game, tau, pi, J_star, sab_cost):
    """The update read on state-marginal type probabilities ``sum_s tau(theta | s, h) T(s | h)``."""
    T = game.transition_by_history
    new, _ = u_map(game, tau, pi, J_star, sab_cost)
    before = [np.einsum("hsk,hs->hk", np.asarray(t), T) for t in tau]
    after = [np.einsum("hsk,hs->hk", t, T) for t in new]
    return before, after


@dataclass
class FixedPointResult:
    tau: list
    residual: float
    iterations: int
    converged: bool
    verification: Optional[VerificationResult] = None
    assembled: Optional[tuple] = None  # (family, scheme, profile)

    def report(self) -> dict:
        return {
            "residual": self.residual,
            "iterations": self.iterations,
            "converged": self.converged,
            "assembled_is_ppme": None if self.verification is None else self.verification.is_ppme,
            "agrees_with_fixed_point": None if self.verification is None
            else bool(self.verification.is_ppme == self.converged),
        }


def assemble_profile(game, tau, pi_star, sab_cost):
    """Single-item menu holding ``tau`` with actions ``pi*`` read as type-conditional rules."""
    fam = SignalingFamily(tuple(np.asarray(t)[:, :, None, :] for t in tau), history_dependent=True)
    H = game.n_histories
    prof = StrategyProfile(np.zeros((game.n_agents, H), dtype=int), tuple(pi_star))
    return fam, sab_cost, prof


def find_fp_tau(game, pi_scheme, pi_star, init_tau, max_iters: int = 10000, sab_cost=None,
                J_star=None, alpha: float = 0.5, tol: float = 1e-9, verify: bool = True) -> FixedPointResult:
    """Damped iteration ``tau <- (1 - alpha) tau + alpha U(tau)`` from ``init_tau``."""
    if sab_cost is None:
        raise ContractError("find_fp_tau needs the SAB cost of the perfect-information profile")
    if J_star is None:
        J_star = pi_values(game, pi_scheme, pi_star, sab_cost)
    tau = [np.array(t, float) for t in init_tau]
    best_tau, best_res = tau, np.inf
    it = 0
    for it in range(max_iters + 1):
        new, _ = u_map(game, tau, pi_star, J_star, sab_cost)
        res = max(float(np.max(np.abs(a - b))) for a, b in zip(new, tau))
        if res < best_res:
            best_tau, best_res = tau, res
        if res <= tol or it == max_iters:
            break
        tau = [(1 - alpha) * a + alpha * b for a, b in zip(tau, new)]
    result = FixedPointResult(best_tau, best_res, it, best_res <= tol)
    if verify:
        fam, scheme, prof = assemble_profile(game, best_tau, pi_star, sab_cost)
        result.verification = verify_ppme_direct(prof, game, fam, scheme)
        result.assembled = (fam, scheme, prof)
    return result
