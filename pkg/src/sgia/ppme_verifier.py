"""Equilibrium checks: the two optimization characterizations and the direct test.

Two readings of the cognition-stage constraints are available through the
``form`` argument.

``form="menu"`` (default)
    The history value must weakly exceed the one-shot value of every menu
    item: choose ``g'`` at ``h`` this period, keep the action policy, and
    continue with the candidate ``J``.  With the stage-two constraint this
    makes ``Z = 0`` on the feasible set equivalent to the direct test.

``form="printed"``
    The type-indexed bounds ``J(h) >= sum_{s, theta_-i} V(h, theta_i,
    theta_-i) tau_-i T`` and ``J(h) >= IJ_i(h, theta_i; J)``.  These compare
    the history value against single-type continuations rather than against
    alternative menu items, so they reject equilibria whenever values differ
    across own types.  Kept for comparison.

Pure-action deviations suffice in the stage-two checks: the opponent-expected
value is linear in ``pi_i(. | theta_i)``, so its maximum over the simplex is
attained at a vertex.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .beliefs import BeliefTables, Selection
from .game_model import SIMPLEX_TOL, StrategyProfile, Violation
from .value_engine import (
    evaluate_tables,
    ij_i,
    ij_menu_table,
    iv_i,
    tables_for,
    _one_shot,
)

DEV_TOL = 1e-7
Z_TOL = 1e-7
INEQ_TOL = 1e-9
FORMS = ("menu", "printed")


@dataclass
class ConstraintReport:
    violations: list = field(default_factory=list)
    tol: float = INEQ_TOL
    max_violation: float = 0.0

    def add(self, code, where, magnitude):
        magnitude = float(magnitude)
        self.max_violation = max(self.max_violation, magnitude)
        if magnitude > self.tol:
            self.violations.append(Violation(code, tuple(int(w) for w in where), magnitude))

    @property
    def feasible(self) -> bool:
        return not self.violations

    def codes(self) -> set:
        return {v.code for v in self.violations}

    def as_dict(self):
        return {
            "feasible": self.feasible,
            "max_violation": self.max_violation,
            "tol": self.tol,
            "violations": [v.as_dict() for v in self.violations],
        }


@dataclass
class VerificationResult:
    z_value: float
    constraint_report: ConstraintReport
    is_ppme: bool
    deviation_witness: Optional[dict] = None

    def as_dict(self):
        return {
            "is_ppme": self.is_ppme,
            "z_value": self.z_value,
            "constraints": self.constraint_report.as_dict(),
            "deviation_witness": self.deviation_witness,
        }


def _check_form(form):
    if form not in FORMS:
        raise ValueError(f"form must be one of {FORMS}, got {form!r}")


def _simplex_report(report, arrays, code_neg, code_sum):
    for i, a in enumerate(arrays):
        a = np.asarray(a, float)
        neg = np.maximum(-a, 0.0)
        for idx in zip(*np.nonzero(neg > SIMPLEX_TOL)):
            report.add(code_neg, (i,) + idx, neg[idx])
        gap = np.abs(a.sum(axis=-1) - 1.0)
        for idx in zip(*np.nonzero(gap > SIMPLEX_TOL)):
            report.add(code_sum, (i,) + idx, gap[idx])
        if neg.size:
            report.max_violation = max(report.max_violation, float(neg.max()), float(gap.max()))


def _bold(tables: BeliefTables, i, V_i):
    """History value and action values induced by a candidate ``V_i``."""
    Jb = tables.history_value(V_i)
    return Jb, tables.q_values(i, Jb)


def objective_Z(pi, V, beta, fam, game, scheme, cost_tensor=None) -> float:
    """Prior-weighted gap between ``V`` and the policy average of the induced ``Q``."""
    sel = Selection.from_profile(game, fam, scheme, beta, cost_tensor)
    tables = BeliefTables(game, sel, pi)
    return _objective_Z(tables, V)


def _objective_Z(tables, V):
    total = 0.0
    for i, Vi in enumerate(V):
        Vi = np.asarray(Vi, float)
        _, Qb = _bold(tables, i, Vi)
        gap = Vi - tables.profile_values(i, Qb)
        total += float(np.einsum("ht,hst->", gap, tables.p))
    return total


def _stage_two(report, tables, V, code, positive_only, tol_mask=0.0):
    """Opponent-expected ``V`` against every pure deviation's expected ``Q``."""
    for i, Vi in enumerate(V):
        Vi = np.asarray(Vi, float)
        Jb, _ = _bold(tables, i, Vi)
        ev = tables.expect_over_opponents(i, Vi)
        dev = tables.deviation_values(i, Jb)
        mask = tables.positive(i, tol_mask) if positive_only else np.ones_like(ev, bool)
        excess = dev - ev[:, :, None]
        for h, k in zip(*np.nonzero(mask)):
            for a in range(excess.shape[2]):
                report.add(code, (i, h, k, a), excess[h, k, a])


def check_feasibility_K(pi, V, beta, fam, game, scheme, form: str = "menu", tol: float = INEQ_TOL,
                        cost_tensor=None, discount_in_ij: bool = True) -> ConstraintReport:
    """FE1/FE2, EQ1 and EQ2 at a candidate ``(pi, V)`` for fixed ``beta``."""
    _check_form(form)
    if cost_tensor is None:
        cost_tensor = scheme.tensor(game, fam)
    report = ConstraintReport(tol=tol)
    _simplex_report(report, pi, "FE1", "FE2")
    sel = Selection.from_profile(game, fam, scheme, beta, cost_tensor)
    tables = BeliefTables(game, sel, pi)
    profile = StrategyProfile(beta, pi)
    for i, Vi in enumerate(V):
        Vi = np.asarray(Vi, float)
        Jb, _ = _bold(tables, i, Vi)
        if form == "menu":
            alt = ij_menu_table(Jb, game, fam, scheme, profile, i, cost_tensor)
            for h in range(game.n_histories):
                for g in range(alt.shape[1]):
                    report.add("EQ1", (i, h, g), alt[h, g] - Jb[h])
        else:
            pos = tables.positive(i)
            for h, k in zip(*np.nonzero(pos)):
                report.add("EQ1", (i, h, k), iv_i(Vi, tables, i, h, k) - Jb[h])
    _stage_two(report, tables, V, "EQ2", positive_only=True)
    return report


def objective_Z_gfpa(tau_selected, J, V, pi, game, scheme, beta=None) -> float:
    """``sum_{i, h} (J_i(h) - sum_{theta, s} V_i(h, theta) tau(theta | s) T(s | h))``."""
    sel = Selection.from_tau(game, tau_selected, scheme, beta)
    tables = BeliefTables(game, sel, pi)
    return float(sum(np.sum(np.asarray(Ji) - tables.history_value(np.asarray(Vi)))
                     for Ji, Vi in zip(J, V)))


def check_feasibility_K_gfpa(tau_selected, J, V, pi, game, scheme, fam=None, beta=None,
                             form: str = "menu", tol: float = INEQ_TOL, discount_in_ij: bool = True,
                             cost_tensor=None) -> ConstraintReport:
    """RG1/RG2, EQ3 and EQ4 at a candidate ``(tau, J, V)`` for fixed ``pi``.

    In menu form EQ3 compares ``J`` with the one-shot value of the selected
    rule and of every item of ``fam``'s menu (``fam`` and ``beta`` required).
    """
    _check_form(form)
    report = ConstraintReport(tol=tol)
    _simplex_report(report, tau_selected, "RG1", "RG2")
    sel = Selection.from_tau(game, tau_selected, scheme, beta)
    tables = BeliefTables(game, sel, pi)
    for i, Ji in enumerate(J):
        Ji = np.asarray(Ji, float)
        if form == "menu":
            if fam is None or beta is None:
                raise ValueError("menu-form EQ3 needs the signaling family and beta")
            if cost_tensor is None:
                cost_tensor = scheme.tensor(game, fam)
            own = _one_shot(game, sel, pi, i, Ji)
            for h in range(game.n_histories):
                report.add("EQ3", (i, h, -1), own[h] - Ji[h])
            alt = ij_menu_table(Ji, game, fam, scheme, StrategyProfile(beta, pi), i, cost_tensor)
            for h in range(game.n_histories):
                for g in range(alt.shape[1]):
                    report.add("EQ3", (i, h, g), alt[h, g] - Ji[h])
        else:
            for h in range(game.n_histories):
                for k in range(sel.type_counts[i]):
                    report.add("EQ3", (i, h, k), ij_i(Ji, tables, i, h, k, discount_in_ij) - Ji[h])
    _stage_two(report, tables, V, "EQ4", positive_only=False)
    return report


# ---------------------------------------------------------------------------
# direct test


def _stage_two_gain(tables, vt, i):
    """Largest pure-deviation gain over positive-probability ``(h, theta_i)``, with its cell."""
    ev = tables.expect_over_opponents(i, vt.V[i])
    dev = tables.deviation_values(i, vt.J[i])
    gain = dev.max(axis=2) - ev
    gain = np.where(tables.positive(i), gain, -np.inf)
    h, k = np.unravel_index(np.argmax(gain), gain.shape)
    return float(gain[h, k]), int(h), int(k), int(np.argmax(dev[h, k]))


def verify_ppme_direct(profile, game, fam, scheme, dev_tol: float = DEV_TOL,
                       joint_deviation: bool = False, cost_tensor=None) -> VerificationResult:
    """Check stage-two optimality, then every single-history menu deviation with the policy held.

    With ``joint_deviation=True`` the cognition stage is instead compared
    against each agent's best response over both menu choices and actions.
    """
    if cost_tensor is None:
        cost_tensor = scheme.tensor(game, fam)
    report = ConstraintReport(tol=dev_tol)
    _simplex_report(report, profile.pi, "FE1", "FE2")
    if not report.feasible:
        return VerificationResult(float("nan"), report, False, None)
    tables = tables_for(game, fam, scheme, profile, cost_tensor)
    vt = evaluate_tables(tables)
    witness = None
    for i in range(game.n_agents):
        gain, h, k, a = _stage_two_gain(tables, vt, i)
        if gain > dev_tol:
            witness = {"agent": i, "h": h, "stage": "action", "theta_i": k, "deviation": a, "gain": gain}
            break
    if witness is None and not joint_deviation:
        witness = _stage_one_direct(profile, game, fam, scheme, vt, dev_tol, cost_tensor)
    if witness is None and joint_deviation:
        for i in range(game.n_agents):
            br = best_response(i, profile, game, fam, scheme, cost_tensor)
            diff = br.J - vt.J[i]
            h = int(np.argmax(diff))
            if diff[h] > dev_tol:
                witness = {"agent": i, "h": h, "stage": "joint", "deviation": None, "gain": float(diff[h])}
                break
    z = _objective_Z(tables, vt.V)
    return VerificationResult(z, report, witness is None, witness)


def _stage_one_direct(profile, game, fam, scheme, vt, dev_tol, cost_tensor):
    for i in range(game.n_agents):
        for h in range(game.n_histories):
            for g in range(fam.cognition_counts[i]):
                if g == profile.beta[i, h]:
                    continue
                alt = profile.with_beta(i, h, g)
                Jalt = evaluate_tables(tables_for(game, fam, scheme, alt, cost_tensor)).J[i]
                diff = Jalt - vt.J[i]
                worst = int(np.argmax(diff))
                if diff[worst] > dev_tol:
                    return {"agent": i, "h": h, "stage": "cognition", "deviation": g,
                            "gain": float(diff[worst]), "at": worst}
    return None


@dataclass(frozen=True)
class BestResponse:
    J: np.ndarray
    beta_i: np.ndarray
    pi_i: np.ndarray
    iterations: int


def best_response(i, profile, game, fam, scheme, cost_tensor=None, max_iters: int = 200) -> BestResponse:
    """Agent ``i``'s optimal menu choice and pure action rule against fixed opponents.

    Policy iteration on the single-agent problem whose state is the history.
    """
    if cost_tensor is None:
        cost_tensor = scheme.tensor(game, fam)
    A = game.action_counts[i]
    cur = profile
    for it in range(max_iters):
        J = evaluate_tables(tables_for(game, fam, scheme, cur, cost_tensor)).J[i]
        best_val = np.full(game.n_histories, -np.inf)
        best_g = np.array(cur.beta[i])
        best_pi = np.array(cur.pi[i])
        for g in range(fam.cognition_counts[i]):
            beta = np.array(cur.beta)
            beta[i, :] = g
            tab = BeliefTables(game, Selection.from_profile(game, fam, scheme, beta, cost_tensor), cur.pi)
            dev = tab.deviation_values(i, J) * tab.type_prob[i][:, :, None]
            val = dev.max(axis=2).sum(axis=1)
            choice = np.argmax(dev, axis=2)
            better = val > best_val + 1e-12
            # keep the current choice on near-ties so the iteration terminates
            if g == 0:
                better = np.ones_like(better)
            best_val = np.where(better, val, best_val)
            best_g = np.where(better, g, best_g)
            best_pi = np.where(better[:, None, None], np.eye(A)[choice], best_pi)
        new = cur.with_pi(i, best_pi)
        beta = np.array(cur.beta)
        beta[i] = best_g
        new = StrategyProfile(beta, new.pi)
        Jn = evaluate_tables(tables_for(game, fam, scheme, new, cost_tensor)).J[i]
        if np.max(Jn - J) <= 1e-12:
            J = np.maximum(J, Jn)
            return BestResponse(J, np.array(new.beta[i]), np.array(new.pi[i]), it + 1)
        cur = new
    return BestResponse(Jn, np.array(cur.beta[i]), np.array(cur.pi[i]), max_iters)


def cross_check_propositions(profile, game, fam, scheme, tol: float = Z_TOL, form: str = "menu",
                             cost_tensor=None) -> dict:
    """Both optimization characterizations and the direct test on one profile."""
    if cost_tensor is None:
        cost_tensor = scheme.tensor(game, fam)
    tables = tables_for(game, fam, scheme, profile, cost_tensor)
    vt = evaluate_tables(tables)
    z = _objective_Z(tables, vt.V)
    k = check_feasibility_K(profile.pi, vt.V, profile.beta, fam, game, scheme, form,
                            cost_tensor=cost_tensor)
    z2 = objective_Z_gfpa(tables.sel.tau, vt.J, vt.V, profile.pi, game, scheme, profile.beta)
    k2 = check_feasibility_K_gfpa(tables.sel.tau, vt.J, vt.V, profile.pi, game, scheme, fam,
                                  profile.beta, form, cost_tensor=cost_tensor)
    opt = abs(z) <= tol and k.feasible
    gfpa = abs(z2) <= tol and k2.feasible
    direct = verify_ppme_direct(profile, game, fam, scheme, cost_tensor=cost_tensor)
    return {
        "opt_holds": opt,
        "gfpa_holds": gfpa,
        "agree": opt == gfpa,
        "direct_is_ppme": direct.is_ppme,
        "z": z,
        "z_gfpa": z2,
        "opt_violations": sorted(k.codes()),
        "gfpa_violations": sorted(k2.codes()),
        "failing_side": None if opt == gfpa else ("gfpa" if opt else "opt"),
    }
