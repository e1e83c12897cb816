"""Local fixed-point alignment: misalignment terms, multipliers and the admissibility certificate.

The type-level layer follows the per-cell construction: for agent ``i`` at
``(s, h)`` the local vector is ``X = (J_i(h), V_i(h, .), tau_-i(. | s, h))``
and the misalignment of own type ``theta_i`` is

    lambda(theta_i) = J_i(h) - sum_{theta_-i, s'} V_i(h, theta_i, theta_-i)
                                   tau_-i(theta_-i | s', h) T(s' | h),

where the ``s' = s`` term reads ``tau_-i`` from ``X`` and the other terms
from the surrounding selection.

Complementarity ``tau_i(theta_i | s) lambda(theta_i) = 0`` at this level is
not implied by equilibrium once values differ across own types, so the
default gate (``mode="menu"``) applies the same multiplier construction to
menu-level misalignments ``lambda(g) = J_i(h) - IJ(h, g; J_i)``, weighted by
the indicator of the chosen item, together with sign conditions on both
``lambda`` and the stage-two gap ``gamma``.  ``mode="printed"`` gates on the
type-level system and the product condition ``pi * gamma = 0`` alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .beliefs import BeliefTables, Selection, ZeroProbabilityType
from .game_model import SIMPLEX_TOL, BaseGame, CostScheme, StrategyProfile
from .value_engine import evaluate_tables, ij_menu_table, tables_for

KKT_TOL = 1e-8
PIVOT_TOL = 1e-10
MODES = ("menu", "printed")


def decompose_types(types):
    """Split a type set into ``(natural, hat)`` with the last type as ``hat``."""
    types = list(range(types)) if isinstance(types, (int, np.integer)) else list(types)
    if not types:
        raise ValueError("type set must be non-empty")
    return types[:-1], types[-1]


@dataclass(frozen=True, eq=False)
class LocalPoint:
    """Local vector of agent ``i`` at cell ``(s, h)`` plus the context needed to evaluate it."""

    X: np.ndarray
    tau_i: np.ndarray
    agent: int
    s: int
    h: int
    g: Optional[tuple]
    T_h: np.ndarray  # (S,)
    tau_minus: np.ndarray  # (S, n_opp) opponents' joint rule at every state
    own_of_profile: np.ndarray  # (n_theta,) own type of each profile
    opp_of_profile: np.ndarray  # (n_theta,) opponent profile index of each profile

    @property
    def n_profiles(self) -> int:
        return self.own_of_profile.size

    @property
    def n_opp(self) -> int:
        return self.tau_minus.shape[1]

    @property
    def n_types(self) -> int:
        return self.tau_i.size

    def parts(self):
        nt = self.n_profiles
        return self.X[0], self.X[1:1 + nt], self.X[1 + nt:]

    def with_X(self, X) -> "LocalPoint":
        return LocalPoint(np.asarray(X, float), self.tau_i, self.agent, self.s, self.h, self.g,
                          self.T_h, self.tau_minus, self.own_of_profile, self.opp_of_profile)

    def with_tau_i(self, tau_i) -> "LocalPoint":
        return LocalPoint(self.X, np.asarray(tau_i, float), self.agent, self.s, self.h, self.g,
                          self.T_h, self.tau_minus, self.own_of_profile, self.opp_of_profile)

    def opponent_marginal(self) -> np.ndarray:
        """``P_-i(theta_-i | h)`` with the ``s`` slice taken from ``X``."""
        _, _, tm_s = self.parts()
        tm = np.array(self.tau_minus)
        tm[self.s] = tm_s
        return self.T_h @ tm


def _opp_index(counts, i):
    grid = np.indices(counts).reshape(len(counts), -1).T
    others = [j for j in range(len(counts)) if j != i]
    oc = tuple(counts[j] for j in others)
    if not others:
        return grid[:, i], np.zeros(grid.shape[0], dtype=int), 1
    return grid[:, i], np.ravel_multi_index(tuple(grid[:, others].T), oc), int(np.prod(oc))


def opponent_rule(sel: Selection, i, h) -> np.ndarray:
    """``(S, n_opp)`` joint rule of agent ``i``'s opponents at history ``h``."""
    S = sel.tau[0].shape[1]
    out = np.ones((S, 1))
    for j, t in enumerate(sel.tau):
        if j == i:
            continue
        out = (out[:, :, None] * t[h][:, None, :]).reshape(S, -1)
    return out


def local_point(sel: Selection, T, J_i, V_i, i, s, h) -> LocalPoint:
    """Assemble the local vector of agent ``i`` at ``(s, h)`` from a selection and candidates."""
    own, opp, _ = _opp_index(sel.type_counts, i)
    tm = opponent_rule(sel, i, h)
    X = np.concatenate([[float(J_i[h])], np.asarray(V_i[h], float), tm[s]])
    g = None if sel.beta is None else tuple(int(x) for x in sel.beta[:, h])
    return LocalPoint(X, np.array(sel.tau[i][h, s]), i, s, h, g, np.asarray(T[h]), tm, own, opp)


def lambda_all(point: LocalPoint) -> np.ndarray:
    J, V, _ = point.parts()
    P = point.opponent_marginal()
    iv = np.zeros(point.n_types)
    np.add.at(iv, point.own_of_profile, V * P[point.opp_of_profile])
    return J - iv


def lambda_i(point: LocalPoint, theta_i) -> float:
    return float(lambda_all(point)[theta_i])


def lambda_gradients(point: LocalPoint) -> np.ndarray:
    """``(Theta_i, |X|)`` matrix of analytic gradients of ``lambda`` with respect to ``X``."""
    _, V, _ = point.parts()
    P = point.opponent_marginal()
    nt = point.n_profiles
    G = np.zeros((point.n_types, point.X.size))
    G[:, 0] = 1.0
    for t in range(nt):
        k, o = point.own_of_profile[t], point.opp_of_profile[t]
        G[k, 1 + t] = -P[o]
        G[k, 1 + nt + o] = -V[t] * point.T_h[point.s]
    return G


def z_lfpa(point: LocalPoint) -> float:
    return float(np.dot(lambda_all(point), point.tau_i))


def z_lfpa_tau_gradient(point: LocalPoint) -> np.ndarray:
    """Derivative of ``Z^LFPA`` in ``tau_i(theta)`` for natural ``theta`` with ``hat`` substituted."""
    lam = lambda_all(point)
    nat, hat = decompose_types(point.n_types)
    return lam[nat] - lam[hat]


def z_lfpa_reduced(point: LocalPoint, tau_natural) -> float:
    """``Z^LFPA`` as a function of the natural coordinates only (``hat`` absorbs the remainder)."""
    tau_natural = np.asarray(tau_natural, float)
    tau = np.append(tau_natural, 1.0 - tau_natural.sum())
    return float(np.dot(lambda_all(point), tau))


@dataclass(frozen=True)
class Multipliers:
    e: float
    b: np.ndarray  # natural types
    f: np.ndarray  # all types

    def as_dict(self):
        return {"e": float(self.e), "b": self.b.tolist(), "f": self.f.tolist()}


def _kkt(lam, weights, grads, mult: Multipliers):
    """Stationarity and complementarity residuals of the generic weighted-misalignment system."""
    nat, hat = decompose_types(len(lam))
    delta = weights @ grads - mult.f @ grads
    D = mult.b - mult.e + (lam[nat] - lam[hat])
    F = np.concatenate([delta, D])
    K = np.concatenate([[mult.e * weights[hat]], mult.b * weights[nat], mult.f * lam])
    return F, K


def _recover(lam, weights) -> Multipliers:
    nat, hat = decompose_types(len(lam))
    return Multipliers(float(-lam[hat]), -np.asarray(lam)[nat], np.array(weights, float))


def lagrangian_residuals(point: LocalPoint, mult: Multipliers):
    """``(Delta, D)``: gradient of the Lagrangian in ``X`` and in natural ``tau_i`` coordinates."""
    lam = lambda_all(point)
    F, _ = _kkt(lam, point.tau_i, lambda_gradients(point), mult)
    return F[: point.X.size], F[point.X.size:]


def recover_multipliers(point: LocalPoint) -> Multipliers:
    return _recover(lambda_all(point), point.tau_i)


@dataclass(frozen=True)
class RRecord:
    F_norm: float
    K_norm: float
    passed: bool
    multipliers: Multipliers
    lam: np.ndarray
    z: float

    def as_dict(self):
        return {"F": self.F_norm, "K": self.K_norm, "pass": self.passed,
                "multipliers": self.multipliers.as_dict(), "lambda": self.lam.tolist(), "z": self.z}


def check_R(point: LocalPoint, tol: float = KKT_TOL) -> RRecord:
    lam = lambda_all(point)
    mult = _recover(lam, point.tau_i)
    F, K = _kkt(lam, point.tau_i, lambda_gradients(point), mult)
    Fn = float(np.max(np.abs(F))) if F.size else 0.0
    Kn = float(np.max(np.abs(K)))
    return RRecord(Fn, Kn, Fn <= tol and Kn <= tol, mult, lam, float(np.dot(lam, point.tau_i)))


def row_rank(M, pivot_tol: float = PIVOT_TOL) -> int:
    """Numerical rank by Gaussian elimination with partial pivoting."""
    A = np.array(M, float)
    rows, cols = A.shape
    rank = 0
    for c in range(cols):
        if rank == rows:
            break
        p = rank + int(np.argmax(np.abs(A[rank:, c])))
        if abs(A[p, c]) <= pivot_tol:
            continue
        A[[rank, p]] = A[[p, rank]]
        A[rank + 1:] -= np.outer(A[rank + 1:, c] / A[rank, c], A[rank])
        rank += 1
    return rank


def check_gradient_independence(point: LocalPoint, pivot_tol: float = PIVOT_TOL) -> dict:
    G = lambda_gradients(point)
    r = row_rank(G, pivot_tol)
    return {"rank": r, "required": point.n_types, "pass": r == point.n_types}


# ---------------------------------------------------------------------------
# stage-two gap


def gamma_table(tables: BeliefTables, i, J_i, V_i) -> np.ndarray:
    """``gamma[h, theta_i, a_i]``: opponent-expected ``V`` minus the deviation value under ``J``."""
    ev = tables.expect_over_opponents(i, np.asarray(V_i, float))
    return ev[:, :, None] - tables.deviation_values(i, np.asarray(J_i, float))


def gamma_i(J, V, pi, sel: Selection, game, i, theta_i, a_i, h) -> float:
    tables = BeliefTables(game, sel, pi)
    if tables.type_prob[i][h, theta_i] <= 0:
        g = () if sel.beta is None else tuple(sel.beta[:, h])
        raise ZeroProbabilityType(i, theta_i, h, g)
    return float(gamma_table(tables, i, J[i], V[i])[h, theta_i, a_i])


def check_R_dagger(pi, J, V, tables: BeliefTables, tol: float = KKT_TOL,
                   require_sign: bool = True) -> dict:
    """Product complementarity ``pi * gamma = 0`` on positive-probability types.

    With ``require_sign`` the gap must also be nonnegative, i.e. no pure
    deviation beats the opponent-expected value.
    """
    violations = []
    worst_prod, worst_sign = 0.0, 0.0
    fe_ok = all(np.all(np.asarray(p) >= -SIMPLEX_TOL) and
                np.all(np.abs(np.asarray(p).sum(-1) - 1) <= SIMPLEX_TOL) for p in pi)
    residuals = []
    for i in range(len(pi)):
        gam = gamma_table(tables, i, J[i], V[i])
        pos = tables.positive(i)[:, :, None]
        prod = np.where(pos, np.asarray(pi[i]) * gam, 0.0)
        residuals.append(prod)
        worst_prod = max(worst_prod, float(np.max(np.abs(prod))))
        neg = np.where(pos, np.maximum(-gam, 0.0), 0.0)
        worst_sign = max(worst_sign, float(neg.max()))
        for h, k, a in zip(*np.nonzero(np.abs(prod) > tol)):
            violations.append(("PI_GAMMA", i, int(h), int(k), int(a), float(prod[h, k, a])))
        if require_sign:
            for h, k, a in zip(*np.nonzero(neg > tol)):
                violations.append(("GAMMA_SIGN", i, int(h), int(k), int(a), float(-gam[h, k, a])))
    return {"pass": fe_ok and not violations, "fe_feasible": fe_ok, "max_product": worst_prod,
            "max_negative_gap": worst_sign, "violations": violations, "residuals": residuals}


# ---------------------------------------------------------------------------
# certificate


@dataclass
class AdmissibilityCertificate:
    mode: str
    admissible: bool
    scale: float
    records: dict = field(default_factory=dict)  # (i, s, h) -> RRecord, type level
    menu_records: dict = field(default_factory=dict)  # (i, h) -> dict, menu level
    gamma_residuals: list = field(default_factory=list)
    dagger: dict = field(default_factory=dict)
    independence: dict = field(default_factory=dict)
    menu_independence: dict = field(default_factory=dict)
    alignment: float = 0.0
    feasibility: dict = field(default_factory=dict)
    reasons: list = field(default_factory=list)

    @property
    def independence_holds(self) -> bool:
        src = self.menu_independence if self.mode == "menu" else self.independence
        return all(r["pass"] for r in src.values())

    def summary(self) -> dict:
        return {
            "mode": self.mode,
            "admissible": self.admissible,
            "scale": self.scale,
            "reasons": self.reasons,
            "type_level": {
                "max_F": max((r.F_norm for r in self.records.values()), default=0.0),
                "max_K": max((r.K_norm for r in self.records.values()), default=0.0),
                "all_pass": all(r.passed for r in self.records.values()),
            },
            "menu_level": {
                "max_F": max((r["F"] for r in self.menu_records.values()), default=0.0),
                "max_K": max((r["K"] for r in self.menu_records.values()), default=0.0),
                "min_lambda": min((r["min_lambda"] for r in self.menu_records.values()), default=0.0),
            },
            "max_pi_gamma": self.dagger.get("max_product", 0.0),
            "max_negative_gap": self.dagger.get("max_negative_gap", 0.0),
            "alignment_residual": self.alignment,
            "independence_holds": self.independence_holds,
            "feasibility": self.feasibility,
        }

    def as_dict(self) -> dict:
        out = self.summary()
        out["cells"] = [
            {"agent": k[0], "s": k[1], "h": k[2], **r.as_dict()} for k, r in sorted(self.records.items())
        ]
        out["menu_cells"] = [{"agent": k[0], "h": k[1], **r} for k, r in sorted(self.menu_records.items())]
        return out


def _menu_gradients(game, fam, scheme, profile, i, cost_tensor):
    """Gradient of ``lambda(h, g) = J(h) - IJ(h, g; J)`` in the full ``J`` vector, per ``h``."""
    H = game.n_histories
    # IJ is affine in J, so its Jacobian is read off from unit vectors
    base = ij_menu_table(np.zeros(H), game, fam, scheme, profile, i, cost_tensor)
    jac = np.empty((H, base.shape[1], H))
    for k in range(H):
        e = np.zeros(H)
        e[k] = 1.0
        jac[:, :, k] = ij_menu_table(e, game, fam, scheme, profile, i, cost_tensor) - base
    eye = np.eye(H)
    return eye[:, None, :] - jac, base


def check_local_admissibility(tau, pi, J, V, game, scheme, fam=None, beta=None, mode: str = "menu",
                              tol: float = KKT_TOL, cost_tensor=None) -> AdmissibilityCertificate:
    """Certificate for a point ``(tau, pi, J, V)``.

    ``tau`` is the per-history selected rule of every agent.  Values are
    divided by ``max |R + C|`` before any tolerance is applied, and the
    factor is recorded.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    sel = Selection.from_tau(game, tau, scheme, beta)
    raw = BeliefTables(game, sel, pi)
    zero = np.zeros(game.n_histories)
    scale = max(float(np.max(np.abs(raw.integrand(i, zero)))) for i in range(game.n_agents))
    scale = scale if scale > 0 else 1.0
    Jn = [np.asarray(j, float) / scale for j in J]
    Vn = [np.asarray(v, float) / scale for v in V]
    # every condition is homogeneous in (R, C, J, V), so work in the rescaled game
    g_n = BaseGame(game.rewards / scale, game.transition, game.initial, game.discount)
    sel_n = Selection(sel.tau, tuple(c / scale for c in sel.cost), sel.beta)
    tables = BeliefTables(g_n, sel_n, pi)
    T = game.transition_by_history
    cert = AdmissibilityCertificate(mode=mode, admissible=False, scale=scale)

    fe = all(np.all(np.asarray(p) >= -SIMPLEX_TOL) and np.all(np.abs(np.asarray(p).sum(-1) - 1) <= SIMPLEX_TOL)
             for p in pi)
    rg = all(np.all(t >= -SIMPLEX_TOL) and np.all(np.abs(t.sum(-1) - 1) <= SIMPLEX_TOL) for t in sel.tau)
    cert.feasibility = {"FE": bool(fe), "RG": bool(rg)}

    for i in range(game.n_agents):
        for h in range(game.n_histories):
            for s in range(game.n_states):
                pt = local_point(sel_n, T, Jn[i], Vn[i], i, s, h)
                cert.records[(i, s, h)] = check_R(pt, tol)
                cert.independence[(i, s, h)] = check_gradient_independence(pt)

    cert.dagger = check_R_dagger(pi, Jn, Vn, tables, tol, require_sign=(mode == "menu"))
    cert.gamma_residuals = cert.dagger.pop("residuals")

    align = 0.0
    for i in range(game.n_agents):
        Q = tables.q_values(i, Jn[i])
        align = max(align, float(np.max(np.abs(Vn[i] - tables.profile_values(i, Q)))))
    cert.alignment = align

    if mode == "menu":
        if fam is None or beta is None:
            raise ValueError("menu-mode admissibility needs the signaling family and beta")
        scheme_n = _scaled_scheme(scheme, scale)
        ct = [c / scale for c in (cost_tensor if cost_tensor is not None else scheme.tensor(game, fam))]
        profile = StrategyProfile(beta, pi)
        ok = fe and rg
        for i in range(game.n_agents):
            grads, _ = _menu_gradients(g_n, fam, scheme_n, profile, i, ct)
            alt = ij_menu_table(Jn[i], g_n, fam, scheme_n, profile, i, ct)
            for h in range(game.n_histories):
                lam = Jn[i][h] - alt[h]
                rho = np.eye(alt.shape[1])[int(beta[i, h])]
                mult = _recover(lam, rho)
                F, K = _kkt(lam, rho, grads[h], mult)
                rec = {"F": float(np.max(np.abs(F))), "K": float(np.max(np.abs(K))),
                       "min_lambda": float(lam.min()), "lambda": lam.tolist(),
                       "multipliers": mult.as_dict()}
                rec["pass"] = rec["F"] <= tol and rec["K"] <= tol and rec["min_lambda"] >= -tol
                cert.menu_records[(i, h)] = rec
                r = row_rank(grads[h])
                cert.menu_independence[(i, h)] = {"rank": r, "required": alt.shape[1], "pass": r == alt.shape[1]}
                ok = ok and rec["pass"]
        if not ok:
            cert.reasons.append("menu-level alignment")
        if not cert.dagger["pass"]:
            cert.reasons.append("stage-two complementarity")
        if align > tol:
            cert.reasons.append("V not aligned with J")
        cert.admissible = bool(ok and cert.dagger["pass"] and align <= tol)
    else:
        ok = fe and rg and all(r.passed for r in cert.records.values())
        if not ok:
            cert.reasons.append("type-level F/K")
        if not cert.dagger["pass"]:
            cert.reasons.append("stage-two complementarity")
        cert.admissible = bool(ok and cert.dagger["pass"])
    return cert


def _scaled_scheme(scheme, scale):
    if scheme.kind == "MI":
        return CostScheme("MI", scale=scheme.scale / scale)
    return CostScheme(scheme.kind, tuple(t / scale for t in scheme.tables), scheme.scale)


def admissibility_of_profile(profile, game, fam, scheme, mode: str = "menu", J=None, V=None,
                             cost_tensor=None) -> AdmissibilityCertificate:
    """Certificate at the exact values of a profile, or at supplied candidates."""
    if cost_tensor is None:
        cost_tensor = scheme.tensor(game, fam)
    tables = tables_for(game, fam, scheme, profile, cost_tensor)
    if J is None or V is None:
        vt = evaluate_tables(tables)
        J = vt.J if J is None else J
        V = vt.V if V is None else V
    return check_local_admissibility(tables.sel.tau, profile.pi, J, V, game, scheme, fam,
                                     profile.beta, mode, cost_tensor=cost_tensor)
