"""Equilibrium search: exhaustive enumeration, penalty descent and a Gauss-Newton polish.

Every search result is judged by ``check_local_admissibility`` at the exact
values of the returned profile; a trace that looks converged is never taken
as evidence on its own.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .beliefs import BeliefTables, Selection
from .game_model import StrategyProfile
from .lfpa import AdmissibilityCertificate, check_local_admissibility, gamma_table
from .ppme_verifier import verify_ppme_direct
from .value_engine import evaluate_tables, tables_for

MODES = ("enumerate", "penalty", "admissibility-newton")


class BudgetExceeded(RuntimeError):
    def __init__(self, count, budget):
        super().__init__(f"enumeration would visit {count} profiles, budget is {budget}")
        self.count, self.budget = count, budget


@dataclass(frozen=True)
class SolverConfig:
    mode: str = "penalty"
    max_iters: int = 300
    penalty_schedule: tuple = (1.0, 10.0, 100.0, 1e3, 1e4)
    step: float = 0.5
    restarts: int = 1
    seed: int = 0
    z_tol: float = 1e-7
    residual_tol: float = 1e-8
    grid: int = 1
    budget: int = 2_000_000
    history_free: bool = False
    beta_every: int = 10
    policy_step: float = 1.0
    newton_iters: int = 50

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        sched = np.asarray(self.penalty_schedule, float)
        if sched.size == 0 or np.any(np.diff(sched) <= 0) or np.any(sched <= 0):
            raise ValueError("penalty schedule must be positive and strictly increasing")
        if self.z_tol <= 0 or self.residual_tol <= 0 or self.step <= 0:
            raise ValueError("tolerances and step must be positive")
        if self.grid < 1:
            raise ValueError("grid must be at least 1")


def project_simplex(v) -> np.ndarray:
    """Euclidean projection of each last-axis row onto the probability simplex."""
    v = np.asarray(v, float)
    flat = v.reshape(-1, v.shape[-1])
    u = -np.sort(-flat, axis=1)
    css = np.cumsum(u, axis=1) - 1.0
    k = np.arange(1, flat.shape[1] + 1)
    cond = u - css / k > 0
    rho = cond.shape[1] - 1 - np.argmax(cond[:, ::-1], axis=1)
    theta = css[np.arange(flat.shape[0]), rho] / (rho + 1)
    return np.maximum(flat - theta[:, None], 0.0).reshape(v.shape)


# ---------------------------------------------------------------------------
# enumeration


def simplex_grid(n_actions: int, grid: int) -> np.ndarray:
    """Mixtures with coordinates in multiples of ``1/(grid-1)``; ``grid=1`` gives the vertices."""
    if grid == 1:
        return np.eye(n_actions)
    m = grid - 1
    pts = [c for c in itertools.product(range(m + 1), repeat=n_actions) if sum(c) == m]
    return np.array(pts, float) / m


def enumeration_count(game, fam, grid: int = 1, history_free: bool = False) -> int:
    H = 1 if history_free else game.n_histories
    total = 1
    for i in range(game.n_agents):
        cells = H * fam.type_counts[i]
        total *= fam.cognition_counts[i] ** H * len(simplex_grid(game.action_counts[i], grid)) ** cells
    return total


def enumerate_profiles(game, fam, grid: int = 1, history_free: bool = False, budget: int = 2_000_000):
    """Yield every profile of the enumeration in a fixed order."""
    count = enumeration_count(game, fam, grid, history_free)
    if count > budget:
        raise BudgetExceeded(count, budget)
    H = game.n_histories
    Hc = 1 if history_free else H
    per_agent = []
    for i in range(game.n_agents):
        mix = simplex_grid(game.action_counts[i], grid)
        Th = fam.type_counts[i]
        betas = list(itertools.product(range(fam.cognition_counts[i]), repeat=Hc))
        pis = list(itertools.product(range(len(mix)), repeat=Hc * Th))
        per_agent.append((betas, pis, mix, Th))
    axes = []
    for betas, pis, _, _ in per_agent:
        axes += [range(len(betas)), range(len(pis))]
    for idx in itertools.product(*axes):
        beta = np.empty((game.n_agents, H), dtype=int)
        pi = []
        for i, (betas, pis, mix, Th) in enumerate(per_agent):
            b = np.array(betas[idx[2 * i]])
            p = mix[np.array(pis[idx[2 * i + 1]])].reshape(Hc, Th, -1)
            beta[i] = np.broadcast_to(b, (H,)) if history_free else b
            pi.append(np.broadcast_to(p, (H,) + p.shape[1:]) if history_free else p)
        yield StrategyProfile(beta, tuple(pi))


def brute_force_equilibria(game, fam, scheme, grid: int = 1, budget: int = 2_000_000,
                           history_free: bool = False, dev_tol: float = 1e-7) -> list:
    ct = scheme.tensor(game, fam)
    return [p for p in enumerate_profiles(game, fam, grid, history_free, budget)
            if verify_ppme_direct(p, game, fam, scheme, dev_tol=dev_tol, cost_tensor=ct).is_ppme]


# ---------------------------------------------------------------------------
# penalty descent


class _AgentModel:
    """Affine constraint maps of one agent for fixed ``(beta, pi)``.

    Variables are ``x = (J, V.ravel())``.  Rows of ``A x + b`` must be
    nonnegative; ``z_row . x + z0`` is the agent's share of the OPT objective
    and must vanish; ``c . x`` is its share of the GFPA objective.
    """

    def __init__(self, game, fam, scheme, profile, i, ct):
        H = game.n_histories
        d = game.discount
        tables = tables_for(game, fam, scheme, profile, ct)
        nth = tables.p.shape[2]
        self.H, self.nth = H, nth
        self.tables = tables
        Pv = np.zeros((H, H * nth))
        for h in range(H):
            Pv[h, h * nth:(h + 1) * nth] = tables.p[h].sum(axis=0)
        zero = np.zeros(H)
        own = tables.type_grid[:, i]

        def one_shot(tab):
            X = tab.integrand(i, zero)
            c = np.einsum("hst,hta,hsta->h", tab.p, tab.pi_joint, X[:, :, own, :])
            return c, tab.transition_matrix()

        c_sel, M_sel = one_shot(tables)
        alts = []
        for g in range(fam.cognition_counts[i]):
            beta = np.array(profile.beta)
            beta[i, :] = g
            alts.append(one_shot(BeliefTables(game, Selection.from_profile(game, fam, scheme, beta, ct),
                                              profile.pi)))
        # stage two: deviation values are affine in the history value
        kw = tables.kw[i]
        Ea = tables.action_maps[i]
        dev0 = tables.deviation_values(i, zero)
        S, nA = game.n_states, game.n_joint
        Dj = d * np.einsum("hksa,al->hklsa", kw, Ea).reshape(-1, S * nA)
        post_theta = tables.post[i].sum(axis=1)
        MV = np.zeros((H * tables.type_prob[i].shape[1], H * nth))
        Et = tables.type_maps[i]
        K = Et.shape[1]
        for h in range(H):
            for k in range(K):
                MV[h * K + k, h * nth:(h + 1) * nth] = post_theta[h] * Et[:, k]
        A_dim = Ea.shape[1]
        MVrep = np.repeat(MV, A_dim, axis=0)
        stage2 = MVrep - Dj @ Pv
        b2 = -dev0.ravel()
        pos = np.repeat(tables.positive(i).ravel(), A_dim)
        rows, offs = [], []
        nJ = H
        zJ = np.zeros((H, nJ))
        for c_g, M_g in alts:
            rows.append(np.hstack([zJ, Pv - d * M_g @ Pv]))  # EQ1, menu form
            offs.append(-c_g)
        rows.append(np.hstack([np.zeros((stage2.shape[0], nJ)), stage2])[pos])  # EQ2
        offs.append(b2[pos])
        for c_g, M_g in alts:
            rows.append(np.hstack([np.eye(H) - d * M_g, np.zeros((H, H * nth))]))  # EQ3, menu form
            offs.append(-c_g)
        rows.append(np.hstack([np.zeros((stage2.shape[0], nJ)), stage2]))  # EQ4
        offs.append(b2)
        self.A = np.vstack(rows)
        self.b = np.concatenate(offs)
        self.z_row = np.concatenate([np.zeros(H), np.ones(H) @ (np.eye(H) - d * M_sel) @ Pv])
        self.z0 = -float(c_sel.sum())
        self.c = np.concatenate([np.ones(H), -np.ones(H) @ Pv])
        self.lip = float(np.linalg.norm(self.A, 2) ** 2 + np.dot(self.z_row, self.z_row))

    def split(self, x):
        return x[: self.H], x[self.H:].reshape(self.H, self.nth)

    def penalty(self, x, rho):
        g = self.A @ x + self.b
        z = self.z_row @ x + self.z0
        return float(self.c @ x + rho * (z * z + np.sum(np.minimum(g, 0.0) ** 2)))

    def gradient(self, x, rho):
        g = np.minimum(self.A @ x + self.b, 0.0)
        z = self.z_row @ x + self.z0
        return self.c + 2.0 * rho * (z * self.z_row + self.A.T @ g)

    def minimize(self, x, rho, step, iters: int = 30):
        """Active-set Newton on the convex penalty, with step halving on increase.

        Returns the new point and the last accepted step length.
        """
        x = np.array(x, float)
        f = self.penalty(x, rho)
        t_last = step
        for _ in range(iters):
            act = (self.A @ x + self.b) < 0
            Aa = self.A[act]
            Hm = np.outer(self.z_row, self.z_row) + Aa.T @ Aa
            grad = self.gradient(x, rho)
            d = -np.linalg.lstsq(2.0 * rho * Hm + 1e-12 * np.eye(x.size), grad, rcond=None)[0]
            if not np.all(np.isfinite(d)) or np.dot(d, grad) >= 0:
                d = -grad / (2.0 * rho * self.lip + 1.0)
            t = 1.0
            for _ in range(40):
                cand = x + t * d
                fc = self.penalty(cand, rho)
                if fc <= f:
                    break
                t *= 0.5
            else:
                break
            moved = np.max(np.abs(cand - x))
            x, f, t_last = cand, fc, t
            if moved < 1e-13:
                break
        return x, t_last

    def max_violation(self, x):
        g = self.A @ x + self.b
        return float(max(np.max(np.maximum(-g, 0.0)), abs(self.z_row @ x + self.z0)))


@dataclass
class SolverResult:
    profile: StrategyProfile
    certificate: AdmissibilityCertificate
    converged: bool
    trace: list = field(default_factory=list)
    J: Optional[list] = None
    V: Optional[list] = None
    restart: int = 0

    def trace_csv(self) -> str:
        lines = ["iter,Z_gfpa,max_violation,step"]
        lines += [f"{r['iter']},{r['Z_gfpa']:.17g},{r['max_violation']:.17g},{r['step']:.17g}" for r in self.trace]
        return "\n".join(lines) + "\n"


def _models(game, fam, scheme, profile, ct):
    return [_AgentModel(game, fam, scheme, profile, i, ct) for i in range(game.n_agents)]


def _total_penalty(models, xs, rho):
    return sum(m.penalty(x, rho) for m, x in zip(models, xs))


def _random_profile(rng, game, fam):
    H = game.n_histories
    beta = np.stack([rng.integers(0, fam.cognition_counts[i], H) for i in range(game.n_agents)])
    pi = tuple(rng.dirichlet(np.ones(game.action_counts[i]), size=(H, fam.type_counts[i]))
               for i in range(game.n_agents))
    return StrategyProfile(beta, pi)


def _certify(profile, game, fam, scheme, ct):
    tables = tables_for(game, fam, scheme, profile, ct)
    vt = evaluate_tables(tables)
    cert = check_local_admissibility(tables.sel.tau, profile.pi, vt.J, vt.V, game, scheme, fam,
                                     profile.beta, "menu", cost_tensor=ct)
    return cert, vt


def _penalty_run(game, fam, scheme, config, rng, ct):
    profile = _random_profile(rng, game, fam)
    vt = evaluate_tables(tables_for(game, fam, scheme, profile, ct))
    xs = [np.concatenate([vt.J[i], vt.V[i].ravel()]) for i in range(game.n_agents)]
    trace = []
    it = 0
    iters_per_epoch = max(1, config.max_iters // len(config.penalty_schedule))
    cert = None
    for rho in config.penalty_schedule:
        models = _models(game, fam, scheme, profile, ct)
        step = config.step
        for _ in range(iters_per_epoch):
            it += 1
            # (J, V) minimize the penalized GFPA objective for the current (beta, pi)
            steps = []
            for k, (m, x) in enumerate(zip(models, xs)):
                xs[k], t = m.minimize(x, rho, config.step)
                steps.append(t)
            trial = min(steps)
            # action policy moves toward the best response to the candidate values
            new_pi = []
            for i, (m, x) in enumerate(zip(models, xs)):
                J, _ = m.split(x)
                dev = m.tables.deviation_values(i, J)
                scale = np.max(np.abs(dev)) + 1e-12
                new_pi.append(project_simplex(profile.pi[i] + config.policy_step * dev / scale * 10.0))
            profile = StrategyProfile(profile.beta, tuple(new_pi))
            if it % config.beta_every == 0:
                profile = _beta_sweep(game, fam, scheme, profile, xs, rho, ct)
            models = _models(game, fam, scheme, profile, ct)
            z = sum(float(m.c @ x) for m, x in zip(models, xs))
            trace.append({"iter": it, "Z_gfpa": z, "max_violation": max(m.max_violation(x) for m, x in zip(models, xs)),
                          "step": trial})
        cert, vt = _certify(profile, game, fam, scheme, ct)
        if cert.admissible:
            return profile, cert, True, trace, vt
    return profile, cert, False, trace, vt


def _beta_sweep(game, fam, scheme, profile, xs, rho, ct):
    """Per-history discrete argmin of the penalized objective over each agent's menu."""
    for i in range(game.n_agents):
        for h in range(game.n_histories):
            vals = []
            for g in range(fam.cognition_counts[i]):
                cand = profile.with_beta(i, h, g)
                vals.append(_total_penalty(_models(game, fam, scheme, cand, ct), xs, rho))
            best = int(np.argmin(np.round(vals, 12)))
            if best != profile.beta[i, h]:
                profile = profile.with_beta(i, h, best)
    return profile


def solve_ppme_penalty(game, fam, scheme, config: SolverConfig = SolverConfig()) -> SolverResult:
    """Penalty descent over ``(beta, pi, J, V)`` with multi-start.

    Within each epoch of the penalty schedule the candidate ``(J, V)`` takes
    gradient steps on ``Z^GFPA`` plus squared violations of the menu forms of
    EQ1 and EQ3, of EQ2 and EQ4, and of ``Z = 0``; the action policy moves
    by a projected step along the deviation values; the menu choice is
    re-optimized per history every ``beta_every`` iterations.  Each epoch
    ends by certifying the profile at its exact values.
    """
    ct = scheme.tensor(game, fam)
    seq = np.random.SeedSequence(config.seed)
    runs = []
    for r, child in enumerate(seq.spawn(config.restarts)):
        rng = np.random.default_rng(child)
        profile, cert, ok, trace, vt = _penalty_run(game, fam, scheme, config, rng, ct)
        runs.append(SolverResult(profile, cert, ok, trace, list(vt.J), list(vt.V), r))
    return _best(runs)


def _best(runs):
    winners = [r for r in runs if r.converged]
    if winners:
        return min(winners, key=lambda r: tuple(r.profile.flat()))

    def badness(r):
        s = r.certificate.summary()
        return max(s["menu_level"]["max_K"], -s["menu_level"]["min_lambda"], s["max_pi_gamma"],
                   s["max_negative_gap"], s["alignment_residual"])

    return min(runs, key=badness)


# ---------------------------------------------------------------------------
# Gauss-Newton polish


def _residual(game, fam, scheme, beta, x, shapes, ct):
    """Stacked root system: menu alignment at the chosen item, V alignment, pi * gamma, simplex sums."""
    J, V, pi = _unpack(x, shapes)
    profile = StrategyProfile(beta, pi)
    tables = tables_for(game, fam, scheme, profile, ct)
    out = []
    M = tables.transition_matrix()
    zero = np.zeros(game.n_histories)
    for i in range(game.n_agents):
        X = tables.integrand(i, zero)
        c = np.einsum("hst,hta,hsta->h", tables.p, tables.pi_joint, X[:, :, tables.type_grid[:, i], :])
        out.append(J[i] - c - game.discount * M @ J[i])
        out.append((V[i] - tables.profile_values(i, tables.q_values(i, J[i]))).ravel())
        gam = gamma_table(tables, i, J[i], V[i])
        out.append(np.where(tables.positive(i)[:, :, None], pi[i] * gam, 0.0).ravel())
        out.append(pi[i].sum(axis=-1).ravel() - 1.0)
    return np.concatenate(out)


def _pack(J, V, pi):
    return np.concatenate([np.ravel(a) for a in list(J) + list(V) + list(pi)])


def _unpack(x, shapes):
    n = len(shapes["J"])
    out, k = [], 0
    for shp in shapes["J"] + shapes["V"] + shapes["pi"]:
        size = int(np.prod(shp))
        out.append(x[k:k + size].reshape(shp))
        k += size
    return out[:n], out[n:2 * n], tuple(out[2 * n:])


def _project(x, shapes):
    J, V, pi = _unpack(x, shapes)
    return _pack(J, V, [project_simplex(p) for p in pi])


def solve_admissibility_newton(game, fam, scheme, config: SolverConfig, warm_start):
    """Damped Gauss-Newton on the admissibility root system from ``warm_start``.

    ``warm_start`` is ``(profile, J, V)``; ``J`` and ``V`` may be ``None`` to
    start from the exact values of the profile.  The menu choice stays fixed.
    Returns ``(profile, certificate, info)`` where ``info`` records the
    iteration count, final residual norm and Jacobian conditioning.
    """
    ct = scheme.tensor(game, fam)
    profile, J, V = warm_start
    if J is None or V is None:
        vt = evaluate_tables(tables_for(game, fam, scheme, profile, ct))
        J, V = vt.J, vt.V
    beta = profile.beta
    shapes = {"J": [np.shape(j) for j in J], "V": [np.shape(v) for v in V], "pi": [p.shape for p in profile.pi]}
    x = _pack(J, V, profile.pi)

    def certify(x):
        Jc, Vc, pic = _unpack(x, shapes)
        tables = tables_for(game, fam, scheme, StrategyProfile(beta, pic), ct)
        return check_local_admissibility(tables.sel.tau, pic, Jc, Vc, game, scheme, fam, beta, "menu",
                                         cost_tensor=ct)

    cert = certify(x)
    info = {"iterations": 0, "residual": float(np.linalg.norm(_residual(game, fam, scheme, beta, x, shapes, ct))),
            "condition": None, "fallback_steps": 0}
    if cert.admissible:
        return StrategyProfile(beta, _unpack(x, shapes)[2]), cert, info
    eps = 1e-7
    for it in range(config.newton_iters):
        r = _residual(game, fam, scheme, beta, x, shapes, ct)
        jac = np.empty((r.size, x.size))
        for k in range(x.size):
            xp = x.copy()
            xp[k] += eps
            jac[:, k] = (_residual(game, fam, scheme, beta, xp, shapes, ct) - r) / eps
        sv = np.linalg.svd(jac, compute_uv=False)
        info["condition"] = float(sv[0] / sv[-1]) if sv[-1] > 0 else float("inf")
        step = np.linalg.lstsq(jac, -r, rcond=None)[0]
        base = np.linalg.norm(r)
        t = 1.0
        accepted = False
        for _ in range(20):
            cand = _project(x + t * step, shapes)
            if np.linalg.norm(_residual(game, fam, scheme, beta, cand, shapes, ct)) < base:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            g = jac.T @ r
            lr = base ** 2 / max(np.dot(jac @ g, jac @ g), 1e-300)
            cand = _project(x - lr * g, shapes)
            info["fallback_steps"] += 1
        x = cand
        info["iterations"] = it + 1
        info["residual"] = float(np.linalg.norm(_residual(game, fam, scheme, beta, x, shapes, ct)))
        cert = certify(x)
        if cert.admissible:
            break
    Jc, Vc, pic = _unpack(x, shapes)
    info["J"], info["V"] = Jc, Vc
    return StrategyProfile(beta, pic), cert, info


def solve(game, fam, scheme, config: SolverConfig, warm_start=None):
    """Dispatch on ``config.mode``; returns a list of profiles or a ``SolverResult``."""
    if config.mode == "enumerate":
        return brute_force_equilibria(game, fam, scheme, config.grid, config.budget, config.history_free)
    if config.mode == "penalty":
        return solve_ppme_penalty(game, fam, scheme, config)
    if warm_start is None:
        res = solve_ppme_penalty(game, fam, scheme, replace(config, mode="penalty"))
        warm_start = (res.profile, res.J, res.V)
    profile, cert, info = solve_admissibility_newton(game, fam, scheme, config, warm_start)
    return SolverResult(profile, cert, cert.admissible, [], info.get("J"), info.get("V"))


__all__ = [
    "BudgetExceeded", "SolverConfig", "SolverResult", "brute_force_equilibria", "enumerate_profiles",
    "enumeration_count", "project_simplex", "simplex_grid", "solve", "solve_admissibility_newton",
    "solve_ppme_penalty",
]
