"""Static data of a stochastic game with interactive information acquisition.

Index conventions used throughout the package:

* joint actions are flattened row-major over ``(a_1, ..., a_n)``; the last
  agent varies fastest;
* a history ``h = (s_prev, a_prev)`` has flat index ``s_prev * n_joint + a``;
* type profiles are flattened the same way as joint actions;
* per-agent tensors follow the canonical order ``(h, s, g, theta, a)``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

SIMPLEX_TOL = 1e-9
COST_KINDS = ("CB", "TB", "STB", "SAB", "MI")


class StructuralError(ValueError):
    """Raised when tensors cannot be matched against each other at all."""


class ContractError(ValueError):
    """Raised when a caller violates an operation's precondition."""


def _frozen(a, dtype=float):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.flags.writeable = False
    return arr


def _profiles(counts):
    return np.array(list(itertools.product(*[range(c) for c in counts])), dtype=int).reshape(
        -1, len(counts)
    )


@dataclass(frozen=True)
class Violation:
    code: str
    where: tuple
    magnitude: float
    message: str = ""

    def as_dict(self):
        return {
            "code": self.code,
            "where": list(self.where),
            "magnitude": float(self.magnitude),
            "message": self.message,
        }


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, code, where, magnitude, message=""):
        self.violations.append(Violation(code, tuple(int(w) for w in where), float(magnitude), message))

    def extend(self, other: "ValidationReport"):
        self.violations.extend(other.violations)

    def codes(self) -> set:
        return {v.code for v in self.violations}

    def as_dict(self):
        return {"ok": self.ok, "violations": [v.as_dict() for v in self.violations]}


def _check_simplex(report, arr, code_neg, code_sum, prefix=()):
    """Report negative entries and last-axis row sums off 1 by more than the tolerance."""
    arr = np.asarray(arr, dtype=float)
    for idx in zip(*np.nonzero(arr < -SIMPLEX_TOL)):
        report.add(code_neg, prefix + tuple(idx), arr[idx], "negative probability")
    sums = np.atleast_1d(arr.sum(axis=-1))
    bad = np.abs(sums - 1.0) > SIMPLEX_TOL
    for idx in zip(*np.nonzero(bad)):
        where = prefix + (tuple(idx) if arr.ndim > 1 else ())
        report.add(code_sum, where, sums[idx] - 1.0, f"row sums to {float(sums[idx])!r}")


@dataclass(frozen=True, eq=False)
class BaseGame:
    """Finite discounted stochastic game.

    ``rewards`` has shape ``(n, S, A_1, ..., A_n)`` and ``transition`` has
    shape ``(S, A_1, ..., A_n, S)`` with ``transition[s, a, s2] = T(s2 | s, a)``.
    """

    rewards: np.ndarray
    transition: np.ndarray
    initial: np.ndarray
    discount: float
    agent_names: Optional[tuple] = None
    state_names: Optional[tuple] = None
    action_names: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, "rewards", _frozen(self.rewards))
        object.__setattr__(self, "transition", _frozen(self.transition))
        object.__setattr__(self, "initial", _frozen(self.initial))
        object.__setattr__(self, "discount", float(self.discount))
        r = self.rewards
        if r.ndim < 3:
            raise StructuralError("rewards must have shape (n, S, A_1, ..., A_n)")
        n = r.shape[0]
        if r.ndim != 2 + n:
            raise StructuralError(f"rewards has {r.ndim} axes, expected {2 + n} for {n} agents")
        if self.transition.shape != r.shape[1:] + (r.shape[1],):
            raise StructuralError(
                f"transition shape {self.transition.shape} does not match rewards {r.shape}"
            )
        if self.initial.shape != (r.shape[1],):
            raise StructuralError("initial distribution must have one entry per state")
        joint = _profiles(self.action_counts)
        joint.flags.writeable = False
        object.__setattr__(self, "_joint", joint)

    @property
    def n_agents(self) -> int:
        return self.rewards.shape[0]

    @property
    def n_states(self) -> int:
        return self.rewards.shape[1]

    @property
    def action_counts(self) -> tuple:
        return tuple(self.rewards.shape[2:])

    @property
    def n_joint(self) -> int:
        return int(np.prod(self.action_counts))

    @property
    def n_histories(self) -> int:
        return self.n_states * self.n_joint

    @property
    def joint_actions(self) -> np.ndarray:
        """``(n_joint, n)`` table of per-agent action indices."""
        return self._joint

    @property
    def reward_flat(self) -> np.ndarray:
        return self.rewards.reshape(self.n_agents, self.n_states, self.n_joint)

    @property
    def transition_by_history(self) -> np.ndarray:
        """``(H, S)`` array of ``T(s | h)``."""
        return self.transition.reshape(self.n_histories, self.n_states)

    def history_index(self, s_prev: int, joint_action) -> int:
        a = int(np.ravel_multi_index(tuple(joint_action), self.action_counts))
        return int(s_prev) * self.n_joint + a

    def history_pair(self, h: int) -> tuple:
        s, a = divmod(int(h), self.n_joint)
        return s, tuple(int(x) for x in self._joint[a])


@dataclass(frozen=True, eq=False)
class SignalingFamily:
    """Menu of independent signaling rules.

    ``rules[i]`` has shape ``(H, S, G_i, Theta_i)``; a history-free family is
    stored broadcast over ``H`` and flagged so it serializes without the
    history axis.
    """

    rules: tuple
    history_dependent: bool = False
    type_names: Optional[tuple] = None
    cognition_names: Optional[tuple] = None

    def __post_init__(self):
        rules = tuple(_frozen(r) for r in self.rules)
        for r in rules:
            if r.ndim != 4:
                raise StructuralError("each signaling rule must have shape (H, S, G_i, Theta_i)")
        object.__setattr__(self, "rules", rules)
        tp = _profiles(self.type_counts)
        tp.flags.writeable = False
        object.__setattr__(self, "_type_profiles", tp)

    @classmethod
    def history_free(cls, rules, n_histories, **kw):
        """Build from per-agent ``(S, G_i, Theta_i)`` arrays."""
        full = [np.broadcast_to(np.asarray(r, float), (n_histories,) + np.shape(r)) for r in rules]
        return cls(tuple(full), history_dependent=False, **kw)

    @property
    def n_agents(self) -> int:
        return len(self.rules)

    @property
    def type_counts(self) -> tuple:
        return tuple(r.shape[3] for r in self.rules)

    @property
    def cognition_counts(self) -> tuple:
        return tuple(r.shape[2] for r in self.rules)

    @property
    def n_type_profiles(self) -> int:
        return int(np.prod(self.type_counts))

    @property
    def type_profiles(self) -> np.ndarray:
        """``(n_type_profiles, n)`` table of per-agent type indices."""
        return self._type_profiles


@dataclass(frozen=True, eq=False)
class CostScheme:
    """Cognition cost of one kind shared by all agents.

    Table shapes per agent: CB ``(G_i,)``, TB ``(Theta_i,)``, STB
    ``(S, Theta_i)``, SAB ``(S, A_i)`` or history-indexed ``(H, S, A_i)``.
    MI carries no table; ``scale`` multiplies the mutual information.
    Costs are added to rewards as they are, so a penalty is a negative entry.
    """

    kind: str
    tables: Optional[tuple] = None
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in COST_KINDS:
            raise StructuralError(f"unknown cost kind {self.kind!r}")
        if self.kind == "MI":
            if self.tables is not None:
                raise StructuralError("MI cost carries no table")
        else:
            if self.tables is None:
                raise StructuralError(f"{self.kind} cost requires a table per agent")
            object.__setattr__(self, "tables", tuple(_frozen(t) for t in self.tables))
        object.__setattr__(self, "scale", float(self.scale))

    @classmethod
    def zero(cls, game: BaseGame) -> "CostScheme":
        return cls("SAB", tuple(np.zeros((game.n_states, k)) for k in game.action_counts))

    def history_indexed(self) -> bool:
        return self.kind == "SAB" and self.tables[0].ndim == 3

    def tensor(self, game: BaseGame, fam: SignalingFamily) -> list:
        """Per-agent cost ``c_i[h, g, s, theta_i, a_i]`` realized in one period."""
        H, S = game.n_histories, game.n_states
        out = []
        for i in range(game.n_agents):
            G, Th, A = fam.cognition_counts[i], fam.type_counts[i], game.action_counts[i]
            shape = (H, G, S, Th, A)
            if self.kind == "CB":
                c = np.broadcast_to(self.tables[i][None, :, None, None, None], shape)
            elif self.kind == "TB":
                c = np.broadcast_to(self.tables[i][None, None, None, :, None], shape)
            elif self.kind == "STB":
                c = np.broadcast_to(self.tables[i][None, None, :, :, None], shape)
            elif self.kind == "SAB":
                t = self.tables[i]
                if t.ndim == 2:
                    t = np.broadcast_to(t, (H,) + t.shape)
                c = np.broadcast_to(t[:, None, :, None, :], shape)
            else:
                T = game.transition_by_history
                mi = np.empty((H, G))
                for h in range(H):
                    for g in range(G):
                        joint = (T[h][:, None] * fam.rules[i][h, :, g, :]).T
                        mi[h, g] = mutual_information(joint)
                c = np.broadcast_to((self.scale * mi)[:, :, None, None, None], shape)
            out.append(np.array(c, dtype=float))
        return out


@dataclass(frozen=True, eq=False)
class StrategyProfile:
    """Pure cognition policy ``beta[i, h]`` and mixed action policy ``pi[i][h, theta_i, a_i]``."""

    beta: np.ndarray
    pi: tuple

    def __post_init__(self):
        object.__setattr__(self, "beta", _frozen(self.beta, dtype=int))
        object.__setattr__(self, "pi", tuple(_frozen(p) for p in self.pi))

    @property
    def n_agents(self) -> int:
        return len(self.pi)

    def with_beta(self, i: int, h: int, g: int) -> "StrategyProfile":
        beta = np.array(self.beta)
        beta[i, h] = g
        return StrategyProfile(beta, self.pi)

    def with_pi(self, i: int, pi_i) -> "StrategyProfile":
        pis = list(self.pi)
        pis[i] = pi_i
        return StrategyProfile(self.beta, tuple(pis))

    def flat(self) -> np.ndarray:
        return np.concatenate([self.beta.ravel().astype(float)] + [p.ravel() for p in self.pi])


@dataclass(frozen=True)
class CostContext:
    """Whatever a cost kind needs; unused fields stay ``None``."""

    agent: int = 0
    g: Optional[int] = None
    theta: Optional[int] = None
    s: Optional[int] = None
    a_i: Optional[int] = None
    h: Optional[int] = None
    joint: Optional[np.ndarray] = None  # (Theta_i, S) joint type-state distribution, MI only


def mutual_information(joint) -> float:
    """I(X; Y) in nats for a joint table ``p[x, y]``; ``0 log 0 = 0``."""
    p = np.asarray(joint, dtype=float)
    total = p.sum()
    if total <= 0:
        return 0.0
    p = p / total
    px = p.sum(axis=1, keepdims=True)
    py = p.sum(axis=0, keepdims=True)
    mask = p > 0
    lx = np.log(np.broadcast_to(px, p.shape)[mask])
    ly = np.log(np.broadcast_to(py, p.shape)[mask])
    return max(0.0, float(np.sum(p[mask] * (np.log(p[mask]) - lx - ly))))


def cognition_cost(scheme: CostScheme, ctx: CostContext) -> float:
    kind = scheme.kind

    def need(*names):
        missing = [n for n in names if getattr(ctx, n) is None]
        if missing:
            raise ContractError(f"{kind} cost needs context fields {missing}")

    if kind == "MI":
        need("joint")
        return scheme.scale * mutual_information(ctx.joint)
    table = scheme.tables[ctx.agent]
    if kind == "CB":
        need("g")
        return float(table[ctx.g])
    if kind == "TB":
        need("theta")
        return float(table[ctx.theta])
    if kind == "STB":
        need("s", "theta")
        return float(table[ctx.s, ctx.theta])
    need("s", "a_i")
    if table.ndim == 3:
        need("h")
        return float(table[ctx.h, ctx.s, ctx.a_i])
    return float(table[ctx.s, ctx.a_i])


def validate_base_game(game: BaseGame) -> ValidationReport:
    report = ValidationReport()
    _check_simplex(report, game.transition, "T_NEG", "T_SUM")
    _check_simplex(report, game.initial, "INIT_NEG", "INIT_SUM")
    if not (0.0 < game.discount < 1.0):
        report.add("DISCOUNT", (), game.discount, "discount must lie in (0, 1)")
    if not np.all(np.isfinite(game.rewards)):
        report.add("REWARD_FINITE", (), np.nan, "rewards must be finite")
    return report


def validate_signaling_family(game: BaseGame, fam: SignalingFamily) -> ValidationReport:
    """RG1/RG2 plus the common-prior consistency of every ``(h, g)`` pair."""
    if fam.n_agents != game.n_agents:
        raise StructuralError(f"family has {fam.n_agents} agents, game has {game.n_agents}")
    H, S = game.n_histories, game.n_states
    for i, r in enumerate(fam.rules):
        if r.shape[:2] != (H, S):
            raise StructuralError(f"rule of agent {i} has shape {r.shape}, expected ({H}, {S}, G, Theta)")
    report = ValidationReport()
    for i, r in enumerate(fam.rules):
        sub = ValidationReport()
        _check_simplex(sub, r, "RG1", "RG2", prefix=(i,))
        report.extend(sub)
    if len(set(fam.type_counts)) > 1 or len(set(fam.cognition_counts)) > 1:
        report.add("CARDINALITY", (), 0, "type spaces and cognition sets must have equal sizes")
    if not report.ok:
        return report

    T = game.transition_by_history
    n = game.n_agents
    for h in range(H):
        for g in itertools.product(*[range(c) for c in fam.cognition_counts]):
            tau = np.ones((S,) + fam.type_counts)
            for i in range(n):
                shape = [S] + [1] * n
                shape[1 + i] = fam.type_counts[i]
                tau = tau * fam.rules[i][h, :, g[i], :].reshape(shape)
            p = T[h].reshape((S,) + (1,) * n) * tau
            marg = p.reshape(S, -1).sum(axis=1)
            for s in np.nonzero(np.abs(marg - T[h]) > SIMPLEX_TOL)[0]:
                report.add("PRIOR_MARGINAL", (h, *g, s), marg[s] - T[h, s])
            for s in np.nonzero(T[h] > 0)[0]:
                err = np.max(np.abs(p[s] / T[h, s] - tau[s]))
                if err > SIMPLEX_TOL:
                    report.add("PRIOR_BAYES", (h, *g, s), err)
    return report


def validate_cost_scheme(game: BaseGame, fam: SignalingFamily, scheme: CostScheme) -> ValidationReport:
    report = ValidationReport()
    if scheme.kind == "MI":
        return report
    if len(scheme.tables) != game.n_agents:
        report.add("COST_SHAPE", (), len(scheme.tables), "one cost table per agent")
        return report
    for i, t in enumerate(scheme.tables):
        expected = {
            "CB": [(fam.cognition_counts[i],)],
            "TB": [(fam.type_counts[i],)],
            "STB": [(game.n_states, fam.type_counts[i])],
            "SAB": [
                (game.n_states, game.action_counts[i]),
                (game.n_histories, game.n_states, game.action_counts[i]),
            ],
        }[scheme.kind]
        if t.shape not in expected:
            report.add("COST_SHAPE", (i,), 0, f"table shape {t.shape}, expected one of {expected}")
    return report


def validate_profile(game: BaseGame, fam: SignalingFamily, profile: StrategyProfile) -> ValidationReport:
    """FE1/FE2 on the action policy and range checks on the cognition policy."""
    report = ValidationReport()
    H = game.n_histories
    if profile.beta.shape != (game.n_agents, H):
        report.add("BETA_SHAPE", (), 0, f"beta must have shape ({game.n_agents}, {H})")
        return report
    for i in range(game.n_agents):
        p = profile.pi[i]
        if p.shape != (H, fam.type_counts[i], game.action_counts[i]):
            report.add("PI_SHAPE", (i,), 0, f"pi[{i}] shape {p.shape}")
            continue
        _check_simplex(report, p, "FE1", "FE2", prefix=(i,))
        for h in np.nonzero((profile.beta[i] < 0) | (profile.beta[i] >= fam.cognition_counts[i]))[0]:
            report.add("BETA_RANGE", (i, h), profile.beta[i, h])
    return report


def uniform_profile(game: BaseGame, fam: SignalingFamily, g: int = 0) -> StrategyProfile:
    H = game.n_histories
    beta = np.full((game.n_agents, H), g, dtype=int)
    pi = tuple(
        np.full((H, fam.type_counts[i], game.action_counts[i]), 1.0 / game.action_counts[i])
        for i in range(game.n_agents)
    )
    return StrategyProfile(beta, pi)


def pure_pi(choices: Sequence, n_actions: int) -> np.ndarray:
    """One-hot action policy from an integer array of chosen actions over ``(h, theta)``."""
    choices = np.asarray(choices, dtype=int)
    return np.eye(n_actions)[choices]
