"""JSON game-spec files (schema ``sgia-1``).

A document holds a game, a signaling family, a cost scheme and optionally a
profile.  Output is canonical: sorted keys, two-space indentation with
numeric arrays kept on one line, and floats written with 17 significant
digits, so ``dump(load(text)) == text`` for any canonical ``text``.

Top-level fields: ``schema`` (mandatory, ``"sgia-1"``), ``agents`` and
``states`` (a count or a list of names), ``actions`` (per agent, a count or
a list of names), ``rewards`` ``(n, S, A_1..A_n)``, ``transition``
``(S, A_1..A_n, S)``, ``initial``, ``discount``, ``signaling``
(``rules`` per agent, ``history_dependent``), ``cost`` (``kind``,
``tables``, ``scale``), and optional ``profile`` (``beta``, ``pi``) and
``meta``.

History-free rules are stored as ``(S, G, Theta)`` arrays and broadcast on load.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .game_model import BaseGame, CostScheme, SignalingFamily, StrategyProfile, StructuralError

SCHEMA = "sgia-1"


class FileFormatError(ValueError):
    """Malformed document; ``location`` is ``line:col`` for syntax errors or a key path."""

    def __init__(self, message: str, location: str = ""):
        self.location = location
        super().__init__(f"{location}: {message}" if location else message)


@dataclass
class Document:
    game: BaseGame
    family: SignalingFamily
    cost: CostScheme
    profile: Optional[StrategyProfile] = None
    meta: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# canonical writer


def _fmt_number(x, lenient=False) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if not math.isfinite(x):
        if lenient:
            return "NaN" if math.isnan(x) else ("Infinity" if x > 0 else "-Infinity")
        raise FileFormatError(f"non-finite number {x!r} cannot be written")
    if x == 0.0:
        x = 0.0  # fold -0.0
    return format(x, ".17g")


def _is_numeric_array(obj) -> bool:
    if isinstance(obj, np.ndarray):
        return True
    if isinstance(obj, list) and obj:
        return all(_is_numeric_array(v) or isinstance(v, (int, float, np.number)) and not isinstance(v, bool)
                   for v in obj)
    return False


def _emit_inline(obj, lenient) -> str:
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, list):
        return "[" + ", ".join(_emit_inline(v, lenient) for v in obj) + "]"
    return _fmt_number(obj, lenient)


def _emit(obj, depth: int, lenient: bool = False) -> str:
    pad = "  " * (depth + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_emit(obj[k], depth + 1, lenient)}" for k in sorted(obj, key=str)]
        return "{\n" + ",\n".join(items) + "\n" + "  " * depth + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        if isinstance(obj, tuple):
            obj = list(obj)
        if isinstance(obj, np.ndarray) or _is_numeric_array(obj):
            return _emit_inline(obj, lenient)
        if not obj:
            return "[]"
        return "[\n" + ",\n".join(pad + _emit(v, depth + 1, lenient) for v in obj) + "\n" + "  " * depth + "]"
    if obj is None:
        return "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    return _fmt_number(obj, lenient)


def canonical_json(obj, allow_nonfinite: bool = False) -> str:
    """Sorted, indented JSON; non-finite floats become ``Infinity``/``NaN`` only if allowed."""
    return _emit(obj, 0, allow_nonfinite) + "\n"


# ---------------------------------------------------------------------------
# document <-> dict


def _family_dict(fam: SignalingFamily) -> dict:
    rules = [r[0] if not fam.history_dependent else r for r in fam.rules]
    return {"rules": [np.asarray(r) for r in rules], "history_dependent": bool(fam.history_dependent)}


def _cost_dict(scheme: CostScheme) -> dict:
    out = {"kind": scheme.kind}
    if scheme.tables is not None:
        out["tables"] = [np.asarray(t) for t in scheme.tables]
    if scheme.scale != 1.0 or scheme.kind == "MI":
        out["scale"] = float(scheme.scale)
    return out


def to_dict(doc: Document) -> dict:
    g = doc.game
    out = {
        "schema": SCHEMA,
        "agents": list(g.agent_names) if g.agent_names is not None else g.n_agents,
        "states": list(g.state_names) if g.state_names is not None else g.n_states,
        "actions": [list(a) for a in g.action_names] if g.action_names is not None else list(g.action_counts),
        "rewards": g.rewards,
        "transition": g.transition,
        "initial": g.initial,
        "discount": float(g.discount),
        "signaling": _family_dict(doc.family),
        "cost": _cost_dict(doc.cost),
    }
    if doc.profile is not None:
        out["profile"] = {"beta": np.asarray(doc.profile.beta, dtype=int), "pi": list(doc.profile.pi)}
    if doc.meta:
        out["meta"] = doc.meta
    return out


def _get(d, key, path):
    if not isinstance(d, dict):
        raise FileFormatError("expected an object", path)
    if key not in d:
        raise FileFormatError(f"missing key {key!r}", path)
    return d[key]


def _array(value, path, dtype=float, ndim=None):
    try:
        arr = np.array(value, dtype=dtype)
    except (TypeError, ValueError) as exc:
        raise FileFormatError(f"not a rectangular numeric array ({exc})", path) from None
    if arr.dtype == object:
        raise FileFormatError("ragged array", path)
    if ndim is not None and arr.ndim != ndim:
        raise FileFormatError(f"expected {ndim}-d array, got {arr.ndim}-d", path)
    return arr


def _array_list(value, path, ndim=None):
    if not isinstance(value, list):
        raise FileFormatError("expected a list with one array per agent", path)
    return [_array(v, f"{path}[{i}]", ndim=ndim) for i, v in enumerate(value)]


def _labels(value, path):
    """A count or a list of names; returns ``(count, names or None)``."""
    if isinstance(value, bool) or not isinstance(value, (int, list)):
        raise FileFormatError("expected a count or a list of names", path)
    if isinstance(value, int):
        return value, None
    return len(value), tuple(str(v) for v in value)


def _action_labels(value, path):
    if not isinstance(value, list):
        raise FileFormatError("expected one action count or name list per agent", path)
    counts, names = [], []
    for i, v in enumerate(value):
        c, n = _labels(v, f"{path}[{i}]")
        counts.append(c)
        names.append(n)
    if all(n is None for n in names):
        return counts, None
    if any(n is None for n in names):
        raise FileFormatError("give names for every agent's actions or for none", path)
    return counts, tuple(names)


def from_dict(data: dict) -> Document:
    if not isinstance(data, dict):
        raise FileFormatError("top level must be an object", "$")
    tag = data.get("schema")
    if tag != SCHEMA:
        raise FileFormatError(f"unsupported schema {tag!r} (expected {SCHEMA!r})", "$.schema")
    n, agent_names = _labels(_get(data, "agents", "$"), "$.agents")
    S, state_names = _labels(_get(data, "states", "$"), "$.states")
    counts, action_names = _action_labels(_get(data, "actions", "$"), "$.actions")
    raw = _get(data, "discount", "$")
    try:
        discount = float(raw)
    except (TypeError, ValueError):
        raise FileFormatError("discount must be a number", "$.discount") from None
    rewards = _array(_get(data, "rewards", "$"), "$.rewards")
    expected = (n, S) + tuple(counts)
    if rewards.shape != expected:
        raise FileFormatError(f"shape {rewards.shape} does not match agents/states/actions {expected}", "$.rewards")
    transition = _array(_get(data, "transition", "$"), "$.transition")
    if transition.shape != expected[1:] + (S,):
        raise FileFormatError(f"shape {transition.shape}, expected {expected[1:] + (S,)}", "$.transition")
    try:
        game = BaseGame(rewards, transition, _array(_get(data, "initial", "$"), "$.initial", ndim=1), discount,
                        agent_names=agent_names, state_names=state_names, action_names=action_names)
    except StructuralError as exc:
        raise FileFormatError(str(exc), "$") from None

    fd = _get(data, "signaling", "$")
    hd = bool(fd.get("history_dependent", False)) if isinstance(fd, dict) else False
    rules = _array_list(_get(fd, "rules", "$.signaling"), "$.signaling.rules", ndim=4 if hd else 3)
    if not hd:
        rules = [np.broadcast_to(r, (game.n_histories,) + r.shape) for r in rules]
    elif any(r.shape[0] != game.n_histories for r in rules):
        raise FileFormatError(f"history-dependent rules need {game.n_histories} histories", "$.signaling.rules")
    family = SignalingFamily(tuple(rules), history_dependent=hd)

    cd = _get(data, "cost", "$")
    kind = _get(cd, "kind", "$.cost")
    tables = _array_list(cd["tables"], "$.cost.tables") if "tables" in cd else None
    try:
        cost = CostScheme(kind, None if tables is None else tuple(tables), float(cd.get("scale", 1.0)))
    except (ValueError, TypeError) as exc:
        raise FileFormatError(str(exc), "$.cost") from None

    profile = None
    if "profile" in data:
        pd = data["profile"]
        beta = _array(_get(pd, "beta", "$.profile"), "$.profile.beta", dtype=float, ndim=2)
        if not np.all(beta == np.round(beta)):
            raise FileFormatError("beta entries must be integers", "$.profile.beta")
        pis = _array_list(_get(pd, "pi", "$.profile"), "$.profile.pi", ndim=3)
        profile = StrategyProfile(beta.astype(int), tuple(pis))
    meta = data.get("meta", {})
    return Document(game, family, cost, profile, meta if isinstance(meta, dict) else {})


# ---------------------------------------------------------------------------
# text and files


def loads(text: str) -> Document:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FileFormatError(exc.msg, f"line {exc.lineno} col {exc.colno} (offset {exc.pos})") from None
    return from_dict(data)


def dumps(doc: Document) -> str:
    return canonical_json(to_dict(doc))


def load(path) -> Document:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())


def dump(doc: Document, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(doc))
