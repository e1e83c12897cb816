"""Command-line interface: ``sgia <command> FILE [options]``.

Exit codes: 0 success or property holds, 2 invalid input, 3 valid input but
the property fails, 4 solver did not converge or could not finish.
"""

from __future__ import annotations

import os

# BLAS pools must be capped before numpy is first imported
if os.environ.get("SGIA_THREADS"):
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, os.environ["SGIA_THREADS"])

import argparse
import hashlib
import sys
import time
from dataclasses import asdict, is_dataclass

import numpy as np

from . import __version__
from .fileformat import Document, FileFormatError, canonical_json, loads, to_dict
from .game_model import (
    ContractError,
    StructuralError,
    validate_base_game,
    validate_cost_scheme,
    validate_profile,
    validate_signaling_family,
)

EXIT_OK, EXIT_INVALID, EXIT_PROPERTY, EXIT_SOLVER = 0, 2, 3, 4


class InvalidInput(Exception):
    def __init__(self, message, details=None):
        super().__init__(message)
        self.details = details or {}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (set, frozenset)):
        return sorted(_jsonable(v) for v in obj)
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj
    if is_dataclass(obj) and not isinstance(obj, type):
        return _jsonable(asdict(obj))
    return obj


# ---------------------------------------------------------------------------
# input handling


def _read(path):
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise InvalidInput(f"cannot read {path}: {exc.strerror}") from None
    digest = hashlib.sha256(raw).hexdigest()
    try:
        doc = loads(raw.decode("utf-8"))
    except UnicodeDecodeError as exc:
        raise InvalidInput(f"not UTF-8 text (offset {exc.start})") from None
    except FileFormatError as exc:
        raise InvalidInput(str(exc), {"location": exc.location}) from None
    except (StructuralError, ContractError) as exc:
        raise InvalidInput(str(exc)) from None
    return doc, digest


def _validation(doc: Document) -> dict:
    out = {
        "game": validate_base_game(doc.game),
        "family": validate_signaling_family(doc.game, doc.family),
        "cost": validate_cost_scheme(doc.game, doc.family, doc.cost),
    }
    if doc.profile is not None:
        out["profile"] = validate_profile(doc.game, doc.family, doc.profile)
    return out


def _require_valid(doc, need_profile=True):
    try:
        reports = _validation(doc)
    except StructuralError as exc:
        raise InvalidInput(str(exc)) from None
    bad = {k: r.as_dict() for k, r in reports.items() if not r.ok}
    if bad:
        codes = sorted({c for r in reports.values() for c in r.codes()})
        raise InvalidInput(f"validation failed: {', '.join(codes)}", {"validation": bad})
    if need_profile and doc.profile is None:
        raise InvalidInput("this command needs a 'profile' section")


# ---------------------------------------------------------------------------
# commands; each returns (exit code, result dict[, document to write])


def cmd_validate(doc, args):
    reports = _validation(doc)
    ok = all(r.ok for r in reports.values())
    return (EXIT_OK if ok else EXIT_INVALID), {"valid": ok, "reports": {k: r.as_dict() for k, r in reports.items()}}


def cmd_inspect(doc, args):
    g, f = doc.game, doc.family
    info = {
        "agents": g.n_agents,
        "states": g.n_states,
        "actions": list(g.action_counts),
        "histories": g.n_histories,
        "types": list(f.type_counts),
        "menu_sizes": list(f.cognition_counts),
        "history_dependent_rules": bool(f.history_dependent),
        "discount": g.discount,
        "cost_kind": doc.cost.kind,
        "has_profile": doc.profile is not None,
    }
    if doc.profile is not None:
        from .solver import enumeration_count

        info["pure_profile_count"] = enumeration_count(g, f)
    return EXIT_OK, info


def cmd_evaluate(doc, args):
    from .value_engine import bellman_residuals, evaluate_policy, tables_for

    _require_valid(doc)
    vt = evaluate_policy(doc.game, doc.family, doc.cost, doc.profile, method=args.method)
    res = bellman_residuals(tables_for(doc.game, doc.family, doc.cost, doc.profile), vt)
    worst = {k: max(float(np.max(np.abs(r))) for r in v) for k, v in res.items()}
    return EXIT_OK, {"J": list(vt.J), "V": list(vt.V), "Q": list(vt.Q), "max_residual": worst}


def cmd_simulate(doc, args):
    from .value_engine import evaluate_policy, monte_carlo_value

    _require_valid(doc)
    if not 0 <= args.history < doc.game.n_histories:
        raise InvalidInput(f"history must lie in [0, {doc.game.n_histories})")
    est = monte_carlo_value(doc.game, doc.family, doc.cost, doc.profile, args.history, args.episodes,
                            args.horizon, seed=args.seed)
    exact = np.array([J[args.history] for J in evaluate_policy(doc.game, doc.family, doc.cost, doc.profile).J])
    z = np.abs(est.mean - exact) / np.where(est.stderr > 0, est.stderr, np.inf)
    return EXIT_OK, {
        "history": args.history, "episodes": est.episodes, "horizon": est.horizon,
        "mean": est.mean, "stderr": est.stderr, "exact": exact, "standard_errors_off": z,
    }


def cmd_verify(doc, args):
    from .ppme_verifier import (
        check_feasibility_K,
        check_feasibility_K_gfpa,
        cross_check_propositions,
        objective_Z_gfpa,
        verify_ppme_direct,
    )
    from .value_engine import evaluate_tables, tables_for

    _require_valid(doc)
    g, f, c, p = doc.game, doc.family, doc.cost, doc.profile
    if args.mode == "direct":
        r = verify_ppme_direct(p, g, f, c, joint_deviation=args.joint_deviation)
        return (EXIT_OK if r.is_ppme else EXIT_PROPERTY), r.as_dict()
    if args.mode == "cross":
        r = cross_check_propositions(p, g, f, c, form=args.form)
        return (EXIT_OK if r["direct_is_ppme"] else EXIT_PROPERTY), r
    tables = tables_for(g, f, c, p)
    vt = evaluate_tables(tables)
    if args.mode == "opt":
        from .ppme_verifier import objective_Z

        z = objective_Z(p.pi, vt.V, p.beta, f, g, c)
        k = check_feasibility_K(p.pi, vt.V, p.beta, f, g, c, form=args.form)
    else:
        z = objective_Z_gfpa(tables.sel.tau, vt.J, vt.V, p.pi, g, c, p.beta)
        k = check_feasibility_K_gfpa(tables.sel.tau, vt.J, vt.V, p.pi, g, c, f, p.beta, form=args.form)
    holds = abs(z) <= args.z_tol and k.feasible
    return (EXIT_OK if holds else EXIT_PROPERTY), {"holds": holds, "z_value": z, "constraints": k.as_dict()}


def cmd_admissibility(doc, args):
    from .lfpa import admissibility_of_profile

    _require_valid(doc)
    cert = admissibility_of_profile(doc.profile, doc.game, doc.family, doc.cost, mode=args.mode)
    out = cert.as_dict() if args.full else cert.summary()
    return (EXIT_OK if cert.admissible else EXIT_PROPERTY), out


def _profile_dict(p):
    return {"beta": np.asarray(p.beta), "pi": list(p.pi)}


def cmd_solve(doc, args):
    from .ppme_verifier import verify_ppme_direct
    from .solver import BudgetExceeded, SolverConfig, solve

    _require_valid(doc, need_profile=args.mode == "newton" and args.warm_start)
    g, f, c = doc.game, doc.family, doc.cost
    mode = "admissibility-newton" if args.mode == "newton" else args.mode
    kw = dict(mode=mode, restarts=args.restarts, seed=args.seed, grid=args.grid,
              history_free=args.history_free)
    if args.max_iters is not None:
        kw["max_iters"] = args.max_iters
    try:
        config = SolverConfig(**kw)
    except ValueError as exc:
        raise InvalidInput(str(exc)) from None
    warm = None
    if args.mode == "newton" and args.warm_start:
        from .value_engine import evaluate_policy

        vt = evaluate_policy(g, f, c, doc.profile)
        warm = (doc.profile, vt.J, vt.V)
    try:
        res = solve(g, f, c, config, warm)
    except BudgetExceeded as exc:
        return EXIT_SOLVER, {"error": str(exc), "count": exc.count, "budget": exc.budget}
    if args.mode == "enumerate":
        return EXIT_OK, {"count": len(res), "equilibria": [_profile_dict(p) for p in res]}
    if args.trace:
        with open(args.trace, "w", encoding="utf-8") as fh:
            fh.write(res.trace_csv())
    confirmed = bool(verify_ppme_direct(res.profile, g, f, c).is_ppme)
    out = {
        "converged": bool(res.converged),
        "confirmed_by_direct_check": confirmed,
        "restart": res.restart,
        "iterations": len(res.trace),
        "profile": _profile_dict(res.profile),
        "certificate": res.certificate.summary(),
    }
    return (EXIT_OK if res.converged and confirmed else EXIT_SOLVER), out


def cmd_transform_pi(doc, args):
    from .perfect_info import transform_to_pi_ppme, verify_pi_ppme

    _require_valid(doc)
    tr = transform_to_pi_ppme(doc.game, doc.family, doc.cost, doc.profile)
    ver = verify_pi_ppme(doc.game, tr.pi_scheme, tr.pi_star, tr.sab_cost)
    report = {"equivalence": tr.report(), "pi_ppme": ver.as_dict()}
    new = Document(doc.game, tr.pi_scheme.family, tr.sab_cost, tr.profile(), {})
    ok = tr.max_value_gap <= 1e-6 and ver.is_ppme
    return (EXIT_OK if ok else EXIT_PROPERTY), report, new


def cmd_recover_ppme(doc, args):
    from .perfect_info import PerfectInfoScheme, find_fp_tau

    _require_valid(doc)
    g, f, p = doc.game, doc.family, doc.profile
    if doc.cost.kind != "SAB":
        raise InvalidInput("recover-ppme needs an SAB cost")
    if any(t != g.n_states for t in f.type_counts):
        raise InvalidInput("recover-ppme needs one type per state for every agent")
    beta = np.asarray(p.beta)
    if np.any(beta != beta[:, :1]):
        raise InvalidInput("recover-ppme needs a history-constant cognition choice")
    scheme = PerfectInfoScheme(f, tuple(int(b) for b in beta[:, 0]))
    xi = scheme.xi
    if args.init == "xi":
        init = [np.array(x) for x in xi]
    else:
        init = [np.full(np.shape(x), 1.0 / g.n_states) for x in xi]
    fp = find_fp_tau(g, scheme, p.pi, init, max_iters=args.max_iters, sab_cost=doc.cost, alpha=args.alpha)
    fam, cost, prof = fp.assembled
    report = {"fixed_point": fp.report(), "verification": fp.verification.as_dict(), "tau": fp.tau}
    code = EXIT_SOLVER if not fp.converged else (EXIT_OK if fp.verification.is_ppme else EXIT_PROPERTY)
    return code, report, Document(g, fam, cost, prof, {})


COMMANDS = {
    "validate": cmd_validate,
    "inspect": cmd_inspect,
    "evaluate": cmd_evaluate,
    "simulate": cmd_simulate,
    "verify": cmd_verify,
    "admissibility": cmd_admissibility,
    "solve": cmd_solve,
    "transform-pi": cmd_transform_pi,
    "recover-ppme": cmd_recover_ppme,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sgia", description="Tabular stochastic games with costly signal acquisition.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("file", help="game-spec JSON file")
        p.add_argument("--out", help="write the report (or output document) here instead of stdout")
        p.add_argument("--seed", type=int, default=0)
        return p

    add("validate", "run all structural validators")
    add("inspect", "print dimensions and a short summary")
    p = add("evaluate", "exact values of the profile")
    p.add_argument("--method", choices=("direct", "iterate"), default="direct")
    p = add("simulate", "Monte Carlo estimate of history values")
    p.add_argument("--episodes", type=int, default=10000)
    p.add_argument("--horizon", type=int, default=None)
    p.add_argument("--history", type=int, default=0)
    p = add("verify", "equilibrium test of the profile")
    p.add_argument("--mode", choices=("direct", "opt", "gfpa", "cross"), default="direct")
    p.add_argument("--form", choices=("menu", "printed"), default="menu")
    p.add_argument("--joint-deviation", action="store_true")
    p.add_argument("--z-tol", type=float, default=1e-7)
    p = add("admissibility", "local admissibility certificate")
    p.add_argument("--mode", choices=("menu", "printed"), default="menu")
    p.add_argument("--full", action="store_true", help="include every cell record")
    p = add("solve", "search for equilibria")
    p.add_argument("--mode", choices=("enumerate", "penalty", "newton"), default="penalty")
    p.add_argument("--restarts", type=int, default=1)
    p.add_argument("--max-iters", type=int, default=None)
    p.add_argument("--grid", type=int, default=1)
    p.add_argument("--history-free", action="store_true")
    p.add_argument("--warm-start", action="store_true", help="newton: start from the file's profile")
    p.add_argument("--trace", help="write iteration CSV here")
    add("transform-pi", "perfect-information profile with equal values")
    p = add("recover-ppme", "fixed point of the excess-value update from a perfect-information profile")
    p.add_argument("--max-iters", type=int, default=10000)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--init", choices=("xi", "uniform"), default="xi")
    return ap


def _manifest(args, digest, elapsed):
    config = {k: v for k, v in sorted(vars(args).items()) if k not in ("command", "file", "out")}
    return {
        "command": args.command,
        "input_sha256": digest,
        "config": config,
        "version": __version__,
        "seed": args.seed,
        "wall_clock_seconds": round(elapsed, 6),
    }


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    start = time.perf_counter()
    digest = None
    doc_out = None
    try:
        doc, digest = _read(args.file)
        out = COMMANDS[args.command](doc, args)
        code, result = out[0], out[1]
        if len(out) > 2:
            doc_out = out[2]
    except InvalidInput as exc:
        code, result = EXIT_INVALID, {"error": str(exc), **exc.details}
    except (StructuralError, ContractError) as exc:
        code, result = EXIT_INVALID, {"error": str(exc)}
    manifest = _manifest(args, digest, time.perf_counter() - start)
    if doc_out is not None:
        doc_out.meta = {"manifest": manifest, "report": _jsonable(result)}
        text = canonical_json(to_dict(doc_out), allow_nonfinite=True)
    else:
        text = canonical_json({"manifest": manifest, "exit_code": code, "result": _jsonable(result)},
                              allow_nonfinite=True)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return code


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
