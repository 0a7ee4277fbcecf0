"""Command line: ``skembed check|solve|ergodic|simulate|report <problem.json>``.

Exit codes: 0 success, 1 input error, 2 infeasible, 3 numerical failure.
Several problem files may be given; they are processed concurrently with at
most ``SKEMBED_THREADS`` workers.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from xml.sax.saxutils import escape

import numpy as np

from . import __version__
from .chain import ERGODIC, invariant_distribution
from .costs import TIME, TwistReport, check_semi_supermartingale, check_submartingale, check_twist
from .dual import solve_dual_iterative
from .errors import Infeasible, InputError, NoGradient, SkembedError
from .lp import (
    complementary_dual,
    dual_from_lp,
    dual_value_of,
    ergodic_filling_lp,
    extract_stopping_rule,
    primal_embedding_lp,
)
from .potential import check_balayage, ergodic_min_time, is_supermedian
from .problem import SCHEMA_VERSION, Problem, load_problem
from .sim import SimConfig, compare_empirical, sample_paths, write_frequencies_csv
from .snell import snell_envelope
from .verify import (
    barrier_report,
    check_stop_go,
    contact_set,
    local_time_check,
    regularized_time_check,
    verify_optimality,
)

log = logging.getLogger("skembed")

EXIT_OK, EXIT_INPUT, EXIT_INFEASIBLE, EXIT_NUMERIC = 0, 1, 2, 3


def _twist(problem: Problem) -> TwistReport:
    try:
        return check_twist(problem.aug, problem.cost, problem.mu)
    except NoGradient:
        return TwistReport("inconclusive", None, {"reason": "no gradient table supplied"})


def _tolerances(problem: Problem, args) -> dict:
    return {
        "gap": float(args.tol if args.tol is not None else problem.options["tol"]),
        "contact": args.ctol if args.ctol is not None else problem.options.get("ctol"),
        "support": 1e-10,
        "martingale": 1e-8,
        "supermedian": 1e-9,
    }


def _base_report(command: str, problem: Problem, args) -> dict:
    return {
        "schema": SCHEMA_VERSION,
        "command": command,
        "version": __version__,
        "mode": problem.chain.mode,
        "n_states": problem.chain.n,
        "cost_kind": problem.cost_kind,
        "augmented_states": None if problem.aug is None else problem.aug.N,
        "tolerances": _tolerances(problem, args),
        "warnings": list(problem.warnings),
    }


# ---------------------------------------------------------------- commands


def cmd_check(problem: Problem, args):
    rep = _base_report("check", problem, args)
    code = EXIT_OK
    if problem.aug is not None and problem.cost is not None:
        sub = check_submartingale(problem.aug, problem.cost, problem.mu)
        rep["submartingale"] = sub
        rep["semi_supermartingale"] = check_semi_supermartingale(problem.aug, problem.cost, problem.cost.D, problem.mu)
        rep["twist"] = _twist(problem).to_dict()
    bal = check_balayage(problem.chain, problem.mu, problem.nu)
    rep.update(bal.to_dict())
    if not bal.ordered:
        code = EXIT_INFEASIBLE
        if bal.certificate is not None:
            rep["certificate_reverified"] = bool(
                is_supermedian(problem.chain, bal.certificate, tol=1e-9) and bal.margin >= 1e-9
            )
    return rep, code


def _solve_core(problem: Problem, args):
    aug, cost, mu, nu = problem.aug, problem.cost, problem.mu, problem.nu
    tol = _tolerances(problem, args)
    occ = primal_embedding_lp(aug, cost, mu, nu)
    dual = dual_from_lp(aug, cost, mu, nu, occ, tol=tol["gap"])
    return occ, dual


def cmd_solve(problem: Problem, args):
    if problem.chain.mode == ERGODIC:
        raise InputError("solve needs an absorbing chain; use 'ergodic' for ergodic problems")
    rep = _base_report("solve", problem, args)
    aug, cost, mu, nu = problem.aug, problem.cost, problem.mu, problem.nu
    tol = rep["tolerances"]
    method = args.method or problem.options["method"]
    rep["method"] = method
    try:
        occ, dual = _solve_core(problem, args)
    except Infeasible as exc:
        rep["ordered"] = False
        if exc.certificate is not None:
            rep["certificate"] = [float(v) + 0.0 for v in exc.certificate]
        rep["message"] = str(exc)
        return rep, EXIT_INFEASIBLE
    rule = extract_stopping_rule(occ)
    rep["objective"] = occ.objective
    rep["expected_time"] = occ.expected_time
    rep["gap"] = dual.gap
    rep["psi"] = dual.psi.tolist()
    rep["dual_value"] = dual.dual_value
    rep["occupation"] = occ.to_dict()
    rep["stopping_rule"] = {"p": rule.p.tolist(), "deterministic": rule.deterministic}
    rep["states"] = {"x": aug.proj_x.tolist(), "aux": aug.proj_a.tolist()}
    rep["verification"] = verify_optimality(aug, cost, mu, nu, dual.psi, dual.V, occ, ctol=tol["contact"],
                                            gap_tol=tol["gap"])
    rep["stop_go"] = check_stop_go(aug, cost, occ, rule, psi=dual.psi)
    twist = _twist(problem)
    rep["twist"] = twist.to_dict()
    contact_psi, contact_V = dual.psi, dual.V
    if aug.kind == TIME or twist.holds == "yes":
        cd = complementary_dual(aug, cost, mu, nu, occ)
        contact_psi, contact_V = cd.psi, cd.V
        rep["barrier_dual"] = {"psi": cd.psi.tolist(), "gap": cd.gap}
        if twist.holds == "yes":
            rep["barrier"] = barrier_report(aug, cost, mu, nu, cd.psi, cd.V, occ, twist, ctol=tol["contact"])
    if method in ("iterative", "both"):
        psi_it, diag = solve_dual_iterative(problem.chain, aug, cost, mu, nu, target=occ.objective,
                                            tol=min(1e-6, 100 * tol["gap"]))
        rep["iterative"] = {"psi": psi_it.tolist(), **diag.to_dict()}
    code = EXIT_OK
    if not rep["verification"]["passed"] or not rep["stop_go"]["passed"]:
        code = EXIT_NUMERIC
    if args.csv:
        _write_occupation_csv(args.csv, problem, occ, rule)
    if args.plot:
        if aug.kind != TIME:
            rep["warnings"].append("--plot needs a time auxiliary; no plot written")
        else:
            cs = contact_set(aug, contact_psi, contact_V, tol["contact"])
            write_barrier_svg(args.plot, problem, occ, cs.slack, cs.ctol)
            rep["plot"] = str(args.plot)
    return rep, code


def cmd_ergodic(problem: Problem, args):
    if problem.chain.mode != ERGODIC:
        raise InputError("ergodic needs an ergodic chain")
    rep = _base_report("ergodic", problem, args)
    chain, mu, nu = problem.chain, problem.mu, problem.nu
    gamma = invariant_distribution(chain)
    mt = ergodic_min_time(chain, mu, nu)
    occ = ergodic_filling_lp(chain, mu, nu)
    diff = abs(mt.value - occ.objective)
    rep["invariant"] = gamma.mass.tolist()
    rep["potential"] = mt.to_dict()
    rep["filling_lp"] = {"value": occ.objective, "u": occ.u.tolist()}
    rep["value"] = mt.value
    rep["methods_agree"] = bool(diff <= 1e-8 * (1.0 + abs(mt.value)))
    rep["difference"] = diff
    rep["local_time"] = [local_time_check(chain, occ, x) for x in mt.argmax]
    rep["regularized"] = regularized_time_check(chain, occ, mu, mt.value, problem.options["beta_schedule"])
    code = EXIT_OK if rep["methods_agree"] and all(r["optimal"] for r in rep["local_time"]) else EXIT_NUMERIC
    return rep, code


def cmd_simulate(problem: Problem, args):
    if problem.chain.mode == ERGODIC:
        raise InputError("simulate needs an absorbing chain")
    rep = _base_report("simulate", problem, args)
    aug, cost, mu, nu = problem.aug, problem.cost, problem.mu, problem.nu
    occ, dual = _solve_core(problem, args)
    rule = extract_stopping_rule(occ)
    seed = args.seed if args.seed is not None else int(problem.options["seed"])
    n_paths = args.n_paths if args.n_paths is not None else int(problem.options["n_paths"])
    stats = sample_paths(aug, cost, mu, SimConfig(n_paths, seed, rule), V=dual.V)
    exact = np.append(nu.mass, nu.cemetery)
    cmp_ = compare_empirical(stats, exact, occ.objective)
    rep["exact"] = {"law": exact.tolist(), "objective": occ.objective, "expected_time": occ.expected_time}
    rep["simulation"] = stats.to_dict()
    rep["comparison"] = cmp_
    if args.csv:
        write_frequencies_csv(args.csv, stats, exact, problem.labels, cmp_["z_scores"])
    return rep, EXIT_OK if cmp_["passed"] else EXIT_NUMERIC


def cmd_report(problem: Problem, args):
    """Re-verify a saved solve report against the problem it came from."""
    rep = _base_report("report", problem, args)
    if not args.report:
        raise InputError("report needs --from <solve report.json>")
    with open(args.report) as fh:
        saved = json.load(fh)
    aug, cost, mu, nu = problem.aug, problem.cost, problem.mu, problem.nu
    psi = np.asarray(saved["psi"], dtype=float)
    u = np.asarray(saved["occupation"]["u"], dtype=float)
    s = np.asarray(saved["occupation"]["s"], dtype=float)
    if u.shape != (aug.N,) or psi.shape != (problem.chain.n,):
        raise InputError("saved report does not match this problem")
    primal = float(cost.lagrangian @ u)
    balance = u + s - aug.P.T @ u - aug.initial_law(mu)
    marg = np.bincount(aug.proj_x, weights=s, minlength=problem.chain.n) - nu.mass
    V = snell_envelope(aug, cost, psi).V
    U = dual_value_of(aug, mu, nu, psi, V)
    gap = primal - U
    tol = rep["tolerances"]["gap"]
    rep["primal_recomputed"] = primal
    rep["dual_recomputed"] = U
    rep["gap"] = gap
    rep["saved_gap"] = saved.get("gap")
    rep["feasibility_residual"] = float(max(np.abs(balance).max(), np.abs(marg).max(), -min(u.min(), s.min(), 0)))
    rep["reproduced"] = bool(abs(gap) <= tol * (1 + abs(primal)) and rep["feasibility_residual"] <= 1e-9)
    return rep, EXIT_OK if rep["reproduced"] else EXIT_NUMERIC


COMMANDS = {
    "check": cmd_check,
    "solve": cmd_solve,
    "ergodic": cmd_ergodic,
    "simulate": cmd_simulate,
    "report": cmd_report,
}


# ---------------------------------------------------------------- output


def _write_occupation_csv(path, problem: Problem, occ, rule) -> None:
    aug = problem.aug
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "aux", "x", "label", "u", "s", "p_stop"])
        for i in range(aug.N):
            x = int(aug.proj_x[i])
            w.writerow([i, int(aug.proj_a[i]), x, problem.chain.label(x), f"{occ.u[i]:.12g}", f"{occ.s[i]:.12g}",
                        f"{rule.p[i]:.12g}"])


def write_barrier_svg(path, problem: Problem, occ, slack, ctol, cell: int = 18) -> None:
    """Space-time grid: one column per time, one row per state.

    Dark cells stop, light cells continue, grey cells are unvisited; a red
    outline marks the contact set (slack within ``ctol``).
    """
    aug = problem.aug
    n, T = problem.chain.n, aug.T_max
    pad = 40
    width, height = pad + (T + 1) * cell + 10, pad + n * cell + 30
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" '
             f'font-size="10">',
             f'<rect width="{width}" height="{height}" fill="white"/>']
    for i in range(aug.N):
        t, x = int(aug.proj_a[i]), int(aug.proj_x[i])
        px, py = pad + t * cell, pad + x * cell
        if occ.s[i] > 1e-10:
            fill = "#1f3b73"
        elif occ.u[i] > 1e-10:
            fill = "#a9c4eb"
        else:
            fill = "#eeeeee"
        stroke = ' stroke="#c0392b" stroke-width="1.5"' if slack[i] <= ctol else ' stroke="#ffffff"'
        parts.append(f'<rect x="{px}" y="{py}" width="{cell - 1}" height="{cell - 1}" fill="{fill}"{stroke}>'
                     f'<title>t={t} x={escape(problem.chain.label(x))} u={occ.u[i]:.4g} s={occ.s[i]:.4g} '
                     f'slack={slack[i]:.3g}</title></rect>')
    for x in range(n):
        parts.append(f'<text x="{pad - 4}" y="{pad + x * cell + cell * 0.7}" text-anchor="end">'
                     f'{escape(problem.chain.label(x))}</text>')
    step = max(1, (T + 1) // 15)
    for t in range(0, T + 1, step):
        parts.append(f'<text x="{pad + t * cell + cell / 2}" y="{pad - 6}" text-anchor="middle">{t}</text>')
    parts.append(f'<text x="{pad}" y="{height - 10}">dark: stop, light: continue, grey: unvisited, '
                 f'red outline: contact set (ctol={ctol:.2g})</text>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def run_one(command: str, path: str, args):
    try:
        problem = load_problem(path)
        rep, code = COMMANDS[command](problem, args)
    except SkembedError as exc:
        rep = {"schema": SCHEMA_VERSION, "command": command, "error": type(exc).__name__, "message": str(exc)}
        if isinstance(exc, Infeasible) and exc.certificate is not None:
            rep["certificate"] = [float(v) + 0.0 for v in exc.certificate]
        code = exc.exit_code
    except (OSError, KeyError, TypeError, ValueError) as exc:
        rep = {"schema": SCHEMA_VERSION, "command": command, "error": type(exc).__name__, "message": str(exc)}
        code = EXIT_INPUT
    rep["problem"] = path
    rep["exit_code"] = code
    return _jsonable(rep), code


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="skembed", description="Optimal stopping embeddings on finite Markov chains.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, helptext in (
        ("check", "validate a problem and decide whether mu can be stopped into nu"),
        ("solve", "solve the primal and dual problems and verify optimality"),
        ("ergodic", "minimal embedding time on an ergodic chain"),
        ("simulate", "Monte Carlo check of the optimal stopping rule"),
        ("report", "re-verify a saved solve report"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("problems", nargs="+", metavar="problem.json")
        p.add_argument("--tol", type=float, default=None, help="duality gap tolerance (default 1e-8)")
        p.add_argument("--ctol", type=float, default=None, help="contact-set tolerance (default 1e-7 (1+|V|))")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--n-paths", type=int, default=None)
        p.add_argument("--method", choices=["lp", "iterative", "both"], default=None)
        p.add_argument("--plot", default=None, metavar="out.svg")
        p.add_argument("--csv", default=None, metavar="out.csv")
        p.add_argument("--out", default=None, metavar="report.json")
        p.add_argument("--from", dest="report", default=None, metavar="report.json")
        p.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    threads = max(1, int(os.environ.get("SKEMBED_THREADS", "1") or 1))
    if len(args.problems) > 1 and (args.plot or args.csv):
        print("--plot/--csv take a single problem file", file=sys.stderr)
        return EXIT_INPUT
    if len(args.problems) == 1:
        results = [run_one(args.command, args.problems[0], args)]
    else:
        with ThreadPoolExecutor(max_workers=min(threads, len(args.problems))) as pool:
            results = list(pool.map(lambda p: run_one(args.command, p, args), args.problems))
    reports = [r for r, _ in results]
    payload = reports[0] if len(reports) == 1 else reports
    text = json.dumps(payload, indent=2)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    for r in reports:
        if "error" in r:
            print(f"{r['problem']}: {r['error']}: {r['message']}", file=sys.stderr)
    return max(code for _, code in results)


if __name__ == "__main__":
    sys.exit(main())
