"""Command-line frontend: ybus, check, perturb and repro subcommands.

Exit codes are a stable contract: 0 ok / qualification holds, 2 input
error, 3 qualification fails, 4 infeasible point, 5 reproduction
mismatch. Reports are JSON-first and embed the tolerances and seed used.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import cases as fixtures
from . import constraints as con
from . import cqkit, perturb
from .netmodel import Case, CaseError, build_ybus, load_case
from .powerflow import (PFSetpoints, PowerFlowError, state_from_list,
                        state_to_list, solve_power_flow)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_LICQ_FAILS = 3
EXIT_INFEASIBLE = 4
EXIT_REPRO_MISMATCH = 5


def _positive(text: str) -> float:
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return value


def _emit(payload: dict, out: str | None) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True)
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


def _tolerances(args) -> dict:
    return {
        "act_tol": args.act_tol,
        "eq_tol": args.eq_tol,
        "pf_tol": args.pf_tol,
        "stat_tol": args.stat_tol,
        "rank_ulp_scale": args.rank_tol_scale,
    }


def _load_input(args) -> tuple[Case, "fixtures.FixtureBundle | None"]:
    if args.case and args.builtin:
        raise CaseError("give either --case or --builtin, not both")
    if args.case:
        return load_case(Path(args.case).read_text()), None
    if args.builtin:
        fix = fixtures.builtin(args.builtin, alpha=args.alpha)
        return fix.case, fix
    raise CaseError("one of --case or --builtin is required")


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--case", help="path to a JSON case document")
    parser.add_argument("--builtin", choices=fixtures.BUILTIN_NAMES,
                        help="built-in fixture name")
    parser.add_argument("--alpha", type=_positive, default=1.0,
                        help="coupling parameter for the ex1 fixture")
    parser.add_argument("--act-tol", type=_positive, default=1e-6)
    parser.add_argument("--eq-tol", type=_positive, default=1e-8)
    parser.add_argument("--pf-tol", type=_positive, default=1e-10)
    parser.add_argument("--stat-tol", type=_positive, default=1e-8)
    parser.add_argument("--rank-tol-scale", type=_positive, default=2.0 ** -52,
                        help="ulp scale of the relative rank tolerance")
    parser.add_argument("--out", help="write the JSON report to this path")


def cmd_ybus(args) -> int:
    case, _ = _load_input(args)
    y = build_ybus(case.network)
    _emit(y.to_dict(), args.out)
    return EXIT_OK


def _parse_perturb_load(spec: str, n_bus: int) -> tuple[int, float]:
    try:
        bus_text, delta_text = spec.split(":", 1)
        bus = int(bus_text)
        delta = float(delta_text)
    except ValueError as exc:
        raise CaseError(
            f"--perturb-load expects BUS:DELTA, got {spec!r}") from exc
    if not 0 <= bus < n_bus:
        raise CaseError(f"--perturb-load bus {bus} does not exist")
    return bus, delta


def cmd_check(args) -> int:
    case, fix = _load_input(args)
    tols = _tolerances(args)

    if fix is not None and fix.name == "ex2":
        return _check_reduced_pair(fix, args, tols)

    if args.perturb_load:
        bus, delta = _parse_perturb_load(args.perturb_load, case.network.n_bus)
        case = perturb.shift_load(case, bus, delta)

    state = None
    if args.state:
        state = state_from_list(json.loads(Path(args.state).read_text()),
                                case.network)
    elif fix is not None and args.perturb_load:
        state, _, _ = perturb.nearest_feasible_point(
            case, fix.ground_truth, act_tol=args.act_tol,
            eq_tol=args.eq_tol, pf_tol=args.pf_tol)
        if state is None:
            print("no feasible point found near the fixture state",
                  file=sys.stderr)
            return EXIT_INFEASIBLE
    elif fix is not None:
        state = fix.ground_truth
    else:
        try:
            state = solve_power_flow(
                case.network, build_ybus(case.network),
                PFSetpoints(p_gen=case.gen_p.copy(), q_gen=case.gen_q.copy()),
                pf_tol=args.pf_tol).state
        except PowerFlowError as exc:
            print(f"power flow failed: {exc}", file=sys.stderr)
            return EXIT_INFEASIBLE

    ops = [con.build_operational(s, case.network.n_bus)
           for s in case.constraint_specs]
    cs = con.ConstraintSystem.for_network(
        case.network, build_ybus(case.network),
        tuple(op for op in ops if op.is_equality),
        tuple(op for op in ops if not op.is_equality),
        act_tol=args.act_tol, eq_tol=args.eq_tol, pf_tol=args.pf_tol)
    _, _, feasible = con.evaluate(cs, state)
    if not feasible:
        print("state is infeasible for the constraint system", file=sys.stderr)
        return EXIT_INFEASIBLE

    cq = cqkit.licq_check(cs, state, rank_ulp_scale=args.rank_tol_scale)
    cost = (fix.cost if fix is not None and fix.cost is not None
            else cqkit.CostSpec.from_terms(case.cost, case.network.n_bus))
    kkt = cqkit.kkt_solve(cs, state, cost, stat_tol=args.stat_tol,
                          rank_ulp_scale=args.rank_tol_scale)
    _emit({
        "tolerances": tols,
        "state": state_to_list(state),
        "cq": cq.to_dict(),
        "kkt": kkt.to_dict(),
    }, args.out)
    return EXIT_OK if cq.licq_holds else EXIT_LICQ_FAILS


def _check_reduced_pair(fix, args, tols) -> int:
    red = fix.reduced
    fixed = con.fixed_licq_check(
        red.system.h_ops, red.system.g_ops, red.point,
        act_tol=args.act_tol, rank_ulp_scale=args.rank_tol_scale)
    kkt = cqkit.kkt_solve(red.system, red.point, red.probe_cost,
                          stat_tol=args.stat_tol,
                          rank_ulp_scale=args.rank_tol_scale)
    _emit({
        "tolerances": tols,
        "view": "reduced (v, theta)",
        "point": red.point.tolist(),
        "fixed_licq": {
            "holds": fixed.holds,
            "rank": fixed.rank,
            "n_rows": fixed.n_rows,
            "sigma_min": fixed.sigma_min,
        },
        "kkt": kkt.to_dict(),
    }, args.out)
    return EXIT_OK if fixed.holds else EXIT_LICQ_FAILS


def cmd_perturb(args) -> int:
    case, fix = _load_input(args)
    model = perturb.make_model(args.model, case)
    report = perturb.run_genericity_experiment(
        case, model, trials=args.trials, seed=args.seed,
        act_tol=args.act_tol, eq_tol=args.eq_tol, pf_tol=args.pf_tol,
        rank_ulp_scale=args.rank_tol_scale)
    if args.format == "csv":
        text = report.to_csv()
        if args.out:
            Path(args.out).write_text(text)
        else:
            print(text, end="")
        return EXIT_OK
    if args.out:
        Path(args.out).write_text(report.to_json() + "\n")
        Path(args.out).with_suffix(".csv").write_text(report.to_csv())
    else:
        print(report.to_json())
    return EXIT_OK


def _norm_angle(u: np.ndarray, w: np.ndarray) -> float:
    un = u / np.linalg.norm(u)
    wn = w / np.linalg.norm(w)
    cross = abs(un[0] * wn[1] - un[1] * wn[0])
    return math.asin(min(1.0, cross))


def _repro_ex1(alpha: float) -> tuple[list[tuple[str, bool, str]], str, dict]:
    fix = fixtures.example1(alpha)
    checks: list[tuple[str, bool, str]] = []
    from .powerflow import pf_residual

    res = np.abs(pf_residual(fix.case.network, build_ybus(fix.case.network),
                             fix.ground_truth)).max()
    checks.append(("flow residual at the operating point <= 1e-12",
                   res <= 1e-12, f"|F|_inf = {res:.3e}"))
    cq = cqkit.licq_check(fix.system, fix.ground_truth)
    checks.append((f"active stack rank {fix.expected['rank']}/{fix.expected['m']}",
                   cq.numerical_rank == fix.expected["rank"]
                   and cq.m == fix.expected["m"] and not cq.licq_holds,
                   f"rank {cq.numerical_rank}/{cq.m}, sigma_min {cq.sigma_min:.3e}"))
    kkt = cqkit.kkt_solve(fix.system, fix.ground_truth, fix.cost)
    checks.append(("multiplier family is a ray",
                   kkt.classification is cqkit.Classification.RAY,
                   f"classification {kkt.classification.value}"))
    vertex_err = float(np.abs(kkt.particular
                              - np.array(fix.expected["ray_vertex"])).max())
    checks.append(("ray vertex matches to 1e-8", vertex_err <= 1e-8,
                   f"max err {vertex_err:.3e}"))
    want = np.array(fix.expected["ray_direction"])
    have = kkt.ray_direction
    dir_err = float(np.abs(have / np.linalg.norm(have)
                           - want / np.linalg.norm(want)).max())
    checks.append(("ray direction proportional to expected to 1e-8",
                   dir_err <= 1e-8, f"max err {dir_err:.3e}"))
    row = fix.expected["price_row"]
    price_ok = (abs(kkt.particular[row] + alpha) <= 1e-8
                and kkt.ray_direction[row] < 0
                and kkt.zeta_interval == (0.0, np.inf))
    checks.append((f"nodal price multiplier interval is (-inf, {-alpha}]",
                   price_ok,
                   f"vertex value {kkt.particular[row]:.12g}, "
                   f"direction component {kkt.ray_direction[row]:.6g}"))
    summary = (f"rank {cq.numerical_rank}/{cq.m}, "
               f"{kkt.classification.value}, nodal price <= {-alpha:g}")
    payload = {"cq": cq.to_dict(), "kkt": kkt.to_dict()}
    return checks, summary, payload


def _repro_ex2() -> tuple[list[tuple[str, bool, str]], str, dict]:
    fix = fixtures.example2()
    red = fix.reduced
    checks: list[tuple[str, bool, str]] = []
    h_vals, g_vals, _ = con.evaluate(red.system, red.point)
    checks.append(("constraint values vanish at the crossing point to 1e-9",
                   abs(h_vals[0]) <= 1e-9 and abs(g_vals[0]) <= 1e-9,
                   f"h = {h_vals[0]:.3e}, g = {g_vals[0]:.3e}"))
    grad_h = red.system.h_ops[0].gradient(red.point)
    grad_g = red.system.g_ops[0].gradient(red.point)
    angle = _norm_angle(grad_h, grad_g)
    checks.append(("gradient parallelism angle <= 1e-6 rad", angle <= 1e-6,
                   f"angle = {angle:.3e}"))
    fixed = con.fixed_licq_check(red.system.h_ops, red.system.g_ops, red.point)
    checks.append(("fixed-constraint qualification fails (rank 1 of 2)",
                   not fixed.holds and fixed.rank == 1 and fixed.n_rows == 2,
                   f"rank {fixed.rank}/{fixed.n_rows}"))
    kkt = cqkit.kkt_solve(red.system, red.point, red.probe_cost)
    checks.append(("no multipliers for the probe cost (residual >= 0.1)",
                   kkt.classification is cqkit.Classification.NONE
                   and kkt.stationarity_residual >= 0.1,
                   f"residual {kkt.stationarity_residual:.6f}"))
    summary = f"tangent constraints, {kkt.classification.value}"
    return checks, summary, {"fixed_rank": fixed.rank, "kkt": kkt.to_dict()}


def _repro_ex3() -> tuple[list[tuple[str, bool, str]], str, dict]:
    fix = fixtures.example3()
    checks: list[tuple[str, bool, str]] = []
    from .powerflow import pf_residual

    net = fix.case.network
    res = np.abs(pf_residual(net, build_ybus(net), fix.ground_truth)).max()
    checks.append(("flat no-load profile solves the flow equations exactly",
                   res == 0.0, f"|F|_inf = {res:.3e}"))
    model = perturb.line_model(fix.case)
    jac = perturb.param_jacobian(model, net, fix.ground_truth)
    max_entry = float(np.abs(jac).max()) if jac.size else 0.0
    hyp = perturb.check_rank_hypothesis(model, net, fix.ground_truth)
    checks.append(("line parameter Jacobian vanishes (entries <= 1e-14)",
                   max_entry <= 1e-14, f"max entry {max_entry:.3e}"))
    checks.append(("line parameter rank 0, hypothesis not satisfied",
                   hyp.rank == 0 and not hyp.satisfied,
                   f"rank {hyp.rank}/{hyp.required}"))
    summary = f"LINE param rank {hyp.rank}"
    return checks, summary, {"hypothesis": hyp.to_dict()}


def cmd_repro(args) -> int:
    which = args.which
    if which == "ex1":
        checks, summary, payload = _repro_ex1(args.alpha)
    elif which == "ex2":
        checks, summary, payload = _repro_ex2()
    else:
        checks, summary, payload = _repro_ex3()
    checks = [(label, bool(flag), detail) for label, flag, detail in checks]
    ok = all(flag for _, flag, _ in checks)
    for label, flag, detail in checks:
        print(f"  [{'PASS' if flag else 'FAIL'}] {label} ({detail})")
    print(f"{which}: {summary}: {'PASS' if ok else 'FAIL'}")
    payload = {"which": which, "ok": ok, "summary": summary,
               "checks": [{"label": l, "ok": f, "detail": d}
                          for l, f, d in checks], **payload}
    if args.out:
        Path(args.out).write_text(
            json.dumps(payload, indent=2, sort_keys=True) + "\n")
    if not ok:
        failed = [l for l, f, _ in checks if not f]
        print(f"failed assertions: {failed}", file=sys.stderr)
        return EXIT_REPRO_MISMATCH
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="opfdiag",
        description=("Constraint-qualification and KKT multiplier "
                     "diagnostics for AC power flow systems"))
    sub = parser.add_subparsers(dest="command", required=True)

    p_ybus = sub.add_parser("ybus", help="dump the nodal admittance matrix")
    _add_common(p_ybus)
    p_ybus.set_defaults(func=cmd_ybus)

    p_check = sub.add_parser(
        "check", help="qualification check and multiplier classification")
    _add_common(p_check)
    p_check.add_argument("--state", help="path to a flat JSON state vector")
    p_check.add_argument("--perturb-load", metavar="BUS:DELTA",
                         help="shift one bus's real load before checking")
    p_check.set_defaults(func=cmd_check)

    p_pert = sub.add_parser("perturb", help="Monte Carlo genericity experiment")
    _add_common(p_pert)
    p_pert.add_argument("--model", choices=["load", "shunt", "line"],
                        required=True)
    p_pert.add_argument("--trials", type=int, default=1000)
    p_pert.add_argument("--seed", type=int,
                        default=int(os.environ.get("CQA_SEED", "0")))
    p_pert.add_argument("--format", choices=["json", "csv"], default="json")
    p_pert.set_defaults(func=cmd_perturb)

    p_repro = sub.add_parser(
        "repro", help="re-run a built-in fixture against its ground truth")
    p_repro.add_argument("which", choices=fixtures.BUILTIN_NAMES)
    p_repro.add_argument("--alpha", type=_positive, default=1.0)
    p_repro.add_argument("--out")
    p_repro.set_defaults(func=cmd_repro)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "trials", 0) and args.trials < 0:
        print("--trials must be non-negative", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except con.InfeasiblePointError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (CaseError, con.ConstraintError, perturb.PerturbationError,
            OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
