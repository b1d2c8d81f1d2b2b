"""Command-line front end: single runs, the full comparison protocol,
re-checking stored reports, the brute-force oracle, and the recursion audit.

Options may come from a flat key=value config file (one option per line,
`#` starts a comment, keys match the long flag names); explicit command-line
flags override file values, which override built-in defaults.
"""

from __future__ import annotations

import argparse
import dataclasses
import math
import sys

import numpy as np

from .bounds import certify, recursion_audit
from .costs import sigma_eval
from .harness import (
    ExperimentReport,
    ReportRow,
    Scenario,
    ScenarioConfig,
    aggregate_report,
    brute_force_oracle,
    emit_report,
    gen_scenario,
    load_report,
    run_comparison,
    run_table1,
    scenario_params,
)
from .policy import build_schedule, run_policy

__all__ = ["main"]

COST_ALIASES = {"quad": "quadratic", "nonconvex": "nonconvex",
                "setdist": "set_distance"}
AUDIT_SLACK_FLOOR = -1e-6
RECHECK_REL_TOL = 1e-9


def _parse_n_list(text) -> tuple:
    try:
        values = tuple(int(part) for part in str(text).split(",") if part.strip())
    except ValueError:
        raise ValueError(f"N list must be comma-separated integers, got {text!r}")
    if not values:
        raise ValueError(f"N list must not be empty, got {text!r}")
    return values


# option name -> (coercion from config-file string, built-in default)
_OPTION_SPEC = {
    "seed": (int, 0),
    "cost": (str, "quad"),
    "n": (int, 2),
    "m": (int, 1),
    "T": (int, 15),
    "N": (int, 6),
    "M": (int, None),
    "m_rule": (str, "half"),
    "out": (str, None),
    "format": (str, "csv"),
    "sample_budget": (int, 100),
    "iters": (int, 10),
    "N_list": (_parse_n_list, (6, 9)),
    "grid_res": (float, 1e-3),
    "u_box": (float, 2.0),
    "infile": (str, None),
}


def _read_config_file(path) -> dict:
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(
                    f"{path}:{lineno}: expected key=value, got {raw.strip()!r}"
                )
            key, value = line.split("=", 1)
            values[key.strip().replace("-", "_")] = value.strip()
    return values


def _resolve(args, names) -> dict:
    """Layer option sources: defaults, then config file, then CLI flags."""
    file_vals = {}
    if getattr(args, "config", None):
        file_vals = _read_config_file(args.config)
        unknown = set(file_vals) - set(_OPTION_SPEC)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
    opts = {}
    for name in names:
        coerce, default = _OPTION_SPEC[name]
        value = getattr(args, name, None)
        if value is None and name in file_vals:
            value = coerce(file_vals[name])
        if value is None:
            value = default
        opts[name] = value
    return opts


def _cost_kind(alias: str) -> str:
    if alias not in COST_ALIASES:
        raise ValueError(
            f"cost must be one of {sorted(COST_ALIASES)}, got {alias!r}"
        )
    return COST_ALIASES[alias]


def _pick_policy(N: int, M, m_rule: str) -> tuple:
    if M is not None:
        M = int(M)
        if M == max(1, N // 2):
            return "overlap", M
        if M == N - 1:
            return "standard", M
        return "custom", M
    if m_rule == "half":
        return "overlap", max(1, N // 2)
    if m_rule == "standard":
        return "standard", max(1, N - 1)
    raise ValueError(f"m-rule must be half or standard, got {m_rule!r}")


def _emit(report: ExperimentReport, fmt: str, out) -> None:
    if out is None:
        emit_report(report, fmt, sys.stdout)
    else:
        emit_report(report, fmt, out)
        print(f"wrote {len(report.rows)} rows to {out}", file=sys.stderr)


def _cmd_run(args) -> int:
    opts = _resolve(args, ("seed", "cost", "n", "m", "T", "N", "M", "m_rule",
                           "out", "format", "sample_budget"))
    kind = _cost_kind(opts["cost"])
    policy, M = _pick_policy(opts["N"], opts["M"], opts["m_rule"])
    cfg = ScenarioConfig(cost_kind=kind, n=opts["n"], m=opts["m"],
                         T=opts["T"], N=opts["N"])
    sc = gen_scenario(opts["seed"], cfg)
    sc = dataclasses.replace(sc, policies=((policy, M),))
    rows = run_comparison(sc, sample_budget=opts["sample_budget"])
    report = ExperimentReport(
        config={
            "command": "run", "seed": opts["seed"], "cost": opts["cost"],
            "n": opts["n"], "m": opts["m"], "T": opts["T"], "N": opts["N"],
            "M": M, "policy": policy, "sample_budget": opts["sample_budget"],
        },
        rows=rows,
    )
    _emit(report, opts["format"], opts["out"])
    return 0


def _cmd_table1(args) -> int:
    opts = _resolve(args, ("iters", "N_list", "n", "m", "T", "out", "format",
                           "sample_budget"))
    base = ScenarioConfig(n=opts["n"], m=opts["m"], T=opts["T"],
                          N=min(opts["N_list"]))
    report = run_table1(iters=opts["iters"], N_list=opts["N_list"],
                        config=base, sample_budget=opts["sample_budget"])
    _emit(report, opts["format"], opts["out"])
    print("aggregate disturbance gain (mean cost / mean energy):",
          file=sys.stderr)
    for cell in aggregate_report(report):
        print(f"  {cell.cost_kind:13s} {cell.policy:8s} N={cell.N:<3d} "
              f"gain={cell.gain:.6f} over {cell.count} runs", file=sys.stderr)
    return 0


def _scenario_for_row(row: ReportRow) -> Scenario:
    cfg = ScenarioConfig(cost_kind=row.cost_kind, n=row.n, m=row.m,
                         T=row.T, N=row.N)
    return gen_scenario(row.seed, cfg)


def _replay_row(row: ReportRow, sample_budget: int):
    sc = _scenario_for_row(row)
    params = scenario_params(sc, sample_budget=sample_budget)
    sched = build_schedule(row.N, row.M, row.T)
    res = run_policy(sc.sys, sc.costs, sc.w_full, sc.x1, sched)
    return sc, params, sched, res


def _close(a: float, b: float) -> bool:
    if math.isnan(a) or math.isnan(b):
        return math.isnan(a) and math.isnan(b)
    if math.isinf(a) or math.isinf(b):
        return a == b
    return abs(a - b) <= RECHECK_REL_TOL * max(1.0, abs(a), abs(b))


def _cmd_certify(args) -> int:
    report = load_report(args.infile)
    budget = args.sample_budget
    if budget is None:
        budget = int(report.config.get("sample_budget", 100))
    failures = 0
    for i, row in enumerate(report.rows):
        sc, params, sched, res = _replay_row(row, budget)
        cert = certify(res, params, sched,
                       sigma_x1=float(sigma_eval(sc.costs, sc.x1)))
        problems = []
        if not _close(res.J, row.J):
            problems.append(f"J {res.J!r} != stored {row.J!r}")
        if not _close(cert.bound, row.bound):
            problems.append(f"bound {cert.bound!r} != stored {row.bound!r}")
        if cert.satisfied != row.satisfied:
            problems.append(f"satisfied {cert.satisfied} != stored {row.satisfied}")
        verdict = "ok" if not problems else "MISMATCH: " + "; ".join(problems)
        print(f"row {i}: seed={row.seed} {row.cost_kind} {row.policy} "
              f"N={row.N} M={row.M} J={row.J:.6g} bound={row.bound:.6g} "
              f"satisfied={str(row.satisfied).lower()} recheck={verdict}")
        failures += bool(problems)
    print(f"certify: {len(report.rows)} rows, {failures} mismatches")
    return 1 if failures else 0


def _cmd_audit(args) -> int:
    report = load_report(args.infile)
    budget = args.sample_budget
    if budget is None:
        budget = int(report.config.get("sample_budget", 100))
    failures = 0
    for i, row in enumerate(report.rows):
        sc, params, sched, res = _replay_row(row, budget)
        head = (f"row {i}: seed={row.seed} {row.cost_kind} {row.policy} "
                f"N={row.N} M={row.M}")
        try:
            slacks = recursion_audit(res, params, sc.sys, sc.costs, sc.w_full)
        except ValueError as exc:
            # contraction factor undefined below the stability threshold;
            # nothing to audit for such rows
            print(f"{head} skipped: {exc}")
            continue
        worst = min(slacks) if slacks else float("nan")
        ok = (not slacks) or worst >= AUDIT_SLACK_FLOOR
        print(f"{head} intervals={len(slacks)} "
              f"min_slack={worst:.3e} {'pass' if ok else 'FAIL'}")
        failures += not ok
    print(f"audit: {len(report.rows)} rows, {failures} failures")
    return 1 if failures else 0


def _cmd_oracle(args) -> int:
    opts = _resolve(args, ("seed", "cost", "n", "m", "T", "grid_res", "u_box",
                           "sample_budget"))
    kind = _cost_kind(opts["cost"])
    cfg = ScenarioConfig(cost_kind=kind, n=opts["n"], m=opts["m"],
                         T=opts["T"], N=opts["T"])  # full preview: one window
    sc = gen_scenario(opts["seed"], cfg)
    J_grid, u_star = brute_force_oracle(sc, opts["grid_res"], opts["u_box"])
    sched = build_schedule(sc.N, max(1, sc.N - 1), sc.T)
    res = run_policy(sc.sys, sc.costs, sc.w_full, sc.x1, sched)
    diff = res.J - J_grid
    print(f"J_grid={J_grid!r}")
    print(f"J_policy={res.J!r}")
    print(f"diff={diff!r}")
    print("u_star=" + np.array2string(u_star.ravel(), separator=","))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prhc",
        description="Receding-horizon control with overlapping planning "
                    "windows: experiments, certificates, and audits.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_scenario_flags(p, with_N=True):
        p.add_argument("--seed", type=int, help="scenario seed (default 0)")
        p.add_argument("--cost", choices=sorted(COST_ALIASES),
                       help="cost family (default quad)")
        p.add_argument("--n", type=int, help="state dimension (default 2)")
        p.add_argument("--m", type=int, help="input dimension (default 1)")
        p.add_argument("--T", type=int, help="task length (default 15)")
        if with_N:
            p.add_argument("--N", type=int, help="preview length (default 6)")
        p.add_argument("--config", help="key=value option file; flags win")

    run_p = sub.add_parser("run", help="run one scenario under one policy")
    add_scenario_flags(run_p)
    run_p.add_argument("--M", type=int,
                       help="explicit overlap; wins over --m-rule")
    run_p.add_argument("--m-rule", dest="m_rule", choices=("half", "standard"),
                       help="overlap rule when --M is absent (default half)")
    run_p.add_argument("--out", help="output path (default stdout)")
    run_p.add_argument("--format", choices=("csv", "json"),
                       help="output format (default csv)")
    run_p.add_argument("--sample-budget", dest="sample_budget", type=int,
                       help="solve budget for sampled envelope constants")
    run_p.set_defaults(func=_cmd_run)

    t1_p = sub.add_parser("table1", help="full policy-comparison protocol")
    t1_p.add_argument("--iters", type=int, help="seeds per cell (default 10)")
    t1_p.add_argument("--N-list", dest="N_list", type=_parse_n_list,
                      help="comma-separated preview lengths (default 6,9)")
    t1_p.add_argument("--n", type=int, help="state dimension (default 2)")
    t1_p.add_argument("--m", type=int, help="input dimension (default 1)")
    t1_p.add_argument("--T", type=int, help="task length (default 15)")
    t1_p.add_argument("--out", help="output path (default stdout)")
    t1_p.add_argument("--format", choices=("csv", "json"),
                      help="output format (default csv)")
    t1_p.add_argument("--sample-budget", dest="sample_budget", type=int,
                      help="solve budget for sampled envelope constants")
    t1_p.add_argument("--config", help="key=value option file; flags win")
    t1_p.set_defaults(func=_cmd_table1)

    cert_p = sub.add_parser("certify",
                            help="replay a stored report and re-check bounds")
    cert_p.add_argument("--in", dest="infile", required=True,
                        help="stored report (csv or json)")
    cert_p.add_argument("--sample-budget", dest="sample_budget", type=int,
                        help="override the stored sampling budget")
    cert_p.set_defaults(func=_cmd_certify)

    or_p = sub.add_parser("oracle",
                          help="brute-force grid check of the full-preview run")
    add_scenario_flags(or_p, with_N=False)
    or_p.add_argument("--grid-res", dest="grid_res", type=float,
                      help="grid spacing (default 1e-3)")
    or_p.add_argument("--u-box", dest="u_box", type=float,
                      help="input box half-width (default 2.0)")
    or_p.add_argument("--sample-budget", dest="sample_budget", type=int,
                      help="unused; accepted for config-file compatibility")
    or_p.set_defaults(func=_cmd_oracle)

    audit_p = sub.add_parser("audit",
                             help="recursion audit of a stored report")
    audit_p.add_argument("--in", dest="infile", required=True,
                         help="stored report (csv or json)")
    audit_p.add_argument("--sample-budget", dest="sample_budget", type=int,
                         help="override the stored sampling budget")
    audit_p.set_defaults(func=_cmd_audit)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
