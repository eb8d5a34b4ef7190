"""Command-line experiments.

Exit codes: 0 success, 1 usage or configuration error, 2 a numerical check failed.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from tmoser import __version__
from tmoser.config import DEFAULTS, ConfigError, config_hash, load_raw, validate
from tmoser.constants import alternating_identity, harmonic_identity, make_context
from tmoser.grid import FunctionalOverflowWarning, log_grid
from tmoser.green import green_constant_A, green_tail_energy, solve_green, total_mass
from tmoser.maximizer import MaximizerOptions, ball_grid, dichotomy_report, maximize_on_ball, reference_values
from tmoser.profiles import (
    EpsTooLargeError,
    Test2Params,
    bubble,
    bubble_mass,
    bubble_pde_residual,
    sharpness_log_values,
    subcritical_quotients,
    test1_report,
    test2_sweep,
)

COMMANDS = {
    "constants": "dimension constants and the exact combinatorial identities",
    "bubble": "mass and PDE residual of the blow-up bubble",
    "green": "Green function, its constant A and the flux/tail identities",
    "maximize": "constrained maximizers on balls and blow-up diagnostics",
    "sweep-test1": "glued bubble/Green test functions over an eps sweep",
    "sweep-test2": "normalized Moser-type test functions over a (c, b) sweep (n > 2)",
    "sharpness": "Moser sequences above and below the critical exponent",
    "report": "run every command into subdirectories of --out",
}
EXIT_OK, EXIT_USAGE, EXIT_CHECK = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if v is None:
        return ""
    return str(v)


def write_csv(path: Path, header: list[str], rows: list) -> None:
    """Locale-independent CSV with full double precision."""
    lines = [",".join(header)]
    for row in rows:
        if isinstance(row, dict):
            row = [row.get(h) for h in header]
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


class Report:
    def __init__(self, command: str, cfg: dict, out: Path):
        self.command, self.cfg, self.out = command, cfg, out
        self.results: dict = {}
        self.checks: list[dict] = []

    def check(self, name: str, value, limit, passed: bool) -> None:
        self.checks.append({"name": name, "value": value, "limit": limit, "passed": bool(passed)})

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks)

    def payload(self) -> dict:
        return _jsonable(
            {
                "command": self.command,
                "version": __version__,
                "config": self.cfg,
                "config_hash": config_hash(self.cfg),
                "results": self.results,
                "checks": self.checks,
                "passed": self.passed,
            }
        )

    def write(self, name: str = "report.json") -> None:
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / name).write_text(json.dumps(self.payload(), indent=2, sort_keys=True) + "\n")

    def echo(self) -> None:
        for c in self.checks:
            mark = "PASS" if c["passed"] else "FAIL"
            print(f"  [{mark}] {c['name']}: {_fmt(c['value'])} (limit {_fmt(c['limit'])})")


# ---------------------------------------------------------------- commands


def cmd_constants(cfg, rep: Report) -> None:
    ctx = make_context(cfg["n"])
    table = {
        "n": ctx.n,
        "omega": ctx.omega,
        "alpha_n": ctx.alpha_n,
        "c_n": ctx.c_n,
        "harmonic": ctx.harmonic,
        "threshold_poly": ctx.threshold_poly,
    }
    rep.results["constants"] = table
    for k, v in table.items():
        print(f"{k:>15} = {_fmt(v)}")
    rows = [[k, v] for k, v in table.items()]
    write_csv(rep.out / "constants.csv", ["name", "value"], rows)
    ok_alt = all(l == r for l, r in (alternating_identity(m) for m in range(1, 13)))
    lhs, rhs = harmonic_identity(ctx.n)
    rep.check("alternating identity m=1..12", "exact" if ok_alt else "mismatch", "exact", ok_alt)
    rep.check(f"harmonic identity n={ctx.n}", f"{lhs}={rhs}", "exact", lhs == rhs)


def cmd_bubble(cfg, rep: Report) -> None:
    ctx = make_context(cfg["n"])
    R = cfg["bubble"]["rmax"]
    mass = bubble_mass(ctx, R)
    U = ctx.c_n * R**ctx.q
    closed = (U / (1 + U)) ** (ctx.n - 1)
    m = cfg["bubble"]["residual_nodes"]
    res = bubble_pde_residual(ctx, log_grid(ctx.n, 1e-3, 20.0, m, origin=False))
    res2 = bubble_pde_residual(ctx, log_grid(ctx.n, 1e-3, 20.0, 2 * m, origin=False))
    rep.results.update({"R": R, "mass": mass, "closed_form": closed, "residual": res, "residual_refined": res2})
    print(f"mass(B_{R:g}) = {_fmt(mass)}  closed form {_fmt(closed)}")
    print(f"PDE residual: {_fmt(res)} ({m} nodes), {_fmt(res2)} ({2 * m} nodes)")
    tol = cfg["tol"] if cfg["tol"] is not None else 1e-3
    rep.check("mass within tol of 1", abs(mass - 1), tol, abs(mass - 1) < tol)
    rep.check("mass matches closed form", abs(mass - closed), 1e-10, abs(mass - closed) < 1e-10)
    rep.check("relative PDE residual", res, 1e-2, res < 1e-2)
    rep.check("residual shrinks under refinement", res2 / res, 0.5, res2 <= 0.5 * res)
    r = np.concatenate([[0.0], np.geomspace(1e-3, R, 400)])
    w = bubble(ctx, r)
    write_csv(rep.out / "bubble_profile.csv", ["r", "w", "exp_w"], list(zip(r, w, np.exp(w))))


def _green(cfg):
    ctx = make_context(cfg["n"])
    g = cfg["green"]
    return ctx, solve_green(ctx, g["R_max"], g["r_inner"], g["tol"])


def cmd_green(cfg, rep: Report) -> None:
    ctx, sol = _green(cfg)
    g = cfg["green"]
    A_fit = green_constant_A(sol)
    half = solve_green(ctx, g["R_max"], 0.5 * g["r_inner"], g["tol"])
    rep.results.update(
        {
            "A": sol.A,
            "A_fit": A_fit,
            "A_half_r_inner": half.A,
            "flux_residual_max": sol.flux_residual_max,
            "G_at_R_max": float(sol.profile.values[-1]),
            "total_mass": total_mass(sol),
        }
    )
    print(f"A = {_fmt(sol.A)} (fit {_fmt(A_fit)}, r_inner/2: {_fmt(half.A)})")
    rep.check("flux identity residual", sol.flux_residual_max, 1e-6, sol.flux_residual_max < 1e-6)
    rep.check("A self-consistency", abs(A_fit - sol.A), 1e-6, abs(A_fit - sol.A) < 1e-6)
    rep.check("A stable under halving r_inner", abs(half.A - sol.A), 1e-3, abs(half.A - sol.A) < 1e-3)
    rep.check("G(R_max) below tol", float(sol.profile.values[-1]), g["tol"], sol.profile.values[-1] < g["tol"])
    mass_err = abs(total_mass(sol) - 1)
    rep.check("unit total mass", mass_err, 10 * g["tol"], mass_err < 10 * g["tol"])
    tails = []
    for delta in g["deltas"]:
        direct, formula = green_tail_energy(sol, delta)
        rel = abs(direct - formula) / formula
        tails.append({"delta": delta, "direct": direct, "formula": formula, "relative_error": rel})
        rep.check(f"tail energy identity at delta={delta:g}", rel, 1e-3, rel < 1e-3)
    rep.results["tail_energy"] = tails
    write_csv(rep.out / "green_tail.csv", ["delta", "direct", "formula", "relative_error"], tails)
    sol.to_files(rep.out / "green_profile.csv")


def cmd_sweep_test1(cfg, rep: Report) -> None:
    ctx, sol = _green(cfg)
    rows = []
    for eps in sorted(cfg["test1"]["eps"], reverse=True):
        try:
            r = test1_report(ctx, eps, sol)
        except EpsTooLargeError as exc:
            print(f"eps={eps:g}: {exc}")
            rows.append({"n": ctx.n, "family": "test1", "eps": eps, "status": "eps-too-large"})
            continue
        r.pop("history")
        r.update(family="test1", status="ok")
        rows.append(r)
        print(f"eps={eps:g}: value {_fmt(r['value'])} threshold {_fmt(r['threshold'])} margin {_fmt(r['margin'])}")
    header = ["n", "family", "eps", "b", "value", "threshold", "margin", "norm_residual", "matching_residual",
              "C", "L", "Lambda", "phi", "core_value", "status"]
    write_csv(rep.out / "sweep_test1.csv", header, rows)
    rep.results["rows"] = rows
    good = [r for r in rows if r["status"] == "ok"]
    if not good:
        rep.check("some eps in the asymptotic regime", 0, 1, False)
        return
    last = good[-1]
    rep.check("margin at smallest eps", last["margin"], 0.0, last["margin"] > 0)
    worst_norm = max(r["norm_residual"] for r in good)
    rep.check("unit Sobolev norm", worst_norm, 2e-3, worst_norm < 2e-3)
    worst_match = max(r["matching_residual"] for r in good)
    rep.check("matching residual", worst_match, 1e-8, worst_match < 1e-8)


def cmd_sweep_test2(cfg, rep: Report) -> None:
    ctx = make_context(cfg["n"])
    rows = test2_sweep(ctx, sorted(cfg["test2"]["c"]), sorted(cfg["test2"]["b"]))
    for r in rows:
        r["norm_residual"] = r["dirichlet_residual"]
        r["eps"] = Test2Params.make(ctx, r["c"], r["b"]).eps
    header = ["n", "family", "c", "b", "L", "eps", "value", "threshold", "margin", "norm_residual", "condition_61"]
    write_csv(rep.out / "sweep_test2.csv", header, rows)
    rep.results["rows"] = rows
    best = max(rows, key=lambda r: r["margin"])
    rep.results["best"] = best
    print(f"best (c={best['c']:g}, b={best['b']:g}): value {_fmt(best['value'])} threshold {_fmt(best['threshold'])}")
    rep.check("threshold crossed somewhere", best["margin"], 0.0, best["margin"] > 0)
    mono = True
    for b in sorted(set(r["b"] for r in rows)):
        q = [r["condition_61"] for r in rows if r["b"] == b]
        mono &= all(y < x for x, y in zip(q, q[1:]))
    rep.check("condition (c^{n/(n-1)}/L^n) decreasing in c", mono, True, mono)


def cmd_sharpness(cfg, rep: Report) -> None:
    ctx = make_context(cfg["n"])
    s = cfg["sharpness"]
    cs = sorted(s["c"])
    rows = []
    for factor in s["factors"]:
        alpha = factor * ctx.alpha_n
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", FunctionalOverflowWarning)
            logs = sharpness_log_values(ctx, alpha, cs, L_outer=s["L_outer"])
            quot = subcritical_quotients(ctx, alpha, cs, L_outer=s["L_outer"]) if factor < 1 else [None] * len(cs)
        for c, lv, qv in zip(cs, logs, quot):
            rows.append({"factor": factor, "alpha": alpha, "c": c, "log_value": lv, "value": math.exp(lv) if lv < 709 else None, "quotient": qv})
        growth = math.exp(logs[-1] - logs[0])
        rep.results[f"growth_{factor:g}"] = growth
        if factor > 1:
            increasing = all(b > a for a, b in zip(logs, logs[1:]))
            rep.check(f"growth at {factor:g} alpha_n", growth, 10.0, growth >= 10.0 and increasing)
        elif factor < 1:
            band = max(quot) / min(quot)
            rep.check(f"quotient band at {factor:g} alpha_n", band, 10.0, band < 10.0)
            rep.results[f"normalized_values_{factor:g}"] = [math.exp(v) for v in logs]
        else:
            rep.results["sup_observed_critical"] = math.exp(max(logs))
        print(f"alpha = {factor:g} alpha_n: values {[_fmt(math.exp(v)) for v in logs]}")
    write_csv(rep.out / "sharpness.csv", ["factor", "alpha", "c", "log_value", "value", "quotient"], rows)


def cmd_maximize(cfg, rep: Report, seed: int) -> None:
    ctx = make_context(cfg["n"])
    m = cfg["maximize"]
    opts = MaximizerOptions(seeds=m["seeds"], seed=seed, max_iters=m["max_iters"])
    tol = cfg["tol"] if cfg["tol"] is not None else 1e-4
    _, green = _green(cfg)
    seq = []
    rows = []
    for k, (R, bf) in enumerate(zip(m["R"], m["beta_factor"])):
        opts.log_path = str(rep.out / f"maximize_{k}.jsonl")
        grid = ball_grid(ctx, R, cfg["grid"]["inner_count"], cfg["grid"]["outer_count"], cfg["grid"]["inner_scale"])
        res = maximize_on_ball(ctx, R, bf * ctx.alpha_n, grid, opts)
        seq.append(res)
        res.to_files(rep.out / f"maximizer_{k}.csv")
        row = res.summary()
        row.pop("seed_values")
        row["beta_factor"] = bf
        rows.append(row)
        print(f"R={R:g} beta={bf:g} alpha_n: value {_fmt(res.value)} c_k {_fmt(res.c_k)} "
              f"lambda {_fmt(res.lambda_k)} residual {_fmt(res.el_residual)} spread {_fmt(res.seed_spread)}")
        rep.check(f"run {k}: starts agree", res.seed_spread, 1e-6, res.seed_spread <= 1e-6)
        rep.check(f"run {k}: Euler-Lagrange residual", res.el_residual, tol, res.el_residual < tol)
        rep.check(f"run {k}: lambda positive", res.lambda_k, 0.0, res.lambda_k > 0)
        rep.check(f"run {k}: unit norm", res.norm_residual, 1e-10, res.norm_residual < 1e-10)
        refs = reference_values(ctx, res, green)
        best = max(refs, key=refs.get)
        row["best_reference"] = refs[best]
        rep.check(f"run {k}: value >= reference ({best})", res.value, refs[best], res.value >= refs[best])
    write_csv(rep.out / "maximize.csv",
              ["R", "beta", "beta_factor", "value", "best_reference", "c_k", "lambda_k", "el_residual",
               "iterations", "norm_residual", "seed_spread"],
              rows)
    rep.results["runs"] = rows
    if len(seq) > 1:
        values = [r.value for r in seq]
        mono = all(b >= a for a, b in zip(values, values[1:]))
        rep.check("values nondecreasing along schedule", mono, True, mono)
        report = dichotomy_report(seq, green, L=m["blowup_L"])
        rep.results["dichotomy"] = report
        diag = report["most_concentrated_diagnostics"]
        print(f"classification: {report['classification']}")
        rep.check("core mass near 1", diag["core_mass"], 0.1, abs(diag["core_mass"] - 1) <= 0.1)
        for A, e in diag["truncation_energy"].items():
            lim = 1.0 / float(A) + 0.05
            rep.check(f"truncation energy A={A}", e, lim, e <= lim)


def _build_cfg(args) -> dict:
    raw = load_raw(args.config) if args.config else {}
    if args.n is not None:
        raw["n"] = args.n
    if "n" not in raw:
        raise UsageError("--n or --config is required")

    def put(section, key, value):
        raw.setdefault(section, {})
        if not isinstance(raw[section], dict):
            raise ConfigError(f"{section}: expected an object")
        raw[section][key] = value

    if args.seed is not None:
        raw["seed"] = args.seed
    if args.tol is not None:
        raw["tol"] = args.tol
    if args.out is not None:
        raw["out_dir"] = args.out
    if args.rmax is not None:
        if args.command == "bubble":
            put("bubble", "rmax", args.rmax)
        elif args.command == "maximize":
            factors = raw.get("maximize", {}).get("beta_factor", DEFAULTS["maximize"]["beta_factor"])
            put("maximize", "R", [args.rmax])
            put("maximize", "beta_factor", list(factors)[:1])
        else:
            put("green", "R_max", args.rmax)
    if args.grid_inner is not None:
        put("grid", "inner_count", args.grid_inner)
    if args.grid_outer is not None:
        put("grid", "outer_count", args.grid_outer)
    return validate(raw)


def make_parser() -> _Parser:
    p = _Parser(prog="tmoser", description="Critical Trudinger-Moser experiments on radial profiles.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, text in COMMANDS.items():
        s = sub.add_parser(name, help=text, description=text)
        s.add_argument("--n", type=int, help="dimension (>= 2); overrides the config")
        s.add_argument("--config", help="JSON config file")
        s.add_argument("--out", help="output directory (default: out)")
        s.add_argument("--seed", type=int, help="seed for random starts")
        s.add_argument("--tol", type=float, help="override the command's main tolerance")
        s.add_argument("--rmax", type=float, help="outer radius (bubble ball, Green domain or maximizer ball)")
        s.add_argument("--grid-inner", type=int, dest="grid_inner", help="inner grid node count")
        s.add_argument("--grid-outer", type=int, dest="grid_outer", help="outer grid node count")
    return p


def _dispatch(command: str, cfg: dict, out: Path) -> Report:
    rep = Report(command, cfg, out)
    out.mkdir(parents=True, exist_ok=True)
    if command == "constants":
        cmd_constants(cfg, rep)
    elif command == "bubble":
        cmd_bubble(cfg, rep)
    elif command == "green":
        cmd_green(cfg, rep)
    elif command == "sweep-test1":
        cmd_sweep_test1(cfg, rep)
    elif command == "sweep-test2":
        cmd_sweep_test2(cfg, rep)
    elif command == "sharpness":
        cmd_sharpness(cfg, rep)
    elif command == "maximize":
        cmd_maximize(cfg, rep, cfg["seed"])
    elif command == "report":
        parts = ["constants", "bubble", "green", "sweep-test1", "sharpness", "maximize"]
        if cfg["n"] > 2:
            parts.insert(4, "sweep-test2")
        for part in parts:
            print(f"== {part}")
            sub = _dispatch(part, cfg, out / part)
            rep.results[part] = {"passed": sub.passed, "checks": sub.checks}
            for c in sub.checks:
                rep.check(f"{part}: {c['name']}", c["value"], c["limit"], c["passed"])
        return rep
    rep.echo()
    rep.write()
    return rep


def run(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "sweep-test2" and args.n is not None and args.n <= 2:
            raise UsageError("sweep-test2 needs n > 2 (the second test family is defined for n > 2)")
        cfg = _build_cfg(args)
        if args.command == "sweep-test2" and cfg["n"] <= 2:
            raise UsageError("sweep-test2 needs n > 2 (the second test family is defined for n > 2)")
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out = Path(cfg["out_dir"])
    rep = _dispatch(args.command, cfg, out)
    if args.command == "report":
        rep.echo()
        rep.write()
    return EXIT_OK if rep.passed else EXIT_CHECK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
