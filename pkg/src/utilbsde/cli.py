"""Command line front end: ``utilbsde solve | verify | plotdata``.

Exit codes: 0 success, 1 verification checks failed, 2 invalid input,
3 solver failure.
"""
from __future__ import annotations

import argparse
import io
import json
import sys
from pathlib import Path

from . import __version__
from .errors import BasisDegeneracy, ConvergenceFailure, DivergenceError, EllipticityViolation, InvalidArgument
from .lsmc import RegressionBasis
from .pde import PdeGrid, dump_field_csv
from .pipeline import basis_from_dict, solve_policy
from .scenario import build_problem, canonical, dumps, resolve
from .suites import SUITES, run_suite

EXIT_OK, EXIT_CHECKS_FAILED, EXIT_INVALID, EXIT_SOLVER = 0, 1, 2, 3
PLOT_COLUMNS = (
    "# t: grid time",
    "# mean_Y: cross-path mean of Y_t",
    "# strategy_k: cross-path mean of component k of the optimal strategy (noise coordinates); the row at T repeats the last trading step",
    "# mean_R: cross-path mean of R_t under the optimal strategy",
    "# R_band_lo, R_band_hi: R_0 -/+ 3 standard errors of mean(R_t - R_0)",
)


class _Failure(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise _Failure(EXIT_INVALID, f"cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise _Failure(EXIT_INVALID, f"{path} is not valid JSON: {exc}") from None


def run_solve(config_path, out_dir=".", seed=None) -> dict:
    """Solve one scenario and write its report and series; returns the report."""
    try:
        cfg = resolve(_read_json(config_path), seed)
        problem = build_problem(cfg)
    except (InvalidArgument, EllipticityViolation) as exc:
        raise _Failure(EXIT_INVALID, str(exc)) from None
    solver = cfg["solver"]
    m = problem.model.m
    basis = basis_from_dict(solver["basis"], m) if solver["basis"] else RegressionBasis.default_for(m)
    pde_cfg = solver.get("pde") or {}
    try:
        pde_grid = None
        if solver["method"] in ("pde", "both"):
            pde_grid = PdeGrid(T=problem.T, M=int(pde_cfg.get("M", 401)), N=pde_cfg.get("N"))
        rep = solve_policy(problem, int(cfg["mc"]["paths"]), int(cfg["mc"]["seed"]), solver["method"], basis,
                           solver["z_cap"], pde_grid, cfg["verification"], float(solver["tau_proj"]))
    except (InvalidArgument, EllipticityViolation) as exc:
        raise _Failure(EXIT_INVALID, str(exc)) from None
    except (ConvergenceFailure, DivergenceError, BasisDegeneracy) as exc:
        raise _Failure(EXIT_SOLVER, f"solver failure: {exc}") from None

    verification = dict(rep.verification)
    series = verification.pop("series", {})
    report = {
        "artifact": "utilbsde",
        "version": __version__,
        "config": cfg,
        "result": {"y0": rep.y0, "value_at_x": rep.value_at_x, "x": rep.x, "utility": rep.utility.to_dict(),
                   "verification": verification, "series": series,
                   "notes": ["admissibility is probed only through a grid-time BMO proxy; "
                             "general stopping times are not checked"]},
    }
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / cfg["output"]["report"]).write_text(dumps(report))
    (out / cfg["output"]["series"]).write_text(emit_plotdata(canonical(report)))
    if cfg["output"].get("field") and rep.pde_solution is not None:
        dump_field_csv(rep.pde_solution, out / cfg["output"]["field"])
    return canonical(report)


def emit_plotdata(report: dict) -> str:
    """CSV of the report's time series; header only when no verification series is present."""
    series = report.get("result", {}).get("series", {})
    strat = series.get("mean_strategy") or []
    m = len(strat[0]) if strat else 0
    cols = ["t", "mean_Y"] + [f"strategy_{k + 1}" for k in range(m)] + ["mean_R", "R_band_lo", "R_band_hi"]
    buf = io.StringIO()
    buf.write("\n".join(PLOT_COLUMNS) + "\n")
    buf.write(",".join(cols) + "\n")
    if "mean_R" not in series:
        return buf.getvalue()
    R0 = series["mean_R"][0]
    for i, t in enumerate(series["t"]):
        row = [t, series["mean_Y"][i]]
        row += list(strat[min(i, len(strat) - 1)]) if m else []
        se = series["se_R"][i]
        row += [series["mean_R"][i], R0 - 3 * se, R0 + 3 * se]
        buf.write(",".join(f"{float(v):.12g}" for v in row) + "\n")
    return buf.getvalue()


def run_verify(suite, out_dir=".", seed=None):
    """Run a named suite; returns (all passed, rows)."""
    try:
        rows = run_suite(suite, seed=1 if seed is None else int(seed))
    except InvalidArgument as exc:
        raise _Failure(EXIT_INVALID, str(exc)) from None
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    passed = all(r["passed"] for r in rows)
    (out / f"verify_{suite}.json").write_text(
        dumps({"artifact": "utilbsde", "version": __version__, "suite": suite, "passed": passed, "checks": rows}))
    return passed, rows


def _print_table(rows, stream):
    width = max(len(r["check"]) for r in rows)
    for r in rows:
        flag = "PASS" if r["passed"] else "FAIL"
        stream.write(f"{flag}  {r['check']:<{width}}  value={r['value']:.6g}  tol={r['tolerance']:.3g}\n")


def build_parser():
    parser = argparse.ArgumentParser(prog="utilbsde", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="verb", required=True)
    p = sub.add_parser("solve", help="solve a scenario file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=".")
    p.add_argument("--seed", type=int)
    p = sub.add_parser("verify", help="run a verification suite")
    p.add_argument("--suite", required=True, help="one of: " + ", ".join(SUITES))
    p.add_argument("--out", default=".")
    p.add_argument("--seed", type=int)
    p = sub.add_parser("plotdata", help="write plot-ready CSV from a report (or solve a scenario first)")
    p.add_argument("--config", required=True, help="report JSON written by solve, or a scenario file")
    p.add_argument("--out", default=".")
    p.add_argument("--seed", type=int)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.verb == "solve":
            report = run_solve(args.config, args.out, args.seed)
            print(f"y0 = {report['result']['y0']:.12g}  value = {report['result']['value_at_x']:.12g}")
            return EXIT_OK
        if args.verb == "verify":
            passed, rows = run_verify(args.suite, args.out, args.seed)
            _print_table(rows, sys.stdout)
            return EXIT_OK if passed else EXIT_CHECKS_FAILED
        doc = _read_json(args.config)
        if "result" not in doc:
            doc = run_solve(args.config, args.out, args.seed)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "plotdata.csv").write_text(emit_plotdata(doc))
        return EXIT_OK
    except _Failure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
