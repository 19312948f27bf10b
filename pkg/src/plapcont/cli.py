"""Command-line driver.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 verification failure.  The output directory is ``--output-dir`` if given,
else ``PLAPCONT_OUTPUT_DIR``, else ``output_dir`` from the config.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, load_config
from .continuation import (
    epsilon_sweep,
    read_branch_csv,
    trace_branch,
    truncation_asymptote_estimate,
    truncation_sweep,
)
from .eigen import first_eigenpair
from .errors import PlapcontError, StepFailure
from .plotting import bifurcation_diagram, sweep_plot
from .problem import certificate_threshold, lambda_star_upper_bound
from .solvers import (
    monotone_iteration_minimal,
    newton_solve,
    torsion_solution,
    write_trace_jsonl,
)
from .verify import run_verification

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_VERIFY = 0, 2, 3, 4

log = logging.getLogger("plapcont")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_CONFIG)


def _out_dir(cfg, args) -> Path:
    path = Path(args.output_dir) if args.output_dir else cfg.resolved_output_dir()
    path.mkdir(parents=True, exist_ok=True)
    return path


def _emit(record: dict):
    print(json.dumps(record, sort_keys=True))


def cmd_eigen(cfg, args):
    mesh = cfg.build_mesh()
    res = first_eigenpair(mesh, cfg.spec.p)
    if args.csv:
        res.phi1.to_csv(_out_dir(cfg, args) / "phi1.csv")
    _emit(res.summary())
    return EXIT_OK


def cmd_torsion(cfg, args):
    e = torsion_solution(cfg.build_mesh(), cfg.spec.p, cfg.solve)
    e.to_csv(_out_dir(cfg, args) / "torsion.csv")
    _emit({"p": cfg.spec.p, "N": e.mesh.num_interior, "sup_norm": e.sup_norm})
    return EXIT_OK


def cmd_minimal(cfg, args):
    trace = []
    u = monotone_iteration_minimal(args.lam, cfg.spec, cfg.solve, cfg.build_mesh(), trace)
    out = _out_dir(cfg, args)
    u.to_csv(out / "minimal.csv")
    write_trace_jsonl(trace, out / "minimal_trace.jsonl")
    _emit({"lambda": args.lam, "sup_norm": u.sup_norm, "outer_steps": len(trace)})
    return EXIT_OK


def cmd_solve(cfg, args):
    mesh = cfg.build_mesh()
    # the minimal solution at a smaller lambda is a positive warm start
    start = monotone_iteration_minimal(args.lam * args.start_fraction, cfg.spec, cfg.solve, mesh)
    trace = []
    u = newton_solve(start, args.lam, cfg.spec, cfg.solve, trace=trace)
    out = _out_dir(cfg, args)
    u.to_csv(out / "solution.csv")
    write_trace_jsonl(trace, out / "newton_trace.jsonl")
    _emit({"lambda": args.lam, "sup_norm": u.sup_norm, "newton_iterations": len(trace) - 1})
    return EXIT_OK


def _branch_figure(path, branch, lam1, asymptote=None):
    fold = (branch.fold.Lambda_est, branch.fold.u.sup_norm) if branch.fold else None
    spec = branch.spec
    bifurcation_diagram(
        path,
        branch.lambdas,
        branch.sup_norms,
        fold=fold,
        bound=lambda_star_upper_bound(spec, lam1),
        certificate=certificate_threshold(spec, lam1),
        asymptote=asymptote,
    )


def cmd_branch(cfg, args):
    mesh = cfg.build_mesh()
    lam1 = first_eigenpair(mesh, cfg.spec.p).lambda1
    out = _out_dir(cfg, args)
    code = EXIT_OK
    try:
        branch = trace_branch(cfg.spec, cfg.continuation, mesh, cfg.solve)
    except StepFailure as exc:
        print(f"step failure: {exc}", file=sys.stderr)
        branch, code = exc.branch, EXIT_NUMERICAL
    extra = {
        "lambda1": lam1,
        "certificate_threshold": certificate_threshold(cfg.spec, lam1),
        "lambda_star_upper_bound": lambda_star_upper_bound(cfg.spec, lam1),
    }
    asymptote = None
    if cfg.spec.truncated and code == EXIT_OK:
        try:
            asymptote = truncation_asymptote_estimate(cfg.spec, cfg.continuation, mesh, branch)
        except PlapcontError as exc:
            extra["asymptote_error"] = str(exc)
        extra["asymptote_estimate"] = asymptote
        extra["asymptote_formula"] = lam1 / cfg.spec.n_trunc**cfg.spec.superlinear_gap
    branch.to_csv(out / "branch.csv")
    manifest = branch.write_manifest(out / "branch.json", extra)
    _branch_figure(out / "branch.svg", branch, lam1, asymptote)
    _emit({k: manifest[k] for k in ("num_points", "termination_reason", "fold")})
    return code


def cmd_sweep(cfg, args):
    mesh = cfg.build_mesh()
    out = _out_dir(cfg, args)
    values = [float(v) for v in args.values.split(",")] if args.values else None
    workers = cfg.verify.workers
    rows = []
    if args.kind == "eps":
        eps = values or cfg.verify.eps_list
        sweep = epsilon_sweep(cfg.spec, eps, cfg.continuation.with_(stop_after_fold=True), mesh, workers=workers)
        rows = [(e, lam, "") for e, lam in sweep.pairs]
        record = {"kind": "eps", "pairs": sweep.pairs, "monotone": sweep.monotone,
                  "limit_estimate": sweep.limit_estimate, "failures": {str(k): v for k, v in sweep.failures.items()}}
        if sweep.eps:
            sweep_plot(out / "sweep_eps.svg", sweep.eps, sweep.Lambda, xlabel="eps", ylabel="fold lambda")
    else:
        ns = values or cfg.verify.n_list
        sweep = truncation_sweep(cfg.spec, ns, cfg.continuation, mesh, workers=workers)
        rows = list(zip(sweep.n, sweep.asymptote, sweep.target))
        record = {"kind": "n", "n": sweep.n, "asymptote": sweep.asymptote, "target": sweep.target,
                  "ratios": sweep.ratios(), "failures": {str(k): v for k, v in sweep.failures.items()}}
        if sweep.n:
            sweep_plot(out / "sweep_n.svg", sweep.n, sweep.asymptote, sweep.target, xlabel="n", ylabel="asymptote")
    with open(out / f"sweep_{args.kind}.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["parameter", "value", "target"])
        writer.writerows(rows)
    with open(out / f"sweep_{args.kind}.json", "w") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
    _emit(record)
    return EXIT_NUMERICAL if record["failures"] else EXIT_OK


def cmd_verify(cfg, args):
    out = _out_dir(cfg, args)
    only = set(args.only.split(",")) if args.only else None
    report = run_verification(cfg, out, only)
    report.write(out / "report.json")
    for line in report.summary_lines():
        print(line)
    print(f"overall: {'PASS' if report.passed else 'FAIL'}")
    return EXIT_OK if report.passed else EXIT_VERIFY


def cmd_plot(cfg, args):
    try:
        data = read_branch_csv(args.csv)
    except (OSError, ValueError, PlapcontError) as exc:
        print(f"cannot read {args.csv}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    signs = data["tangent_sign"]
    flips = np.nonzero(np.diff(signs) != 0)[0]
    fold = None
    if flips.size:
        k = int(flips[0])
        fold = (data["lambda"][k], data["sup_norm"][k])
    target = args.out or str(Path(args.csv).with_suffix(".svg"))
    bifurcation_diagram(target, data["lambda"], data["sup_norm"], fold=fold)
    _emit({"svg": target})
    return EXIT_OK


COMMANDS = {
    "eigen": cmd_eigen,
    "torsion": cmd_torsion,
    "solve": cmd_solve,
    "minimal": cmd_minimal,
    "branch": cmd_branch,
    "sweep": cmd_sweep,
    "verify": cmd_verify,
    "plot": cmd_plot,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config entry, e.g. spec.p=3 (repeatable)")
    common.add_argument("--output-dir", help="output directory (overrides the config)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="plapcont", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    p = sub.add_parser("eigen", parents=[common], help="first eigenpair")
    p.add_argument("--csv", action="store_true", help="also write phi1.csv")
    sub.add_parser("torsion", parents=[common], help="torsion function")
    p = sub.add_parser("solve", parents=[common], help="Newton solve at fixed lambda")
    p.add_argument("--lam", type=float, required=True)
    p.add_argument("--start-fraction", type=float, default=0.5,
                   help="warm start from the minimal solution at this fraction of lambda")
    p = sub.add_parser("minimal", parents=[common], help="minimal solution by monotone iteration")
    p.add_argument("--lam", type=float, required=True)
    sub.add_parser("branch", parents=[common], help="trace the solution branch")
    p = sub.add_parser("sweep", parents=[common], help="eps or n sweep")
    p.add_argument("--kind", choices=("eps", "n"), default="eps")
    p.add_argument("--values", help="comma-separated parameter values")
    p = sub.add_parser("verify", parents=[common], help="run the verification battery")
    p.add_argument("--only", help="comma-separated stage names")
    p = sub.add_parser("plot", parents=[common], help="render a branch CSV as SVG")
    p.add_argument("csv")
    p.add_argument("--out")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, args.set)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](cfg, args)
    except PlapcontError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
