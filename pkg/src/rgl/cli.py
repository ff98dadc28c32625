"""Command-line interface.

Subcommands: ``phase`` (recovery sweep), ``cert`` (certificate study),
``compare`` (program comparison), ``gen`` (create an instance bundle) and
``solve`` (solve a saved bundle).  Recovery failures are data, not errors:
the exit code is nonzero only for internal failures or bad arguments.

Indices stored in bundles and reports are 0-based; the written references
this library follows use 1-based indexing.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .errors import ValidationError
from .experiments import (
    ExperimentConfig,
    dump_cert_failures,
    dump_failures,
    load_config,
    run_baseline_compare,
    run_certificate_study,
    run_phase_transition,
    success_rates,
    write_cert_csv,
    write_cert_ratios,
    write_compare_csv,
    write_phase_csv,
    write_phase_dat,
)
from .instances import generate_instance, load_bundle, make_specs, save_bundle
from .matrixio import save_matrix_bin
from .solver import SolverOptions, check_exact_recovery, solve_group_lasso, solve_l21_equality, solve_rgl


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="key = value config file")
    parser.add_argument("--seed", type=int, help="base seed (overrides config)")
    parser.add_argument("--threads", type=int, help="worker processes (1 = bit-reproducible)")
    parser.add_argument("--out", type=Path, help="output directory")
    parser.add_argument("--dump-failures", action="store_true", help="save failed-trial bundles")
    parser.add_argument("--trials", type=int, help="trials per cell (overrides config)")
    parser.add_argument("--n", type=int, help="signal dimension (overrides config)")
    parser.add_argument("--m", type=int, help="measurements per column (overrides config)")
    parser.add_argument("--L", type=int, help="number of columns (overrides config)")


def _config_from_args(args: argparse.Namespace, mode: str) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    cfg = replace(cfg, mode=mode)
    for attr, key in (
        ("base_seed", "seed"),
        ("threads", "threads"),
        ("trials", "trials"),
        ("n", "n"),
        ("m", "m"),
        ("L", "L"),
    ):
        value = getattr(args, key, None)
        if value is not None:
            cfg = replace(cfg, **{attr: value})
    if args.out is not None:
        cfg = replace(cfg, out_dir=str(args.out))
    if args.dump_failures:
        cfg = replace(cfg, dump_failures=True)
    return cfg


def _out_dir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out_dir) if cfg.out_dir else Path.cwd()
    out.mkdir(parents=True, exist_ok=True)
    return out


def _cmd_phase(args) -> int:
    cfg = _config_from_args(args, "phase_transition")
    results = run_phase_transition(cfg)
    out = _out_dir(cfg)
    write_phase_csv(results, out / "phase.csv")
    write_phase_dat(results, out / "phase.dat")
    for r in results:
        print(
            f"kT={r.kT} kcol={r.kcol}: {r.successes}/{r.trials} recovered, "
            f"{r.solver_failures} solver failures, mean relerr_Y {r.mean_relerr_Y:.3g}"
        )
    if cfg.dump_failures:
        saved = dump_failures(cfg, results, out)
        print(f"dumped {len(saved)} failing instance bundles under {out / 'failures'}")
    print(f"wrote {out / 'phase.csv'}")
    return 0


def _cmd_cert(args) -> int:
    cfg = _config_from_args(args, "certificate_study")
    results = run_certificate_study(cfg)
    out = _out_dir(cfg)
    write_cert_csv(results, out / "cert.csv")
    write_cert_ratios(results, out / "cert_ratios.csv")
    for r in results:
        done = r.trials - r.infeasible
        print(
            f"kT={r.kT} kcol={r.kcol}: bounds all-pass {r.bounds_all_pass}/{done}"
            + (f" ({r.infeasible} infeasible)" if r.infeasible else "")
            + f", contraction violations {r.contraction_violations}"
        )
    if cfg.dump_failures:
        saved = dump_cert_failures(cfg, results, out)
        print(f"dumped {len(saved)} failing certificate bundles under {out / 'failures'}")
    print(f"wrote {out / 'cert.csv'} and {out / 'cert_ratios.csv'}")
    return 0


def _cmd_compare(args) -> int:
    cfg = _config_from_args(args, "baseline_compare")
    rows = run_baseline_compare(cfg)
    out = _out_dir(cfg)
    write_compare_csv(cfg, rows, out / "compare.csv")
    for (kT, kcol, program, factor), rate in sorted(success_rates(rows).items()):
        tag = f" x{factor:g}" if program == "rgl" and len(cfg.lambda_factors) > 1 else ""
        print(f"kT={kT} kcol={kcol} {program}{tag}: success rate {rate:.2f}")
    print(f"wrote {out / 'compare.csv'}")
    return 0


def _cmd_gen(args) -> int:
    inst = generate_instance(
        make_specs(args.ensemble, args.n, args.L),
        m=args.m,
        k_T=args.kT,
        k_per_column=args.kcol,
        seed=args.seed if args.seed is not None else 0,
        lam=args.lam,
        magnitude_model=args.magnitude_model,
        mode=args.mode,
    )
    save_bundle(inst, args.out)
    print(f"wrote instance bundle to {args.out}")
    return 0


def _cmd_solve(args) -> int:
    inst = load_bundle(args.bundle)
    opts = SolverOptions(max_iters=args.max_iters, tol_primal=args.tol, tol_dual=args.tol)
    if args.program == "rgl":
        rep = solve_rgl(inst.M, inst.ensemble, inst.lam, opts)
    elif args.program == "l21":
        rep = solve_l21_equality(inst.M, inst.ensemble, opts)
    else:
        rep = solve_group_lasso(inst.M, inst.ensemble, args.gamma, opts)
    chk = check_exact_recovery(rep, inst.Y_true, inst.S_true, args.rel_tol)
    summary = {
        "program": args.program,
        "converged": rep.converged,
        "iterations": rep.iterations,
        "primal_residual": rep.primal_residual,
        "dual_residual": rep.dual_residual,
        "objective": rep.objective,
        "rel_err_Y": chk.rel_err_Y,
        "rel_err_S": chk.rel_err_S,
        "success": chk.success,
        "support_match": chk.support_match,
    }
    print(json.dumps(summary, indent=2))
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        save_matrix_bin(rep.Y_hat, args.out / "Y_hat.bin")
        save_matrix_bin(rep.S_hat, args.out / "S_hat.bin")
        (args.out / "report.json").write_text(json.dumps(summary, indent=2))
        print(f"wrote solution to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rgl",
        description="Group-sparse recovery from sparsely corrupted measurements",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, fn, doc in (
        ("phase", _cmd_phase, "phase-transition sweep of the robust program"),
        ("cert", _cmd_cert, "golfing certificate study"),
        ("compare", _cmd_compare, "robust vs baseline programs"),
    ):
        p = sub.add_parser(name, help=doc)
        _add_common(p)
        p.set_defaults(fn=fn)

    g = sub.add_parser("gen", help="create and save an instance bundle")
    g.add_argument("--out", type=Path, required=True)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--m", type=int, required=True)
    g.add_argument("--L", type=int, required=True)
    g.add_argument("--kT", type=int, required=True)
    g.add_argument("--kcol", type=int, required=True, help="corruptions per column")
    g.add_argument("--ensemble", default="rademacher_rows")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--lam", type=float, default=None, help="default: 1/sqrt(log n)")
    g.add_argument("--magnitude-model", default="unit")
    g.add_argument("--mode", default="free", choices=("free", "theorem_regime"))
    g.set_defaults(fn=_cmd_gen)

    s = sub.add_parser("solve", help="solve a saved instance bundle")
    s.add_argument("--bundle", type=Path, required=True)
    s.add_argument("--program", default="rgl", choices=("rgl", "l21", "group-lasso"))
    s.add_argument("--gamma", type=float, default=1e6, help="penalty for group-lasso")
    s.add_argument("--rel-tol", type=float, default=1e-3)
    s.add_argument("--tol", type=float, default=1e-7)
    s.add_argument("--max-iters", type=int, default=50_000)
    s.add_argument("--out", type=Path, default=None)
    s.set_defaults(fn=_cmd_solve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValidationError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
