"""Batch harness: phase-transition sweeps, certificate studies, baseline
comparisons.  Every trial is derived from the base seed and its cell
coordinates alone, so any row of the output can be regenerated without
replaying the sweep; single-threaded runs produce byte-identical CSVs and
worker pools merge the same per-trial results in a fixed order.
"""
from __future__ import annotations

import configparser
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .certificate import certify_instance, near_isometry_check, off_support_check
from .errors import PlanInfeasibleError, ValidationError
from .instances import ProblemInstance, default_lambda, generate_instance, make_specs, save_bundle
from .solver import (
    SolverOptions,
    check_exact_recovery,
    solve_group_lasso,
    solve_l21_equality,
    solve_rgl,
)

MODE_PHASE = "phase_transition"
MODE_CERT = "certificate_study"
MODE_COMPARE = "baseline_compare"
MODES = (MODE_PHASE, MODE_CERT, MODE_COMPARE)

PHASE_HEADER = (
    "mode,n,m,L,kT,kOmega,kmax,lambda,trials,successes,solver_failures,"
    "mean_relerr_Y,mean_relerr_S,mean_iters,base_seed"
)
CERT_HEADER = (
    "mode,n,m,L,kT,kOmega,kmax,lambda,trials,infeasible,pass_sign_rows,"
    "pass_residual,pass_u_rows,pass_w_entries,pass_identity,bounds_all_pass,"
    "inexact_all_pass,isometry_pass,offsupport_pass,contraction_violations,base_seed"
)
COMPARE_HEADER = (
    "mode,n,m,L,kT,kOmega,kmax,lambda,lambda_factor,program,trial,converged,"
    "iterations,relerr_Y,relerr_S,success,base_seed"
)


@dataclass
class ExperimentConfig:
    mode: str = MODE_PHASE
    n: int = 64
    m: int = 48
    L: int = 2
    ensemble: str = "rademacher_rows"
    kT_grid: tuple[int, ...] = (1, 2, 4)
    kcol_grid: tuple[int, ...] = (0, 1, 2)
    trials: int = 50
    base_seed: int = 1
    rel_tol: float = 1e-3
    lam: float | None = None  # None -> 1/sqrt(log n)
    magnitude_model: str = "unit"
    corruption_scale: float = 1.0
    gamma: float = 1e6
    lambda_factors: tuple[float, ...] = (1.0,)
    threads: int = 1
    out_dir: str | None = None
    dump_failures: bool = False
    solver: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValidationError(f"unknown mode {self.mode!r}; pick one of {MODES}")
        if self.trials < 1:
            raise ValidationError("trials must be >= 1")
        if not self.kT_grid or not self.kcol_grid:
            raise ValidationError("grids must be non-empty")

    def lam_value(self) -> float:
        return default_lambda(self.n) if self.lam is None else float(self.lam)


@dataclass
class CellResult:
    mode: str
    n: int
    m: int
    L: int
    kT: int
    kcol: int
    lam: float
    trials: int
    successes: int
    solver_failures: int
    mean_relerr_Y: float
    mean_relerr_S: float
    mean_iters: float
    base_seed: int
    failing_trials: list[int] = field(default_factory=list)

    @property
    def k_Omega(self) -> int:
        return self.kcol * self.L

    def csv_row(self) -> str:
        return ",".join(
            [
                self.mode,
                str(self.n),
                str(self.m),
                str(self.L),
                str(self.kT),
                str(self.k_Omega),
                str(self.kcol),
                _fmt(self.lam),
                str(self.trials),
                str(self.successes),
                str(self.solver_failures),
                _fmt(self.mean_relerr_Y),
                _fmt(self.mean_relerr_S),
                _fmt(self.mean_iters),
                str(self.base_seed),
            ]
        )


def _fmt(x: float) -> str:
    return f"{float(x):.12g}"


def trial_seed(base_seed: int, n: int, m: int, L: int, kT: int, kcol: int, trial: int) -> int:
    """Single integer seed for one trial, derived from the cell coordinates.

    This derivation is the reproducibility contract: a CSV row's base seed
    and cell coordinates are enough to rebuild each of its instances.
    """
    ss = np.random.SeedSequence((int(base_seed), n, m, L, kT, kcol, trial))
    return int(ss.generate_state(1, np.uint64)[0])


def _trial_instance(cfg: ExperimentConfig, kT: int, kcol: int, trial: int) -> ProblemInstance:
    seed = trial_seed(cfg.base_seed, cfg.n, cfg.m, cfg.L, kT, kcol, trial)
    inst = generate_instance(
        make_specs(cfg.ensemble, cfg.n, cfg.L),
        m=cfg.m,
        k_T=kT,
        k_per_column=kcol,
        seed=seed,
        lam=cfg.lam,
        magnitude_model=cfg.magnitude_model,
    )
    if cfg.corruption_scale != 1.0:
        S = inst.S_true * cfg.corruption_scale
        inst = replace(inst, S_true=S, M=inst.ensemble.forward(inst.Y_true) + S)
    return inst


def _phase_trial(args) -> tuple:
    cfg, kT, kcol, trial = args
    inst = _trial_instance(cfg, kT, kcol, trial)
    rep = solve_rgl(inst.M, inst.ensemble, inst.lam, cfg.solver)
    chk = check_exact_recovery(rep, inst.Y_true, inst.S_true, cfg.rel_tol)
    success = bool(rep.converged and chk.success)
    return (kT, kcol, trial, success, not rep.converged, chk.rel_err_Y, chk.rel_err_S, rep.iterations)


def _run_pool(cfg: ExperimentConfig, worker, tasks: list) -> list:
    if cfg.threads <= 1:
        return [worker(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=cfg.threads) as pool:
        return list(pool.map(worker, tasks, chunksize=1))


def run_phase_transition(cfg: ExperimentConfig) -> list[CellResult]:
    """Solve the robust program over the (row sparsity, corruption) grid and
    tally exact-recovery rates per cell."""
    if cfg.mode != MODE_PHASE:
        cfg = replace(cfg, mode=MODE_PHASE)
    tasks = [
        (cfg, kT, kcol, t)
        for kT in cfg.kT_grid
        for kcol in cfg.kcol_grid
        for t in range(cfg.trials)
    ]
    rows = _run_pool(cfg, _phase_trial, tasks)
    by_cell: dict[tuple[int, int], list] = {}
    for row in rows:
        by_cell.setdefault((row[0], row[1]), []).append(row)
    results = []
    for kT in cfg.kT_grid:
        for kcol in cfg.kcol_grid:
            cell = sorted(by_cell[(kT, kcol)], key=lambda r: r[2])
            succ = sum(r[3] for r in cell)
            fails = sum(r[4] for r in cell)
            results.append(
                CellResult(
                    mode=MODE_PHASE,
                    n=cfg.n,
                    m=cfg.m,
                    L=cfg.L,
                    kT=kT,
                    kcol=kcol,
                    lam=cfg.lam_value(),
                    trials=cfg.trials,
                    successes=succ,
                    solver_failures=fails,
                    mean_relerr_Y=float(np.mean([r[5] for r in cell])),
                    mean_relerr_S=float(np.mean([r[6] for r in cell])),
                    mean_iters=float(np.mean([r[7] for r in cell])),
                    base_seed=cfg.base_seed,
                    failing_trials=[r[2] for r in cell if not r[3]],
                )
            )
    return results


def write_phase_csv(results: list[CellResult], path) -> None:
    lines = [PHASE_HEADER] + [r.csv_row() for r in results]
    Path(path).write_text("\n".join(lines) + "\n")


def write_phase_dat(results: list[CellResult], path) -> None:
    """Companion whitespace table for external plotting tools."""
    lines = ["# kT kcol success_rate mean_relerr_Y mean_relerr_S"]
    for r in results:
        lines.append(
            f"{r.kT} {r.kcol} {_fmt(r.successes / r.trials)} "
            f"{_fmt(r.mean_relerr_Y)} {_fmt(r.mean_relerr_S)}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


@dataclass
class CertCellResult:
    mode: str
    n: int
    m: int
    L: int
    kT: int
    kcol: int
    lam: float
    trials: int
    infeasible: int
    bound_passes: dict
    bounds_all_pass: int
    inexact_all_pass: int
    isometry_pass: int
    offsupport_pass: int
    contraction_violations: int
    base_seed: int
    ratio_rows: list = field(default_factory=list)
    failing_trials: list = field(default_factory=list)  # (trial, report dict|None)

    @property
    def k_Omega(self) -> int:
        return self.kcol * self.L

    def csv_row(self) -> str:
        return ",".join(
            [
                self.mode,
                str(self.n),
                str(self.m),
                str(self.L),
                str(self.kT),
                str(self.k_Omega),
                str(self.kcol),
                _fmt(self.lam),
                str(self.trials),
                str(self.infeasible),
                str(self.bound_passes["sign_rows_off_support"]),
                str(self.bound_passes["golfing_residual"]),
                str(self.bound_passes["u_rows_off_support"]),
                str(self.bound_passes["w_entries_off_corruption"]),
                str(self.bound_passes["telescope_identity"]),
                str(self.bounds_all_pass),
                str(self.inexact_all_pass),
                str(self.isometry_pass),
                str(self.offsupport_pass),
                str(self.contraction_violations),
                str(self.base_seed),
            ]
        )


def _cert_trial(args) -> tuple:
    cfg, kT, kcol, trial = args
    inst = _trial_instance(cfg, kT, kcol, trial)
    seed = trial_seed(cfg.base_seed, cfg.n, cfg.m, cfg.L, kT, kcol, trial)
    try:
        rep = certify_instance(inst, seed)
    except PlanInfeasibleError:
        return (kT, kcol, trial, None)
    report_dict = rep.as_dict() if cfg.dump_failures else None
    iso = near_isometry_check(inst.ensemble, inst.supports, "identity_form")
    off = off_support_check(inst.ensemble, inst.supports)
    violations = sum(
        1
        for bi, ratio, target in zip(
            rep.batch_isometry, rep.contraction_ratios, rep.contraction_targets
        )
        if bi.passed and ratio > target
    )
    ratios = [
        (trial, j + 1, rep.contraction_ratios[j], rep.contraction_targets[j],
         rep.batch_isometry[j].worst, rep.batch_isometry[j].passed)
        for j in range(len(rep.contraction_ratios))
    ]
    return (
        kT,
        kcol,
        trial,
        {
            "bounds": {c.name: c.passed for c in rep.bound_checks},
            "bounds_all": rep.bound_checks.all_pass,
            "inexact_all": rep.inexact_dual.all_pass,
            "iso": iso.passed,
            "off": off.passed,
            "violations": violations,
            "ratios": ratios,
            "report": report_dict,
        },
    )


def run_certificate_study(cfg: ExperimentConfig) -> list[CertCellResult]:
    """Golfing construction plus every verifier, tallied per inequality.

    Requires an almost-surely incoherent row family; Gaussian families only
    carry an empirical incoherence surrogate and are rejected here.
    """
    if cfg.ensemble not in ("rademacher_rows", "subsampled_orthonormal"):
        raise ValidationError(
            "certificate studies need an almost-surely incoherent ensemble "
            "(rademacher_rows or subsampled_orthonormal)"
        )
    if cfg.mode != MODE_CERT:
        cfg = replace(cfg, mode=MODE_CERT)
    tasks = [
        (cfg, kT, kcol, t)
        for kT in cfg.kT_grid
        for kcol in cfg.kcol_grid
        for t in range(cfg.trials)
    ]
    rows = _run_pool(cfg, _cert_trial, tasks)
    by_cell: dict[tuple[int, int], list] = {}
    for row in rows:
        by_cell.setdefault((row[0], row[1]), []).append(row)
    bound_names = (
        "sign_rows_off_support",
        "golfing_residual",
        "u_rows_off_support",
        "w_entries_off_corruption",
        "telescope_identity",
    )
    results = []
    for kT in cfg.kT_grid:
        for kcol in cfg.kcol_grid:
            cell = sorted(by_cell[(kT, kcol)], key=lambda r: r[2])
            done = [r[3] for r in cell if r[3] is not None]
            passes = {name: sum(d["bounds"][name] for d in done) for name in bound_names}
            ratio_rows = [row for d in done for row in d["ratios"]]
            failing = [
                (r[2], r[3]["report"])
                for r in cell
                if r[3] is not None and not r[3]["bounds_all"]
            ]
            results.append(
                CertCellResult(
                    mode=MODE_CERT,
                    n=cfg.n,
                    m=cfg.m,
                    L=cfg.L,
                    kT=kT,
                    kcol=kcol,
                    lam=cfg.lam_value(),
                    trials=cfg.trials,
                    infeasible=len(cell) - len(done),
                    bound_passes=passes,
                    bounds_all_pass=sum(d["bounds_all"] for d in done),
                    inexact_all_pass=sum(d["inexact_all"] for d in done),
                    isometry_pass=sum(d["iso"] for d in done),
                    offsupport_pass=sum(d["off"] for d in done),
                    contraction_violations=sum(d["violations"] for d in done),
                    base_seed=cfg.base_seed,
                    ratio_rows=ratio_rows,
                    failing_trials=failing,
                )
            )
    return results


def write_cert_csv(results: list[CertCellResult], path) -> None:
    lines = [CERT_HEADER] + [r.csv_row() for r in results]
    Path(path).write_text("\n".join(lines) + "\n")


def write_cert_ratios(results: list[CertCellResult], path) -> None:
    lines = ["kT,kcol,trial,batch,ratio,target,isometry_value,isometry_passed"]
    for r in results:
        for trial, batch, ratio, target, iso_val, iso_ok in r.ratio_rows:
            lines.append(
                f"{r.kT},{r.kcol},{trial},{batch},{_fmt(ratio)},{_fmt(target)},"
                f"{_fmt(iso_val)},{int(iso_ok)}"
            )
    Path(path).write_text("\n".join(lines) + "\n")


PROGRAMS = ("rgl", "l21_equality", "group_lasso")


def _compare_trial(args) -> list[tuple]:
    cfg, kT, kcol, trial = args
    inst = _trial_instance(cfg, kT, kcol, trial)
    out = []
    for factor in cfg.lambda_factors:
        rep = solve_rgl(inst.M, inst.ensemble, factor * inst.lam, cfg.solver)
        out.append((kT, kcol, trial, "rgl", factor) + _judge(rep, inst, cfg))
    rep = solve_l21_equality(inst.M, inst.ensemble, cfg.solver)
    out.append((kT, kcol, trial, "l21_equality", 1.0) + _judge(rep, inst, cfg))
    rep = solve_group_lasso(inst.M, inst.ensemble, cfg.gamma, cfg.solver)
    out.append((kT, kcol, trial, "group_lasso", 1.0) + _judge(rep, inst, cfg))
    return out


def _judge(rep, inst, cfg) -> tuple:
    chk = check_exact_recovery(rep, inst.Y_true, inst.S_true, cfg.rel_tol)
    # Baselines carry no corruption block, so program comparisons are
    # judged on signal recovery alone.
    success = bool(rep.converged and chk.rel_err_Y <= cfg.rel_tol)
    return (bool(rep.converged), rep.iterations, chk.rel_err_Y, chk.rel_err_S, success)


def run_baseline_compare(cfg: ExperimentConfig) -> list[tuple]:
    """Paired per-instance results for the robust, equality-constrained and
    quadratic-penalty programs (plus an optional balance-parameter sweep)."""
    if cfg.mode != MODE_COMPARE:
        cfg = replace(cfg, mode=MODE_COMPARE)
    tasks = [
        (cfg, kT, kcol, t)
        for kT in cfg.kT_grid
        for kcol in cfg.kcol_grid
        for t in range(cfg.trials)
    ]
    nested = _run_pool(cfg, _compare_trial, tasks)
    rows = [row for batch in nested for row in batch]
    rows.sort(key=lambda r: (r[0], r[1], r[2], r[3], r[4]))
    return rows


def write_compare_csv(cfg: ExperimentConfig, rows: list[tuple], path) -> None:
    lines = [COMPARE_HEADER]
    lam = cfg.lam_value()
    for kT, kcol, trial, program, factor, converged, iters, ry, rs, success in rows:
        lines.append(
            ",".join(
                [
                    MODE_COMPARE,
                    str(cfg.n),
                    str(cfg.m),
                    str(cfg.L),
                    str(kT),
                    str(kcol * cfg.L),
                    str(kcol),
                    _fmt(lam),
                    _fmt(factor),
                    program,
                    str(trial),
                    str(int(converged)),
                    str(iters),
                    _fmt(ry),
                    _fmt(rs),
                    str(int(success)),
                    str(cfg.base_seed),
                ]
            )
        )
    Path(path).write_text("\n".join(lines) + "\n")


def success_rates(rows: list[tuple]) -> dict:
    """Aggregate compare rows into success rates keyed by
    (kT, kcol, program, lambda_factor)."""
    tally: dict[tuple, list[int]] = {}
    for kT, kcol, trial, program, factor, converged, iters, ry, rs, success in rows:
        tally.setdefault((kT, kcol, program, factor), []).append(int(success))
    return {key: sum(v) / len(v) for key, v in tally.items()}


def dump_failures(cfg: ExperimentConfig, results: list[CellResult], out_dir) -> list[str]:
    """Regenerate and save the instance bundle of every failed trial."""
    saved = []
    root = Path(out_dir) / "failures"
    for cell in results:
        for trial in cell.failing_trials:
            inst = _trial_instance(replace(cfg, mode=cell.mode), cell.kT, cell.kcol, trial)
            dest = root / f"kT{cell.kT}_kcol{cell.kcol}_trial{trial}"
            save_bundle(inst, dest)
            saved.append(str(dest))
    return saved


def dump_cert_failures(cfg: ExperimentConfig, results: list[CertCellResult], out_dir) -> list[str]:
    """Save the instance bundle and full verifier report of every trial
    whose golfing certificate missed one of its bounds."""
    import json

    saved = []
    root = Path(out_dir) / "failures"
    for cell in results:
        for trial, report in cell.failing_trials:
            inst = _trial_instance(replace(cfg, mode=cell.mode), cell.kT, cell.kcol, trial)
            dest = root / f"kT{cell.kT}_kcol{cell.kcol}_trial{trial}"
            save_bundle(inst, dest)
            if report is not None:
                (dest / "certificate_report.json").write_text(
                    json.dumps(report, indent=2, sort_keys=True)
                )
            saved.append(str(dest))
    return saved


def load_config(path) -> ExperimentConfig:
    """Read a key = value config file with [experiment]/[problem]/[solver]
    and optional [compare] sections."""
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ValidationError(f"cannot read config file {path}")
    exp = parser["experiment"] if parser.has_section("experiment") else {}
    prob = parser["problem"] if parser.has_section("problem") else {}
    sol = parser["solver"] if parser.has_section("solver") else {}
    comp = parser["compare"] if parser.has_section("compare") else {}

    def grid(section, key, default):
        raw = section.get(key)
        if raw is None:
            return default
        return tuple(int(tok) for tok in raw.replace(",", " ").split())

    def floats(section, key, default):
        raw = section.get(key)
        if raw is None:
            return default
        return tuple(float(tok) for tok in raw.replace(",", " ").split())

    lam_raw = prob.get("lambda", "auto")
    solver = SolverOptions(
        rho=float(sol.get("rho", 1.0)),
        max_iters=int(sol.get("max_iters", 50_000)),
        tol_primal=float(sol.get("tol_primal", 1e-7)),
        tol_dual=float(sol.get("tol_dual", 1e-7)),
        over_relaxation=float(sol.get("over_relaxation", 1.0)),
    )
    return ExperimentConfig(
        mode=exp.get("mode", MODE_PHASE),
        trials=int(exp.get("trials", 50)),
        base_seed=int(exp.get("base_seed", 1)),
        rel_tol=float(exp.get("rel_tol", 1e-3)),
        threads=int(exp.get("threads", 1)),
        out_dir=exp.get("out", None),
        dump_failures=exp.get("dump_failures", "no").lower() in ("1", "true", "yes"),
        n=int(prob.get("n", 64)),
        m=int(prob.get("m", 48)),
        L=int(prob.get("L", 2)),
        ensemble=prob.get("ensemble", "rademacher_rows"),
        kT_grid=grid(prob, "kt_grid", (1, 2, 4)),
        kcol_grid=grid(prob, "kcol_grid", (0, 1, 2)),
        lam=None if lam_raw == "auto" else float(lam_raw),
        magnitude_model=prob.get("magnitude_model", "unit"),
        corruption_scale=float(prob.get("corruption_scale", 1.0)),
        gamma=float(comp.get("gamma", 1e6)),
        lambda_factors=floats(comp, "lambda_factors", (1.0,)),
        solver=solver,
    )
