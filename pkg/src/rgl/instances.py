"""Ground-truth generation, the measurement map, and sparsity budgets."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ensembles import (
    DistributionSpec,
    SensingEnsemble,
    sample_ensemble,
    spec_from_name,
    stream,
)
from .errors import ValidationError
from .linalg import SupportPattern, as_matrix
from .matrixio import load_matrix_bin, save_matrix_bin

# Constants of the sparsity budgets; the row-support budget also carries a
# 1/log^2(n) factor and the balance parameter is 1/sqrt(log n), natural log.
ALPHA = 1.0 / 9600.0
BETA = 1.0 / 3136.0
GAMMA = 1.0 / 4.0

MODE_THEOREM = "theorem_regime"
MODE_FREE = "free"

TAG_SUPPORT = 11
TAG_SIGNS = 12
TAG_MAGNITUDES = 13

_LOGUNIFORM_RE = re.compile(r"loguniform\(\s*([^,]+)\s*,\s*([^)]+)\s*\)")


def default_lambda(n: int) -> float:
    """Balance parameter 1/sqrt(log n)."""
    if n < 2:
        raise ValidationError("n must be at least 2 for the default balance parameter")
    return float(1.0 / np.sqrt(np.log(n)))


def sparsity_budget(n: int, m: int, L: int, mu_max: float, kappa_max: float) -> dict:
    """Largest row-support, total-corruption and per-column-corruption sizes
    admitted by the recovery guarantee, plus the matching balance parameter."""
    if min(n, m, L) < 1 or mu_max < 1 or kappa_max < 1:
        raise ValidationError("dimensions and population parameters must be >= 1")
    logn = np.log(n) if n > 1 else 0.0
    if logn <= 0:
        raise ValidationError("n must be at least 2")
    # Divide by the constant denominators directly; multiplying by the
    # reciprocals can land just below an integer and change the floor.
    return {
        "k_T_max": int(np.floor(m / (9600.0 * mu_max * kappa_max * logn**2))),
        "k_Omega_max": int(np.floor(m / (3136.0 * mu_max))),
        "k_max_max": int(np.floor(m / (4.0 * kappa_max))),
        "lambda": default_lambda(n),
    }


def _parse_magnitude_model(model: str):
    if model == "unit":
        return None
    match = _LOGUNIFORM_RE.fullmatch(model.strip())
    if match:
        a, b = float(match.group(1)), float(match.group(2))
        if not (0 < a < b):
            raise ValidationError("loguniform bounds must satisfy 0 < a < b")
        return (a, b)
    raise ValidationError(f"unknown magnitude model {model!r}")


def generate_truth(
    n: int,
    L: int,
    m: int,
    k_T: int,
    k_per_column,
    magnitude_model: str = "unit",
    seed: int = 0,
):
    """Draw a ground-truth pair (signal, corruption) with uniform supports
    and i.i.d. equally likely +-1 signs on the supported entries.

    Returns ``(Y_true, S_true, SupportPattern)``.
    """
    if isinstance(k_per_column, int):
        k_per_column = [k_per_column] * L
    k_per_column = [int(k) for k in k_per_column]
    if len(k_per_column) != L:
        raise ValidationError("need one corruption count per column")
    if not 0 <= k_T <= n:
        raise ValidationError(f"row sparsity {k_T} not in [0, {n}]")
    if any(not 0 <= k <= m for k in k_per_column):
        raise ValidationError("per-column corruption count out of [0, m]")
    bounds = _parse_magnitude_model(magnitude_model)

    rng_support = stream(seed, TAG_SUPPORT)
    T = np.sort(rng_support.choice(n, size=k_T, replace=False))
    cols = tuple(
        tuple(np.sort(rng_support.choice(m, size=k, replace=False)).tolist())
        for k in k_per_column
    )
    supports = SupportPattern(n=n, m=m, L=L, row_support=tuple(T.tolist()), col_supports=cols)

    rng_signs = stream(seed, TAG_SIGNS)
    rng_mags = stream(seed, TAG_MAGNITUDES)

    def _draw(count):
        signs = rng_signs.integers(0, 2, size=count).astype(np.float64) * 2.0 - 1.0
        if bounds is None:
            return signs
        a, b = bounds
        mags = np.exp(rng_mags.uniform(np.log(a), np.log(b), size=count))
        return signs * mags

    Y = np.zeros((n, L))
    if k_T:
        Y[T] = _draw(k_T * L).reshape(k_T, L)
    S = np.zeros((m, L))
    for i, col in enumerate(supports.col_supports):
        if col:
            S[list(col), i] = _draw(len(col))
    return Y, S, supports


def measure(ensemble: SensingEnsemble, Y_true, S_true) -> np.ndarray:
    """Measurements: column i equals A_i @ y_i + s_i."""
    S = as_matrix(S_true, "S_true")
    if S.shape != (ensemble.m, ensemble.L):
        raise ValidationError(
            f"corruption must be {ensemble.m}x{ensemble.L}, got {S.shape}"
        )
    return ensemble.forward(Y_true) + S


@dataclass
class ProblemInstance:
    """Everything one trial needs: ensemble, truth, measurements, metadata."""

    ensemble: SensingEnsemble
    Y_true: np.ndarray
    S_true: np.ndarray
    M: np.ndarray
    supports: SupportPattern
    lam: float
    mode: str = MODE_FREE
    magnitude_model: str = "unit"
    seed: int = 0

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.ensemble.n, self.ensemble.m, self.ensemble.L)


def generate_instance(
    specs,
    m: int,
    k_T: int,
    k_per_column,
    seed: int,
    lam: float | None = None,
    magnitude_model: str = "unit",
    mode: str = MODE_FREE,
) -> ProblemInstance:
    """Sample an ensemble and a ground truth, then form the measurements.

    In ``theorem_regime`` mode the requested sparsities are validated
    against the budgets of :func:`sparsity_budget` (and k_T * L <= n);
    ``free`` mode allows any feasible sizes, e.g. for phase sweeps.
    """
    if isinstance(specs, DistributionSpec):
        specs = [specs]
    ensemble = sample_ensemble(list(specs), m, seed)
    n, L = ensemble.n, ensemble.L
    if isinstance(k_per_column, int):
        k_per_column = [k_per_column] * L
    if mode == MODE_THEOREM:
        budget = sparsity_budget(n, m, L, ensemble.mu_max, ensemble.kappa_max)
        k_Omega = sum(k_per_column)
        k_max = max(k_per_column)
        if k_T > budget["k_T_max"]:
            raise ValidationError(
                f"row sparsity {k_T} exceeds budget {budget['k_T_max']}"
            )
        if k_Omega > budget["k_Omega_max"]:
            raise ValidationError(
                f"total corruption {k_Omega} exceeds budget {budget['k_Omega_max']}"
            )
        if k_max > budget["k_max_max"]:
            raise ValidationError(
                f"per-column corruption {k_max} exceeds budget {budget['k_max_max']}"
            )
        if k_T * L > n:
            raise ValidationError(f"k_T * L = {k_T * L} exceeds n = {n}")
    elif mode != MODE_FREE:
        raise ValidationError(f"unknown mode {mode!r}")
    Y, S, supports = generate_truth(
        n, L, m, k_T, k_per_column, magnitude_model=magnitude_model, seed=seed
    )
    return ProblemInstance(
        ensemble=ensemble,
        Y_true=Y,
        S_true=S,
        M=measure(ensemble, Y, S),
        supports=supports,
        lam=default_lambda(n) if lam is None else float(lam),
        mode=mode,
        magnitude_model=magnitude_model,
        seed=int(seed),
    )


def save_bundle(instance: ProblemInstance, directory) -> None:
    """Write an instance as a directory: manifest plus binary matrices."""
    path = Path(directory)
    path.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format_version": 1,
        "seed": instance.seed,
        "lambda": instance.lam,
        "mode": instance.mode,
        "magnitude_model": instance.magnitude_model,
        "ensemble": instance.ensemble.metadata(),
        "supports": {
            "row_support": list(instance.supports.row_support),
            "col_supports": [list(c) for c in instance.supports.col_supports],
        },
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    for i, a in enumerate(instance.ensemble.A):
        save_matrix_bin(a, path / f"A_{i:03d}.bin")
        if instance.ensemble.kinds[i] == "correlated_gaussian":
            save_matrix_bin(instance.ensemble.sigma[i], path / f"sigma_{i:03d}.bin")
    save_matrix_bin(instance.Y_true, path / "Y_true.bin")
    save_matrix_bin(instance.S_true, path / "S_true.bin")
    save_matrix_bin(instance.M, path / "M.bin")


def load_bundle(directory) -> ProblemInstance:
    path = Path(directory)
    manifest = json.loads((path / "manifest.json").read_text())
    meta = manifest["ensemble"]
    n, L = meta["n"], meta["L"]
    A = [load_matrix_bin(path / f"A_{i:03d}.bin") for i in range(L)]
    sigma = []
    for i, kind in enumerate(meta["kinds"]):
        sig_file = path / f"sigma_{i:03d}.bin"
        sigma.append(load_matrix_bin(sig_file) if sig_file.exists() else np.eye(n))
    ensemble = SensingEnsemble(
        A=A,
        sigma=sigma,
        kappa=meta["kappa"],
        mu=meta["mu"],
        mu_exact=meta["mu_exact"],
        seed=meta["seed"],
        kinds=meta["kinds"],
        rng_algorithm=meta.get("rng", "unknown"),
    )
    Y = load_matrix_bin(path / "Y_true.bin")
    S = load_matrix_bin(path / "S_true.bin")
    M = load_matrix_bin(path / "M.bin")
    sup = manifest["supports"]
    supports = SupportPattern(
        n=n,
        m=meta["m"],
        L=L,
        row_support=tuple(sup["row_support"]),
        col_supports=tuple(tuple(c) for c in sup["col_supports"]),
    )
    return ProblemInstance(
        ensemble=ensemble,
        Y_true=Y,
        S_true=S,
        M=M,
        supports=supports,
        lam=manifest["lambda"],
        mode=manifest["mode"],
        magnitude_model=manifest["magnitude_model"],
        seed=manifest["seed"],
    )


def make_specs(kind: str, n: int, L: int) -> list[DistributionSpec]:
    """L copies of the named identity-correlation spec."""
    return [spec_from_name(kind, n) for _ in range(L)]
