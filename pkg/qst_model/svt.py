"""Singular value thresholding (Uzawa iterations) for low-rank state recovery, and the
Monte-Carlo experiments built on it: the tau/delta tuning grid, the probability that
the raw estimate is PSD, and SVT statistics on a fixed set of test states.
"""

from collections.abc import Iterator, Sequence
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
import time

from joblib import Parallel, delayed
from loguru import logger
import numpy as np
import pandas as pd
from tqdm import tqdm
import typer

from qst_model.config import (
    MEAS_COUNT,
    N_QUBITS,
    PSD_TOL,
    REPORTS_DIR,
    SVT_DELTAS,
    SVT_DIVERGENCE_BOUND,
    SVT_MAX_ITERS,
    SVT_REL_TOL,
    SVT_TAUS,
    THREADS,
)
from qst_model.errors import ArgumentError, DimensionError
from qst_model.numlin import CMatrix, hermitize, shrink
from qst_model.quantum import (
    DensityMatrix,
    MeasurementEnsemble,
    apply_adjoint,
    apply_map,
    fidelity,
    measure,
    random_rank_r_state,
    rank_estimate,
    select_observables,
    trace_distance,
)
from qst_model.report import RunManifest, manifest_path, write_manifest

app = typer.Typer()

DIVERGED = -1
SUMMARY_COLUMNS = (
    "mean_iterations",
    "std_iterations",
    "mean_fidelity",
    "std_fidelity",
    "mean_trace_distance",
    "std_trace_distance",
    "mean_rank",
    "psd_probability",
    "diverged",
)


class SvtStatus(str, Enum):
    CONVERGED = "converged"
    MAX_ITERS = "max_iters"
    DIVERGED = "diverged"


@dataclass(frozen=True)
class SvtConfig:
    tau: float
    delta: float
    max_iters: int = SVT_MAX_ITERS
    rel_tol: float = SVT_REL_TOL
    divergence_bound: float = SVT_DIVERGENCE_BOUND

    def __post_init__(self):
        if not self.tau > 0:
            raise ArgumentError(f"tau must be positive, got {self.tau}")
        if not self.delta > 0:
            raise ArgumentError(f"delta must be positive, got {self.delta}")
        if self.max_iters < 1:
            raise ArgumentError(f"max_iters must be >= 1, got {self.max_iters}")
        if not self.rel_tol > 0 or not self.divergence_bound > 0:
            raise ArgumentError("rel_tol and divergence_bound must be positive")


@dataclass(frozen=True)
class SvtResult:
    estimate: CMatrix
    iterations: int
    status: SvtStatus
    final_residual: float


@dataclass(frozen=True)
class SvtTrial:
    """Statistics of one SVT run against a known ground-truth state."""

    iterations: int
    status: SvtStatus
    fidelity: float
    trace_distance: float
    rank: int
    is_psd: bool

    @property
    def diverged(self) -> bool:
        return self.status is SvtStatus.DIVERGED


def _check_measurements(ensemble: MeasurementEnsemble, b) -> np.ndarray:
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (ensemble.count,):
        raise DimensionError(
            f"measurement vector has shape {b.shape}, expected ({ensemble.count},)"
        )
    if not np.all(np.isfinite(b)):
        raise ArgumentError("measurement vector has non-finite entries")
    norm = float(np.linalg.norm(b))
    if norm == 0.0:
        raise ArgumentError("measurement vector is zero; the relative residual is undefined")
    return b


def svt_iterates(
    ensemble: MeasurementEnsemble, b, tau: float, delta: float
) -> Iterator[tuple[int, CMatrix, np.ndarray, float]]:
    """Yield ``(k, X^k, y^k, residual_k)`` for k = 1, 2, ... without end.

    Starting from ``y^0 = 0`` each step computes ``X^k = shrink(A*(y^{k-1}), tau)``,
    the relative residual ``||A(X^k) - b|| / ||b||`` and the dual update
    ``y^k = y^{k-1} + delta * (b - A(X^k))``. The first iterate is always zero.
    """
    b = _check_measurements(ensemble, b)
    b_norm = float(np.linalg.norm(b))
    y = np.zeros(ensemble.count, dtype=np.complex128)
    k = 0
    while True:
        k += 1
        x = shrink(apply_adjoint(ensemble, y), tau)
        ax = apply_map(ensemble, x)
        with np.errstate(over="ignore", invalid="ignore"):
            residual = float(np.linalg.norm(ax - b) / b_norm)
            y = y + delta * (b - ax)
        yield k, x, y, residual


def run_svt(ensemble: MeasurementEnsemble, b, cfg: SvtConfig) -> SvtResult:
    """Run SVT until the relative residual drops below ``cfg.rel_tol``, the iteration
    budget runs out, or the residual leaves ``[0, cfg.divergence_bound]``."""
    x = None
    residual = float("nan")
    for k, x, _, residual in svt_iterates(ensemble, b, cfg.tau, cfg.delta):
        if not np.isfinite(residual) or residual > cfg.divergence_bound:
            logger.debug(f"SVT diverged at iteration {k} (residual {residual:.3e})")
            return SvtResult(x, k, SvtStatus.DIVERGED, residual)
        if residual < cfg.rel_tol:
            return SvtResult(x, k, SvtStatus.CONVERGED, residual)
        if k >= cfg.max_iters:
            return SvtResult(x, k, SvtStatus.MAX_ITERS, residual)
    raise AssertionError("unreachable")  # pragma: no cover


def is_psd(x: CMatrix, tol: float = PSD_TOL) -> bool:
    return bool(np.linalg.eigvalsh(hermitize(x))[0] >= -tol)


def _trial_against(
    rho: DensityMatrix, ensemble: MeasurementEnsemble, cfg: SvtConfig
) -> SvtTrial:
    result = run_svt(ensemble, measure(ensemble, rho), cfg)
    if result.status is SvtStatus.DIVERGED:
        return SvtTrial(result.iterations, result.status, np.nan, np.nan, -1, False)
    x = hermitize(result.estimate)
    return SvtTrial(
        iterations=result.iterations,
        status=result.status,
        fidelity=fidelity(rho, x),
        trace_distance=trace_distance(rho, x),
        rank=rank_estimate(result.estimate),
        is_psd=is_psd(result.estimate),
    )


def run_trial(
    rank: int,
    cfg: SvtConfig,
    rng: np.random.Generator,
    n_qubits: int = N_QUBITS,
    m: int = MEAS_COUNT,
) -> SvtTrial:
    """Draw a random rank-``rank`` state and observable set, then recover it with SVT."""
    rho = random_rank_r_state(2**n_qubits, rank, rng)
    ensemble = select_observables(n_qubits, m, rng)
    return _trial_against(rho, ensemble, cfg)


def trial_streams(rng: np.random.Generator, trials: int) -> list[np.random.SeedSequence]:
    """Independent per-trial seed sequences derived from ``rng``."""
    return np.random.SeedSequence(int(rng.integers(2**63))).spawn(trials)


def _run_trials(rank, cfg, streams, n_qubits, m, n_jobs) -> list[SvtTrial]:
    return Parallel(n_jobs=n_jobs)(
        delayed(run_trial)(rank, cfg, np.random.default_rng(s), n_qubits, m) for s in streams
    )


def summarize_trials(trials: Sequence[SvtTrial]) -> dict:
    """Grid-cell summary; every statistic is -1 when any trial diverged."""
    if any(t.diverged for t in trials):
        return dict.fromkeys(SUMMARY_COLUMNS, DIVERGED)
    iterations = [t.iterations for t in trials]
    fidelities = [t.fidelity for t in trials]
    distances = [t.trace_distance for t in trials]
    return {
        "mean_iterations": float(np.mean(iterations)),
        "std_iterations": float(np.std(iterations)),
        "mean_fidelity": float(np.mean(fidelities)),
        "std_fidelity": float(np.std(fidelities)),
        "mean_trace_distance": float(np.mean(distances)),
        "std_trace_distance": float(np.std(distances)),
        "mean_rank": float(np.mean([t.rank for t in trials])),
        "psd_probability": float(np.mean([t.is_psd for t in trials])),
        "diverged": 0,
    }


def tune_sweep(
    ranks: Sequence[int],
    taus: Sequence[float],
    deltas: Sequence[float],
    trials: int,
    rng: np.random.Generator,
    n_qubits: int = N_QUBITS,
    m: int = MEAS_COUNT,
    max_iters: int = SVT_MAX_ITERS,
    n_jobs: int = THREADS,
    quiet: bool = False,
) -> pd.DataFrame:
    """SVT over the (rank, tau, delta) grid, one row per cell.

    All cells of one rank share the same ``trials`` random states and ensembles.
    """
    if trials < 1:
        raise ArgumentError(f"trials must be >= 1, got {trials}")
    for name, grid in (("taus", taus), ("deltas", deltas)):
        if not grid or any(not v > 0 for v in grid):
            raise ArgumentError(f"{name} must be a non-empty list of positive values")
    rows = []
    cells = [(r, t, d) for r in ranks for t in taus for d in deltas]
    streams = {r: trial_streams(rng, trials) for r in ranks}
    for rank, tau, delta in tqdm(cells, total=len(cells), disable=quiet):
        cfg = SvtConfig(tau=tau, delta=delta, max_iters=max_iters)
        results = _run_trials(rank, cfg, streams[rank], n_qubits, m, n_jobs)
        summary = summarize_trials(results)
        if summary["diverged"] == DIVERGED:
            logger.warning(f"SVT diverged for rank={rank}, tau={tau}, delta={delta}")
        else:
            logger.debug(
                f"rank={rank} tau={tau} delta={delta}: "
                f"{summary['mean_iterations']:.1f} iterations, F={summary['mean_fidelity']:.4f}"
            )
        rows.append({"rank": rank, "tau": tau, "delta": delta, **summary})
    return pd.DataFrame(rows)


def psd_probability(
    tau: float,
    delta: float,
    trials: int,
    rng: np.random.Generator,
    rank: int = 3,
    n_qubits: int = N_QUBITS,
    m: int = MEAS_COUNT,
    max_iters: int = SVT_MAX_ITERS,
    n_jobs: int = THREADS,
) -> float:
    """Fraction of trials whose SVT estimate is PSD to 1e-8, or -1 if any diverged."""
    if trials < 1:
        raise ArgumentError(f"trials must be >= 1, got {trials}")
    cfg = SvtConfig(tau=tau, delta=delta, max_iters=max_iters)
    results = _run_trials(rank, cfg, trial_streams(rng, trials), n_qubits, m, n_jobs)
    return float(summarize_trials(results)["psd_probability"])


def compare_svt_ranks(
    states: Sequence[DensityMatrix],
    ensemble: MeasurementEnsemble,
    cfg: SvtConfig,
    n_jobs: int = THREADS,
) -> dict:
    """SVT statistics on given test states measured by one fixed ensemble."""
    if not states:
        raise ArgumentError("at least one test state is required")
    results = Parallel(n_jobs=n_jobs)(
        delayed(_trial_against)(rho, ensemble, cfg) for rho in states
    )
    return summarize_trials(results)


def _csv_floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise typer.BadParameter(f"expected comma-separated numbers, got {text!r}") from e


def _positive_grid(text: str, name: str) -> list[float]:
    values = _csv_floats(text)
    if not values or any(not v > 0 for v in values):
        raise typer.BadParameter(f"{name} values must be positive, got {text!r}")
    return values


@app.command()
def main(
    output_path: Path = typer.Option(REPORTS_DIR / "svt.csv", "--out"),
    ranks: str = typer.Option("3", help="Comma-separated state ranks."),
    taus: str = typer.Option(",".join(str(t) for t in SVT_TAUS), help="Threshold grid."),
    deltas: str = typer.Option(",".join(str(d) for d in SVT_DELTAS), help="Step size grid."),
    psd_prob: bool = typer.Option(False, "--psd-prob", help="Only estimate P(estimate is PSD)."),
    tau: float = typer.Option(2.0, help="Threshold for --psd-prob."),
    delta: float = typer.Option(0.1, help="Step size for --psd-prob."),
    trials: int | None = typer.Option(None, min=1, help="Trials per grid cell."),
    qubits: int = typer.Option(N_QUBITS, min=1),
    meas: int = typer.Option(MEAS_COUNT, min=1),
    max_iters: int = typer.Option(SVT_MAX_ITERS, min=1),
    seed: int = 7,
    quick: bool = typer.Option(False, help="Small smoke-test trial counts."),
    threads: int = typer.Option(THREADS, envvar="LQST_THREADS", min=1),
    quiet: bool = False,
):
    started = time.perf_counter()
    rng = np.random.default_rng(seed)
    rank_list = [int(r) for r in _csv_floats(ranks)]
    if psd_prob:
        if not (tau > 0 and delta > 0):
            raise typer.BadParameter("--tau and --delta must be positive")
        n_trials = trials or (10 if quick else 1000)
        table = pd.DataFrame(
            [
                {
                    "rank": rank,
                    "tau": tau,
                    "delta": delta,
                    "trials": n_trials,
                    "psd_probability": psd_probability(
                        tau, delta, n_trials, rng, rank=rank, n_qubits=qubits, m=meas,
                        max_iters=max_iters, n_jobs=threads,
                    ),
                }
                for rank in rank_list
            ]
        )
        for row in table.itertuples():
            logger.info(
                f"P(PSD) for rank {row.rank}, tau={tau}, delta={delta}: "
                f"{row.psd_probability:.4f}"
            )
    else:
        n_trials = trials or (3 if quick else 20)
        table = tune_sweep(
            rank_list,
            _positive_grid(taus, "--taus"),
            _positive_grid(deltas, "--deltas"),
            n_trials,
            rng,
            n_qubits=qubits,
            m=meas,
            max_iters=max_iters,
            n_jobs=threads,
            quiet=quiet,
        )
    output_path.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(output_path, index=False)
    config = {
        "ranks": rank_list,
        "psd_prob": psd_prob,
        "trials": n_trials,
        "qubits": qubits,
        "meas": meas,
        "max_iters": max_iters,
    }
    if psd_prob:
        config.update(tau=tau, delta=delta)
    else:
        config.update(taus=_csv_floats(taus), deltas=_csv_floats(deltas))
    write_manifest(
        RunManifest.create(
            "svt", config, seed, {"report": str(output_path)}, time.perf_counter() - started
        ),
        manifest_path(output_path),
    )
    logger.success(f"SVT results written to {output_path}")


if __name__ == "__main__":
    app()
