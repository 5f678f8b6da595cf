from collections.abc import Sequence
from dataclasses import asdict, dataclass
from pathlib import Path
import time

from joblib import Parallel, delayed
from loguru import logger
import numpy as np
import pandas as pd
from tqdm import tqdm
import typer

from qst_model.config import REPORTS_DIR, SVT_MAX_ITERS, THREADS
from qst_model.dataset import Dataset, ensemble_for, load_dataset
from qst_model.errors import ArgumentError
from qst_model.modeling.lqst import NetworkParams, trace_forward
from qst_model.modeling.train import load_checkpoint
from qst_model.quantum import (
    DensityMatrix,
    MeasurementEnsemble,
    MeasurementKind,
    bell_state,
    classic_fidelity,
    ensemble_from_indices,
    fidelity,
    pauli4_povm,
    povm_probabilities,
    rank_estimate,
    sample_povm,
    trace_distance,
)
from qst_model.report import RunManifest, manifest_path, write_json_report, write_manifest
from qst_model.svt import SvtConfig, compare_svt_ranks

app = typer.Typer()


@dataclass(frozen=True)
class EvalMetrics:
    """Population mean and standard deviation of the closeness metrics over a test set."""

    n: int
    fidelity_mean: float
    fidelity_std: float
    trace_distance_mean: float
    trace_distance_std: float
    rank_mean: float
    rank_std: float
    classic_fidelity_mean: float | None = None
    classic_fidelity_std: float | None = None


def _score(params, target, b, povm):
    x_out = trace_forward(params, b).x_out
    scores = [fidelity(target, x_out), trace_distance(target, x_out), rank_estimate(x_out)]
    if povm is not None:
        scores.append(
            classic_fidelity(povm_probabilities(x_out, povm), povm_probabilities(target, povm))
        )
    return scores


def _aggregate(scores: list[list[float]]) -> EvalMetrics:
    table = np.asarray(scores, dtype=np.float64)
    classic = {}
    if table.shape[1] == 4:
        classic = {
            "classic_fidelity_mean": float(table[:, 3].mean()),
            "classic_fidelity_std": float(table[:, 3].std()),
        }
    return EvalMetrics(
        n=table.shape[0],
        fidelity_mean=float(table[:, 0].mean()),
        fidelity_std=float(table[:, 0].std()),
        trace_distance_mean=float(table[:, 1].mean()),
        trace_distance_std=float(table[:, 1].std()),
        rank_mean=float(table[:, 2].mean()),
        rank_std=float(table[:, 2].std()),
        **classic,
    )


def evaluate(
    params: NetworkParams,
    dataset: Dataset,
    split: str = "test",
    classic: bool | None = None,
    n_jobs: int = THREADS,
) -> EvalMetrics:
    """Closeness of the network's reconstructions to the true states of one split.

    Classic fidelity of the full Pauli-4 outcome distributions is added for POVM data
    (or whenever ``classic`` is true).
    """
    states, measurements = dataset.split(split)
    if len(states) == 0:
        raise ArgumentError(f"the {split} split is empty")
    if classic is None:
        classic = dataset.kind is MeasurementKind.POVM
    povm = pauli4_povm(dataset.config.n_qubits) if classic else None
    scores = Parallel(n_jobs=n_jobs)(
        delayed(_score)(params, target, b, povm) for target, b in zip(states, measurements)
    )
    return _aggregate(scores)


def svt_baseline(
    dataset: Dataset, cfg: SvtConfig, split: str = "test", n_jobs: int = THREADS
) -> dict:
    """SVT statistics on the states of one split, measured by the dataset's own ensemble,
    so they line up with :func:`evaluate` on the same split."""
    states, _ = dataset.split(split)
    if len(states) == 0:
        raise ArgumentError(f"the {split} split is empty")
    summary = compare_svt_ranks(
        [DensityMatrix(rho) for rho in states], ensemble_for(dataset), cfg, n_jobs=n_jobs
    )
    return {"tau": cfg.tau, "delta": cfg.delta, **summary}


def _check_bell_ensemble(params: NetworkParams, ensemble: MeasurementEnsemble) -> None:
    if ensemble.kind is not MeasurementKind.POVM or ensemble.n_qubits != 2:
        raise ArgumentError("Bell estimation needs a two-qubit Pauli-4 POVM network")
    if params.meas_count != ensemble.count:
        raise ArgumentError(
            f"network reads {params.meas_count} outcomes, ensemble observes {ensemble.count}"
        )


def estimate_bell(
    params: NetworkParams,
    ensemble: MeasurementEnsemble,
    n_avg: int,
    repeats: int,
    rng: np.random.Generator,
) -> EvalMetrics:
    """Reconstruct the Bell state from ``repeats`` independent ``n_avg``-shot frequency
    vectors restricted to the ensemble's observed outcomes."""
    _check_bell_ensemble(params, ensemble)
    if repeats < 1:
        raise ArgumentError(f"repeats must be >= 1, got {repeats}")
    rho = bell_state()
    povm = pauli4_povm(2)
    p = povm_probabilities(rho, povm)
    observed = np.asarray(ensemble.indices)
    scores = []
    for _ in range(repeats):
        b = sample_povm(p, n_avg, rng)[observed]
        scores.append(_score(params, rho.matrix, b, povm))
    return _aggregate(scores)


def sweep_n_avg(
    params: NetworkParams,
    ensemble: MeasurementEnsemble,
    n_avgs: Sequence[int],
    repeats: int,
    rng: np.random.Generator,
    quiet: bool = False,
) -> pd.DataFrame:
    """Bell-state metrics of one network for each shot count."""
    rows = []
    for n_avg in tqdm(n_avgs, disable=quiet):
        metrics = estimate_bell(params, ensemble, int(n_avg), repeats, rng)
        rows.append({"n_avg": int(n_avg), "m": ensemble.count, **asdict(metrics)})
    return pd.DataFrame(rows)


def sweep_meas(
    networks: Sequence[tuple[NetworkParams, MeasurementEnsemble]],
    n_avg: int,
    repeats: int,
    rng: np.random.Generator,
    quiet: bool = False,
) -> pd.DataFrame:
    """Bell-state metrics per observed outcome count, one trained network per count."""
    rows = []
    for params, ensemble in tqdm(networks, disable=quiet):
        metrics = estimate_bell(params, ensemble, n_avg, repeats, rng)
        rows.append({"n_avg": n_avg, "m": ensemble.count, **asdict(metrics)})
    return pd.DataFrame(rows).sort_values("m", kind="stable").reset_index(drop=True)


def parse_sweep(text: str) -> tuple[str, list[int]]:
    """``"n-avg=100,200"`` or ``"m=10,16"``."""
    name, _, values = text.partition("=")
    if name not in ("n-avg", "m") or not values:
        raise typer.BadParameter(f"--sweep must look like n-avg=100,200 or m=10,16, got {text!r}")
    try:
        parsed = [int(v) for v in values.split(",")]
    except ValueError as e:
        raise typer.BadParameter(f"sweep values must be integers, got {values!r}") from e
    if any(v < 1 for v in parsed):
        raise typer.BadParameter("sweep values must be positive")
    return name, parsed


def _load_network(path: Path, dataset: Dataset | None):
    if dataset is not None:
        ensemble = ensemble_for(dataset)
        params, metadata, _ = load_checkpoint(path, ensemble)
        return params, ensemble, metadata
    params, metadata, record = load_checkpoint(path)
    if record is None:
        raise ArgumentError(f"{path} stores no measurement ensemble; pass --data")
    ensemble = ensemble_from_indices(record["n_qubits"], record["kind"], record["indices"])
    return params, ensemble, metadata


@app.command()
def main(
    ckpt_paths: list[Path] = typer.Option(..., "--ckpt", exists=True, dir_okay=False),
    data_path: Path | None = typer.Option(None, "--data", exists=True, dir_okay=False),
    split: str = "test",
    bell: bool = typer.Option(False, "--bell", help="Estimate the Bell state instead."),
    m: int | None = typer.Option(None, "--m", min=1, help="Expected observed outcome count."),
    n_avg: int = typer.Option(1000, "--n-avg", min=1),
    repeats: int | None = typer.Option(None, min=1, help="Bell estimations to average."),
    sweep: str | None = typer.Option(None, help="n-avg=... or m=... (Bell mode)."),
    seed: int = 7,
    output_path: Path = typer.Option(REPORTS_DIR / "eval.json", "--out"),
    quick: bool = typer.Option(False, help="Few repeats for a smoke test."),
    with_svt: bool = typer.Option(False, "--svt-baseline", help="Also run SVT on the split."),
    tau: float = typer.Option(2.0, help="SVT threshold for --svt-baseline."),
    delta: float = typer.Option(0.1, help="SVT step size for --svt-baseline."),
    svt_max_iters: int = typer.Option(SVT_MAX_ITERS, "--svt-max-iters", min=1),
    threads: int = typer.Option(THREADS, envvar="LQST_THREADS", min=1),
    quiet: bool = False,
):
    started = time.perf_counter()
    if sweep is not None and not bell:
        raise typer.BadParameter("--sweep requires --bell")
    if with_svt and bell:
        raise typer.BadParameter("--svt-baseline needs a dataset, not --bell")
    if with_svt and not (tau > 0 and delta > 0):
        raise typer.BadParameter("--tau and --delta must be positive")
    if not bell and data_path is None:
        raise typer.BadParameter("--data is required unless --bell is given")
    sweep_name, sweep_values = parse_sweep(sweep) if sweep else (None, [])
    if sweep_name != "m" and len(ckpt_paths) != 1:
        raise typer.BadParameter("exactly one --ckpt is expected")
    if sweep_name == "m" and len(ckpt_paths) != len(sweep_values):
        raise typer.BadParameter("--sweep m=... needs one --ckpt per value")

    dataset = load_dataset(data_path) if data_path is not None else None
    networks = [_load_network(p, dataset) for p in ckpt_paths]
    if m is not None and sweep_name != "m" and networks[0][1].count != m:
        raise typer.BadParameter(f"checkpoint observes {networks[0][1].count} outcomes, not {m}")
    rng = np.random.default_rng(seed)
    n_repeats = repeats or (5 if quick else 100)
    artifacts = {"report": str(output_path)}
    config = {"checkpoints": ckpt_paths, "bell": bell, "sweep": sweep, "seed": seed}

    if sweep_name is not None:
        if sweep_name == "m":
            for (params, ensemble, _), expected in zip(networks, sweep_values):
                if ensemble.count != expected:
                    raise typer.BadParameter(
                        f"checkpoint observes {ensemble.count} outcomes, sweep lists {expected}"
                    )
            table = sweep_meas([(p, e) for p, e, _ in networks], n_avg, n_repeats, rng, quiet)
        else:
            params, ensemble, _ = networks[0]
            table = sweep_n_avg(params, ensemble, sweep_values, n_repeats, rng, quiet)
        output_path.parent.mkdir(parents=True, exist_ok=True)
        table.to_csv(output_path, index=False)
        config.update(n_avg=n_avg, repeats=n_repeats)
    else:
        params, ensemble, _ = networks[0]
        baseline = None
        if bell:
            metrics = estimate_bell(params, ensemble, n_avg, n_repeats, rng)
            rank = 1
            config.update(n_avg=n_avg, repeats=n_repeats)
        else:
            metrics = evaluate(params, dataset, split, n_jobs=threads)
            rank = dataset.config.rank
            config.update(data=data_path, split=split)
            if with_svt:
                cfg = SvtConfig(tau=tau, delta=delta, max_iters=svt_max_iters)
                baseline = svt_baseline(dataset, cfg, split, n_jobs=threads)
                config.update(svt_tau=tau, svt_delta=delta, svt_max_iters=svt_max_iters)
                logger.info(
                    f"SVT on the same states: fidelity {baseline['mean_fidelity']:.4f}, "
                    f"mean rank {baseline['mean_rank']:.3f}"
                )
        write_json_report(
            {
                "manifest": str(manifest_path(output_path)),
                "mode": "bell" if bell else "dataset",
                "checkpoint": str(ckpt_paths[0]),
                "dataset": None if data_path is None else str(data_path),
                "depth": params.depth,
                "rank": rank,
                "m": ensemble.count,
                "metrics": asdict(metrics),
                "svt_baseline": baseline,
            },
            output_path,
            "eval_report",
        )
        logger.info(
            f"fidelity {metrics.fidelity_mean:.4f} ± {metrics.fidelity_std:.4f}, "
            f"trace distance {metrics.trace_distance_mean:.4f} ± {metrics.trace_distance_std:.4f}"
        )
    write_manifest(
        RunManifest.create("eval", config, seed, artifacts, time.perf_counter() - started),
        manifest_path(output_path),
    )
    logger.success(f"Evaluation written to {output_path}")


if __name__ == "__main__":
    app()
