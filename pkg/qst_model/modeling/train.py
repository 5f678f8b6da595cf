import base64
from dataclasses import asdict, dataclass, field, fields, replace
import hashlib
import json
import math
from pathlib import Path
import time

from loguru import logger
import numpy as np
import pandas as pd
from tqdm import tqdm
import typer

from qst_model.config import (
    ADAM_BETA1,
    ADAM_BETA2,
    ADAM_EPS,
    ADAM_LR,
    INIT_STEP,
    INIT_THRESHOLD,
    PATIENCE,
    PAULI_EPSILON,
    PAULI_MU,
    POVM_EPSILON,
    POVM_INIT_THRESHOLD,
    POVM_MU,
    THREADS,
)
from qst_model.dataset import Dataset, ensemble_for, load_dataset
from qst_model.errors import (
    ArgumentError,
    DimensionError,
    DimensionInconsistencyError,
    MalformedFileError,
    VersionMismatchError,
)
from qst_model.modeling.lqst import NetworkParams, backward, init_params, nmse_loss
from qst_model.quantum import MeasurementEnsemble, MeasurementKind
from qst_model.report import (
    RunManifest,
    jsonable,
    manifest_path,
    write_json_report,
    write_manifest,
)

app = typer.Typer()

CHECKPOINT_FORMAT = "lqst-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class AdamState:
    """Bias-corrected ADAM moments. Complex parameters are updated as independent real
    and imaginary parts."""

    lr: float = ADAM_LR
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def _as_arrays(obj) -> dict[str, np.ndarray]:
    return obj.arrays() if hasattr(obj, "arrays") else dict(obj)


def _realify(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    return arr.view(np.float64) if np.iscomplexobj(arr) else arr.astype(np.float64)


def adam_step(state: AdamState, params, grads):
    """One ADAM update; returns the new state and new parameters without mutating inputs.

    ``params`` and ``grads`` are ``NetworkParams``/``Gradients`` or plain dicts of arrays.
    """
    p_arrays, g_arrays = _as_arrays(params), _as_arrays(grads)
    if p_arrays.keys() != g_arrays.keys():
        raise DimensionError(f"gradient fields {sorted(g_arrays)} do not match {sorted(p_arrays)}")
    t = state.step + 1
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    new_m, new_v, updated = {}, {}, {}
    for k, p in p_arrays.items():
        p = np.asarray(p)
        g = np.asarray(g_arrays[k])
        if p.shape != g.shape:
            raise DimensionError(f"gradient of {k} has shape {g.shape}, parameter {p.shape}")
        g_real = _realify(g.astype(p.dtype, copy=False))
        m = state.m.get(k, np.zeros_like(g_real))
        v = state.v.get(k, np.zeros_like(g_real))
        if m.shape != g_real.shape:
            raise DimensionError(f"ADAM moments of {k} have shape {m.shape}")
        m = state.beta1 * m + (1.0 - state.beta1) * g_real
        v = state.beta2 * v + (1.0 - state.beta2) * (g_real * g_real)
        delta = (state.lr / bc1) * m / (np.sqrt(v / bc2) + state.eps)
        new_real = _realify(p) - delta
        updated[k] = new_real.view(p.dtype) if np.iscomplexobj(p) else new_real.reshape(p.shape)
        new_m[k], new_v[k] = m, v
    new_state = replace(state, step=t, m=new_m, v=new_v)
    if isinstance(params, NetworkParams):
        return new_state, params.with_arrays(updated)
    return new_state, updated


@dataclass(frozen=True)
class TrainOptions:
    batch_size: int = 1000
    lr: float = ADAM_LR
    max_epochs: int = 100
    patience: int | None = PATIENCE
    seed: int = 0
    val_every: int = 1
    n_jobs: int = 1
    quiet: bool = False

    def __post_init__(self):
        if self.batch_size < 1:
            raise ArgumentError(f"batch size must be >= 1, got {self.batch_size}")
        if not self.lr > 0:
            raise ArgumentError(f"learning rate must be positive, got {self.lr}")
        if self.max_epochs < 0:
            raise ArgumentError(f"max_epochs must be >= 0, got {self.max_epochs}")
        if self.patience is not None and self.patience < 1:
            raise ArgumentError(f"patience must be >= 1, got {self.patience}")
        if self.val_every < 1:
            raise ArgumentError(f"val_every must be >= 1, got {self.val_every}")


@dataclass
class TrainReport:
    curve: pd.DataFrame
    initial_val_loss: float
    best_val_loss: float
    best_epoch: int
    best_step: int
    stop_reason: str
    steps: int
    evaluations: int
    test_metrics: dict | None = None

    def summary(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "curve"}


def train_loop(
    params: NetworkParams, dataset: Dataset, options: TrainOptions
) -> tuple[NetworkParams, TrainReport]:
    """Mini-batch ADAM on the training split with validation-based early stopping.

    Validation runs before the first update and then every ``options.val_every`` updates;
    training stops after ``options.patience`` evaluations without strict improvement.
    The parameters with the lowest validation loss are returned.
    """
    train = dataset.samples("train")
    val = dataset.samples("validation")
    if not train or not val:
        raise ArgumentError("training needs non-empty train and validation splits")
    rng = np.random.default_rng(options.seed)
    state = AdamState(lr=options.lr)
    patience = math.inf if options.patience is None else options.patience

    best = params
    best_val = initial_val = nmse_loss(params, val)
    best_epoch = best_step = 0
    evaluations, since_best, step = 1, 0, 0
    stop_reason = "max_epochs"
    logger.info(f"Initial validation NMSE {initial_val:.6e}")

    rows = []
    for epoch in tqdm(range(1, options.max_epochs + 1), disable=options.quiet):
        order = rng.permutation(len(train))
        train_total, seen, val_losses = 0.0, 0, []
        for start in range(0, len(train), options.batch_size):
            batch = [train[i] for i in order[start : start + options.batch_size]]
            loss, grads = backward(params, batch, n_jobs=options.n_jobs)
            state, params = adam_step(state, params, grads)
            step += 1
            train_total += loss * len(batch)
            seen += len(batch)
            if step % options.val_every:
                continue
            val_loss = nmse_loss(params, val)
            evaluations += 1
            val_losses.append(val_loss)
            if val_loss < best_val:
                best, best_val, best_epoch, best_step = params, val_loss, epoch, step
                since_best = 0
            else:
                since_best += 1
            if since_best >= patience:
                stop_reason = "patience"
                break
        rows.append(
            {
                "epoch": epoch,
                "train_loss": train_total / seen,
                "val_loss": min(val_losses) if val_losses else np.nan,
            }
        )
        logger.debug(f"epoch {epoch}: train {rows[-1]['train_loss']:.6e}, "
                     f"val {rows[-1]['val_loss']:.6e}")
        if stop_reason == "patience":
            logger.info(f"No validation improvement in {patience} evaluations; stopping")
            break

    curve = pd.DataFrame(rows, columns=["epoch", "train_loss", "val_loss"])
    report = TrainReport(
        curve=curve,
        initial_val_loss=initial_val,
        best_val_loss=best_val,
        best_epoch=best_epoch,
        best_step=best_step,
        stop_reason=stop_reason,
        steps=step,
        evaluations=evaluations,
    )
    return best, report


def _encode(arr: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(arr, dtype="<f8").tobytes()).decode("ascii")


def _decode(text: str, shape: tuple[int, ...]) -> np.ndarray:
    raw = base64.b64decode(text.encode("ascii"), validate=True)
    if len(raw) != 8 * math.prod(shape):
        raise DimensionInconsistencyError(
            f"array of {len(raw)} bytes does not match shape {shape}"
        )
    return np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)


def _digest(document: dict) -> str:
    canonical = json.dumps(document, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def save_checkpoint(
    params: NetworkParams,
    metadata: dict,
    path: Path,
    ensemble: MeasurementEnsemble | None = None,
) -> None:
    """JSON checkpoint with base64 float64 arrays and a SHA-256 over its canonical form."""
    document = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "d": params.dim,
        "m": params.meas_count,
        "T": params.depth,
        "mu": params.mu,
        "epsilon": params.epsilon,
        "ensemble": None
        if ensemble is None
        else {
            "kind": ensemble.kind.value,
            "n_qubits": ensemble.n_qubits,
            "indices": list(ensemble.indices),
        },
        "params": {
            "weights_real": _encode(params.weights.real),
            "weights_imag": _encode(params.weights.imag),
            "step_sizes": _encode(params.step_sizes),
            "thresholds": _encode(params.thresholds),
        },
        "metadata": jsonable(metadata or {}),
    }
    document["checksum"] = _digest(document)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(document, indent=2, sort_keys=True))


def load_checkpoint(
    path: Path, ensemble: MeasurementEnsemble | None = None
) -> tuple[NetworkParams, dict, dict | None]:
    """Read a checkpoint, returning parameters, metadata and the stored ensemble record.

    Raises ``DimensionInconsistencyError`` when ``ensemble`` does not fit the network.
    """
    try:
        document = json.loads(Path(path).read_text())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise MalformedFileError(f"{path} is not a JSON checkpoint: {e}") from e
    if not isinstance(document, dict) or document.get("format") != CHECKPOINT_FORMAT:
        raise MalformedFileError(f"{path} is not an LQST checkpoint")
    if document.get("version") != CHECKPOINT_VERSION:
        raise VersionMismatchError(
            f"{path} has checkpoint version {document.get('version')}, "
            f"expected {CHECKPOINT_VERSION}"
        )
    checksum = document.pop("checksum", None)
    if checksum != _digest(document):
        raise MalformedFileError(f"{path} failed its checksum")
    try:
        d, m, depth = int(document["d"]), int(document["m"]), int(document["T"])
        arrays = document["params"]
        weights = _decode(arrays["weights_real"], (depth, m, d * d)) + 1j * _decode(
            arrays["weights_imag"], (depth, m, d * d)
        )
        params = NetworkParams(
            weights=weights,
            step_sizes=_decode(arrays["step_sizes"], (depth,)),
            thresholds=_decode(arrays["thresholds"], (depth,)),
            mu=document["mu"],
            epsilon=document["epsilon"],
        )
    except (KeyError, TypeError, ValueError) as e:
        raise MalformedFileError(f"{path} has a malformed parameter block: {e}") from e
    if ensemble is not None and (ensemble.dim, ensemble.count) != (d, m):
        raise DimensionInconsistencyError(
            f"checkpoint is for d={d}, m={m}; ensemble has d={ensemble.dim}, m={ensemble.count}"
        )
    return params, document.get("metadata", {}), document.get("ensemble")


def output_constants(kind: MeasurementKind) -> tuple[float, float]:
    """Default (mu, epsilon) for the output layer."""
    if kind is MeasurementKind.POVM:
        return POVM_MU, POVM_EPSILON
    return PAULI_MU, PAULI_EPSILON


def init_constants(kind: MeasurementKind) -> tuple[float, float]:
    """Default initial (step size, threshold) of every layer."""
    if kind is MeasurementKind.POVM:
        return INIT_STEP, POVM_INIT_THRESHOLD
    return INIT_STEP, INIT_THRESHOLD


@app.command()
def main(
    data_path: Path = typer.Option(..., "--data", exists=True, dir_okay=False),
    output_path: Path = typer.Option(..., "--out", help="Checkpoint file to write."),
    layers: int = typer.Option(3, min=1, help="Network depth T."),
    batch: int | None = typer.Option(None, min=1, help="Mini-batch size."),
    lr: float = typer.Option(ADAM_LR, min=0.0),
    mu: float | None = typer.Option(None, min=0.0, help="Eigenvalue shift."),
    epsilon: float | None = typer.Option(None, help="Trace normalization constant."),
    init_step: float | None = typer.Option(None, "--init-step", help="Initial step sizes."),
    init_threshold: float | None = typer.Option(
        None, "--init-threshold", min=0.0, help="Initial thresholds."
    ),
    patience: int = typer.Option(PATIENCE, min=1),
    max_epochs: int | None = typer.Option(None, min=0),
    val_every: int = typer.Option(1, min=1, help="Validate every N updates."),
    seed: int = 7,
    quick: bool = typer.Option(False, help="Few epochs for a smoke test."),
    threads: int = typer.Option(THREADS, envvar="LQST_THREADS", min=1),
    quiet: bool = False,
):
    from qst_model.modeling.predict import evaluate

    started = time.perf_counter()
    if lr <= 0:
        raise typer.BadParameter("--lr must be positive")
    if epsilon is not None and not epsilon > 0:
        raise typer.BadParameter("--epsilon must be positive")
    if init_step is not None and not init_step > 0:
        raise typer.BadParameter("--init-step must be positive")
    dataset = load_dataset(data_path)
    ensemble = ensemble_for(dataset)
    default_mu, default_epsilon = output_constants(dataset.kind)
    default_step, default_threshold = init_constants(dataset.kind)
    povm_data = dataset.kind is MeasurementKind.POVM
    options = TrainOptions(
        batch_size=batch or (50 if povm_data else 1000),
        lr=lr,
        max_epochs=max_epochs if max_epochs is not None else (2 if quick else 4000),
        patience=patience,
        seed=seed,
        val_every=val_every,
        n_jobs=threads,
        quiet=quiet,
    )
    params = init_params(
        ensemble,
        layers,
        mu=default_mu if mu is None else mu,
        epsilon=default_epsilon if epsilon is None else epsilon,
        step=default_step if init_step is None else init_step,
        threshold=default_threshold if init_threshold is None else init_threshold,
    )
    logger.info(f"Training a {layers}-layer network on {data_path}")
    params, report = train_loop(params, dataset, options)
    if dataset.config.sizes[2]:
        report.test_metrics = asdict(evaluate(params, dataset, "test", n_jobs=threads))

    save_checkpoint(
        params,
        {"dataset": str(data_path), "rank": dataset.config.rank, "seed": seed},
        output_path,
        ensemble,
    )
    curve_path = output_path.with_name(output_path.name + ".curve.csv")
    report.curve.to_csv(curve_path, index=False)
    report_path = output_path.with_name(output_path.name + ".report.json")
    manifest = manifest_path(output_path)
    write_json_report(
        {
            "manifest": str(manifest),
            "dataset": str(data_path),
            "checkpoint": str(output_path),
            "curve": str(curve_path),
            "depth": layers,
            "rank": dataset.config.rank,
            **report.summary(),
        },
        report_path,
        "train_report",
    )
    write_manifest(
        RunManifest.create(
            "train",
            {
                **asdict(options),
                "layers": layers,
                "mu": params.mu,
                "epsilon": params.epsilon,
                "init_step": float(params.step_sizes[0]),
                "init_threshold": float(params.thresholds[0]),
            },
            seed,
            {"checkpoint": str(output_path), "curve": str(curve_path), "report": str(report_path)},
            time.perf_counter() - started,
        ),
        manifest,
    )
    logger.success(
        f"Checkpoint written to {output_path} (best val NMSE {report.best_val_loss:.6e})"
    )


if __name__ == "__main__":
    app()
