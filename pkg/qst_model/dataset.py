from dataclasses import asdict, dataclass
import hashlib
from pathlib import Path
import struct
import time

from joblib import Parallel, delayed
from loguru import logger
import numpy as np
from tqdm import tqdm
import typer

from qst_model.config import MEAS_COUNT, THREADS
from qst_model.errors import (
    ArgumentError,
    DimensionInconsistencyError,
    MalformedFileError,
    VersionMismatchError,
)
from qst_model.quantum import (
    MeasurementEnsemble,
    MeasurementKind,
    ensemble_from_indices,
    measure,
    pauli4_povm,
    povm_probabilities,
    random_rank_r_state,
    sample_povm,
    select_observables,
    select_povm_outcomes,
)
from qst_model.report import RunManifest, manifest_path, write_manifest

app = typer.Typer()

MAGIC = b"LQSTDATA"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<IIIBIIQIII")
_KIND_CODES = {MeasurementKind.PAULI: 0, MeasurementKind.POVM: 1}
_DIGEST_SIZE = 32

SPLITS = ("train", "validation", "test")


@dataclass(frozen=True)
class DatasetConfig:
    """Generation settings. ``meas`` is the Pauli observable count or, for POVM data,
    the number of observed outcomes (default: all 4**n)."""

    n_qubits: int
    rank: int
    sizes: tuple[int, int, int]
    seed: int
    kind: MeasurementKind = MeasurementKind.PAULI
    meas: int | None = None
    n_avg: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", MeasurementKind(self.kind))
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        if self.n_qubits < 1:
            raise ArgumentError(f"qubit count must be >= 1, got {self.n_qubits}")
        if not 1 <= self.rank <= self.dim:
            raise ArgumentError(f"rank must be in 1..{self.dim}, got {self.rank}")
        if len(self.sizes) != 3 or min(self.sizes) < 0 or sum(self.sizes) < 1:
            raise ArgumentError(f"sizes must be three non-negative counts, got {self.sizes}")
        if not 0 <= self.seed < 2**64:
            raise ArgumentError(f"seed must fit in 64 bits, got {self.seed}")
        if self.meas is None:
            default = MEAS_COUNT if self.n_qubits == 4 else 4**self.n_qubits - 1
            if self.kind is MeasurementKind.POVM:
                default = 4**self.n_qubits
            object.__setattr__(self, "meas", default)
        if self.kind is MeasurementKind.POVM:
            if self.n_avg < 1:
                raise ArgumentError("POVM datasets need a shot count n_avg >= 1")
            if not 1 <= self.meas <= 4**self.n_qubits:
                raise ArgumentError(f"observed outcomes must be in 1..{4**self.n_qubits}")
        else:
            if self.n_avg:
                raise ArgumentError("n_avg only applies to POVM datasets")
            if not 1 <= self.meas <= 4**self.n_qubits - 1:
                raise ArgumentError(f"observable count must be in 1..{4**self.n_qubits - 1}")

    @property
    def dim(self) -> int:
        return 2**self.n_qubits


@dataclass(frozen=True)
class Dataset:
    config: DatasetConfig
    indices: tuple[int, ...]
    states: np.ndarray
    measurements: np.ndarray

    @property
    def dim(self) -> int:
        return self.config.dim

    @property
    def meas_count(self) -> int:
        return len(self.indices)

    @property
    def kind(self) -> MeasurementKind:
        return self.config.kind

    def __len__(self) -> int:
        return self.states.shape[0]

    def _bounds(self, split: str) -> tuple[int, int]:
        if split not in SPLITS:
            raise ArgumentError(f"unknown split {split!r}, expected one of {SPLITS}")
        n_train, n_val, _ = self.config.sizes
        start = {"train": 0, "validation": n_train, "test": n_train + n_val}[split]
        return start, start + self.config.sizes[SPLITS.index(split)]

    def split(self, split: str) -> tuple[np.ndarray, np.ndarray]:
        """States and measurement vectors of one split."""
        lo, hi = self._bounds(split)
        return self.states[lo:hi], self.measurements[lo:hi]

    def samples(self, split: str) -> list[tuple[np.ndarray, np.ndarray]]:
        states, measurements = self.split(split)
        return list(zip(states, measurements))


def ensemble_for(dataset: Dataset) -> MeasurementEnsemble:
    return ensemble_from_indices(dataset.config.n_qubits, dataset.kind, dataset.indices)


def _pauli_sample(ensemble, config, seq):
    rng = np.random.default_rng(seq)
    rho = random_rank_r_state(config.dim, config.rank, rng)
    return rho.matrix, measure(ensemble, rho)


def _povm_sample(povm, observed, config, seq):
    rng = np.random.default_rng(seq)
    rho = random_rank_r_state(config.dim, config.rank, rng)
    p = povm_probabilities(rho, povm)
    frequencies = sample_povm(p / p.sum(), config.n_avg, rng)
    return rho.matrix, frequencies[observed]


def gen_dataset(config: DatasetConfig, n_jobs: int = THREADS, quiet: bool = False) -> Dataset:
    """Random rank-r states with their measurement vectors, deterministic in the seed.

    The ensemble and every sample draw from independent streams spawned from the seed,
    so the result does not depend on ``n_jobs``.
    """
    ensemble_seq, samples_seq = np.random.SeedSequence(config.seed).spawn(2)
    ensemble_rng = np.random.default_rng(ensemble_seq)
    total = sum(config.sizes)
    streams = samples_seq.spawn(total)

    if config.kind is MeasurementKind.PAULI:
        ensemble = select_observables(config.n_qubits, config.meas, ensemble_rng)
        tasks = (delayed(_pauli_sample)(ensemble, config, s) for s in streams)
    else:
        ensemble = select_povm_outcomes(config.n_qubits, config.meas, ensemble_rng)
        povm = pauli4_povm(config.n_qubits)
        observed = np.asarray(ensemble.indices)
        tasks = (delayed(_povm_sample)(povm, observed, config, s) for s in streams)
    logger.info(
        f"Generating {total} rank-{config.rank} states (d={config.dim}, m={config.meas}, "
        f"{config.kind.value})"
    )
    results = Parallel(n_jobs=n_jobs)(tqdm(tasks, total=total, disable=quiet))
    states = np.array([r[0] for r in results], dtype=np.complex128)
    measurements = np.array([r[1] for r in results], dtype=np.float64)
    return Dataset(config, ensemble.indices, states, measurements)


def save_dataset(dataset: Dataset, path: Path) -> None:
    """Write the little-endian binary container with a trailing SHA-256 digest."""
    cfg = dataset.config
    header = _HEADER.pack(
        cfg.n_qubits,
        cfg.dim,
        dataset.meas_count,
        _KIND_CODES[cfg.kind],
        cfg.rank,
        cfg.n_avg,
        cfg.seed,
        *cfg.sizes,
    )
    body = b"".join(
        [
            MAGIC,
            struct.pack("<I", FORMAT_VERSION),
            header,
            np.asarray(dataset.indices, dtype="<u4").tobytes(),
            np.ascontiguousarray(dataset.states.real, dtype="<f8").tobytes(),
            np.ascontiguousarray(dataset.states.imag, dtype="<f8").tobytes(),
            np.ascontiguousarray(dataset.measurements, dtype="<f8").tobytes(),
        ]
    )
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(body + hashlib.sha256(body).digest())


def load_dataset(path: Path) -> Dataset:
    raw = Path(path).read_bytes()
    fixed = len(MAGIC) + 4 + _HEADER.size
    if len(raw) < fixed + _DIGEST_SIZE or raw[: len(MAGIC)] != MAGIC:
        raise MalformedFileError(f"{path} is not a dataset file")
    (version,) = struct.unpack_from("<I", raw, len(MAGIC))
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"{path} has format version {version}, "
                                   f"expected {FORMAT_VERSION}")
    body, digest = raw[:-_DIGEST_SIZE], raw[-_DIGEST_SIZE:]
    if hashlib.sha256(body).digest() != digest:
        raise MalformedFileError(f"{path} failed its checksum")

    n_qubits, d, m, kind_code, rank, n_avg, seed, *sizes = _HEADER.unpack_from(
        raw, len(MAGIC) + 4
    )
    if d != 2**n_qubits:
        raise DimensionInconsistencyError(f"{path}: d={d} does not match {n_qubits} qubits")
    kinds = {code: kind for kind, code in _KIND_CODES.items()}
    if kind_code not in kinds:
        raise MalformedFileError(f"{path}: unknown measurement kind code {kind_code}")
    n = sum(sizes)
    expected = fixed + 4 * m + 8 * (2 * n * d * d + n * m)
    if len(body) != expected:
        raise MalformedFileError(f"{path} has {len(body)} payload bytes, expected {expected}")

    offset = fixed
    indices = np.frombuffer(body, dtype="<u4", count=m, offset=offset)
    offset += 4 * m
    real = np.frombuffer(body, dtype="<f8", count=n * d * d, offset=offset)
    offset += 8 * n * d * d
    imag = np.frombuffer(body, dtype="<f8", count=n * d * d, offset=offset)
    offset += 8 * n * d * d
    meas = np.frombuffer(body, dtype="<f8", count=n * m, offset=offset)

    config = DatasetConfig(
        n_qubits=n_qubits,
        rank=rank,
        sizes=tuple(sizes),
        seed=seed,
        kind=kinds[kind_code],
        meas=m,
        n_avg=n_avg,
    )
    states = (real + 1j * imag).reshape(n, d, d)
    return Dataset(config, tuple(int(i) for i in indices), states, meas.reshape(n, m).copy())


def parse_sizes(text: str) -> tuple[int, int, int]:
    try:
        sizes = tuple(int(v) for v in text.split(","))
    except ValueError as e:
        raise typer.BadParameter(f"sizes must be three integers, got {text!r}") from e
    if len(sizes) != 3 or min(sizes) < 0:
        raise typer.BadParameter(f"sizes must be three non-negative integers, got {text!r}")
    return sizes


@app.command()
def main(
    output_path: Path = typer.Option(..., "--out", help="Dataset file to write."),
    qubits: int = typer.Option(4, min=1),
    rank: int = typer.Option(3, min=1),
    meas: int | None = typer.Option(None, min=1, help="Observables, or observed POVM outcomes."),
    povm: str | None = typer.Option(None, help="Measure with a POVM instead (only 'pauli4')."),
    n_avg: int | None = typer.Option(None, "--n-avg", min=1, help="Shots per POVM sample."),
    sizes: str | None = typer.Option(None, help="train,validation,test sample counts."),
    seed: int = 7,
    quick: bool = typer.Option(False, help="Small smoke-test sizes."),
    threads: int = typer.Option(THREADS, envvar="LQST_THREADS", min=1),
    quiet: bool = False,
):
    started = time.perf_counter()
    if povm is not None and povm != "pauli4":
        raise typer.BadParameter(f"unsupported POVM {povm!r}; only 'pauli4' is available")
    kind = MeasurementKind.POVM if povm else MeasurementKind.PAULI
    if kind is MeasurementKind.PAULI and n_avg is not None:
        raise typer.BadParameter("--n-avg requires --povm")
    if sizes is not None:
        split_sizes = parse_sizes(sizes)
    elif quick:
        split_sizes = (200, 50, 50)
    elif kind is MeasurementKind.POVM:
        split_sizes = (500, 100, 0)
    else:
        split_sizes = (50000, 10000, 10000)
    try:
        config = DatasetConfig(
            n_qubits=qubits,
            rank=rank,
            sizes=split_sizes,
            seed=seed,
            kind=kind,
            meas=meas,
            n_avg=(n_avg or 1000) if kind is MeasurementKind.POVM else 0,
        )
    except ArgumentError as e:
        raise typer.BadParameter(str(e)) from e

    dataset = gen_dataset(config, n_jobs=threads, quiet=quiet)
    save_dataset(dataset, output_path)
    config_record = asdict(config)
    config_record["kind"] = config.kind.value
    write_manifest(
        RunManifest.create(
            "gen-data",
            config_record,
            seed,
            {"dataset": str(output_path)},
            time.perf_counter() - started,
        ),
        manifest_path(output_path),
    )
    logger.success(f"Dataset of {len(dataset)} samples written to {output_path}")


if __name__ == "__main__":
    app()
