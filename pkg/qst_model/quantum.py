"""Quantum-domain objects: density matrices, Pauli observables, Pauli-4 POVMs, the
measurement map and its adjoint, finite-shot sampling, state generators and
closeness metrics.

Pauli and POVM elements of an n-qubit system are addressed by a flat index in
``[0, 4**n)`` whose base-4 digits (most significant first) select the single-qubit
factor. For Pauli observables digit ``k`` means the operator ``X_{k+1}`` of
``PAULI_MATRICES``, so the identity is always the last index ``4**n - 1``.
"""

from collections.abc import Sequence
from dataclasses import dataclass, field
from enum import Enum
import functools

from loguru import logger
import numpy as np

from qst_model.config import FIDELITY_CLAMP_TOL, HERMITIAN_TOL, PMF_TOL, PSD_TOL, RANK_THRESHOLD
from qst_model.errors import ArgumentError, ContractViolation, DimensionError
from qst_model.numlin import (
    CMatrix,
    RVector,
    as_cmatrix,
    dagger,
    eigh,
    hermitian_defect,
    hermitize,
    psd_sqrt,
    singular_values,
)

# X_1, X_2, X_3 (Pauli X, Y, Z) and X_4 (identity)
PAULI_MATRICES = np.array(
    [
        [[0, 1], [1, 0]],
        [[0, -1j], [1j, 0]],
        [[1, 0], [0, -1]],
        [[1, 0], [0, 1]],
    ],
    dtype=np.complex128,
)


def _pauli4_single() -> np.ndarray:
    zero = np.array([1, 0], dtype=np.complex128)
    plus = np.array([1, 1], dtype=np.complex128) / np.sqrt(2)
    right = np.array([1, 1j], dtype=np.complex128) / np.sqrt(2)
    m1, m2, m3 = (np.outer(v, v.conj()) / 3 for v in (zero, plus, right))
    return np.array([m1, m2, m3, np.eye(2) - m1 - m2 - m3])


PAULI4_ELEMENTS = _pauli4_single()


class MeasurementKind(str, Enum):
    PAULI = "pauli"
    POVM = "povm"


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class DensityMatrix:
    """A Hermitian, positive semidefinite, unit-trace matrix."""

    matrix: CMatrix

    def __post_init__(self):
        m = as_cmatrix(self.matrix, square=True, name="density matrix")
        if hermitian_defect(m) > HERMITIAN_TOL:
            raise ContractViolation(f"density matrix is not Hermitian ({hermitian_defect(m):.2e})")
        lowest = float(np.linalg.eigvalsh(hermitize(m))[0])
        if lowest < -PSD_TOL:
            raise ContractViolation(f"density matrix is not PSD (min eigenvalue {lowest:.2e})")
        trace = np.trace(m)
        if abs(trace - 1.0) > PSD_TOL:
            raise ContractViolation(f"density matrix trace is {trace.real:.10f}, expected 1")
        object.__setattr__(self, "matrix", _freeze(m))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def maximally_mixed(cls, d: int) -> "DensityMatrix":
        return cls(np.eye(d, dtype=np.complex128) / d)


def _matrix_of(state) -> CMatrix:
    if isinstance(state, DensityMatrix):
        return state.matrix
    return as_cmatrix(state, square=True, name="state")


@dataclass(frozen=True)
class MeasurementEnsemble:
    """An ordered set of measurement matrices defining the map A and its adjoint."""

    n_qubits: int
    kind: MeasurementKind
    indices: tuple[int, ...]
    matrices: np.ndarray = field(repr=False)

    def __post_init__(self):
        mats = np.asarray(self.matrices, dtype=np.complex128)
        d = 2**self.n_qubits
        if mats.ndim != 3 or mats.shape[1:] != (d, d) or mats.shape[0] != len(self.indices):
            raise DimensionError(
                f"expected {len(self.indices)} matrices of shape {(d, d)}, got {mats.shape}"
            )
        if len(set(self.indices)) != len(self.indices):
            raise ArgumentError("ensemble indices must be distinct")
        defect = np.abs(mats - np.conj(np.swapaxes(mats, 1, 2))).max()
        if defect > 1e-10:
            raise ContractViolation(f"measurement matrices are not Hermitian ({defect:.2e})")
        if self.kind is MeasurementKind.POVM:
            lowest = np.linalg.eigvalsh(mats).min()
            if lowest < -1e-12:
                raise ContractViolation(f"POVM element is not PSD (min eigenvalue {lowest:.2e})")
            if len(self.indices) == 4**self.n_qubits:
                total = mats.sum(axis=0)
                if np.abs(total - np.eye(d)).max() > 1e-10:
                    raise ContractViolation("POVM elements do not sum to the identity")
        object.__setattr__(self, "indices", tuple(int(i) for i in self.indices))
        object.__setattr__(self, "matrices", _freeze(mats))

    @property
    def dim(self) -> int:
        return 2**self.n_qubits

    @property
    def count(self) -> int:
        return len(self.indices)

    def weights(self) -> CMatrix:
        """The m x d^2 matrix whose row i is A_i flattened row-major."""
        return self.matrices.reshape(self.count, -1).copy()


def _digits(index: int, n: int) -> list[int]:
    return [(index // 4 ** (n - 1 - k)) % 4 for k in range(n)]


def _tensor(factors) -> CMatrix:
    return functools.reduce(np.kron, factors)


def pauli_observable(qubit_indices: Sequence[int]) -> CMatrix:
    """Tensor product ``X_{i_1} ⊗ ... ⊗ X_{i_n}`` for labels ``i_k`` in 1..4."""
    labels = list(qubit_indices)
    if not labels:
        raise ArgumentError("at least one qubit label is required")
    if any(int(i) != i or not 1 <= i <= 4 for i in labels):
        raise ArgumentError(f"Pauli labels must be in 1..4, got {labels}")
    return _tensor(PAULI_MATRICES[int(i) - 1] for i in labels)


def pauli_ensemble(n: int, indices: Sequence[int]) -> MeasurementEnsemble:
    """Pauli expectation ensemble for the given flat indices."""
    if n < 1:
        raise ArgumentError(f"qubit count must be >= 1, got {n}")
    mats = [pauli_observable([k + 1 for k in _digits(int(j), n)]) for j in indices]
    mats = np.array(mats) if mats else np.zeros((0, 2**n, 2**n), dtype=np.complex128)
    return MeasurementEnsemble(n, MeasurementKind.PAULI, tuple(indices), mats)


def select_observables(n: int, m: int, rng: np.random.Generator) -> MeasurementEnsemble:
    """Pick ``m`` distinct non-identity Pauli observables uniformly at random."""
    if n < 1:
        raise ArgumentError(f"qubit count must be >= 1, got {n}")
    total = 4**n - 1
    if not 1 <= m <= total:
        raise ArgumentError(f"measurement count must be in 1..{total}, got {m}")
    indices = rng.choice(total, size=m, replace=False)
    return pauli_ensemble(n, [int(j) for j in indices])


def povm_ensemble(n: int, indices: Sequence[int]) -> MeasurementEnsemble:
    if n < 1:
        raise ArgumentError(f"qubit count must be >= 1, got {n}")
    mats = np.array([_tensor(PAULI4_ELEMENTS[k] for k in _digits(int(a), n)) for a in indices])
    return MeasurementEnsemble(n, MeasurementKind.POVM, tuple(indices), mats)


def pauli4_povm(n: int) -> MeasurementEnsemble:
    """The 4**n-outcome product Pauli-4 POVM."""
    return povm_ensemble(n, range(4**n))


def select_povm_outcomes(n: int, m: int, rng: np.random.Generator) -> MeasurementEnsemble:
    """The first ``m`` outcomes of a seeded random permutation of the 4**n outcomes."""
    total = 4**n
    if not 1 <= m <= total:
        raise ArgumentError(f"observed outcome count must be in 1..{total}, got {m}")
    order = rng.permutation(total)[:m]
    return povm_ensemble(n, [int(a) for a in order])


def ensemble_from_indices(n: int, kind: MeasurementKind, indices: Sequence[int]):
    kind = MeasurementKind(kind)
    if kind is MeasurementKind.PAULI:
        return pauli_ensemble(n, indices)
    return povm_ensemble(n, indices)


def apply_map(ensemble: MeasurementEnsemble, x) -> np.ndarray:
    """``A(X)_i = tr[A_i X]`` as a complex vector."""
    x = as_cmatrix(x, square=True)
    if x.shape[0] != ensemble.dim:
        raise DimensionError(f"matrix is {x.shape[0]}-dimensional, ensemble is {ensemble.dim}")
    return np.einsum("aij,ji->a", ensemble.matrices, x)


def apply_adjoint(ensemble: MeasurementEnsemble, y) -> CMatrix:
    """``A*(y) = sum_i y_i A_i^H``."""
    y = np.asarray(y, dtype=np.complex128)
    if y.shape != (ensemble.count,):
        raise DimensionError(f"vector has shape {y.shape}, ensemble has {ensemble.count} elements")
    return np.einsum("a,aji->ij", y, np.conj(ensemble.matrices))


def measure(ensemble: MeasurementEnsemble, rho) -> RVector:
    """Noiseless measurement vector ``b = A(rho)`` of a physical state."""
    values = apply_map(ensemble, _matrix_of(rho))
    imag = float(np.abs(values.imag).max(initial=0.0))
    if imag > 1e-8:
        raise ContractViolation(f"measurements of a state must be real, |Im| = {imag:.2e}")
    return values.real.copy()


def random_rank_r_state(d: int, r: int, rng: np.random.Generator) -> DensityMatrix:
    """``G G^H / tr[G G^H]`` with ``G`` a d x r complex standard normal matrix."""
    if not 1 <= r <= d:
        raise ArgumentError(f"rank must be in 1..{d}, got {r}")
    g = rng.standard_normal((d, r)) + 1j * rng.standard_normal((d, r))
    rho = g @ dagger(g)
    rho = 0.5 * (rho + dagger(rho))
    return DensityMatrix(rho / np.trace(rho).real)


def bell_state() -> DensityMatrix:
    rho = np.zeros((4, 4), dtype=np.complex128)
    rho[np.ix_([0, 3], [0, 3])] = 0.5
    return DensityMatrix(rho)


def povm_probabilities(rho, povm: MeasurementEnsemble) -> RVector:
    """Outcome probabilities ``tr[rho M_a]``; tiny negatives are clamped to zero."""
    if povm.kind is not MeasurementKind.POVM:
        raise ArgumentError(f"expected a POVM ensemble, got kind {povm.kind.value}")
    p = apply_map(povm, _matrix_of(rho)).real
    if p.min(initial=0.0) < -1e-10:
        logger.debug(f"clamping POVM probability {p.min():.2e} to zero")
    return np.maximum(p, 0.0)


def _check_pmf(p, name: str) -> RVector:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.size == 0 or not np.all(np.isfinite(p)):
        raise ArgumentError(f"{name} must be a finite non-empty vector")
    if p.min() < -1e-10 or abs(p.sum() - 1.0) > PMF_TOL:
        raise ArgumentError(f"{name} is not a probability mass function (sum {p.sum():.10f})")
    return np.maximum(p, 0.0)


def sample_povm(p, n_avg: int, rng: np.random.Generator) -> RVector:
    """Empirical frequencies ``N_a / n_avg`` from one multinomial draw of ``n_avg`` shots."""
    p = _check_pmf(p, "outcome distribution")
    if n_avg < 1:
        raise ArgumentError(f"shot count must be >= 1, got {n_avg}")
    counts = rng.multinomial(n_avg, p / p.sum())
    return counts / n_avg


def _checked_hermitian(x, name: str) -> CMatrix:
    m = _matrix_of(x)
    scale = max(1.0, float(np.linalg.norm(m, "fro")))
    if hermitian_defect(m) > HERMITIAN_TOL * scale:
        raise ContractViolation(f"{name} is not Hermitian ({hermitian_defect(m):.2e})")
    return hermitize(m)


def _clamped_sqrt(m: CMatrix, name: str) -> CMatrix:
    lowest = float(np.linalg.eigvalsh(m)[0])
    if lowest < -FIDELITY_CLAMP_TOL:
        logger.warning(f"{name} has eigenvalue {lowest:.2e}; clamping to zero for fidelity")
    return psd_sqrt(m, tol=np.inf)


def fidelity(rho, sigma) -> float:
    """``tr sqrt(sqrt(rho) sigma sqrt(rho))``; negative eigenvalues of either side are
    clamped to zero."""
    r = _checked_hermitian(rho, "rho")
    s = _checked_hermitian(sigma, "sigma")
    if r.shape != s.shape:
        raise DimensionError(f"states have shapes {r.shape} and {s.shape}")
    root = _clamped_sqrt(r, "rho")
    s_plus = _clamped_sqrt(s, "sigma")
    inner = hermitize(root @ s_plus @ s_plus @ root)
    return float(np.trace(psd_sqrt(inner, tol=np.inf)).real)


def trace_distance(rho, sigma) -> float:
    r = _checked_hermitian(rho, "rho")
    s = _checked_hermitian(sigma, "sigma")
    if r.shape != s.shape:
        raise DimensionError(f"states have shapes {r.shape} and {s.shape}")
    return 0.5 * float(np.abs(eigh(r - s).values).sum())


def classic_fidelity(p, q) -> float:
    """Bhattacharyya overlap ``sum_a sqrt(p_a q_a)`` of two PMFs."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise DimensionError(f"PMFs have lengths {p.shape} and {q.shape}")
    p = _check_pmf(p, "p")
    q = _check_pmf(q, "q")
    return float(np.sum(np.sqrt(p * q)))


def rank_estimate(x, threshold: float = RANK_THRESHOLD) -> int:
    """Number of singular values above ``threshold``."""
    return int(np.count_nonzero(singular_values(_matrix_of(x)) > threshold))
