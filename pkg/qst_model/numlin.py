"""Dense complex matrix kernels: Hermitian part, eigen/singular value decompositions,
singular value shrinkage and PSD square roots.

Matrices are ``numpy`` arrays of dtype ``complex128``. Every function is pure and
returns new arrays.
"""

from typing import NamedTuple

import numpy as np
import numpy.typing as npt

from qst_model.config import HERMITIAN_TOL, MAX_DIM, PSD_TOL
from qst_model.errors import ArgumentError, ContractViolation, DecompositionError, DimensionError

CMatrix = npt.NDArray[np.complex128]
RVector = npt.NDArray[np.float64]

ROUNDING_CUTOFF = 1e-13


class EigHResult(NamedTuple):
    """Eigenvalues in ascending order; eigenvectors are the columns of ``vectors``."""

    values: RVector
    vectors: CMatrix


class SvdResult(NamedTuple):
    """``X = left @ diag(singular_values) @ right.conj().T`` with descending singular values."""

    left: CMatrix
    singular_values: RVector
    right: CMatrix


def as_cmatrix(x, *, square: bool = False, name: str = "X") -> CMatrix:
    """Validate ``x`` as a finite 2-D complex matrix within the dimension cap."""
    arr = np.asarray(x, dtype=np.complex128)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionError(f"{name} must be a non-empty 2-D matrix, got shape {arr.shape}")
    if max(arr.shape) > MAX_DIM:
        raise DimensionError(f"{name} has shape {arr.shape}, above the cap d <= {MAX_DIM}")
    if square and arr.shape[0] != arr.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ContractViolation(f"{name} has non-finite entries")
    return arr


def dagger(x: CMatrix) -> CMatrix:
    return np.conj(x).T


def fro_norm(x) -> float:
    return float(np.linalg.norm(as_cmatrix(x), "fro"))


def hermitian_defect(x: CMatrix) -> float:
    return float(np.linalg.norm(x - dagger(x), "fro"))


def _check_hermitian(x: CMatrix, name: str) -> None:
    scale = max(1.0, float(np.linalg.norm(x, "fro")))
    if hermitian_defect(x) > HERMITIAN_TOL * scale:
        raise ContractViolation(
            f"{name} is not Hermitian: ||X - X^H||_F = {hermitian_defect(x):.3e}"
        )


def hermitize(x) -> CMatrix:
    """Return ``(X + X^H) / 2``."""
    x = as_cmatrix(x, square=True)
    return 0.5 * (x + dagger(x))


def eigh(x) -> EigHResult:
    """Eigendecomposition of a Hermitian matrix, eigenvalues ascending.

    Raises:
        ContractViolation: ``X`` deviates from Hermitian by more than 1e-8 (relative).
        DecompositionError: LAPACK did not converge.
    """
    x = as_cmatrix(x, square=True)
    _check_hermitian(x, "eigh input")
    try:
        values, vectors = np.linalg.eigh(x)
    except np.linalg.LinAlgError as e:
        raise DecompositionError(f"eigh did not converge: {e}") from e
    return EigHResult(values, vectors)


def svd(x) -> SvdResult:
    """Full complex SVD with singular values in descending order."""
    x = as_cmatrix(x)
    try:
        u, s, vh = np.linalg.svd(x)
    except np.linalg.LinAlgError as e:
        raise DecompositionError(f"svd did not converge: {e}") from e
    return SvdResult(u, s, dagger(vh))


def shrink(x, tau: float) -> CMatrix:
    """Singular value soft-thresholding ``U diag(max(sigma - tau, 0)) V^H``.

    This is the proximal operator of ``tau * ||.||_*``.
    """
    if not tau >= 0:
        raise ArgumentError(f"shrinkage threshold must be non-negative, got {tau}")
    u, s, v = svd(x)
    return (u * np.maximum(s - tau, 0.0)) @ dagger(v)


def psd_sqrt(x, tol: float = PSD_TOL) -> CMatrix:
    """Square root of a Hermitian PSD matrix.

    Eigenvalues in ``[-tol, 0)`` are treated as zero; anything more negative is a
    contract violation. Pass ``tol=np.inf`` to clamp unconditionally. Eigenvalues at
    rounding scale (below 1e-13 of the spectral radius) are also zeroed so that
    rank-deficient inputs do not pick up ``sqrt(eps)`` noise.
    """
    values, vectors = eigh(x)
    if values[0] < -tol:
        raise ContractViolation(f"matrix is not PSD: min eigenvalue {values[0]:.3e} < -{tol:g}")
    cutoff = ROUNDING_CUTOFF * max(1.0, float(np.max(np.abs(values))))
    roots = np.sqrt(np.where(values > cutoff, values, 0.0))
    return (vectors * roots) @ dagger(vectors)


def singular_values(x) -> RVector:
    x = as_cmatrix(x)
    try:
        return np.linalg.svd(x, compute_uv=False)
    except np.linalg.LinAlgError as e:
        raise DecompositionError(f"svd did not converge: {e}") from e


def trace_norm(x) -> float:
    """Nuclear norm, the sum of singular values."""
    return float(np.sum(singular_values(x)))


def abs_matrix(x) -> CMatrix:
    """``|X| = sqrt(X^H X)``."""
    x = as_cmatrix(x)
    gram = dagger(x) @ x
    gram = 0.5 * (gram + dagger(gram))
    return psd_sqrt(gram, tol=PSD_TOL * max(1.0, float(np.linalg.norm(gram, "fro"))))
